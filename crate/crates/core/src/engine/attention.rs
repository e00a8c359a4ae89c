//! Multi-head scaled dot-product attention with lazily applied rotary
//! position encoding.

use std::sync::OnceLock;

use crate::error::{dimension, precondition, Result};

const ROPE_BASE: f64 = 10_000.0;
/// Positions below this bound read cos/sin from a shared table.
const ROPE_TABLE_POSITIONS: usize = 1 << 16;
const LANES: usize = 8;

/// Rotary position encoding over adjacent dimension pairs `(2i, 2i+1)`.
#[derive(Debug)]
pub struct Rope {
    head_dim: usize,
    inv_freq: Vec<f64>,
    table: OnceLock<Vec<(f32, f32)>>,
}

impl Clone for Rope {
    fn clone(&self) -> Self {
        Rope::new(self.head_dim)
    }
}

impl Rope {
    pub fn new(head_dim: usize) -> Self {
        let pairs = head_dim / 2;
        let inv_freq = (0..pairs)
            .map(|i| ROPE_BASE.powf(-(2.0 * i as f64) / head_dim as f64))
            .collect();
        Self { head_dim, inv_freq, table: OnceLock::new() }
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    fn table(&self) -> &[(f32, f32)] {
        self.table.get_or_init(|| {
            let pairs = self.inv_freq.len();
            let mut t = Vec::with_capacity(ROPE_TABLE_POSITIONS * pairs);
            for pos in 0..ROPE_TABLE_POSITIONS {
                for f in &self.inv_freq {
                    let (s, c) = (pos as f64 * f).sin_cos();
                    t.push((c as f32, s as f32));
                }
            }
            t
        })
    }

    /// Rotates one head-sized vector in place to `position`.
    pub fn rotate(&self, x: &mut [f32], position: usize) {
        debug_assert_eq!(x.len(), self.head_dim);
        let pairs = self.inv_freq.len();
        if pairs == 0 {
            return;
        }
        if position < ROPE_TABLE_POSITIONS {
            let row = &self.table()[position * pairs..(position + 1) * pairs];
            for (i, &(c, s)) in row.iter().enumerate() {
                let (a, b) = (x[2 * i], x[2 * i + 1]);
                x[2 * i] = a * c - b * s;
                x[2 * i + 1] = a * s + b * c;
            }
        } else {
            for (i, f) in self.inv_freq.iter().enumerate() {
                let (s, c) = (position as f64 * f).sin_cos();
                let (c, s) = (c as f32, s as f32);
                let (a, b) = (x[2 * i], x[2 * i + 1]);
                x[2 * i] = a * c - b * s;
                x[2 * i + 1] = a * s + b * c;
            }
        }
    }

    /// Rotates every head of every row of a `[rows × heads·head_dim]` buffer.
    pub fn rotate_rows(&self, rows: &mut [f32], positions: &[usize], heads: usize) {
        let width = heads * self.head_dim;
        for (row, &pos) in rows.chunks_exact_mut(width).zip(positions) {
            for head in row.chunks_exact_mut(self.head_dim) {
                self.rotate(head, pos);
            }
        }
    }
}

/// Visibility of keys for each query row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mask {
    /// Every query sees every key.
    Full,
    /// Query `i` sees keys `0..prefix + i + 1`: a fully visible prefix of
    /// `prefix` entries followed by causal self-attention.
    Causal { prefix: usize },
}

impl Mask {
    #[inline]
    fn visible(self, query: usize, keys: usize) -> usize {
        match self {
            Mask::Full => keys,
            Mask::Causal { prefix } => (prefix + query + 1).min(keys),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadShape {
    pub heads: usize,
    pub head_dim: usize,
}

impl HeadShape {
    pub fn width(&self) -> usize {
        self.heads * self.head_dim
    }
}

/// `softmax(QKᵀ/√head_dim)·V` per head, with rotary encoding applied to
/// queries and keys from their positions.
///
/// All buffers are row-major `[rows × heads·head_dim]`.
#[allow(clippy::too_many_arguments)]
pub fn attend(
    queries: &[f32],
    query_positions: &[usize],
    keys: &[f32],
    values: &[f32],
    key_positions: &[usize],
    shape: HeadShape,
    mask: Mask,
    rope: &Rope,
) -> Result<Vec<f32>> {
    let width = shape.width();
    check_shapes(queries, query_positions, keys, values, key_positions, width)?;
    if rope.head_dim() != shape.head_dim {
        return Err(dimension("rotary table built for a different head size"));
    }
    let mut q = queries.to_vec();
    rope.rotate_rows(&mut q, query_positions, shape.heads);
    let mut k = keys.to_vec();
    rope.rotate_rows(&mut k, key_positions, shape.heads);
    let mut out = vec![0.0; queries.len()];
    attend_rotated(&q, &k, values, shape, mask, &mut out, None);
    Ok(out)
}

fn check_shapes(
    queries: &[f32],
    query_positions: &[usize],
    keys: &[f32],
    values: &[f32],
    key_positions: &[usize],
    width: usize,
) -> Result<()> {
    if width == 0 {
        return Err(dimension("zero-width heads"));
    }
    if queries.len() != query_positions.len() * width {
        return Err(dimension(format!(
            "{} query floats for {} positions of width {width}",
            queries.len(),
            query_positions.len()
        )));
    }
    if keys.len() != values.len() || keys.len() != key_positions.len() * width {
        return Err(dimension(format!(
            "keys ({}) / values ({}) do not hold {} rows of width {width}",
            keys.len(),
            values.len(),
            key_positions.len()
        )));
    }
    if key_positions.is_empty() {
        return Err(precondition("attention over an empty key/value list"));
    }
    if key_positions.windows(2).any(|w| w[1] < w[0]) {
        return Err(precondition("key positions must be nondecreasing"));
    }
    Ok(())
}

/// Inner attention loop over already rotated queries and keys.
///
/// When `weights` is given, it receives the per-key attention weight summed
/// over query rows and averaged over heads; it must have one slot per key.
pub(crate) fn attend_rotated(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    shape: HeadShape,
    mask: Mask,
    out: &mut [f32],
    weights: Option<&mut [f32]>,
) {
    match shape.head_dim {
        4 => attend_fixed::<4>(q, k, v, shape, mask, out, weights),
        8 => attend_fixed::<8>(q, k, v, shape, mask, out, weights),
        16 => attend_fixed::<16>(q, k, v, shape, mask, out, weights),
        32 => attend_fixed::<32>(q, k, v, shape, mask, out, weights),
        64 => attend_fixed::<64>(q, k, v, shape, mask, out, weights),
        _ => attend_any(q, k, v, shape, mask, out, weights),
    }
}

/// Softmax over `scores` in place; returns the reciprocal of the sum.
#[inline]
fn softmax_unnormalised(scores: &mut [f32]) -> f32 {
    let max = lane_reduce(scores, f32::NEG_INFINITY, f32::max);
    for s in scores.iter_mut() {
        *s = exp_nonpositive(*s - max);
    }
    1.0 / lane_reduce(scores, 0.0, |a, b| a + b)
}

/// Reduction over `LANES` independent accumulators, which vectorises where a
/// single running value would not.
#[inline(always)]
fn lane_reduce(xs: &[f32], init: f32, f: impl Fn(f32, f32) -> f32 + Copy) -> f32 {
    let chunks = xs.chunks_exact(LANES);
    let tail = chunks.remainder().iter().fold(init, |a, &b| f(a, b));
    let mut acc = [init; LANES];
    for c in chunks {
        let c: &[f32; LANES] = c.try_into().unwrap();
        for l in 0..LANES {
            acc[l] = f(acc[l], c[l]);
        }
    }
    let a = [f(acc[0], acc[4]), f(acc[1], acc[5]), f(acc[2], acc[6]), f(acc[3], acc[7])];
    f(f(f(a[0], a[2]), f(a[1], a[3])), tail)
}

/// `exp(x)` for `x <= 0`, branch-free so the softmax loop vectorises.
/// Relative error is below 2e-7; inputs under -87 flush to zero.
#[inline(always)]
fn exp_nonpositive(x: f32) -> f32 {
    const LOG2E: f32 = std::f32::consts::LOG2_E;
    const LN2_HI: f32 = 0.693_359_4;
    const LN2_LO: f32 = -2.121_944_4e-4;
    let x = x.max(-87.0);
    // round to nearest by adding and removing 1.5·2^23
    const MAGIC: f32 = 12_582_912.0;
    let n = (x * LOG2E + MAGIC) - MAGIC;
    let r = x - n * LN2_HI - n * LN2_LO;
    let p = 1.987_569_1e-4f32;
    let p = p * r + 1.398_199_9e-3;
    let p = p * r + 8.333_452e-3;
    let p = p * r + 4.166_579_6e-2;
    let p = p * r + 1.666_666_5e-1;
    let p = p * r + 5e-1;
    let y = p * r * r + r + 1.0;
    let scale = f32::from_bits(((n as i32 + 127) as u32) << 23);
    let out = y * scale;
    if x <= -87.0 {
        0.0
    } else {
        out
    }
}

#[inline]
fn add_weights(weights: &mut Option<&mut [f32]>, scores: &[f32], scale: f32) {
    if let Some(ws) = weights.as_deref_mut() {
        for (slot, &s) in ws.iter_mut().zip(scores) {
            *slot += s * scale;
        }
    }
}

/// Head-size-specialised kernel. Keys are gathered per head and transposed
/// into blocks of `LANES` so scores vectorise across keys.
fn attend_fixed<const HD: usize>(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    shape: HeadShape,
    mask: Mask,
    out: &mut [f32],
    mut weights: Option<&mut [f32]>,
) {
    let width = shape.width();
    let nq = q.len() / width;
    let nk = k.len() / width;
    let scale = 1.0 / (HD as f32).sqrt();
    let blocks = nk.div_ceil(LANES);
    let mut scores = vec![0.0f32; blocks * LANES];
    let mut kt = vec![[[0.0f32; LANES]; HD]; blocks];
    let mut vh = vec![[0.0f32; HD]; nk];
    for h in 0..shape.heads {
        let off = h * HD;
        for j in 0..nk {
            let row = &k[j * width + off..j * width + off + HD];
            for d in 0..HD {
                kt[j / LANES][d][j % LANES] = row[d];
            }
            vh[j].copy_from_slice(&v[j * width + off..j * width + off + HD]);
        }
        for i in 0..nq {
            let visible = mask.visible(i, nk);
            let mut qh = [0.0f32; HD];
            for (x, y) in qh.iter_mut().zip(&q[i * width + off..i * width + off + HD]) {
                *x = y * scale;
            }
            for (sb, kb) in scores.chunks_exact_mut(LANES).zip(&kt[..visible.div_ceil(LANES)]) {
                let mut acc = [0.0f32; LANES];
                for d in 0..HD {
                    for l in 0..LANES {
                        acc[l] += qh[d] * kb[d][l];
                    }
                }
                sb.copy_from_slice(&acc);
            }
            let s = &mut scores[..visible];
            let inv = softmax_unnormalised(s);
            let mut acc = [0.0f32; HD];
            for (&sj, vj) in s.iter().zip(&vh[..visible]) {
                for d in 0..HD {
                    acc[d] += sj * vj[d];
                }
            }
            for (o, a) in out[i * width + off..i * width + off + HD].iter_mut().zip(&acc) {
                *o = a * inv;
            }
            add_weights(&mut weights, s, inv / shape.heads as f32);
        }
    }
}

fn attend_any(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    shape: HeadShape,
    mask: Mask,
    out: &mut [f32],
    mut weights: Option<&mut [f32]>,
) {
    let width = shape.width();
    let hd = shape.head_dim;
    let nq = q.len() / width;
    let nk = k.len() / width;
    let scale = 1.0 / (hd as f32).sqrt();
    let mut scores = vec![0.0f32; nk];
    for i in 0..nq {
        let visible = mask.visible(i, nk);
        for h in 0..shape.heads {
            let off = h * hd;
            let qh = &q[i * width + off..i * width + off + hd];
            let s = &mut scores[..visible];
            for (j, sj) in s.iter_mut().enumerate() {
                *sj = dot(qh, &k[j * width + off..j * width + off + hd]) * scale;
            }
            let inv = softmax_unnormalised(s);
            let oh = &mut out[i * width + off..i * width + off + hd];
            oh.fill(0.0);
            for (j, &sj) in s.iter().enumerate() {
                for (o, &x) in oh.iter_mut().zip(&v[j * width + off..j * width + off + hd]) {
                    *o += sj * x;
                }
            }
            oh.iter_mut().for_each(|o| *o *= inv);
            add_weights(&mut weights, s, inv / shape.heads as f32);
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let tail: f32 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0f32; 8];
    for (x, y) in ca.zip(cb) {
        let x: &[f32; 8] = x.try_into().unwrap();
        let y: &[f32; 8] = y.try_into().unwrap();
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}
