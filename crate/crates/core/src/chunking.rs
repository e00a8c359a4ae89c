//! Chunk partitioning and summary-token layouts.

use serde::{Deserialize, Serialize};

use crate::engine::TokenEmbedding;
use crate::error::{config, dimension, precondition, Result};

/// A token sequence grouped into frames of `tokens_per_frame` tokens. The
/// last frame may be shorter.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTokens {
    dim: usize,
    tokens_per_frame: usize,
    data: Vec<f32>,
}

impl VideoTokens {
    pub fn new(dim: usize, tokens_per_frame: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 || tokens_per_frame == 0 {
            return Err(config("token dimension and tokens per frame must be positive"));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(dimension(format!("{} floats is not a whole number of {dim}-d tokens", data.len())));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(precondition("video tokens contain non-finite entries"));
        }
        Ok(Self { dim, tokens_per_frame, data })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn tokens_per_frame(&self) -> usize {
        self.tokens_per_frame
    }

    pub fn frames(&self) -> usize {
        self.len().div_ceil(self.tokens_per_frame)
    }

    pub fn token(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Flat `[width × dim]` slice covering the chunk's tokens.
    pub fn chunk_slice(&self, chunk: &ChunkSpec) -> &[f32] {
        &self.data[chunk.start * self.dim..(chunk.start + chunk.width) * self.dim]
    }

    /// Mean token vector of each frame.
    pub fn frame_means(&self) -> Vec<Vec<f32>> {
        (0..self.frames())
            .map(|f| {
                let lo = f * self.tokens_per_frame;
                let hi = (lo + self.tokens_per_frame).min(self.len());
                let mut m = vec![0.0f32; self.dim];
                for t in lo..hi {
                    m.iter_mut().zip(self.token(t)).for_each(|(a, b)| *a += b);
                }
                let inv = 1.0 / (hi - lo) as f32;
                m.iter_mut().for_each(|a| *a *= inv);
                m
            })
            .collect()
    }

    pub fn partition(&self, frames_per_chunk: usize) -> Result<Vec<ChunkSpec>> {
        partition(self.len(), frames_per_chunk, self.tokens_per_frame)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkSpec {
    pub index: usize,
    /// Offset of the chunk's first token in the full sequence.
    pub start: usize,
    pub width: usize,
    /// Inclusive `(first_frame, last_frame)`.
    pub frame_span: (usize, usize),
}

impl ChunkSpec {
    pub fn end(&self) -> usize {
        self.start + self.width
    }
}

/// Splits `n` tokens into chunks of `frames_per_chunk` frames; the final
/// chunk takes whatever is left.
pub fn partition(n: usize, frames_per_chunk: usize, tokens_per_frame: usize) -> Result<Vec<ChunkSpec>> {
    if n == 0 {
        return Err(precondition("cannot partition an empty token sequence"));
    }
    if frames_per_chunk == 0 || tokens_per_frame == 0 {
        return Err(config("frames per chunk and tokens per frame must be positive"));
    }
    let chunk_tokens = frames_per_chunk * tokens_per_frame;
    let widths: Vec<usize> = (0..n.div_ceil(chunk_tokens))
        .map(|i| chunk_tokens.min(n - i * chunk_tokens))
        .collect();
    partition_widths(n, &widths, tokens_per_frame)
}

/// Partition with explicit, possibly heterogeneous, chunk widths.
pub fn partition_widths(n: usize, widths: &[usize], tokens_per_frame: usize) -> Result<Vec<ChunkSpec>> {
    if n == 0 {
        return Err(precondition("cannot partition an empty token sequence"));
    }
    if tokens_per_frame == 0 {
        return Err(config("tokens per frame must be positive"));
    }
    if widths.contains(&0) {
        return Err(config("chunk widths must be positive"));
    }
    let total: usize = widths.iter().sum();
    if total != n {
        return Err(precondition(format!("chunk widths sum to {total}, expected {n}")));
    }
    let mut start = 0;
    Ok(widths
        .iter()
        .enumerate()
        .map(|(index, &width)| {
            let spec = ChunkSpec {
                index,
                start,
                width,
                frame_span: (start / tokens_per_frame, (start + width - 1) / tokens_per_frame),
            };
            start += width;
            spec
        })
        .collect())
}

/// Number of summary tokens for a chunk of `width` tokens at ratio `ratio`:
/// `max(1, ceil(width / ratio))`.
pub fn summary_count(width: usize, ratio: u32) -> usize {
    width.div_ceil(ratio.max(1) as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryLayout {
    pub chunk: ChunkSpec,
    pub ratio: u32,
    pub vst_count: usize,
    /// Summary token `j` follows the first `insert_offsets[j]` chunk tokens.
    pub insert_offsets: Vec<usize>,
}

impl SummaryLayout {
    /// Token counts between consecutive summary tokens.
    pub fn spacing_groups(&self) -> Vec<usize> {
        let mut prev = 0;
        self.insert_offsets
            .iter()
            .map(|&o| {
                let g = o - prev;
                prev = o;
                g
            })
            .collect()
    }
}

/// Uniform placement: `vst_count` groups whose sizes differ by at most one,
/// larger groups first, one summary token closing each group.
pub fn layout_summaries(chunk: &ChunkSpec, ratio: u32) -> Result<SummaryLayout> {
    if ratio == 0 {
        return Err(config("compression ratio must be at least 1"));
    }
    if chunk.width == 0 {
        return Err(precondition("chunk has no tokens"));
    }
    let count = summary_count(chunk.width, ratio);
    let base = chunk.width / count;
    let extra = chunk.width % count;
    let mut offsets = Vec::with_capacity(count);
    let mut acc = 0;
    for g in 0..count {
        acc += base + usize::from(g < extra);
        offsets.push(acc);
    }
    Ok(SummaryLayout { chunk: chunk.clone(), ratio, vst_count: count, insert_offsets: offsets })
}

/// A chunk with its summary tokens interleaved. Positions are local,
/// `0..width + vst_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedChunk {
    pub tokens: Vec<TokenEmbedding>,
    /// Indices into `tokens` holding summary tokens, increasing.
    pub summary_slots: Vec<usize>,
}

impl InterleavedChunk {
    /// Regular tokens in order, with the summary tokens removed.
    pub fn regular_tokens(&self) -> Vec<&[f32]> {
        let mut slots = self.summary_slots.iter().peekable();
        self.tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                if slots.peek() == Some(&i) {
                    slots.next();
                    false
                } else {
                    true
                }
            })
            .map(|(_, t)| t.vector.as_slice())
            .collect()
    }

    /// Copy with every position shifted by `offset`.
    pub fn shifted(&self, offset: usize) -> Vec<TokenEmbedding> {
        self.tokens
            .iter()
            .map(|t| TokenEmbedding { vector: t.vector.clone(), position: t.position + offset })
            .collect()
    }
}

/// Builds `X'ᵢ` by inserting a copy of `placeholder` after each layout offset.
pub fn interleave(chunk_tokens: &[f32], layout: &SummaryLayout, placeholder: &[f32]) -> Result<InterleavedChunk> {
    let dim = placeholder.len();
    if dim == 0 || !chunk_tokens.len().is_multiple_of(dim) {
        return Err(dimension("chunk tokens do not match the placeholder width"));
    }
    let width = chunk_tokens.len() / dim;
    if width != layout.chunk.width {
        return Err(precondition(format!(
            "layout is for a chunk of {} tokens, got {width}",
            layout.chunk.width
        )));
    }
    let mut tokens = Vec::with_capacity(width + layout.vst_count);
    let mut slots = Vec::with_capacity(layout.vst_count);
    let mut next = layout.insert_offsets.iter().peekable();
    for (i, tok) in chunk_tokens.chunks_exact(dim).enumerate() {
        tokens.push(TokenEmbedding { vector: tok.to_vec(), position: tokens.len() });
        while next.peek() == Some(&&(i + 1)) {
            next.next();
            slots.push(tokens.len());
            tokens.push(TokenEmbedding { vector: placeholder.to_vec(), position: tokens.len() });
        }
    }
    Ok(InterleavedChunk { tokens, summary_slots: slots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn chunk(width: usize) -> ChunkSpec {
        ChunkSpec { index: 0, start: 0, width, frame_span: (0, 0) }
    }

    #[test]
    fn frame_partition_with_remainder() {
        let chunks = partition(26, 10, 1).unwrap();
        assert_eq!(chunks.iter().map(|c| c.width).collect::<Vec<_>>(), vec![10, 10, 6]);
        assert_eq!(chunks[2].frame_span, (20, 25));
        assert_eq!(partition(10, 10, 1).unwrap().len(), 1);
    }

    #[test]
    fn token_partition_of_256_frames() {
        let chunks = partition(1024, 10, 4).unwrap();
        assert_eq!(chunks.len(), 26);
        assert!(chunks[..25].iter().all(|c| c.width == 40));
        assert_eq!(chunks[25].width, 24);
        assert_eq!(chunks.iter().map(|c| c.width).sum::<usize>(), 1024);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(partition(0, 10, 4), Err(crate::Error::Precondition(_))));
        assert!(partition_widths(10, &[4, 5], 1).is_err());
    }

    #[test]
    fn layout_examples() {
        let l = layout_summaries(&chunk(64), 2).unwrap();
        assert_eq!(l.vst_count, 32);
        assert!(l.spacing_groups().iter().all(|&g| g == 2));

        let l = layout_summaries(&chunk(10), 72).unwrap();
        assert_eq!(l.insert_offsets, vec![10]);

        let l = layout_summaries(&chunk(40), 32).unwrap();
        assert_eq!(l.spacing_groups(), vec![20, 20]);

        let l = layout_summaries(&chunk(5), 2).unwrap();
        assert_eq!(l.spacing_groups(), vec![2, 2, 1]);

        assert!(matches!(layout_summaries(&chunk(5), 0), Err(crate::Error::Config(_))));
    }

    #[test]
    fn interleave_pattern() {
        let toks: Vec<f32> = vec![1.0, 2.0, 3.0, 4.0];
        let l = layout_summaries(&chunk(4), 2).unwrap();
        let out = interleave(&toks, &l, &[9.0]).unwrap();
        let flat: Vec<f32> = out.tokens.iter().map(|t| t.vector[0]).collect();
        assert_eq!(flat, vec![1.0, 2.0, 9.0, 3.0, 4.0, 9.0]);
        assert_eq!(out.summary_slots, vec![2, 5]);
        assert_eq!(out.tokens.iter().map(|t| t.position).collect::<Vec<_>>(), (0..6).collect::<Vec<_>>());

        let l = layout_summaries(&chunk(1), 7).unwrap();
        let out = interleave(&[5.0], &l, &[9.0]).unwrap();
        assert_eq!(out.tokens.len(), 2);
        assert_eq!(out.summary_slots, vec![1]);
    }

    #[test]
    fn interleave_rejects_mismatched_chunk() {
        let l = layout_summaries(&chunk(4), 2).unwrap();
        assert!(matches!(interleave(&[1.0, 2.0, 3.0], &l, &[0.0]), Err(crate::Error::Precondition(_))));
    }

    proptest! {
        #[test]
        fn layout_invariants(width in 1usize..500, ratio in 1u32..100) {
            let l = layout_summaries(&chunk(width), ratio).unwrap();
            prop_assert_eq!(l.vst_count, width.div_ceil(ratio as usize).max(1));
            prop_assert!(l.insert_offsets.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(*l.insert_offsets.last().unwrap(), width);
            let g = l.spacing_groups();
            let (lo, hi) = (*g.iter().min().unwrap(), *g.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            // shorter groups come last
            prop_assert!(g.windows(2).all(|w| w[0] >= w[1]));
        }

        #[test]
        fn ratio_monotonicity(width in 1usize..500, a in 1u32..100, b in 1u32..100) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(summary_count(width, lo) >= summary_count(width, hi));
        }

        #[test]
        fn interleave_round_trip(width in 1usize..80, ratio in 1u32..40) {
            let toks: Vec<f32> = (0..width * 2).map(|x| x as f32).collect();
            let l = layout_summaries(&chunk(width), ratio).unwrap();
            let out = interleave(&toks, &l, &[-1.0, -1.0]).unwrap();
            prop_assert_eq!(out.tokens.len(), width + l.vst_count);
            let back: Vec<f32> = out.regular_tokens().concat();
            prop_assert_eq!(back, toks);
        }

        #[test]
        fn partition_covers(n in 1usize..5000, fpc in 1usize..20, tpf in 1usize..20) {
            let chunks = partition(n, fpc, tpf).unwrap();
            prop_assert_eq!(chunks.iter().map(|c| c.width).sum::<usize>(), n);
            for w in chunks.windows(2) {
                prop_assert_eq!(w[0].end(), w[1].start);
                prop_assert_eq!(w[0].index + 1, w[1].index);
            }
            prop_assert!(chunks[..chunks.len() - 1].iter().all(|c| c.width == fpc * tpf));
        }
    }
}
