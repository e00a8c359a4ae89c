use crate::error::{dimension, precondition, Result};

/// One token's key/value vectors across every layer.
///
/// `key` and `value` are laid out layer-major: `[layers × embed_dim]`, and each
/// layer slice is itself `[heads × head_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct KvPair {
    pub key: Vec<f32>,
    pub value: Vec<f32>,
    pub position: usize,
}

/// A sequence of KV entries stored per layer in contiguous buffers.
///
/// Keys are stored unrotated; rotary position encoding is applied at
/// attention time from `positions`, so entries can be renumbered without
/// touching their content.
#[derive(Debug, Clone, PartialEq)]
pub struct KvSeq {
    dim: usize,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    positions: Vec<usize>,
}

impl KvSeq {
    pub fn new(layers: usize, dim: usize) -> Self {
        Self {
            dim,
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            positions: Vec::new(),
        }
    }

    pub fn with_capacity(layers: usize, dim: usize, entries: usize) -> Self {
        Self {
            dim,
            keys: (0..layers).map(|_| Vec::with_capacity(entries * dim)).collect(),
            values: (0..layers).map(|_| Vec::with_capacity(entries * dim)).collect(),
            positions: Vec::with_capacity(entries),
        }
    }

    /// Builds a sequence from raw per-layer buffers.
    pub fn from_parts(
        dim: usize,
        keys: Vec<Vec<f32>>,
        values: Vec<Vec<f32>>,
        positions: Vec<usize>,
    ) -> Result<Self> {
        if keys.len() != values.len() {
            return Err(dimension("key/value layer counts differ"));
        }
        let n = positions.len();
        for (k, v) in keys.iter().zip(&values) {
            if k.len() != n * dim || v.len() != n * dim {
                return Err(dimension(format!(
                    "layer buffer of {} / {} floats does not hold {n} entries of width {dim}",
                    k.len(),
                    v.len()
                )));
            }
        }
        Ok(Self { dim, keys, values, positions })
    }

    pub fn layers(&self) -> usize {
        self.keys.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn max_position(&self) -> Option<usize> {
        self.positions.iter().copied().max()
    }

    pub fn layer_keys(&self, layer: usize) -> &[f32] {
        &self.keys[layer]
    }

    pub fn layer_values(&self, layer: usize) -> &[f32] {
        &self.values[layer]
    }

    pub fn key(&self, layer: usize, index: usize) -> &[f32] {
        &self.keys[layer][index * self.dim..(index + 1) * self.dim]
    }

    pub fn value(&self, layer: usize, index: usize) -> &[f32] {
        &self.values[layer][index * self.dim..(index + 1) * self.dim]
    }

    pub fn get(&self, index: usize) -> KvPair {
        let mut key = Vec::with_capacity(self.layers() * self.dim);
        let mut value = Vec::with_capacity(self.layers() * self.dim);
        for l in 0..self.layers() {
            key.extend_from_slice(self.key(l, index));
            value.extend_from_slice(self.value(l, index));
        }
        KvPair { key, value, position: self.positions[index] }
    }

    pub fn push(&mut self, pair: &KvPair) -> Result<()> {
        let width = self.layers() * self.dim;
        if pair.key.len() != width || pair.value.len() != width {
            return Err(dimension(format!(
                "kv pair width {}/{} does not match {width}",
                pair.key.len(),
                pair.value.len()
            )));
        }
        for l in 0..self.layers() {
            let span = l * self.dim..(l + 1) * self.dim;
            self.keys[l].extend_from_slice(&pair.key[span.clone()]);
            self.values[l].extend_from_slice(&pair.value[span]);
        }
        self.positions.push(pair.position);
        Ok(())
    }

    pub fn extend(&mut self, other: &KvSeq) -> Result<()> {
        if other.layers() != self.layers() || other.dim != self.dim {
            return Err(dimension("cannot concatenate kv sequences of different shapes"));
        }
        for l in 0..self.layers() {
            self.keys[l].extend_from_slice(&other.keys[l]);
            self.values[l].extend_from_slice(&other.values[l]);
        }
        self.positions.extend_from_slice(&other.positions);
        Ok(())
    }

    /// Copies the listed entries, in the given order, into a new sequence.
    pub fn select(&self, indices: &[usize]) -> KvSeq {
        let mut out = KvSeq::with_capacity(self.layers(), self.dim, indices.len());
        for l in 0..self.layers() {
            for &i in indices {
                out.keys[l].extend_from_slice(self.key(l, i));
                out.values[l].extend_from_slice(self.value(l, i));
            }
        }
        out.positions = indices.iter().map(|&i| self.positions[i]).collect();
        out
    }

    pub fn set_positions(&mut self, positions: Vec<usize>) -> Result<()> {
        if positions.len() != self.len() {
            return Err(precondition(format!(
                "{} positions supplied for {} entries",
                positions.len(),
                self.len()
            )));
        }
        self.positions = positions;
        Ok(())
    }

    /// Number of f32 scalars held in K and V together.
    pub fn scalar_count(&self) -> usize {
        2 * self.len() * self.layers() * self.dim
    }

    pub fn tensor_bytes(&self) -> usize {
        self.scalar_count() * std::mem::size_of::<f32>()
    }
}
