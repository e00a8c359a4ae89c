//! Reload plans, hybrid context assembly and greedy decoding.

use serde::{Deserialize, Serialize};

use crate::compressor::{CompressedKv, Level};
use crate::engine::{Engine, KvSeq};
use crate::error::{integrity, precondition, Result};
use crate::oracle::{select_topk, RelevanceScores};

/// Which chunks come back at the low ratio and which at the high ratio.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReloadPlan {
    pub selected: Vec<usize>,
    pub complement: Vec<usize>,
    pub k: usize,
    pub oracle: String,
}

impl ReloadPlan {
    /// Plan over `m` chunks from an explicit selection. Out-of-range and
    /// repeated indices are dropped.
    pub fn from_selection(m: usize, mut selected: Vec<usize>, oracle: impl Into<String>) -> Self {
        selected.retain(|&i| i < m);
        selected.sort_unstable();
        selected.dedup();
        let complement = (0..m).filter(|i| selected.binary_search(i).is_err()).collect();
        Self { k: selected.len(), selected, complement, oracle: oracle.into() }
    }

    pub fn chunks(&self) -> usize {
        self.selected.len() + self.complement.len()
    }

    pub fn level_of(&self, chunk: usize) -> Level {
        if self.selected.binary_search(&chunk).is_ok() {
            Level::Low
        } else {
            Level::High
        }
    }
}

pub fn build_plan(scores: &RelevanceScores, k: usize) -> ReloadPlan {
    ReloadPlan::from_selection(scores.len(), select_topk(scores, k), scores.oracle.clone())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum PositionMode {
    /// Renumber merged entries `0..len`.
    #[default]
    Contiguous,
    /// Place each entry at the source-token offset it summarises.
    Original,
}

/// Temporally ordered KV context assembled from per-chunk caches.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridContext {
    pub kv: KvSeq,
    /// Chunk index of each entry.
    pub chunk_of: Vec<usize>,
    /// Level of each entry.
    pub level_of: Vec<Level>,
}

impl HybridContext {
    pub fn len(&self) -> usize {
        self.kv.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kv.is_empty()
    }

    /// Entry count contributed by each chunk.
    pub fn chunk_lengths(&self) -> Vec<usize> {
        let m = self.chunk_of.iter().max().map_or(0, |&c| c + 1);
        let mut out = vec![0; m];
        for &c in &self.chunk_of {
            out[c] += 1;
        }
        out
    }
}

/// Merges one cache per chunk, in any input order, into a context sorted by
/// chunk index.
pub fn merge(caches: &[&CompressedKv], mode: PositionMode) -> Result<HybridContext> {
    let m = caches.len();
    let mut slots: Vec<Option<&CompressedKv>> = vec![None; m];
    for c in caches {
        match slots.get_mut(c.chunk_index) {
            Some(slot @ None) => *slot = Some(c),
            Some(Some(_)) => return Err(integrity(format!("chunk {} appears twice", c.chunk_index))),
            None => return Err(integrity(format!("chunk {} given but {m} caches cover 0..{m}", c.chunk_index))),
        }
    }
    let first = caches.first().ok_or_else(|| integrity("nothing to merge"))?;
    let total = caches.iter().map(|c| c.len()).sum();
    let mut kv = KvSeq::with_capacity(first.kv.layers(), first.kv.dim(), total);
    let mut chunk_of = Vec::with_capacity(total);
    let mut level_of = Vec::with_capacity(total);
    let mut anchors = Vec::with_capacity(total);
    for c in slots.into_iter().flatten() {
        kv.extend(&c.kv)?;
        chunk_of.extend(std::iter::repeat_n(c.chunk_index, c.len()));
        level_of.extend(std::iter::repeat_n(c.level, c.len()));
        if mode == PositionMode::Original {
            anchors.extend(c.source_anchors());
        }
    }
    let positions = match mode {
        PositionMode::Contiguous => (0..total).collect(),
        PositionMode::Original => anchors,
    };
    kv.set_positions(positions)?;
    Ok(HybridContext { kv, chunk_of, level_of })
}

/// Merges low-level caches of the plan's selected chunks with high-level
/// caches of its complement.
pub fn merge_hybrid(caches: &[&CompressedKv], plan: &ReloadPlan, mode: PositionMode) -> Result<HybridContext> {
    if caches.len() != plan.chunks() {
        return Err(integrity(format!("{} caches for a plan over {} chunks", caches.len(), plan.chunks())));
    }
    for c in caches {
        let want = plan.level_of(c.chunk_index);
        if c.level != want {
            return Err(integrity(format!("chunk {} is {:?} but the plan needs {want:?}", c.chunk_index, c.level)));
        }
    }
    merge(caches, mode)
}

fn argmax(logits: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in logits.iter().enumerate() {
        if x > logits[best] {
            best = i;
        }
    }
    best
}

/// Greedy decoding state over a session-owned copy of the context.
#[derive(Debug)]
pub struct DecodeSession<'e> {
    engine: &'e Engine,
    context: KvSeq,
    logits: Vec<f32>,
    generated: Vec<usize>,
    stale: bool,
}

impl<'e> DecodeSession<'e> {
    /// Prefills the task tokens after the context.
    pub fn start(engine: &'e Engine, context: &HybridContext, task_tokens: &[Vec<f32>]) -> Result<Self> {
        if context.is_empty() {
            return Err(precondition("decoding needs a nonempty context"));
        }
        let mut context = context.kv.clone();
        let placed = engine.place_after(&context, task_tokens.to_vec());
        let out = engine.forward_prefill(&placed, &context)?;
        context.extend(&out.kv)?;
        let hidden = out.hidden.expect("hidden requested");
        Ok(Self { engine, context, logits: engine.logits(&hidden), generated: Vec::new(), stale: false })
    }

    /// Emits the next greedy token; ties go to the lower vocabulary index.
    pub fn step(&mut self) -> Result<usize> {
        if self.stale {
            let last = *self.generated.last().expect("stale implies a token");
            let (logits, pair) = self.engine.forward_decode_step(last, &self.context)?;
            self.context.push(&pair)?;
            self.logits = logits;
        }
        let token = argmax(&self.logits);
        self.generated.push(token);
        self.stale = true;
        Ok(token)
    }

    pub fn logits(&self) -> &[f32] {
        &self.logits
    }

    pub fn generated(&self) -> &[usize] {
        &self.generated
    }

    pub fn context_len(&self) -> usize {
        self.context.len()
    }
}

/// Prefills `task_tokens` after the context and greedily decodes up to
/// `max_new` tokens.
pub fn decode_answer(
    engine: &Engine,
    context: &HybridContext,
    task_tokens: &[Vec<f32>],
    max_new: usize,
) -> Result<Vec<usize>> {
    if max_new == 0 {
        return Err(precondition("max_new must be at least 1"));
    }
    let mut session = DecodeSession::start(engine, context, task_tokens)?;
    for _ in 0..max_new {
        session.step()?;
    }
    Ok(session.generated)
}
