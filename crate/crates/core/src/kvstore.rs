//! Tiered KV cache: an in-process hot store visible to decoding and a
//! memory-mapped cold store of per-chunk cache files.
//!
//! # File format
//!
//! One file per `(chunk, level)`, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `b"VX2L"`                         |
//! | 4      | 2    | format version (`1`)                    |
//! | 6      | 1    | level (`0` low, `1` high, `2` full)     |
//! | 7      | 1    | reserved, zero                          |
//! | 8      | 8    | engine config fingerprint               |
//! | 16     | 8    | chunk index                             |
//! | 24     | 4    | compression ratio                       |
//! | 28     | 4    | layers                                  |
//! | 32     | 4    | heads                                   |
//! | 36     | 4    | head_dim                                |
//! | 40     | 8    | source start (token offset)             |
//! | 48     | 8    | source width (tokens)                   |
//! | 56     | 8    | entry count `e`                         |
//! | 64     | 8    | FNV-1a 64 checksum of the payload       |
//! | 72     | 8·e  | positions (u64)                         |
//! | …      | 4·e·L·D | keys, layer-major, f32               |
//! | …      | 4·e·L·D | values, layer-major, f32             |

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::hash::Hasher;
use std::io::Write;
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use memmap2::Mmap;
use serde::{Deserialize, Serialize};

use crate::chunking::summary_count;
use crate::compressor::{CompressedKv, Level};
use crate::engine::{EngineConfig, KvSeq};
use crate::error::{integrity, Error, Result};
use crate::hybrid::ReloadPlan;

pub const MAGIC: &[u8; 4] = b"VX2L";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 72;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Location {
    Hot,
    Cold,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheHandle {
    pub chunk_index: usize,
    pub level: Level,
    /// K and V tensor bytes: `entries × layers × heads × head_dim × 2 × 4`.
    pub byte_size: usize,
    pub entries: usize,
    pub location: Location,
    pub checksum: u64,
}

fn file_name(chunk: usize, level: Level) -> String {
    let tag = match level {
        Level::Low => "L",
        Level::High => "H",
        Level::Full => "F",
    };
    format!("chunk{chunk:06}_{tag}.kv")
}

fn payload_checksum(payload: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(payload);
    h.finish()
}

/// Serialises one compressed chunk cache; returns the bytes and payload checksum.
pub fn encode(cache: &CompressedKv, config: &EngineConfig) -> (Vec<u8>, u64) {
    let kv = &cache.kv;
    let e = kv.len();
    let mut payload = Vec::with_capacity(8 * e + kv.tensor_bytes());
    for &p in kv.positions() {
        payload.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for l in 0..kv.layers() {
        for x in kv.layer_keys(l) {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    for l in 0..kv.layers() {
        for x in kv.layer_values(l) {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let checksum = payload_checksum(&payload);
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(cache.level.code());
    out.push(0);
    out.extend_from_slice(&config.fingerprint().to_le_bytes());
    out.extend_from_slice(&(cache.chunk_index as u64).to_le_bytes());
    out.extend_from_slice(&cache.ratio.to_le_bytes());
    out.extend_from_slice(&(kv.layers() as u32).to_le_bytes());
    out.extend_from_slice(&(config.heads as u32).to_le_bytes());
    out.extend_from_slice(&(config.head_dim as u32).to_le_bytes());
    out.extend_from_slice(&(cache.source_start as u64).to_le_bytes());
    out.extend_from_slice(&(cache.source_width as u64).to_le_bytes());
    out.extend_from_slice(&(e as u64).to_le_bytes());
    out.extend_from_slice(&checksum.to_le_bytes());
    debug_assert_eq!(out.len(), HEADER_LEN);
    out.extend_from_slice(&payload);
    (out, checksum)
}

/// Parsed header fields of a cache file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordHeader {
    pub level: Level,
    pub fingerprint: u64,
    pub chunk_index: usize,
    pub ratio: u32,
    pub layers: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub source_start: usize,
    pub source_width: usize,
    pub entries: usize,
    pub checksum: u64,
}

impl RecordHeader {
    fn dim(&self) -> usize {
        self.heads * self.head_dim
    }

    fn payload_len(&self) -> usize {
        8 * self.entries + 2 * 4 * self.entries * self.layers * self.dim()
    }
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn decode_header(bytes: &[u8]) -> Result<RecordHeader> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(integrity("not a VX2L cache record"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(integrity(format!("unsupported cache format version {version}")));
    }
    let level = Level::from_code(bytes[6]).ok_or_else(|| integrity(format!("unknown level code {}", bytes[6])))?;
    Ok(RecordHeader {
        level,
        fingerprint: u64_at(bytes, 8),
        chunk_index: u64_at(bytes, 16) as usize,
        ratio: u32_at(bytes, 24),
        layers: u32_at(bytes, 28) as usize,
        heads: u32_at(bytes, 32) as usize,
        head_dim: u32_at(bytes, 36) as usize,
        source_start: u64_at(bytes, 40) as usize,
        source_width: u64_at(bytes, 48) as usize,
        entries: u64_at(bytes, 56) as usize,
        checksum: u64_at(bytes, 64),
    })
}

/// Parses and checksum-verifies a full record.
pub fn decode(bytes: &[u8]) -> Result<(RecordHeader, CompressedKv)> {
    let header = decode_header(bytes)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != header.payload_len() {
        return Err(integrity(format!(
            "chunk {} record holds {} payload bytes, header implies {}",
            header.chunk_index,
            payload.len(),
            header.payload_len()
        )));
    }
    if payload_checksum(payload) != header.checksum {
        return Err(integrity(format!("checksum mismatch in chunk {} ({:?})", header.chunk_index, header.level)));
    }
    let e = header.entries;
    let d = header.dim();
    let positions: Vec<usize> = payload[..8 * e].chunks_exact(8).map(|c| u64_at(c, 0) as usize).collect();
    let floats = |bytes: &[u8]| -> Vec<f32> {
        bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()
    };
    let layer_bytes = 4 * e * d;
    let mut at = 8 * e;
    let mut keys = Vec::with_capacity(header.layers);
    for _ in 0..header.layers {
        keys.push(floats(&payload[at..at + layer_bytes]));
        at += layer_bytes;
    }
    let mut values = Vec::with_capacity(header.layers);
    for _ in 0..header.layers {
        values.push(floats(&payload[at..at + layer_bytes]));
        at += layer_bytes;
    }
    let kv = KvSeq::from_parts(d, keys, values, positions)?;
    let cache = CompressedKv {
        chunk_index: header.chunk_index,
        level: header.level,
        ratio: header.ratio,
        source_start: header.source_start,
        source_width: header.source_width,
        kv,
    };
    Ok((header, cache))
}

/// Directory of cache files, read through memory maps. Reads take `&self`
/// and may run concurrently; each write lands atomically via rename.
#[derive(Debug)]
pub struct ColdStore {
    dir: PathBuf,
    config: EngineConfig,
    index: BTreeMap<(usize, Level), CacheHandle>,
}

impl ColdStore {
    pub fn create(dir: impl Into<PathBuf>, config: &EngineConfig) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir, config: config.clone(), index: BTreeMap::new() })
    }

    /// Opens an existing directory and indexes every cache file in it.
    pub fn open(dir: impl Into<PathBuf>, config: &EngineConfig) -> Result<Self> {
        let mut store = Self::create(dir, config)?;
        let mut names: Vec<PathBuf> = fs::read_dir(&store.dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "kv"))
            .collect();
        names.sort();
        for path in names {
            let map = map_file(&path)?;
            let header = decode_header(&map)?;
            if header.fingerprint != config.fingerprint() {
                return Err(integrity(format!("{} was written by a different engine", path.display())));
            }
            store.index.insert(
                (header.chunk_index, header.level),
                CacheHandle {
                    chunk_index: header.chunk_index,
                    level: header.level,
                    byte_size: 2 * 4 * header.entries * header.layers * header.dim(),
                    entries: header.entries,
                    location: Location::Cold,
                    checksum: header.checksum,
                },
            );
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn handles(&self) -> impl Iterator<Item = &CacheHandle> {
        self.index.values()
    }

    pub fn handle(&self, chunk: usize, level: Level) -> Option<&CacheHandle> {
        self.index.get(&(chunk, level))
    }

    pub fn path_of(&self, chunk: usize, level: Level) -> PathBuf {
        self.dir.join(file_name(chunk, level))
    }

    pub fn write(&mut self, cache: &CompressedKv) -> Result<CacheHandle> {
        let path = self.path_of(cache.chunk_index, cache.level);
        let io = |source| Error::CacheIo { chunk: cache.chunk_index, level: cache.level, path: path.clone(), source };
        let (bytes, checksum) = encode(cache, &self.config);
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(&bytes).map_err(io)?;
        tmp.as_file().sync_data().map_err(io)?;
        tmp.persist(&path).map_err(|e| io(e.error))?;
        let handle = CacheHandle {
            chunk_index: cache.chunk_index,
            level: cache.level,
            byte_size: cache.kv.tensor_bytes(),
            entries: cache.len(),
            location: Location::Cold,
            checksum,
        };
        self.index.insert((cache.chunk_index, cache.level), handle.clone());
        Ok(handle)
    }

    pub fn read(&self, chunk: usize, level: Level) -> Result<CompressedKv> {
        let handle = self
            .index
            .get(&(chunk, level))
            .ok_or_else(|| integrity(format!("no cold cache for chunk {chunk} ({level:?})")))?;
        let path = self.path_of(chunk, level);
        let map = map_file(&path).map_err(|e| match e {
            Error::Io(source) => Error::CacheIo { chunk, level, path: path.clone(), source },
            other => other,
        })?;
        let (header, cache) = decode(&map)?;
        if header.checksum != handle.checksum {
            return Err(integrity(format!("chunk {chunk} ({level:?}) changed on disk since it was offloaded")));
        }
        if header.fingerprint != self.config.fingerprint() {
            return Err(integrity(format!("chunk {chunk} ({level:?}) was written by a different engine")));
        }
        Ok(cache)
    }
}

fn map_file(path: &Path) -> Result<Mmap> {
    let file = File::open(path)?;
    // SAFETY: cache files are only replaced by rename, never modified in place.
    let map = unsafe { Mmap::map(&file)? };
    Ok(map)
}

/// Decode-visible caches owned by one session.
#[derive(Debug, Default, Clone)]
pub struct HotStore {
    entries: BTreeMap<(usize, Level), CompressedKv>,
}

impl HotStore {
    pub fn insert(&mut self, cache: CompressedKv) {
        self.entries.insert((cache.chunk_index, cache.level), cache);
    }

    pub fn remove(&mut self, chunk: usize, level: Level) -> Option<CompressedKv> {
        self.entries.remove(&(chunk, level))
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    pub fn get(&self, chunk: usize, level: Level) -> Option<&CompressedKv> {
        self.entries.get(&(chunk, level))
    }

    pub fn caches(&self) -> impl Iterator<Item = &CompressedKv> {
        self.entries.values()
    }

    pub fn keys(&self) -> Vec<(usize, Level)> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total KV entries across all resident caches.
    pub fn kv_entries(&self) -> usize {
        self.entries.values().map(|c| c.len()).sum()
    }

    pub fn tensor_bytes(&self) -> usize {
        self.entries.values().map(|c| c.kv.tensor_bytes()).sum()
    }

    pub fn into_caches(self) -> Vec<CompressedKv> {
        self.entries.into_values().collect()
    }
}

/// Hot and cold tiers together.
#[derive(Debug)]
pub struct KvStore {
    pub hot: HotStore,
    pub cold: ColdStore,
}

impl KvStore {
    pub fn new(cold: ColdStore) -> Self {
        Self { hot: HotStore::default(), cold }
    }

    /// Writes every cache to the cold tier and drops it from the hot tier.
    pub fn offload(&mut self, caches: &[CompressedKv]) -> Result<Vec<CacheHandle>> {
        caches
            .iter()
            .map(|c| {
                let h = self.cold.write(c)?;
                self.hot.remove(c.chunk_index, c.level);
                Ok(h)
            })
            .collect()
    }

    /// Replaces the hot tier with low-level caches of the plan's selected
    /// chunks and high-level caches of its complement.
    pub fn reload(&mut self, plan: &ReloadPlan) -> Result<&HotStore> {
        let wanted: Vec<(usize, Level)> = plan
            .selected
            .iter()
            .map(|&c| (c, Level::Low))
            .chain(plan.complement.iter().map(|&c| (c, Level::High)))
            .collect();
        self.reload_levels(&wanted)
    }

    /// Replaces the hot tier with exactly the listed caches.
    pub fn reload_levels(&mut self, wanted: &[(usize, Level)]) -> Result<&HotStore> {
        for &(chunk, level) in wanted {
            if self.cold.handle(chunk, level).is_none() {
                return Err(integrity(format!("reload needs chunk {chunk} ({level:?}) which was never offloaded")));
            }
        }
        let mut hot = HotStore::default();
        for &(chunk, level) in wanted {
            hot.insert(self.cold.read(chunk, level)?);
        }
        self.hot = hot;
        Ok(&self.hot)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRetention {
    pub chunk_index: usize,
    pub level: Level,
    pub width: usize,
    pub entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub total_tokens: usize,
    pub retained_entries: usize,
    pub retained_fraction: f64,
    pub reduction_pct: f64,
    pub per_chunk: Vec<ChunkRetention>,
}

impl ReductionReport {
    fn from_chunks(per_chunk: Vec<ChunkRetention>) -> Self {
        let total_tokens: usize = per_chunk.iter().map(|c| c.width).sum();
        let retained_entries: usize = per_chunk.iter().map(|c| c.entries).sum();
        let retained_fraction = retained_entries as f64 / total_tokens.max(1) as f64;
        Self {
            total_tokens,
            retained_entries,
            retained_fraction,
            reduction_pct: 100.0 * (1.0 - retained_fraction),
            per_chunk,
        }
    }
}

/// Predicted cache reduction against the uncompressed `n = Σ widths`, with
/// the `k` widest chunks (earlier index on ties) held at the low ratio.
pub fn predict_reduction(widths: &[usize], alpha_low: u32, alpha_high: u32, k: usize) -> ReductionReport {
    let mut order: Vec<usize> = (0..widths.len()).collect();
    order.sort_by(|&a, &b| widths[b].cmp(&widths[a]).then(a.cmp(&b)));
    let selected: Vec<usize> = order.into_iter().take(k.min(widths.len())).collect();
    predict_reduction_for(widths, alpha_low, alpha_high, &selected)
}

/// Predicted cache reduction for an explicit low-ratio selection.
pub fn predict_reduction_for(widths: &[usize], alpha_low: u32, alpha_high: u32, selected: &[usize]) -> ReductionReport {
    let per_chunk = widths
        .iter()
        .enumerate()
        .map(|(i, &width)| {
            let (level, ratio) =
                if selected.contains(&i) { (Level::Low, alpha_low) } else { (Level::High, alpha_high) };
            ChunkRetention { chunk_index: i, level, width, entries: summary_count(width, ratio) }
        })
        .collect();
    ReductionReport::from_chunks(per_chunk)
}

/// Reduction actually realised by the hot tier, against the source widths of
/// the resident caches.
pub fn measure_reduction(hot: &HotStore) -> ReductionReport {
    let per_chunk = hot
        .caches()
        .map(|c| ChunkRetention {
            chunk_index: c.chunk_index,
            level: c.level,
            width: c.source_width,
            entries: c.len(),
        })
        .collect();
    ReductionReport::from_chunks(per_chunk)
}
