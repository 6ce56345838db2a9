//! Physical cube encodings: persisted cellsets, partition chunks and per-region slices.
//!
//! Every store directory holds a `manifest.json` and one binary block file per
//! cellset, chunk or slice (see [`format`]). Read counters are logical: each chunk
//! or slice a view touches counts once.

pub mod format;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::hash::Hasher;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::cube::{
    build_cellset, CellKey, CellsetCube, Cube, DimensionSchema, FeatureFrame, FeatureRequest, ReadStats, Region,
    Value,
};
use crate::error::{Error, Result};
use format::{Block, Column, ColumnData};

pub const MANIFEST: &str = "manifest.json";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Cellset,
    Chunked,
    Rechunked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub file: String,
    pub rows: u64,
    /// FNV-1a 64-bit hash of the file bytes, 16 lowercase hex digits.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u16,
    pub kind: StoreKind,
    pub schema: DimensionSchema,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition: Option<String>,
    /// Partition value of each chunk file, parallel to `files` (chunked stores only).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub partitions: Vec<Value>,
    pub files: Vec<FileEntry>,
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let mut h = fnv::FnvHasher::default();
    h.write(bytes);
    h.finish()
}

fn write_block(dir: &Path, name: &str, block: &Block) -> Result<FileEntry> {
    let bytes = block.encode();
    fs::write(dir.join(name), &bytes)?;
    Ok(FileEntry {
        file: name.to_string(),
        rows: block.rows as u64,
        checksum: format!("{:016x}", checksum(&bytes)),
    })
}

fn read_block(dir: &Path, entry: &FileEntry) -> Result<Block> {
    let bytes = fs::read(dir.join(&entry.file))?;
    let expected = u64::from_str_radix(&entry.checksum, 16)
        .map_err(|_| Error::Format(format!("manifest checksum `{}` is not hex", entry.checksum)))?;
    let found = checksum(&bytes);
    if found != expected {
        return Err(Error::Checksum {
            file: entry.file.clone(),
            expected,
            found,
        });
    }
    let block = Block::decode(&bytes)?;
    if block.rows as u64 != entry.rows {
        return Err(Error::Format(format!("`{}` holds {} rows, manifest says {}", entry.file, block.rows, entry.rows)));
    }
    Ok(block)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)?;
    text.push('\n');
    fs::write(dir.join(MANIFEST), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path, kind: StoreKind) -> Result<Manifest> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported store version {}", manifest.format_version)));
    }
    if manifest.kind != kind {
        return Err(Error::Format(format!("store holds a {:?} encoding, expected {kind:?}", manifest.kind)));
    }
    Ok(manifest)
}

fn slots(block: &Block, name: &str) -> Result<Vec<Option<Value>>> {
    match block.column(name) {
        Some(ColumnData::Slots(s)) => Ok(s.clone()),
        _ => Err(Error::Format(format!("block lacks slot column `{name}`"))),
    }
}

fn numbers(block: &Block, name: &str) -> Result<Vec<Option<f64>>> {
    match block.column(name) {
        Some(ColumnData::Numbers(v)) => Ok(v.clone()),
        _ => Err(Error::Format(format!("block lacks number column `{name}`"))),
    }
}

/// Key slots plus measure columns as a block. `extra` slot columns precede the measures.
fn cells_block(
    dims: &[String],
    measures: &[String],
    extra: Vec<Column>,
    cells: &[(CellKey, Vec<Option<f64>>)],
) -> Result<Block> {
    let mut columns: Vec<Column> = dims
        .iter()
        .enumerate()
        .map(|(i, d)| Column {
            name: d.clone(),
            data: ColumnData::Slots(cells.iter().map(|(k, _)| k[i].clone()).collect()),
        })
        .collect();
    columns.extend(extra);
    columns.extend(measures.iter().enumerate().map(|(i, m)| Column {
        name: m.clone(),
        data: ColumnData::Numbers(cells.iter().map(|(_, v)| v[i]).collect()),
    }));
    Block::new(cells.len(), columns)
}

fn block_cells(block: &Block, dims: &[String], measures: &[String]) -> Result<Vec<(CellKey, Vec<Option<f64>>)>> {
    let keys = dims.iter().map(|d| slots(block, d)).collect::<Result<Vec<_>>>()?;
    let values = measures.iter().map(|m| numbers(block, m)).collect::<Result<Vec<_>>>()?;
    Ok((0..block.rows)
        .map(|r| {
            (
                keys.iter().map(|c| c[r].clone()).collect(),
                values.iter().map(|c| c[r]).collect(),
            )
        })
        .collect())
}

fn names(schema: &DimensionSchema) -> (Vec<String>, Vec<String>) {
    (
        schema.dimension_names().map(String::from).collect(),
        schema.measures().iter().map(|m| m.name.clone()).collect(),
    )
}

/// Materializes `cube` over `dims` into `dir` (created if missing) as one cellset file.
pub fn materialize(cube: &dyn Cube, dims: &[String], dir: &Path) -> Result<Manifest> {
    save_cellset(&build_cellset(cube, dims)?, dir)
}

pub fn save_cellset(cellset: &CellsetCube, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir)?;
    let (dims, measures) = names(cellset.schema());
    let cells: Vec<(CellKey, Vec<Option<f64>>)> = cellset.cells().map(|(k, v)| (k.clone(), v.to_vec())).collect();
    let entry = write_block(dir, "cells.bin", &cells_block(&dims, &measures, vec![], &cells)?)?;
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        kind: StoreKind::Cellset,
        schema: cellset.schema().clone(),
        partition: None,
        partitions: vec![],
        files: vec![entry],
    };
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

/// Loads a cellset written by [`materialize`], verifying checksums.
pub fn load_cellset(dir: &Path) -> Result<CellsetCube> {
    let manifest = read_manifest(dir, StoreKind::Cellset)?;
    let (dims, measures) = names(&manifest.schema);
    let mut cells = Vec::new();
    for entry in &manifest.files {
        cells.extend(block_cells(&read_block(dir, entry)?, &dims, &measures)?);
    }
    CellsetCube::from_cells(manifest.schema, cells)
}

fn mask_of(key: &CellKey) -> u64 {
    key.iter()
        .enumerate()
        .filter(|(_, v)| v.is_some())
        .fold(0, |m, (i, _)| m | (1 << i))
}

/// Where a view reads its partitions from.
#[derive(Debug, Clone, Copy)]
enum PartitionRange<'a> {
    All,
    Exactly(&'a Value),
    Between(&'a Value, &'a Value),
}

impl PartitionRange<'_> {
    fn admits(&self, v: &Value) -> bool {
        match self {
            PartitionRange::All => true,
            PartitionRange::Exactly(x) => *x == v,
            PartitionRange::Between(lo, hi) => *lo <= v && v <= *hi,
        }
    }

    fn narrow<'b>(self, region: &'b Region, partition: &str) -> PartitionRange<'b>
    where
        Self: 'b,
    {
        match region.get(partition) {
            Some(v) => PartitionRange::Exactly(v),
            None => self,
        }
    }
}

/// Shared view logic of the partitioned stores: the schema, partition dimension
/// and materialized dimensions (schema order, partition excluded).
#[derive(Debug, Clone)]
struct Layout {
    schema: DimensionSchema,
    partition: String,
    dims: Vec<String>,
}

/// Rows accumulated for one view: attribute tuple → summed measures.
type Groups = BTreeMap<Vec<Value>, Vec<f64>>;

impl Layout {
    fn new(schema: DimensionSchema, partition: String) -> Result<Self> {
        if let Some(m) = schema.measures().iter().find(|m| !m.is_sum()) {
            return Err(Error::Schema(format!(
                "partitioned stores hold SUM measures only; `{}` is not one",
                m.name
            )));
        }
        schema.dimension(&partition)?;
        let dims = schema.dimension_names().filter(|d| *d != partition).map(String::from).collect();
        Ok(Layout { schema, partition, dims })
    }

    fn measures(&self) -> Vec<String> {
        names(&self.schema).1
    }

    fn dim_index(&self, d: &str) -> usize {
        self.dims.iter().position(|x| x == d).expect("materialized dimension")
    }

    /// Mask over `dims` of a view, and the bindings cells must match.
    fn target<'r>(&self, region: &'r Region, request: &FeatureRequest) -> (u64, Vec<(usize, &'r Value)>) {
        let mut mask = 0u64;
        let mut bound = Vec::new();
        for (d, v) in region.bindings() {
            if d != self.partition {
                let i = self.dim_index(d);
                mask |= 1 << i;
                bound.push((i, v));
            }
        }
        for a in &request.attributes {
            if *a != self.partition {
                mask |= 1 << self.dim_index(a);
            }
        }
        (mask, bound)
    }

    fn check(&self, region: &Region, request: &FeatureRequest) -> Result<Vec<usize>> {
        request.validate(&self.schema)?;
        region.validate(&self.schema)?;
        Ok(request
            .metrics
            .iter()
            .map(|m| self.schema.measure_index(m).expect("validated"))
            .collect())
    }

    fn add(&self, groups: &mut Groups, request: &FeatureRequest, key: &CellKey, partition: &Value, values: &[f64], measure_idx: &[usize]) {
        let attrs = request
            .attributes
            .iter()
            .map(|a| {
                if *a == self.partition {
                    partition.clone()
                } else {
                    key[self.dim_index(a)].clone().expect("masked slot")
                }
            })
            .collect();
        let acc = groups.entry(attrs).or_insert_with(|| vec![0.0; measure_idx.len()]);
        for (a, &m) in acc.iter_mut().zip(measure_idx) {
            *a += values[m];
        }
    }

    fn frame(&self, region: &Region, request: &FeatureRequest, mut groups: Groups) -> Result<FeatureFrame> {
        if groups.is_empty() && region.is_population() && request.attributes.is_empty() {
            groups.insert(vec![], vec![0.0; request.metrics.len()]);
        }
        FeatureFrame::from_rows(
            request.attributes.clone(),
            request.metrics.clone(),
            groups
                .into_iter()
                .map(|(a, v)| (a, v.into_iter().map(Some).collect()))
                .collect(),
        )
    }
}

struct Chunk {
    value: Value,
    /// Sorted by canonical region.
    cells: Vec<(CellKey, Vec<f64>)>,
    by_mask: HashMap<u64, Vec<usize>>,
}

impl Chunk {
    fn new(value: Value, mut cells: Vec<(CellKey, Vec<f64>)>, layout: &Layout) -> Self {
        let region = |k: &CellKey| {
            Region::from_pairs(layout.dims.iter().zip(k).filter_map(|(d, v)| v.clone().map(|v| (d.clone(), v))))
        };
        cells.sort_by_cached_key(|(k, _)| region(k));
        let mut by_mask: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, (k, _)) in cells.iter().enumerate() {
            by_mask.entry(mask_of(k)).or_default().push(i);
        }
        Chunk { value, cells, by_mask }
    }
}

/// A cube partitioned by one dimension: one chunk of per-region aggregates per
/// partition value. Views over a partition range touch only those chunks.
pub struct ChunkStore {
    layout: Layout,
    /// Sorted by partition value.
    chunks: Vec<Chunk>,
    reads: AtomicU64,
}

impl std::fmt::Debug for ChunkStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChunkStore")
            .field("partition", &self.layout.partition)
            .field("chunks", &self.chunks.len())
            .finish_non_exhaustive()
    }
}

/// Splits `cube` by the values of `partition`, materializing every grouping set of
/// `dims` within each partition. Only SUM measures can be chunked.
pub fn chunk_by_partition(cube: &dyn Cube, partition: &str, dims: &[String]) -> Result<ChunkStore> {
    let source = cube.schema();
    source.dimension(partition)?;
    let mut all: Vec<String> = dims.iter().filter(|d| *d != partition).cloned().collect();
    all.push(partition.to_string());
    let layout = Layout::new(source.project(&all)?, partition.to_string())?;
    if layout.dims.len() > 20 {
        return Err(Error::Schema(format!("refusing to chunk 2^{} grouping sets", layout.dims.len())));
    }
    let measures = layout.measures();
    let mut chunks = Vec::new();
    for value in cube.distinct_values(&Region::empty(), partition)? {
        let region = Region::from_pairs([(partition.to_string(), value.clone())]);
        let mut cells = Vec::new();
        for set in 0u32..(1 << layout.dims.len()) {
            let attrs: Vec<String> = (0..layout.dims.len())
                .filter(|i| set & (1 << i) != 0)
                .map(|i| layout.dims[i].clone())
                .collect();
            let frame = cube.view(&region, &FeatureRequest::new(attrs, measures.clone()))?;
            for (values, sums) in frame.rows() {
                let mut it = values.into_iter();
                let key = (0..layout.dims.len())
                    .map(|i| (set & (1 << i) != 0).then(|| it.next().expect("attr")))
                    .collect();
                cells.push((key, sums.into_iter().map(|v| v.unwrap_or(0.0)).collect()));
            }
        }
        chunks.push(Chunk::new(value, cells, &layout));
    }
    Ok(ChunkStore {
        layout,
        chunks,
        reads: AtomicU64::new(0),
    })
}

impl ChunkStore {
    pub fn partition(&self) -> &str {
        &self.layout.partition
    }

    pub fn partition_values(&self) -> Vec<Value> {
        self.chunks.iter().map(|c| c.value.clone()).collect()
    }

    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// The view restricted to partition values in `[from, to]`.
    pub fn window_view(&self, region: &Region, request: &FeatureRequest, from: &Value, to: &Value) -> Result<FeatureFrame> {
        self.read(region, request, PartitionRange::Between(from, to))
    }

    fn read(&self, region: &Region, request: &FeatureRequest, range: PartitionRange<'_>) -> Result<FeatureFrame> {
        let measure_idx = self.layout.check(region, request)?;
        let range = range.narrow(region, &self.layout.partition);
        let (mask, bound) = self.layout.target(region, request);
        let mut groups = Groups::new();
        for chunk in self.chunks.iter().filter(|c| range.admits(&c.value)) {
            self.reads.fetch_add(1, Ordering::Relaxed);
            for &i in chunk.by_mask.get(&mask).map(Vec::as_slice).unwrap_or(&[]) {
                let (key, values) = &chunk.cells[i];
                if bound.iter().all(|&(d, v)| key[d].as_ref() == Some(v)) {
                    self.layout.add(&mut groups, request, key, &chunk.value, values, &measure_idx);
                }
            }
        }
        self.layout.frame(region, request, groups)
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        let measures = self.layout.measures();
        let mut files = Vec::new();
        for (i, chunk) in self.chunks.iter().enumerate() {
            let cells: Vec<(CellKey, Vec<Option<f64>>)> = chunk
                .cells
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().copied().map(Some).collect()))
                .collect();
            let part = Column {
                name: self.layout.partition.clone(),
                data: ColumnData::Slots(vec![Some(chunk.value.clone()); cells.len()]),
            };
            let block = cells_block(&self.layout.dims, &measures, vec![part], &cells)?;
            files.push(write_block(dir, &format!("chunk-{i:05}.bin"), &block)?);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: StoreKind::Chunked,
            schema: self.layout.schema.clone(),
            partition: Some(self.layout.partition.clone()),
            partitions: self.partition_values(),
            files,
        };
        write_manifest(dir, &manifest)?;
        Ok(manifest)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir, StoreKind::Chunked)?;
        let partition = manifest
            .partition
            .clone()
            .ok_or_else(|| Error::Format("chunked manifest lacks a partition dimension".into()))?;
        if manifest.partitions.len() != manifest.files.len() {
            return Err(Error::Format("chunked manifest lists partitions and files of different lengths".into()));
        }
        let layout = Layout::new(manifest.schema, partition)?;
        let measures = layout.measures();
        let mut chunks: Vec<Chunk> = Vec::new();
        for (entry, value) in manifest.files.iter().zip(manifest.partitions) {
            let block = read_block(dir, entry)?;
            if slots(&block, &layout.partition)?.iter().any(|v| v.as_ref() != Some(&value)) {
                return Err(Error::Format(format!("`{}` holds rows outside partition {value}", entry.file)));
            }
            let cells = block_cells(&block, &layout.dims, &measures)?
                .into_iter()
                .map(|(k, v)| (k, v.into_iter().map(|x| x.unwrap_or(0.0)).collect()))
                .collect();
            if chunks.iter().any(|c| c.value == value) {
                return Err(Error::Format(format!("partition {value} stored twice")));
            }
            chunks.push(Chunk::new(value, cells, &layout));
        }
        chunks.sort_by(|a, b| a.value.cmp(&b.value));
        Ok(ChunkStore {
            layout,
            chunks,
            reads: AtomicU64::new(0),
        })
    }
}

impl Cube for ChunkStore {
    fn schema(&self) -> &DimensionSchema {
        &self.layout.schema
    }

    fn view(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame> {
        self.read(region, request, PartitionRange::All)
    }

    fn read_stats(&self) -> ReadStats {
        ReadStats {
            chunk_reads: self.reads.load(Ordering::Relaxed),
            slice_reads: 0,
        }
    }
}

struct Slice {
    key: CellKey,
    /// Sorted by partition value.
    rows: Vec<(Value, Vec<f64>)>,
}

/// The same logical cube as a [`ChunkStore`], stored as one contiguous slice per
/// region holding its values across all partitions.
pub struct RechunkedStore {
    layout: Layout,
    /// Sorted by canonical region.
    slices: Vec<Slice>,
    by_mask: HashMap<u64, Vec<usize>>,
    reads: AtomicU64,
}

impl std::fmt::Debug for RechunkedStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RechunkedStore")
            .field("partition", &self.layout.partition)
            .field("slices", &self.slices.len())
            .finish_non_exhaustive()
    }
}

/// Regroups a chunk store by region.
pub fn rechunk(store: &ChunkStore) -> RechunkedStore {
    let mut by_key: BTreeMap<CellKey, Vec<(Value, Vec<f64>)>> = BTreeMap::new();
    for chunk in &store.chunks {
        for (key, values) in &chunk.cells {
            by_key.entry(key.clone()).or_default().push((chunk.value.clone(), values.clone()));
        }
    }
    RechunkedStore::new(
        store.layout.clone(),
        by_key.into_iter().map(|(key, rows)| Slice { key, rows }).collect(),
    )
}

impl RechunkedStore {
    fn new(layout: Layout, mut slices: Vec<Slice>) -> Self {
        let region = |k: &CellKey| {
            Region::from_pairs(layout.dims.iter().zip(k).filter_map(|(d, v)| v.clone().map(|v| (d.clone(), v))))
        };
        slices.sort_by_cached_key(|s| region(&s.key));
        for s in &mut slices {
            s.rows.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let mut by_mask: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, s) in slices.iter().enumerate() {
            by_mask.entry(mask_of(&s.key)).or_default().push(i);
        }
        RechunkedStore {
            layout,
            slices,
            by_mask,
            reads: AtomicU64::new(0),
        }
    }

    pub fn num_slices(&self) -> usize {
        self.slices.len()
    }

    /// The inverse of [`rechunk`].
    pub fn to_chunk_store(&self) -> ChunkStore {
        let mut by_value: BTreeMap<Value, Vec<(CellKey, Vec<f64>)>> = BTreeMap::new();
        for s in &self.slices {
            for (v, values) in &s.rows {
                by_value.entry(v.clone()).or_default().push((s.key.clone(), values.clone()));
            }
        }
        ChunkStore {
            chunks: by_value
                .into_iter()
                .map(|(v, cells)| Chunk::new(v, cells, &self.layout))
                .collect(),
            layout: self.layout.clone(),
            reads: AtomicU64::new(0),
        }
    }

    pub fn window_view(&self, region: &Region, request: &FeatureRequest, from: &Value, to: &Value) -> Result<FeatureFrame> {
        self.read(region, request, PartitionRange::Between(from, to))
    }

    fn read(&self, region: &Region, request: &FeatureRequest, range: PartitionRange<'_>) -> Result<FeatureFrame> {
        let measure_idx = self.layout.check(region, request)?;
        let range = range.narrow(region, &self.layout.partition);
        let (mask, bound) = self.layout.target(region, request);
        let mut groups = Groups::new();
        for &i in self.by_mask.get(&mask).map(Vec::as_slice).unwrap_or(&[]) {
            let slice = &self.slices[i];
            if !bound.iter().all(|&(d, v)| slice.key[d].as_ref() == Some(v)) {
                continue;
            }
            self.reads.fetch_add(1, Ordering::Relaxed);
            for (value, values) in slice.rows.iter().filter(|(v, _)| range.admits(v)) {
                self.layout.add(&mut groups, request, &slice.key, value, values, &measure_idx);
            }
        }
        self.layout.frame(region, request, groups)
    }

    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        fs::create_dir_all(dir)?;
        let measures = self.layout.measures();
        let mut files = Vec::new();
        for (i, s) in self.slices.iter().enumerate() {
            let cells: Vec<(CellKey, Vec<Option<f64>>)> = s
                .rows
                .iter()
                .map(|(_, v)| (s.key.clone(), v.iter().copied().map(Some).collect()))
                .collect();
            let part = Column {
                name: self.layout.partition.clone(),
                data: ColumnData::Slots(s.rows.iter().map(|(v, _)| Some(v.clone())).collect()),
            };
            let block = cells_block(&self.layout.dims, &measures, vec![part], &cells)?;
            files.push(write_block(dir, &format!("slice-{i:05}.bin"), &block)?);
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: StoreKind::Rechunked,
            schema: self.layout.schema.clone(),
            partition: Some(self.layout.partition.clone()),
            partitions: vec![],
            files,
        };
        write_manifest(dir, &manifest)?;
        Ok(manifest)
    }

    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir, StoreKind::Rechunked)?;
        let partition = manifest
            .partition
            .clone()
            .ok_or_else(|| Error::Format("rechunked manifest lacks a partition dimension".into()))?;
        let layout = Layout::new(manifest.schema, partition)?;
        let measures = layout.measures();
        let mut slices = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for entry in &manifest.files {
            let block = read_block(dir, entry)?;
            let parts = slots(&block, &layout.partition)?;
            let cells = block_cells(&block, &layout.dims, &measures)?;
            let Some(key) = cells.first().map(|(k, _)| k.clone()) else {
                return Err(Error::Format(format!("slice `{}` is empty", entry.file)));
            };
            let mut rows = Vec::new();
            for ((k, v), p) in cells.into_iter().zip(parts) {
                if k != key {
                    return Err(Error::Format(format!("slice `{}` mixes regions", entry.file)));
                }
                let p = p.ok_or_else(|| Error::Format(format!("slice `{}` has a wildcard partition", entry.file)))?;
                rows.push((p, v.into_iter().map(|x| x.unwrap_or(0.0)).collect()));
            }
            if !seen.insert(key.clone()) {
                return Err(Error::Format(format!("region slice stored twice in `{}`", entry.file)));
            }
            slices.push(Slice { key, rows });
        }
        Ok(RechunkedStore::new(layout, slices))
    }
}

impl Cube for RechunkedStore {
    fn schema(&self) -> &DimensionSchema {
        &self.layout.schema
    }

    fn view(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame> {
        self.read(region, request, PartitionRange::All)
    }

    fn read_stats(&self) -> ReadStats {
        ReadStats {
            chunk_reads: 0,
            slice_reads: self.reads.load(Ordering::Relaxed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{BaseTable, BaseTableCube, Dimension, Measure, ValueKind};
    use crate::ram::fixtures;

    fn daily() -> BaseTableCube {
        let schema = DimensionSchema::new(
            vec![
                Dimension::new("date", ValueKind::Integer),
                Dimension::new("Device", ValueKind::String),
            ],
            vec![Measure::sum("Revenue")],
        )
        .unwrap();
        let mut b = BaseTable::builder(schema).unwrap();
        for day in 1..=10 {
            b.push([Value::Int(day), Value::str("Pixel")], &[day as f64]).unwrap();
            b.push([Value::Int(day), Value::str("iPhone")], &[2.0 * day as f64]).unwrap();
        }
        BaseTableCube::new(b.build())
    }

    #[test]
    fn cellset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let t1 = fixtures::t1();
        materialize(&t1, &["Device".into()], dir.path()).unwrap();
        let loaded = load_cellset(dir.path()).unwrap();
        let req = FeatureRequest::metrics(["Revenue", "Clicks"]);
        for r in [Region::empty(), Region::from_pairs([("Device", Value::str("Pixel"))])] {
            assert_eq!(loaded.view(&r, &req).unwrap(), t1.view(&r, &req).unwrap());
        }
    }

    #[test]
    fn empty_cellset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let schema = DimensionSchema::new(vec![Dimension::new("d", ValueKind::String)], vec![Measure::sum("m")]).unwrap();
        let empty = CellsetCube::from_cells(schema, vec![]).unwrap();
        let manifest = materialize(&empty, &["d".into()], dir.path()).unwrap();
        assert_eq!(manifest.files[0].rows, 0);
        assert!(load_cellset(dir.path()).unwrap().is_empty());
    }

    #[test]
    fn corrupted_checksum_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        materialize(&fixtures::t1(), &["Device".into()], dir.path()).unwrap();
        let path = dir.path().join("cells.bin");
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_cellset(dir.path()), Err(Error::Checksum { .. })));
    }

    #[test]
    fn windows_share_chunks() {
        let cube = daily();
        let store = chunk_by_partition(&cube, "date", &["Device".into()]).unwrap();
        assert_eq!(store.num_chunks(), 10);
        let req = FeatureRequest::new(["date"], ["Revenue"]);
        let pixel = Region::from_pairs([("Device", Value::str("Pixel"))]);
        let mut previous: Option<Vec<Value>> = None;
        for end in 7..=10 {
            let before = store.read_stats().chunk_reads;
            let f = store.window_view(&pixel, &req, &Value::Int(end - 6), &Value::Int(end)).unwrap();
            assert_eq!(store.read_stats().chunk_reads - before, 7);
            let days = f.attribute("date").unwrap().to_vec();
            if let Some(p) = previous {
                assert_eq!(p.iter().filter(|d| days.contains(d)).count(), 6);
            }
            previous = Some(days);
        }

        let re = rechunk(&store);
        let f = re.window_view(&pixel, &req, &Value::Int(1), &Value::Int(7)).unwrap();
        assert_eq!(re.read_stats().slice_reads, 1);
        assert_eq!(f.measure_values("Revenue").unwrap(), [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
    }

    #[test]
    fn encodings_agree() {
        let cube = daily();
        let store = chunk_by_partition(&cube, "date", &["Device".into()]).unwrap();
        let re = rechunk(&store);
        let back = re.to_chunk_store();
        let dir = tempfile::tempdir().unwrap();
        store.save(&dir.path().join("c")).unwrap();
        re.save(&dir.path().join("r")).unwrap();
        let opened_c = ChunkStore::open(&dir.path().join("c")).unwrap();
        let opened_r = RechunkedStore::open(&dir.path().join("r")).unwrap();
        let regions = [
            Region::empty(),
            Region::from_pairs([("Device", Value::str("iPhone"))]),
            Region::from_pairs([("date", Value::Int(3))]),
            Region::from_pairs([("date", Value::Int(3)), ("Device", Value::str("Pixel"))]),
            Region::from_pairs([("date", Value::Int(99))]),
        ];
        let requests = [
            FeatureRequest::metrics(["Revenue"]),
            FeatureRequest::new(["date"], ["Revenue"]),
            FeatureRequest::new(["Device", "date"], ["Revenue"]),
            FeatureRequest::attributes(["Device"]),
        ];
        for r in &regions {
            for q in &requests {
                let live = cube.view(r, q).unwrap();
                for enc in [&store as &dyn Cube, &re, &back, &opened_c, &opened_r] {
                    assert_eq!(enc.view(r, q).unwrap(), live, "{r} {q:?}");
                }
            }
        }
    }

    #[test]
    fn single_partition_and_empty() {
        let t1 = fixtures::t1();
        let one = chunk_by_partition(&t1.table().filter(&Region::from_pairs([("is_test", Value::Bool(true))])).map(BaseTableCube::new).unwrap(), "is_test", &["Device".into()]).unwrap();
        assert_eq!(one.num_chunks(), 1);
        let empty = chunk_by_partition(&t1.table().filter(&Region::from_pairs([("Device", Value::str("none"))])).map(BaseTableCube::new).unwrap(), "is_test", &["Device".into()]).unwrap();
        assert_eq!(empty.num_chunks(), 0);
        assert_eq!(rechunk(&empty).num_slices(), 0);
        let f = empty.view(&Region::empty(), &FeatureRequest::metrics(["Revenue"])).unwrap();
        assert_eq!(f.measure_values("Revenue").unwrap(), [0.0]);
    }
}
