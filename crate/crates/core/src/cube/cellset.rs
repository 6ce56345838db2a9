use std::collections::{BTreeMap, HashMap};

use super::frame::{FeatureFrame, FeatureRequest};
use super::region::Region;
use super::schema::DimensionSchema;
use super::value::Value;
use super::Cube;
use crate::error::{Error, Result};

/// A full-width cell: one slot per cellset dimension, `None` is the wildcard `*`.
pub type CellKey = Vec<Option<Value>>;

/// A materialized cube: cells (with `*` meaning "any") mapped to measure vectors.
///
/// Views are read from cells directly, never re-aggregated, so measures need not be
/// decomposable. Only cells observed in the source data are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CellsetCube {
    schema: DimensionSchema,
    /// Sorted by key.
    cells: Vec<(CellKey, Vec<Option<f64>>)>,
    /// Cell indices grouped by the bitmask of concrete slots.
    by_mask: HashMap<u64, Vec<usize>>,
}

impl CellsetCube {
    /// Builds a cellset over every dimension of `schema`. Keys must be unique and full-width.
    pub fn from_cells(
        schema: DimensionSchema,
        cells: impl IntoIterator<Item = (CellKey, Vec<Option<f64>>)>,
    ) -> Result<Self> {
        let width = schema.dimensions().len();
        let n_measures = schema.measures().len();
        if width > 63 {
            return Err(Error::Schema("cellsets support at most 63 dimensions".into()));
        }
        let mut map = BTreeMap::new();
        for (key, values) in cells {
            if key.len() != width || values.len() != n_measures {
                return Err(Error::Format(format!(
                    "cell has {} slots and {} measures, expected {width} and {n_measures}",
                    key.len(),
                    values.len()
                )));
            }
            for (slot, dim) in key.iter().zip(schema.dimensions()) {
                if let Some(v) = slot {
                    if !v.conforms_to(dim.kind) {
                        return Err(Error::Schema(format!(
                            "cell value `{v}` does not match the {:?} domain of `{}`",
                            dim.kind, dim.name
                        )));
                    }
                }
            }
            if map.insert(key.clone(), values).is_some() {
                return Err(Error::Format(format!("duplicate cell {key:?}")));
            }
        }
        let cells: Vec<_> = map.into_iter().collect();
        let mut by_mask: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, (key, _)) in cells.iter().enumerate() {
            by_mask.entry(mask_of(key)).or_default().push(i);
        }
        Ok(CellsetCube {
            schema,
            cells,
            by_mask,
        })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellKey, &[Option<f64>])> {
        self.cells.iter().map(|(k, v)| (k, v.as_slice()))
    }

    pub fn dimension_names(&self) -> Vec<String> {
        self.schema.dimension_names().map(String::from).collect()
    }

    /// The measure vector of the cell that binds exactly `region`.
    pub fn cell(&self, region: &Region) -> Option<&[Option<f64>]> {
        let key = self.key_for(region)?;
        self.cells
            .binary_search_by(|(k, _)| k.cmp(&key))
            .ok()
            .map(|i| self.cells[i].1.as_slice())
    }

    /// The cell key binding exactly `region`, or `None` if it names a foreign dimension.
    pub fn key_for(&self, region: &Region) -> Option<CellKey> {
        if region.dimensions().any(|d| self.schema.dimension_index(d).is_none()) {
            return None;
        }
        Some(
            self.schema
                .dimension_names()
                .map(|d| region.get(d).cloned())
                .collect(),
        )
    }

    /// The region a cell key denotes.
    pub fn region_of(&self, key: &CellKey) -> Region {
        Region::from_pairs(
            self.schema
                .dimension_names()
                .zip(key)
                .filter_map(|(d, v)| v.clone().map(|v| (d, v))),
        )
    }
}

fn mask_of(key: &CellKey) -> u64 {
    key.iter()
        .enumerate()
        .filter(|(_, v)| v.is_some())
        .fold(0, |m, (i, _)| m | (1 << i))
}

impl Cube for CellsetCube {
    fn schema(&self) -> &DimensionSchema {
        &self.schema
    }

    fn view(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame> {
        request.validate(&self.schema)?;
        region.validate(&self.schema)?;
        let dim_idx = |d: &str| self.schema.dimension_index(d).expect("validated");
        let mut mask = 0u64;
        for d in region.dimensions() {
            mask |= 1 << dim_idx(d);
        }
        let attr_idx: Vec<usize> = request.attributes.iter().map(|a| dim_idx(a)).collect();
        for &i in &attr_idx {
            mask |= 1 << i;
        }
        let bound: Vec<(usize, &Value)> = region.bindings().map(|(d, v)| (dim_idx(d), v)).collect();
        let measure_idx: Vec<usize> = request
            .metrics
            .iter()
            .map(|m| self.schema.measure_index(m).expect("validated"))
            .collect();

        let mut rows = Vec::new();
        for &c in self.by_mask.get(&mask).map(Vec::as_slice).unwrap_or(&[]) {
            let (key, values) = &self.cells[c];
            if bound.iter().all(|&(i, v)| key[i].as_ref() == Some(v)) {
                rows.push((
                    attr_idx.iter().map(|&i| key[i].clone().expect("masked slot")).collect(),
                    measure_idx.iter().map(|&m| values[m]).collect(),
                ));
            }
        }
        FeatureFrame::from_rows(request.attributes.clone(), request.metrics.clone(), rows)
    }
}

/// Materializes every grouping set over `dims` of `cube` into a cellset.
///
/// The resulting cellset's schema is the source schema projected onto `dims`.
pub fn build_cellset(cube: &dyn Cube, dims: &[String]) -> Result<CellsetCube> {
    let schema = cube.schema();
    let projected = schema.project(dims)?;
    let ordered: Vec<String> = projected.dimension_names().map(String::from).collect();
    if ordered.len() > 20 {
        return Err(Error::Schema(format!(
            "refusing to materialize 2^{} grouping sets",
            ordered.len()
        )));
    }
    let metrics: Vec<String> = schema.measures().iter().map(|m| m.name.clone()).collect();
    let mut cells = Vec::new();
    for set in 0u32..(1 << ordered.len()) {
        let attrs: Vec<String> = ordered
            .iter()
            .enumerate()
            .filter(|(i, _)| set & (1 << i) != 0)
            .map(|(_, d)| d.clone())
            .collect();
        let frame = cube.view(&Region::empty(), &FeatureRequest::new(attrs.clone(), metrics.clone()))?;
        for (values, measures) in frame.rows() {
            let mut it = values.into_iter();
            let key = (0..ordered.len())
                .map(|i| (set & (1 << i) != 0).then(|| it.next().expect("attr")))
                .collect();
            cells.push((key, measures));
        }
    }
    CellsetCube::from_cells(projected, cells)
}
