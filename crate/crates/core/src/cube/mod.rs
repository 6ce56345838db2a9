//! Regions, features and the cube-as-function contract.
//!
//! A cube maps a `(region, feature request)` pair to a grouped, aggregated
//! [`FeatureFrame`]. [`BaseTableCube`] computes views by filtering and grouping
//! a columnar base table; [`CellsetCube`] reads them from materialized cells.

mod cellset;
mod frame;
mod region;
mod schema;
mod table;
mod value;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cellset::{build_cellset, CellKey, CellsetCube};
pub use frame::{FeatureFrame, FeatureRequest, MeasureColumn};
pub use region::Region;
pub use schema::{Aggregator, Dimension, DimensionSchema, Measure};
pub use table::{BaseTable, BaseTableCube, TableBuilder};
pub use value::{Value, ValueKind};

pub(crate) use schema::validate_chains;

use crate::error::{Error, Result};

/// A cube: a pure function from `(region, features)` to a feature table.
///
/// Implementations are immutable after construction and evaluated concurrently by the crawler.
pub trait Cube: Send + Sync {
    fn schema(&self) -> &DimensionSchema;

    /// The grouped view of `region` for `request`.
    ///
    /// With no attribute features the view has one row when the region is the
    /// population or contains data, and no rows otherwise.
    fn view(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame>;

    /// Values of `dimension` observed inside `region`, ascending.
    fn distinct_values(&self, region: &Region, dimension: &str) -> Result<Vec<Value>> {
        let frame = self.view(region, &FeatureRequest::attributes([dimension]))?;
        Ok(frame.attribute(dimension).map(<[Value]>::to_vec).unwrap_or_default())
    }

    /// Evaluates a pushdown predicate against the region's SUM totals without building a frame.
    fn check_predicate(&self, region: &Region, predicate: &Predicate) -> Result<bool> {
        predicate.validate(self.schema())?;
        let mut names: Vec<&str> = predicate.measures().collect();
        names.sort_unstable();
        names.dedup();
        let frame = self.view(region, &FeatureRequest::metrics(names))?;
        let totals = predicate
            .measures()
            .map(|m| frame.total(m))
            .collect::<Result<Vec<_>>>()?;
        Ok(predicate.holds(&totals))
    }

    /// Storage read counters, for encodings backed by chunk or slice files.
    fn read_stats(&self) -> ReadStats {
        ReadStats::default()
    }
}

impl<C: Cube + ?Sized> Cube for Arc<C> {
    fn schema(&self) -> &DimensionSchema {
        (**self).schema()
    }
    fn view(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame> {
        (**self).view(region, request)
    }
    fn distinct_values(&self, region: &Region, dimension: &str) -> Result<Vec<Value>> {
        (**self).distinct_values(region, dimension)
    }
    fn check_predicate(&self, region: &Region, predicate: &Predicate) -> Result<bool> {
        (**self).check_predicate(region, predicate)
    }
    fn read_stats(&self) -> ReadStats {
        (**self).read_stats()
    }
}

/// Counters of physical reads made by a stored cube encoding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadStats {
    pub chunk_reads: u64,
    pub slice_reads: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Comparator {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Ge => lhs >= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Lt => lhs < rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clause {
    pub measure: String,
    pub op: Comparator,
    pub value: f64,
}

/// Conjunction of `SUM(measure) <op> constant` clauses evaluated inside aggregation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Predicate {
    pub clauses: Vec<Clause>,
}

impl Predicate {
    pub fn new(clauses: Vec<Clause>) -> Self {
        Predicate { clauses }
    }

    pub fn at_least(measure: impl Into<String>, value: f64) -> Self {
        Predicate::new(vec![Clause {
            measure: measure.into(),
            op: Comparator::Ge,
            value,
        }])
    }

    pub fn measures(&self) -> impl Iterator<Item = &str> {
        self.clauses.iter().map(|c| c.measure.as_str())
    }

    pub fn validate(&self, schema: &DimensionSchema) -> Result<()> {
        for c in &self.clauses {
            if !schema.measure(&c.measure)?.is_sum() {
                return Err(Error::Spec(format!(
                    "pushdown predicate references non-SUM measure `{}`",
                    c.measure
                )));
            }
        }
        Ok(())
    }

    /// `totals[i]` is the region total of clause `i`'s measure.
    pub fn holds(&self, totals: &[f64]) -> bool {
        self.clauses
            .iter()
            .zip(totals)
            .all(|(c, &t)| c.op.holds(t, c.value))
    }
}
