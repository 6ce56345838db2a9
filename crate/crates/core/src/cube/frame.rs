use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::schema::DimensionSchema;
use super::value::Value;
use crate::error::{Error, Result};

/// Attribute (dimension) and metric (measure) features requested from a cube.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRequest {
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub metrics: Vec<String>,
}

impl FeatureRequest {
    pub fn new<A, M>(
        attributes: impl IntoIterator<Item = A>,
        metrics: impl IntoIterator<Item = M>,
    ) -> Self
    where
        A: Into<String>,
        M: Into<String>,
    {
        FeatureRequest {
            attributes: attributes.into_iter().map(Into::into).collect(),
            metrics: metrics.into_iter().map(Into::into).collect(),
        }
    }

    pub fn metrics<M: Into<String>>(metrics: impl IntoIterator<Item = M>) -> Self {
        FeatureRequest::new(Vec::<String>::new(), metrics)
    }

    pub fn attributes<A: Into<String>>(attributes: impl IntoIterator<Item = A>) -> Self {
        FeatureRequest::new(attributes, Vec::<String>::new())
    }

    pub fn validate(&self, schema: &DimensionSchema) -> Result<()> {
        let mut seen = HashSet::new();
        for a in &self.attributes {
            schema.dimension(a)?;
            if !seen.insert(a) {
                return Err(Error::Schema(format!("feature `{a}` requested twice")));
            }
        }
        for m in &self.metrics {
            schema.measure(m)?;
            if !seen.insert(m) {
                return Err(Error::Schema(format!("feature `{m}` requested twice")));
            }
        }
        Ok(())
    }
}

/// One measure column. `nulls[i] == true` marks an absent value (left-join misses).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MeasureColumn {
    values: Vec<f64>,
    nulls: Option<Vec<bool>>,
}

impl MeasureColumn {
    pub fn new(values: Vec<f64>) -> Self {
        MeasureColumn {
            values,
            nulls: None,
        }
    }

    pub fn from_options(values: Vec<Option<f64>>) -> Self {
        if values.iter().all(Option::is_some) {
            return MeasureColumn::new(values.into_iter().flatten().collect());
        }
        let nulls = values.iter().map(Option::is_none).collect();
        MeasureColumn {
            values: values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
            nulls: Some(nulls),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, row: usize) -> Option<f64> {
        match &self.nulls {
            Some(n) if n[row] => None,
            _ => Some(self.values[row]),
        }
    }

    pub fn has_nulls(&self) -> bool {
        self.nulls.as_ref().is_some_and(|n| n.iter().any(|&b| b))
    }

    /// The raw values. Fails when any cell is null; null-aware callers use [`get`](Self::get).
    pub fn values(&self) -> Result<&[f64]> {
        if self.has_nulls() {
            return Err(Error::Contract(
                "measure column contains null cells from a left join".into(),
            ));
        }
        Ok(&self.values)
    }
}

/// A grouped, aggregated table: one row per distinct attribute tuple, rows sorted by that tuple.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureFrame {
    attribute_names: Vec<String>,
    measure_names: Vec<String>,
    attributes: Vec<Vec<Value>>,
    measures: Vec<MeasureColumn>,
    rows: usize,
}

impl FeatureFrame {
    /// Builds a frame from row-major data, sorting rows by attribute tuple.
    pub fn from_rows(
        attribute_names: Vec<String>,
        measure_names: Vec<String>,
        mut rows: Vec<(Vec<Value>, Vec<Option<f64>>)>,
    ) -> Result<Self> {
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        for w in rows.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::Contract(format!(
                    "duplicate attribute tuple {:?} in frame",
                    w[0].0
                )));
            }
        }
        let n = rows.len();
        let mut attributes = vec![Vec::with_capacity(n); attribute_names.len()];
        let mut measures = vec![Vec::with_capacity(n); measure_names.len()];
        for (attrs, vals) in rows {
            if attrs.len() != attribute_names.len() || vals.len() != measure_names.len() {
                return Err(Error::Contract("row width does not match frame header".into()));
            }
            for (col, v) in attributes.iter_mut().zip(attrs) {
                col.push(v);
            }
            for (col, v) in measures.iter_mut().zip(vals) {
                col.push(v);
            }
        }
        Ok(FeatureFrame {
            attribute_names,
            measure_names,
            attributes,
            measures: measures.into_iter().map(MeasureColumn::from_options).collect(),
            rows: n,
        })
    }

    /// Builds a frame from rows already sorted and grouped by attribute tuple.
    pub(crate) fn from_sorted_columns(
        attribute_names: Vec<String>,
        measure_names: Vec<String>,
        attributes: Vec<Vec<Value>>,
        measures: Vec<MeasureColumn>,
        rows: usize,
    ) -> Self {
        debug_assert!(attributes.iter().all(|c| c.len() == rows));
        debug_assert!(measures.iter().all(|c| c.len() == rows));
        FeatureFrame {
            attribute_names,
            measure_names,
            attributes,
            measures,
            rows,
        }
    }

    pub fn num_rows(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn attribute_names(&self) -> &[String] {
        &self.attribute_names
    }

    pub fn measure_names(&self) -> &[String] {
        &self.measure_names
    }

    pub fn attribute(&self, name: &str) -> Option<&[Value]> {
        let i = self.attribute_names.iter().position(|n| n == name)?;
        Some(&self.attributes[i])
    }

    pub fn measure(&self, name: &str) -> Option<&MeasureColumn> {
        let i = self.measure_names.iter().position(|n| n == name)?;
        Some(&self.measures[i])
    }

    /// Non-null values of a measure column, or a contract error if the column is missing.
    pub fn measure_values(&self, name: &str) -> Result<&[f64]> {
        self.measure(name)
            .ok_or_else(|| Error::Contract(format!("frame has no measure `{name}`")))?
            .values()
    }

    /// Sum of a measure column over all rows (0 for an empty frame).
    pub fn total(&self, name: &str) -> Result<f64> {
        Ok(self.measure_values(name)?.iter().sum())
    }

    pub fn row_attributes(&self, row: usize) -> Vec<Value> {
        self.attributes.iter().map(|c| c[row].clone()).collect()
    }

    pub fn row_measures(&self, row: usize) -> Vec<Option<f64>> {
        self.measures.iter().map(|c| c.get(row)).collect()
    }

    pub fn rows(&self) -> impl Iterator<Item = (Vec<Value>, Vec<Option<f64>>)> + '_ {
        (0..self.rows).map(|r| (self.row_attributes(r), self.row_measures(r)))
    }

    /// True when the frame columns are exactly the requested features, in request order.
    pub fn matches(&self, request: &FeatureRequest) -> bool {
        self.attribute_names == request.attributes && self.measure_names == request.metrics
    }
}
