use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::value::ValueKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimension {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: ValueKind,
}

impl Dimension {
    pub fn new(name: impl Into<String>, kind: ValueKind) -> Self {
        Dimension {
            name: name.into(),
            kind,
        }
    }
}

/// How a measure is aggregated over the rows of a region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Sum,
    /// Number of distinct tuples over the listed dimension columns.
    CountDistinct(Vec<String>),
    /// Precomputed per-cell value with no known aggregation (cellsets built from result cubes).
    Stored,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measure {
    pub name: String,
    pub aggregator: Aggregator,
}

impl Measure {
    pub fn sum(name: impl Into<String>) -> Self {
        Measure {
            name: name.into(),
            aggregator: Aggregator::Sum,
        }
    }

    pub fn count_distinct<S: Into<String>>(
        name: impl Into<String>,
        columns: impl IntoIterator<Item = S>,
    ) -> Self {
        Measure {
            name: name.into(),
            aggregator: Aggregator::CountDistinct(columns.into_iter().map(Into::into).collect()),
        }
    }

    pub fn stored(name: impl Into<String>) -> Self {
        Measure {
            name: name.into(),
            aggregator: Aggregator::Stored,
        }
    }

    pub fn is_sum(&self) -> bool {
        self.aggregator == Aggregator::Sum
    }
}

/// Ordered dimensions, measures and optional hierarchy chains of a cube.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSchema {
    dimensions: Vec<Dimension>,
    measures: Vec<Measure>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    hierarchies: Vec<Vec<String>>,
}

impl DimensionSchema {
    pub fn new(dimensions: Vec<Dimension>, measures: Vec<Measure>) -> Result<Self> {
        Self::with_hierarchies(dimensions, measures, Vec::new())
    }

    pub fn with_hierarchies(
        dimensions: Vec<Dimension>,
        measures: Vec<Measure>,
        hierarchies: Vec<Vec<String>>,
    ) -> Result<Self> {
        let schema = DimensionSchema {
            dimensions,
            measures,
            hierarchies,
        };
        schema.validate()?;
        Ok(schema)
    }

    /// Checks name uniqueness, aggregator references and hierarchy chains.
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for name in self
            .dimensions
            .iter()
            .map(|d| &d.name)
            .chain(self.measures.iter().map(|m| &m.name))
        {
            if !names.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{name}`")));
            }
        }
        for m in &self.measures {
            if let Aggregator::CountDistinct(cols) = &m.aggregator {
                if cols.is_empty() {
                    return Err(Error::Schema(format!(
                        "COUNT_DISTINCT measure `{}` lists no columns",
                        m.name
                    )));
                }
                for c in cols {
                    if self.dimension_index(c).is_none() {
                        return Err(Error::Schema(format!(
                            "COUNT_DISTINCT measure `{}` references `{c}`, which is not a dimension",
                            m.name
                        )));
                    }
                }
            }
        }
        validate_chains(self, &self.hierarchies)
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn measures(&self) -> &[Measure] {
        &self.measures
    }

    pub fn hierarchies(&self) -> &[Vec<String>] {
        &self.hierarchies
    }

    pub fn dimension_names(&self) -> impl Iterator<Item = &str> {
        self.dimensions.iter().map(|d| d.name.as_str())
    }

    pub fn dimension_index(&self, name: &str) -> Option<usize> {
        self.dimensions.iter().position(|d| d.name == name)
    }

    pub fn dimension(&self, name: &str) -> Result<&Dimension> {
        self.dimensions
            .iter()
            .find(|d| d.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown dimension `{name}`")))
    }

    pub fn measure_index(&self, name: &str) -> Option<usize> {
        self.measures.iter().position(|m| m.name == name)
    }

    pub fn measure(&self, name: &str) -> Result<&Measure> {
        self.measures
            .iter()
            .find(|m| m.name == name)
            .ok_or_else(|| Error::Schema(format!("unknown measure `{name}`")))
    }

    /// Schema restricted to `dims` (in schema order) and all measures.
    ///
    /// COUNT_DISTINCT measures may still reference dropped dimensions; callers that
    /// re-aggregate must use the original schema.
    pub fn project(&self, dims: &[String]) -> Result<DimensionSchema> {
        for d in dims {
            self.dimension(d)?;
        }
        let dimensions = self
            .dimensions
            .iter()
            .filter(|d| dims.contains(&d.name))
            .cloned()
            .collect();
        let hierarchies = self
            .hierarchies
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .filter(|d| dims.contains(d))
                    .cloned()
                    .collect::<Vec<_>>()
            })
            .filter(|c| c.len() > 1)
            .collect();
        Ok(DimensionSchema {
            dimensions,
            measures: self.measures.clone(),
            hierarchies,
        })
    }
}

pub(crate) fn validate_chains(schema: &DimensionSchema, chains: &[Vec<String>]) -> Result<()> {
    for chain in chains {
        let mut seen = HashSet::new();
        for d in chain {
            schema.dimension(d)?;
            if !seen.insert(d) {
                return Err(Error::Schema(format!(
                    "dimension `{d}` appears twice in hierarchy {chain:?}"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims() -> Vec<Dimension> {
        vec![
            Dimension::new("Country", ValueKind::String),
            Dimension::new("State", ValueKind::String),
        ]
    }

    #[test]
    fn rejects_duplicate_names_across_kinds() {
        let err = DimensionSchema::new(dims(), vec![Measure::sum("Country")]).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn rejects_bad_hierarchy() {
        let bad = vec![vec!["Country".into(), "City".into()]];
        assert!(DimensionSchema::with_hierarchies(dims(), vec![], bad).is_err());
        let dup = vec![vec!["Country".into(), "Country".into()]];
        assert!(DimensionSchema::with_hierarchies(dims(), vec![], dup).is_err());
        let ok = vec![vec!["Country".into(), "State".into()]];
        assert!(DimensionSchema::with_hierarchies(dims(), vec![], ok).is_ok());
    }

    #[test]
    fn count_distinct_must_reference_dimensions() {
        let err = DimensionSchema::new(
            dims(),
            vec![Measure::sum("Rev"), Measure::count_distinct("n", ["Rev"])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn serde_shape() {
        let s = DimensionSchema::new(
            dims(),
            vec![Measure::sum("Rev"), Measure::count_distinct("n", ["State"])],
        )
        .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains(r#"{"count_distinct":["State"]}"#), "{json}");
        let back: DimensionSchema = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }
}
