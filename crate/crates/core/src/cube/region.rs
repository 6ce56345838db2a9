use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::DimensionSchema;
use super::value::Value;
use crate::error::{Error, Result};

/// A set of `dimension = value` bindings. The empty region is the population.
///
/// Bindings are kept sorted by dimension name, so equal binding sets are equal regions
/// regardless of construction order. Regions order by degree first, then bindings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Region {
    bindings: BTreeMap<String, Value>,
}

impl Region {
    pub fn empty() -> Self {
        Region::default()
    }

    pub fn from_pairs<K, V, I>(pairs: I) -> Self
    where
        K: Into<String>,
        V: Into<Value>,
        I: IntoIterator<Item = (K, V)>,
    {
        Region {
            bindings: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    pub fn degree(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_population(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn get(&self, dimension: &str) -> Option<&Value> {
        self.bindings.get(dimension)
    }

    pub fn binds(&self, dimension: &str) -> bool {
        self.bindings.contains_key(dimension)
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn dimensions(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(String::as_str)
    }

    /// A copy of this region with one more binding.
    pub fn with(&self, dimension: impl Into<String>, value: Value) -> Region {
        let mut bindings = self.bindings.clone();
        bindings.insert(dimension.into(), value);
        Region { bindings }
    }

    pub fn without(&self, dimension: &str) -> Region {
        let mut bindings = self.bindings.clone();
        bindings.remove(dimension);
        Region { bindings }
    }

    /// Bindings restricted to the given dimensions.
    pub fn restrict<'a>(&self, dims: impl IntoIterator<Item = &'a str>) -> Region {
        let mut bindings = BTreeMap::new();
        for d in dims {
            if let Some(v) = self.bindings.get(d) {
                bindings.insert(d.to_string(), v.clone());
            }
        }
        Region { bindings }
    }

    /// `self ≺ other`: every binding of `other` also appears in `self`.
    pub fn precedes(&self, other: &Region) -> bool {
        other
            .bindings
            .iter()
            .all(|(d, v)| self.bindings.get(d) == Some(v))
    }

    /// Union of two binding sets, or `None` when they bind a dimension to different values.
    pub fn merge(&self, other: &Region) -> Option<Region> {
        let mut bindings = self.bindings.clone();
        for (d, v) in &other.bindings {
            match bindings.get(d) {
                Some(existing) if existing != v => return None,
                _ => {
                    bindings.insert(d.clone(), v.clone());
                }
            }
        }
        Some(Region { bindings })
    }

    /// Checks every binding names a schema dimension and carries a value of its kind.
    pub fn validate(&self, schema: &DimensionSchema) -> Result<()> {
        for (d, v) in &self.bindings {
            let dim = schema.dimension(d)?;
            if !v.conforms_to(dim.kind) {
                return Err(Error::Schema(format!(
                    "value `{v}` does not match the {:?} domain of `{d}`",
                    dim.kind
                )));
            }
        }
        Ok(())
    }

    /// Bindings listed in the schema's dimension order.
    pub fn ordered_by<'a>(&'a self, schema: &'a DimensionSchema) -> Vec<(&'a str, &'a Value)> {
        schema
            .dimension_names()
            .filter_map(|d| self.bindings.get_key_value(d))
            .map(|(k, v)| (k.as_str(), v))
            .collect()
    }

    /// Parses the flat `dim=value;dim=value` form, typing values through `schema`.
    pub fn parse_flat(text: &str, schema: &DimensionSchema) -> Result<Region> {
        let mut bindings = BTreeMap::new();
        if text.is_empty() {
            return Ok(Region { bindings });
        }
        for part in text.split(';') {
            let (d, v) = part
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("binding `{part}` lacks `=`")))?;
            let kind = schema.dimension(d)?.kind;
            bindings.insert(d.to_string(), Value::parse(v, kind)?);
        }
        Ok(Region { bindings })
    }
}

impl PartialOrd for Region {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Region {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree()
            .cmp(&other.degree())
            .then_with(|| self.bindings.iter().cmp(other.bindings.iter()))
    }
}

/// Flat `dim=value;dim=value` form.
impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (d, v)) in self.bindings.iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{d}={v}")?;
        }
        Ok(())
    }
}
