//! Region analysis models: declared feature requests plus a pure evaluation that
//! turns a region's feature frame (and optionally the population's) into signals.

mod attribution;
mod diff;
mod entity;
mod itemset;
mod outlier;
mod weight;

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

pub use attribution::AttributionModel;
pub use diff::DiffModel;
pub use entity::{EntityMeasureModel, EntityModel};
pub use itemset::FrequentItemsetModel;
pub use outlier::WindowOutlierModel;
pub use weight::{EntityWeightModel, IdModel};

use crate::cube::{DimensionSchema, FeatureFrame, FeatureRequest, Predicate, Region};
use crate::error::{Error, Result};

/// Named real-valued signals produced by models for one region.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalVector(BTreeMap<String, f64>);

impl SignalVector {
    pub fn new() -> Self {
        SignalVector::default()
    }

    /// Inserts a signal; NaN and infinities are rejected.
    pub fn insert(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::Numeric(format!("signal `{name}` is {value}")));
        }
        if self.0.insert(name.clone(), value).is_some() {
            return Err(Error::Contract(format!("signal `{name}` set twice")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Moves all of `other`'s signals into `self`; a clash is a contract error.
    pub fn absorb(&mut self, other: SignalVector) -> Result<()> {
        for (k, v) in other.0 {
            self.insert(k, v)?;
        }
        Ok(())
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for SignalVector {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        SignalVector(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalDecl {
    pub name: String,
    /// Nonincreasing along region refinement; enables pruning on a minimum threshold.
    pub apriori: bool,
}

impl SignalDecl {
    pub fn new(name: impl Into<String>, apriori: bool) -> Self {
        SignalDecl {
            name: name.into(),
            apriori,
        }
    }
}

/// What a model requests from the cube and what it emits.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub request: FeatureRequest,
    pub population_request: Option<FeatureRequest>,
    pub signals: Vec<SignalDecl>,
    /// When the model's thresholded signals fail, later models are skipped for the region.
    pub gate: bool,
    pub pushdown: Option<Predicate>,
}

impl ModelSpec {
    pub fn new(name: impl Into<String>, request: FeatureRequest, signals: Vec<SignalDecl>) -> Self {
        ModelSpec {
            name: name.into(),
            request,
            population_request: None,
            signals,
            gate: false,
            pushdown: None,
        }
    }

    pub fn with_population(mut self, request: FeatureRequest) -> Self {
        self.population_request = Some(request);
        self
    }

    pub fn signal(&self, name: &str) -> Option<&SignalDecl> {
        self.signals.iter().find(|s| s.name == name)
    }

    pub fn validate(&self, schema: &DimensionSchema) -> Result<()> {
        self.request.validate(schema)?;
        if let Some(p) = &self.population_request {
            p.validate(schema)?;
        }
        let mut seen = HashSet::new();
        for s in &self.signals {
            if !seen.insert(&s.name) {
                return Err(Error::Spec(format!(
                    "model `{}` declares signal `{}` twice",
                    self.name, s.name
                )));
            }
        }
        if let Some(p) = &self.pushdown {
            p.validate(schema)?;
        }
        Ok(())
    }
}

/// Everything a model sees when scoring one region.
#[derive(Debug, Clone, Copy)]
pub struct EvaluationContext<'a> {
    pub region: &'a Region,
    pub region_frame: &'a FeatureFrame,
    /// The view at the population for `population_request`, shared across the crawl.
    pub population_frame: Option<&'a FeatureFrame>,
}

/// A region analysis model. Implementations are stateless and shared across threads.
pub trait RegionAnalysisModel: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    /// Schema checks beyond feature names, run once before a crawl.
    fn check_schema(&self, schema: &DimensionSchema) -> Result<()> {
        self.spec().validate(schema)
    }

    /// Computes the declared signals. Must be a pure function of `ctx`.
    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector>;
}

/// Runs `model` on `ctx`, enforcing the frame/request contract and the declared signal set.
pub fn evaluate(model: &dyn RegionAnalysisModel, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
    let spec = model.spec();
    if !ctx.region_frame.matches(&spec.request) {
        return Err(Error::Contract(format!(
            "region frame columns {:?}/{:?} do not match the request of model `{}`",
            ctx.region_frame.attribute_names(),
            ctx.region_frame.measure_names(),
            spec.name
        )));
    }
    match (&spec.population_request, ctx.population_frame) {
        (Some(req), Some(frame)) if frame.matches(req) => {}
        (None, None) => {}
        _ => {
            return Err(Error::Contract(format!(
                "population frame does not match the population request of model `{}`",
                spec.name
            )))
        }
    }
    let signals = model.evaluate(ctx).map_err(|e| match e {
        Error::Model { .. } | Error::Data(_) => e,
        other => Error::model(&spec.name, other.to_string()),
    })?;
    let declared = spec.signals.iter().map(|s| s.name.as_str());
    if signals.len() != spec.signals.len() || !declared.clone().all(|n| signals.get(n).is_some()) {
        return Err(Error::Contract(format!(
            "model `{}` returned {:?}, declared {:?}",
            spec.name,
            signals.names().collect::<Vec<_>>(),
            declared.collect::<Vec<_>>()
        )));
    }
    Ok(signals)
}

/// Builder methods shared by the built-in models.
macro_rules! model_builders {
    ($ty:ty) => {
        impl $ty {
            /// Skip later models for a region whose thresholded signals fail here.
            pub fn gated(mut self, gate: bool) -> Self {
                self.spec.gate = gate;
                self
            }

            /// Evaluate `predicate` during aggregation and skip the frame when it fails.
            pub fn with_pushdown(mut self, predicate: $crate::cube::Predicate) -> Self {
                self.spec.pushdown = Some(predicate);
                self
            }

            pub fn named(mut self, name: impl Into<String>) -> Self {
                self.spec.name = name.into();
                self
            }
        }
    };
}
pub(crate) use model_builders;

/// Splits a frame with a flag attribute into (false-total, true-total) of `measure`.
pub(crate) fn segment_totals(frame: &FeatureFrame, flag: &str, measure: &str) -> Result<(f64, f64)> {
    let flags = frame
        .attribute(flag)
        .ok_or_else(|| Error::Contract(format!("frame lacks flag attribute `{flag}`")))?;
    let values = frame.measure_values(measure)?;
    let (mut control, mut test) = (0.0, 0.0);
    for (f, v) in flags.iter().zip(values) {
        match f.as_flag() {
            Some(true) => test += v,
            Some(false) => control += v,
            None => {
                return Err(Error::Data(format!(
                    "`{flag}` value `{f}` is not a test/control flag"
                )))
            }
        }
    }
    Ok((control, test))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use crate::cube::{BaseTable, BaseTableCube, Dimension, DimensionSchema, Measure, Value, ValueKind};

    /// Six-row sales table: (Device, Browser, is_test, Revenue, Clicks).
    pub fn t1() -> BaseTableCube {
        let schema = DimensionSchema::new(
            vec![
                Dimension::new("Device", ValueKind::String),
                Dimension::new("Browser", ValueKind::String),
                Dimension::new("is_test", ValueKind::Boolean),
            ],
            vec![Measure::sum("Revenue"), Measure::sum("Clicks")],
        )
        .unwrap();
        let mut b = BaseTable::builder(schema).unwrap();
        for (d, br, t, rev, clk) in [
            ("Pixel", "Chrome", false, 10.0, 5.0),
            ("Pixel", "Safari", false, 20.0, 10.0),
            ("iPhone", "Safari", false, 30.0, 15.0),
            ("Pixel", "Chrome", true, 15.0, 5.0),
            ("Pixel", "Safari", true, 25.0, 10.0),
            ("iPhone", "Safari", true, 25.0, 15.0),
        ] {
            b.push([Value::str(d), Value::str(br), Value::Bool(t)], &[rev, clk])
                .unwrap();
        }
        BaseTableCube::new(b.build())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::Cube;

    #[test]
    fn signal_vector_rejects_nan() {
        let mut s = SignalVector::new();
        assert!(s.insert("a", f64::NAN).is_err());
        s.insert("a", 1.0).unwrap();
        assert!(s.insert("a", 2.0).is_err());
    }

    #[test]
    fn contract_checks() {
        let cube = fixtures::t1();
        let model = EntityWeightModel::new("Revenue");
        let wrong = cube
            .view(&Region::empty(), &FeatureRequest::metrics(["Clicks"]))
            .unwrap();
        let ctx = EvaluationContext {
            region: &Region::empty(),
            region_frame: &wrong,
            population_frame: None,
        };
        assert!(matches!(evaluate(&model, &ctx), Err(Error::Contract(_))));

        let right = cube.view(&Region::empty(), &model.spec().request).unwrap();
        let ctx = EvaluationContext {
            region: &Region::empty(),
            region_frame: &right,
            population_frame: Some(&right),
        };
        assert!(matches!(evaluate(&model, &ctx), Err(Error::Contract(_))));
    }
}
