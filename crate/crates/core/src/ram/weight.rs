use super::{model_builders, EvaluationContext, ModelSpec, RegionAnalysisModel, SignalDecl, SignalVector};
use crate::cube::FeatureRequest;
use crate::error::{Error, Result};

/// Emits each requested metric's region total as a signal of the same name.
#[derive(Debug, Clone)]
pub struct IdModel {
    spec: ModelSpec,
}

impl IdModel {
    /// `apriori` declares the metrics nonincreasing under refinement (true for SUM of
    /// nonnegative values and for COUNT_DISTINCT).
    pub fn new<S: Into<String>>(metrics: impl IntoIterator<Item = S>, apriori: bool) -> Self {
        let metrics: Vec<String> = metrics.into_iter().map(Into::into).collect();
        let signals = metrics.iter().map(|m| SignalDecl::new(m.clone(), apriori)).collect();
        IdModel {
            spec: ModelSpec::new("id", FeatureRequest::metrics(metrics), signals),
        }
    }
}

model_builders!(IdModel);

impl RegionAnalysisModel for IdModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let mut out = SignalVector::new();
        for m in &self.spec.request.metrics {
            out.insert(m.clone(), ctx.region_frame.total(m)?)?;
        }
        Ok(out)
    }
}

/// Total weight of a region, `total_weight`; apriori, so negative weights are rejected.
#[derive(Debug, Clone)]
pub struct EntityWeightModel {
    spec: ModelSpec,
    metric: String,
}

impl EntityWeightModel {
    pub const SIGNAL: &'static str = "total_weight";

    pub fn new(metric: impl Into<String>) -> Self {
        let metric = metric.into();
        EntityWeightModel {
            spec: ModelSpec::new(
                "entity_weight",
                FeatureRequest::metrics([metric.clone()]),
                vec![SignalDecl::new(Self::SIGNAL, true)],
            ),
            metric,
        }
    }

    /// Also group by `attributes`, e.g. to look at per-date weights.
    pub fn with_attributes<S: Into<String>>(mut self, attributes: impl IntoIterator<Item = S>) -> Self {
        self.spec.request.attributes = attributes.into_iter().map(Into::into).collect();
        self
    }
}

model_builders!(EntityWeightModel);

impl RegionAnalysisModel for EntityWeightModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let values = ctx.region_frame.measure_values(&self.metric)?;
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::Data(format!(
                "negative weight {v} in `{}` at {} breaks the apriori property of `{}`",
                self.metric,
                ctx.region,
                Self::SIGNAL
            )));
        }
        let mut out = SignalVector::new();
        out.insert(Self::SIGNAL, values.iter().sum())?;
        Ok(out)
    }
}
