use super::{model_builders, EvaluationContext, ModelSpec, RegionAnalysisModel, SignalDecl, SignalVector};
use crate::cube::FeatureRequest;
use crate::error::Result;

/// Number of distinct entity tuples in a region, read off the frame's row count.
///
/// Thresholding `entity_count >= 2` over a grouping set `S` flags exactly the
/// regions where the dependency `S -> entity_columns` fails.
#[derive(Debug, Clone)]
pub struct EntityModel {
    spec: ModelSpec,
}

pub const ENTITY_COUNT: &str = "entity_count";

impl EntityModel {
    pub const SIGNAL: &'static str = ENTITY_COUNT;

    pub fn new<S: Into<String>>(entity_columns: impl IntoIterator<Item = S>) -> Self {
        EntityModel {
            spec: ModelSpec::new(
                "entity",
                FeatureRequest::attributes(entity_columns),
                vec![SignalDecl::new(ENTITY_COUNT, true)],
            ),
        }
    }
}

model_builders!(EntityModel);

impl RegionAnalysisModel for EntityModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let mut out = SignalVector::new();
        out.insert(ENTITY_COUNT, ctx.region_frame.num_rows() as f64)?;
        Ok(out)
    }
}

/// Counts entities through a per-entity measure, typically a constant-one column:
/// every entity tuple present in the region contributes a positive value.
#[derive(Debug, Clone)]
pub struct EntityMeasureModel {
    spec: ModelSpec,
    measure: String,
}

impl EntityMeasureModel {
    pub const SIGNAL: &'static str = ENTITY_COUNT;

    pub fn new<S: Into<String>>(entity_columns: impl IntoIterator<Item = S>, measure: impl Into<String>) -> Self {
        let measure = measure.into();
        EntityMeasureModel {
            spec: ModelSpec::new(
                "entity_measure",
                FeatureRequest::new(entity_columns, [measure.clone()]),
                vec![SignalDecl::new(ENTITY_COUNT, true)],
            ),
            measure,
        }
    }
}

model_builders!(EntityMeasureModel);

impl RegionAnalysisModel for EntityMeasureModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let count = ctx
            .region_frame
            .measure_values(&self.measure)?
            .iter()
            .filter(|v| **v > 0.0)
            .count();
        let mut out = SignalVector::new();
        out.insert(ENTITY_COUNT, count as f64)?;
        Ok(out)
    }
}
