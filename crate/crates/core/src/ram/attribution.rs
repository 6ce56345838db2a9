use super::{
    model_builders, segment_totals, EvaluationContext, ModelSpec, RegionAnalysisModel, SignalDecl,
    SignalVector,
};
use crate::attribution::{region_ras, Formula, SegmentedMetrics};
use crate::cube::FeatureRequest;
use crate::error::{Error, Result};

/// Scores a region's contribution to the change of a metric between the control
/// (`flag = false`) and test (`flag = true`) segments.
///
/// Density metrics divide `numerator` by `denominator`; the degenerate form is used
/// automatically when the population denominators are equal.
#[derive(Debug, Clone)]
pub struct AttributionModel {
    spec: ModelSpec,
    formula: Formula,
    flag: String,
    numerator: String,
    denominator: Option<String>,
}

impl AttributionModel {
    pub const RAS: &'static str = "ras";
    pub const NUMERATOR_PART: &'static str = "numerator_part";
    pub const DENOMINATOR_PART: &'static str = "denominator_part";

    pub fn summable(flag: impl Into<String>, metric: impl Into<String>) -> Self {
        Self::build(Formula::Summable, flag.into(), metric.into(), None)
    }

    pub fn density(flag: impl Into<String>, numerator: impl Into<String>, denominator: impl Into<String>) -> Self {
        Self::build(Formula::Density, flag.into(), numerator.into(), Some(denominator.into()))
    }

    fn build(formula: Formula, flag: String, numerator: String, denominator: Option<String>) -> Self {
        let metrics: Vec<String> = std::iter::once(numerator.clone()).chain(denominator.clone()).collect();
        let request = FeatureRequest::new([flag.clone()], metrics);
        let signals = [Self::RAS, Self::NUMERATOR_PART, Self::DENOMINATOR_PART]
            .into_iter()
            .map(|s| SignalDecl::new(s, false))
            .collect();
        AttributionModel {
            spec: ModelSpec::new("attribution", request.clone(), signals).with_population(request),
            formula,
            flag,
            numerator,
            denominator,
        }
    }

    pub fn formula(&self) -> Formula {
        self.formula
    }

    /// Control/test totals of the region and population for this model's measures.
    pub fn metrics(&self, ctx: &EvaluationContext<'_>) -> Result<SegmentedMetrics<f64>> {
        let population = ctx
            .population_frame
            .ok_or_else(|| Error::Contract("attribution model needs the population frame".into()))?;
        let (w_r_c, w_r_t) = segment_totals(ctx.region_frame, &self.flag, &self.numerator)?;
        let (w_p_c, w_p_t) = segment_totals(population, &self.flag, &self.numerator)?;
        Ok(match &self.denominator {
            None => SegmentedMetrics::summable(w_r_c, w_r_t, w_p_c, w_p_t),
            Some(d) => {
                let (s_r_c, s_r_t) = segment_totals(ctx.region_frame, &self.flag, d)?;
                let (s_p_c, s_p_t) = segment_totals(population, &self.flag, d)?;
                SegmentedMetrics {
                    w_r_c,
                    w_r_t,
                    s_r_c,
                    s_r_t,
                    w_p_c,
                    w_p_t,
                    s_p_c,
                    s_p_t,
                }
            }
        })
    }
}

model_builders!(AttributionModel);

impl RegionAnalysisModel for AttributionModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let r = region_ras(self.formula, &self.metrics(ctx)?)?;
        let mut out = SignalVector::new();
        out.insert(Self::RAS, r.ras)?;
        out.insert(Self::NUMERATOR_PART, r.numerator_part())?;
        out.insert(Self::DENOMINATOR_PART, r.denominator_part())?;
        Ok(out)
    }
}
