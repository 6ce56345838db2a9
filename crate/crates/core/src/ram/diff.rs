use super::{
    model_builders, segment_totals, EvaluationContext, ModelSpec, RegionAnalysisModel, SignalDecl,
    SignalVector,
};
use crate::cube::FeatureRequest;
use crate::error::{Error, Result};

/// Two-table differencing over a flag dimension separating the test table
/// (`true`) from the control table (`false`).
///
/// - `support_ratio` = region test weight / population test weight
/// - `risk_ratio` = region test share / region control share, where each share is
///   the region's weight over the population weight of the same segment.
#[derive(Debug, Clone)]
pub struct DiffModel {
    spec: ModelSpec,
    flag: String,
    measure: String,
    smoothing: Option<f64>,
}

impl DiffModel {
    pub const SUPPORT_RATIO: &'static str = "support_ratio";
    pub const RISK_RATIO: &'static str = "risk_ratio";

    /// `measure` weights rows; use a constant-one measure for row counts.
    pub fn new(flag: impl Into<String>, measure: impl Into<String>) -> Self {
        let (flag, measure) = (flag.into(), measure.into());
        let request = FeatureRequest::new([flag.clone()], [measure.clone()]);
        DiffModel {
            spec: ModelSpec::new(
                "diff",
                request.clone(),
                vec![
                    SignalDecl::new(Self::SUPPORT_RATIO, true),
                    SignalDecl::new(Self::RISK_RATIO, false),
                ],
            )
            .with_population(request),
            flag,
            measure,
            smoothing: None,
        }
    }

    /// Computes `risk_ratio` as `(test + eps) / (control + eps)` so an empty control
    /// share is not an error.
    pub fn with_smoothing(mut self, eps: f64) -> Self {
        self.smoothing = Some(eps);
        self
    }
}

model_builders!(DiffModel);

impl RegionAnalysisModel for DiffModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let population = ctx
            .population_frame
            .ok_or_else(|| Error::Contract("diff model needs the population frame".into()))?;
        let (rc, rt) = segment_totals(ctx.region_frame, &self.flag, &self.measure)?;
        let (pc, pt) = segment_totals(population, &self.flag, &self.measure)?;
        if pt <= 0.0 || pc <= 0.0 {
            return Err(Error::model(
                &self.spec.name,
                format!("population segments must have positive weight (control {pc}, test {pt})"),
            ));
        }
        let (test_share, control_share) = (rt / pt, rc / pc);
        let risk = match self.smoothing {
            Some(eps) => (test_share + eps) / (control_share + eps),
            None if control_share == 0.0 => {
                return Err(Error::model(
                    &self.spec.name,
                    format!("zero control share at {}", ctx.region),
                ))
            }
            None => test_share / control_share,
        };
        let mut out = SignalVector::new();
        out.insert(Self::SUPPORT_RATIO, test_share)?;
        out.insert(Self::RISK_RATIO, risk)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{Cube, Region, Value};
    use crate::ram::{evaluate, fixtures};

    fn run(model: &DiffModel, region: &Region) -> Result<SignalVector> {
        let cube = fixtures::t1();
        let frame = cube.view(region, &model.spec().request)?;
        let population = cube.view(&Region::empty(), &model.spec().request)?;
        evaluate(
            model,
            &EvaluationContext {
                region,
                region_frame: &frame,
                population_frame: Some(&population),
            },
        )
    }

    #[test]
    fn shares() {
        let m = DiffModel::new("is_test", "Revenue");
        let all = run(&m, &Region::empty()).unwrap();
        assert_eq!(all.get("risk_ratio"), Some(1.0));
        assert_eq!(all.get("support_ratio"), Some(1.0));

        let iphone = run(&m, &Region::from_pairs([("Device", Value::str("iPhone"))])).unwrap();
        let oracle = (25.0 / 65.0) / (30.0 / 60.0);
        assert!((iphone.get("risk_ratio").unwrap() - oracle).abs() < 1e-12);
        assert!((iphone.get("risk_ratio").unwrap() - 0.7692).abs() < 1e-4);

        let control_only = run(&m, &Region::from_pairs([("is_test", Value::Bool(false))])).unwrap();
        assert_eq!(control_only.get("support_ratio"), Some(0.0));
    }

    #[test]
    fn zero_control_share() {
        let test_only = Region::from_pairs([("is_test", Value::Bool(true))]);
        let m = DiffModel::new("is_test", "Revenue");
        assert!(matches!(run(&m, &test_only), Err(Error::Model { .. })));
        let smoothed = run(&m.with_smoothing(0.5), &test_only).unwrap();
        assert!((smoothed.get("risk_ratio").unwrap() - 1.5 / 0.5).abs() < 1e-12);
    }
}
