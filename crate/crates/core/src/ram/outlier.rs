use std::collections::HashMap;

use super::{model_builders, EvaluationContext, ModelSpec, RegionAnalysisModel, SignalDecl, SignalVector};
use crate::cube::{FeatureRequest, Value};
use crate::error::{Error, Result};

/// Z-score of a region's latest value against a trailing window, weighted by the
/// region's share of the population metric.
///
/// The region series is aligned to the population's dates, with missing dates read as 0.
/// The window standard deviation is the sample (n - 1) estimate; a zero deviation
/// gives a z-score of 0.
#[derive(Debug, Clone)]
pub struct WindowOutlierModel {
    spec: ModelSpec,
    date: String,
    metric: String,
    window: usize,
}

impl WindowOutlierModel {
    pub const Z_SCORE: &'static str = "z_score";
    pub const REGION_SHARE: &'static str = "region_share";
    pub const HYBRID_SCORE: &'static str = "hybrid_score";

    pub fn new(date: impl Into<String>, metric: impl Into<String>, window: usize) -> Result<Self> {
        if window < 2 {
            return Err(Error::Spec(format!("outlier window must be at least 2, got {window}")));
        }
        let (date, metric) = (date.into(), metric.into());
        let request = FeatureRequest::new([date.clone()], [metric.clone()]);
        let signals = [Self::Z_SCORE, Self::REGION_SHARE, Self::HYBRID_SCORE]
            .into_iter()
            .map(|s| SignalDecl::new(s, false))
            .collect();
        Ok(WindowOutlierModel {
            spec: ModelSpec::new("window_outlier", request.clone(), signals).with_population(request),
            date,
            metric,
            window,
        })
    }
}

model_builders!(WindowOutlierModel);

/// `(last - mean(prior)) / sd(prior)`, or 0 when `prior` is constant.
pub(crate) fn window_z(prior: &[f64], last: f64) -> f64 {
    let n = prior.len() as f64;
    let mean = prior.iter().sum::<f64>() / n;
    let var = prior.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if sd == 0.0 {
        0.0
    } else {
        (last - mean) / sd
    }
}

impl RegionAnalysisModel for WindowOutlierModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let population = ctx
            .population_frame
            .ok_or_else(|| Error::Contract("outlier model needs the population frame".into()))?;
        let dates = population
            .attribute(&self.date)
            .ok_or_else(|| Error::Contract(format!("population frame lacks `{}`", self.date)))?;
        let pop_values = population.measure_values(&self.metric)?;
        if dates.len() < self.window + 1 {
            return Err(Error::model(
                &self.spec.name,
                format!("{} dates, window {} needs at least {}", dates.len(), self.window, self.window + 1),
            ));
        }

        let region_dates = ctx
            .region_frame
            .attribute(&self.date)
            .ok_or_else(|| Error::Contract(format!("region frame lacks `{}`", self.date)))?;
        let by_date: HashMap<&Value, f64> = region_dates
            .iter()
            .zip(ctx.region_frame.measure_values(&self.metric)?)
            .map(|(d, v)| (d, *v))
            .collect();
        let series: Vec<f64> = dates.iter().map(|d| by_date.get(d).copied().unwrap_or(0.0)).collect();

        let n = series.len();
        let z = window_z(&series[n - 1 - self.window..n - 1], series[n - 1]);
        let pop_total: f64 = pop_values.iter().sum();
        if pop_total == 0.0 {
            return Err(Error::model(&self.spec.name, "population metric total is 0"));
        }
        let share = series.iter().sum::<f64>() / pop_total;
        let mut out = SignalVector::new();
        out.insert(Self::Z_SCORE, z)?;
        out.insert(Self::REGION_SHARE, share)?;
        out.insert(Self::HYBRID_SCORE, z.abs() * share)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{FeatureFrame, Region};
    use crate::ram::evaluate;

    fn frame(values: &[f64]) -> FeatureFrame {
        FeatureFrame::from_rows(
            vec!["date".into()],
            vec!["m".into()],
            values
                .iter()
                .enumerate()
                .map(|(i, v)| (vec![Value::Int(i as i64)], vec![Some(*v)]))
                .collect(),
        )
        .unwrap()
    }

    fn run(region: &[f64], population: &[f64], window: usize) -> Result<SignalVector> {
        let m = WindowOutlierModel::new("date", "m", window)?;
        let (r, p) = (frame(region), frame(population));
        evaluate(
            &m,
            &EvaluationContext {
                region: &Region::empty(),
                region_frame: &r,
                population_frame: Some(&p),
            },
        )
    }

    /// Two-pass textbook mean and sample deviation.
    fn oracle_z(prior: &[f64], last: f64) -> f64 {
        let mut sum = 0.0;
        for v in prior {
            sum += v;
        }
        let mean = sum / prior.len() as f64;
        let mut ss = 0.0;
        for v in prior {
            ss += (v - mean) * (v - mean);
        }
        (last - mean) / (ss / (prior.len() - 1) as f64).sqrt()
    }

    #[test]
    fn constant_series() {
        let s = run(&[5.0; 5], &[10.0; 5], 4).unwrap();
        assert_eq!(s.get("z_score"), Some(0.0));
        assert_eq!(s.get("hybrid_score"), Some(0.0));
        assert_eq!(s.get("region_share"), Some(0.5));
    }

    #[test]
    fn zero_variance_window_with_jump_scores_zero() {
        let s = run(&[10.0, 10.0, 10.0, 10.0, 20.0], &[10.0, 10.0, 10.0, 10.0, 20.0], 4).unwrap();
        assert_eq!(s.get("z_score"), Some(0.0));
        assert_eq!(s.get("region_share"), Some(1.0));
    }

    #[test]
    fn jump_against_noisy_window() {
        let series = [9.0, 11.0, 10.0, 10.0, 20.0];
        let s = run(&series, &series, 4).unwrap();
        let z = s.get("z_score").unwrap();
        assert!((z - oracle_z(&series[..4], 20.0)).abs() < 1e-12);
        assert!(z > 10.0);
        assert_eq!(s.get("hybrid_score"), Some(z));
    }

    #[test]
    fn missing_region_dates_read_as_zero() {
        let m = WindowOutlierModel::new("date", "m", 2).unwrap();
        let p = frame(&[4.0, 4.0, 4.0, 4.0]);
        let r = FeatureFrame::from_rows(
            vec!["date".into()],
            vec!["m".into()],
            vec![(vec![Value::Int(0)], vec![Some(2.0)]), (vec![Value::Int(3)], vec![Some(2.0)])],
        )
        .unwrap();
        let s = evaluate(
            &m,
            &EvaluationContext {
                region: &Region::empty(),
                region_frame: &r,
                population_frame: Some(&p),
            },
        )
        .unwrap();
        // Prior window is [0, 0]: constant.
        assert_eq!(s.get("z_score"), Some(0.0));
        assert_eq!(s.get("region_share"), Some(0.25));
    }

    #[test]
    fn too_few_dates() {
        assert!(matches!(run(&[1.0; 4], &[1.0; 4], 4), Err(Error::Model { .. })));
        assert!(matches!(WindowOutlierModel::new("date", "m", 1), Err(Error::Spec(_))));
    }
}
