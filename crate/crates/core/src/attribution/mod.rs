//! Region attribution of a test-versus-control metric change (Aumann-Shapley).
//!
//! Each region is scored by integrating the gradient of a region-ambient metric
//! model along the straight path from the control point to the test point and
//! keeping the coordinates that belong to the region. Scores are additive over
//! disjoint regions and sum to the population change over any partition.
//!
//! Closed forms cover summable metrics (`w + w'`) and density metrics
//! (`(w + w') / (s + s')`); [`numeric_path_ras`] handles arbitrary models by
//! Gauss-Legendre quadrature.

mod churn;
mod path;
mod quadrature;

use serde::{Deserialize, Serialize};

pub use churn::{churn_decompose, ChurnAttribution, EntityMetrics};
pub use path::{
    central_differences, numeric_path_ras, AmbientFunction, DensityAmbient, FnAmbient,
    PathAttribution, RegionAmbientModel, SummableAmbient,
};
pub use quadrature::{GaussLegendre, DEFAULT_ORDER};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Region and population metrics of both segments.
///
/// `w` is the summable metric (or density numerator), `s` the density denominator.
/// `_r_` fields are the region, `_p_` the population; `_c`/`_t` control and test.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentedMetrics<T> {
    pub w_r_c: T,
    pub w_r_t: T,
    pub s_r_c: T,
    pub s_r_t: T,
    pub w_p_c: T,
    pub w_p_t: T,
    pub s_p_c: T,
    pub s_p_t: T,
}

impl<T: Scalar> SegmentedMetrics<T> {
    /// Metrics for a summable metric; denominators are zero.
    pub fn summable(w_r_c: T, w_r_t: T, w_p_c: T, w_p_t: T) -> Self {
        SegmentedMetrics {
            w_r_c,
            w_r_t,
            w_p_c,
            w_p_t,
            s_r_c: T::zero(),
            s_r_t: T::zero(),
            s_p_c: T::zero(),
            s_p_t: T::zero(),
        }
    }

    /// The metrics of the region's complement within the population.
    pub fn complement(&self) -> Self {
        SegmentedMetrics {
            w_r_c: self.w_p_c - self.w_r_c,
            w_r_t: self.w_p_t - self.w_r_t,
            s_r_c: self.s_p_c - self.s_r_c,
            s_r_t: self.s_p_t - self.s_r_t,
            ..*self
        }
    }

    /// The same population with the whole population as the region.
    pub fn population(&self) -> Self {
        SegmentedMetrics {
            w_r_c: self.w_p_c,
            w_r_t: self.w_p_t,
            s_r_c: self.s_p_c,
            s_r_t: self.s_p_t,
            ..*self
        }
    }

    /// Region metrics replaced, population kept.
    pub fn with_region(&self, w_r_c: T, w_r_t: T, s_r_c: T, s_r_t: T) -> Self {
        SegmentedMetrics {
            w_r_c,
            w_r_t,
            s_r_c,
            s_r_t,
            ..*self
        }
    }

    fn all_finite(&self) -> bool {
        [
            self.w_r_c, self.w_r_t, self.s_r_c, self.s_r_t, self.w_p_c, self.w_p_t, self.s_p_c,
            self.s_p_t,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// A region attribution score, with its numerator/denominator split for density metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributionResult<T> {
    pub ras: T,
    pub components: Option<(T, T)>,
}

impl<T: Scalar> AttributionResult<T> {
    pub fn numerator_part(&self) -> T {
        self.components.map_or(self.ras, |c| c.0)
    }

    pub fn denominator_part(&self) -> T {
        self.components.map_or(T::zero(), |c| c.1)
    }
}

/// Which closed form scores a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Formula {
    Summable,
    Density,
}

/// Summable metric: the region's own shift, `w_t - w_c`.
pub fn summable_ras<T: Scalar>(m: &SegmentedMetrics<T>) -> AttributionResult<T> {
    AttributionResult {
        ras: m.w_r_t - m.w_r_c,
        components: None,
    }
}

/// True when the population denominators are equal up to a relative `1e-12`.
pub fn is_degenerate<T: Scalar>(m: &SegmentedMetrics<T>) -> bool {
    let scale = m.s_p_t.abs().max(m.s_p_c.abs());
    (m.s_p_t - m.s_p_c).abs() <= T::lit(1e-12) * scale
}

fn check_density_domain<T: Scalar>(m: &SegmentedMetrics<T>) -> Result<()> {
    if !m.all_finite() {
        return Err(Error::Domain("non-finite segmented metric".into()));
    }
    if m.s_p_c <= T::zero() || m.s_p_t <= T::zero() {
        return Err(Error::Domain(format!(
            "population denominators must be positive (control {}, test {})",
            m.s_p_c, m.s_p_t
        )));
    }
    Ok(())
}

/// Density metric attribution for non-degenerate populations (`s_p_t != s_p_c`).
///
/// numerator part: `Δw_r · (ln s_p_t - ln s_p_c) / (s_p_t - s_p_c)`;
/// denominator part: `Δs_r · { C_ρ / Δs_p - Δw_p (ln s_p_t - ln s_p_c) / Δs_p² }`.
///
/// Evaluated through `x = Δs_p / s_p_c` with a series for small `|x|`, which removes
/// the cancellation as the populations approach each other.
pub fn density_ras<T: Scalar>(m: &SegmentedMetrics<T>) -> Result<AttributionResult<T>> {
    check_density_domain(m)?;
    if is_degenerate(m) {
        return Err(Error::Degenerate(m.s_p_c.to_f64().unwrap_or(f64::NAN)));
    }
    let s_c = m.s_p_c;
    let x = (m.s_p_t - m.s_p_c) / s_c;
    let dw_p = m.w_p_t - m.w_p_c;
    let one = T::one();
    // (ln s_t - ln s_c) / (s_t - s_c)
    let log_slope = x.ln_1p() / (x * s_c);
    let den_coef = (dw_p * psi(x) - m.w_p_c) / (s_c * s_c * (one + x));
    let numerator_part = (m.w_r_t - m.w_r_c) * log_slope;
    let denominator_part = (m.s_r_t - m.s_r_c) * den_coef;
    finish(numerator_part, denominator_part)
}

/// Density metric attribution when `s_p_t == s_p_c == s`:
/// `Δw_r / s - Δs_r (w_p_t + w_p_c) / (2 s²)`.
pub fn density_ras_degenerate<T: Scalar>(m: &SegmentedMetrics<T>) -> Result<AttributionResult<T>> {
    check_density_domain(m)?;
    if !is_degenerate(m) {
        return Err(Error::Domain(format!(
            "populations differ (control {}, test {}); use density_ras",
            m.s_p_c, m.s_p_t
        )));
    }
    let s = m.s_p_c;
    let two = T::lit(2.0);
    let numerator_part = (m.w_r_t - m.w_r_c) / s;
    let denominator_part = -(m.s_r_t - m.s_r_c) * (m.w_p_t + m.w_p_c) / (two * s * s);
    finish(numerator_part, denominator_part)
}

fn finish<T: Scalar>(numerator_part: T, denominator_part: T) -> Result<AttributionResult<T>> {
    let ras = numerator_part + denominator_part;
    if !ras.is_finite() {
        return Err(Error::Numeric("attribution is not finite".into()));
    }
    Ok(AttributionResult {
        ras,
        components: Some((numerator_part, denominator_part)),
    })
}

/// `(x - (1 + x) ln(1 + x)) / x²`, which tends to `-1/2` at `x = 0`.
fn psi<T: Scalar>(x: T) -> T {
    if x.abs() < T::lit(0.05) {
        // -Σ_{k≥2} (-x)^(k-2) / (k (k-1))
        let mut sum = T::zero();
        let mut pow = T::one();
        for k in 2..=20u32 {
            let kf = T::lit(k as f64);
            sum = sum + pow / (kf * (kf - T::one()));
            pow = pow * -x;
        }
        -sum
    } else {
        (x - (T::one() + x) * x.ln_1p()) / (x * x)
    }
}

/// Scores a region with `formula`, routing degenerate density populations to the degenerate form.
pub fn region_ras<T: Scalar>(formula: Formula, m: &SegmentedMetrics<T>) -> Result<AttributionResult<T>> {
    match formula {
        Formula::Summable => {
            if !m.all_finite() {
                return Err(Error::Domain("non-finite segmented metric".into()));
            }
            Ok(summable_ras(m))
        }
        Formula::Density if is_degenerate(m) => density_ras_degenerate(m),
        Formula::Density => density_ras(m),
    }
}

/// The population-level change: `Δ^p` (summable) or `C_ρ` (density).
pub fn population_change<T: Scalar>(formula: Formula, m: &SegmentedMetrics<T>) -> T {
    match formula {
        Formula::Summable => m.w_p_t - m.w_p_c,
        Formula::Density => m.w_p_t / m.s_p_t - m.w_p_c / m.s_p_c,
    }
}
