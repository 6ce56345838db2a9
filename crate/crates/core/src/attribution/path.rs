use super::quadrature::GaussLegendre;
use super::{AttributionResult, SegmentedMetrics};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A region-ambient metric model: recovers the population metric from region and
/// complement metrics.
pub trait AmbientFunction<T: Scalar>: Send + Sync {
    fn arity(&self) -> usize;

    fn value(&self, z: &[T]) -> T;

    /// Writes `∂F/∂z_i` into `out`. Defaults to central finite differences.
    fn gradient(&self, z: &[T], out: &mut [T]) {
        central_differences(|p| self.value(p), z, out);
    }
}

/// Central differences with step `1e-6 · max(1, |z_i|)`.
pub fn central_differences<T: Scalar>(f: impl Fn(&[T]) -> T, z: &[T], out: &mut [T]) {
    let mut probe = z.to_vec();
    for i in 0..z.len() {
        let h = T::lit(1e-6) * T::one().max(z[i].abs());
        probe[i] = z[i] + h;
        let hi = f(&probe);
        probe[i] = z[i] - h;
        let lo = f(&probe);
        probe[i] = z[i];
        out[i] = (hi - lo) / (h + h);
    }
}

/// `F(w, w') = w + w'`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SummableAmbient;

impl<T: Scalar> AmbientFunction<T> for SummableAmbient {
    fn arity(&self) -> usize {
        2
    }

    fn value(&self, z: &[T]) -> T {
        z[0] + z[1]
    }

    fn gradient(&self, _z: &[T], out: &mut [T]) {
        out[0] = T::one();
        out[1] = T::one();
    }
}

/// `F(w, s, w', s') = (w + w') / (s + s')`.
#[derive(Debug, Clone, Copy, Default)]
pub struct DensityAmbient;

impl<T: Scalar> AmbientFunction<T> for DensityAmbient {
    fn arity(&self) -> usize {
        4
    }

    fn value(&self, z: &[T]) -> T {
        (z[0] + z[2]) / (z[1] + z[3])
    }

    fn gradient(&self, z: &[T], out: &mut [T]) {
        let s = z[1] + z[3];
        let d_w = T::one() / s;
        let d_s = -(z[0] + z[2]) / (s * s);
        out[0] = d_w;
        out[1] = d_s;
        out[2] = d_w;
        out[3] = d_s;
    }
}

/// A user-supplied model; its gradient comes from finite differences.
pub struct FnAmbient<F> {
    arity: usize,
    f: F,
}

impl<F> FnAmbient<F> {
    pub fn new(arity: usize, f: F) -> Self {
        FnAmbient { arity, f }
    }
}

impl<T: Scalar, F: Fn(&[T]) -> T + Send + Sync> AmbientFunction<T> for FnAmbient<F> {
    fn arity(&self) -> usize {
        self.arity
    }

    fn value(&self, z: &[T]) -> T {
        (self.f)(z)
    }
}

/// A model together with its control point `P0` and test point `P1`.
pub struct RegionAmbientModel<T, F> {
    function: F,
    control: Vec<T>,
    test: Vec<T>,
}

impl<T: Scalar, F: AmbientFunction<T>> RegionAmbientModel<T, F> {
    pub fn new(function: F, control: Vec<T>, test: Vec<T>) -> Result<Self> {
        if control.len() != function.arity() || test.len() != function.arity() {
            return Err(Error::Domain(format!(
                "model arity {} but points have {} and {} coordinates",
                function.arity(),
                control.len(),
                test.len()
            )));
        }
        for p in [&control, &test] {
            if !function.value(p).is_finite() {
                return Err(Error::Numeric("model value is not finite at an end point".into()));
            }
        }
        Ok(RegionAmbientModel {
            function,
            control,
            test,
        })
    }

    pub fn control(&self) -> &[T] {
        &self.control
    }

    pub fn test(&self) -> &[T] {
        &self.test
    }

    pub fn function(&self) -> &F {
        &self.function
    }

    /// `F(P1) - F(P0)`.
    pub fn total_change(&self) -> T {
        self.function.value(&self.test) - self.function.value(&self.control)
    }
}

impl<T: Scalar> RegionAmbientModel<T, SummableAmbient> {
    /// `P = (w_r, w_p - w_r)` per segment.
    pub fn summable(m: &SegmentedMetrics<T>) -> Result<Self> {
        RegionAmbientModel::new(
            SummableAmbient,
            vec![m.w_r_c, m.w_p_c - m.w_r_c],
            vec![m.w_r_t, m.w_p_t - m.w_r_t],
        )
    }
}

impl<T: Scalar> RegionAmbientModel<T, DensityAmbient> {
    /// `P = (w_r, s_r, w_p - w_r, s_p - s_r)` per segment.
    pub fn density(m: &SegmentedMetrics<T>) -> Result<Self> {
        RegionAmbientModel::new(
            DensityAmbient,
            vec![m.w_r_c, m.s_r_c, m.w_p_c - m.w_r_c, m.s_p_c - m.s_r_c],
            vec![m.w_r_t, m.s_r_t, m.w_p_t - m.w_r_t, m.s_p_t - m.s_r_t],
        )
    }
}

/// Per-coordinate path integrals and their sum over the requested coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct PathAttribution<T> {
    /// `∫₀¹ ∂F/∂z_i(h(t)) · (P1_i - P0_i) dt` for every coordinate.
    pub per_coordinate: Vec<T>,
    pub coordinates: Vec<usize>,
    pub ras: T,
}

impl<T: Scalar> PathAttribution<T> {
    /// Attribution result; with two requested coordinates their parts become the components.
    pub fn to_result(&self) -> AttributionResult<T> {
        let components = match self.coordinates.as_slice() {
            [a, b] => Some((self.per_coordinate[*a], self.per_coordinate[*b])),
            _ => None,
        };
        AttributionResult {
            ras: self.ras,
            components,
        }
    }

    /// Sum over all coordinates; reproduces `F(P1) - F(P0)` up to quadrature error.
    pub fn total(&self) -> T {
        self.per_coordinate
            .iter()
            .fold(T::zero(), |acc, &v| acc + v)
    }
}

/// Aumann-Shapley attribution by quadrature along `h(t) = (1 - t) P0 + t P1`.
pub fn numeric_path_ras<T: Scalar, F: AmbientFunction<T>>(
    model: &RegionAmbientModel<T, F>,
    coords: &[usize],
    quadrature: &GaussLegendre<T>,
) -> Result<PathAttribution<T>> {
    let n = model.function.arity();
    if let Some(&bad) = coords.iter().find(|&&c| c >= n) {
        return Err(Error::Domain(format!("coordinate {bad} out of range for arity {n}")));
    }
    let delta: Vec<T> = model
        .test
        .iter()
        .zip(&model.control)
        .map(|(&b, &a)| b - a)
        .collect();
    let mut point = vec![T::zero(); n];
    let mut grad = vec![T::zero(); n];
    let mut per_coordinate = vec![T::zero(); n];
    for (&t, &w) in quadrature.nodes().iter().zip(quadrature.weights()) {
        for i in 0..n {
            point[i] = model.control[i] + t * delta[i];
        }
        if !model.function.value(&point).is_finite() {
            return Err(Error::Numeric(format!("model is not finite on the path at t={t}")));
        }
        model.function.gradient(&point, &mut grad);
        for i in 0..n {
            if !grad[i].is_finite() {
                return Err(Error::Numeric(format!(
                    "partial derivative {i} is not finite on the path at t={t}"
                )));
            }
            per_coordinate[i] = per_coordinate[i] + w * grad[i] * delta[i];
        }
    }
    let ras = coords
        .iter()
        .fold(T::zero(), |acc, &c| acc + per_coordinate[c]);
    Ok(PathAttribution {
        per_coordinate,
        coordinates: coords.to_vec(),
        ras,
    })
}
