use super::{region_ras, AttributionResult, Formula, SegmentedMetrics};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One entity's `(w, s)` in each segment; `None` when the entity is absent there.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityMetrics<T> {
    pub entity: String,
    pub control: Option<(T, T)>,
    pub test: Option<(T, T)>,
}

/// Attribution split by entity churn: control-only, test-and-control, test-only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChurnAttribution<T> {
    pub control_only: AttributionResult<T>,
    pub test_control: AttributionResult<T>,
    pub test_only: AttributionResult<T>,
}

impl<T: Scalar> ChurnAttribution<T> {
    pub fn total(&self) -> T {
        self.control_only.ras + self.test_control.ras + self.test_only.ras
    }
}

#[derive(Default, Clone, Copy)]
struct Sums<T> {
    w_c: T,
    s_c: T,
    w_t: T,
    s_t: T,
}

/// Splits a region into its CO, TC and TO sub-regions by entity and scores each with
/// `formula` against the shared population.
///
/// The entity metrics must add up to the region metrics within `1e-9` (relative to
/// magnitudes above one).
pub fn churn_decompose<T: Scalar>(
    formula: Formula,
    region: &SegmentedMetrics<T>,
    entities: &[EntityMetrics<T>],
) -> Result<ChurnAttribution<T>> {
    let zero = Sums {
        w_c: T::zero(),
        s_c: T::zero(),
        w_t: T::zero(),
        s_t: T::zero(),
    };
    let (mut co, mut tc, mut to) = (zero, zero, zero);
    for e in entities {
        let bucket = match (e.control.is_some(), e.test.is_some()) {
            (true, false) => &mut co,
            (true, true) => &mut tc,
            (false, true) => &mut to,
            (false, false) => {
                return Err(Error::Consistency(format!(
                    "entity `{}` appears in neither segment",
                    e.entity
                )))
            }
        };
        if let Some((w, s)) = e.control {
            bucket.w_c = bucket.w_c + w;
            bucket.s_c = bucket.s_c + s;
        }
        if let Some((w, s)) = e.test {
            bucket.w_t = bucket.w_t + w;
            bucket.s_t = bucket.s_t + s;
        }
    }
    let tol = T::lit(1e-9);
    for (name, parts, whole) in [
        ("w_r_c", co.w_c + tc.w_c, region.w_r_c),
        ("s_r_c", co.s_c + tc.s_c, region.s_r_c),
        ("w_r_t", tc.w_t + to.w_t, region.w_r_t),
        ("s_r_t", tc.s_t + to.s_t, region.s_r_t),
    ] {
        if (parts - whole).abs() > tol * T::one().max(whole.abs()) {
            return Err(Error::Consistency(format!(
                "entity sum of {name} is {parts}, region total is {whole}"
            )));
        }
    }
    let score = |b: Sums<T>| region_ras(formula, &region.with_region(b.w_c, b.w_t, b.s_c, b.s_t));
    Ok(ChurnAttribution {
        control_only: score(co)?,
        test_control: score(tc)?,
        test_only: score(to)?,
    })
}
