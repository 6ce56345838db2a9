use hoca_core::attribution::{
    churn_decompose, density_ras, density_ras_degenerate, numeric_path_ras, population_change, region_ras,
    AmbientFunction, DensityAmbient, EntityMetrics, FnAmbient, Formula, GaussLegendre, RegionAmbientModel,
    SegmentedMetrics,
};
use proptest::prelude::*;

/// One disjoint piece of a population: `(w_c, s_c, w_t, s_t)`.
type Part = (f64, f64, f64, f64);

fn part() -> impl Strategy<Value = Part> {
    (0.0..500.0f64, 1.0..200.0f64, 0.0..500.0f64, 1.0..200.0f64)
}

/// Integer-valued denominators so that permuting them preserves the population sum exactly.
fn int_part() -> impl Strategy<Value = Part> {
    (0.0..500.0f64, 1u32..200, 0.0..500.0f64).prop_map(|(wc, s, wt)| (wc, s as f64, wt, s as f64))
}

fn population(parts: &[Part]) -> SegmentedMetrics<f64> {
    let sum = |f: fn(&Part) -> f64| parts.iter().map(f).sum::<f64>();
    SegmentedMetrics {
        w_p_c: sum(|p| p.0),
        s_p_c: sum(|p| p.1),
        w_p_t: sum(|p| p.2),
        s_p_t: sum(|p| p.3),
        ..Default::default()
    }
}

fn with_test_denominator(m: &SegmentedMetrics<f64>, s_p_t: f64) -> SegmentedMetrics<f64> {
    SegmentedMetrics { s_p_t, ..*m }
}

fn region(pop: &SegmentedMetrics<f64>, p: &Part) -> SegmentedMetrics<f64> {
    pop.with_region(p.0, p.2, p.1, p.3)
}

fn sum_ras(formula: Formula, pop: &SegmentedMetrics<f64>, parts: &[Part]) -> f64 {
    parts
        .iter()
        .map(|p| region_ras(formula, &region(pop, p)).unwrap().ras)
        .sum()
}

fn merged(a: &Part, b: &Part) -> Part {
    (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3)
}

/// A smooth model with an analytic gradient.
struct Smooth;

impl AmbientFunction<f64> for Smooth {
    fn arity(&self) -> usize {
        3
    }

    fn value(&self, z: &[f64]) -> f64 {
        z[0] * z[1] + z[2].sin() + z[0].exp() / (1.0 + z[2] * z[2])
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let q = 1.0 + z[2] * z[2];
        out[0] = z[1] + z[0].exp() / q;
        out[1] = z[0];
        out[2] = z[2].cos() - 2.0 * z[2] * z[0].exp() / (q * q);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn density_partition_is_complete(parts in prop::collection::vec(part(), 1..12)) {
        let pop = population(&parts);
        prop_assume!(!hoca_core::attribution::is_degenerate(&pop));
        let total = sum_ras(Formula::Density, &pop, &parts);
        let change = population_change(Formula::Density, &pop);
        prop_assert!((total - change).abs() <= 1e-9, "{total} vs {change}");
    }

    #[test]
    fn degenerate_partition_is_complete(parts in prop::collection::vec(int_part(), 1..12), rot in 0usize..12) {
        // Rotate the test denominators so regions shift while the population total stays put.
        let n = parts.len();
        let shifted: Vec<Part> = (0..n)
            .map(|i| (parts[i].0, parts[i].1, parts[i].2, parts[(i + rot) % n].3))
            .collect();
        let pop = population(&shifted);
        prop_assert_eq!(pop.s_p_c, pop.s_p_t);
        let total = sum_ras(Formula::Density, &pop, &shifted);
        let change = population_change(Formula::Density, &pop);
        prop_assert!((total - change).abs() <= 1e-9, "{total} vs {change}");
    }

    #[test]
    fn summable_partition_is_complete(parts in prop::collection::vec(part(), 1..12)) {
        let pop = population(&parts);
        let total = sum_ras(Formula::Summable, &pop, &parts);
        let change = population_change(Formula::Summable, &pop);
        prop_assert!((total - change).abs() <= 1e-12 * change.abs().max(1.0), "{total} vs {change}");
    }

    #[test]
    fn attribution_is_additive(b in part(), g in part(), rest in part()) {
        let pop = population(&[b, g, rest]);
        let union = region_ras(Formula::Density, &region(&pop, &merged(&b, &g))).unwrap().ras;
        let split = region_ras(Formula::Density, &region(&pop, &b)).unwrap().ras
            + region_ras(Formula::Density, &region(&pop, &g)).unwrap().ras;
        prop_assert!((union - split).abs() <= 1e-9, "{union} vs {split}");
    }

    #[test]
    fn closed_form_matches_quadrature(r in part(), rest in part()) {
        let pop = population(&[r, rest]);
        prop_assume!(!hoca_core::attribution::is_degenerate(&pop));
        let m = region(&pop, &r);
        let closed = density_ras(&m).unwrap();
        let model = RegionAmbientModel::density(&m).unwrap();
        let numeric = numeric_path_ras(&model, &[0, 1], &GaussLegendre::default()).unwrap();
        let rel = (closed.ras - numeric.ras).abs() / closed.ras.abs().max(f64::MIN_POSITIVE);
        prop_assert!(rel <= 1e-9, "closed {} numeric {} rel {rel}", closed.ras, numeric.ras);
        let (num, den) = closed.components.unwrap();
        prop_assert!((num - numeric.per_coordinate[0]).abs() <= 1e-9 * num.abs().max(1e-3));
        prop_assert!((den - numeric.per_coordinate[1]).abs() <= 1e-9 * den.abs().max(1e-3));
    }

    #[test]
    fn density_converges_to_degenerate_form(r in part(), rest in int_part()) {
        let base = population(&[r, rest]);
        let m0 = region(&with_test_denominator(&base, base.s_p_c), &r);
        let limit = density_ras_degenerate(&m0).unwrap().ras;
        let diffs: Vec<f64> = [1e-4, 1e-6, 1e-8]
            .iter()
            .map(|eps| {
                let m = with_test_denominator(&m0, m0.s_p_c * (1.0 + eps));
                (density_ras(&m).unwrap().ras - limit).abs()
            })
            .collect();
        prop_assert!(diffs[1] <= diffs[0] && diffs[2] <= diffs[1], "{diffs:?}");
        prop_assert!(diffs[2] <= 1e-3 * limit.abs().max(1e-12), "{diffs:?} limit {limit}");
    }

    #[test]
    fn full_path_conserves_total_change(
        p0 in prop::collection::vec(-1.5..1.5f64, 3),
        p1 in prop::collection::vec(-1.5..1.5f64, 3),
    ) {
        let model = RegionAmbientModel::new(Smooth, p0, p1).unwrap();
        let path = numeric_path_ras(&model, &[0, 1, 2], &GaussLegendre::default()).unwrap();
        let total = model.total_change();
        prop_assert!((path.ras - total).abs() <= 1e-10 * total.abs().max(1.0), "{} vs {total}", path.ras);

        let density = RegionAmbientModel::<f64, _>::new(DensityAmbient, vec![3.0, 5.0, 7.0, 11.0], vec![4.0, 2.0, 9.0, 13.0]).unwrap();
        let path = numeric_path_ras(&density, &[0, 1, 2, 3], &GaussLegendre::default()).unwrap();
        prop_assert!((path.ras - density.total_change()).abs() <= 1e-10 * density.total_change().abs());
    }

    #[test]
    fn finite_difference_gradient_tracks_analytic(
        p0 in prop::collection::vec(-1.0..1.0f64, 3),
        p1 in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let f = |z: &[f64]| Smooth.value(z);
        let exact = numeric_path_ras(&RegionAmbientModel::new(Smooth, p0.clone(), p1.clone()).unwrap(), &[0], &GaussLegendre::default()).unwrap();
        let approx = numeric_path_ras(&RegionAmbientModel::new(FnAmbient::new(3, f), p0, p1).unwrap(), &[0], &GaussLegendre::default()).unwrap();
        prop_assert!((exact.ras - approx.ras).abs() <= 1e-6);
    }

    #[test]
    fn churn_split_adds_up(
        entities in prop::collection::vec((prop::option::of((0.0..50.0f64, 1.0..20.0f64)), prop::option::of((0.0..50.0f64, 1.0..20.0f64))), 1..10),
        rest in part(),
        summable in any::<bool>(),
    ) {
        let entities: Vec<EntityMetrics<f64>> = entities
            .into_iter()
            .enumerate()
            .filter(|(_, (c, t))| c.is_some() || t.is_some())
            .map(|(i, (control, test))| EntityMetrics { entity: format!("e{i}"), control, test })
            .collect();
        prop_assume!(!entities.is_empty());
        let mut r = (0.0, 0.0, 0.0, 0.0);
        for e in &entities {
            if let Some((w, s)) = e.control { r.0 += w; r.1 += s; }
            if let Some((w, s)) = e.test { r.2 += w; r.3 += s; }
        }
        let pop = population(&[r, rest]);
        let formula = if summable { Formula::Summable } else { Formula::Density };
        let m = region(&pop, &r);
        let whole = region_ras(formula, &m).unwrap().ras;
        let split = churn_decompose(formula, &m, &entities).unwrap();
        prop_assert!((split.total() - whole).abs() <= 1e-9, "{} vs {whole}", split.total());
    }
}

#[test]
fn f32_agrees_with_f64_on_a_small_partition() {
    let parts: [Part; 3] = [(30.0, 10.0, 45.0, 12.0), (20.0, 5.0, 10.0, 9.0), (50.0, 25.0, 60.0, 23.0)];
    let pop = population(&parts);
    for p in &parts {
        let m = region(&pop, p);
        let m32 = SegmentedMetrics::<f32> {
            w_r_c: m.w_r_c as f32,
            w_r_t: m.w_r_t as f32,
            s_r_c: m.s_r_c as f32,
            s_r_t: m.s_r_t as f32,
            w_p_c: m.w_p_c as f32,
            w_p_t: m.w_p_t as f32,
            s_p_c: m.s_p_c as f32,
            s_p_t: m.s_p_t as f32,
        };
        let a = region_ras(Formula::Density, &m).unwrap().ras;
        let b = region_ras(Formula::Density, &m32).unwrap().ras as f64;
        assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0), "{a} vs {b}");
    }
}
