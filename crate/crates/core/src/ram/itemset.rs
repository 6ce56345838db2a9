use super::{model_builders, EvaluationContext, ModelSpec, RegionAnalysisModel, SignalDecl, SignalVector};
use crate::cube::{Aggregator, DimensionSchema, FeatureRequest};
use crate::error::{Error, Result};

/// Frequent itemset support over a transaction table with one boolean
/// indicator dimension per item and a `COUNT_DISTINCT(tid)` measure.
///
/// A region binding items to `true` is an itemset; its support is the number of
/// distinct transactions containing all of them.
#[derive(Debug, Clone)]
pub struct FrequentItemsetModel {
    spec: ModelSpec,
    tid_measure: String,
    min_support: f64,
}

impl FrequentItemsetModel {
    pub const SIGNAL: &'static str = "support";

    pub fn new(tid_measure: impl Into<String>, min_support: f64) -> Self {
        let tid_measure = tid_measure.into();
        FrequentItemsetModel {
            spec: ModelSpec::new(
                "frequent_itemset",
                FeatureRequest::metrics([tid_measure.clone()]),
                vec![SignalDecl::new(Self::SIGNAL, true)],
            ),
            tid_measure,
            min_support,
        }
    }

    /// The minimum support a crawl should threshold `support` at.
    pub fn min_support(&self) -> f64 {
        self.min_support
    }
}

model_builders!(FrequentItemsetModel);

impl RegionAnalysisModel for FrequentItemsetModel {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn check_schema(&self, schema: &DimensionSchema) -> Result<()> {
        self.spec.validate(schema)?;
        match &schema.measure(&self.tid_measure)?.aggregator {
            Aggregator::CountDistinct(_) => Ok(()),
            _ => Err(Error::Schema(format!(
                "transaction measure `{}` must be COUNT_DISTINCT",
                self.tid_measure
            ))),
        }
    }

    fn evaluate(&self, ctx: &EvaluationContext<'_>) -> Result<SignalVector> {
        let mut out = SignalVector::new();
        out.insert(Self::SIGNAL, ctx.region_frame.total(&self.tid_measure)?)?;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{BaseTable, BaseTableCube, Cube, Dimension, Measure, Region, Value, ValueKind};
    use crate::ram::evaluate;

    fn t2() -> BaseTableCube {
        let schema = DimensionSchema::new(
            vec![
                Dimension::new("A", ValueKind::Boolean),
                Dimension::new("B", ValueKind::Boolean),
                Dimension::new("C", ValueKind::Boolean),
                Dimension::new("tid", ValueKind::Integer),
            ],
            vec![Measure::count_distinct("tx", ["tid"])],
        )
        .unwrap();
        let mut b = BaseTable::builder(schema).unwrap();
        for (tid, a, bb, c) in [(1, true, true, true), (2, true, true, false), (3, true, false, true), (4, false, true, false)] {
            b.push([Value::Bool(a), Value::Bool(bb), Value::Bool(c), Value::Int(tid)], &[])
                .unwrap();
        }
        BaseTableCube::new(b.build())
    }

    fn support(region: Region) -> f64 {
        let cube = t2();
        let m = FrequentItemsetModel::new("tx", 2.0);
        m.check_schema(cube.schema()).unwrap();
        let frame = cube.view(&region, &m.spec().request).unwrap();
        evaluate(
            &m,
            &EvaluationContext {
                region: &region,
                region_frame: &frame,
                population_frame: None,
            },
        )
        .unwrap()
        .get("support")
        .unwrap()
    }

    #[test]
    fn supports() {
        let t = Value::Bool(true);
        assert_eq!(support(Region::empty()), 4.0);
        assert_eq!(support(Region::from_pairs([("A", t.clone())])), 3.0);
        assert_eq!(support(Region::from_pairs([("A", t.clone()), ("C", t.clone())])), 2.0);
        assert_eq!(
            support(Region::from_pairs([("A", t.clone()), ("B", t.clone()), ("C", t)])),
            1.0
        );
    }

    #[test]
    fn non_distinct_measure_is_schema_error() {
        let schema = DimensionSchema::new(
            vec![Dimension::new("A", ValueKind::Boolean)],
            vec![Measure::sum("tx")],
        )
        .unwrap();
        let m = FrequentItemsetModel::new("tx", 2.0);
        assert!(matches!(m.check_schema(&schema), Err(Error::Schema(_))));
        let m = FrequentItemsetModel::new("tid", 2.0);
        assert!(matches!(m.check_schema(&schema), Err(Error::Schema(_))));
    }
}
