//! Region-space search: the naive enumeration oracle, top-down crawling with
//! apriori pruning, multi-model gating, predicate pushdown and Top-N.

mod engine;
mod result;
mod space;

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use engine::{crawl, naive_crawl, top_down_crawl, topn_crawl, CrawlStats};
pub use result::{OutputFormat, RegionSignalsRecord, ResultCube};
pub use space::{region_children, RegionSpace};

use crate::cube::{DimensionSchema, Value};
use crate::error::{Error, Result};
use crate::ram::{RegionAnalysisModel, SignalDecl};

/// Order in which pending regions are popped.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exploration {
    #[default]
    Dfs,
    Bfs,
}

/// How crawl dimensions are ordered for child generation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimensionOrder {
    /// As given in [`CrawlSpec::dimensions`].
    #[default]
    Listed,
    /// Fewest distinct values first (stable for ties).
    AscendingCardinality,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopN {
    pub signal: String,
    pub n: usize,
}

/// What to crawl and how to score it.
#[derive(Clone, Default)]
pub struct CrawlSpec {
    /// Crawl dimensions. Empty means the union of the grouping sets, or every
    /// schema dimension when there are none.
    pub dimensions: Vec<String>,
    /// Dimension subsets whose regions are emitted. Empty means every subset.
    pub grouping_sets: Vec<Vec<String>>,
    pub models: Vec<Arc<dyn RegionAnalysisModel>>,
    /// A region passes when every listed signal is `>=` its minimum.
    pub thresholds: BTreeMap<String, f64>,
    pub top_n: Option<TopN>,
    pub exploration: Exploration,
    pub dimension_order: DimensionOrder,
    /// Chains such as `[Country, State, City]`; a later member is only bound
    /// together with every earlier one. `None` uses the schema's chains.
    pub hierarchies: Option<Vec<Vec<String>>>,
    pub max_degree: Option<usize>,
    /// Regions of lower degree are still evaluated, for pruning, but not emitted.
    pub min_degree: usize,
    /// Restricts the values a dimension may be bound to.
    pub value_filter: BTreeMap<String, Vec<Value>>,
}

impl std::fmt::Debug for CrawlSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CrawlSpec")
            .field("dimensions", &self.dimensions)
            .field("grouping_sets", &self.grouping_sets)
            .field("models", &self.models.iter().map(|m| &m.spec().name).collect::<Vec<_>>())
            .field("thresholds", &self.thresholds)
            .field("top_n", &self.top_n)
            .field("exploration", &self.exploration)
            .field("dimension_order", &self.dimension_order)
            .field("hierarchies", &self.hierarchies)
            .field("max_degree", &self.max_degree)
            .field("min_degree", &self.min_degree)
            .field("value_filter", &self.value_filter)
            .finish()
    }
}

impl CrawlSpec {
    pub fn new<M: RegionAnalysisModel + 'static>(model: M) -> Self {
        CrawlSpec::default().model(model)
    }

    pub fn model<M: RegionAnalysisModel + 'static>(mut self, model: M) -> Self {
        self.models.push(Arc::new(model));
        self
    }

    pub fn dimensions<S: Into<String>>(mut self, dims: impl IntoIterator<Item = S>) -> Self {
        self.dimensions = dims.into_iter().map(Into::into).collect();
        self
    }

    pub fn grouping_set<S: Into<String>>(mut self, dims: impl IntoIterator<Item = S>) -> Self {
        self.grouping_sets.push(dims.into_iter().map(Into::into).collect());
        self
    }

    pub fn threshold(mut self, signal: impl Into<String>, min: f64) -> Self {
        self.thresholds.insert(signal.into(), min);
        self
    }

    pub fn top_n(mut self, signal: impl Into<String>, n: usize) -> Self {
        self.top_n = Some(TopN {
            signal: signal.into(),
            n,
        });
        self
    }

    pub fn exploration(mut self, exploration: Exploration) -> Self {
        self.exploration = exploration;
        self
    }

    pub fn dimension_order(mut self, order: DimensionOrder) -> Self {
        self.dimension_order = order;
        self
    }

    pub fn hierarchy<S: Into<String>>(mut self, chain: impl IntoIterator<Item = S>) -> Self {
        self.hierarchies
            .get_or_insert_with(Vec::new)
            .push(chain.into_iter().map(Into::into).collect());
        self
    }

    pub fn max_degree(mut self, max: usize) -> Self {
        self.max_degree = Some(max);
        self
    }

    pub fn min_degree(mut self, min: usize) -> Self {
        self.min_degree = min;
        self
    }

    pub fn value_filter(mut self, dimension: impl Into<String>, values: Vec<Value>) -> Self {
        self.value_filter.insert(dimension.into(), values);
        self
    }

    /// The model declaring `signal`, with its declaration.
    pub fn signal(&self, signal: &str) -> Option<(usize, &SignalDecl)> {
        self.models
            .iter()
            .enumerate()
            .find_map(|(i, m)| m.spec().signal(signal).map(|d| (i, d)))
    }

    /// Checks models, signal names, thresholds and Top-N against `schema`.
    pub fn validate(&self, schema: &DimensionSchema) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::Spec("a crawl needs at least one model".into()));
        }
        let mut names = HashSet::new();
        let mut signals = HashSet::new();
        for m in &self.models {
            let spec = m.spec();
            if !names.insert(spec.name.as_str()) {
                return Err(Error::Spec(format!("model name `{}` used twice", spec.name)));
            }
            m.check_schema(schema)?;
            for s in &spec.signals {
                if !signals.insert(s.name.as_str()) {
                    return Err(Error::Spec(format!(
                        "signal `{}` declared by more than one model",
                        s.name
                    )));
                }
            }
        }
        for (signal, min) in &self.thresholds {
            if self.signal(signal).is_none() {
                return Err(Error::Spec(format!("threshold on undeclared signal `{signal}`")));
            }
            if min.is_nan() {
                return Err(Error::Spec(format!("threshold on `{signal}` is NaN")));
            }
        }
        if let Some(top) = &self.top_n {
            if top.n == 0 {
                return Err(Error::Spec("top_n needs n >= 1".into()));
            }
            if self.signal(&top.signal).is_none() {
                return Err(Error::Spec(format!("top_n on undeclared signal `{}`", top.signal)));
            }
        }
        Ok(())
    }
}

/// Execution knobs that do not change a crawl's result.
#[derive(Debug, Clone)]
pub struct CrawlOptions {
    /// Worker threads; `None` uses the available parallelism.
    pub workers: Option<usize>,
    /// Regions drained from the frontier per parallel round.
    pub batch_size: usize,
    /// Evaluate model pushdown predicates during aggregation.
    pub pushdown: bool,
    /// Compare every apriori signal against the parent region's value.
    pub validate_apriori: bool,
    /// Refuse crawls whose region count exceeds this.
    pub safety_cap: usize,
    /// Run Top-N on a signal without the apriori flag by exhaustive ranking.
    pub topn_fallback: bool,
}

pub const DEFAULT_SAFETY_CAP: usize = 1_000_000;

impl Default for CrawlOptions {
    fn default() -> Self {
        CrawlOptions {
            workers: None,
            batch_size: 64,
            pushdown: true,
            validate_apriori: false,
            safety_cap: DEFAULT_SAFETY_CAP,
            topn_fallback: false,
        }
    }
}

impl CrawlOptions {
    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = Some(workers);
        self
    }
}
