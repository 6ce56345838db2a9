//! The run configuration: a JSON document with a versioned top level, one section
//! per command, and every unknown key rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hoca_core::attribution::Formula;
use hoca_core::crawler::{DimensionOrder, Exploration, OutputFormat, TopN};
use hoca_core::cube::{Dimension, DimensionSchema, Predicate, Value};
use hoca_core::join::{JoinSpec, JoinStrategy};
use hoca_core::ram::{
    AttributionModel, DiffModel, EntityMeasureModel, EntityModel, EntityWeightModel, FrequentItemsetModel, IdModel,
    RegionAnalysisModel, WindowOutlierModel,
};
use hoca_core::{CrawlOptions, CrawlSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value as Json};

use crate::error::{CliError, CliResult};

pub const SPEC_VERSION: u32 = 1;

/// The subcommand a configuration is run under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Crawl,
    Attribute,
    Join,
    Materialize,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Crawl => "crawl",
            Command::Attribute => "attribute",
            Command::Join => "join",
            Command::Materialize => "materialize",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub spec_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input: Option<Source>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crawl: Option<CrawlConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attribute: Option<AttributeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub join: Option<JoinConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub materialize: Option<MaterializeConfig>,
    #[serde(default, skip_serializing_if = "EngineOptions::is_default")]
    pub options: EngineOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<OutputFormat>,
    /// Path of the instrumentation report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instrument: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

/// Where a cube comes from. Relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Source {
    /// A CSV with a header row, typed by `schema`.
    Csv { path: PathBuf, schema: DimensionSchema },
    /// Region-signal records written by `crawl`; signals become stored measures.
    Results {
        path: PathBuf,
        #[serde(default)]
        format: OutputFormat,
        dimensions: Vec<Dimension>,
    },
    /// A store directory written by `materialize` or `join`.
    Cellset { path: PathBuf },
    Chunked { path: PathBuf },
    Rechunked { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrawlConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dimensions: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub grouping_sets: Vec<Vec<String>>,
    pub models: Vec<ModelConfig>,
    /// Minimum value per signal; a region is emitted when every one holds.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<TopN>,
    #[serde(default)]
    pub exploration: Exploration,
    #[serde(default)]
    pub dimension_order: DimensionOrder,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hierarchies: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_degree: Option<usize>,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub min_degree: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub value_filter: BTreeMap<String, Vec<Value>>,
}

/// A model selected by name, with its parameters as a mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelName,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub params: Map<String, Json>,
    /// Overrides the model's default name (needed when one model is used twice).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub gated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pushdown: Option<Predicate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    EntityWeight,
    Id,
    Entity,
    EntityMeasure,
    FrequentItemset,
    Diff,
    WindowOutlier,
    Attribution,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pushdown: Option<bool>,
    #[serde(default, skip_serializing_if = "is_false")]
    pub validate_apriori: bool,
    #[serde(default, skip_serializing_if = "is_false")]
    pub topn_fallback: bool,
    /// Overridden by the `HOCA_SAFETY_CAP` environment variable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_cap: Option<usize>,
}

impl EngineOptions {
    fn is_default(&self) -> bool {
        *self == EngineOptions::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttributeConfig {
    /// A CSV with a `region` label column and segmented-metric columns.
    Segments {
        path: PathBuf,
        formula: Formula,
        /// Shared population metrics; defaults to the column sums when the CSV has no
        /// population columns.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        population: Option<Population>,
    },
    /// The top-level `input` cube with a test/control flag dimension, scored over the
    /// regions of `partition`.
    Cube {
        formula: Formula,
        flag: String,
        numerator: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        denominator: Option<String>,
        partition: Vec<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Population {
    pub w_p_c: f64,
    pub w_p_t: f64,
    #[serde(default)]
    pub s_p_c: f64,
    #[serde(default)]
    pub s_p_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinConfig {
    pub left: Source,
    pub right: Source,
    pub spec: JoinSpec,
    #[serde(default)]
    pub strategy: JoinStrategy,
    /// Dimensions of the written cellset; all joined dimensions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum MaterializeConfig {
    Cellset {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dimensions: Option<Vec<String>>,
    },
    Chunk {
        partition: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dimensions: Option<Vec<String>>,
    },
    /// Rechunks a chunked input, or chunks a plain input by `partition` first.
    Rechunk {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        partition: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dimensions: Option<Vec<String>>,
    },
}

fn is_false(b: &bool) -> bool {
    !*b
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

/// A parsed configuration and the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub base: PathBuf,
}

impl Loaded {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base.join(path)
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let config: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("invalid config: {e}")))?;
        if config.spec_version != SPEC_VERSION {
            return Err(CliError::Config(format!(
                "unsupported spec_version {} (expected {SPEC_VERSION})",
                config.spec_version
            )));
        }
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> CliResult<Loaded> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let config = RunConfig::parse(&text)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { config, base })
    }

    /// Checks that exactly the sections `command` uses are present.
    pub fn check_sections(&self, command: Command) -> CliResult<()> {
        let present = [
            ("input", self.input.is_some()),
            ("crawl", self.crawl.is_some()),
            ("attribute", self.attribute.is_some()),
            ("join", self.join.is_some()),
            ("materialize", self.materialize.is_some()),
        ];
        let needs_input = match command {
            Command::Crawl | Command::Materialize => true,
            Command::Join => false,
            Command::Attribute => matches!(self.attribute, Some(AttributeConfig::Cube { .. })),
        };
        for (section, is_present) in present {
            let wanted = section == command.name() || (section == "input" && needs_input);
            if wanted && !is_present {
                return Err(CliError::Config(format!("`{}` needs a `{section}` section", command.name())));
            }
            if !wanted && is_present {
                return Err(CliError::Config(format!("section `{section}` is not used by `{}`", command.name())));
            }
        }
        if let Some(schema) = match &self.input {
            Some(Source::Csv { schema, .. }) => Some(schema),
            _ => None,
        } {
            schema.validate()?;
        }
        if self.workers == Some(0) {
            return Err(CliError::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    /// Engine options from the config, with `safety_cap` overridden by `HOCA_SAFETY_CAP`.
    pub fn crawl_options(&self, workers: Option<usize>, env_cap: Option<&str>) -> CliResult<CrawlOptions> {
        let mut opts = CrawlOptions::default();
        opts.workers = workers.or(self.workers);
        if let Some(b) = self.options.batch_size {
            if b == 0 {
                return Err(CliError::Config("batch_size must be at least 1".into()));
            }
            opts.batch_size = b;
        }
        if let Some(p) = self.options.pushdown {
            opts.pushdown = p;
        }
        opts.validate_apriori = self.options.validate_apriori;
        opts.topn_fallback = self.options.topn_fallback;
        if let Some(cap) = self.options.safety_cap {
            opts.safety_cap = cap;
        }
        if let Some(text) = env_cap {
            opts.safety_cap = text
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("HOCA_SAFETY_CAP `{text}` is not a nonnegative integer")))?;
        }
        Ok(opts)
    }
}

fn params<P: DeserializeOwned>(model: ModelName, params: &Map<String, Json>) -> CliResult<P> {
    serde_json::from_value(Json::Object(params.clone()))
        .map_err(|e| CliError::Config(format!("parameters of model `{}`: {e}", model_label(model))))
}

fn model_label(model: ModelName) -> String {
    serde_json::to_value(model)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityWeightParams {
    metric: String,
    #[serde(default)]
    attributes: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct IdParams {
    metrics: Vec<String>,
    #[serde(default)]
    apriori: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityParams {
    entities: Vec<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EntityMeasureParams {
    entities: Vec<String>,
    measure: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ItemsetParams {
    tid_measure: String,
    min_support: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiffParams {
    flag: String,
    measure: String,
    #[serde(default)]
    smoothing: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OutlierParams {
    date: String,
    metric: String,
    window: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AttributionParams {
    flag: String,
    formula: Formula,
    numerator: String,
    #[serde(default)]
    denominator: Option<String>,
}

/// Applies the shared builder options to a built-in model.
macro_rules! finish {
    ($model:expr, $cfg:expr) => {{
        let mut m = $model.gated($cfg.gated);
        if let Some(p) = &$cfg.pushdown {
            m = m.with_pushdown(p.clone());
        }
        if let Some(n) = &$cfg.name {
            m = m.named(n.clone());
        }
        Box::new(m) as Box<dyn RegionAnalysisModel>
    }};
}

impl ModelConfig {
    pub fn build(&self) -> CliResult<Box<dyn RegionAnalysisModel>> {
        let p = &self.params;
        Ok(match self.model {
            ModelName::EntityWeight => {
                let q: EntityWeightParams = params(self.model, p)?;
                let mut m = EntityWeightModel::new(q.metric);
                if !q.attributes.is_empty() {
                    m = m.with_attributes(q.attributes);
                }
                finish!(m, self)
            }
            ModelName::Id => {
                let q: IdParams = params(self.model, p)?;
                finish!(IdModel::new(q.metrics, q.apriori), self)
            }
            ModelName::Entity => {
                let q: EntityParams = params(self.model, p)?;
                finish!(EntityModel::new(q.entities), self)
            }
            ModelName::EntityMeasure => {
                let q: EntityMeasureParams = params(self.model, p)?;
                finish!(EntityMeasureModel::new(q.entities, q.measure), self)
            }
            ModelName::FrequentItemset => {
                let q: ItemsetParams = params(self.model, p)?;
                finish!(FrequentItemsetModel::new(q.tid_measure, q.min_support), self)
            }
            ModelName::Diff => {
                let q: DiffParams = params(self.model, p)?;
                let mut m = DiffModel::new(q.flag, q.measure);
                if let Some(eps) = q.smoothing {
                    m = m.with_smoothing(eps);
                }
                finish!(m, self)
            }
            ModelName::WindowOutlier => {
                let q: OutlierParams = params(self.model, p)?;
                finish!(WindowOutlierModel::new(q.date, q.metric, q.window)?, self)
            }
            ModelName::Attribution => {
                let q: AttributionParams = params(self.model, p)?;
                let m = match (q.formula, q.denominator) {
                    (Formula::Summable, None) => AttributionModel::summable(q.flag, q.numerator),
                    (Formula::Density, Some(d)) => AttributionModel::density(q.flag, q.numerator, d),
                    (Formula::Summable, Some(_)) => {
                        return Err(CliError::Config("a summable attribution takes no denominator".into()))
                    }
                    (Formula::Density, None) => {
                        return Err(CliError::Config("a density attribution needs a denominator".into()))
                    }
                };
                finish!(m, self)
            }
        })
    }
}

impl CrawlConfig {
    /// Builds the crawl spec and validates it against `schema`.
    pub fn build(&self, schema: &DimensionSchema) -> CliResult<CrawlSpec> {
        let mut spec = CrawlSpec {
            dimensions: self.dimensions.clone(),
            grouping_sets: self.grouping_sets.clone(),
            thresholds: self.thresholds.clone(),
            top_n: self.top_n.clone(),
            exploration: self.exploration,
            dimension_order: self.dimension_order,
            hierarchies: self.hierarchies.clone(),
            max_degree: self.max_degree,
            min_degree: self.min_degree,
            value_filter: self.value_filter.clone(),
            ..CrawlSpec::default()
        };
        for m in &self.models {
            spec.models.push(m.build()?.into());
        }
        for (dim, values) in &self.value_filter {
            let kind = schema.dimension(dim)?.kind;
            if let Some(v) = values.iter().find(|v| !v.conforms_to(kind)) {
                return Err(CliError::Config(format!("value_filter on `{dim}`: {v:?} is not a {kind:?} value")));
            }
        }
        spec.validate(schema)?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const CRAWL: &str = r#"{
        "spec_version": 1,
        "input": {"kind": "csv", "path": "t.csv", "schema": {
            "dimensions": [{"name": "Device", "type": "string"}, {"name": "is_test", "type": "boolean"}],
            "measures": [{"name": "Revenue", "aggregator": "sum"}, {"name": "n", "aggregator": {"count_distinct": ["Device"]}}]
        }},
        "crawl": {
            "models": [{"model": "entity_weight", "params": {"metric": "Revenue"}, "pushdown": [{"measure": "Revenue", "op": "ge", "value": 5}]}],
            "thresholds": {"total_weight": 10},
            "value_filter": {"is_test": [true]}
        },
        "options": {"batch_size": 8},
        "format": "jsonl"
    }"#;

    #[test]
    fn parses_and_round_trips() {
        let c = RunConfig::parse(CRAWL).unwrap();
        c.check_sections(Command::Crawl).unwrap();
        let again = RunConfig::parse(&c.to_json()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_json(), c.to_json());
    }

    #[test]
    fn rejects_unknown_keys_and_versions() {
        let bad = CRAWL.replace("\"thresholds\"", "\"threshold\"");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config(_))));
        let bad = CRAWL.replace("\"spec_version\": 1", "\"spec_version\": 2");
        assert!(matches!(RunConfig::parse(&bad), Err(CliError::Config(_))));
        let bad = CRAWL.replace("\"metric\": \"Revenue\"", "\"metric\": \"Revenue\", \"weight\": 1");
        let c = RunConfig::parse(&bad).unwrap();
        assert!(matches!(c.crawl.unwrap().models[0].build(), Err(CliError::Config(_))));
    }

    #[test]
    fn sections_must_match_the_command() {
        let c = RunConfig::parse(CRAWL).unwrap();
        assert!(c.check_sections(Command::Join).is_err());
        assert!(c.check_sections(Command::Materialize).is_err());
    }

    #[test]
    fn spec_is_validated_against_the_schema() {
        let c = RunConfig::parse(CRAWL).unwrap();
        let schema = match &c.input {
            Some(Source::Csv { schema, .. }) => schema.clone(),
            _ => unreachable!(),
        };
        let crawl = c.crawl.unwrap();
        let spec = crawl.build(&schema).unwrap();
        assert_eq!(spec.thresholds["total_weight"], 10.0);

        let mut undeclared = crawl.clone();
        undeclared.thresholds.insert("support".into(), 1.0);
        assert!(matches!(undeclared.build(&schema), Err(CliError::Config(_))));

        let mut wrong_kind = crawl;
        wrong_kind.value_filter.insert("is_test".into(), vec![Value::str("yes")]);
        assert!(matches!(wrong_kind.build(&schema), Err(CliError::Config(_))));
    }

    #[test]
    fn safety_cap_comes_from_the_environment_first() {
        let mut c = RunConfig::parse(CRAWL).unwrap();
        c.options.safety_cap = Some(10);
        assert_eq!(c.crawl_options(None, None).unwrap().safety_cap, 10);
        assert_eq!(c.crawl_options(None, Some("5")).unwrap().safety_cap, 5);
        assert!(c.crawl_options(None, Some("many")).is_err());
        assert_eq!(c.crawl_options(Some(3), None).unwrap().workers, Some(3));
    }
}
