//! Command execution. Everything is validated and computed before any output is
//! written; outputs go through a temporary sibling renamed into place.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use hoca_core::attribution::{population_change, region_ras, Formula, SegmentedMetrics};
use hoca_core::crawler::{crawl, OutputFormat};
use hoca_core::cube::{build_cellset, Cube, FeatureRequest, Region};
use hoca_core::join::join_cubes;
use hoca_core::store::{chunk_by_partition, rechunk, save_cellset, ChunkStore, Manifest};
use serde::Serialize;
use serde_json::json;

use crate::config::{AttributeConfig, Command, Loaded, MaterializeConfig, Population, Source};
use crate::error::{CliError, CliResult};
use crate::source;

/// Command-line settings that override the config file.
#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub output: Option<PathBuf>,
    pub format: Option<OutputFormat>,
    pub workers: Option<usize>,
    pub naive: bool,
    pub instrument: Option<PathBuf>,
    /// The value of `HOCA_SAFETY_CAP`, if set.
    pub safety_cap: Option<String>,
}

/// What a successful run reports on stderr.
#[derive(Debug, Default)]
pub struct Outcome {
    pub warnings: Vec<serde_json::Value>,
}

pub fn run(command: Command, cfg: &Loaded, args: &RunArgs) -> CliResult<Outcome> {
    cfg.config.check_sections(command)?;
    let output = match (&args.output, &cfg.config.output) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => cfg.resolve(p),
        (None, None) => return Err(CliError::Config("no output path: pass --output or set `output`".into())),
    };
    let instrument = args
        .instrument
        .clone()
        .or_else(|| cfg.config.instrument.as_ref().map(|p| cfg.resolve(p)));
    let format = args.format.or(cfg.config.format).unwrap_or_default();
    let (artifact, report, outcome) = match command {
        Command::Crawl => run_crawl(cfg, args, format)?,
        Command::Attribute => run_attribute(cfg, format)?,
        Command::Join => run_join(cfg)?,
        Command::Materialize => run_materialize(cfg)?,
    };
    let mut report = report;
    if let Some(manifest) = artifact.commit(&output)? {
        report["kind"] = json!(manifest.kind);
        report["files"] = json!(manifest.files.len());
        report["rows"] = json!(manifest.files.iter().map(|f| f.rows).sum::<u64>());
    }
    if let Some(path) = instrument {
        let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
        write_file(&path, text.as_bytes())?;
    }
    Ok(outcome)
}

/// A computed output, not yet written.
enum Artifact {
    File(Vec<u8>),
    Store(Box<dyn FnOnce(&Path) -> hoca_core::Result<Manifest>>),
}

impl Artifact {
    fn commit(self, path: &Path) -> CliResult<Option<Manifest>> {
        match self {
            Artifact::File(bytes) => write_file(path, &bytes).map(|()| None),
            Artifact::Store(save) => write_store(path, save).map(Some),
        }
    }
}

fn parent_of(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let io = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(parent_of(path)).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Writes a store directory. An existing store directory at `path` is replaced; any
/// other existing non-empty directory is left alone and reported.
fn write_store(path: &Path, save: Box<dyn FnOnce(&Path) -> hoca_core::Result<Manifest>>) -> CliResult<Manifest> {
    let io = |e: std::io::Error| CliError::Io(format!("cannot write {}: {e}", path.display()));
    if path.exists() {
        let is_store = path.join(hoca_core::store::MANIFEST).is_file();
        let is_empty = path.is_dir() && fs::read_dir(path).map_err(io)?.next().is_none();
        if !is_store && !is_empty {
            return Err(CliError::Io(format!("{} exists and is not a store directory", path.display())));
        }
    }
    let tmp = tempfile::Builder::new()
        .prefix(".hoca-store")
        .tempdir_in(parent_of(path))
        .map_err(io)?;
    let manifest = save(tmp.path())?;
    if path.exists() {
        fs::remove_dir_all(path).map_err(io)?;
    }
    fs::rename(tmp.path(), path).map_err(io)?;
    // The directory now lives at `path`; nothing is left for the guard to delete.
    let _ = tmp.keep();
    Ok(manifest)
}

fn load_input(cfg: &Loaded) -> CliResult<Arc<dyn Cube>> {
    let input = cfg.config.input.as_ref().expect("checked by check_sections");
    source::load(cfg, input)
}

type Ran = (Artifact, serde_json::Value, Outcome);

fn run_crawl(cfg: &Loaded, args: &RunArgs, format: OutputFormat) -> CliResult<Ran> {
    let cube = load_input(cfg)?;
    let spec = cfg.config.crawl.as_ref().expect("checked").build(cube.schema())?;
    let options = cfg.config.crawl_options(args.workers, args.safety_cap.as_deref())?;
    let (result, stats) = crawl(cube.as_ref(), &spec, &options, args.naive)?;
    let mut bytes = Vec::new();
    result.write(&mut bytes, format)?;
    let report = json!({
        "command": "crawl",
        "oracle": if args.naive { "naive" } else { "pruned" },
        "records": result.len(),
        "stats": stats,
    });
    Ok((Artifact::File(bytes), report, Outcome::default()))
}

fn run_join(cfg: &Loaded) -> CliResult<Ran> {
    let join = cfg.config.join.as_ref().expect("checked");
    let left = source::load(cfg, &join.left)?;
    let right = source::load(cfg, &join.right)?;
    let joined = join_cubes(left, right, join.spec.clone(), join.strategy)?;
    let dims = match &join.dimensions {
        Some(d) => d.clone(),
        None => joined.schema().dimension_names().map(String::from).collect(),
    };
    let cells = build_cellset(&joined, &dims)?;
    let report = json!({
        "command": "join",
        "strategy": join.strategy,
        "cells": cells.len(),
        "joins": joined.stats(),
    });
    let save = Box::new(move |dir: &Path| save_cellset(&cells, dir));
    Ok((Artifact::Store(save), report, Outcome::default()))
}

fn all_dims(cube: &dyn Cube, dims: &Option<Vec<String>>) -> Vec<String> {
    dims.clone()
        .unwrap_or_else(|| cube.schema().dimension_names().map(String::from).collect())
}

fn run_materialize(cfg: &Loaded) -> CliResult<Ran> {
    let action = cfg.config.materialize.as_ref().expect("checked");
    let input = cfg.config.input.as_ref().expect("checked");
    let (name, save): (&str, Box<dyn FnOnce(&Path) -> hoca_core::Result<Manifest>>) = match action {
        MaterializeConfig::Cellset { dimensions } => {
            let cube = source::load(cfg, input)?;
            let cells = build_cellset(cube.as_ref(), &all_dims(cube.as_ref(), dimensions))?;
            ("cellset", Box::new(move |dir: &Path| save_cellset(&cells, dir)))
        }
        MaterializeConfig::Chunk { partition, dimensions } => {
            let cube = source::load(cfg, input)?;
            let store = chunk_by_partition(cube.as_ref(), partition, &all_dims(cube.as_ref(), dimensions))?;
            ("chunk", Box::new(move |dir: &Path| store.save(dir)))
        }
        MaterializeConfig::Rechunk { partition, dimensions } => {
            let chunks = match (input, partition) {
                (Source::Chunked { path }, None) if dimensions.is_none() => ChunkStore::open(&cfg.resolve(path))?,
                (Source::Chunked { .. }, _) => {
                    return Err(CliError::Config(
                        "rechunking a chunked input keeps its partition and dimensions".into(),
                    ))
                }
                (_, Some(p)) => {
                    let cube = source::load(cfg, input)?;
                    chunk_by_partition(cube.as_ref(), p, &all_dims(cube.as_ref(), dimensions))?
                }
                (_, None) => {
                    return Err(CliError::Config("rechunk needs a chunked input or a `partition`".into()))
                }
            };
            let slices = rechunk(&chunks);
            ("rechunk", Box::new(move |dir: &Path| slices.save(dir)))
        }
    };
    let report = json!({ "command": "materialize", "action": name });
    Ok((Artifact::Store(save), report, Outcome::default()))
}

/// One attributed region, or the reason it could not be attributed.
struct Scored {
    label: String,
    result: Result<(f64, f64, f64), hoca_core::Error>,
}

#[derive(Serialize)]
struct Completeness {
    formula: Formula,
    sum_ras: f64,
    /// `None` when rows carry differing population metrics.
    population_change: Option<f64>,
    gap: Option<f64>,
    regions: usize,
    errors: usize,
}

fn run_attribute(cfg: &Loaded, format: OutputFormat) -> CliResult<Ran> {
    let (formula, rows, population) = match cfg.config.attribute.as_ref().expect("checked") {
        AttributeConfig::Segments { path, formula, population } => {
            let (rows, shared) = read_segments(&cfg.resolve(path), *formula, *population)?;
            (*formula, rows, shared)
        }
        AttributeConfig::Cube {
            formula,
            flag,
            numerator,
            denominator,
            partition,
        } => {
            if (*formula == Formula::Density) != denominator.is_some() {
                return Err(CliError::Config(
                    "a density attribution needs a denominator; a summable one takes none".into(),
                ));
            }
            let cube = load_input(cfg)?;
            let (rows, population) = cube_segments(cube.as_ref(), flag, numerator, denominator.as_deref(), partition)?;
            (*formula, rows, Some(population))
        }
    };
    // Rows with their own population metrics share one only if every attributed row agrees.
    let mut row_populations = Vec::new();
    let scored: Vec<Scored> = rows
        .into_iter()
        .map(|(label, m)| {
            let result = m.and_then(|m| {
                let r = region_ras(formula, &m)?;
                row_populations.push(m.population());
                Ok((unsigned_zero(r.ras), unsigned_zero(r.numerator_part()), unsigned_zero(r.denominator_part())))
            });
            Scored { label, result }
        })
        .collect();
    let population = population.or_else(|| {
        let first = *row_populations.first()?;
        row_populations.iter().all(|p| *p == first).then_some(first)
    });
    let errors = scored.iter().filter(|s| s.result.is_err()).count();
    let sum_ras: f64 = scored.iter().filter_map(|s| s.result.as_ref().ok().map(|r| r.0)).sum();
    let change = population.map(|p| population_change(formula, &p));
    let completeness = Completeness {
        formula,
        sum_ras,
        population_change: change,
        gap: change.map(|c| sum_ras - c),
        regions: scored.len(),
        errors,
    };
    let bytes = match format {
        OutputFormat::Jsonl => attribution_jsonl(&scored, &completeness),
        OutputFormat::Csv => attribution_csv(&scored, &completeness)?,
    };
    let mut outcome = Outcome::default();
    if errors > 0 {
        outcome
            .warnings
            .push(json!({ "warning": "attribution_errors", "count": errors }));
    }
    let report = json!({ "command": "attribute", "completeness": completeness });
    Ok((Artifact::File(bytes), report, outcome))
}

fn unsigned_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

fn attribution_jsonl(scored: &[Scored], completeness: &Completeness) -> Vec<u8> {
    let mut out = Vec::new();
    for s in scored {
        let rec = match &s.result {
            Ok((ras, num, den)) => json!({
                "region": s.label,
                "ras": ras,
                "numerator_part": num,
                "denominator_part": den,
            }),
            Err(e) => json!({
                "region": s.label,
                "error": { "kind": e.kind(), "message": e.to_string() },
            }),
        };
        out.extend(rec.to_string().bytes());
        out.push(b'\n');
    }
    out.extend(json!({ "completeness": completeness }).to_string().bytes());
    out.push(b'\n');
    out
}

fn attribution_csv(scored: &[Scored], completeness: &Completeness) -> CliResult<Vec<u8>> {
    let num = |v: f64| v.to_string();
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["record", "region", "ras", "numerator_part", "denominator_part", "population_change", "error"])
        .map_err(csv_err)?;
    for s in scored {
        let row = match &s.result {
            Ok((ras, n, d)) => ["region".into(), s.label.clone(), num(*ras), num(*n), num(*d), String::new(), String::new()],
            Err(e) => [
                "error".into(),
                s.label.clone(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                format!("{}: {e}", e.kind()),
            ],
        };
        w.write_record(&row).map_err(csv_err)?;
    }
    w.write_record([
        "completeness".into(),
        String::new(),
        num(completeness.sum_ras),
        String::new(),
        String::new(),
        completeness.population_change.map(num).unwrap_or_default(),
        if completeness.errors > 0 {
            format!("{} region(s) not attributed", completeness.errors)
        } else {
            String::new()
        },
    ])
    .map_err(csv_err)?;
    w.into_inner().map_err(|e| CliError::Io(e.to_string()))
}

type SegmentRow = (String, hoca_core::Result<SegmentedMetrics<f64>>);

/// Reads a segmented-metrics CSV: `region`, `w_r_c`, `w_r_t`, plus `s_r_c`, `s_r_t`
/// for density metrics, and optionally per-row population columns `w_p_c`, `w_p_t`
/// (and `s_p_c`, `s_p_t`). Unparsable cells become per-row errors.
///
/// The shared population is `None` when rows carry their own.
fn read_segments(
    path: &Path,
    formula: Formula,
    configured: Option<Population>,
) -> CliResult<(Vec<SegmentRow>, Option<SegmentedMetrics<f64>>)> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("cannot open {}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = rdr.headers().map_err(|e| CliError::Io(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| {
        col(name).ok_or_else(|| CliError::Io(format!("{}: no `{name}` column", path.display())))
    };
    let density = formula == Formula::Density;
    let region = need("region")?;
    let w = [need("w_r_c")?, need("w_r_t")?];
    let s = if density { Some([need("s_r_c")?, need("s_r_t")?]) } else { None };
    let per_row = match (col("w_p_c"), col("w_p_t")) {
        (Some(c), Some(t)) => Some((
            [c, t],
            if density { Some([need("s_p_c")?, need("s_p_t")?]) } else { None },
        )),
        (None, None) => None,
        _ => return Err(CliError::Io(format!("{}: `w_p_c` and `w_p_t` must appear together", path.display()))),
    };
    if per_row.is_some() && configured.is_some() {
        return Err(CliError::Config("population given both in the config and as CSV columns".into()));
    }

    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| CliError::Io(e.to_string()))?;
        let label = record.get(region).unwrap_or("").to_string();
        let cell = |i: usize| -> hoca_core::Result<f64> {
            let text = record.get(i).unwrap_or("").trim();
            text.parse().map_err(|_| {
                hoca_core::Error::Data(format!("row {}: `{text}` in column `{}` is not a number", line + 2, &headers[i]))
            })
        };
        let pair = |ix: Option<[usize; 2]>| -> hoca_core::Result<(f64, f64)> {
            match ix {
                Some([c, t]) => Ok((cell(c)?, cell(t)?)),
                None => Ok((0.0, 0.0)),
            }
        };
        let m = (|| {
            let (w_r_c, w_r_t) = pair(Some(w))?;
            let (s_r_c, s_r_t) = pair(s)?;
            let ((w_p_c, w_p_t), (s_p_c, s_p_t)) = match per_row {
                Some((wp, sp)) => (pair(Some(wp))?, pair(sp)?),
                None => ((0.0, 0.0), (0.0, 0.0)),
            };
            Ok(SegmentedMetrics {
                w_r_c,
                w_r_t,
                s_r_c,
                s_r_t,
                w_p_c,
                w_p_t,
                s_p_c,
                s_p_t,
            })
        })();
        rows.push((label, m));
    }

    let shared = if per_row.is_some() {
        None
    } else {
        let p = match configured {
            Some(p) => SegmentedMetrics {
                w_p_c: p.w_p_c,
                w_p_t: p.w_p_t,
                s_p_c: p.s_p_c,
                s_p_t: p.s_p_t,
                ..SegmentedMetrics::default()
            },
            None => {
                let mut p = SegmentedMetrics::<f64>::default();
                for m in rows.iter().filter_map(|(_, m)| m.as_ref().ok()) {
                    p.w_p_c += m.w_r_c;
                    p.w_p_t += m.w_r_t;
                    p.s_p_c += m.s_r_c;
                    p.s_p_t += m.s_r_t;
                }
                p
            }
        };
        for (_, m) in rows.iter_mut() {
            if let Ok(m) = m {
                m.w_p_c = p.w_p_c;
                m.w_p_t = p.w_p_t;
                m.s_p_c = p.s_p_c;
                m.s_p_t = p.s_p_t;
            }
        }
        Some(p.population())
    };
    Ok((rows, shared))
}

/// Control/test totals per region of `partition`, from one grouped view, plus the
/// population totals.
fn cube_segments(
    cube: &dyn Cube,
    flag: &str,
    numerator: &str,
    denominator: Option<&str>,
    partition: &[String],
) -> CliResult<(Vec<SegmentRow>, SegmentedMetrics<f64>)> {
    if partition.iter().any(|d| d == flag) {
        return Err(CliError::Config(format!("the flag `{flag}` cannot be a partition dimension")));
    }
    cube.schema().dimension(flag)?;
    let metrics: Vec<&str> = std::iter::once(numerator).chain(denominator).collect();
    let mut attrs = partition.to_vec();
    attrs.push(flag.to_string());
    let frame = cube.view(&Region::empty(), &FeatureRequest::new(attrs, metrics.clone()))?;

    let mut totals: BTreeMap<Region, [f64; 4]> = BTreeMap::new();
    let mut population = [0.0; 4];
    for (values, measures) in frame.rows() {
        let (keys, f) = values.split_at(partition.len());
        let test = f[0]
            .as_flag()
            .ok_or_else(|| hoca_core::Error::Data(format!("`{flag}` value `{}` is not a test/control flag", f[0])))?;
        let region = Region::from_pairs(partition.iter().cloned().zip(keys.iter().cloned()));
        let slot = totals.entry(region).or_insert([0.0; 4]);
        let w = measures[0].unwrap_or(0.0);
        let s = measures.get(1).copied().flatten().unwrap_or(0.0);
        let at = usize::from(test);
        slot[at] += w;
        slot[2 + at] += s;
        population[at] += w;
        population[2 + at] += s;
    }
    let pop = SegmentedMetrics {
        w_p_c: population[0],
        w_p_t: population[1],
        s_p_c: population[2],
        s_p_t: population[3],
        ..SegmentedMetrics::default()
    };
    let rows = totals
        .into_iter()
        .map(|(region, [w_c, w_t, s_c, s_t])| (region.to_string(), Ok(pop.with_region(w_c, w_t, s_c, s_t))))
        .collect();
    Ok((rows, pop.population()))
}
