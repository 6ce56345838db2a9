use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::result::ResultCube;
use super::space::RegionSpace;
use super::{CrawlOptions, CrawlSpec, Exploration};
use crate::cube::{Cube, FeatureFrame, ReadStats, Region};
use crate::error::{Error, Result};
use crate::ram::{evaluate, EvaluationContext, SignalVector};

/// Instrumentation counters of one crawl.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CrawlStats {
    pub mode: String,
    pub regions_evaluated: u64,
    pub regions_emitted: u64,
    /// Evaluated regions whose children were not explored.
    pub regions_pruned: u64,
    /// Queued regions dropped unevaluated because a one-binding-smaller region failed
    /// an apriori threshold.
    pub regions_skipped: u64,
    /// Model feature frames built, population frames included.
    pub frames_materialized: u64,
    pub population_frames: u64,
    pub model_invocations: BTreeMap<String, u64>,
    pub pushdown_checks: u64,
    pub pushdown_rejections: u64,
    pub batches: u64,
    pub reads: ReadStats,
}

/// Thresholded signal of a model: (name, minimum, apriori).
type Check = (String, f64, bool);

struct Plan<'a> {
    cube: &'a dyn Cube,
    spec: &'a CrawlSpec,
    options: &'a CrawlOptions,
    space: RegionSpace,
    populations: Vec<Option<FeatureFrame>>,
    checks: Vec<Vec<Check>>,
    /// A pushdown rejection prunes iff the model has an apriori threshold.
    pushdown_prunes: Vec<bool>,
}

struct Outcome {
    signals: SignalVector,
    /// Every model ran and every threshold held.
    passed: bool,
    /// Some apriori threshold failed, so no descendant can pass.
    prune: bool,
    frames: u64,
    invocations: Vec<u64>,
    pushdown_checks: u64,
    pushdown_rejections: u64,
}

impl<'a> Plan<'a> {
    fn new(cube: &'a dyn Cube, spec: &'a CrawlSpec, options: &'a CrawlOptions, stats: &mut CrawlStats) -> Result<Self> {
        spec.validate(cube.schema())?;
        let space = RegionSpace::new(cube, spec)?;
        let mut populations = Vec::new();
        let mut checks = Vec::new();
        let mut pushdown_prunes = Vec::new();
        for m in &spec.models {
            let ms = m.spec();
            populations.push(match &ms.population_request {
                Some(req) => {
                    stats.frames_materialized += 1;
                    stats.population_frames += 1;
                    Some(cube.view(&Region::empty(), req)?)
                }
                None => None,
            });
            let c: Vec<Check> = ms
                .signals
                .iter()
                .filter_map(|s| spec.thresholds.get(&s.name).map(|&t| (s.name.clone(), t, s.apriori)))
                .collect();
            pushdown_prunes.push(c.iter().any(|(_, _, apriori)| *apriori));
            checks.push(c);
            stats.model_invocations.insert(ms.name.clone(), 0);
        }
        Ok(Plan {
            cube,
            spec,
            options,
            space,
            populations,
            checks,
            pushdown_prunes,
        })
    }

    fn evaluate(&self, region: &Region) -> Result<Outcome> {
        let mut out = Outcome {
            signals: SignalVector::new(),
            passed: true,
            prune: false,
            frames: 0,
            invocations: vec![0; self.spec.models.len()],
            pushdown_checks: 0,
            pushdown_rejections: 0,
        };
        for (i, model) in self.spec.models.iter().enumerate() {
            let ms = model.spec();
            let mut failed = false;
            let pushdown = ms.pushdown.as_ref().filter(|_| self.options.pushdown);
            if let Some(predicate) = pushdown {
                out.pushdown_checks += 1;
                if !self.cube.check_predicate(region, predicate)? {
                    out.pushdown_rejections += 1;
                    out.passed = false;
                    out.prune |= self.pushdown_prunes[i];
                    if ms.gate {
                        break;
                    }
                    continue;
                }
            }
            let frame = self.cube.view(region, &ms.request)?;
            out.frames += 1;
            out.invocations[i] += 1;
            let signals = evaluate(
                model.as_ref(),
                &EvaluationContext {
                    region,
                    region_frame: &frame,
                    population_frame: self.populations[i].as_ref(),
                },
            )?;
            for (name, min, apriori) in &self.checks[i] {
                if signals.get(name).expect("declared") < *min {
                    failed = true;
                    out.prune |= *apriori;
                }
            }
            out.signals.absorb(signals)?;
            if failed {
                out.passed = false;
                if ms.gate {
                    break;
                }
            }
        }
        Ok(out)
    }

    fn record(&self, stats: &mut CrawlStats, o: &Outcome) {
        stats.regions_evaluated += 1;
        stats.frames_materialized += o.frames;
        stats.pushdown_checks += o.pushdown_checks;
        stats.pushdown_rejections += o.pushdown_rejections;
        for (m, n) in self.spec.models.iter().zip(&o.invocations) {
            *stats.model_invocations.get_mut(&m.spec().name).expect("registered") += n;
        }
    }

    fn apriori_check(&self, parent: &(Region, SignalVector), region: &Region, signals: &SignalVector) -> Result<()> {
        for m in &self.spec.models {
            for s in m.spec().signals.iter().filter(|s| s.apriori) {
                if let (Some(p), Some(c)) = (parent.1.get(&s.name), signals.get(&s.name)) {
                    if c > p + 1e-9 * p.abs().max(1.0) {
                        return Err(Error::AprioriViolation {
                            signal: s.name.clone(),
                            parent_region: parent.0.to_string(),
                            child_region: region.to_string(),
                            parent: p,
                            child: c,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    fn result_cube(&self, ranking: Option<String>) -> Result<ResultCube> {
        let schema = self.cube.schema();
        let dims = self
            .space
            .dimensions()
            .iter()
            .map(|d| schema.dimension(d).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(ResultCube::new(dims, ranking))
    }
}

fn pool(options: &CrawlOptions) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::Spec(format!("cannot start worker pool: {e}")))
}

fn finish_reads(cube: &dyn Cube, before: ReadStats, stats: &mut CrawlStats) {
    let after = cube.read_stats();
    stats.reads = ReadStats {
        chunk_reads: after.chunk_reads - before.chunk_reads,
        slice_reads: after.slice_reads - before.slice_reads,
    };
}

/// Sort key of Top-N: signal descending, then canonical region ascending.
fn rank_order(a: &(f64, Region), b: &(f64, Region)) -> std::cmp::Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
}

fn apriori_top_signal<'s>(spec: &'s CrawlSpec, options: &CrawlOptions) -> Result<Option<&'s str>> {
    let Some(top) = &spec.top_n else {
        return Ok(None);
    };
    match spec.signal(&top.signal) {
        Some((_, decl)) if decl.apriori => Ok(Some(top.signal.as_str())),
        Some(_) if options.topn_fallback => Ok(None),
        Some(_) => Err(Error::Spec(format!(
            "top_n signal `{}` is not apriori; enable the exhaustive fallback to rank it",
            top.signal
        ))),
        None => Err(Error::Spec(format!("top_n on undeclared signal `{}`", top.signal))),
    }
}

/// Keeps the `n` best entries of `result` by `signal`.
fn cut_top_n(result: &mut ResultCube, signal: &str, n: usize) {
    let mut ranked: Vec<(f64, Region)> = result
        .entries()
        .filter_map(|(r, s)| s.get(signal).map(|v| (v, r.clone())))
        .collect();
    ranked.sort_by(rank_order);
    let keep: HashSet<Region> = ranked.into_iter().take(n).map(|(_, r)| r).collect();
    result.retain(|r| keep.contains(r));
}

/// Evaluates every region of the space; the correctness oracle for the pruned crawls.
///
/// With `top_n` set, ranks every passing region and keeps the best `n`.
pub fn naive_crawl(cube: &dyn Cube, spec: &CrawlSpec, options: &CrawlOptions) -> Result<(ResultCube, CrawlStats)> {
    let mut stats = CrawlStats {
        mode: "naive".into(),
        ..CrawlStats::default()
    };
    let before = cube.read_stats();
    let plan = Plan::new(cube, spec, options, &mut stats)?;
    let regions = plan.space.enumerate(cube, options.safety_cap)?;
    let pool = pool(options)?;
    let mut result = plan.result_cube(spec.top_n.as_ref().map(|t| t.signal.clone()))?;
    for batch in regions.chunks(options.batch_size.max(1)) {
        stats.batches += 1;
        let outcomes: Vec<Result<Outcome>> = pool.install(|| batch.par_iter().map(|r| plan.evaluate(r)).collect());
        for (region, outcome) in batch.iter().zip(outcomes) {
            let o = outcome?;
            plan.record(&mut stats, &o);
            if o.passed {
                result.insert(region.clone(), o.signals);
            }
        }
    }
    if let Some(top) = &spec.top_n {
        cut_top_n(&mut result, &top.signal, top.n);
    }
    stats.regions_emitted = result.len() as u64;
    finish_reads(cube, before, &mut stats);
    Ok((result, stats))
}

struct Pending {
    region: Region,
    parent: Option<Arc<(Region, SignalVector)>>,
    /// Parent's ranking signal: an upper bound for this subtree.
    bound: f64,
}

/// Top-down crawl from `[]`, skipping the children of regions that fail an apriori threshold.
///
/// With `top_n` set this is [`topn_crawl`].
pub fn top_down_crawl(cube: &dyn Cube, spec: &CrawlSpec, options: &CrawlOptions) -> Result<(ResultCube, CrawlStats)> {
    let top_signal = apriori_top_signal(spec, options)?;
    if spec.top_n.is_some() && top_signal.is_none() {
        let (result, mut stats) = naive_crawl(cube, spec, options)?;
        stats.mode = "topn-exhaustive".into();
        return Ok((result, stats));
    }
    let mut stats = CrawlStats {
        mode: if top_signal.is_some() { "topn" } else { "top-down" }.into(),
        ..CrawlStats::default()
    };
    let before = cube.read_stats();
    let plan = Plan::new(cube, spec, options, &mut stats)?;
    let pool = pool(options)?;
    let top = spec.top_n.as_ref().map(|t| (t.signal.as_str(), t.n));
    let mut result = plan.result_cube(top.map(|t| t.0.to_string()))?;

    let mut visited: Option<HashSet<Region>> = (!plan.space.dimensions().is_empty()
        && spec.hierarchies.as_deref().unwrap_or(cube.schema().hierarchies()).iter().any(|c| c.len() > 1))
    .then(HashSet::new);
    // Regions that failed an apriori threshold; any region extending one fails too.
    let mut failed: HashSet<Region> = HashSet::new();
    let mut frontier: VecDeque<Pending> = VecDeque::new();
    frontier.push_back(Pending {
        region: Region::empty(),
        parent: None,
        bound: f64::INFINITY,
    });

    // Top-N candidates: the best `n` passing regions so far, and the n-th value.
    let mut best: Vec<(f64, Region)> = Vec::new();
    let mut tau = f64::NEG_INFINITY;
    let mut round = 0usize;

    while !frontier.is_empty() {
        // Round 0 scores `[]`; with Top-N, round 1 scores every degree-1 region to seed the threshold.
        let take = if round == 1 && top.is_some() {
            frontier.len()
        } else {
            options.batch_size.max(1).min(frontier.len())
        };
        round += 1;
        let mut batch = Vec::with_capacity(take);
        for _ in 0..take {
            let p = match spec.exploration {
                Exploration::Dfs => frontier.pop_back(),
                Exploration::Bfs => frontier.pop_front(),
            }
            .expect("nonempty");
            if p.bound < tau {
                continue;
            }
            if !failed.is_empty() && p.region.dimensions().any(|d| failed.contains(&p.region.without(d))) {
                stats.regions_skipped += 1;
                continue;
            }
            batch.push(p);
        }
        if batch.is_empty() {
            continue;
        }
        stats.batches += 1;

        let outcomes: Vec<Result<(Outcome, Vec<Region>)>> = pool.install(|| {
            batch
                .par_iter()
                .map(|p| {
                    let o = plan.evaluate(&p.region)?;
                    let children = if o.prune {
                        Vec::new()
                    } else {
                        plan.space.children(cube, &p.region)?
                    };
                    Ok((o, children))
                })
                .collect()
        });

        for (p, outcome) in batch.into_iter().zip(outcomes) {
            let (o, children) = outcome?;
            plan.record(&mut stats, &o);
            if stats.regions_evaluated > options.safety_cap as u64 {
                return Err(Error::Refused {
                    size: stats.regions_evaluated as usize,
                    cap: options.safety_cap,
                });
            }
            if options.validate_apriori {
                if let Some(parent) = &p.parent {
                    plan.apriori_check(parent, &p.region, &o.signals)?;
                }
            }
            let sigma = top.and_then(|(s, _)| o.signals.get(s));
            let below_tau = sigma.is_some_and(|v| v < tau);
            if o.passed && plan.space.contains(&p.region) {
                if let Some(v) = sigma {
                    if !below_tau {
                        best.push((v, p.region.clone()));
                    }
                }
                result.insert(p.region.clone(), o.signals.clone());
            }
            if o.prune {
                failed.insert(p.region.clone());
            }
            if o.prune || below_tau || children.is_empty() {
                if o.prune || below_tau {
                    stats.regions_pruned += 1;
                }
                continue;
            }
            let parent = Arc::new((p.region, o.signals));
            let bound = sigma.unwrap_or(f64::INFINITY);
            let mut push = |region: Region| {
                if visited.as_mut().is_none_or(|v| v.insert(region.clone())) {
                    frontier.push_back(Pending {
                        region,
                        parent: Some(parent.clone()),
                        bound,
                    });
                }
            };
            match spec.exploration {
                // Reversed so the stack pops children in ascending order.
                Exploration::Dfs => children.into_iter().rev().for_each(&mut push),
                Exploration::Bfs => children.into_iter().for_each(&mut push),
            }
        }

        if let Some((_, n)) = top {
            best.sort_by(rank_order);
            best.truncate(n);
            if best.len() == n {
                tau = best[n - 1].0;
            }
        }
    }

    if let Some((signal, n)) = top {
        cut_top_n(&mut result, signal, n);
    }
    stats.regions_emitted = result.len() as u64;
    finish_reads(cube, before, &mut stats);
    Ok((result, stats))
}

/// Top-N crawl with a dynamic threshold: after `[]` and all degree-1 regions are
/// scored, the running n-th best value prunes every subtree whose root scores below it.
pub fn topn_crawl(cube: &dyn Cube, spec: &CrawlSpec, options: &CrawlOptions) -> Result<(ResultCube, CrawlStats)> {
    if spec.top_n.is_none() {
        return Err(Error::Spec("topn_crawl needs a top_n signal".into()));
    }
    top_down_crawl(cube, spec, options)
}

/// Pruned crawl (`naive = false`) or the naive oracle.
pub fn crawl(cube: &dyn Cube, spec: &CrawlSpec, options: &CrawlOptions, naive: bool) -> Result<(ResultCube, CrawlStats)> {
    if naive {
        naive_crawl(cube, spec, options)
    } else {
        top_down_crawl(cube, spec, options)
    }
}
