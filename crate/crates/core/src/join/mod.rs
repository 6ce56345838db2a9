//! Cube join: meld two cubes into one, either per view (LOCAL) or through a
//! single join of both cellsets (GLOBAL). Both strategies give identical views.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cube::{
    build_cellset, CellKey, CellsetCube, Cube, Dimension, DimensionSchema, FeatureFrame, FeatureRequest,
    Measure, ReadStats, Region, Value,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinKind {
    /// Keep regions present in both cubes.
    #[default]
    Inner,
    /// Keep every left region; absent right measures are null.
    Left,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JoinStrategy {
    /// Join the two sides' views on every request.
    #[default]
    Local,
    /// Join both cellsets once at construction and read views from the result.
    Global,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JoinSpec {
    /// Join dimensions; must include every dimension the two cubes share.
    pub on: Vec<String>,
    #[serde(default = "default_left_prefix")]
    pub left_prefix: String,
    #[serde(default = "default_right_prefix")]
    pub right_prefix: String,
    #[serde(default)]
    pub kind: JoinKind,
}

fn default_left_prefix() -> String {
    "left.".into()
}

fn default_right_prefix() -> String {
    "right.".into()
}

impl JoinSpec {
    pub fn new<S: Into<String>>(on: impl IntoIterator<Item = S>) -> Self {
        JoinSpec {
            on: on.into_iter().map(Into::into).collect(),
            left_prefix: default_left_prefix(),
            right_prefix: default_right_prefix(),
            kind: JoinKind::Inner,
        }
    }

    pub fn kind(mut self, kind: JoinKind) -> Self {
        self.kind = kind;
        self
    }

    pub fn prefixes(mut self, left: impl Into<String>, right: impl Into<String>) -> Self {
        self.left_prefix = left.into();
        self.right_prefix = right.into();
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Left,
    Right,
}

/// Counts of relational joins performed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct JoinStats {
    pub local_joins: u64,
    pub global_joins: u64,
}

/// The joined cube. Dimensions are the join dimensions, then left-only, then
/// right-only; measures carry their side's prefix.
pub struct JoinedCube {
    left: Arc<dyn Cube>,
    right: Arc<dyn Cube>,
    spec: JoinSpec,
    strategy: JoinStrategy,
    schema: DimensionSchema,
    left_dims: Vec<String>,
    right_dims: Vec<String>,
    cellset: Option<CellsetCube>,
    local_joins: AtomicU64,
}

impl std::fmt::Debug for JoinedCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("JoinedCube")
            .field("spec", &self.spec)
            .field("strategy", &self.strategy)
            .field("schema", &self.schema)
            .finish_non_exhaustive()
    }
}

/// Joins `left` and `right` under `spec`. GLOBAL builds the joined cellset eagerly.
pub fn join_cubes(left: Arc<dyn Cube>, right: Arc<dyn Cube>, spec: JoinSpec, strategy: JoinStrategy) -> Result<JoinedCube> {
    let (ls, rs) = (left.schema(), right.schema());
    if spec.left_prefix.is_empty() || spec.right_prefix.is_empty() || spec.left_prefix == spec.right_prefix {
        return Err(Error::Join("join prefixes must be nonempty and distinct".into()));
    }
    let mut dims: Vec<Dimension> = Vec::new();
    for d in &spec.on {
        let (l, r) = match (ls.dimension(d), rs.dimension(d)) {
            (Ok(l), Ok(r)) => (l, r),
            _ => return Err(Error::Join(format!("join dimension `{d}` is missing from one side"))),
        };
        if l.kind != r.kind {
            return Err(Error::Join(format!(
                "join dimension `{d}` is {:?} on the left and {:?} on the right",
                l.kind, r.kind
            )));
        }
        if dims.iter().any(|x| x.name == *d) {
            return Err(Error::Join(format!("join dimension `{d}` listed twice")));
        }
        dims.push(l.clone());
    }
    for d in ls.dimensions() {
        if rs.dimension_index(&d.name).is_some() && !spec.on.contains(&d.name) {
            return Err(Error::Join(format!(
                "dimension `{}` is shared by both cubes but is not a join dimension",
                d.name
            )));
        }
    }
    let right_only: Vec<&Dimension> = rs.dimensions().iter().filter(|d| !spec.on.contains(&d.name)).collect();
    if spec.kind == JoinKind::Left && !right_only.is_empty() {
        return Err(Error::Join(format!(
            "a left join needs every right dimension to be a join dimension; `{}` is not",
            right_only[0].name
        )));
    }
    dims.extend(ls.dimensions().iter().filter(|d| !spec.on.contains(&d.name)).cloned());
    dims.extend(right_only.into_iter().cloned());

    let measures = ls
        .measures()
        .iter()
        .map(|m| Measure::stored(format!("{}{}", spec.left_prefix, m.name)))
        .chain(rs.measures().iter().map(|m| Measure::stored(format!("{}{}", spec.right_prefix, m.name))))
        .collect();
    let schema = DimensionSchema::new(dims, measures).map_err(|e| Error::Join(e.to_string()))?;

    let mut joined = JoinedCube {
        left_dims: ls.dimension_names().map(String::from).collect(),
        right_dims: rs.dimension_names().map(String::from).collect(),
        left,
        right,
        spec,
        strategy,
        schema,
        cellset: None,
        local_joins: AtomicU64::new(0),
    };
    if strategy == JoinStrategy::Global {
        joined.cellset = Some(joined.join_cellsets()?);
    }
    Ok(joined)
}

impl JoinedCube {
    pub fn strategy(&self) -> JoinStrategy {
        self.strategy
    }

    pub fn spec(&self) -> &JoinSpec {
        &self.spec
    }

    /// The joined cellset of a GLOBAL join.
    pub fn cellset(&self) -> Option<&CellsetCube> {
        self.cellset.as_ref()
    }

    pub fn stats(&self) -> JoinStats {
        JoinStats {
            local_joins: self.local_joins.load(Ordering::Relaxed),
            global_joins: u64::from(self.cellset.is_some()),
        }
    }

    /// Maps a requested measure name to its side and unprefixed name.
    fn resolve(&self, name: &str) -> Result<(Side, String)> {
        let (ls, rs) = (self.left.schema(), self.right.schema());
        if let Some(m) = name.strip_prefix(&self.spec.left_prefix) {
            if ls.measure_index(m).is_some() {
                return Ok((Side::Left, m.to_string()));
            }
        }
        if let Some(m) = name.strip_prefix(&self.spec.right_prefix) {
            if rs.measure_index(m).is_some() {
                return Ok((Side::Right, m.to_string()));
            }
        }
        match (ls.measure_index(name).is_some(), rs.measure_index(name).is_some()) {
            (true, true) => Err(Error::Request(format!(
                "measure `{name}` exists on both sides; use `{}{name}` or `{}{name}`",
                self.spec.left_prefix, self.spec.right_prefix
            ))),
            (true, false) => Ok((Side::Left, name.to_string())),
            (false, true) => Ok((Side::Right, name.to_string())),
            (false, false) => Err(Error::Schema(format!("unknown measure `{name}`"))),
        }
    }

    fn prefixed(&self, side: Side, name: &str) -> String {
        match side {
            Side::Left => format!("{}{name}", self.spec.left_prefix),
            Side::Right => format!("{}{name}", self.spec.right_prefix),
        }
    }

    fn check_request(&self, region: &Region, request: &FeatureRequest) -> Result<Vec<(Side, String)>> {
        region.validate(&self.schema)?;
        FeatureRequest::attributes(request.attributes.clone()).validate(&self.schema)?;
        let mut seen = std::collections::HashSet::new();
        for m in &request.metrics {
            if !seen.insert(m) {
                return Err(Error::Request(format!("measure `{m}` requested twice")));
            }
        }
        request.metrics.iter().map(|m| self.resolve(m)).collect()
    }

    fn join_cellsets(&self) -> Result<CellsetCube> {
        let lc = build_cellset(self.left.as_ref(), &self.left_dims)?;
        let rc = build_cellset(self.right.as_ref(), &self.right_dims)?;
        let slot = |cs: &CellsetCube, d: &str| cs.schema().dimension_index(d).expect("own dimension");
        let on_l: Vec<usize> = self.spec.on.iter().map(|d| slot(&lc, d)).collect();
        let on_r: Vec<usize> = self.spec.on.iter().map(|d| slot(&rc, d)).collect();
        let only = |cs: &CellsetCube| -> Vec<usize> {
            cs.schema()
                .dimension_names()
                .enumerate()
                .filter(|(_, d)| !self.spec.on.iter().any(|j| j == d))
                .map(|(i, _)| i)
                .collect()
        };
        let (l_only, r_only) = (only(&lc), only(&rc));
        let right_width = rc.schema().measures().len();

        let mut by_key: HashMap<CellKey, Vec<(&CellKey, &[Option<f64>])>> = HashMap::new();
        for (key, values) in rc.cells() {
            by_key
                .entry(on_r.iter().map(|&i| key[i].clone()).collect())
                .or_default()
                .push((key, values));
        }
        let mut cells = Vec::new();
        for (lkey, lvalues) in lc.cells() {
            let jkey: CellKey = on_l.iter().map(|&i| lkey[i].clone()).collect();
            let mut head = jkey.clone();
            head.extend(l_only.iter().map(|&i| lkey[i].clone()));
            match by_key.get(&jkey) {
                Some(matches) => {
                    for (rkey, rvalues) in matches {
                        let mut key = head.clone();
                        key.extend(r_only.iter().map(|&i| rkey[i].clone()));
                        cells.push((key, lvalues.iter().chain(rvalues.iter()).copied().collect()));
                    }
                }
                None if self.spec.kind == JoinKind::Left => {
                    let values = lvalues.iter().copied().chain(std::iter::repeat_n(None, right_width)).collect();
                    cells.push((head, values));
                }
                None => {}
            }
        }
        CellsetCube::from_cells(self.schema.clone(), cells)
    }

    fn local_view(&self, region: &Region, request: &FeatureRequest, resolved: &[(Side, String)]) -> Result<FeatureFrame> {
        let side_request = |side: Side, dims: &[String]| {
            let attrs: Vec<String> = request.attributes.iter().filter(|a| dims.contains(a)).cloned().collect();
            let mut metrics: Vec<String> = Vec::new();
            for (s, m) in resolved {
                if *s == side && !metrics.contains(m) {
                    metrics.push(m.clone());
                }
            }
            FeatureRequest::new(attrs, metrics)
        };
        let (lreq, rreq) = (side_request(Side::Left, &self.left_dims), side_request(Side::Right, &self.right_dims));
        let lf = self.left.view(&region.restrict(self.left_dims.iter().map(String::as_str)), &lreq)?;
        let rf = self.right.view(&region.restrict(self.right_dims.iter().map(String::as_str)), &rreq)?;
        self.local_joins.fetch_add(1, Ordering::Relaxed);

        let key_attrs: Vec<&String> = request.attributes.iter().filter(|a| self.spec.on.contains(a)).collect();
        let key_of = |f: &FeatureFrame, row: usize| -> Vec<Value> {
            key_attrs.iter().map(|a| f.attribute(a).expect("requested")[row].clone()).collect()
        };
        let mut right_rows: HashMap<Vec<Value>, Vec<usize>> = HashMap::new();
        for row in 0..rf.num_rows() {
            right_rows.entry(key_of(&rf, row)).or_default().push(row);
        }
        let pick_attrs = |lrow: usize, rrow: Option<usize>| -> Vec<Value> {
            request
                .attributes
                .iter()
                .map(|a| match lf.attribute(a) {
                    Some(col) => col[lrow].clone(),
                    None => rf.attribute(a).expect("right attribute")[rrow.expect("matched")].clone(),
                })
                .collect()
        };
        let pick_measures = |lrow: usize, rrow: Option<usize>| -> Vec<Option<f64>> {
            resolved
                .iter()
                .map(|(side, m)| match side {
                    Side::Left => lf.measure(m).expect("requested").get(lrow),
                    Side::Right => rrow.and_then(|r| rf.measure(m).expect("requested").get(r)),
                })
                .collect()
        };
        let mut rows = Vec::new();
        for lrow in 0..lf.num_rows() {
            match right_rows.get(&key_of(&lf, lrow)) {
                Some(matches) => {
                    for &rrow in matches {
                        rows.push((pick_attrs(lrow, Some(rrow)), pick_measures(lrow, Some(rrow))));
                    }
                }
                None if self.spec.kind == JoinKind::Left => rows.push((pick_attrs(lrow, None), pick_measures(lrow, None))),
                None => {}
            }
        }
        FeatureFrame::from_rows(request.attributes.clone(), request.metrics.clone(), rows)
    }

    fn global_view(&self, cellset: &CellsetCube, region: &Region, request: &FeatureRequest, resolved: &[(Side, String)]) -> Result<FeatureFrame> {
        let names: Vec<String> = resolved.iter().map(|(s, m)| self.prefixed(*s, m)).collect();
        let mut unique = names.clone();
        unique.sort();
        unique.dedup();
        let frame = cellset.view(region, &FeatureRequest::new(request.attributes.clone(), unique.clone()))?;
        let cols: Vec<usize> = names.iter().map(|n| unique.iter().position(|u| u == n).expect("listed")).collect();
        let rows = frame
            .rows()
            .map(|(attrs, values)| (attrs, cols.iter().map(|&c| values[c]).collect()))
            .collect();
        FeatureFrame::from_rows(request.attributes.clone(), request.metrics.clone(), rows)
    }
}

impl Cube for JoinedCube {
    fn schema(&self) -> &DimensionSchema {
        &self.schema
    }

    fn view(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame> {
        let resolved = self.check_request(region, request)?;
        match &self.cellset {
            Some(cs) => self.global_view(cs, region, request, &resolved),
            None => self.local_view(region, request, &resolved),
        }
    }

    fn read_stats(&self) -> ReadStats {
        let (l, r) = (self.left.read_stats(), self.right.read_stats());
        ReadStats {
            chunk_reads: l.chunk_reads + r.chunk_reads,
            slice_reads: l.slice_reads + r.slice_reads,
        }
    }
}
