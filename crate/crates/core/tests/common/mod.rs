#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use hoca_core::cube::{BaseTable, BaseTableCube, Dimension, DimensionSchema, Measure, Region, Value, ValueKind};
use rand::Rng;

/// A random table kept alongside its rows for brute-force oracles.
pub struct Sample {
    pub dims: Vec<String>,
    pub measures: Vec<String>,
    pub rows: Vec<(Vec<Value>, Vec<f64>)>,
    pub cube: BaseTableCube,
}

/// String dimensions `d0..`, values `v0..`, nonnegative integer-valued SUM measures `m0..`.
pub fn random_sample<R: Rng>(rng: &mut R, n_dims: usize, n_values: usize, n_rows: usize, n_measures: usize) -> Sample {
    let dims: Vec<String> = (0..n_dims).map(|i| format!("d{i}")).collect();
    let measures: Vec<String> = (0..n_measures).map(|i| format!("m{i}")).collect();
    random_named(rng, &dims, &measures, n_values, n_rows)
}

/// Like [`random_sample`] with caller-chosen dimension and measure names.
pub fn random_named<R: Rng>(rng: &mut R, dims: &[String], measures: &[String], n_values: usize, n_rows: usize) -> Sample {
    let schema = DimensionSchema::new(
        dims.iter().map(|d| Dimension::new(d.clone(), ValueKind::String)).collect(),
        measures.iter().map(|m| Measure::sum(m.clone())).collect(),
    )
    .unwrap();
    let mut b = BaseTable::builder(schema).unwrap();
    let mut rows = Vec::new();
    for _ in 0..n_rows {
        let vals: Vec<Value> = (0..dims.len())
            .map(|_| Value::str(format!("v{}", rng.gen_range(0..n_values))))
            .collect();
        let sums: Vec<f64> = (0..measures.len()).map(|_| rng.gen_range(0..20) as f64).collect();
        b.push(vals.clone(), &sums).unwrap();
        rows.push((vals, sums));
    }
    Sample {
        dims: dims.to_vec(),
        measures: measures.to_vec(),
        rows,
        cube: BaseTableCube::new(b.build()),
    }
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Sample {
    pub fn matches(&self, region: &Region, row: &[Value]) -> bool {
        region
            .bindings()
            .all(|(d, v)| row[self.dims.iter().position(|x| x == d).unwrap()] == *v)
    }

    /// Brute-force total of measure `m` in `region`.
    pub fn total(&self, region: &Region, m: usize) -> f64 {
        self.rows
            .iter()
            .filter(|(v, _)| self.matches(region, v))
            .map(|(_, s)| s[m])
            .sum()
    }

    pub fn count(&self, region: &Region) -> usize {
        self.rows.iter().filter(|(v, _)| self.matches(region, v)).count()
    }

    /// Every nonempty region over `dims` (any subset), plus `[]`, by brute force.
    pub fn all_regions(&self, dims: &[String]) -> BTreeSet<Region> {
        let mut out = BTreeSet::new();
        for mask in 0u32..(1 << dims.len()) {
            for (vals, _) in &self.rows {
                let pairs = dims.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, d)| {
                    let j = self.dims.iter().position(|x| x == d).unwrap();
                    (d.clone(), vals[j].clone())
                });
                out.insert(Region::from_pairs(pairs));
            }
        }
        out.insert(Region::empty());
        out
    }
}

/// Transactions over items `i0..` as one row per transaction: a boolean per item and a `tid`.
pub struct Transactions {
    pub items: Vec<String>,
    pub sets: Vec<BTreeSet<usize>>,
    pub cube: BaseTableCube,
}

pub fn transactions(items: usize, sets: Vec<BTreeSet<usize>>) -> Transactions {
    let names: Vec<String> = (0..items).map(|i| format!("i{i}")).collect();
    let mut dims: Vec<Dimension> = names.iter().map(|n| Dimension::new(n.clone(), ValueKind::Boolean)).collect();
    dims.push(Dimension::new("tid", ValueKind::Integer));
    let schema = DimensionSchema::new(dims, vec![Measure::count_distinct("transactions", ["tid"])]).unwrap();
    let mut b = BaseTable::builder(schema).unwrap();
    for (t, set) in sets.iter().enumerate() {
        let mut row: Vec<Value> = (0..items).map(|i| Value::Bool(set.contains(&i))).collect();
        row.push(Value::Int(t as i64));
        b.push(row, &[]).unwrap();
    }
    Transactions {
        items: names,
        sets,
        cube: BaseTableCube::new(b.build()),
    }
}

pub fn random_transactions<R: Rng>(rng: &mut R, items: usize, n: usize) -> Transactions {
    let p = rng.gen_range(0.2..0.7);
    let sets = (0..n)
        .map(|_| (0..items).filter(|_| rng.gen_bool(p)).collect())
        .collect();
    transactions(items, sets)
}

/// Brute-force frequent itemsets: every nonempty item subset with support >= `min`.
pub fn frequent_itemsets(t: &Transactions, min: usize) -> BTreeMap<BTreeSet<usize>, usize> {
    let n = t.items.len();
    let mut out = BTreeMap::new();
    for mask in 1u32..(1 << n) {
        let set: BTreeSet<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let support = t.sets.iter().filter(|s| set.is_subset(s)).count();
        if support >= min {
            out.insert(set, support);
        }
    }
    out
}

/// Some item below `min` support shares a transaction with another item, so its
/// supersets occur in the data and a pruned crawl can skip them.
pub fn failing_item_has_superset(t: &Transactions, min: usize) -> bool {
    (0..t.items.len()).any(|i| {
        let support = t.sets.iter().filter(|s| s.contains(&i)).count();
        support < min && t.sets.iter().any(|s| s.contains(&i) && s.len() > 1)
    })
}

/// Reads an itemset back from a region binding items to `true`.
pub fn itemset_of(t: &Transactions, region: &Region) -> BTreeSet<usize> {
    region
        .bindings()
        .map(|(d, v)| {
            assert_eq!(*v, Value::Bool(true));
            t.items.iter().position(|x| x == d).unwrap()
        })
        .collect()
}
