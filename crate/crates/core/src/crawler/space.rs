use std::collections::{BTreeSet, HashSet};

use super::{CrawlSpec, DimensionOrder};
use crate::cube::{validate_chains, Cube, FeatureRequest, Region, Value};
use crate::error::{Error, Result};

/// The compiled region space of a crawl: ordered crawl dimensions, the emitted
/// grouping sets, hierarchy chains and value filters.
///
/// Dimension subsets are bitmasks over the ordered crawl dimensions.
#[derive(Debug, Clone)]
pub struct RegionSpace {
    dims: Vec<String>,
    /// `None` emits every subset.
    sets: Option<Vec<u64>>,
    max_degree: usize,
    min_degree: usize,
    /// Chains as indices into `dims`, in chain order.
    chains: Vec<Vec<usize>>,
    filters: Vec<Option<HashSet<Value>>>,
}

impl RegionSpace {
    pub fn new(cube: &dyn Cube, spec: &CrawlSpec) -> Result<Self> {
        let schema = cube.schema();
        let mut dims: Vec<String> = if !spec.dimensions.is_empty() {
            spec.dimensions.clone()
        } else if !spec.grouping_sets.is_empty() {
            let mut seen = HashSet::new();
            spec.grouping_sets
                .iter()
                .flatten()
                .filter(|d| seen.insert(d.as_str()))
                .cloned()
                .collect()
        } else {
            schema.dimension_names().map(String::from).collect()
        };
        let mut seen = HashSet::new();
        for d in &dims {
            schema.dimension(d)?;
            if !seen.insert(d) {
                return Err(Error::Spec(format!("crawl dimension `{d}` listed twice")));
            }
        }
        if dims.len() > 63 {
            return Err(Error::Spec(format!("{} crawl dimensions exceed the limit of 63", dims.len())));
        }
        if spec.dimension_order == DimensionOrder::AscendingCardinality {
            let mut keyed = dims
                .into_iter()
                .map(|d| Ok((cube.distinct_values(&Region::empty(), &d)?.len(), d)))
                .collect::<Result<Vec<_>>>()?;
            keyed.sort_by_key(|(c, _)| *c);
            dims = keyed.into_iter().map(|(_, d)| d).collect();
        }

        let raw_chains = spec.hierarchies.as_deref().unwrap_or(schema.hierarchies());
        validate_chains(schema, raw_chains)?;
        let mut chains = Vec::new();
        for chain in raw_chains {
            let members: Vec<&String> = chain.iter().filter(|d| dims.contains(d)).collect();
            if members.len() < 2 {
                continue;
            }
            // Keep chain members in chain order by permuting them among their own positions.
            let mut slots: Vec<usize> = members
                .iter()
                .map(|d| dims.iter().position(|x| x == *d).expect("member"))
                .collect();
            slots.sort_unstable();
            let names: Vec<String> = members.into_iter().cloned().collect();
            for (slot, name) in slots.iter().zip(&names) {
                dims[*slot] = name.clone();
            }
            chains.push(slots);
        }

        let index = |d: &str| dims.iter().position(|x| x == d);
        let max_degree = spec.max_degree.unwrap_or(dims.len());
        let mut space = RegionSpace {
            sets: None,
            max_degree,
            min_degree: spec.min_degree,
            chains,
            filters: vec![None; dims.len()],
            dims: dims.clone(),
        };

        if !spec.grouping_sets.is_empty() {
            let mut sets = Vec::new();
            for gs in &spec.grouping_sets {
                let mut mask = 0u64;
                for d in gs {
                    let i = index(d).ok_or_else(|| {
                        Error::Spec(format!("grouping set dimension `{d}` is not a crawl dimension"))
                    })?;
                    if mask & (1 << i) != 0 {
                        return Err(Error::Spec(format!("grouping set {gs:?} repeats `{d}`")));
                    }
                    mask |= 1 << i;
                }
                if !space.consistent(mask) {
                    return Err(Error::Spec(format!("grouping set {gs:?} breaks a hierarchy chain")));
                }
                if gs.len() > max_degree {
                    return Err(Error::Spec(format!("grouping set {gs:?} exceeds max_degree {max_degree}")));
                }
                if !sets.contains(&mask) {
                    sets.push(mask);
                }
            }
            space.sets = Some(sets);
        }

        for (d, values) in &spec.value_filter {
            let i = index(d).ok_or_else(|| {
                Error::Spec(format!("value filter on `{d}`, which is not a crawl dimension"))
            })?;
            let kind = schema.dimension(d)?.kind;
            if let Some(v) = values.iter().find(|v| !v.conforms_to(kind)) {
                return Err(Error::Spec(format!("value filter on `{d}` lists `{v}` of the wrong type")));
            }
            space.filters[i] = Some(values.iter().cloned().collect());
        }
        Ok(space)
    }

    /// Crawl dimensions in child-generation order.
    pub fn dimensions(&self) -> &[String] {
        &self.dims
    }

    fn mask_of(&self, region: &Region) -> Result<u64> {
        region.dimensions().try_fold(0u64, |m, d| {
            let i = self.dims.iter().position(|x| x == d).ok_or_else(|| {
                Error::Spec(format!("region {region} binds `{d}`, which is not a crawl dimension"))
            })?;
            Ok(m | (1 << i))
        })
    }

    /// Every chain's bound members form a prefix of the chain.
    fn consistent(&self, mask: u64) -> bool {
        self.chains.iter().all(|chain| {
            let bound = chain.iter().take_while(|&&i| mask & (1 << i) != 0).count();
            chain[bound..].iter().all(|&i| mask & (1 << i) == 0)
        })
    }

    fn admits(&self, mask: u64) -> bool {
        (mask.count_ones() as usize) <= self.max_degree && self.consistent(mask)
    }

    /// Some emitted grouping set contains `mask`.
    fn extendable(&self, mask: u64) -> bool {
        self.admits(mask)
            && match &self.sets {
                None => true,
                Some(sets) => sets.iter().any(|s| s & mask == mask),
            }
    }

    fn value_allowed(&self, dim: usize, value: &Value) -> bool {
        self.filters[dim].as_ref().is_none_or(|f| f.contains(value))
    }

    /// Whether `region` belongs to an emitted grouping set.
    pub fn contains(&self, region: &Region) -> bool {
        let Ok(mask) = self.mask_of(region) else {
            return false;
        };
        let member = match &self.sets {
            None => self.admits(mask),
            Some(sets) => sets.contains(&mask),
        };
        member
            && region.degree() >= self.min_degree
            && region.bindings().all(|(d, v)| {
                let i = self.dims.iter().position(|x| x == d).expect("masked");
                self.value_allowed(i, v)
            })
    }

    /// One-binding extensions of `region` over dimensions strictly after its last
    /// bound dimension, with values observed inside `region`.
    pub fn children(&self, cube: &dyn Cube, region: &Region) -> Result<Vec<Region>> {
        let mask = self.mask_of(region)?;
        let start = if mask == 0 { 0 } else { 64 - mask.leading_zeros() as usize };
        let mut out = Vec::new();
        for j in start..self.dims.len() {
            if !self.extendable(mask | (1 << j)) {
                continue;
            }
            for v in cube.distinct_values(region, &self.dims[j])? {
                if self.value_allowed(j, &v) {
                    out.push(region.with(self.dims[j].clone(), v));
                }
            }
        }
        Ok(out)
    }

    /// Dimension subsets emitted by this space, ascending by mask.
    fn emitted_masks(&self, cap: usize) -> Result<Vec<u64>> {
        match &self.sets {
            Some(sets) => {
                let mut s = sets.clone();
                s.retain(|m| m.count_ones() as usize >= self.min_degree);
                s.sort_unstable();
                Ok(s)
            }
            None => {
                let mut out = Vec::new();
                let mut stack = vec![(0u64, 0usize)];
                while let Some((mask, next)) = stack.pop() {
                    out.push(mask);
                    if out.len() > cap {
                        return Err(Error::Refused { size: out.len(), cap });
                    }
                    for j in next..self.dims.len() {
                        let m = mask | (1 << j);
                        if self.admits(m) {
                            stack.push((m, j + 1));
                        }
                    }
                }
                out.retain(|m| m.count_ones() as usize >= self.min_degree);
                out.sort_unstable();
                Ok(out)
            }
        }
    }

    /// Every nonempty region of the space (plus `[]` when emitted), canonical order.
    ///
    /// Refuses when more than `cap` regions exist.
    pub fn enumerate(&self, cube: &dyn Cube, cap: usize) -> Result<Vec<Region>> {
        let mut out = BTreeSet::new();
        for mask in self.emitted_masks(cap)? {
            let idx: Vec<usize> = (0..self.dims.len()).filter(|i| mask & (1 << i) != 0).collect();
            let attrs: Vec<String> = idx.iter().map(|&i| self.dims[i].clone()).collect();
            let frame = cube.view(&Region::empty(), &FeatureRequest::attributes(attrs.clone()))?;
            for (values, _) in frame.rows() {
                if idx.iter().zip(&values).all(|(&i, v)| self.value_allowed(i, v)) {
                    out.insert(Region::from_pairs(attrs.iter().cloned().zip(values)));
                    if out.len() > cap {
                        return Err(Error::Refused { size: out.len(), cap });
                    }
                }
            }
        }
        Ok(out.into_iter().collect())
    }
}

/// Children of `region` under `spec`'s region space.
pub fn region_children(cube: &dyn Cube, spec: &CrawlSpec, region: &Region) -> Result<Vec<Region>> {
    RegionSpace::new(cube, spec)?.children(cube, region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cube::{BaseTable, BaseTableCube, Dimension, DimensionSchema, Measure, ValueKind};
    use crate::ram::{fixtures, EntityWeightModel};

    fn spec() -> CrawlSpec {
        CrawlSpec::new(EntityWeightModel::new("Revenue")).dimensions(["Device", "Browser"])
    }

    fn r(pairs: &[(&str, &str)]) -> Region {
        Region::from_pairs(pairs.iter().map(|(d, v)| (*d, Value::str(*v))))
    }

    #[test]
    fn children_follow_dimension_order() {
        let cube = fixtures::t1();
        let kids = region_children(&cube, &spec(), &Region::empty()).unwrap();
        assert_eq!(
            kids,
            vec![
                r(&[("Device", "Pixel")]),
                r(&[("Device", "iPhone")]),
                r(&[("Browser", "Chrome")]),
                r(&[("Browser", "Safari")]),
            ]
        );
        let kids = region_children(&cube, &spec(), &r(&[("Device", "Pixel")])).unwrap();
        assert_eq!(
            kids,
            vec![
                r(&[("Device", "Pixel"), ("Browser", "Chrome")]),
                r(&[("Device", "Pixel"), ("Browser", "Safari")]),
            ]
        );
        // Only values present under the parent.
        let kids = region_children(&cube, &spec(), &r(&[("Device", "iPhone")])).unwrap();
        assert_eq!(kids, vec![r(&[("Device", "iPhone"), ("Browser", "Safari")])]);
        assert!(region_children(&cube, &spec(), &r(&[("Browser", "Safari")]))
            .unwrap()
            .is_empty());
    }

    fn geo() -> BaseTableCube {
        let schema = DimensionSchema::new(
            vec![
                Dimension::new("City", ValueKind::String),
                Dimension::new("State", ValueKind::String),
                Dimension::new("Country", ValueKind::String),
            ],
            vec![Measure::sum("n")],
        )
        .unwrap();
        let mut b = BaseTable::builder(schema).unwrap();
        for (city, state, country) in [("SF", "CA", "US"), ("LA", "CA", "US"), ("Austin", "TX", "US"), ("Lyon", "ARA", "FR")] {
            b.push([Value::str(city), Value::str(state), Value::str(country)], &[1.0])
                .unwrap();
        }
        BaseTableCube::new(b.build())
    }

    #[test]
    fn hierarchy_chains() {
        let cube = geo();
        let spec = CrawlSpec::new(EntityWeightModel::new("n")).hierarchy(["Country", "State", "City"]);
        let space = RegionSpace::new(&cube, &spec).unwrap();
        assert_eq!(space.dimensions(), ["Country", "State", "City"]);
        let all = space.enumerate(&cube, 1000).unwrap();
        assert!(all.iter().all(|g| !g.binds("State") || g.binds("Country")));
        assert!(all.iter().all(|g| !g.binds("City") || g.binds("State")));
        // [], 2 countries, 3 states, 4 cities.
        assert_eq!(all.len(), 1 + 2 + 3 + 4);
        let kids = space.children(&cube, &Region::empty()).unwrap();
        assert_eq!(kids, vec![r(&[("Country", "FR")]), r(&[("Country", "US")])]);
        assert!(matches!(
            RegionSpace::new(&cube, &spec.clone().dimensions(["City", "State", "Country"]).grouping_set(["State"])),
            Err(Error::Spec(_))
        ));
    }

    #[test]
    fn grouping_sets_and_degree() {
        let cube = fixtures::t1();
        let gs = spec().grouping_set(["Device", "Browser"]);
        let space = RegionSpace::new(&cube, &gs).unwrap();
        let all = space.enumerate(&cube, 1000).unwrap();
        assert_eq!(all.len(), 3);
        assert!(!space.contains(&r(&[("Device", "Pixel")])));
        // The prefix still has children so the grouping set is reachable.
        assert_eq!(space.children(&cube, &r(&[("Device", "Pixel")])).unwrap().len(), 2);

        let shallow = RegionSpace::new(&cube, &spec().max_degree(1)).unwrap();
        assert_eq!(shallow.enumerate(&cube, 1000).unwrap().len(), 5);
        assert!(shallow.children(&cube, &r(&[("Device", "Pixel")])).unwrap().is_empty());

        assert!(matches!(
            RegionSpace::new(&cube, &spec()).unwrap().enumerate(&cube, 4),
            Err(Error::Refused { .. })
        ));
    }

    #[test]
    fn cardinality_order_and_filters() {
        let cube = fixtures::t1();
        let s = CrawlSpec::new(EntityWeightModel::new("Revenue"))
            .dimensions(["Device", "Browser", "is_test"])
            .dimension_order(DimensionOrder::AscendingCardinality)
            .value_filter("is_test", vec![Value::Bool(true)]);
        let space = RegionSpace::new(&cube, &s).unwrap();
        assert_eq!(space.dimensions(), ["Device", "Browser", "is_test"]);
        let all = space.enumerate(&cube, 1000).unwrap();
        assert!(all.iter().all(|g| g.get("is_test").is_none_or(|v| *v == Value::Bool(true))));
        assert!(matches!(
            RegionSpace::new(&cube, &s.value_filter("is_test", vec![Value::Int(1)])),
            Err(Error::Spec(_))
        ));
    }
}
