use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Read;

use super::frame::{FeatureFrame, FeatureRequest, MeasureColumn};
use super::region::Region;
use super::schema::{Aggregator, DimensionSchema, Measure};
use super::value::Value;
use super::{Cube, Predicate};
use crate::error::{Error, Result};

/// Dictionary-encoded dimension column with per-value posting lists.
#[derive(Debug, Clone)]
struct DimColumn {
    /// Distinct values, ascending; a code is an index into this.
    dict: Vec<Value>,
    lookup: HashMap<Value, u32>,
    codes: Vec<u32>,
    /// Ascending row ids per code.
    postings: Vec<Vec<u32>>,
}

impl DimColumn {
    fn build(values: Vec<Value>) -> Self {
        let mut dict: Vec<Value> = values.iter().cloned().collect::<HashSet<_>>().into_iter().collect();
        dict.sort();
        let lookup: HashMap<Value, u32> = dict
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        let mut postings = vec![Vec::new(); dict.len()];
        let codes = values
            .iter()
            .enumerate()
            .map(|(row, v)| {
                let code = lookup[v];
                postings[code as usize].push(row as u32);
                code
            })
            .collect();
        DimColumn {
            dict,
            lookup,
            codes,
            postings,
        }
    }
}

/// An immutable columnar base table: dimension columns plus one numeric column per SUM measure.
#[derive(Debug, Clone)]
pub struct BaseTable {
    schema: DimensionSchema,
    dims: Vec<DimColumn>,
    /// Indexed like `schema.measures()`; `None` for non-SUM measures.
    sums: Vec<Option<Vec<f64>>>,
    len: usize,
}

/// Row-at-a-time builder for [`BaseTable`].
#[derive(Debug)]
pub struct TableBuilder {
    schema: DimensionSchema,
    dims: Vec<Vec<Value>>,
    sums: Vec<Option<Vec<f64>>>,
}

impl TableBuilder {
    pub fn new(schema: DimensionSchema) -> Result<Self> {
        schema.validate()?;
        if let Some(m) = schema.measures().iter().find(|m| m.aggregator == Aggregator::Stored) {
            return Err(Error::Schema(format!(
                "base tables cannot hold stored measure `{}`",
                m.name
            )));
        }
        let dims = vec![Vec::new(); schema.dimensions().len()];
        let sums = schema
            .measures()
            .iter()
            .map(|m| m.is_sum().then(Vec::new))
            .collect();
        Ok(TableBuilder { schema, dims, sums })
    }

    /// Appends a row: one value per dimension, one number per SUM measure (schema order).
    pub fn push<V: Into<Value>>(
        &mut self,
        dims: impl IntoIterator<Item = V>,
        sums: &[f64],
    ) -> Result<&mut Self> {
        let dims: Vec<Value> = dims.into_iter().map(Into::into).collect();
        if dims.len() != self.dims.len() {
            return Err(Error::Schema(format!(
                "row has {} dimension values, schema has {}",
                dims.len(),
                self.dims.len()
            )));
        }
        let n_sum = self.sums.iter().filter(|s| s.is_some()).count();
        if sums.len() != n_sum {
            return Err(Error::Schema(format!(
                "row has {} measure values, schema has {n_sum} SUM measures",
                sums.len()
            )));
        }
        for (v, d) in dims.iter().zip(self.schema.dimensions()) {
            if !v.conforms_to(d.kind) {
                return Err(Error::Schema(format!(
                    "value `{v}` does not match the {:?} domain of `{}`",
                    d.kind, d.name
                )));
            }
        }
        for (col, v) in self.dims.iter_mut().zip(dims) {
            col.push(v);
        }
        let mut it = sums.iter();
        for col in self.sums.iter_mut().flatten() {
            col.push(*it.next().expect("width checked"));
        }
        Ok(self)
    }

    pub fn build(self) -> BaseTable {
        let len = self.dims.first().map_or_else(
            || self.sums.iter().flatten().next().map_or(0, Vec::len),
            Vec::len,
        );
        BaseTable {
            dims: self.dims.into_iter().map(DimColumn::build).collect(),
            sums: self.sums,
            schema: self.schema,
            len,
        }
    }
}

impl BaseTable {
    pub fn builder(schema: DimensionSchema) -> Result<TableBuilder> {
        TableBuilder::new(schema)
    }

    /// Loads a CSV with a header row. Every schema dimension and SUM measure must be a column;
    /// other columns are ignored. Empty dimension cells load as `Null`.
    pub fn from_csv<R: Read>(reader: R, schema: DimensionSchema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Schema(format!("CSV has no column `{name}`")))
        };
        let dim_cols = schema
            .dimensions()
            .iter()
            .map(|d| col(&d.name).map(|i| (i, d.kind)))
            .collect::<Result<Vec<_>>>()?;
        let sum_cols = schema
            .measures()
            .iter()
            .filter(|m| m.is_sum())
            .map(|m| col(&m.name).map(|i| (i, m.name.clone())))
            .collect::<Result<Vec<_>>>()?;
        let mut builder = TableBuilder::new(schema)?;
        let mut sums = vec![0.0; sum_cols.len()];
        for (line, record) in rdr.records().enumerate() {
            let record = record?;
            let dims = dim_cols
                .iter()
                .map(|&(i, kind)| Value::parse(record.get(i).unwrap_or(""), kind))
                .collect::<Result<Vec<_>>>()?;
            for (slot, (i, name)) in sums.iter_mut().zip(&sum_cols) {
                let text = record.get(*i).unwrap_or("").trim();
                *slot = text.parse::<f64>().map_err(|_| {
                    Error::Schema(format!(
                        "row {}: measure `{name}` value `{text}` is not a number",
                        line + 2
                    ))
                })?;
            }
            builder.push(dims, &sums)?;
        }
        Ok(builder.build())
    }

    pub fn schema(&self) -> &DimensionSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// A copy of the table with an extra SUM measure holding `value` on every row.
    pub fn with_constant_measure(&self, name: &str, value: f64) -> Result<BaseTable> {
        let mut measures = self.schema.measures().to_vec();
        measures.push(Measure::sum(name));
        let schema = DimensionSchema::with_hierarchies(
            self.schema.dimensions().to_vec(),
            measures,
            self.schema.hierarchies().to_vec(),
        )?;
        let mut sums = self.sums.clone();
        sums.push(Some(vec![value; self.len]));
        Ok(BaseTable {
            schema,
            dims: self.dims.clone(),
            sums,
            len: self.len,
        })
    }

    /// Row ids matching every binding of `region`, ascending.
    pub fn matching_rows(&self, region: &Region) -> Result<Vec<u32>> {
        let mut lists: Vec<&[u32]> = Vec::with_capacity(region.degree());
        for (d, v) in region.bindings() {
            let i = self
                .schema
                .dimension_index(d)
                .ok_or_else(|| Error::Schema(format!("unknown dimension `{d}`")))?;
            match self.dims[i].lookup.get(v) {
                Some(&code) => lists.push(&self.dims[i].postings[code as usize]),
                None => return Ok(Vec::new()),
            }
        }
        if lists.is_empty() {
            return Ok((0..self.len as u32).collect());
        }
        lists.sort_by_key(|l| l.len());
        let mut rows = lists[0].to_vec();
        for other in &lists[1..] {
            rows.retain(|r| other.binary_search(r).is_ok());
            if rows.is_empty() {
                break;
            }
        }
        Ok(rows)
    }

    /// The sub-table of rows matching `region`.
    pub fn filter(&self, region: &Region) -> Result<BaseTable> {
        let rows = self.matching_rows(region)?;
        let mut builder = TableBuilder::new(self.schema.clone())?;
        let mut sums = Vec::new();
        for &r in &rows {
            sums.clear();
            sums.extend(self.sums.iter().flatten().map(|c| c[r as usize]));
            builder.push(self.row_values(r as usize), &sums)?;
        }
        Ok(builder.build())
    }

    /// Dimension values of one row, schema order.
    pub fn row_values(&self, row: usize) -> Vec<Value> {
        self.dims
            .iter()
            .map(|c| c.dict[c.codes[row] as usize].clone())
            .collect()
    }

    /// SUM measure values of one row, schema order of SUM measures.
    pub fn row_sums(&self, row: usize) -> Vec<f64> {
        self.sums.iter().flatten().map(|c| c[row]).collect()
    }

    pub fn dimension_cardinality(&self, dim: &str) -> Result<usize> {
        let i = self
            .schema
            .dimension_index(dim)
            .ok_or_else(|| Error::Schema(format!("unknown dimension `{dim}`")))?;
        Ok(self.dims[i].dict.len())
    }

    fn aggregate(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame> {
        request.validate(&self.schema)?;
        region.validate(&self.schema)?;
        let rows = self.matching_rows(region)?;
        let attr_idx: Vec<usize> = request
            .attributes
            .iter()
            .map(|a| self.schema.dimension_index(a).expect("validated"))
            .collect();
        enum Agg<'a> {
            Sum(&'a [f64]),
            Distinct(Vec<usize>),
        }
        let aggs: Vec<Agg<'_>> = request
            .metrics
            .iter()
            .map(|m| {
                let i = self.schema.measure_index(m).expect("validated");
                match &self.schema.measures()[i].aggregator {
                    Aggregator::Sum => Agg::Sum(self.sums[i].as_deref().expect("sum column")),
                    Aggregator::CountDistinct(cols) => Agg::Distinct(
                        cols.iter()
                            .map(|c| self.schema.dimension_index(c).expect("validated"))
                            .collect(),
                    ),
                    Aggregator::Stored => unreachable!("rejected by TableBuilder"),
                }
            })
            .collect();

        struct Acc {
            sums: Vec<f64>,
            distinct: Vec<HashSet<Vec<u32>>>,
        }
        let new_acc = || Acc {
            sums: vec![0.0; aggs.len()],
            distinct: vec![HashSet::new(); aggs.len()],
        };
        // Sorted dictionaries make code order equal value order.
        let mut groups: BTreeMap<Vec<u32>, Acc> = BTreeMap::new();
        if attr_idx.is_empty() && (region.is_population() || !rows.is_empty()) {
            groups.insert(Vec::new(), new_acc());
        }
        for &r in &rows {
            let r = r as usize;
            let key: Vec<u32> = attr_idx.iter().map(|&i| self.dims[i].codes[r]).collect();
            let acc = groups.entry(key).or_insert_with(new_acc);
            for (k, agg) in aggs.iter().enumerate() {
                match agg {
                    Agg::Sum(col) => acc.sums[k] += col[r],
                    Agg::Distinct(cols) => {
                        acc.distinct[k].insert(cols.iter().map(|&c| self.dims[c].codes[r]).collect());
                    }
                }
            }
        }

        let n = groups.len();
        let mut attributes = vec![Vec::with_capacity(n); attr_idx.len()];
        let mut measures = vec![Vec::with_capacity(n); aggs.len()];
        for (key, acc) in groups {
            for ((col, &code), &d) in attributes.iter_mut().zip(&key).zip(&attr_idx) {
                col.push(self.dims[d].dict[code as usize].clone());
            }
            for (k, col) in measures.iter_mut().enumerate() {
                col.push(match aggs[k] {
                    Agg::Sum(_) => acc.sums[k],
                    Agg::Distinct(_) => acc.distinct[k].len() as f64,
                });
            }
        }
        Ok(FeatureFrame::from_sorted_columns(
            request.attributes.clone(),
            request.metrics.clone(),
            attributes,
            measures.into_iter().map(MeasureColumn::new).collect(),
            n,
        ))
    }
}

/// The cube whose view at a region is `GROUP BY attributes` over the base rows matching it.
#[derive(Debug, Clone)]
pub struct BaseTableCube {
    table: BaseTable,
}

impl BaseTableCube {
    pub fn new(table: BaseTable) -> Self {
        BaseTableCube { table }
    }

    pub fn table(&self) -> &BaseTable {
        &self.table
    }
}

impl Cube for BaseTableCube {
    fn schema(&self) -> &DimensionSchema {
        &self.table.schema
    }

    fn view(&self, region: &Region, request: &FeatureRequest) -> Result<FeatureFrame> {
        self.table.aggregate(region, request)
    }

    fn distinct_values(&self, region: &Region, dimension: &str) -> Result<Vec<Value>> {
        let d = self
            .table
            .schema
            .dimension_index(dimension)
            .ok_or_else(|| Error::Schema(format!("unknown dimension `{dimension}`")))?;
        let col = &self.table.dims[d];
        let rows = self.table.matching_rows(region)?;
        let codes: std::collections::BTreeSet<u32> =
            rows.iter().map(|&r| col.codes[r as usize]).collect();
        Ok(codes.into_iter().map(|c| col.dict[c as usize].clone()).collect())
    }

    fn check_predicate(&self, region: &Region, predicate: &Predicate) -> Result<bool> {
        predicate.validate(&self.table.schema)?;
        let rows = self.table.matching_rows(region)?;
        let totals = predicate
            .measures()
            .map(|m| {
                let i = self.table.schema.measure_index(m).expect("validated");
                let col = self.table.sums[i].as_deref().expect("SUM measure");
                rows.iter().map(|&r| col[r as usize]).sum()
            })
            .collect::<Vec<f64>>();
        Ok(predicate.holds(&totals))
    }
}
