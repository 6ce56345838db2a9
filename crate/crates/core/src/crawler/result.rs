use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::cube::{CellsetCube, Dimension, DimensionSchema, Measure, Region, Value};
use crate::error::{Error, Result};
use crate::ram::SignalVector;

/// Output of a crawl: emitted regions with their signals.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultCube {
    dimensions: Vec<Dimension>,
    entries: BTreeMap<Region, SignalVector>,
    /// Records are listed by this signal, descending, when set.
    ranking: Option<String>,
}

/// One output record: a region and its signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSignalsRecord {
    pub region: BTreeMap<String, Value>,
    pub signals: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Jsonl,
}

impl ResultCube {
    pub fn new(dimensions: Vec<Dimension>, ranking: Option<String>) -> Self {
        ResultCube {
            dimensions,
            entries: BTreeMap::new(),
            ranking,
        }
    }

    pub fn dimensions(&self) -> &[Dimension] {
        &self.dimensions
    }

    pub fn ranking(&self) -> Option<&str> {
        self.ranking.as_deref()
    }

    pub fn insert(&mut self, region: Region, signals: SignalVector) {
        self.entries.insert(region, signals);
    }

    pub fn retain(&mut self, mut keep: impl FnMut(&Region) -> bool) {
        self.entries.retain(|r, _| keep(r));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, region: &Region) -> Option<&SignalVector> {
        self.entries.get(region)
    }

    /// Entries in canonical region order.
    pub fn entries(&self) -> impl Iterator<Item = (&Region, &SignalVector)> {
        self.entries.iter()
    }

    pub fn regions(&self) -> impl Iterator<Item = &Region> {
        self.entries.keys()
    }

    /// The entry map, for set comparisons between crawls.
    pub fn as_map(&self) -> &BTreeMap<Region, SignalVector> {
        &self.entries
    }

    /// Every signal name present, sorted.
    pub fn signal_names(&self) -> Vec<String> {
        let names: BTreeSet<&str> = self.entries.values().flat_map(|s| s.names()).collect();
        names.into_iter().map(String::from).collect()
    }

    /// Entries in output order: by the ranking signal descending when set, then canonically.
    pub fn ordered(&self) -> Vec<(&Region, &SignalVector)> {
        let mut out: Vec<_> = self.entries.iter().collect();
        if let Some(signal) = &self.ranking {
            let key = |s: &SignalVector| s.get(signal).unwrap_or(f64::NEG_INFINITY);
            out.sort_by(|a, b| key(b.1).total_cmp(&key(a.1)).then_with(|| a.0.cmp(b.0)));
        }
        out
    }

    pub fn records(&self) -> Vec<RegionSignalsRecord> {
        self.ordered()
            .into_iter()
            .map(|(r, s)| RegionSignalsRecord {
                region: r.bindings().map(|(d, v)| (d.to_string(), v.clone())).collect(),
                signals: s.iter().map(|(k, v)| (k.to_string(), v)).collect(),
            })
            .collect()
    }

    pub fn from_records(dimensions: Vec<Dimension>, records: impl IntoIterator<Item = RegionSignalsRecord>) -> Result<Self> {
        let schema = DimensionSchema::new(dimensions.clone(), vec![])?;
        let mut cube = ResultCube::new(dimensions, None);
        for rec in records {
            let region = Region::from_pairs(rec.region);
            region.validate(&schema)?;
            let signals: SignalVector = rec.signals.into_iter().collect();
            if let Some((k, v)) = signals.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::Format(format!("signal `{k}` of {region} is {v}")));
            }
            if cube.entries.insert(region.clone(), signals).is_some() {
                return Err(Error::Format(format!("region {region} listed twice")));
            }
        }
        Ok(cube)
    }

    /// The result as a cellset over its dimensions, one stored measure per signal.
    pub fn to_cellset(&self) -> Result<CellsetCube> {
        let names = self.signal_names();
        let schema = DimensionSchema::new(
            self.dimensions.clone(),
            names.iter().map(|n| Measure::stored(n.clone())).collect(),
        )?;
        let cells = self.entries.iter().map(|(region, signals)| {
            (
                self.dimensions.iter().map(|d| region.get(&d.name).cloned()).collect(),
                names.iter().map(|n| signals.get(n)).collect(),
            )
        });
        CellsetCube::from_cells(schema, cells)
    }

    pub fn write<W: Write>(&self, writer: W, format: OutputFormat) -> Result<()> {
        match format {
            OutputFormat::Jsonl => self.write_jsonl(writer),
            OutputFormat::Csv => self.write_csv(writer),
        }
    }

    fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for rec in self.records() {
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// A `region` column in flat `dim=value;...` form, then one column per signal.
    fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let names = self.signal_names();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(std::iter::once("region").chain(names.iter().map(String::as_str)))?;
        for (region, signals) in self.ordered() {
            let mut row = vec![region.to_string()];
            row.extend(names.iter().map(|n| signals.get(n).map(|v| v.to_string()).unwrap_or_default()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads records written by [`ResultCube::write`]; `dimensions` types the region values.
    pub fn read<R: BufRead>(reader: R, format: OutputFormat, dimensions: Vec<Dimension>) -> Result<Self> {
        let records = match format {
            OutputFormat::Jsonl => {
                let mut recs = Vec::new();
                for line in reader.lines() {
                    let line = line?;
                    if !line.trim().is_empty() {
                        recs.push(serde_json::from_str(&line)?);
                    }
                }
                recs
            }
            OutputFormat::Csv => {
                let schema = DimensionSchema::new(dimensions.clone(), vec![])?;
                let mut input = csv::Reader::from_reader(reader);
                let headers = input.headers()?.clone();
                if headers.get(0) != Some("region") {
                    return Err(Error::Format("first CSV column must be `region`".into()));
                }
                let mut recs = Vec::new();
                for row in input.records() {
                    let row = row?;
                    let region = Region::parse_flat(&row[0], &schema)?;
                    let mut signals = BTreeMap::new();
                    for (name, cell) in headers.iter().zip(row.iter()).skip(1) {
                        if !cell.is_empty() {
                            let v: f64 = cell
                                .parse()
                                .map_err(|_| Error::Format(format!("`{cell}` in column `{name}` is not a number")))?;
                            signals.insert(name.to_string(), v);
                        }
                    }
                    recs.push(RegionSignalsRecord {
                        region: region.bindings().map(|(d, v)| (d.to_string(), v.clone())).collect(),
                        signals,
                    });
                }
                recs
            }
        };
        Self::from_records(dimensions, records)
    }
}
