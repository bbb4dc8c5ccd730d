//! Electrospinning records: ingest, harmonization, summaries and the
//! empirical distributions the samplers draw from.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::canon::{builtin_header_aliases, is_missing_token, AliasMap, SolventCanon};
use crate::error::{Error, Result};
use crate::stats;

pub const SCHEMA_VERSION: u32 = 1;

/// Level used for an absent categorical value in frequency tables and
/// encodings.
pub const NONE_LEVEL: &str = "<none>";

/// Canonical column order for delimited-text input and output.
pub const CANONICAL_COLUMNS: [&str; 18] = [
    "doi",
    "polymer",
    "solvent_1",
    "solvent_2",
    "solvent_3",
    "solvent1_ratio",
    "solvent2_ratio",
    "solvent3_ratio",
    "solution_concentration",
    "needle_diameter",
    "collector_type",
    "rotation_speed",
    "voltage",
    "flow_rate",
    "distance",
    "temperature",
    "humidity",
    "fiber_diameter",
];

pub const OUTCOME_COLUMN: &str = "fiber_diameter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericVar {
    Solvent1Ratio,
    Solvent2Ratio,
    Solvent3Ratio,
    SolutionConcentration,
    NeedleDiameter,
    RotationSpeed,
    Voltage,
    FlowRate,
    Distance,
    Temperature,
    Humidity,
}

impl NumericVar {
    pub const ALL: [NumericVar; 11] = [
        NumericVar::Solvent1Ratio,
        NumericVar::Solvent2Ratio,
        NumericVar::Solvent3Ratio,
        NumericVar::SolutionConcentration,
        NumericVar::NeedleDiameter,
        NumericVar::RotationSpeed,
        NumericVar::Voltage,
        NumericVar::FlowRate,
        NumericVar::Distance,
        NumericVar::Temperature,
        NumericVar::Humidity,
    ];

    /// Continuous operating conditions (everything except the solvent ratios).
    pub const OPERATING: [NumericVar; 8] = [
        NumericVar::SolutionConcentration,
        NumericVar::NeedleDiameter,
        NumericVar::RotationSpeed,
        NumericVar::Voltage,
        NumericVar::FlowRate,
        NumericVar::Distance,
        NumericVar::Temperature,
        NumericVar::Humidity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NumericVar::Solvent1Ratio => "solvent1_ratio",
            NumericVar::Solvent2Ratio => "solvent2_ratio",
            NumericVar::Solvent3Ratio => "solvent3_ratio",
            NumericVar::SolutionConcentration => "solution_concentration",
            NumericVar::NeedleDiameter => "needle_diameter",
            NumericVar::RotationSpeed => "rotation_speed",
            NumericVar::Voltage => "voltage",
            NumericVar::FlowRate => "flow_rate",
            NumericVar::Distance => "distance",
            NumericVar::Temperature => "temperature",
            NumericVar::Humidity => "humidity",
        }
    }

    pub fn from_name(name: &str) -> Option<NumericVar> {
        NumericVar::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn ratio_slot(self) -> Option<usize> {
        match self {
            NumericVar::Solvent1Ratio => Some(0),
            NumericVar::Solvent2Ratio => Some(1),
            NumericVar::Solvent3Ratio => Some(2),
            _ => None,
        }
    }
}

impl fmt::Display for NumericVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalVar {
    Polymer,
    Solvent1,
    Solvent2,
    Solvent3,
    CollectorType,
}

impl CategoricalVar {
    pub const ALL: [CategoricalVar; 5] = [
        CategoricalVar::Polymer,
        CategoricalVar::Solvent1,
        CategoricalVar::Solvent2,
        CategoricalVar::Solvent3,
        CategoricalVar::CollectorType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CategoricalVar::Polymer => "polymer",
            CategoricalVar::Solvent1 => "solvent_1",
            CategoricalVar::Solvent2 => "solvent_2",
            CategoricalVar::Solvent3 => "solvent_3",
            CategoricalVar::CollectorType => "collector_type",
        }
    }

    pub fn from_name(name: &str) -> Option<CategoricalVar> {
        CategoricalVar::ALL.into_iter().find(|v| v.name() == name)
    }
}

impl fmt::Display for CategoricalVar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Any predictor column, numeric or categorical.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InputVar {
    Numeric(NumericVar),
    Categorical(CategoricalVar),
}

impl InputVar {
    pub fn all() -> Vec<InputVar> {
        CategoricalVar::ALL
            .into_iter()
            .map(InputVar::Categorical)
            .chain(NumericVar::ALL.into_iter().map(InputVar::Numeric))
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            InputVar::Numeric(v) => v.name(),
            InputVar::Categorical(v) => v.name(),
        }
    }

    pub fn from_name(name: &str) -> Option<InputVar> {
        NumericVar::from_name(name)
            .map(InputVar::Numeric)
            .or_else(|| CategoricalVar::from_name(name).map(InputVar::Categorical))
    }
}

/// The predictor side of one observation (or of a synthetic candidate).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessInputs {
    pub polymer: String,
    pub solvents: [Option<String>; 3],
    /// Percent of the solvent mixture; absent solvent => 0.
    pub ratios: [f64; 3],
    pub solution_concentration: Option<f64>,
    pub needle_diameter: Option<f64>,
    pub collector_type: Option<String>,
    pub rotation_speed: Option<f64>,
    pub voltage: Option<f64>,
    pub flow_rate: Option<f64>,
    pub distance: Option<f64>,
    pub temperature: Option<f64>,
    pub humidity: Option<f64>,
}

impl ProcessInputs {
    pub fn new(polymer: impl Into<String>) -> Self {
        ProcessInputs {
            polymer: polymer.into(),
            solvents: [None, None, None],
            ratios: [0.0; 3],
            solution_concentration: None,
            needle_diameter: None,
            collector_type: None,
            rotation_speed: None,
            voltage: None,
            flow_rate: None,
            distance: None,
            temperature: None,
            humidity: None,
        }
    }

    pub fn numeric(&self, var: NumericVar) -> Option<f64> {
        match var {
            NumericVar::Solvent1Ratio => Some(self.ratios[0]),
            NumericVar::Solvent2Ratio => Some(self.ratios[1]),
            NumericVar::Solvent3Ratio => Some(self.ratios[2]),
            NumericVar::SolutionConcentration => self.solution_concentration,
            NumericVar::NeedleDiameter => self.needle_diameter,
            NumericVar::RotationSpeed => self.rotation_speed,
            NumericVar::Voltage => self.voltage,
            NumericVar::FlowRate => self.flow_rate,
            NumericVar::Distance => self.distance,
            NumericVar::Temperature => self.temperature,
            NumericVar::Humidity => self.humidity,
        }
    }

    pub fn set_numeric(&mut self, var: NumericVar, value: Option<f64>) {
        let slot = match var {
            NumericVar::Solvent1Ratio => {
                self.ratios[0] = value.unwrap_or(0.0);
                return;
            }
            NumericVar::Solvent2Ratio => {
                self.ratios[1] = value.unwrap_or(0.0);
                return;
            }
            NumericVar::Solvent3Ratio => {
                self.ratios[2] = value.unwrap_or(0.0);
                return;
            }
            NumericVar::SolutionConcentration => &mut self.solution_concentration,
            NumericVar::NeedleDiameter => &mut self.needle_diameter,
            NumericVar::RotationSpeed => &mut self.rotation_speed,
            NumericVar::Voltage => &mut self.voltage,
            NumericVar::FlowRate => &mut self.flow_rate,
            NumericVar::Distance => &mut self.distance,
            NumericVar::Temperature => &mut self.temperature,
            NumericVar::Humidity => &mut self.humidity,
        };
        *slot = value;
    }

    pub fn categorical(&self, var: CategoricalVar) -> Option<&str> {
        match var {
            CategoricalVar::Polymer => Some(self.polymer.as_str()),
            CategoricalVar::Solvent1 => self.solvents[0].as_deref(),
            CategoricalVar::Solvent2 => self.solvents[1].as_deref(),
            CategoricalVar::Solvent3 => self.solvents[2].as_deref(),
            CategoricalVar::CollectorType => self.collector_type.as_deref(),
        }
    }

    pub fn set_categorical(&mut self, var: CategoricalVar, value: Option<String>) {
        match var {
            CategoricalVar::Polymer => self.polymer = value.unwrap_or_default(),
            CategoricalVar::Solvent1 => self.solvents[0] = value,
            CategoricalVar::Solvent2 => self.solvents[1] = value,
            CategoricalVar::Solvent3 => self.solvents[2] = value,
            CategoricalVar::CollectorType => self.collector_type = value,
        }
    }

    /// Present solvents with their ratios, in slot order.
    pub fn solvent_mix(&self) -> Vec<(&str, f64)> {
        self.solvents
            .iter()
            .zip(self.ratios)
            .filter_map(|(s, r)| s.as_deref().map(|s| (s, r)))
            .collect()
    }

    pub fn solvent_count(&self) -> usize {
        self.solvents.iter().filter(|s| s.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinRecord {
    /// Provenance only; never a predictor.
    pub doi: Option<String>,
    pub inputs: ProcessInputs,
    /// Outcome, nm.
    pub fiber_diameter: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LoadReport {
    pub rows_in: usize,
    pub rows_out: usize,
    pub drops: BTreeMap<String, usize>,
}

impl LoadReport {
    fn drop_row(&mut self, reason: &str) {
        *self.drops.entry(reason.to_string()).or_default() += 1;
    }

    pub fn dropped(&self) -> usize {
        self.drops.values().sum()
    }
}

/// Immutable table of validated records.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinDataset {
    records: Vec<SpinRecord>,
    schema_version: u32,
    canonicalization_log: Vec<(String, String)>,
    load_report: LoadReport,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Extra header aliases layered over the built-in map.
    pub header_aliases: Option<AliasMap>,
    pub solvent_canon: Option<SolventCanon>,
    /// Force a delimiter; autodetected from the header line otherwise.
    pub delimiter: Option<u8>,
}

fn check_record(r: &SpinRecord) -> std::result::Result<(), &'static str> {
    if r.inputs.polymer.trim().is_empty() {
        return Err("missing_polymer");
    }
    if !r.fiber_diameter.is_finite() {
        return Err("non_finite_outcome");
    }
    if r.fiber_diameter <= 0.0 {
        return Err("non_positive_outcome");
    }
    if r.inputs.solvent_count() == 0 {
        return Err("no_solvent");
    }
    let mut sum = 0.0;
    for (s, &ratio) in r.inputs.solvents.iter().zip(&r.inputs.ratios) {
        if !(0.0..=100.0).contains(&ratio) {
            return Err("invalid_ratio");
        }
        if s.is_none() && ratio != 0.0 {
            return Err("invalid_ratio");
        }
        sum += ratio;
    }
    if (sum - 100.0).abs() > 1e-6 {
        return Err("invalid_ratio");
    }
    Ok(())
}

/// Row-normalize ratios of present solvents to sum to 100. Absent slots are
/// zeroed. Ratios already summing to 100 within 1e-6 are left untouched so
/// re-loading a canonical file is bit-stable; all-zero present ratios are
/// split evenly.
pub fn normalize_ratios(solvents: &[Option<String>; 3], ratios: &mut [f64; 3]) {
    for (s, r) in solvents.iter().zip(ratios.iter_mut()) {
        if s.is_none() || !r.is_finite() {
            *r = 0.0;
        }
    }
    let present = solvents.iter().filter(|s| s.is_some()).count();
    if present == 0 {
        return;
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 100.0).abs() <= 1e-6 {
        return;
    }
    if sum <= 0.0 {
        for (s, r) in solvents.iter().zip(ratios.iter_mut()) {
            if s.is_some() {
                *r = 100.0 / present as f64;
            }
        }
        return;
    }
    for r in ratios.iter_mut() {
        *r = *r / sum * 100.0;
    }
}

fn detect_delimiter(header_line: &str) -> u8 {
    let tabs = header_line.matches('\t').count();
    let commas = header_line.matches(',').count();
    let semis = header_line.matches(';').count();
    if tabs >= commas && tabs >= semis && tabs > 0 {
        b'\t'
    } else if semis > commas {
        b';'
    } else {
        b','
    }
}

fn parse_number(raw: &str, row: usize, column: &str) -> Result<Option<f64>> {
    let t = raw.trim();
    if is_missing_token(t) {
        return Ok(None);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Ok(None),
        Err(_) => Err(Error::UnparseableNumber {
            row,
            column: column.to_string(),
            value: raw.to_string(),
        }),
    }
}

impl SpinDataset {
    /// Build a dataset from already-clean records (validated here).
    pub fn from_records(records: Vec<SpinRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoUsableRows { dropped: 0 });
        }
        for (i, r) in records.iter().enumerate() {
            if let Err(reason) = check_record(r) {
                return Err(Error::invalid(format!("record {i}: {reason}")));
            }
        }
        let n = records.len();
        Ok(SpinDataset {
            records,
            schema_version: SCHEMA_VERSION,
            canonicalization_log: Vec::new(),
            load_report: LoadReport {
                rows_in: n,
                rows_out: n,
                drops: BTreeMap::new(),
            },
        })
    }

    pub fn load(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::from_reader(file, options)
    }

    pub fn from_reader<R: Read>(mut reader: R, options: &LoadOptions) -> Result<Self> {
        let mut text = String::new();
        reader.read_to_string(&mut text)?;
        let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
        let header_line = text
            .lines()
            .find(|l| !l.trim_start().starts_with('#') && !l.trim().is_empty())
            .ok_or_else(|| Error::invalid("no header row"))?;
        let delimiter = options
            .delimiter
            .unwrap_or_else(|| detect_delimiter(header_line));

        let mut aliases = builtin_header_aliases();
        if let Some(extra) = &options.header_aliases {
            aliases.merge(extra);
        }
        let canon = options.solvent_canon.clone().unwrap_or_default();
        let mut log: BTreeSet<(String, String)> = BTreeSet::new();

        let mut rdr = csv::ReaderBuilder::new()
            .delimiter(delimiter)
            .comment(Some(b'#'))
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = rdr.headers()?.clone();
        let mut column_of: HashMap<&'static str, usize> = HashMap::new();
        for (idx, raw) in headers.iter().enumerate() {
            let Some(canonical) = aliases.lookup(raw) else {
                continue;
            };
            let Some(&known) = CANONICAL_COLUMNS.iter().find(|c| **c == canonical) else {
                continue;
            };
            if raw != known {
                log.insert((raw.to_string(), known.to_string()));
            }
            column_of.entry(known).or_insert(idx);
        }
        if !column_of.contains_key(OUTCOME_COLUMN) {
            return Err(Error::MissingColumn(OUTCOME_COLUMN.into()));
        }
        if !column_of.contains_key("polymer") {
            return Err(Error::MissingColumn("polymer".into()));
        }

        let mut report = LoadReport::default();
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            let row_no = i + 1;
            report.rows_in += 1;
            let cell = |name: &str| -> &str {
                column_of
                    .get(name)
                    .and_then(|&c| row.get(c))
                    .unwrap_or("")
            };
            let num = |name: &str| parse_number(cell(name), row_no, name);

            let outcome = num(OUTCOME_COLUMN)?;
            let Some(fiber_diameter) = outcome else {
                report.drop_row("non_finite_outcome");
                continue;
            };
            let polymer = cell("polymer").trim().to_string();
            if polymer.is_empty() || is_missing_token(&polymer) {
                report.drop_row("missing_polymer");
                continue;
            }

            let mut solvents: [Option<String>; 3] = [None, None, None];
            for (k, col) in ["solvent_1", "solvent_2", "solvent_3"].iter().enumerate() {
                let raw = cell(col);
                if let Some(c) = canon.canonicalize(raw) {
                    if raw.trim() != c {
                        log.insert((raw.trim().to_string(), c.clone()));
                    }
                    solvents[k] = Some(c);
                }
            }
            let mut ratios = [0.0; 3];
            for (k, col) in ["solvent1_ratio", "solvent2_ratio", "solvent3_ratio"]
                .iter()
                .enumerate()
            {
                ratios[k] = num(col)?.unwrap_or(0.0);
            }
            if ratios.iter().any(|r| *r < 0.0) {
                report.drop_row("invalid_ratio");
                continue;
            }
            normalize_ratios(&solvents, &mut ratios);

            let collector = cell("collector_type");
            let mut inputs = ProcessInputs::new(polymer);
            inputs.solvents = solvents;
            inputs.ratios = ratios;
            inputs.collector_type = (!is_missing_token(collector)).then(|| collector.trim().to_string());
            for var in NumericVar::OPERATING {
                inputs.set_numeric(var, num(var.name())?);
            }
            let doi = cell("doi");
            let record = SpinRecord {
                doi: (!is_missing_token(doi)).then(|| doi.trim().to_string()),
                inputs,
                fiber_diameter,
            };
            match check_record(&record) {
                Ok(()) => records.push(record),
                Err(reason) => report.drop_row(reason),
            }
        }
        report.rows_out = records.len();
        if records.is_empty() {
            return Err(Error::NoUsableRows {
                dropped: report.dropped(),
            });
        }
        Ok(SpinDataset {
            records,
            schema_version: SCHEMA_VERSION,
            canonicalization_log: log.into_iter().collect(),
            load_report: report,
        })
    }

    pub fn records(&self) -> &[SpinRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn schema_version(&self) -> u32 {
        self.schema_version
    }

    pub fn canonicalization_log(&self) -> &[(String, String)] {
        &self.canonicalization_log
    }

    pub fn load_report(&self) -> &LoadReport {
        &self.load_report
    }

    /// New dataset over the given row indices (order preserved).
    pub fn subset(&self, indices: &[usize]) -> SpinDataset {
        let records: Vec<SpinRecord> = indices.iter().map(|&i| self.records[i].clone()).collect();
        let n = records.len();
        SpinDataset {
            records,
            schema_version: self.schema_version,
            canonicalization_log: self.canonicalization_log.clone(),
            load_report: LoadReport {
                rows_in: n,
                rows_out: n,
                drops: BTreeMap::new(),
            },
        }
    }

    /// Distinct polymers in lexical order.
    pub fn polymers(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| r.inputs.polymer.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn polymer_counts(&self) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for r in &self.records {
            *m.entry(r.inputs.polymer.clone()).or_insert(0) += 1;
        }
        m
    }

    pub fn indices_for_polymer(&self, polymer: &str) -> Vec<usize> {
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.inputs.polymer == polymer)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn inputs(&self) -> Vec<ProcessInputs> {
        self.records.iter().map(|r| r.inputs.clone()).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.fiber_diameter).collect()
    }

    /// SHA-256 over the canonical text rendering of the records.
    pub fn fingerprint(&self) -> String {
        let mut buf = Vec::new();
        write_records(&mut buf, &self.records, b',').expect("writing to memory");
        hex(&Sha256::digest(&buf))
    }

    /// One summary per polymer (lexical order) followed by `TOTAL`.
    pub fn describe(&self, group_by_polymer: bool) -> Vec<PolymerSummary> {
        let mut out = Vec::new();
        if group_by_polymer {
            let mut groups: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in &self.records {
                groups.entry(&r.inputs.polymer).or_default().push(r.fiber_diameter);
            }
            for (polymer, values) in groups {
                out.push(PolymerSummary::from_values(polymer, &values));
            }
        }
        out.push(PolymerSummary::from_values("TOTAL", &self.outcomes()));
        out
    }

    /// Ranges and level frequencies for `polymer`; falls back to the full
    /// dataset (flagged) when the polymer has no rows.
    pub fn empirical_ranges(&self, polymer: &str) -> EmpiricalProfile {
        let rows: Vec<&SpinRecord> = self
            .records
            .iter()
            .filter(|r| r.inputs.polymer == polymer)
            .collect();
        if rows.is_empty() {
            let mut p = EmpiricalProfile::from_rows(polymer, self.records.iter());
            p.fallback = true;
            p
        } else {
            EmpiricalProfile::from_rows(polymer, rows.into_iter())
        }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write records as delimited text with the canonical header.
pub fn write_records<W: Write>(w: W, records: &[SpinRecord], delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
    wtr.write_record(CANONICAL_COLUMNS)?;
    for r in records {
        let i = &r.inputs;
        let s = |k: usize| i.solvents[k].clone().unwrap_or_default();
        let mut row = vec![
            r.doi.clone().unwrap_or_default(),
            i.polymer.clone(),
            s(0),
            s(1),
            s(2),
            i.ratios[0].to_string(),
            i.ratios[1].to_string(),
            i.ratios[2].to_string(),
            fmt_opt(i.solution_concentration),
            fmt_opt(i.needle_diameter),
            i.collector_type.clone().unwrap_or_default(),
        ];
        for var in &NumericVar::OPERATING[2..] {
            row.push(fmt_opt(i.numeric(*var)));
        }
        row.push(r.fiber_diameter.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolymerSummary {
    pub polymer: String,
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    /// `None` when undefined (constant data or n = 1).
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
}

impl PolymerSummary {
    pub fn from_values(polymer: &str, values: &[f64]) -> Self {
        let sorted = stats::sorted_copy(values);
        let shape = stats::skew_kurtosis(values);
        PolymerSummary {
            polymer: polymer.to_string(),
            n: values.len(),
            mean: stats::mean(values),
            std_dev: stats::sample_sd(values),
            q1: stats::quantile_sorted(&sorted, 0.25),
            median: stats::quantile_sorted(&sorted, 0.5),
            q3: stats::quantile_sorted(&sorted, 0.75),
            skewness: shape.map(|s| s.0),
            excess_kurtosis: shape.map(|s| s.1),
        }
    }
}

/// Summary table in the column order Polymer, n, Mean, Std dev, Q1,
/// Median, Q3, Kurtosis, Skewness. Undefined moments are written as `NA`.
pub fn write_summary_table<W: Write>(w: W, rows: &[PolymerSummary], delimiter: u8) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().delimiter(delimiter).from_writer(w);
    wtr.write_record([
        "polymer", "n", "mean", "std_dev", "q1", "median", "q3", "excess_kurtosis", "skewness",
    ])?;
    let f = |v: f64| format!("{v:.3}");
    let o = |v: Option<f64>| v.map(f).unwrap_or_else(|| "NA".into());
    for r in rows {
        wtr.write_record([
            r.polymer.clone(),
            r.n.to_string(),
            f(r.mean),
            f(r.std_dev),
            f(r.q1),
            f(r.median),
            f(r.q3),
            o(r.excess_kurtosis),
            o(r.skewness),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-polymer empirical distributions used by the samplers and IMC.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalProfile {
    pub polymer: String,
    /// Set when the polymer subset was unusable and the full dataset was used.
    pub fallback: bool,
    pub n_rows: usize,
    /// Observed (min, max) for every numeric variable with at least one value.
    pub ranges: BTreeMap<NumericVar, (f64, f64)>,
    /// Level probabilities per categorical; absent values count as `<none>`.
    pub frequencies: BTreeMap<CategoricalVar, Vec<(String, f64)>>,
    /// Probability of 1, 2 and 3 solvents.
    pub solvent_count_freqs: [f64; 3],
    /// Distinct solvents used with this polymer, lexical order.
    pub solvent_pool: Vec<String>,
}

impl EmpiricalProfile {
    pub fn from_rows<'a>(polymer: &str, rows: impl Iterator<Item = &'a SpinRecord>) -> Self {
        let mut ranges: BTreeMap<NumericVar, (f64, f64)> = BTreeMap::new();
        let mut counts: BTreeMap<CategoricalVar, BTreeMap<String, usize>> = BTreeMap::new();
        let mut solvent_counts = [0usize; 3];
        let mut pool = BTreeSet::new();
        let mut n = 0usize;
        for r in rows {
            n += 1;
            for var in NumericVar::ALL {
                if let Some(v) = r.inputs.numeric(var) {
                    let e = ranges.entry(var).or_insert((v, v));
                    e.0 = e.0.min(v);
                    e.1 = e.1.max(v);
                }
            }
            for var in CategoricalVar::ALL {
                let level = r.inputs.categorical(var).unwrap_or(NONE_LEVEL).to_string();
                *counts.entry(var).or_default().entry(level).or_insert(0) += 1;
            }
            let k = r.inputs.solvent_count();
            if (1..=3).contains(&k) {
                solvent_counts[k - 1] += 1;
            }
            for s in r.inputs.solvents.iter().flatten() {
                pool.insert(s.clone());
            }
        }
        let frequencies = counts
            .into_iter()
            .map(|(var, levels)| {
                let total: usize = levels.values().sum();
                let probs = levels
                    .into_iter()
                    .map(|(l, c)| (l, c as f64 / total as f64))
                    .collect();
                (var, probs)
            })
            .collect();
        let sc_total: usize = solvent_counts.iter().sum();
        let solvent_count_freqs = if sc_total == 0 {
            [1.0, 0.0, 0.0]
        } else {
            solvent_counts.map(|c| c as f64 / sc_total as f64)
        };
        EmpiricalProfile {
            polymer: polymer.to_string(),
            fallback: false,
            n_rows: n,
            ranges,
            frequencies,
            solvent_count_freqs,
            solvent_pool: pool.into_iter().collect(),
        }
    }

    pub fn range(&self, var: NumericVar) -> Option<(f64, f64)> {
        self.ranges.get(&var).copied()
    }

    pub fn levels(&self, var: CategoricalVar) -> &[(String, f64)] {
        self.frequencies.get(&var).map(Vec::as_slice).unwrap_or(&[])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = "doi,polymer,solvent_1,solvent_2,solvent_3,solvent1_ratio,solvent2_ratio,solvent3_ratio,solution_concentration,needle_diameter,collector_type,rotation_speed,voltage,flow_rate,distance,temperature,humidity,fiber_diameter";

    fn load(body: &str) -> Result<SpinDataset> {
        let text = format!("{HEADER}\n{body}");
        SpinDataset::from_reader(text.as_bytes(), &LoadOptions::default())
    }

    #[test]
    fn ratios_normalized_over_present_solvents() {
        let ds = load("d1,PAN,DMF,acetone,,60,30,,10,0.8,Flat,,15,1,15,25,40,200\n").unwrap();
        let r = &ds.records()[0].inputs.ratios;
        assert!((r[0] - 66.66666666666667).abs() < 1e-9);
        assert!((r[1] - 33.333333333333336).abs() < 1e-9);
        assert_eq!(r[2], 0.0);
        assert!((r.iter().sum::<f64>() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn single_solvent_at_100_is_unchanged() {
        let ds = load("d1,PAN,DMF,,,100,,,10,0.8,Flat,,15,1,15,25,40,200\n").unwrap();
        assert_eq!(ds.records()[0].inputs.ratios, [100.0, 0.0, 0.0]);
    }

    #[test]
    fn non_finite_outcome_is_dropped_and_counted() {
        let ds = load(
            "d1,PAN,DMF,,,100,,,10,0.8,Flat,,15,1,15,25,40,NaN\n\
             d2,PAN,DMF,,,100,,,10,0.8,Flat,,15,1,15,25,40,210\n",
        )
        .unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.load_report().drops["non_finite_outcome"], 1);
        assert_eq!(ds.load_report().rows_in, 2);
    }

    #[test]
    fn unparseable_number_reports_row() {
        let err = load(
            "d1,PAN,DMF,,,100,,,10,0.8,Flat,,15,1,15,25,40,200\n\
             d2,PAN,DMF,,,100,,,ten,0.8,Flat,,15,1,15,25,40,210\n",
        )
        .unwrap_err();
        match err {
            Error::UnparseableNumber { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "solution_concentration");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn missing_outcome_column_is_an_error() {
        let text = "polymer,solvent_1\nPAN,DMF\n";
        let err = SpinDataset::from_reader(text.as_bytes(), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, Error::MissingColumn(c) if c == "fiber_diameter"));
    }

    #[test]
    fn zero_usable_rows_is_an_error() {
        let err = load("d1,PAN,DMF,,,100,,,10,0.8,Flat,,15,1,15,25,40,NA\n").unwrap_err();
        assert!(matches!(err, Error::NoUsableRows { dropped: 1 }));
    }

    #[test]
    fn legacy_headers_tabs_and_solvent_aliases() {
        let text = "Polymer\tSolvent 1\tSolvent 1 ratio (%)\tTip to collector distance (cm)\tFiber diameter (nm)\n\
                    PAN\tN,N-Dimethylformamide\t100\t15\t210\n";
        let ds = SpinDataset::from_reader(text.as_bytes(), &LoadOptions::default()).unwrap();
        let r = &ds.records()[0];
        assert_eq!(r.inputs.solvents[0].as_deref(), Some("dmf"));
        assert_eq!(r.inputs.distance, Some(15.0));
        assert!(ds
            .canonicalization_log()
            .contains(&("N,N-Dimethylformamide".to_string(), "dmf".to_string())));
        assert!(ds
            .canonicalization_log()
            .iter()
            .any(|(raw, c)| raw == "Tip to collector distance (cm)" && c == "distance"));
    }

    #[test]
    fn blank_and_zero_absent_solvents_are_equivalent() {
        let a = load("d1,PAN,DMF,,,100,,,10,,,,15,1,15,,,200\n").unwrap();
        let b = load("d1,PAN,DMF,,,100,0,0,10,,,,15,1,15,,,200\n").unwrap();
        assert_eq!(a.records(), b.records());
    }

    #[test]
    fn missing_predictors_are_retained() {
        let ds = load("d1,PAN,DMF,,,100,,,,,,,,,,,,200\n").unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.records()[0].inputs.voltage, None);
    }

    #[test]
    fn reload_of_written_file_is_bit_identical() {
        let ds = load(
            "d1,PAN,DMF,acetone,thf,60,30,7,10,0.8,Flat,,15,1,15,25,40,200\n\
             d2,PCL,chloroform,methanol,,3,1,,12.5,0.6,Drum,1000,18,0.7,20,,,351.25\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        write_records(&mut buf, ds.records(), b',').unwrap();
        let again = SpinDataset::from_reader(buf.as_slice(), &LoadOptions::default()).unwrap();
        assert_eq!(ds.records(), again.records());
        for (a, b) in ds.records().iter().zip(again.records()) {
            for k in 0..3 {
                assert_eq!(a.inputs.ratios[k].to_bits(), b.inputs.ratios[k].to_bits());
            }
        }
        assert_eq!(ds.fingerprint(), again.fingerprint());
    }

    #[test]
    fn describe_hand_values() {
        let rows: Vec<SpinRecord> = [1.0, 2.0, 3.0, 4.0, 100.0]
            .iter()
            .map(|&d| rec("A", d))
            .collect();
        let ds = SpinDataset::from_records(rows).unwrap();
        let s = ds.describe(true);
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].mean, 22.0);
        assert_eq!(s[0].median, 3.0);
        assert_eq!(s[1].polymer, "TOTAL");
    }

    #[test]
    fn describe_constant_group_flags_shape() {
        let ds = SpinDataset::from_records((0..4).map(|_| rec("A", 5.0)).collect()).unwrap();
        let s = &ds.describe(true)[0];
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.std_dev, 0.0);
        assert!(s.skewness.is_none() && s.excess_kurtosis.is_none());
        let one = SpinDataset::from_records(vec![rec("B", 7.0)]).unwrap();
        let s1 = &one.describe(true)[0];
        assert_eq!((s1.n, s1.std_dev), (1, 0.0));
        assert!(s1.skewness.is_none());
    }

    fn rec(polymer: &str, d: f64) -> SpinRecord {
        let mut inputs = ProcessInputs::new(polymer);
        inputs.solvents[0] = Some("dmf".into());
        inputs.ratios = [100.0, 0.0, 0.0];
        SpinRecord {
            doi: None,
            inputs,
            fiber_diameter: d,
        }
    }

    #[test]
    fn empirical_ranges_and_frequencies() {
        let mut rows = Vec::new();
        for (v, c) in [(10.0, "Flat"), (15.0, "Flat"), (22.0, "Flat"), (12.0, "Drum")] {
            let mut r = rec("A", 100.0);
            r.inputs.voltage = Some(v);
            r.inputs.collector_type = Some(c.into());
            rows.push(r);
        }
        let mut other = rec("B", 50.0);
        other.inputs.voltage = Some(40.0);
        rows.push(other);
        let ds = SpinDataset::from_records(rows).unwrap();
        let p = ds.empirical_ranges("A");
        assert!(!p.fallback);
        assert_eq!(p.range(NumericVar::Voltage), Some((10.0, 22.0)));
        let coll = p.levels(CategoricalVar::CollectorType);
        assert_eq!(coll, &[("Drum".to_string(), 0.25), ("Flat".to_string(), 0.75)]);

        let missing = ds.empirical_ranges("Z");
        assert!(missing.fallback);
        assert_eq!(missing.range(NumericVar::Voltage), Some((10.0, 40.0)));
    }
}
