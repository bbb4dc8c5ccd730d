//! Polymer–solvent solubility and solvent–solvent compatibility rules.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::canon::{is_missing_token, SolventCanon};
use crate::error::{Error, Result};

const FALLBACK_INCOMPATIBLE: &str = include_str!("../data/fallback_incompatible.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Rating {
    Ok,
    Cond,
    No,
}

impl Rating {
    pub fn as_str(self) -> &'static str {
        match self {
            Rating::Ok => "OK",
            Rating::Cond => "COND",
            Rating::No => "NO",
        }
    }

    pub fn parse(raw: &str) -> Option<Rating> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "ok" | "yes" | "soluble" => Some(Rating::Ok),
            "cond" | "conditional" | "conditionally soluble" => Some(Rating::Cond),
            "no" | "insoluble" | "not soluble" => Some(Rating::No),
            _ => None,
        }
    }
}

impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strictness {
    Strict,
    #[default]
    Balanced,
    Lax,
}

impl Strictness {
    pub const ALL: [Strictness; 3] = [Strictness::Strict, Strictness::Balanced, Strictness::Lax];

    /// Cap (percent) for conditional solvents without their own limit.
    pub fn threshold(self) -> f64 {
        match self {
            Strictness::Strict => 0.0,
            Strictness::Balanced => 20.0,
            Strictness::Lax => 30.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strictness::Strict => "strict",
            Strictness::Balanced => "balanced",
            Strictness::Lax => "lax",
        }
    }
}

impl FromStr for Strictness {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "strict" => Ok(Strictness::Strict),
            "balanced" | "balance" => Ok(Strictness::Balanced),
            "lax" => Ok(Strictness::Lax),
            other => Err(Error::invalid(format!("unknown strictness `{other}`"))),
        }
    }
}

impl fmt::Display for Strictness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StrictnessPolicy {
    pub mode: Strictness,
    /// Percent of an insoluble solvent tolerated in a mixture.
    pub no_allow_pct: f64,
}

impl StrictnessPolicy {
    pub fn new(mode: Strictness, no_allow_pct: f64) -> Result<Self> {
        if !(no_allow_pct.is_finite() && (0.0..=100.0).contains(&no_allow_pct)) {
            return Err(Error::invalid("no_allow_pct must lie in [0, 100]"));
        }
        Ok(StrictnessPolicy { mode, no_allow_pct })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolubilityEntry {
    pub rating: Rating,
    pub max_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RatingCounts {
    pub ok: usize,
    pub cond: usize,
    pub no: usize,
}

fn polymer_key(p: &str) -> String {
    p.trim().to_uppercase()
}

fn header_key(h: &str) -> String {
    h.trim().trim_start_matches('\u{feff}').to_ascii_lowercase().replace([' ', '-'], "_")
}

/// Ratings keyed by (polymer, canonical solvent).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolubilityTable {
    entries: BTreeMap<(String, String), SolubilityEntry>,
    pub warnings: Vec<String>,
}

impl SolubilityTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Insert or replace; returns the previous entry.
    pub fn insert(&mut self, polymer: &str, solvent: &str, entry: SolubilityEntry) -> Option<SolubilityEntry> {
        self.entries.insert((polymer_key(polymer), solvent.to_string()), entry)
    }

    pub fn lookup(&self, polymer: &str, solvent: &str) -> Option<&SolubilityEntry> {
        self.entries.get(&(polymer_key(polymer), solvent.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn counts(&self) -> RatingCounts {
        let mut c = RatingCounts::default();
        for e in self.entries.values() {
            match e.rating {
                Rating::Ok => c.ok += 1,
                Rating::Cond => c.cond += 1,
                Rating::No => c.no += 1,
            }
        }
        c
    }

    /// Solvents listed for a polymer, in name order.
    pub fn solvents_for(&self, polymer: &str) -> Vec<(&str, SolubilityEntry)> {
        let key = polymer_key(polymer);
        self.entries
            .iter()
            .filter(|((p, _), _)| *p == key)
            .map(|((_, s), e)| (s.as_str(), *e))
            .collect()
    }

    /// Columns: polymer, solvent, rating (or status), optional max_pct.
    /// Duplicate keys keep the last row and record a warning.
    pub fn from_reader<R: Read>(reader: R, canon: &SolventCanon) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(header_key).collect();
        let col = |names: &[&str]| headers.iter().position(|h| names.contains(&h.as_str()));
        let pc = col(&["polymer"]).ok_or_else(|| Error::MissingColumn("polymer".into()))?;
        let sc = col(&["solvent"]).ok_or_else(|| Error::MissingColumn("solvent".into()))?;
        let rc = col(&["rating", "status"]).ok_or_else(|| Error::MissingColumn("rating".into()))?;
        let mc = col(&["max_pct", "maxpct", "max_percent"]);
        let mut table = SolubilityTable::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            let get = |c: usize| rec.get(c).unwrap_or("").trim();
            let (polymer, solvent_raw, rating_raw) = (get(pc), get(sc), get(rc));
            if polymer.is_empty() && solvent_raw.is_empty() && rating_raw.is_empty() {
                continue;
            }
            let rating = Rating::parse(rating_raw).ok_or_else(|| Error::InvalidRating {
                row,
                value: rating_raw.to_string(),
            })?;
            let Some(solvent) = canon.canonicalize(solvent_raw) else {
                table.warnings.push(format!("row {row}: blank solvent skipped"));
                continue;
            };
            let max_pct = match mc.map(get) {
                Some(v) if !is_missing_token(v) => {
                    let x: f64 = v.parse().map_err(|_| Error::UnparseableNumber {
                        row,
                        column: "max_pct".into(),
                        value: v.to_string(),
                    })?;
                    if !(x > 0.0 && x <= 100.0) {
                        return Err(Error::invalid(format!("row {row}: max_pct {x} outside (0, 100]")));
                    }
                    Some(x)
                }
                _ => None,
            };
            if table.insert(polymer, &solvent, SolubilityEntry { rating, max_pct }).is_some() {
                table
                    .warnings
                    .push(format!("row {row}: duplicate entry for ({polymer}, {solvent}); last one kept"));
            }
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>, canon: &SolventCanon) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?, canon)
    }
}

/// Unordered solvent pairs that must not be mixed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IncompatibilityTable {
    pairs: BTreeSet<(String, String)>,
    /// Set when the built-in list is in use.
    pub fallback: bool,
}

fn ordered(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl IncompatibilityTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Self-pairs are ignored.
    pub fn insert(&mut self, a: &str, b: &str) {
        if a != b {
            self.pairs.insert(ordered(a, b));
        }
    }

    pub fn incompatible(&self, a: &str, b: &str) -> bool {
        a != b && self.pairs.contains(&ordered(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn from_reader<R: Read>(reader: R, canon: &SolventCanon) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(header_key).collect();
        let a = headers.iter().position(|h| h == "solvent_a").unwrap_or(0);
        let b = headers.iter().position(|h| h == "solvent_b").unwrap_or(1);
        let mut t = IncompatibilityTable::new();
        for rec in rdr.records() {
            let rec = rec?;
            let sa = rec.get(a).and_then(|s| canon.canonicalize(s));
            let sb = rec.get(b).and_then(|s| canon.canonicalize(s));
            if let (Some(sa), Some(sb)) = (sa, sb) {
                t.insert(&sa, &sb);
            }
        }
        Ok(t)
    }

    /// The conservative built-in list.
    pub fn builtin(canon: &SolventCanon) -> Self {
        let mut t = Self::from_reader(FALLBACK_INCOMPATIBLE.as_bytes(), canon).expect("built-in list parses");
        t.fallback = true;
        t
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCheck {
    pub feasible: bool,
    /// `None` when the pair is absent from the table.
    pub rating: Option<Rating>,
    pub limit: Option<f64>,
    pub reason: String,
}

impl PairCheck {
    pub fn unknown(&self) -> bool {
        self.rating.is_none()
    }
}

/// Feasibility of one solvent at `ratio` percent. Unknown pairs are governed
/// by the strictness cap, like a conditional rating without its own limit.
pub fn pair_feasible(polymer: &str, solvent: &str, ratio: f64, policy: &StrictnessPolicy, table: &SolubilityTable) -> PairCheck {
    let entry = table.lookup(polymer, solvent);
    let (limit, why) = match entry {
        Some(SolubilityEntry { rating: Rating::Ok, .. }) => (None, "soluble"),
        Some(SolubilityEntry { rating: Rating::No, .. }) => (Some(policy.no_allow_pct), "insoluble; tolerance"),
        Some(SolubilityEntry {
            rating: Rating::Cond,
            max_pct: Some(m),
        }) => (Some(*m), "conditional; max_pct"),
        Some(SolubilityEntry {
            rating: Rating::Cond,
            max_pct: None,
        }) => (Some(policy.mode.threshold()), "conditional; strictness cap"),
        None => (Some(policy.mode.threshold()), "unrated pair; strictness cap"),
    };
    let feasible = limit.is_none_or(|l| ratio <= l);
    let reason = match limit {
        None => format!("{solvent}: {why}"),
        Some(l) => format!("{solvent} at {ratio}% vs {why} {l}%"),
    };
    PairCheck {
        feasible,
        rating: entry.map(|e| e.rating),
        limit,
        reason,
    }
}

/// Both tables plus load diagnostics.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityTables {
    pub solubility: SolubilityTable,
    pub incompatibility: IncompatibilityTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityStatus {
    pub counts: RatingCounts,
    pub entries: usize,
    pub incompatible_pairs: usize,
    pub fallback_incompatibility: bool,
    pub warnings: Vec<String>,
}

impl FeasibilityTables {
    /// Without an incompatibility file the built-in list is used and flagged.
    pub fn load(solubility: impl AsRef<Path>, incompatibility: Option<&Path>, canon: &SolventCanon) -> Result<Self> {
        let solubility = SolubilityTable::load(solubility, canon)?;
        let incompatibility = match incompatibility {
            Some(p) if p.exists() => IncompatibilityTable::from_reader(std::fs::File::open(p)?, canon)?,
            _ => IncompatibilityTable::builtin(canon),
        };
        Ok(FeasibilityTables {
            solubility,
            incompatibility,
        })
    }

    pub fn status(&self) -> FeasibilityStatus {
        FeasibilityStatus {
            counts: self.solubility.counts(),
            entries: self.solubility.len(),
            incompatible_pairs: self.incompatibility.len(),
            fallback_incompatibility: self.incompatibility.fallback,
            warnings: self.solubility.warnings.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureCheck {
    pub accepted: bool,
    pub reasons: Vec<String>,
    pub unknown_pairs: Vec<String>,
}

/// Accepted iff no two solvents are incompatible and every solvent passes
/// [`pair_feasible`].
pub fn mixture_feasible(mix: &[(&str, f64)], polymer: &str, policy: &StrictnessPolicy, tables: &FeasibilityTables) -> MixtureCheck {
    let mut reasons = Vec::new();
    let mut unknown_pairs = Vec::new();
    let mut sorted: Vec<(&str, f64)> = mix.to_vec();
    sorted.sort_by(|a, b| a.0.cmp(b.0).then(a.1.total_cmp(&b.1)));
    for i in 0..sorted.len() {
        for j in i + 1..sorted.len() {
            if tables.incompatibility.incompatible(sorted[i].0, sorted[j].0) {
                reasons.push(format!("{} and {} are incompatible", sorted[i].0, sorted[j].0));
            }
        }
    }
    for &(s, r) in &sorted {
        let c = pair_feasible(polymer, s, r, policy, &tables.solubility);
        if c.unknown() {
            unknown_pairs.push(format!("{polymer}/{s}"));
        }
        if !c.feasible {
            reasons.push(c.reason);
        }
    }
    MixtureCheck {
        accepted: reasons.is_empty(),
        reasons,
        unknown_pairs,
    }
}

/// NO if any solvent is NO, else COND if any is COND (unrated counts as
/// COND), else OK. A solvent-free row is OK.
pub fn row_flag<'a>(polymer: &str, solvents: impl IntoIterator<Item = &'a str>, table: &SolubilityTable) -> Rating {
    solvents
        .into_iter()
        .map(|s| table.lookup(polymer, s).map_or(Rating::Cond, |e| e.rating))
        .max()
        .unwrap_or(Rating::Ok)
}
