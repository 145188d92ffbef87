//! Aiming-performance records, the Fitts index-of-difficulty transform,
//! CSV ingest, truncation of long movement times, and a synthetic
//! "in the wild" record generator.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const DEFAULT_USER: &str = "all";

/// Thresholds (seconds) examined by the truncation workflow.
pub const TRUNCATION_GRID: [f64; 4] = [10.0, 20.0, 30.0, 40.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AimingRecord {
    pub movement_time_ms: f64,
    pub distance: f64,
    pub target_width: f64,
    pub target_height: f64,
    pub user_id: String,
}

impl AimingRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.movement_time_ms.is_finite() && self.movement_time_ms > 0.0) {
            return Err(Error::Domain(format!("movement_time_ms = {} must be > 0", self.movement_time_ms)));
        }
        difficulty(self.distance, self.target_width, self.target_height).map(|_| ())
    }

    /// Response in seconds.
    pub fn y(&self) -> f64 {
        self.movement_time_ms / 1000.0
    }
}

/// Index of difficulty log₂(1 + distance / min(width, height)) in bits.
pub fn difficulty(distance: f64, width: f64, height: f64) -> Result<f64> {
    if !(width.is_finite() && width > 0.0 && height.is_finite() && height > 0.0) {
        return Err(Error::Domain(format!("target dimensions ({width}, {height}) must be > 0")));
    }
    if !(distance.is_finite() && distance >= 0.0) {
        return Err(Error::Domain(format!("distance = {distance} must be >= 0")));
    }
    Ok((1.0 + distance / width.min(height)).log2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based line number in the input, header included.
    pub line: usize,
    pub reason: String,
}

/// One user's transformed data.
#[derive(Debug, Clone, PartialEq)]
pub struct UserData {
    pub user_id: String,
    pub data: Dataset,
    /// Generating component labels, when the input carries them.
    pub labels: Option<Vec<crate::flare::Component>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    /// Users in order of first appearance; rows keep input order.
    pub users: Vec<UserData>,
    pub skipped: Vec<SkippedRow>,
}

impl Ingested {
    pub fn total_rows(&self) -> usize {
        self.users.iter().map(|u| u.data.n()).sum()
    }
}

struct Columns {
    map: HashMap<String, usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord) -> Self {
        let map = headers.iter().enumerate().map(|(i, h)| (h.trim().to_ascii_lowercase(), i)).collect();
        Self { map }
    }

    fn get(&self, name: &str) -> Option<usize> {
        self.map.get(name).copied()
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.get(name).ok_or_else(|| Error::Ingest(format!("missing column {name:?}")))
    }
}

fn field(rec: &csv::StringRecord, idx: usize, name: &str) -> std::result::Result<f64, String> {
    let raw = rec.get(idx).ok_or_else(|| format!("missing field {name}"))?.trim();
    raw.parse::<f64>().map_err(|_| format!("{name}: cannot parse {raw:?}"))
}

#[derive(Default)]
struct Grouper {
    order: Vec<String>,
    rows: HashMap<String, (Vec<Vec<f64>>, Vec<f64>, Vec<crate::flare::Component>)>,
}

impl Grouper {
    fn push(&mut self, user: String, x: Vec<f64>, y: f64, label: Option<crate::flare::Component>) {
        let entry = self.rows.entry(user.clone()).or_insert_with(|| {
            self.order.push(user);
            Default::default()
        });
        entry.0.push(x);
        entry.1.push(y);
        if let Some(l) = label {
            entry.2.push(l);
        }
    }

    fn finish(mut self) -> Result<Vec<UserData>> {
        self.order
            .into_iter()
            .map(|u| {
                let (x, y, labels) = self.rows.remove(&u).expect("grouped user");
                let labels = (labels.len() == y.len() && !labels.is_empty()).then_some(labels);
                Ok(UserData { data: Dataset::from_rows(&x, y)?, user_id: u, labels })
            })
            .collect()
    }
}

fn parse_label(s: &str) -> Option<crate::flare::Component> {
    match s.trim().to_ascii_lowercase().as_str() {
        "gaussian" | "g" | "0" => Some(crate::flare::Component::Gaussian),
        "exponential" | "e" | "1" => Some(crate::flare::Component::Exponential),
        _ => None,
    }
}

/// Reads aiming records (columns movement_time_ms, distance, target_width,
/// target_height and optionally user_id, in any case and order) and returns
/// per-user datasets with y in seconds and x = (1, index of difficulty).
/// Malformed rows are skipped and counted.
pub fn ingest_reader<R: Read>(reader: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = Columns::new(rdr.headers()?);
    let t = cols.require("movement_time_ms")?;
    let d = cols.require("distance")?;
    let w = cols.require("target_width")?;
    let h = cols.require("target_height")?;
    let u = cols.get("user_id");

    let mut groups = Grouper::default();
    let mut skipped = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedRow { line, reason: e.to_string() });
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<AimingRecord, String> {
            let r = AimingRecord {
                movement_time_ms: field(&rec, t, "movement_time_ms")?,
                distance: field(&rec, d, "distance")?,
                target_width: field(&rec, w, "target_width")?,
                target_height: field(&rec, h, "target_height")?,
                user_id: u
                    .and_then(|i| rec.get(i))
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .unwrap_or_else(|| DEFAULT_USER.to_string()),
            };
            r.validate().map_err(|e| e.to_string())?;
            Ok(r)
        })();
        match parsed {
            Ok(r) => {
                let x = difficulty(r.distance, r.target_width, r.target_height)?;
                groups.push(r.user_id.clone(), vec![x], r.y(), None);
            }
            Err(reason) => skipped.push(SkippedRow { line, reason }),
        }
    }
    Ok(Ingested { users: groups.finish()?, skipped })
}

pub fn ingest(path: &Path) -> Result<Ingested> {
    let file = std::fs::File::open(path).map_err(|e| Error::Ingest(format!("cannot open {}: {e}", path.display())))?;
    ingest_reader(file)
}

/// Reads a generic regression table with columns y, x1, x2, ... and
/// optionally user_id and label (gaussian/exponential).
pub fn read_table_reader<R: Read>(reader: R) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let cols = Columns::new(rdr.headers()?);
    let yi = cols.require("y")?;
    let mut xs = Vec::new();
    while let Some(i) = cols.get(&format!("x{}", xs.len() + 1)) {
        xs.push(i);
    }
    let u = cols.get("user_id");
    let l = cols.get("label");

    let mut groups = Grouper::default();
    let mut skipped = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                skipped.push(SkippedRow { line, reason: e.to_string() });
                continue;
            }
        };
        let parsed = (|| -> std::result::Result<(f64, Vec<f64>), String> {
            let y = field(&rec, yi, "y")?;
            let x = xs
                .iter()
                .enumerate()
                .map(|(j, &i)| field(&rec, i, &format!("x{}", j + 1)))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
                return Err("non-finite value".into());
            }
            Ok((y, x))
        })();
        match parsed {
            Ok((y, x)) => {
                let user = u
                    .and_then(|i| rec.get(i))
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .unwrap_or_else(|| DEFAULT_USER.to_string());
                let label = l.and_then(|i| rec.get(i)).and_then(parse_label);
                groups.push(user, x, y, label);
            }
            Err(reason) => skipped.push(SkippedRow { line, reason }),
        }
    }
    Ok(Ingested { users: groups.finish()?, skipped })
}

/// Reads either an aiming-record file or a generic regression table,
/// depending on whether a movement_time_ms column is present.
pub fn read_input(path: &Path) -> Result<Ingested> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Ingest(format!("cannot read {}: {e}", path.display())))?;
    let header = text.lines().next().unwrap_or("").to_ascii_lowercase();
    if header.split(',').any(|h| h.trim() == "movement_time_ms") {
        ingest_reader(text.as_bytes())
    } else {
        read_table_reader(text.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Truncation {
    pub data: Dataset,
    /// Indices of retained rows in the input.
    pub kept: Vec<usize>,
    pub dropped: usize,
}

/// Keeps exactly the rows with yᵢ ≤ T, in order.
pub fn truncate(data: &Dataset, threshold: f64) -> Result<Truncation> {
    if !(threshold > 0.0) {
        return Err(Error::Domain(format!("truncation threshold {threshold} must be > 0")));
    }
    let kept: Vec<usize> = (0..data.n()).filter(|&i| data.y()[i] <= threshold).collect();
    if kept.is_empty() {
        return Err(Error::EmptyTruncation { threshold });
    }
    Ok(Truncation { data: data.select(&kept), dropped: data.n() - kept.len(), kept })
}

/// Synthetic aiming logs resembling uncontrolled field data: a Fitts-law
/// trend with Gaussian noise, a heavy one-sided tail of slow movements, and
/// occasional extreme durations from segmentation faults.
pub fn wild_records(users: usize, per_user: usize, seed: u64) -> Vec<AimingRecord> {
    let mut out = Vec::with_capacity(users * per_user);
    for u in 0..users {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u as u64);
        let b0 = rng.random_range(0.40..0.60);
        let b1 = rng.random_range(0.12..0.22);
        let sigma = rng.random_range(0.08..0.15);
        let lambda = rng.random_range(0.55..0.85);
        let alpha = rng.random_range(0.15..0.60);
        let glitch = rng.random_range(0.0..0.03);
        let user_id = format!("user{:02}", u + 1);
        for _ in 0..per_user {
            let distance = rng.random_range(20.0..1200.0);
            let target_width = rng.random_range(8.0..120.0);
            let target_height = rng.random_range(8.0..120.0);
            let x = (1.0 + distance / f64::min(target_width, target_height)).log2();
            let y = loop {
                let u: f64 = rng.random();
                let eps = if u < glitch {
                    rng.random_range(40.0..400.0)
                } else if u < glitch + (1.0 - glitch) * lambda {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    sigma * g
                } else {
                    let v: f64 = rng.random();
                    -(1.0 - v).ln() / alpha
                };
                let y = b0 + b1 * x + eps;
                if y > 0.05 {
                    break y;
                }
            };
            out.push(AimingRecord {
                movement_time_ms: y * 1000.0,
                distance,
                target_width,
                target_height,
                user_id: user_id.clone(),
            });
        }
    }
    out
}

pub fn write_records(path: &Path, records: &[AimingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Dataset built directly from records, skipping invalid ones.
pub fn records_to_dataset(records: &[AimingRecord]) -> Result<Dataset> {
    let (mut rows, mut y) = (Vec::new(), Vec::new());
    for r in records.iter().filter(|r| r.validate().is_ok()) {
        rows.push(vec![difficulty(r.distance, r.target_width, r.target_height)?]);
        y.push(r.y());
    }
    Dataset::from_rows(&rows, y)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn difficulty_hand_cases() {
        assert_eq!(difficulty(0.0, 3.0, 5.0).unwrap(), 0.0);
        assert_eq!(difficulty(3.0, 3.0, 5.0).unwrap(), 1.0);
        assert!((difficulty(7.0, 2.0, 3.0).unwrap() - 4.5f64.log2()).abs() < 1e-15);
        assert!(difficulty(1.0, 0.0, 3.0).is_err());
        assert!(difficulty(-1.0, 1.0, 3.0).is_err());
    }

    #[test]
    fn headers_are_case_insensitive() {
        let csv = "User_ID,Movement_Time_MS,DISTANCE,target_width,Target_Height\na,1000,0,10,20\n";
        let ing = ingest_reader(csv.as_bytes()).unwrap();
        assert_eq!(ing.users.len(), 1);
        let d = &ing.users[0].data;
        assert_eq!(d.y()[0], 1.0);
        assert_eq!(d.row(0), vec![1.0, 0.0]);
    }

    #[test]
    fn missing_column_is_an_error() {
        let csv = "movement_time_ms,distance,target_width\n1000,0,10\n";
        assert!(matches!(ingest_reader(csv.as_bytes()), Err(Error::Ingest(_))));
    }

    #[test]
    fn truncation_keeps_le_threshold() {
        let d = Dataset::from_predictors(&[], vec![5.0, 15.0, 25.0, 30.0, 45.0]).unwrap();
        let t = truncate(&d, 30.0).unwrap();
        assert_eq!(t.data.y().as_slice(), &[5.0, 15.0, 25.0, 30.0]);
        assert_eq!(t.dropped, 1);
        assert!(matches!(truncate(&d, 1.0), Err(Error::EmptyTruncation { .. })));
        assert!(truncate(&d, 0.0).is_err());
    }

    #[test]
    fn wild_records_are_valid_and_reproducible() {
        let a = wild_records(3, 50, 11);
        assert_eq!(a, wild_records(3, 50, 11));
        assert_eq!(a.len(), 150);
        assert!(a.iter().all(|r| r.validate().is_ok()));
    }
}
