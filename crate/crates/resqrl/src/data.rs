//! Data model, dataset ingestion/validation, and descriptive Kaplan-Meier
//! estimation.
//!
//! Follow-up times live on the original scale here; the samplers take the log
//! internally. Records are immutable after construction and safe to share
//! across workers.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Kind of a baseline covariate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Binary,
    Continuous,
}

/// Names and kinds of the covariate columns, binary block first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSchema {
    names: Vec<String>,
    kinds: Vec<CovariateKind>,
}

impl CovariateSchema {
    pub fn new(names: Vec<String>, kinds: Vec<CovariateKind>) -> Result<Self> {
        if names.len() != kinds.len() {
            return Err(Error::InvalidParam(format!(
                "schema has {} names but {} kinds",
                names.len(),
                kinds.len()
            )));
        }
        for (i, a) in names.iter().enumerate() {
            if names[i + 1..].contains(a) {
                return Err(Error::InvalidParam(format!("duplicate covariate name `{a}`")));
            }
        }
        // Binary block first, continuous block second.
        let first_cont = kinds
            .iter()
            .position(|k| *k == CovariateKind::Continuous)
            .unwrap_or(kinds.len());
        if kinds[first_cont..].iter().any(|k| *k == CovariateKind::Binary) {
            return Err(Error::InvalidParam(
                "binary covariates must be listed before continuous covariates".into(),
            ));
        }
        Ok(CovariateSchema { names, kinds })
    }

    /// Schema with `p1` binary covariates (`xb1`, ...) then `p2` continuous (`xc1`, ...).
    pub fn generic(p1: usize, p2: usize) -> Self {
        let mut names = Vec::with_capacity(p1 + p2);
        let mut kinds = Vec::with_capacity(p1 + p2);
        for i in 0..p1 {
            names.push(format!("xb{}", i + 1));
            kinds.push(CovariateKind::Binary);
        }
        for i in 0..p2 {
            names.push(format!("xc{}", i + 1));
            kinds.push(CovariateKind::Continuous);
        }
        CovariateSchema { names, kinds }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn kinds(&self) -> &[CovariateKind] {
        &self.kinds
    }

    /// Number of binary covariates.
    pub fn binary_count(&self) -> usize {
        self.kinds.iter().filter(|k| **k == CovariateKind::Binary).count()
    }

    /// Number of continuous covariates.
    pub fn continuous_count(&self) -> usize {
        self.len() - self.binary_count()
    }

    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn is_binary(&self, q: usize) -> bool {
        self.kinds[q] == CovariateKind::Binary
    }
}

/// One subject: follow-up time, event flag, exposure, covariates with
/// missingness recorded as `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservedRecord {
    pub t: f64,
    pub d: u8,
    pub z: u8,
    pub x: Vec<Option<f64>>,
}

impl ObservedRecord {
    pub fn new(t: f64, d: u8, z: u8, x: Vec<Option<f64>>) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParam(format!("time must be positive and finite, got {t}")));
        }
        if d > 1 {
            return Err(Error::InvalidParam(format!("event flag must be 0 or 1, got {d}")));
        }
        if z > 1 {
            return Err(Error::InvalidParam(format!("exposure must be 0 or 1, got {z}")));
        }
        Ok(ObservedRecord { t, d, z, x })
    }
}

/// The whole cohort plus its schema.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: CovariateSchema,
    records: Vec<ObservedRecord>,
}

impl Dataset {
    pub fn new(schema: CovariateSchema, records: Vec<ObservedRecord>) -> Result<Self> {
        if records.len() < 2 {
            return Err(Error::InvalidParam(format!(
                "dataset needs at least 2 records, got {}",
                records.len()
            )));
        }
        for (i, r) in records.iter().enumerate() {
            validate_record(r, &schema, i + 1)?;
        }
        Ok(Dataset { schema, records })
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn records(&self) -> &[ObservedRecord] {
        &self.records
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    /// Count of missing covariate entries across the cohort.
    pub fn missing_count(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.x.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    /// (row, covariate) positions of missing entries.
    pub fn missing_mask(&self) -> Vec<(usize, usize)> {
        let mut mask = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            for (q, v) in r.x.iter().enumerate() {
                if v.is_none() {
                    mask.push((i, q));
                }
            }
        }
        mask
    }
}

fn validate_record(r: &ObservedRecord, schema: &CovariateSchema, row: usize) -> Result<()> {
    let fail = |field: &str, message: String| {
        Err(Error::Validation {
            row,
            field: field.to_string(),
            message,
        })
    };
    if !(r.t > 0.0) || !r.t.is_finite() {
        return fail("time", format!("must be positive and finite, got {}", r.t));
    }
    if r.d > 1 {
        return fail("event", format!("must be 0 or 1, got {}", r.d));
    }
    if r.z > 1 {
        return fail("exposure", format!("must be 0 or 1, got {}", r.z));
    }
    if r.x.len() != schema.len() {
        return fail(
            "covariates",
            format!("expected {} entries, got {}", schema.len(), r.x.len()),
        );
    }
    for (q, v) in r.x.iter().enumerate() {
        if let Some(v) = *v {
            if !v.is_finite() {
                return fail(&schema.names()[q], format!("must be finite, got {v}"));
            }
            if schema.is_binary(q) && v != 0.0 && v != 1.0 {
                return fail(&schema.names()[q], format!("binary covariate must be 0 or 1, got {v}"));
            }
        }
    }
    Ok(())
}

/// Load a comma-separated dataset with header `time,event,exposure,<names...>`.
///
/// Covariate cells equal to `missing_marker` (or empty) are recorded as
/// missing; `time`, `event`, and `exposure` must always be present.
pub fn load_dataset(path: &Path, schema: &CovariateSchema, missing_marker: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut expected = vec!["time".to_string(), "event".to_string(), "exposure".to_string()];
    expected.extend(schema.names().iter().cloned());
    let got: Vec<String> = headers.iter().map(|h| h.trim().to_string()).collect();
    if got != expected {
        return Err(Error::SchemaMismatch(format!(
            "header mismatch: expected {expected:?}, got {got:?}"
        )));
    }

    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let row_no = idx + 1;
        let row = row.map_err(|e| Error::Parse {
            row: row_no,
            message: e.to_string(),
        })?;
        if row.len() != expected.len() {
            return Err(Error::Parse {
                row: row_no,
                message: format!("expected {} columns, got {}", expected.len(), row.len()),
            });
        }
        let cell = |j: usize| row.get(j).unwrap_or("").trim();
        let is_missing = |s: &str| s.is_empty() || s == missing_marker;

        let parse_f64 = |j: usize, field: &str| -> Result<f64> {
            let s = cell(j);
            if is_missing(s) {
                return Err(Error::Validation {
                    row: row_no,
                    field: field.to_string(),
                    message: "must not be missing".into(),
                });
            }
            s.parse::<f64>().map_err(|_| Error::Parse {
                row: row_no,
                message: format!("cannot parse `{s}` in column `{field}`"),
            })
        };

        let t = parse_f64(0, "time")?;
        let d_raw = parse_f64(1, "event")?;
        let z_raw = parse_f64(2, "exposure")?;
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Validation {
                row: row_no,
                field: "time".into(),
                message: format!("must be positive and finite, got {t}"),
            });
        }
        if d_raw != 0.0 && d_raw != 1.0 {
            return Err(Error::Validation {
                row: row_no,
                field: "event".into(),
                message: format!("must be 0 or 1, got {d_raw}"),
            });
        }
        if z_raw != 0.0 && z_raw != 1.0 {
            return Err(Error::Validation {
                row: row_no,
                field: "exposure".into(),
                message: format!("must be 0 or 1, got {z_raw}"),
            });
        }

        let mut x = Vec::with_capacity(schema.len());
        for q in 0..schema.len() {
            let s = cell(3 + q);
            if is_missing(s) {
                x.push(None);
            } else {
                let v = s.parse::<f64>().map_err(|_| Error::Parse {
                    row: row_no,
                    message: format!("cannot parse `{s}` in column `{}`", schema.names()[q]),
                })?;
                x.push(Some(v));
            }
        }
        let record = ObservedRecord {
            t,
            d: d_raw as u8,
            z: z_raw as u8,
            x,
        };
        validate_record(&record, schema, row_no)?;
        records.push(record);
    }
    Dataset::new(schema.clone(), records)
}

/// Write a dataset back to the delimited format accepted by [`load_dataset`].
pub fn save_dataset(dataset: &Dataset, path: &Path, missing_marker: &str) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string(), "event".to_string(), "exposure".to_string()];
    header.extend(dataset.schema().names().iter().cloned());
    writer.write_record(&header)?;
    for r in dataset.records() {
        let mut row = vec![format!("{}", r.t), format!("{}", r.d), format!("{}", r.z)];
        for v in &r.x {
            row.push(match v {
                Some(v) => format!("{v}"),
                None => missing_marker.to_string(),
            });
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// A right-continuous step survival curve on strictly increasing knots.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSurvival {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub at_risk: Vec<usize>,
}

impl StepSurvival {
    /// Survival probability at time `t` (1 before the first knot).
    pub fn at(&self, t: f64) -> f64 {
        match self.times.iter().rposition(|&k| k <= t) {
            Some(i) => self.values[i],
            None => 1.0,
        }
    }
}

/// Product-limit estimator over `(time, event)` pairs.
///
/// Ties between events and censorings at the same time are resolved
/// events-first: censored subjects stay in the risk set for deaths at their
/// own censoring time.
pub fn kaplan_meier(records: &[(f64, u8)]) -> Result<StepSurvival> {
    if records.is_empty() {
        return Err(Error::InvalidParam("kaplan_meier requires a nonempty input".into()));
    }
    if records.iter().any(|&(t, _)| !(t > 0.0) || !t.is_finite()) {
        return Err(Error::InvalidParam("kaplan_meier times must be positive and finite".into()));
    }
    let mut sorted: Vec<(f64, u8)> = records.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let n = sorted.len();
    let mut times = Vec::new();
    let mut values = Vec::new();
    let mut at_risk = Vec::new();
    let mut surv = 1.0;
    let mut i = 0;
    while i < n {
        let t = sorted[i].0;
        let mut deaths = 0usize;
        let mut j = i;
        while j < n && sorted[j].0 == t {
            deaths += usize::from(sorted[j].1 == 1);
            j += 1;
        }
        let risk = n - i;
        if deaths > 0 {
            surv *= 1.0 - deaths as f64 / risk as f64;
        }
        times.push(t);
        values.push(surv);
        at_risk.push(risk);
        i = j;
    }
    Ok(StepSurvival { times, values, at_risk })
}

/// Write a step survival curve as `time,survival,at_risk` rows.
pub fn save_step_survival(curve: &StepSurvival, path: &Path) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["time", "survival", "at_risk"])?;
    for i in 0..curve.times.len() {
        writer.write_record(&[
            format!("{}", curve.times[i]),
            format!("{}", curve.values[i]),
            format!("{}", curve.at_risk[i]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
