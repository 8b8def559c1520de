//! Convergence reports: ε-ladders of norms, fitted rates, CSV/JSON output and comparison.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Least-squares fit of log(value) against log(parameter).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub rate: f64,
    pub intercept: f64,
    pub stderr: f64,
    /// Half-width used when comparing rates between reports.
    pub confidence: f64,
    pub points: usize,
}

/// Minimum confidence half-width for rate comparisons.
pub const MIN_RATE_CONFIDENCE: f64 = 0.05;

/// Fits value ≈ C · param^rate; needs at least four strictly positive pairs.
pub fn fit_rate(params: &[f64], values: &[f64]) -> Result<RateFit> {
    if params.len() != values.len() || params.len() < 4 {
        return Err(LabError::InvalidParameter(format!("rate fit needs at least 4 points, got {}", params.len())));
    }
    if params.iter().chain(values).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(LabError::InvalidParameter("rate fit needs positive finite data".into()));
    }
    let xs: Vec<f64> = params.iter().map(|v| v.ln()).collect();
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(LabError::InvalidParameter("rate fit needs distinct parameters".into()));
    }
    let rate = sxy / sxx;
    let intercept = my - rate * mx;
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - rate * x).powi(2)).sum();
    let stderr = (sse / (m - 2.0) / sxx).sqrt();
    Ok(RateFit { rate, intercept, stderr, confidence: (2.0 * stderr).max(MIN_RATE_CONFIDENCE), points: xs.len() })
}

/// A named assertion with its outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

/// Universal experiment output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub schema_version: u32,
    pub kind: String,
    pub parameter: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub rates: BTreeMap<String, RateFit>,
    pub noise_floor: Option<f64>,
    pub verdict: Option<String>,
    pub tolerances: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
}

impl ConvergenceReport {
    pub fn new(kind: impl Into<String>, parameter: impl Into<String>, columns: &[&str]) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: kind.into(),
            parameter: parameter.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            rates: BTreeMap::new(),
            noise_floor: None,
            verdict: None,
            tolerances: BTreeMap::new(),
            checks: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the columns");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// Fits the rate of `column` against the first column and stores it.
    pub fn fit(&mut self, column: &str) -> Result<RateFit> {
        let x = self.rows.iter().map(|r| r[0]).collect::<Vec<_>>();
        let y = self
            .column(column)
            .ok_or_else(|| LabError::InvalidParameter(format!("unknown column `{column}`")))?;
        let fit = fit_rate(&x, &y)?;
        self.rates.insert(column.to_string(), fit.clone());
        Ok(fit)
    }

    pub fn check(&mut self, name: impl Into<String>, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check::new(name, passed, detail));
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// CSV with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(|v| format!("{v:.16e}")).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| LabError::Parse(e.to_string()))
    }
}

/// Result of [`compare`].
#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub equal: bool,
    pub rates_equal: bool,
    pub lines: Vec<String>,
}

/// Tolerance-aware comparison: rates within the larger declared confidence,
/// table cells within relative tolerance `rel_tol`.
pub fn compare(a: &ConvergenceReport, b: &ConvergenceReport, rel_tol: f64) -> Result<Comparison> {
    if a.schema_version != b.schema_version || a.kind != b.kind || a.columns != b.columns {
        return Err(LabError::SchemaMismatch(format!(
            "`{}` v{} {:?} vs `{}` v{} {:?}",
            a.kind, a.schema_version, a.columns, b.kind, b.schema_version, b.columns
        )));
    }
    let mut lines = Vec::new();
    let mut rates_equal = true;
    let keys: std::collections::BTreeSet<&String> = a.rates.keys().chain(b.rates.keys()).collect();
    for k in keys {
        match (a.rates.get(k), b.rates.get(k)) {
            (Some(x), Some(y)) => {
                let tol = x.confidence.max(y.confidence);
                let ok = (x.rate - y.rate).abs() <= tol;
                rates_equal &= ok;
                lines.push(format!(
                    "rate {k}: {:.6} vs {:.6} (±{:.3}) {}",
                    x.rate,
                    y.rate,
                    tol,
                    if ok { "equal" } else { "DIFFER" }
                ));
            }
            _ => {
                rates_equal = false;
                lines.push(format!("rate {k}: present in only one report"));
            }
        }
    }
    let mut cells_equal = a.rows.len() == b.rows.len();
    if !cells_equal {
        lines.push(format!("row count {} vs {}", a.rows.len(), b.rows.len()));
    }
    for (i, (ra, rb)) in a.rows.iter().zip(&b.rows).enumerate() {
        for (c, (x, y)) in a.columns.iter().zip(ra.iter().zip(rb)) {
            let scale = x.abs().max(y.abs());
            let differs = if x.is_nan() || y.is_nan() { x.is_nan() != y.is_nan() } else { (x - y).abs() > rel_tol * scale };
            if differs {
                cells_equal = false;
                lines.push(format!("row {i} {c}: {x:.16e} vs {y:.16e}"));
            }
        }
    }
    if a.verdict != b.verdict {
        cells_equal = false;
        lines.push(format!("verdict {:?} vs {:?}", a.verdict, b.verdict));
    }
    Ok(Comparison { equal: rates_equal && cells_equal, rates_equal, lines })
}
