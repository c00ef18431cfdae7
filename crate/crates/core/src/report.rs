//! Plot-ready CSV and plain-text tables of search results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::search::{SearchResult, SweepOutcome, SweepPoint};

pub const REPORT_HEADER: &str =
    "max_size_bits,max_latency_us,status,objective_loss,total_size_bits,total_latency_us,selection";

/// One report line: the budget a search ran under and what it found.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub max_size_bits: Option<u64>,
    pub max_latency_us: Option<f64>,
    /// `None` when the budget was infeasible.
    pub found: Option<Found>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Found {
    pub objective_loss: f64,
    pub total_size_bits: u64,
    pub total_latency_us: Option<f64>,
    pub selection: String,
}

impl From<&SearchResult> for ReportRow {
    fn from(r: &SearchResult) -> Self {
        Self {
            max_size_bits: r.constraints.max_total_size_bits,
            max_latency_us: r.constraints.max_total_latency_us,
            found: Some(Found {
                objective_loss: r.objective_loss,
                total_size_bits: r.total_size_bits,
                total_latency_us: r.total_latency_us,
                selection: r.selection_label(),
            }),
        }
    }
}

impl From<&SweepPoint> for ReportRow {
    fn from(p: &SweepPoint) -> Self {
        match &p.outcome {
            SweepOutcome::Found(r) => r.into(),
            SweepOutcome::Infeasible(_) => Self {
                max_size_bits: p.budget.max_size_bits,
                max_latency_us: p.budget.max_latency_us,
                found: None,
            },
        }
    }
}

fn budget_order(a: &ReportRow, b: &ReportRow) -> std::cmp::Ordering {
    a.max_size_bits
        .cmp(&b.max_size_bits)
        .then(a.max_latency_us.unwrap_or(f64::NEG_INFINITY).total_cmp(&b.max_latency_us.unwrap_or(f64::NEG_INFINITY)))
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text, rows sorted ascending by budget.
pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut rows = rows.to_vec();
    rows.sort_by(budget_order);
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in &rows {
        let _ = write!(s, "{},{},", opt(r.max_size_bits), opt(r.max_latency_us));
        match &r.found {
            Some(f) => {
                let _ = writeln!(
                    s,
                    "ok,{},{},{},{}",
                    f.objective_loss,
                    f.total_size_bits,
                    opt(f.total_latency_us),
                    f.selection
                );
            }
            None => s.push_str("infeasible,,,,\n"),
        }
    }
    s
}

/// Aligned plain-text rendering of the same rows.
pub fn to_table(rows: &[ReportRow]) -> String {
    let mut rows = rows.to_vec();
    rows.sort_by(budget_order);
    let cells: Vec<[String; 6]> = rows
        .iter()
        .map(|r| {
            let (loss, size, lat, sel) = match &r.found {
                Some(f) => (
                    format!("{:.6e}", f.objective_loss),
                    f.total_size_bits.to_string(),
                    f.total_latency_us.map(|l| format!("{l:.3}")).unwrap_or_else(|| "-".into()),
                    f.selection.clone(),
                ),
                None => ("infeasible".into(), "-".into(), "-".into(), "-".into()),
            };
            let budget_size = r.max_size_bits.map_or("-".into(), |b| b.to_string());
            let budget_lat = r.max_latency_us.map_or("-".into(), |b| format!("{b:.3}"));
            [budget_size, budget_lat, loss, size, lat, sel]
        })
        .collect();
    let header = ["size budget", "latency budget", "loss", "size bits", "latency us", "selection"];
    let mut widths = header.map(str::len);
    for row in &cells {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let mut s = String::new();
    let line = |s: &mut String, row: &[&str]| {
        for (i, (c, w)) in row.iter().zip(widths).enumerate() {
            if i + 1 == row.len() {
                let _ = write!(s, "{c}");
            } else {
                let _ = write!(s, "{c:>w$}  ");
            }
        }
        s.push('\n');
    };
    line(&mut s, &header);
    for row in &cells {
        line(&mut s, &row.each_ref().map(String::as_str));
    }
    s
}

/// Writes `<stem>.csv` and `<stem>.txt` into `dir`.
pub fn emit_report(rows: &[ReportRow], dir: &Path, stem: &str) -> Result<(std::path::PathBuf, std::path::PathBuf)> {
    if rows.is_empty() {
        return Err(Error::Validation("nothing to report".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv = dir.join(format!("{stem}.csv"));
    let txt = dir.join(format!("{stem}.txt"));
    fs::write(&csv, to_csv(rows)).map_err(|e| Error::io(&csv, e))?;
    fs::write(&txt, to_table(rows)).map_err(|e| Error::io(&txt, e))?;
    Ok((csv, txt))
}

/// Parses text produced by [`to_csv`].
pub fn parse_csv(path: &Path, text: &str) -> Result<Vec<ReportRow>> {
    let err = |line: usize, msg: String| Error::Parse { file: path.to_path_buf(), line, msg };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == REPORT_HEADER => {}
        _ => return Err(err(1, format!("expected header {REPORT_HEADER}"))),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.is_empty()) {
        let n = i + 1;
        let f: Vec<&str> = line.splitn(7, ',').collect();
        if f.len() != 7 {
            return Err(err(n, format!("expected 7 fields, got {}", f.len())));
        }
        fn field<T: std::str::FromStr>(s: &str) -> std::result::Result<Option<T>, String>
        where
            T::Err: std::fmt::Display,
        {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|e: T::Err| format!("{s:?}: {e}"))
            }
        }
        let max_size_bits = field::<u64>(f[0]).map_err(|m| err(n, m))?;
        let max_latency_us = field::<f64>(f[1]).map_err(|m| err(n, m))?;
        let found = match f[2] {
            "ok" => Some(Found {
                objective_loss: field::<f64>(f[3]).map_err(|m| err(n, m))?.ok_or_else(|| err(n, "missing loss".into()))?,
                total_size_bits: field::<u64>(f[4]).map_err(|m| err(n, m))?.ok_or_else(|| err(n, "missing size".into()))?,
                total_latency_us: field::<f64>(f[5]).map_err(|m| err(n, m))?,
                selection: f[6].to_string(),
            }),
            "infeasible" => None,
            other => return Err(err(n, format!("unknown status {other:?}"))),
        };
        rows.push(ReportRow { max_size_bits, max_latency_us, found });
    }
    Ok(rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(path, &text)
}
