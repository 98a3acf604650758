use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const TRIALS_HEADER: &str = "trial,seed,acc_before,acc_after,loss_before,loss_after,train_s,icing_s";
pub const SUMMARY_HEADER: &str =
    "configuration,trials,acc_before_mean,acc_before_std,acc_after_mean,acc_after_std,loss_before_mean,loss_after_mean";

#[derive(Clone, Debug, PartialEq)]
pub struct TrialReport {
    pub trial: usize,
    pub seed: u64,
    pub acc_before: f64,
    pub acc_after: f64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub train_s: f64,
    pub icing_s: f64,
}

impl TrialReport {
    /// Floats use the shortest representation that parses back exactly.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.trial,
            self.seed,
            self.acc_before,
            self.acc_after,
            self.loss_before,
            self.loss_after,
            self.train_s,
            self.icing_s
        )
    }
}

pub fn trials_csv(reports: &[TrialReport]) -> String {
    let mut s = String::from(TRIALS_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn parse_trials_csv(text: &str, path: &Path) -> Result<Vec<TrialReport>> {
    let bad = |line: usize, detail: String| Error::Malformed {
        path: path.into(),
        detail: format!("line {line}: {detail}"),
    };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == TRIALS_HEADER => {}
        other => return Err(bad(1, format!("expected header {TRIALS_HEADER:?}, got {other:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 8 {
            return Err(bad(i + 2, format!("{} fields, expected 8", f.len())));
        }
        let float = |j: usize| {
            f[j].parse::<f64>()
                .map_err(|_| bad(i + 2, format!("bad number {:?}", f[j])))
        };
        out.push(TrialReport {
            trial: f[0].parse().map_err(|_| bad(i + 2, format!("bad trial {:?}", f[0])))?,
            seed: f[1].parse().map_err(|_| bad(i + 2, format!("bad seed {:?}", f[1])))?,
            acc_before: float(2)?,
            acc_after: float(3)?,
            loss_before: float(4)?,
            loss_after: float(5)?,
            train_s: float(6)?,
            icing_s: float(7)?,
        });
    }
    if out.is_empty() {
        return Err(bad(2, "no trial rows".into()));
    }
    Ok(out)
}

/// Mean and sample standard deviation (n−1 denominator, 0 for one value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub configuration: String,
    pub trials: usize,
    pub acc_before: (f64, f64),
    pub acc_after: (f64, f64),
    pub loss_before: f64,
    pub loss_after: f64,
}

impl SummaryRow {
    pub fn from_trials(configuration: impl Into<String>, reports: &[TrialReport]) -> Self {
        let col = |f: fn(&TrialReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
        Self {
            configuration: configuration.into(),
            trials: reports.len(),
            acc_before: mean_std(&col(|r| r.acc_before)),
            acc_after: mean_std(&col(|r| r.acc_after)),
            loss_before: mean_std(&col(|r| r.loss_before)).0,
            loss_after: mean_std(&col(|r| r.loss_after)).0,
        }
    }
}

/// `mean (std)` with 3 and 4 decimals.
pub fn cell((mean, std): (f64, f64)) -> String {
    format!("{mean:.3} ({std:.4})")
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Configuration | Before | After icing |\n| --- | --- | --- |\n");
        for r in &self.rows {
            writeln!(
                s,
                "| {} | {} | {} |",
                r.configuration,
                cell(r.acc_before),
                cell(r.acc_after)
            )
            .unwrap();
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.rows {
            writeln!(
                s,
                "\"{}\",{},{},{},{},{},{},{}",
                r.configuration.replace('"', "\"\""),
                r.trials,
                r.acc_before.0,
                r.acc_before.1,
                r.acc_after.0,
                r.acc_after.1,
                r.loss_before,
                r.loss_after
            )
            .unwrap();
        }
        s
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Markdown => self.to_markdown(),
            ReportFormat::Csv => self.to_csv(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown format {other:?}"))),
        }
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `trials.csv`, `summary.csv` and `summary.md` into `dir`.
pub fn emit_report(table: &SummaryTable, reports: &[TrialReport], dir: &Path) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Empty("trial reports"));
    }
    write(&dir.join("trials.csv"), &trials_csv(reports))?;
    write(&dir.join("summary.csv"), &table.to_csv())?;
    write(&dir.join("summary.md"), &table.to_markdown())
}
