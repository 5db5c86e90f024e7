use std::fmt::Write as _;
use std::path::Path;

use super::cter::CterReport;
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const SUMMARY_FILE: &str = "report_summary.csv";
pub const BREAKDOWN_FILE: &str = "report_breakdown.csv";

/// Scores of one model on one split. `cter` is present for the cg-test split.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub sentences: usize,
    pub bleu: f64,
    pub cter: Option<CterReport>,
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains([',', '\n', '"']) {
        return Err(Error::config(format!("report label `{s}` contains a CSV delimiter")));
    }
    Ok(s)
}

pub fn summary_csv(reports: &[EvalReport]) -> Result<String> {
    let mut out = String::from(
        "model,split,sentences,bleu,compounds,instance_cter,aggregate_cter,instance_cter_np,instance_cter_vp,instance_cter_pp\n",
    );
    for r in reports {
        let _ = write!(out, "{},{},{},{:.4}", check_field(&r.model)?, check_field(&r.split)?, r.sentences, r.bleu);
        match &r.cter {
            Some(c) => {
                let _ = write!(out, ",{},{:.6},{:.6}", c.compounds, c.instance_cter(), c.aggregate_cter());
                for p in ["NP", "VP", "PP"] {
                    match c.rows("pattern").find(|row| row.bucket == p) {
                        Some(row) => {
                            let _ = write!(out, ",{:.6}", row.instance_cter());
                        }
                        None => out.push(','),
                    }
                }
                out.push('\n');
            }
            None => out.push_str(",,,,,,\n"),
        }
    }
    Ok(out)
}

pub fn breakdown_csv(reports: &[EvalReport]) -> Result<String> {
    let mut out = String::from(
        "model,split,dimension,bucket,samples,sample_errors,instance_cter,compounds,compound_errors,aggregate_cter\n",
    );
    for r in reports {
        let Some(c) = &r.cter else { continue };
        for row in &c.breakdown {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.6},{},{},{:.6}",
                check_field(&r.model)?,
                check_field(&r.split)?,
                row.dimension,
                row.bucket,
                row.samples,
                row.sample_errors,
                row.instance_cter(),
                row.compounds,
                row.compound_errors,
                row.aggregate_cter()
            );
        }
    }
    Ok(out)
}

/// Write the summary and breakdown CSVs into `dir`.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for r in reports {
        if !seen.insert((&r.model, &r.split)) {
            return Err(Error::config(format!("duplicate report for model `{}` on `{}`", r.model, r.split)));
        }
    }
    write_atomic(&dir.join(SUMMARY_FILE), summary_csv(reports)?.as_bytes())?;
    write_atomic(&dir.join(BREAKDOWN_FILE), breakdown_csv(reports)?.as_bytes())
}
