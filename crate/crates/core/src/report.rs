//! `results.csv` and comparison summaries.

use std::fmt::Write as _;

use crate::error::{FedQuadError, Result};
use crate::federation::RoundReport;

pub const RESULTS_HEADER: &str =
    "round,participants,ce_loss,metric_loss,total_loss,accuracy,intra,inter,ratio";
pub const SUMMARY_HEADER: &str = "method,partition,alpha,final_accuracy,final_ratio";

/// Six significant digits in the style of C's `%g`; infinities print as
/// `inf` / `-inf`.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn results_csv(reports: &[RoundReport]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in reports {
        let ids: Vec<String> = r.participants.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.round,
            ids.join(";"),
            format_sig6(r.ce_loss),
            format_sig6(r.metric_loss),
            format_sig6(r.total_loss),
            format_sig6(r.accuracy),
            format_sig6(r.intra),
            format_sig6(r.inter),
            format_sig6(r.ratio),
        )
        .unwrap();
    }
    out
}

/// One parsed `results.csv` row, numeric fields kept as written.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub round: usize,
    pub fields: Vec<String>,
}

impl ResultRow {
    fn column(&self, name: &str) -> &str {
        let idx = RESULTS_HEADER
            .split(',')
            .position(|c| c == name)
            .expect("known column");
        &self.fields[idx]
    }

    pub fn accuracy(&self) -> &str {
        self.column("accuracy")
    }

    pub fn ratio(&self) -> &str {
        self.column("ratio")
    }
}

pub fn parse_results_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == RESULTS_HEADER => {}
        Some((_, h)) => {
            return Err(FedQuadError::Validation(format!(
                "results schema mismatch: expected `{RESULTS_HEADER}`, got `{h}`"
            )))
        }
        None => {
            return Err(FedQuadError::Parse {
                line: 1,
                message: "empty results file".into(),
            })
        }
    }
    let width = RESULTS_HEADER.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
        if fields.len() != width {
            return Err(FedQuadError::Parse {
                line: i + 1,
                message: format!("expected {width} fields, found {}", fields.len()),
            });
        }
        let round = fields[0].parse().map_err(|_| FedQuadError::Parse {
            line: i + 1,
            message: format!("round {:?} is not an integer", fields[0]),
        })?;
        rows.push(ResultRow { round, fields });
    }
    if rows.is_empty() {
        return Err(FedQuadError::Parse {
            line: 2,
            message: "results file has no rounds".into(),
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub partition: String,
    pub alpha: String,
    pub final_accuracy: String,
    pub final_ratio: String,
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.method, r.partition, r.alpha, r.final_accuracy, r.final_ratio
        )
        .unwrap();
    }
    out
}
