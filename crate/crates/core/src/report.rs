//! Ranked candidate tables and key=value summaries.
//!
//! Text output rounds MSE to 4 decimals; CSV keeps full precision. In
//! plain text the best row carries `*` and rows significantly worse than
//! it carry `v`.

use std::fmt::Write as _;

use crate::metrics::format_p;

pub const DEFAULT_SIGNIFICANCE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRow {
    pub label: String,
    pub mean_mse: f64,
    /// Paired-test p-value against the best row; `None` for the best row
    /// itself.
    pub p_vs_best: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedTable {
    pub caption: String,
    /// Ascending by MSE.
    pub rows: Vec<RankedRow>,
    pub threshold: f64,
    pub footer: Vec<String>,
}

impl RankedTable {
    /// Sorts rows ascending by MSE; equal MSEs keep their input order.
    pub fn new(caption: impl Into<String>, mut rows: Vec<RankedRow>, threshold: f64) -> Self {
        rows.sort_by(|a, b| a.mean_mse.total_cmp(&b.mean_mse));
        RankedTable {
            caption: caption.into(),
            rows,
            threshold,
            footer: Vec::new(),
        }
    }

    pub fn with_footer(mut self, line: impl Into<String>) -> Self {
        self.footer.push(line.into());
        self
    }

    /// Significantly worse than the best row.
    pub fn is_marked(&self, i: usize) -> bool {
        if i == 0 {
            return false;
        }
        let row = &self.rows[i];
        matches!(row.p_vs_best, Some(p) if p < self.threshold) && row.mean_mse > self.rows[0].mean_mse
    }

    /// Plain-text table of the first `limit` rows.
    pub fn to_text(&self, limit: usize) -> String {
        let shown = self.rows.len().min(limit);
        let width = self.rows[..shown]
            .iter()
            .map(|r| r.label.len())
            .max()
            .unwrap_or(0)
            .max("candidate".len());
        let mut s = String::new();
        if !self.caption.is_empty() {
            writeln!(s, "{}", self.caption).unwrap();
        }
        writeln!(
            s,
            "{:<4}  {:<width$}  {:<8}  p_vs_best",
            "rank", "candidate", "mean_mse"
        )
        .unwrap();
        for (i, r) in self.rows.iter().take(shown).enumerate() {
            let mark = if i == 0 {
                "*"
            } else if self.is_marked(i) {
                "v"
            } else {
                " "
            };
            let p = r.p_vs_best.map(format_p).unwrap_or_else(|| "-".into());
            writeln!(s, "{:<4}  {:<width$}  {:.4}{mark}   {p}", i + 1, r.label, r.mean_mse).unwrap();
        }
        if self.rows.len() > shown {
            writeln!(s, "({} more candidates in CSV)", self.rows.len() - shown).unwrap();
        }
        writeln!(s, "* best; v significantly worse than best (p < {})", self.threshold).unwrap();
        for line in &self.footer {
            writeln!(s, "{line}").unwrap();
        }
        s
    }

    /// `rank,candidate,mean_mse,p_vs_best,marked` at full precision.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rank,candidate,mean_mse,p_vs_best,marked\n");
        for (i, r) in self.rows.iter().enumerate() {
            let p = r.p_vs_best.map(|p| p.to_string()).unwrap_or_default();
            writeln!(s, "{},{},{},{},{}", i + 1, r.label, r.mean_mse, p, self.is_marked(i)).unwrap();
        }
        s
    }
}

/// Ranked table with the default caption and threshold.
pub fn render_ranked(candidates: Vec<RankedRow>) -> RankedTable {
    RankedTable::new("", candidates, DEFAULT_SIGNIFICANCE)
}

/// `key=value` lines in the given order.
pub fn kv_block<K: AsRef<str>, V: AsRef<str>>(pairs: &[(K, V)]) -> String {
    let mut s = String::new();
    for (k, v) in pairs {
        writeln!(s, "{}={}", k.as_ref(), v.as_ref()).unwrap();
    }
    s
}
