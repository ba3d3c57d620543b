use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{mean, ObservationSet};
use crate::protocol::ConditionKind;

pub const HIST_MIN: f64 = -3.0;
pub const HIST_MAX: f64 = 3.0;
pub const HIST_WIDTH: f64 = 0.25;

/// A rectangular table with named columns, rendered as CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    pub fn new(columns: &[&str]) -> Self {
        PlotTable { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|c| csv_cell(c)).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }
}

fn csv_cell(c: &str) -> String {
    if c.contains([',', '"', '\n']) {
        format!("\"{}\"", c.replace('"', "\"\""))
    } else {
        c.to_string()
    }
}

/// Mean value per (subject, condition), subjects in sorted order.
pub fn condition_means(obs: &ObservationSet) -> BTreeMap<(String, ConditionKind), f64> {
    let mut groups: BTreeMap<(String, ConditionKind), Vec<f64>> = BTreeMap::new();
    for r in &obs.rows {
        groups.entry((r.subject_id.clone(), r.condition)).or_default().push(r.value);
    }
    groups.into_iter().filter_map(|(k, v)| mean(&v).map(|m| (k, m))).collect()
}

fn bin_count() -> usize {
    libm::round((HIST_MAX - HIST_MIN) / HIST_WIDTH) as usize
}

/// Left-closed bin index; values outside the range land in the edge bins.
fn bin_of(x: f64) -> usize {
    let k = libm::floor((x - HIST_MIN) / HIST_WIDTH);
    if k < 0.0 {
        0
    } else {
        (k as usize).min(bin_count() - 1)
    }
}

/// Histogram of per-subject condition means, columns
/// `condition,bin_start,bin_end,count`, one row per bin and condition.
pub fn emit_condition_histograms(obs: &ObservationSet) -> PlotTable {
    let mut counts = BTreeMap::new();
    for c in [ConditionKind::LowScore, ConditionKind::HighScore] {
        counts.insert(c, vec![0usize; bin_count()]);
    }
    for ((_, c), m) in condition_means(obs) {
        if let Some(bins) = counts.get_mut(&c) {
            bins[bin_of(m)] += 1;
        }
    }
    let mut table = PlotTable::new(&["condition", "bin_start", "bin_end", "count"]);
    for (c, bins) in counts {
        for (k, n) in bins.into_iter().enumerate() {
            let lo = HIST_MIN + k as f64 * HIST_WIDTH;
            table.push(vec![c.as_str().into(), format!("{lo}"), format!("{}", lo + HIST_WIDTH), n.to_string()]);
        }
    }
    table
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectDifference {
    pub subject_id: String,
    pub mean_low: f64,
    pub mean_high: f64,
    /// `mean_high - mean_low`.
    pub difference: f64,
}

/// Per-subject `mean(high) - mean(low)` sorted ascending; subjects missing
/// either condition are left out.
pub fn subject_differences(obs: &ObservationSet) -> Vec<SubjectDifference> {
    let means = condition_means(obs);
    let mut out: Vec<SubjectDifference> = means
        .iter()
        .filter(|((_, c), _)| *c == ConditionKind::LowScore)
        .filter_map(|((s, _), &low)| {
            let high = *means.get(&(s.clone(), ConditionKind::HighScore))?;
            Some(SubjectDifference { subject_id: s.clone(), mean_low: low, mean_high: high, difference: high - low })
        })
        .collect();
    out.sort_by(|a, b| a.difference.total_cmp(&b.difference).then_with(|| a.subject_id.cmp(&b.subject_id)));
    out
}

/// Columns `rank,subject_id,mean_low,mean_high,difference`.
pub fn emit_subject_differences(obs: &ObservationSet) -> PlotTable {
    let mut table = PlotTable::new(&["rank", "subject_id", "mean_low", "mean_high", "difference"]);
    for (i, d) in subject_differences(obs).into_iter().enumerate() {
        table.push(vec![
            (i + 1).to_string(),
            d.subject_id,
            format!("{}", d.mean_low),
            format!("{}", d.mean_high),
            format!("{}", d.difference),
        ]);
    }
    table
}

#[cfg(test)]
mod tests {
    use super::*;
    use ConditionKind::*;

    #[test]
    fn difference_example() {
        let mut o = ObservationSet::default();
        o.push("s1", HighScore, 1.0);
        o.push("s1", LowScore, -1.0);
        o.push("s2", HighScore, 0.0);
        o.push("s2", LowScore, 0.5);
        o.push("s3", HighScore, 0.0);
        let d = subject_differences(&o);
        assert_eq!(d.len(), 2);
        assert_eq!((d[0].subject_id.as_str(), d[0].difference), ("s2", -0.5));
        assert_eq!((d[1].subject_id.as_str(), d[1].difference), ("s1", 2.0));
        let csv = emit_subject_differences(&o).to_csv();
        assert_eq!(csv, "rank,subject_id,mean_low,mean_high,difference\n1,s2,0.5,0,-0.5\n2,s1,-1,1,2\n");
    }

    #[test]
    fn all_zero_data_fills_the_zero_bin() {
        let mut o = ObservationSet::default();
        for s in ["a", "b", "c"] {
            o.push(s, LowScore, 0.0);
            o.push(s, HighScore, 0.0);
        }
        let t = emit_condition_histograms(&o);
        assert_eq!(t.rows.len(), 2 * 24);
        let occupied: Vec<_> = t.rows.iter().filter(|r| r[3] != "0").collect();
        assert_eq!(occupied.len(), 2);
        for r in occupied {
            assert_eq!((r[1].as_str(), r[3].as_str()), ("0", "3"));
        }
    }

    #[test]
    fn edge_bins_clamp() {
        assert_eq!(bin_of(-10.0), 0);
        assert_eq!(bin_of(-3.0), 0);
        assert_eq!(bin_of(2.99), 23);
        assert_eq!(bin_of(3.0), 23);
        assert_eq!(bin_of(50.0), 23);
        assert_eq!(bin_of(-0.0001), 11);
        assert_eq!(bin_of(0.0), 12);
    }

    #[test]
    fn csv_quoting() {
        let mut t = PlotTable::new(&["a"]);
        t.push(vec!["x,\"y\"".into()]);
        assert_eq!(t.to_csv(), "a\n\"x,\"\"y\"\"\"\n");
    }
}
