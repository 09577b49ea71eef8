//! Per-metric deltas between two evaluation reports and their bar charts.

use std::fmt::Write as _;

use super::report::parse_blocks;
use crate::error::{Error, Result};

/// Blocks without per-row numeric metrics.
const SKIPPED_BLOCKS: [&str; 2] = ["summary", "confusion"];

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaRow {
    pub block: String,
    pub key: String,
    pub metric: String,
    pub candidate: Option<f64>,
    pub baseline: Option<f64>,
}

impl DeltaRow {
    /// `candidate - baseline`, or `None` when either side is missing.
    pub fn delta(&self) -> Option<f64> {
        Some(self.candidate? - self.baseline?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub candidate: String,
    pub baseline: String,
    pub rows: Vec<DeltaRow>,
}

fn summary_value(
    blocks: &std::collections::BTreeMap<String, Vec<Vec<String>>>,
    key: &str,
) -> Option<String> {
    blocks
        .get("summary")?
        .iter()
        .find(|r| r.first().map(String::as_str) == Some(key))
        .and_then(|r| r.get(1).cloned())
}

fn parse_num(s: &str) -> Option<f64> {
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Compares two report CSVs produced on the same validation manifest.
pub fn compare_reports(candidate_csv: &str, baseline_csv: &str) -> Result<Comparison> {
    let a = parse_blocks(candidate_csv);
    let b = parse_blocks(baseline_csv);
    let (ca, cb) = (
        summary_value(&a, "manifest_checksum"),
        summary_value(&b, "manifest_checksum"),
    );
    if ca.is_none() || ca != cb {
        return Err(Error::config(
            "reports were produced on different validation manifests",
        ));
    }
    let mut rows = Vec::new();
    for (name, block) in &a {
        if SKIPPED_BLOCKS.contains(&name.as_str()) || block.is_empty() {
            continue;
        }
        let header = &block[0];
        let other = b.get(name);
        let mut keys: Vec<&String> = block[1..].iter().filter_map(|r| r.first()).collect();
        if let Some(o) = other {
            for r in o.iter().skip(1) {
                if let Some(k) = r.first() {
                    if !keys.contains(&k) {
                        keys.push(k);
                    }
                }
            }
        }
        for key in keys {
            let find = |blk: Option<&Vec<Vec<String>>>, col: usize| {
                blk.and_then(|bl| bl.iter().skip(1).find(|r| r.first() == Some(key)))
                    .and_then(|r| r.get(col))
                    .and_then(|v| parse_num(v))
            };
            for (col, metric) in header.iter().enumerate().skip(1) {
                if metric == "instances" {
                    continue;
                }
                rows.push(DeltaRow {
                    block: name.clone(),
                    key: key.clone(),
                    metric: metric.clone(),
                    candidate: find(Some(block), col),
                    baseline: find(other, col),
                });
            }
        }
    }
    Ok(Comparison {
        candidate: summary_value(&a, "label").unwrap_or_default(),
        baseline: summary_value(&b, "label").unwrap_or_default(),
        rows,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x}"))
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# deltas {} vs {}\nblock,key,metric,candidate,baseline,delta\n",
            self.candidate, self.baseline
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.block,
                r.key,
                r.metric,
                fmt_opt(r.candidate),
                fmt_opt(r.baseline),
                fmt_opt(r.delta())
            );
        }
        s
    }

    /// Rows of one block/metric pair, e.g. per-class boundary precision.
    pub fn series(&self, block: &str, metric: &str) -> Vec<&DeltaRow> {
        self.rows
            .iter()
            .filter(|r| r.block == block && r.metric == metric)
            .collect()
    }

    /// Standalone SVG bar chart of percentage-point improvements for one series.
    pub fn to_svg(&self, block: &str, metric: &str) -> String {
        let rows = self.series(block, metric);
        let (bar, gap, top, height) = (36.0, 14.0, 40.0, 200.0);
        let width = 60.0 + rows.len().max(1) as f64 * (bar + gap);
        let deltas: Vec<Option<f64>> = rows.iter().map(|r| r.delta().map(|d| 100.0 * d)).collect();
        let max = deltas.iter().flatten().fold(1e-9f64, |m, d| m.max(d.abs()));
        let zero = top + height / 2.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{}" viewBox="0 0 {width} {}">"#,
            top + height + 40.0,
            top + height + 40.0
        );
        let _ = writeln!(
            s,
            r#"<rect x="0" y="0" width="{width}" height="{}" fill="white"/>"#,
            top + height + 40.0
        );
        let _ = writeln!(
            s,
            r#"<text x="10" y="20" font-family="sans-serif" font-size="13" fill="black">{} {}: {} minus {} (points)</text>"#,
            block, metric, self.candidate, self.baseline
        );
        let _ = writeln!(
            s,
            r#"<line x1="40" y1="{zero}" x2="{}" y2="{zero}" stroke="black" stroke-width="1"/>"#,
            width - 10.0
        );
        for (i, (r, d)) in rows.iter().zip(&deltas).enumerate() {
            let x = 50.0 + i as f64 * (bar + gap);
            if let Some(d) = d {
                let h = d.abs() / max * (height / 2.0 - 10.0);
                let (y, color) = if *d >= 0.0 {
                    (zero - h, "#2a7ab9")
                } else {
                    (zero, "#c0392b")
                };
                let _ = writeln!(
                    s,
                    r#"<rect x="{x}" y="{y}" width="{bar}" height="{h}" fill="{color}"/>"#
                );
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">{:.2}</text>"#,
                    x + bar / 2.0,
                    if *d >= 0.0 { y - 3.0 } else { y + h + 11.0 },
                    d
                );
            } else {
                let _ = writeln!(
                    s,
                    r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="middle">n/a</text>"#,
                    x + bar / 2.0,
                    zero - 3.0
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
                x + bar / 2.0,
                top + height + 20.0,
                r.key
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
