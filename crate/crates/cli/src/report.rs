//! Evaluation artifacts: report tables and the segment timeline plot.

use std::fmt::Write as _;

use mmgcn::metrics::{extract_segments, EvalReport};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub index: usize,
    pub report: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    pub overall: EvalReport,
    pub sequences: Vec<SequenceReport>,
}

impl FullReport {
    /// One `all` row, then one row per sequence.
    pub fn to_csv(&self) -> String {
        let mut out = format!("scope,{}\n", EvalReport::CSV_HEADER);
        writeln!(out, "all,{}", self.overall.csv_row()).unwrap();
        for s in &self.sequences {
            writeln!(out, "{},{}", s.index, s.report.csv_row()).unwrap();
        }
        out
    }
}

pub fn predictions_csv(rows: &[(usize, &[usize], &[usize])]) -> String {
    let mut out = String::from("sequence,frame,gt,pred\n");
    for (i, gt, pred) in rows {
        for (f, (g, p)) in gt.iter().zip(pred.iter()).enumerate() {
            writeln!(out, "{i},{f},{g},{p}").unwrap();
        }
    }
    out
}

const PALETTE: [&str; 10] = [
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

const WIDTH: f64 = 800.0;
const LABEL_W: f64 = 70.0;
const ROW_H: f64 = 14.0;
const GAP: f64 = 4.0;
const BLOCK_H: f64 = 2.0 * ROW_H + GAP + 16.0;

fn segment_row(svg: &mut String, ids: &[usize], y: f64) {
    let scale = (WIDTH - LABEL_W - 10.0) / ids.len().max(1) as f64;
    for s in extract_segments(ids).unwrap_or_default() {
        writeln!(
            svg,
            r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{ROW_H}" fill="{}"><title>class {} [{}, {})</title></rect>"#,
            LABEL_W + s.start as f64 * scale,
            s.len() as f64 * scale,
            PALETTE[s.class % PALETTE.len()],
            s.class,
            s.start,
            s.end
        )
        .unwrap();
    }
}

/// Ground truth above prediction, one block per sequence, plus a legend.
pub fn timeline_svg(rows: &[(usize, &[usize], &[usize])], class_names: &[String]) -> String {
    let legend_h = 20.0;
    let height = rows.len() as f64 * BLOCK_H + legend_h + 10.0;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    for (k, (idx, gt, pred)) in rows.iter().enumerate() {
        let y0 = 5.0 + k as f64 * BLOCK_H;
        writeln!(svg, r#"<text x="2" y="{:.2}">seq {idx}</text>"#, y0 + 10.0).unwrap();
        writeln!(svg, r#"<text x="40" y="{:.2}">gt</text>"#, y0 + 11.0).unwrap();
        segment_row(&mut svg, gt, y0);
        writeln!(svg, r#"<text x="40" y="{:.2}">pred</text>"#, y0 + ROW_H + GAP + 11.0).unwrap();
        segment_row(&mut svg, pred, y0 + ROW_H + GAP);
    }
    let ly = height - legend_h;
    for (c, name) in class_names.iter().enumerate() {
        let x = LABEL_W + c as f64 * 110.0;
        writeln!(
            svg,
            r#"<rect x="{x:.2}" y="{ly:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            PALETTE[c % PALETTE.len()],
            x + 14.0,
            ly + 9.0,
            escape(name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timeline_has_one_rect_per_segment() {
        let gt = [0, 0, 1, 1, 1];
        let pred = [0, 1, 1, 1, 2];
        let svg = timeline_svg(&[(0, &gt, &pred)], &["a".into(), "b<".into(), "c".into()]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        // 2 gt + 3 pred segments + 3 legend swatches
        assert_eq!(svg.matches("<rect").count(), 8);
        assert!(svg.contains("b&lt;"));
    }

    #[test]
    fn predictions_csv_rows() {
        let csv = predictions_csv(&[(3, &[1, 2], &[1, 0])]);
        assert_eq!(csv, "sequence,frame,gt,pred\n3,0,1,1\n3,1,2,0\n");
    }
}
