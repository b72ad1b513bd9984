//! Result tables and distribution series.
//!
//! Rendering is a pure function of its inputs; the CSV and markdown outputs
//! are byte-stable.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::bank::{QuestionBank, Slot};
use crate::metrics::{DistributionSummary, Histogram, SplitPattern, SplitSummary};
use crate::MergedResult;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ReportError {
    #[error("no result columns to render")]
    NoColumns,
    #[error("column {column:?} has no result for slot {slot}")]
    MissingSlot { column: String, slot: u32 },
    #[error("column {0:?} appears twice")]
    DuplicateColumn(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Markdown,
    Html,
    Csv,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiasCell {
    pub value: f64,
    pub strong_neutral: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub slot_id: u32,
    pub genre: String,
    pub text: String,
    pub bias: Vec<BiasCell>,
    /// Parallel to [`ResultTable::shift_columns`].
    pub shift: Vec<Option<f64>>,
    pub pattern: Option<Vec<SplitPattern>>,
}

/// One row per merged slot; bias columns for every condition, then shift
/// columns for the conditions that have an opposing run.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub bias_columns: Vec<String>,
    pub shift_columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl ResultTable {
    /// `columns` pairs a label (e.g. `model/language`) with that condition's
    /// merged results. Question text is taken from `text_language`, falling
    /// back to the bank's first language.
    pub fn build(
        bank: &QuestionBank,
        text_language: &str,
        columns: &[(String, Vec<MergedResult>)],
    ) -> Result<Self, ReportError> {
        if columns.is_empty() {
            return Err(ReportError::NoColumns);
        }
        let mut by_col: Vec<BTreeMap<u32, &MergedResult>> = Vec::new();
        for (i, (label, merged)) in columns.iter().enumerate() {
            if columns[..i].iter().any(|(l, _)| l == label) {
                return Err(ReportError::DuplicateColumn(label.clone()));
            }
            by_col.push(merged.iter().map(|m| (m.slot_id, m)).collect());
        }
        let with_shift: Vec<usize> = (0..columns.len())
            .filter(|&i| columns[i].1.iter().any(|m| m.shift.is_some()))
            .collect();
        let fallback = bank.languages().first().map(String::as_str).unwrap_or("");
        let mut rows = Vec::new();
        for slot in bank.merged_numbering() {
            let id = slot.id();
            let q = bank.get(id).expect("slot ids come from the bank");
            let text = q.text_for(text_language).or_else(|| q.text_for(fallback)).unwrap_or("");
            let mut cells = Vec::with_capacity(columns.len());
            let mut patterns = Vec::new();
            for (i, col) in by_col.iter().enumerate() {
                let m = col.get(&id).ok_or_else(|| ReportError::MissingSlot {
                    column: columns[i].0.clone(),
                    slot: id,
                })?;
                cells.push(BiasCell {
                    value: m.bias,
                    strong_neutral: m.strong_neutral,
                });
                if let Some(d) = &m.split {
                    patterns.push(d.pattern);
                }
            }
            let shift = with_shift.iter().map(|&i| by_col[i][&id].shift).collect();
            rows.push(Row {
                slot_id: id,
                genre: q.genre.clone(),
                text: text.to_string(),
                bias: cells,
                shift,
                pattern: matches!(slot, Slot::Pair { .. }).then_some(patterns),
            });
        }
        Ok(Self {
            bias_columns: columns.iter().map(|(l, _)| l.clone()).collect(),
            shift_columns: with_shift.iter().map(|&i| columns[i].0.clone()).collect(),
            rows,
        })
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Markdown => self.markdown(),
            Format::Html => self.html(),
            Format::Csv => self.csv(),
        }
    }

    fn markdown(&self) -> String {
        let mut out = String::from("| Genre | ID | Question |");
        for c in &self.bias_columns {
            let _ = write!(out, " Bias {} |", md_escape(c));
        }
        for c in &self.shift_columns {
            let _ = write!(out, " Shift {} |", md_escape(c));
        }
        out.push_str("\n|---|---:|---|");
        for _ in 0..self.bias_columns.len() + self.shift_columns.len() {
            out.push_str("---:|");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| {} | {} | {} |", md_escape(&r.genre), r.slot_id, md_escape(&r.text));
            for c in &r.bias {
                if c.strong_neutral {
                    let _ = write!(out, " **{}** |", fixed(c.value));
                } else {
                    let _ = write!(out, " {} |", fixed(c.value));
                }
            }
            for s in &r.shift {
                let _ = write!(out, " {} |", s.map(fixed).unwrap_or_else(|| "NA".into()));
            }
            out.push('\n');
        }
        out.push_str("\nBold bias cells are strong neutral (|b| <= 0.2 and w >= 0.8).\n");
        out
    }

    fn html(&self) -> String {
        let mut out = String::from(
            "<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n<title>Results</title>\n<style>\n",
        );
        out.push_str(CSS);
        out.push_str("</style>\n</head>\n<body>\n<table class=\"results\">\n<thead>\n<tr><th rowspan=\"2\">Genre</th><th rowspan=\"2\">ID</th><th rowspan=\"2\">Question</th>");
        let _ = write!(out, "<th colspan=\"{}\">Bias</th>", self.bias_columns.len());
        if !self.shift_columns.is_empty() {
            let _ = write!(out, "<th colspan=\"{}\">Bias Shift</th>", self.shift_columns.len());
        }
        out.push_str("</tr>\n<tr>");
        for c in self.bias_columns.iter().chain(&self.shift_columns) {
            let _ = write!(out, "<th>{}</th>", html_escape(c));
        }
        out.push_str("</tr>\n</thead>\n<tbody>\n");
        for r in &self.rows {
            let _ = write!(
                out,
                "<tr><td>{}</td><td>{}</td><td>{}</td>",
                html_escape(&r.genre),
                r.slot_id,
                html_escape(&r.text)
            );
            for c in &r.bias {
                let _ = write!(
                    out,
                    "<td class=\"{}\">{}</td>",
                    bias_class(c.value, c.strong_neutral),
                    fixed(c.value)
                );
            }
            for s in &r.shift {
                match s {
                    Some(v) => {
                        let _ = write!(out, "<td class=\"{}\">{}</td>", shift_class(*v), fixed(*v));
                    }
                    None => out.push_str("<td class=\"shift na\">NA</td>"),
                }
            }
            out.push_str("</tr>\n");
        }
        out.push_str("</tbody>\n</table>\n</body>\n</html>\n");
        out
    }

    fn csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["slot_id".to_string(), "genre".into(), "question".into()];
        header.extend(self.bias_columns.iter().map(|c| format!("bias:{c}")));
        header.extend(self.bias_columns.iter().map(|c| format!("strong_neutral:{c}")));
        header.extend(self.shift_columns.iter().map(|c| format!("shift:{c}")));
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.slot_id.to_string(), r.genre.clone(), r.text.clone()];
            rec.extend(r.bias.iter().map(|c| c.value.to_string()));
            rec.extend(r.bias.iter().map(|c| c.strong_neutral.to_string()));
            rec.extend(r.shift.iter().map(|s| s.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }
}

const CSS: &str = "\
table.results { border-collapse: collapse; font-family: sans-serif; font-size: 0.85em; }
table.results th, table.results td { border: 1px solid #ccc; padding: 2px 6px; }
td.bias, td.shift { text-align: right; font-variant-numeric: tabular-nums; }
td.bias.pos-1 { background: #e8f5e9; } td.bias.pos-2 { background: #c8e6c9; }
td.bias.pos-3 { background: #81c784; } td.bias.pos-4 { background: #43a047; color: #fff; }
td.bias.neg-1 { background: #ffebee; } td.bias.neg-2 { background: #ffcdd2; }
td.bias.neg-3 { background: #e57373; } td.bias.neg-4 { background: #e53935; color: #fff; }
td.bias.strong-neutral { background: #fff176; font-weight: bold; }
td.shift.up-1 { background: #f3e5f5; } td.shift.up-2 { background: #e1bee7; }
td.shift.up-3 { background: #ba68c8; } td.shift.up-4 { background: #8e24aa; color: #fff; }
td.shift.down-1 { background: #e8f5e9; } td.shift.down-2 { background: #c8e6c9; }
td.shift.down-3 { background: #81c784; } td.shift.down-4 { background: #43a047; color: #fff; }
";

fn level(magnitude: f64, full: f64) -> u8 {
    ((magnitude / full * 4.0).ceil() as u8).clamp(1, 4)
}

/// CSS classes for a bias cell: green toward 1, red toward -1, strong neutral highlighted.
pub fn bias_class(b: f64, strong_neutral: bool) -> String {
    if strong_neutral {
        "bias strong-neutral".into()
    } else if b > 0.0 {
        format!("bias pos-{}", level(b, 1.0))
    } else if b < 0.0 {
        format!("bias neg-{}", level(-b, 1.0))
    } else {
        "bias zero".into()
    }
}

/// CSS classes for a shift cell: purple toward 2, green toward -2.
pub fn shift_class(s: f64) -> String {
    if s > 0.0 {
        format!("shift up-{}", level(s, 2.0))
    } else if s < 0.0 {
        format!("shift down-{}", level(-s, 2.0))
    } else {
        "shift zero".into()
    }
}

fn fixed(v: f64) -> String {
    let s = format!("{v:.2}");
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|").replace('\n', " ")
}

fn html_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            _ => out.push(c),
        }
    }
    out
}

/// File-name-safe form of a column label.
pub fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '_' { c } else { '-' })
        .collect()
}

/// `bucket,lower,upper,count`; an `outside` row follows when any value fell outside the edges.
pub fn histogram_csv(h: &Histogram<f64>, undefined: Option<usize>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["bucket", "lower", "upper", "count"]).expect("in-memory write");
    let last = h.counts.len() - 1;
    for (i, c) in h.counts.iter().enumerate() {
        let (lo, hi) = (h.edges[i], h.edges[i + 1]);
        let close = if i == last { ']' } else { ')' };
        w.write_record([
            format!("[{lo},{hi}{close}"),
            lo.to_string(),
            hi.to_string(),
            c.to_string(),
        ])
        .expect("in-memory write");
    }
    if h.outside > 0 {
        w.write_record(["outside", "", "", &h.outside.to_string()]).expect("in-memory write");
    }
    if let Some(n) = undefined.filter(|n| *n > 0) {
        w.write_record(["undefined", "", "", &n.to_string()]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}

/// Bar chart of one histogram.
pub fn histogram_svg(title: &str, h: &Histogram<f64>) -> String {
    let (width, height, pad) = (480.0, 240.0, 30.0);
    let n = h.counts.len() as f64;
    let max = h.counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bar = (width - 2.0 * pad) / n;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n<text x=\"{pad}\" y=\"18\" font-family=\"sans-serif\" font-size=\"13\">{}</text>\n",
        html_escape(title)
    );
    for (i, c) in h.counts.iter().enumerate() {
        let bh = (height - 2.0 * pad) * (*c as f64) / max;
        let x = pad + bar * i as f64;
        let y = height - pad - bh;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" fill=\"#5c6bc0\"><title>[{}, {}]: {c}</title></rect>",
            bar * 0.9,
            h.edges[i],
            h.edges[i + 1]
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{pad}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
        height - 10.0,
        h.edges[0],
        width - pad,
        height - 10.0,
        h.edges[h.edges.len() - 1]
    );
    out.push_str("</svg>\n");
    out
}

/// Distribution series for one condition as `(file name, contents)` pairs.
/// SVG charts are included only when `svg` is set.
pub fn render_distributions(
    label: &str,
    summary: &DistributionSummary<f64>,
    split: &SplitSummary<f64>,
    svg: bool,
) -> Vec<(String, String)> {
    let s = slug(label);
    let mut out = vec![
        (format!("{s}_bias.csv"), histogram_csv(&summary.bias, None)),
        (
            format!("{s}_willingness.csv"),
            histogram_csv(&summary.willingness, Some(summary.willingness_undefined)),
        ),
    ];
    if let Some(h) = &summary.shift {
        out.push((format!("{s}_shift.csv"), histogram_csv(h, None)));
    }
    out.push((format!("{s}_split_bias.csv"), histogram_csv(&split.merged_bias, None)));
    if svg {
        out.push((format!("{s}_bias.svg"), histogram_svg(&format!("{label} bias"), &summary.bias)));
        out.push((
            format!("{s}_willingness.svg"),
            histogram_svg(&format!("{label} willingness"), &summary.willingness),
        ));
        if let Some(h) = &summary.shift {
            out.push((format!("{s}_shift.svg"), histogram_svg(&format!("{label} bias shift"), h)));
        }
    }
    out
}

/// `label,prefer-a,prefer-b,both-affirm,both-negate,undecided`, one row per condition.
pub fn split_patterns_csv(rows: &[(String, SplitSummary<f64>)]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["label"];
    header.extend(SplitPattern::ALL.iter().map(|p| p.label()));
    w.write_record(&header).expect("in-memory write");
    for (label, s) in rows {
        let mut rec = vec![label.clone()];
        rec.extend(
            SplitPattern::ALL
                .iter()
                .map(|p| s.patterns.get(p).copied().unwrap_or(0).to_string()),
        );
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv is utf-8")
}
