//! Result tables as aligned text and CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::pipeline::write_text;
use crate::metrics::MetricsReport;

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub label: String,
    /// Yes/no columns such as which teachers took part.
    pub flags: Vec<(String, bool)>,
    pub report: MetricsReport,
}

impl TableRow {
    pub fn new(label: impl Into<String>, report: MetricsReport) -> Self {
        Self { label: label.into(), flags: Vec::new(), report }
    }

    pub fn flag(mut self, name: &str, on: bool) -> Self {
        self.flags.push((name.into(), on));
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedTable {
    pub text: String,
    pub csv: String,
    /// Row index with the highest weighted F1, when there is more than one row.
    pub best: Option<usize>,
}

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Scores are percentages. Flag columns and per-class F1 columns are the
/// union over rows in first-seen order; a row lacking one leaves it blank.
pub fn render_table(rows: &[TableRow]) -> Result<RenderedTable> {
    if rows.is_empty() {
        return Err(Error::Config("no reports to tabulate".into()));
    }
    let mut flag_cols: Vec<String> = Vec::new();
    let mut class_cols: Vec<String> = Vec::new();
    for r in rows {
        for (f, _) in &r.flags {
            if !flag_cols.contains(f) {
                flag_cols.push(f.clone());
            }
        }
        for c in &r.report.classes {
            if !class_cols.contains(c) {
                class_cols.push(c.clone());
            }
        }
    }
    let best = (rows.len() > 1).then(|| {
        let mut b = 0;
        for (i, r) in rows.iter().enumerate() {
            if r.report.weighted_f1 > rows[b].report.weighted_f1 {
                b = i;
            }
        }
        b
    });

    let mut header = vec!["config".to_string()];
    header.extend(flag_cols.iter().cloned());
    header.extend(["Acc", "F1m", "F1w"].map(String::from));
    header.extend(class_cols.iter().map(|c| format!("F1[{c}]")));
    header.push("best".into());

    let mut body: Vec<Vec<String>> = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let mut cells = vec![r.label.clone()];
        for f in &flag_cols {
            cells.push(match r.flags.iter().find(|(n, _)| n == f) {
                Some((_, true)) => "yes".into(),
                Some((_, false)) => "no".into(),
                None => String::new(),
            });
        }
        cells.push(pct(r.report.accuracy));
        cells.push(pct(r.report.macro_f1));
        cells.push(pct(r.report.weighted_f1));
        for c in &class_cols {
            cells.push(r.report.per_class_f1.get(c).map(|&f| pct(f)).unwrap_or_default());
        }
        cells.push(if best == Some(i) { "*".into() } else { String::new() });
        body.push(cells);
    }

    let widths: Vec<usize> =
        (0..header.len()).map(|j| body.iter().map(|r| r[j].len()).chain([header[j].len()]).max().unwrap_or(0)).collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            if j == 0 {
                let _ = write!(s, "{c:<w$}", w = widths[j]);
            } else {
                let _ = write!(s, "  {c:>w$}", w = widths[j]);
            }
        }
        s.trim_end().to_string() + "\n"
    };
    let mut text = line(&header);
    text.push_str(&"-".repeat(text.trim_end().len()));
    text.push('\n');
    for r in &body {
        text.push_str(&line(r));
    }

    let esc = |c: &str| if c.contains([',', '"', '\n']) { format!("\"{}\"", c.replace('"', "\"\"")) } else { c.to_string() };
    let mut csv = String::new();
    for r in std::iter::once(&header).chain(&body) {
        csv.push_str(&r.iter().map(|c| esc(c)).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    Ok(RenderedTable { text, csv, best })
}

/// Renders and writes `<stem>.txt` and `<stem>.csv` in `dir`.
pub fn emit_tables(rows: &[TableRow], dir: &Path, stem: &str) -> Result<RenderedTable> {
    let t = render_table(rows)?;
    write_text(&dir.join(format!("{stem}.txt")), &t.text)?;
    write_text(&dir.join(format!("{stem}.csv")), &t.csv)?;
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::confusion_metrics;

    fn rep(classes: &[&str], t: &[usize], p: &[usize]) -> MetricsReport {
        confusion_metrics(t, p, &classes.iter().map(|c| c.to_string()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn single_row_has_no_best() {
        let t = render_table(&[TableRow::new("only", rep(&["a", "b"], &[0, 1], &[0, 1]))]).unwrap();
        assert_eq!(t.best, None);
        assert_eq!(t.csv.lines().count(), 2);
        assert!(t.csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn best_marker_and_flags() {
        let rows = vec![
            TableRow::new("text", rep(&["a", "b"], &[0, 1, 1], &[0, 0, 1])).flag("Text", true).flag("Emo", false),
            TableRow::new("text+emo", rep(&["a", "b"], &[0, 1, 1], &[0, 1, 1])).flag("Text", true).flag("Emo", true),
        ];
        let t = render_table(&rows).unwrap();
        assert_eq!(t.best, Some(1));
        let last = t.csv.lines().last().unwrap();
        assert!(last.starts_with("text+emo,yes,yes,100.00"));
        assert!(last.ends_with(",*"));
    }

    #[test]
    fn class_union_leaves_blanks() {
        let rows = vec![
            TableRow::new("x", rep(&["a", "b"], &[0, 1], &[0, 1])),
            TableRow::new("y", rep(&["a", "c"], &[0, 1], &[0, 0])),
        ];
        let t = render_table(&rows).unwrap();
        let header = t.csv.lines().next().unwrap();
        assert_eq!(header, "config,Acc,F1m,F1w,F1[a],F1[b],F1[c],best");
        let y = t.csv.lines().nth(2).unwrap();
        let cells: Vec<&str> = y.split(',').collect();
        assert_eq!(cells[5], "");
        assert!(render_table(&[]).is_err());
    }
}
