//! Plain-text and CSV renderings of evaluation results.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::{ConfusionMatrix, GenusDetectionRow};

/// Aligned table with a header row; columns are padded to the widest cell.
pub fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &mut dyn Iterator<Item = &str>| {
        let parts: Vec<String> = cells
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        out.push_str(parts.join("  ").trim_end());
        out.push('\n');
    };
    line(&mut out, &mut header.iter().copied());
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&rule.join("  "));
    out.push('\n');
    for row in rows {
        line(&mut out, &mut row.iter().map(String::as_str));
    }
    out
}

pub fn genus_table_text<S: Scalar>(rows: &[GenusDetectionRow<S>]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.genus.clone(),
                format!("{:.4}", r.precision.as_f64()),
                format!("{:.4}", r.recall.as_f64()),
                format!("{:.4}", r.f2.as_f64()),
            ]
        })
        .collect();
    text_table(&["Genus", "Precision", "Recall", "F2"], &cells)
}

/// `genus,precision,recall,f2` with one row per genus.
pub fn genus_table_csv<S: Scalar>(rows: &[GenusDetectionRow<S>]) -> String {
    let mut out = String::from("genus,precision,recall,f2\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.4},{:.4},{:.4}",
            r.genus,
            r.precision.as_f64(),
            r.recall.as_f64(),
            r.f2.as_f64()
        );
    }
    out
}

/// Header `genus,<label>...` then one row per true class.
pub fn confusion_csv(cm: &ConfusionMatrix) -> String {
    let mut out = String::from("genus");
    for l in cm.labels() {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (label, row) in cm.labels().iter().zip(cm.rows()) {
        out.push_str(label);
        for c in row {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::parse("confusion", 1, "empty file"))?;
    let labels: Vec<String> = header.split(',').skip(1).map(|s| s.trim().to_string()).collect();
    let mut counts = Vec::new();
    for (i, line) in lines.enumerate() {
        for cell in line.split(',').skip(1) {
            counts.push(
                cell.trim()
                    .parse::<u64>()
                    .map_err(|e| Error::parse("confusion", i + 2, e.to_string()))?,
            );
        }
    }
    ConfusionMatrix::from_counts(labels, counts)
}

pub fn confusion_text(cm: &ConfusionMatrix) -> String {
    let mut header: Vec<&str> = vec!["true \\ pred"];
    header.extend(cm.labels().iter().map(String::as_str));
    let rows: Vec<Vec<String>> = cm
        .labels()
        .iter()
        .zip(cm.rows())
        .map(|(l, r)| {
            let mut v = vec![l.clone()];
            v.extend(r.iter().map(u64::to_string));
            v
        })
        .collect();
    text_table(&header, &rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_csv_round_trip() {
        let cm = ConfusionMatrix::from_rows(
            vec!["Fagus".into(), "Hevea".into()],
            &[vec![3, 1], vec![0, 7]],
        )
        .unwrap();
        let csv = confusion_csv(&cm);
        assert_eq!(csv, "genus,Fagus,Hevea\nFagus,3,1\nHevea,0,7\n");
        assert_eq!(parse_confusion_csv(&csv).unwrap(), cm);
    }

    #[test]
    fn table_is_aligned() {
        let t = text_table(&["Genus", "F2"], &[vec!["Liquidambar".into(), "0.6549".into()]]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "Genus            F2");
        assert_eq!(lines[2], "Liquidambar  0.6549");
    }
}
