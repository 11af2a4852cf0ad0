use std::fmt::Write as _;

use super::ConfusionMatrix;
use crate::error::{Error, Result};

/// One line of the CSV report; scores in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    /// `tile:<id>` or `aggregate`.
    pub scope: String,
    /// A class name, or `mean_f1` for the averaged row.
    pub class: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: f64,
    pub oa: f64,
    pub guarded: bool,
}

/// Per-tile and aggregate scores.
#[derive(Clone, Debug)]
pub struct Report {
    pub class_names: Vec<String>,
    pub f1_classes: Vec<usize>,
    pub tiles: Vec<(String, ConfusionMatrix)>,
}

fn pct(v: f64) -> String {
    format!("{:.2}", 100.0 * v)
}

impl Report {
    pub fn new(class_names: Vec<String>, f1_classes: Vec<usize>, tiles: Vec<(String, ConfusionMatrix)>) -> Result<Self> {
        if tiles.is_empty() {
            return Err(Error::DegenerateInput("report over zero tiles".into()));
        }
        if let Some((id, _)) = tiles.iter().find(|(_, cm)| cm.num_classes() != class_names.len()) {
            return Err(Error::Contract(format!("tile {id} has a different class count")));
        }
        Ok(Self {
            class_names,
            f1_classes,
            tiles,
        })
    }

    pub fn aggregate(&self) -> ConfusionMatrix {
        let mut acc = ConfusionMatrix::new(self.class_names.len());
        for (_, cm) in &self.tiles {
            acc.merge(cm).expect("class counts checked");
        }
        acc
    }

    fn scope_rows(&self, scope: &str, cm: &ConfusionMatrix) -> Result<Vec<ReportRow>> {
        let oa = cm.overall_accuracy()?;
        let mut rows: Vec<ReportRow> = self
            .class_names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let p = cm.class_prf(c);
                ReportRow {
                    scope: scope.to_owned(),
                    class: name.clone(),
                    precision: Some(p.precision),
                    recall: Some(p.recall),
                    f1: p.f1,
                    oa,
                    guarded: p.guarded,
                }
            })
            .collect();
        let guarded = self.f1_classes.iter().any(|&c| rows[c].guarded);
        rows.push(ReportRow {
            scope: scope.to_owned(),
            class: "mean_f1".into(),
            precision: None,
            recall: None,
            f1: cm.mean_f1(&self.f1_classes)?,
            oa,
            guarded,
        });
        Ok(rows)
    }

    /// Rows for every tile, then the aggregate; values are fractions.
    pub fn rows(&self) -> Result<Vec<ReportRow>> {
        let mut out = Vec::new();
        for (id, cm) in &self.tiles {
            out.extend(self.scope_rows(&format!("tile:{id}"), cm)?);
        }
        out.extend(self.scope_rows("aggregate", &self.aggregate())?);
        Ok(out)
    }

    /// `scope,class,precision,recall,f1,oa` in percent with two decimals.
    pub fn to_csv(&self) -> Result<String> {
        let mut s = String::from("scope,class,precision,recall,f1,oa\n");
        for r in self.rows()? {
            let opt = |v: Option<f64>| v.map(pct).unwrap_or_default();
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.scope,
                r.class,
                opt(r.precision),
                opt(r.recall),
                pct(r.f1),
                pct(r.oa)
            )
            .expect("string write");
        }
        Ok(s)
    }

    /// Aligned table: one block per scope with OA, per-class F1 and mean F1.
    /// Scores computed from an empty denominator print as 0.00 followed by `*`.
    pub fn to_text(&self) -> Result<String> {
        let rows = self.rows()?;
        let width = self.class_names.iter().map(String::len).max().unwrap_or(0).max(7);
        let mut s = String::new();
        let mut any_guard = false;
        for block in rows.chunks(self.class_names.len() + 1) {
            writeln!(s, "{}  OA {}", block[0].scope, pct(block[0].oa)).expect("string write");
            writeln!(s, "  {:<width$} {:>9} {:>9} {:>9}", "class", "precision", "recall", "f1").expect("string write");
            for r in block {
                let mark = if r.guarded { "*" } else { "" };
                any_guard |= r.guarded;
                let opt = |v: Option<f64>| v.map(pct).unwrap_or_else(|| "-".into());
                writeln!(
                    s,
                    "  {:<width$} {:>9} {:>9} {:>9}{mark}",
                    r.class,
                    opt(r.precision),
                    opt(r.recall),
                    pct(r.f1)
                )
                .expect("string write");
            }
        }
        if any_guard {
            s.push_str("* a ratio had a zero denominator and is reported as 0\n");
        }
        Ok(s)
    }
}

/// Parse the CSV produced by [`Report::to_csv`]; values stay in percent.
pub fn parse_report_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut out = Vec::new();
    let mut offset = 0;
    for (n, line) in text.split_inclusive('\n').enumerate() {
        let here = offset;
        offset += line.len();
        let line = line.trim_end();
        if n == 0 || line.is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse { offset: here, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(format!("expected 6 fields in {line:?}")));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("{s:?} is not a number")));
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        out.push(ReportRow {
            scope: f[0].into(),
            class: f[1].into(),
            precision: opt(f[2])?,
            recall: opt(f[3])?,
            f1: num(f[4])?,
            oa: num(f[5])?,
            guarded: false,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn perfect_tile_reads_one_hundred() {
        let cm = ConfusionMatrix::from_counts(2, vec![4, 0, 0, 6]).unwrap();
        let r = Report::new(names(), vec![0, 1], vec![("t1".into(), cm)]).unwrap();
        for row in parse_report_csv(&r.to_csv().unwrap()).unwrap() {
            assert_eq!(row.f1, 100.0);
            assert_eq!(row.oa, 100.0);
        }
    }

    #[test]
    fn aggregate_is_sum_and_guard_is_marked() {
        let a = ConfusionMatrix::from_counts(2, vec![4, 0, 0, 0]).unwrap();
        let b = ConfusionMatrix::from_counts(2, vec![1, 2, 3, 4]).unwrap();
        let r = Report::new(names(), vec![0, 1], vec![("a".into(), a), ("b".into(), b)]).unwrap();
        assert_eq!(r.aggregate().counts(), &[5, 2, 3, 4]);
        let text = r.to_text().unwrap();
        assert!(text.contains("0.00*"), "{text}");
        assert!(text.contains("zero denominator"));
    }
}
