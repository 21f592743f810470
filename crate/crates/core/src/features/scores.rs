use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

/// Named per-example scalar scores aligned with the rows of a feature matrix.
///
/// Column order is preserved as loaded; names are unique.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    n_rows: usize,
    columns: Vec<(String, Vec<f64>)>,
}

impl ScoreTable {
    pub fn new(n_rows: usize) -> Self {
        ScoreTable {
            n_rows,
            columns: Vec::new(),
        }
    }

    pub fn with_column(mut self, name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        self.push_column(name, values)?;
        Ok(self)
    }

    pub fn push_column(&mut self, name: impl Into<String>, values: Vec<f64>) -> Result<()> {
        let name = name.into();
        if name == "index" {
            return Err(Error::Format("`index` is reserved for the row index".into()));
        }
        if self.column(&name).is_some() {
            return Err(Error::Format(format!("duplicate column name `{name}`")));
        }
        if values.len() != self.n_rows {
            return Err(Error::LengthMismatch {
                expected: self.n_rows,
                found: values.len(),
                context: format!("score column `{name}`"),
            });
        }
        if let Some(row) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format(format!(
                "score column `{name}` has a non-finite value at row {row}"
            )));
        }
        self.columns.push((name, values));
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
    }

    pub fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.columns.iter().map(|(n, _)| n.as_str())
    }

    /// CSV with an `index` column followed by every score column.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("index");
        for name in self.names() {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for i in 0..self.n_rows {
            out.push_str(&i.to_string());
            for (_, col) in &self.columns {
                out.push(',');
                out.push_str(&col[i].to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

/// Load a score table from CSV (`index,<name>,...` header) or JSONL (one
/// object per example, selected by a `.jsonl` / `.json` extension).
pub fn load_scores(path: impl AsRef<Path>, n_rows: usize) -> Result<ScoreTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("json") {
        parse_jsonl(&text, n_rows)
    } else {
        parse_csv(&text, n_rows)
    }
}

pub(crate) fn parse_csv(text: &str, n_rows: usize) -> Result<ScoreTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers()?.clone();
    if header.get(0) != Some("index") {
        return Err(Error::Format("score CSV must start with an `index` column".into()));
    }
    let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    for (i, a) in names.iter().enumerate() {
        if names[..i].contains(a) || a == "index" {
            return Err(Error::Format(format!("duplicate column name `{a}`")));
        }
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    let mut count = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let idx: usize = rec[0]
            .parse()
            .map_err(|_| Error::Format(format!("row {row}: bad index `{}`", &rec[0])))?;
        if idx != row {
            return Err(Error::Format(format!(
                "index column must be 0-based and consecutive; row {row} has index {idx}"
            )));
        }
        for (c, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Format(format!("row {row}, column `{}`: `{field}` is not numeric", names[c]))
            })?;
            cols[c].push(v);
        }
        count += 1;
    }
    if count != n_rows {
        return Err(Error::LengthMismatch {
            expected: n_rows,
            found: count,
            context: "score table rows".into(),
        });
    }
    let mut table = ScoreTable::new(n_rows);
    for (name, col) in names.into_iter().zip(cols) {
        table.push_column(name, col)?;
    }
    Ok(table)
}

pub(crate) fn parse_jsonl(text: &str, n_rows: usize) -> Result<ScoreTable> {
    let mut cols: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut count = 0;
    for (row, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
        let obj: serde_json::Map<String, serde_json::Value> = serde_json::from_str(line)?;
        if let Some(idx) = obj.get("index") {
            if idx.as_u64() != Some(row as u64) {
                return Err(Error::Format(format!("line {row}: index {idx} out of sequence")));
            }
        }
        let mut seen = 0;
        for (k, v) in obj.iter().filter(|(k, _)| k.as_str() != "index") {
            let x = v.as_f64().ok_or_else(|| {
                Error::Format(format!("line {row}, field `{k}`: `{v}` is not numeric"))
            })?;
            if row == 0 {
                order.push(k.clone());
            } else if !cols.contains_key(k) {
                return Err(Error::Format(format!("line {row}: unexpected field `{k}`")));
            }
            cols.entry(k.clone()).or_default().push(x);
            seen += 1;
        }
        if seen != order.len() {
            return Err(Error::Format(format!("line {row}: expected {} fields", order.len())));
        }
        count += 1;
    }
    if count != n_rows {
        return Err(Error::LengthMismatch {
            expected: n_rows,
            found: count,
            context: "score table rows".into(),
        });
    }
    let mut table = ScoreTable::new(n_rows);
    for name in order {
        let col = cols.remove(&name).unwrap_or_default();
        table.push_column(name, col)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_single_column() {
        let t = parse_csv("index,perplexity\n0,1.5\n1,2.5\n2,3\n", 3).unwrap();
        assert_eq!(t.names().collect::<Vec<_>>(), ["perplexity"]);
        assert_eq!(t.column("perplexity").unwrap(), &[1.5, 2.5, 3.0]);
    }

    #[test]
    fn csv_row_count_mismatch() {
        let err = parse_csv("index,perplexity\n0,1.5\n1,2.5\n", 3).unwrap_err();
        assert!(matches!(err, Error::LengthMismatch { expected: 3, found: 2, .. }));
    }

    #[test]
    fn csv_rejects_bad_cells_and_duplicates() {
        assert!(parse_csv("index,a\n0,abc\n", 1).is_err());
        assert!(parse_csv("index,a,a\n0,1,2\n", 1).is_err());
        assert!(parse_csv("index,a\n1,1\n", 1).is_err());
        assert!(parse_csv("idx,a\n0,1\n", 1).is_err());
    }

    #[test]
    fn jsonl_matches_csv() {
        let csv = parse_csv("index,grad_norm\n0,0.5\n1,0.25\n", 2).unwrap();
        let jsonl = parse_jsonl("{\"grad_norm\": 0.5}\n{\"grad_norm\": 0.25}\n", 2).unwrap();
        assert_eq!(csv, jsonl);
        let with_index =
            parse_jsonl("{\"index\":0,\"grad_norm\":0.5}\n{\"index\":1,\"grad_norm\":0.25}\n", 2)
                .unwrap();
        assert_eq!(csv, with_index);
    }

    #[test]
    fn jsonl_rejects_ragged_and_text() {
        assert!(parse_jsonl("{\"a\":1}\n{\"b\":1}\n", 2).is_err());
        assert!(parse_jsonl("{\"a\":\"x\"}\n", 1).is_err());
        assert!(parse_jsonl("{\"a\":1,\"b\":2}\n{\"a\":1}\n", 2).is_err());
    }

    #[test]
    fn csv_string_round_trips() {
        let t = ScoreTable::new(2)
            .with_column("a", vec![1.0, 0.125])
            .unwrap()
            .with_column("b", vec![-3.0, 1e-9])
            .unwrap();
        assert_eq!(parse_csv(&t.to_csv_string(), 2).unwrap(), t);
    }
}
