//! Small string tables rendered as aligned text or CSV.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(headers: Vec<String>) -> Self {
        Table {
            headers,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    /// Columns padded to their widest cell, separated by two spaces.
    pub fn to_text(&self) -> String {
        let ncol = self
            .headers
            .len()
            .max(self.rows.iter().map(Vec::len).max().unwrap_or(0));
        let mut widths = vec![0; ncol];
        for row in std::iter::once(&self.headers).chain(&self.rows) {
            for (i, cell) in row.iter().enumerate() {
                widths[i] = widths[i].max(cell.chars().count());
            }
        }
        let line = |row: &[String]| {
            let cells: Vec<String> = (0..ncol)
                .map(|i| {
                    let cell = row.get(i).map_or("", String::as_str);
                    format!("{cell:<w$}", w = widths[i])
                })
                .collect();
            cells.join("  ").trim_end().to_string()
        };
        let mut out = line(&self.headers);
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * ncol.saturating_sub(1)));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&line(row));
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new()
            .flexible(true)
            .from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush to Vec")).expect("utf-8 cells")
    }

    pub fn from_csv(text: &str) -> std::result::Result<Table, csv::Error> {
        let mut r = csv::ReaderBuilder::new()
            .flexible(true)
            .from_reader(text.as_bytes());
        let headers = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { headers, rows })
    }

    pub fn read_csv(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Table::from_csv(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            offset: e.position().map_or(0, |p| p.byte()),
            msg: e.to_string(),
        })
    }

    /// Writes `<stem>.txt` and `<stem>.csv`.
    pub fn write_both(&self, stem: &Path) -> Result<()> {
        for (ext, body) in [("txt", self.to_text()), ("csv", self.to_csv())] {
            let path = stem.with_extension(ext);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Stacks tables under a leading `source` column; header sets may differ,
/// in which case columns are unioned in first-seen order.
pub fn merge(tables: &[(String, Table)]) -> Table {
    let mut headers: Vec<String> = vec!["source".into()];
    for (_, t) in tables {
        for h in &t.headers {
            if !headers.contains(h) {
                headers.push(h.clone());
            }
        }
    }
    let mut out = Table::new(headers.clone());
    for (source, t) in tables {
        for row in &t.rows {
            let mut cells = vec![String::new(); headers.len()];
            cells[0] = source.clone();
            for (h, cell) in t.headers.iter().zip(row) {
                let i = headers
                    .iter()
                    .position(|x| x == h)
                    .expect("header collected");
                cells[i] = cell.clone();
            }
            out.push(cells);
        }
    }
    out
}
