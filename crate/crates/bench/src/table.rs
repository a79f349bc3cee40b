//! Minimal CSV table. Fields never contain commas or quotes, so no quoting
//! is needed; floats use the shortest representation that round-trips.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Context, Result};

#[derive(Debug, Clone)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

pub trait Field {
    fn field(&self) -> String;
}

impl Field for f64 {
    fn field(&self) -> String {
        self.to_string()
    }
}

impl Field for usize {
    fn field(&self) -> String {
        self.to_string()
    }
}

impl Field for u64 {
    fn field(&self) -> String {
        self.to_string()
    }
}

impl Field for str {
    fn field(&self) -> String {
        debug_assert!(!self.contains([',', '"', '\n']));
        self.to_string()
    }
}

impl Field for String {
    fn field(&self) -> String {
        self.as_str().field()
    }
}

impl<T: Field + ?Sized> Field for &T {
    fn field(&self) -> String {
        (**self).field()
    }
}

impl<T: Field> Field for Option<T> {
    fn field(&self) -> String {
        self.as_ref().map(Field::field).unwrap_or_default()
    }
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|h| h.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width does not match the header");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Build a row from heterogeneous fields.
#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => {
        vec![$($crate::table::Field::field(&$x)),*]
    };
}

/// A parsed CSV: header plus string cells.
#[derive(Debug, Clone)]
pub struct ParsedCsv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ParsedCsv {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<String> = lines.next().context("empty CSV")?.split(',').map(String::from).collect();
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let row: Vec<String> = line.split(',').map(String::from).collect();
            ensure!(row.len() == header.len(), "CSV row {} has {} fields", i + 1, row.len());
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("CSV has no column {name}"))
    }

    pub fn get<'a>(&'a self, row: &'a [String], name: &str) -> Result<&'a str> {
        Ok(&row[self.column(name)?])
    }

    pub fn get_f64(&self, row: &[String], name: &str) -> Result<f64> {
        let s = self.get(row, name)?;
        s.parse().with_context(|| format!("column {name}: {s:?} is not a number"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut t = Table::new(&["a", "b", "c"]);
        t.push(row![0.1 + 0.2, "x", None::<f64>]);
        t.push(row![3usize, String::from("y"), Some(-0.0)]);
        let text = t.render();
        assert_eq!(text, "a,b,c\n0.30000000000000004,x,\n3,y,-0\n");
        let p = ParsedCsv::parse(&text).unwrap();
        assert_eq!(p.get_f64(&p.rows[0], "a").unwrap(), 0.1 + 0.2);
        assert!(p.get_f64(&p.rows[0], "c").is_err());
        assert!(p.column("d").is_err());
    }

    #[test]
    fn header_only() {
        let t = Table::new(&["a"]);
        assert_eq!(t.render(), "a\n");
        assert!(ParsedCsv::parse(&t.render()).unwrap().rows.is_empty());
    }
}
