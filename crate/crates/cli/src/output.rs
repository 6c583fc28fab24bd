//! CSV and plot-script writers. Reals carry 17 significant digits; lines end in LF.

use std::fmt::Write as _;

pub const SERIES_VERSION: &str = "# assim series v1";
pub const SUMMARY_VERSION: &str = "# assim summary v1";

pub fn real(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Real(f64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Int(n) => n.to_string(),
            Cell::Real(x) => real(*x),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Real(x)
    }
}

impl From<usize> for Cell {
    fn from(n: usize) -> Self {
        Cell::Int(n as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

/// A rectangular table with named columns.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Table { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self, header: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{header}");
        let _ = writeln!(s, "{}", self.columns.join(","));
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(Cell::render).collect();
            let _ = writeln!(s, "{}", cells.join(","));
        }
        s
    }
}

/// Two-column `metric,value` table.
#[derive(Clone, Debug, Default)]
pub struct Summary {
    rows: Vec<(String, Cell)>,
}

impl Summary {
    pub fn add(&mut self, key: impl Into<String>, value: impl Into<Cell>) {
        self.rows.push((key.into(), value.into()));
    }

    pub fn get(&self, key: &str) -> Option<&Cell> {
        self.rows.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn to_csv(&self) -> String {
        let mut t = Table::new(vec!["metric".into(), "value".into()]);
        for (k, v) in &self.rows {
            t.push(vec![Cell::Text(k.clone()), v.clone()]);
        }
        t.to_csv(SUMMARY_VERSION)
    }
}

/// Plot script for a command-driven plotter: one panel per (x column, y columns) group.
pub fn plot_script(name: &str, title: &str, panels: &[(&str, usize, Vec<usize>)], columns: &[String]) -> String {
    let mut s = String::from("# assim plot v1\n");
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set datafile commentschars '#'");
    let _ = writeln!(s, "set terminal pngcairo size 900,{}", 320 * panels.len().max(1));
    let _ = writeln!(s, "set output '{name}.png'");
    let _ = writeln!(s, "set multiplot layout {},1 title '{title}'", panels.len().max(1));
    for (ylabel, x, ys) in panels {
        let _ = writeln!(s, "set xlabel '{}'", columns[*x]);
        let _ = writeln!(s, "set ylabel '{ylabel}'");
        let curves: Vec<String> = ys
            .iter()
            .map(|y| format!("'{name}_series.csv' every ::1 using {}:{} with lines title '{}'", x + 1, y + 1, columns[*y]))
            .collect();
        let _ = writeln!(s, "plot {}", curves.join(", \\\n     "));
    }
    let _ = writeln!(s, "unset multiplot");
    s
}
