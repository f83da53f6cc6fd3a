use std::io::Write;

use anyhow::{bail, Context, Result};
use kcontract::Matrix;

/// Comma-separated rows of numbers; blank lines are skipped.
pub fn parse(text: &str) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.context("malformed CSV")?;
        let line = record.position().map_or(0, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().with_context(|| {
                    format!("line {line}, column {}: '{field}' is not a number", j + 1)
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                bail!(
                    "line {line}: expected {} columns, found {}",
                    first.len(),
                    row.len()
                );
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        bail!("matrix file is empty");
    }
    Ok(Matrix::from_rows(&rows)?)
}

pub fn write<W: Write>(mut out: W, m: &Matrix) -> Result<()> {
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.16e}")).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
