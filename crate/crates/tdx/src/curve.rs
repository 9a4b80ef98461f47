//! Density evaluated on a grid.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Result, TdxError};

/// A density evaluated at a strictly increasing grid of feature values.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityCurve {
    grid: Vec<f64>,
    values: Vec<f64>,
}

impl DensityCurve {
    pub fn new(grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if grid.len() != values.len() {
            return Err(TdxError::InvalidArgument(format!(
                "curve grid has {} points but {} values",
                grid.len(),
                values.len()
            )));
        }
        if grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(TdxError::InvalidArgument(
                "curve grid must be strictly increasing".into(),
            ));
        }
        if let Some(v) = values.iter().find(|v| !(**v >= 0.0)) {
            return Err(TdxError::InvalidArgument(format!(
                "curve values must be nonnegative, found {v}"
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Writes the curve as CSV with header `x,density`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "x,density")?;
        for (x, v) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{x},{v}")?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a curve written by [`DensityCurve::write_csv`].
    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(BufReader::new(File::open(path)?));
        let headers = reader.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "density" {
            return Err(TdxError::Schema(format!(
                "expected curve header 'x,density', got '{}'",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut grid = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let x: f64 = record[0].parse().map_err(|_| {
                TdxError::Schema(format!("unparseable x value '{}'", &record[0]))
            })?;
            let v: f64 = record[1].parse().map_err(|_| {
                TdxError::Schema(format!("unparseable density value '{}'", &record[1]))
            })?;
            grid.push(x);
            values.push(v);
        }
        Self::new(grid, values)
    }
}
