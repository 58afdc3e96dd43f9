//! Labeled feature/label samples and their CSV form.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// `n_samples x n_features` inputs with one real label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if x.is_empty() {
            return Err(Error::Precondition("dataset needs at least one sample".into()));
        }
        if x.len() != y.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                x.len(),
                y.len()
            )));
        }
        let nf = x[0].len();
        if nf == 0 {
            return Err(Error::Dimension("samples have no features".into()));
        }
        for (i, row) in x.iter().enumerate() {
            if row.len() != nf {
                return Err(Error::Dimension(format!(
                    "sample {i} has {} features, expected {nf}",
                    row.len()
                )));
            }
            if row.iter().chain(std::iter::once(&y[i])).any(|v| !v.is_finite()) {
                return Err(Error::Precondition(format!("sample {i} is not finite")));
            }
        }
        Ok(Dataset { x, y })
    }

    /// Single-feature dataset.
    pub fn from_1d(xs: &[f64], ys: &[f64]) -> Result<Self> {
        Dataset::new(xs.iter().map(|&v| vec![v]).collect(), ys.to_vec())
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.x[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn labels(&self) -> &[f64] {
        &self.y
    }

    pub fn sample(&self, i: usize) -> (&[f64], f64) {
        (&self.x[i], self.y[i])
    }

    pub fn column(&self, f: usize) -> Vec<f64> {
        self.x.iter().map(|r| r[f]).collect()
    }

    pub fn label_range(&self) -> (f64, f64) {
        self.y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Header `x,y` for one feature, `x_1,...,x_n,y` otherwise; values in
    /// shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let nf = self.n_features();
        let mut s = if nf == 1 {
            "x,y\n".to_string()
        } else {
            let mut h: Vec<String> = (1..=nf).map(|f| format!("x_{f}")).collect();
            h.push("y".into());
            h.join(",") + "\n"
        };
        for (row, y) in self.x.iter().zip(&self.y) {
            for v in row {
                let _ = write!(s, "{v:?},");
            }
            let _ = writeln!(s, "{y:?}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::parse("line 1", "empty dataset file"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.len() < 2 || cols.last() != Some(&"y") {
            return Err(Error::parse("line 1", format!("bad header {header:?}")));
        }
        let nf = cols.len() - 1;
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (ln, line) in lines {
            let vals = line
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse(format!("line {}", ln + 1), e.to_string()))?;
            if vals.len() != nf + 1 {
                return Err(Error::parse(
                    format!("line {}", ln + 1),
                    format!("expected {} fields, found {}", nf + 1, vals.len()),
                ));
            }
            y.push(vals[nf]);
            x.push(vals[..nf].to_vec());
        }
        Dataset::new(x, y)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_csv(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    /// SHA-256 of the CSV encoding, hex.
    pub fn sha256(&self) -> String {
        sha256_hex(self.to_csv().as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
