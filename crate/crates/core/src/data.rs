//! The observed sample: an `n × d` array of finite reals.

use std::io::Read;
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// An `n × d` sample stored row-major. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    values: Array2<f64>,
}

impl DataSet {
    /// Wraps an array, rejecting NaN and infinities.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let d = values.ncols().max(1);
            return Err(Error::Data {
                line: (pos / d + 1) as u64,
                message: "non-finite value".into(),
            });
        }
        Ok(Self {
            values: values.as_standard_layout().into_owned(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n * d);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Data {
                    line: i as u64 + 1,
                    message: format!("expected {d} columns, found {}", r.len()),
                });
            }
            flat.extend_from_slice(r);
        }
        let values = Array2::from_shape_vec((n, d), flat).expect("shape checked");
        Self::new(values)
    }

    /// One-dimensional sample from a slice of scalars.
    pub fn from_scalars(xs: &[f64]) -> Result<Self> {
        let values = Array2::from_shape_vec((xs.len(), 1), xs.to_vec()).expect("n x 1");
        Self::new(values)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            values: Array2::zeros((0, dim)),
        }
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.values.as_slice().expect("standard layout")[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        (0..self.n()).map(move |i| self.row(i))
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_array(self) -> Array2<f64> {
        self.values
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> DataSet {
        let d = self.dim();
        let mut flat = Vec::with_capacity(idx.len() * d);
        for &i in idx {
            flat.extend_from_slice(self.row(i));
        }
        DataSet {
            values: Array2::from_shape_vec((idx.len(), d), flat).expect("shape"),
        }
    }

    /// Appends the rows of `other` below `self`.
    pub fn concat(&self, other: &DataSet) -> Result<DataSet> {
        if self.n() > 0 && other.n() > 0 && self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        let d = if self.n() > 0 {
            self.dim()
        } else {
            other.dim()
        };
        let mut flat = Vec::with_capacity((self.n() + other.n()) * d);
        flat.extend(self.rows().flatten());
        flat.extend(other.rows().flatten());
        Ok(DataSet {
            values: Array2::from_shape_vec((self.n() + other.n(), d), flat).expect("shape"),
        })
    }

    /// Reads a headerless, comma-separated file of `n` rows and `d` numeric
    /// columns. Errors carry the 1-based line number of the first bad row.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv_reader(file)
    }

    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut flat = Vec::new();
        let mut d: Option<usize> = None;
        let mut n = 0usize;
        for rec in rdr.records() {
            let rec = rec.map_err(|e| Error::Data {
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            let line = rec.position().map_or(n as u64 + 1, |p| p.line());
            if rec.len() == 1 && rec[0].is_empty() {
                continue;
            }
            match d {
                None => d = Some(rec.len()),
                Some(d) if d != rec.len() => {
                    return Err(Error::Data {
                        line,
                        message: format!("expected {d} columns, found {}", rec.len()),
                    })
                }
                _ => {}
            }
            for field in rec.iter() {
                let v: f64 = field.parse().map_err(|_| Error::Data {
                    line,
                    message: format!("not a number: {field:?}"),
                })?;
                if !v.is_finite() {
                    return Err(Error::Data {
                        line,
                        message: format!("non-finite value {field:?}"),
                    });
                }
                flat.push(v);
            }
            n += 1;
        }
        let d = d.ok_or(Error::Data {
            line: 0,
            message: "no rows".into(),
        })?;
        let values = Array2::from_shape_vec((n, d), flat).expect("shape");
        Ok(Self { values })
    }

    /// Coordinatewise median (lower median for even `n`).
    pub fn coordinate_median(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|j| {
                let mut col: Vec<f64> = self.rows().map(|r| r[j]).collect();
                if col.is_empty() {
                    return 0.0;
                }
                let k = (col.len() - 1) / 2;
                let (_, m, _) = col.select_nth_unstable_by(k, f64::total_cmp);
                *m
            })
            .collect()
    }
}
