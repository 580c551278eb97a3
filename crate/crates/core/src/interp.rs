//! Piecewise-linear lookup tables with clamped extrapolation, plus the CSV
//! format used to ship tabulated powertrain maps.
//!
//! CSV layout for a 1-D table: a header row naming the axis and the value
//! column, then one `x,value` row per breakpoint. For a 2-D table the header
//! is `rowaxis\colaxis` followed by the column breakpoints, and each data row
//! starts with its row breakpoint followed by the values (row-major).

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table needs at least one breakpoint")]
    Empty,
    #[error("breakpoints must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed table csv: {0}")]
    Malformed(String),
}

fn check_axis(xs: &[f64]) -> Result<(), TableError> {
    if xs.is_empty() {
        return Err(TableError::Empty);
    }
    for i in 1..xs.len() {
        if xs[i] <= xs[i - 1] {
            return Err(TableError::NotIncreasing(i));
        }
    }
    Ok(())
}

/// Index of the segment containing `x` and the interpolation weight in it.
/// Outside the axis range the nearest end value is held (clamped).
fn locate(xs: &[f64], x: f64) -> (usize, f64) {
    let n = xs.len();
    if n == 1 || x <= xs[0] {
        return (0, 0.0);
    }
    if x >= xs[n - 1] {
        return (n - 2, 1.0);
    }
    // partition_point: first index with xs[i] > x, so seg = that - 1
    let hi = xs.partition_point(|&b| b <= x);
    let seg = hi - 1;
    let w = (x - xs[seg]) / (xs[seg + 1] - xs[seg]);
    (seg, w)
}

/// 1-D piecewise-linear table, clamped outside the breakpoint range.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1D {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Table1D {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, TableError> {
        check_axis(&xs)?;
        if xs.len() != ys.len() {
            return Err(TableError::ShapeMismatch {
                expected: xs.len(),
                got: ys.len(),
            });
        }
        Ok(Self { xs, ys })
    }

    /// Constant table (single breakpoint).
    pub fn constant(y: f64) -> Self {
        Self {
            xs: vec![0.0],
            ys: vec![y],
        }
    }

    /// Build by sampling `f` on `n` evenly spaced points of `[lo, hi]`.
    pub fn sample(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> f64) -> Self {
        assert!(n >= 2 && hi > lo);
        let xs: Vec<f64> = (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect();
        let ys = xs.iter().map(|&x| f(x)).collect();
        Self { xs, ys }
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        let (seg, w) = locate(&self.xs, x);
        if self.xs.len() == 1 {
            return self.ys[0];
        }
        self.ys[seg] + w * (self.ys[seg + 1] - self.ys[seg])
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.ys
    }

    pub fn min_value(&self) -> f64 {
        self.ys.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, w: W, axis: &str, value: &str) -> Result<(), TableError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([axis, value])?;
        for (x, y) in self.xs.iter().zip(&self.ys) {
            out.write_record([format!("{x:?}"), format!("{y:?}")])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TableError> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 2 {
                return Err(TableError::Malformed(format!(
                    "expected 2 columns, got {}",
                    rec.len()
                )));
            }
            xs.push(parse_f64(&rec[0])?);
            ys.push(parse_f64(&rec[1])?);
        }
        Self::new(xs, ys)
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// 2-D bilinear table over (row axis, col axis), clamped on both axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2D {
    rows: Vec<f64>,
    cols: Vec<f64>,
    /// Row-major: values[r * cols.len() + c].
    values: Vec<f64>,
}

impl Table2D {
    pub fn new(rows: Vec<f64>, cols: Vec<f64>, values: Vec<f64>) -> Result<Self, TableError> {
        check_axis(&rows)?;
        check_axis(&cols)?;
        if values.len() != rows.len() * cols.len() {
            return Err(TableError::ShapeMismatch {
                expected: rows.len() * cols.len(),
                got: values.len(),
            });
        }
        Ok(Self { rows, cols, values })
    }

    /// Build by sampling `f(row, col)` on an evenly spaced grid.
    pub fn sample(
        row_range: (f64, f64),
        col_range: (f64, f64),
        shape: (usize, usize),
        f: impl Fn(f64, f64) -> f64,
    ) -> Self {
        let (nr, nc) = shape;
        assert!(nr >= 2 && nc >= 2);
        let rows: Vec<f64> = (0..nr)
            .map(|i| row_range.0 + (row_range.1 - row_range.0) * i as f64 / (nr - 1) as f64)
            .collect();
        let cols: Vec<f64> = (0..nc)
            .map(|j| col_range.0 + (col_range.1 - col_range.0) * j as f64 / (nc - 1) as f64)
            .collect();
        let mut values = Vec::with_capacity(nr * nc);
        for &r in &rows {
            for &c in &cols {
                values.push(f(r, c));
            }
        }
        Self { rows, cols, values }
    }

    pub fn eval(&self, row: f64, col: f64) -> f64 {
        if row.is_nan() || col.is_nan() {
            return f64::NAN;
        }
        let nc = self.cols.len();
        let at = |r: usize, c: usize| self.values[r * nc + c];
        let (ri, rw) = locate(&self.rows, row);
        let (ci, cw) = locate(&self.cols, col);
        match (self.rows.len() == 1, nc == 1) {
            (true, true) => at(0, 0),
            (true, false) => at(0, ci) + cw * (at(0, ci + 1) - at(0, ci)),
            (false, true) => at(ri, 0) + rw * (at(ri + 1, 0) - at(ri, 0)),
            (false, false) => {
                let lo = at(ri, ci) + cw * (at(ri, ci + 1) - at(ri, ci));
                let hi = at(ri + 1, ci) + cw * (at(ri + 1, ci + 1) - at(ri + 1, ci));
                lo + rw * (hi - lo)
            }
        }
    }

    pub fn row_axis(&self) -> &[f64] {
        &self.rows
    }

    pub fn col_axis(&self) -> &[f64] {
        &self.cols
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn write_csv<W: Write>(&self, w: W, row_axis: &str, col_axis: &str) -> Result<(), TableError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec![format!("{row_axis}\\{col_axis}")];
        header.extend(self.cols.iter().map(|c| format!("{c:?}")));
        out.write_record(&header)?;
        for (i, r) in self.rows.iter().enumerate() {
            let mut rec = vec![format!("{r:?}")];
            rec.extend(
                self.values[i * self.cols.len()..(i + 1) * self.cols.len()]
                    .iter()
                    .map(|v| format!("{v:?}")),
            );
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self, TableError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(r);
        let mut records = rdr.records();
        let header = records
            .next()
            .ok_or_else(|| TableError::Malformed("empty file".into()))??;
        if header.len() < 2 {
            return Err(TableError::Malformed("header too short".into()));
        }
        let cols: Vec<f64> = header
            .iter()
            .skip(1)
            .map(parse_f64)
            .collect::<Result<_, _>>()?;
        let mut rows = Vec::new();
        let mut values = Vec::new();
        for rec in records {
            let rec = rec?;
            if rec.len() != cols.len() + 1 {
                return Err(TableError::Malformed(format!(
                    "row has {} fields, expected {}",
                    rec.len(),
                    cols.len() + 1
                )));
            }
            rows.push(parse_f64(&rec[0])?);
            for f in rec.iter().skip(1) {
                values.push(parse_f64(f)?);
            }
        }
        Self::new(rows, cols, values)
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

fn parse_f64(s: &str) -> Result<f64, TableError> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| TableError::Malformed(format!("bad float {s:?}: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn linear_table_reproduces_line() {
        let t = Table1D::sample(0.0, 10.0, 11, |x| 3.0 * x - 1.0);
        assert_relative_eq!(t.eval(4.35), 3.0 * 4.35 - 1.0, max_relative = 1e-12);
        // clamped extrapolation
        assert_relative_eq!(t.eval(-5.0), -1.0);
        assert_relative_eq!(t.eval(25.0), 29.0);
    }

    #[test]
    fn bilinear_reproduces_affine_surface() {
        let t = Table2D::sample((0.0, 4.0), (-2.0, 2.0), (5, 9), |r, c| 2.0 * r - 3.0 * c + 0.5);
        assert_relative_eq!(t.eval(1.3, 0.7), 2.0 * 1.3 - 3.0 * 0.7 + 0.5, max_relative = 1e-12);
        assert_relative_eq!(t.eval(-1.0, 0.0), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_axes() {
        assert!(Table1D::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(Table2D::new(vec![1.0, 0.0], vec![0.0], vec![1.0, 2.0]).is_err());
    }

    proptest! {
        #[test]
        fn csv_round_trip_1d(ys in proptest::collection::vec(-1e6f64..1e6, 2..20)) {
            let n = ys.len();
            let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.5).collect();
            let t = Table1D::new(xs, ys).unwrap();
            let mut buf = Vec::new();
            t.write_csv(&mut buf, "v", "val").unwrap();
            let back = Table1D::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(t, back);
        }

        #[test]
        fn csv_round_trip_2d(vals in proptest::collection::vec(-1e6f64..1e6, 6..36)) {
            let nr = 2;
            let nc = vals.len() / nr;
            let vals = vals[..nr * nc].to_vec();
            let rows: Vec<f64> = (0..nr).map(|i| i as f64).collect();
            let cols: Vec<f64> = (0..nc).map(|i| i as f64 * 0.25 - 1.0).collect();
            let t = Table2D::new(rows, cols, vals).unwrap();
            let mut buf = Vec::new();
            t.write_csv(&mut buf, "v", "t").unwrap();
            let back = Table2D::read_csv(buf.as_slice()).unwrap();
            prop_assert_eq!(t, back);
        }

        #[test]
        fn eval_within_value_hull(x in -20.0f64..20.0) {
            let t = Table1D::new(vec![0.0, 1.0, 3.0, 7.0], vec![2.0, -1.0, 4.0, 4.5]).unwrap();
            let y = t.eval(x);
            prop_assert!((-1.0..=4.5).contains(&y));
        }
    }
}
