//! Data containers, CSV ingestion and instrument standardization.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Smallest sample the estimator accepts.
pub const MIN_OBSERVATIONS: usize = 3;

/// A sample `(Y_i, Z_i, W_i)` of outcome, endogenous regressor and instruments.
///
/// Rows keep their input order; `z` need not be sorted and may repeat.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    z: DVector<f64>,
    w: DMatrix<f64>,
}

impl Dataset {
    pub fn new(y: DVector<f64>, z: DVector<f64>, w: DMatrix<f64>) -> Result<Self> {
        let n = y.len();
        if z.len() != n || w.nrows() != n {
            return Err(Error::Dimension(format!(
                "y has {} rows, z has {}, w has {}",
                n,
                z.len(),
                w.nrows()
            )));
        }
        if w.ncols() == 0 {
            return Err(Error::Dimension("no instrument columns".into()));
        }
        if n < MIN_OBSERVATIONS {
            return Err(Error::TooFewObservations {
                required: MIN_OBSERVATIONS,
                actual: n,
            });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("y"));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("z"));
        }
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("w"));
        }
        Ok(Self { y, z, w })
    }

    /// Convenience constructor for a single instrument.
    pub fn from_slices(y: &[f64], z: &[f64], w: &[f64]) -> Result<Self> {
        Self::new(
            DVector::from_column_slice(y),
            DVector::from_column_slice(z),
            DMatrix::from_column_slice(w.len(), 1, w),
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of instrument columns.
    pub fn p(&self) -> usize {
        self.w.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DVector<f64> {
        &self.z
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Same regressor and instruments with a new outcome vector.
    pub fn with_y(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(y, self.z.clone(), self.w.clone())
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let y = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.y[i]));
        let z = DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.z[i]));
        let w = self.w.select_rows(idx);
        Self::new(y, z, w)
    }

    /// True when two instrument rows coincide exactly.
    pub fn has_duplicate_instruments(&self) -> bool {
        let n = self.n();
        (0..n).any(|i| (i + 1..n).any(|j| self.w.row(i) == self.w.row(j)))
    }
}

/// Column names mapping a CSV file onto a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnMap {
    pub y: String,
    pub z: String,
    pub w: Vec<String>,
}

impl ColumnMap {
    pub fn new(y: impl Into<String>, z: impl Into<String>, w: &[&str]) -> Self {
        Self {
            y: y.into(),
            z: z.into(),
            w: w.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// Reads a header-first, comma-separated UTF-8 file.
///
/// Data rows are numbered from 1 in parse errors.
pub fn load_csv(path: impl AsRef<Path>, map: &ColumnMap) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let iy = locate(&map.y)?;
    let iz = locate(&map.z)?;
    let iw = map.w.iter().map(|c| locate(c)).collect::<Result<Vec<_>>>()?;
    if iw.is_empty() {
        return Err(Error::Dimension("no instrument columns requested".into()));
    }

    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut w: Vec<Vec<f64>> = vec![Vec::new(); iw.len()];
    for (k, record) in reader.records().enumerate() {
        let record = record?;
        let row = k + 1;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    row,
                    column: name.to_string(),
                    value: raw.to_string(),
                })
        };
        y.push(cell(iy, &map.y)?);
        z.push(cell(iz, &map.z)?);
        for (col, (&idx, name)) in iw.iter().zip(&map.w).enumerate() {
            w[col].push(cell(idx, name)?);
        }
    }
    let n = y.len();
    let flat: Vec<f64> = w.into_iter().flatten().collect();
    Dataset::new(
        DVector::from_vec(y),
        DVector::from_vec(z),
        DMatrix::from_vec(n, map.w.len(), flat),
    )
}

/// Writes `ds` with the column names of `map`, shortest round-trip decimals.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>, map: &ColumnMap) -> Result<()> {
    if map.w.len() != ds.p() {
        return Err(Error::Dimension(format!(
            "{} instrument names for {} columns",
            map.w.len(),
            ds.p()
        )));
    }
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![map.y.clone(), map.z.clone()];
    header.extend(map.w.iter().cloned());
    writer.write_record(&header)?;
    for i in 0..ds.n() {
        let mut row = vec![ds.y[i].to_string(), ds.z[i].to_string()];
        row.extend((0..ds.p()).map(|k| ds.w[(i, k)].to_string()));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

/// Instruments centred and scaled columnwise: `w = w_std * scales + centers`.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedInstruments {
    pub w_std: DMatrix<f64>,
    pub scales: DVector<f64>,
    pub centers: DVector<f64>,
}

impl StandardizedInstruments {
    /// Undo the transform.
    pub fn restore(&self) -> DMatrix<f64> {
        let mut w = self.w_std.clone();
        for (k, mut col) in w.column_iter_mut().enumerate() {
            col.apply(|v| *v = *v * self.scales[k] + self.centers[k]);
        }
        w
    }
}

/// Columnwise `(w - mean) / sd` with the `n - 1` divisor.
pub fn standardize_instruments(w: &DMatrix<f64>) -> Result<StandardizedInstruments> {
    let n = w.nrows();
    if n < 2 {
        return Err(Error::TooFewObservations { required: 2, actual: n });
    }
    let mut w_std = w.clone();
    let mut scales = DVector::zeros(w.ncols());
    let mut centers = DVector::zeros(w.ncols());
    for (k, mut col) in w_std.column_iter_mut().enumerate() {
        let mean = col.mean();
        let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        let magnitude = col.amax();
        if sd == 0.0 || sd <= 1e-13 * magnitude {
            return Err(Error::DegenerateInstrument(k));
        }
        col.apply(|v| *v = (*v - mean) / sd);
        scales[k] = sd;
        centers[k] = mean;
    }
    Ok(StandardizedInstruments { w_std, scales, centers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::io::Write;

    fn write_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_three_rows() {
        let f = write_file("y,z,w\n1,0.1,3\n2,0.2,4\n3,0.3,5.5\n");
        let ds = load_csv(f.path(), &ColumnMap::new("y", "z", &["w"])).unwrap();
        assert_eq!(ds.n(), 3);
        assert_eq!(ds.p(), 1);
        assert_eq!(ds.w()[(2, 0)], 5.5);
        assert_eq!(ds.z()[1], 0.2);
    }

    #[test]
    fn missing_column_is_named() {
        let f = write_file("y,x,w\n1,0.1,3\n2,0.2,4\n3,0.3,5\n");
        let err = load_csv(f.path(), &ColumnMap::new("y", "z", &["w"])).unwrap_err();
        assert!(matches!(&err, Error::MissingColumn(c) if c == "z"));
        assert!(err.to_string().contains("`z`"));
    }

    #[test]
    fn nan_cell_cites_row() {
        let f = write_file("y,z,w\n1,0.1,3\nNaN,0.2,4\n3,0.3,5\n");
        let err = load_csv(f.path(), &ColumnMap::new("y", "z", &["w"])).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, "y");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_cell_is_parse_error() {
        let f = write_file("y,z,w\n1,0.1,3\n2,abc,4\n3,0.3,5\n");
        let err = load_csv(f.path(), &ColumnMap::new("y", "z", &["w"])).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }));
    }

    #[test]
    fn two_rows_is_size_error() {
        let f = write_file("y,z,w\n1,0.1,3\n2,0.2,4\n");
        let err = load_csv(f.path(), &ColumnMap::new("y", "z", &["w"])).unwrap_err();
        assert!(matches!(err, Error::TooFewObservations { required: 3, actual: 2 }));
    }

    #[test]
    fn csv_round_trip() {
        let f =
            write_file("y,z,w1,w2\n0.1,1e-3,-2.5,7\n1.0000000000000002,3.3333333333333335,0.125,1e10\n-4,5,6,7.75\n");
        let map = ColumnMap::new("y", "z", &["w1", "w2"]);
        let ds = load_csv(f.path(), &map).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path(), &map).unwrap();
        let back = load_csv(out.path(), &map).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn two_point_standardization() {
        let w = DMatrix::from_column_slice(2, 1, &[0.0, 2.0]);
        let s = standardize_instruments(&w).unwrap();
        assert_relative_eq!(s.w_std[(0, 0)], -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(s.w_std[(1, 0)], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        assert_relative_eq!(s.scales[0], 2f64.sqrt(), epsilon = 1e-15);
        assert_relative_eq!(s.centers[0], 1.0);
    }

    #[test]
    fn standardized_column_is_fixed_point() {
        let w = DMatrix::from_column_slice(5, 1, &[0.3, -1.2, 2.0, 0.7, -0.4]);
        let once = standardize_instruments(&w).unwrap();
        let twice = standardize_instruments(&once.w_std).unwrap();
        assert_relative_eq!(twice.scales[0], 1.0, epsilon = 1e-12);
        assert!(twice.centers[0].abs() < 1e-15);
        assert_relative_eq!(twice.w_std, once.w_std, epsilon = 1e-12);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let w = DMatrix::from_column_slice(3, 1, &[5.0, 5.0, 5.0]);
        assert!(matches!(
            standardize_instruments(&w),
            Err(Error::DegenerateInstrument(0))
        ));
    }

    #[test]
    fn restore_inverts() {
        let w = DMatrix::from_row_slice(4, 2, &[1.0, 10.0, 2.0, 30.0, 4.0, 20.0, 8.0, -5.0]);
        let s = standardize_instruments(&w).unwrap();
        assert_relative_eq!(s.restore(), w, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(
            Dataset::from_slices(&[1.0, f64::INFINITY, 0.0], &[0.0, 1.0, 2.0], &[0.0, 1.0, 2.0]),
            Err(Error::NonFinite("y"))
        ));
    }

    #[test]
    fn flags_duplicate_instrument_rows() {
        let ds = Dataset::from_slices(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0], &[0.5, 1.0, 0.5]).unwrap();
        assert!(ds.has_duplicate_instruments());
    }
}
