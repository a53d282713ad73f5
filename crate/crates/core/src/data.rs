//! Dataset container, two-fold splitting and the CSV exchange format.
//!
//! CSV layout: header `y,w,x1,...,xp`, one observation per row.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Result, SdrError};

pub const MIN_OBSERVATIONS: usize = 4;

/// Observed sample `(X_i, Y_i, W_i)`, validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    w: Vec<u8>,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, w: Vec<u8>) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n || w.len() != n {
            return Err(SdrError::invalid(format!(
                "row counts disagree: x has {n}, y has {}, w has {}",
                y.len(),
                w.len()
            )));
        }
        if n < MIN_OBSERVATIONS {
            return Err(SdrError::invalid(format!(
                "need at least {MIN_OBSERVATIONS} observations, got {n}"
            )));
        }
        if x.ncols() == 0 {
            return Err(SdrError::invalid("design matrix has no columns"));
        }
        if let Some(row) = w.iter().position(|&v| v > 1) {
            return Err(SdrError::NonBinaryTreatment { row });
        }
        let treated = w.iter().filter(|&&v| v == 1).count();
        if treated == 0 || treated == n {
            return Err(SdrError::invalid("both treatment arms must be non-empty"));
        }
        if let Some((i, _)) = y.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(SdrError::invalid(format!("non-finite outcome at row {i}")));
        }
        for ((i, j), v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(SdrError::invalid(format!(
                    "non-finite covariate at row {i}, column x{}",
                    j + 1
                )));
            }
        }
        Ok(Self { x, y, w })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> ArrayView2<'_, f64> {
        self.x.view()
    }

    pub fn y(&self) -> ArrayView1<'_, f64> {
        self.y.view()
    }

    pub fn w(&self) -> &[u8] {
        &self.w
    }

    pub fn arm_size(&self, arm: u8) -> usize {
        self.w.iter().filter(|&&v| v == arm).count()
    }

    /// Same sample with treatment labels swapped.
    pub fn flipped(&self) -> Self {
        Self {
            x: self.x.clone(),
            y: self.y.clone(),
            w: self.w.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Prepend a column of ones.
    pub fn with_intercept(&self) -> Self {
        let n = self.n();
        let mut x = Array2::ones((n, self.p() + 1));
        x.slice_mut(ndarray::s![.., 1..]).assign(&self.x);
        Self {
            x,
            y: self.y.clone(),
            w: self.w.clone(),
        }
    }

    /// Rows `idx` as an owned sub-sample. No invariant checks: folds may
    /// legitimately be smaller than a full dataset.
    pub fn subset(&self, idx: &[usize]) -> Subsample {
        Subsample {
            x: self.x.select(Axis(0), idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            w: idx.iter().map(|&i| self.w[i]).collect(),
        }
    }
}

/// Unvalidated rows of a dataset, typically one fold.
#[derive(Debug, Clone)]
pub struct Subsample {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub w: Vec<u8>,
}

impl Subsample {
    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn arm_size(&self, arm: u8) -> usize {
        self.w.iter().filter(|&&v| v == arm).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FoldId {
    A,
    B,
}

impl FoldId {
    pub const BOTH: [FoldId; 2] = [FoldId::A, FoldId::B];

    pub fn other(self) -> FoldId {
        match self {
            FoldId::A => FoldId::B,
            FoldId::B => FoldId::A,
        }
    }

    pub fn index(self) -> usize {
        match self {
            FoldId::A => 0,
            FoldId::B => 1,
        }
    }
}

/// Partition of `0..n` into two sorted halves.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    pub fold_a: Vec<usize>,
    pub fold_b: Vec<usize>,
}

impl FoldSplit {
    pub fn fold(&self, id: FoldId) -> &[usize] {
        match id {
            FoldId::A => &self.fold_a,
            FoldId::B => &self.fold_b,
        }
    }

    pub fn n(&self) -> usize {
        self.fold_a.len() + self.fold_b.len()
    }
}

/// Uniformly random split; fold A gets `ceil(n/2)` units.
pub fn split_halves<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<FoldSplit> {
    if n < MIN_OBSERVATIONS {
        return Err(SdrError::invalid(format!(
            "cannot split {n} observations, need at least {MIN_OBSERVATIONS}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let (a, b) = idx.split_at(n.div_ceil(2));
    let mut fold_a = a.to_vec();
    let mut fold_b = b.to_vec();
    fold_a.sort_unstable();
    fold_b.sort_unstable();
    Ok(FoldSplit { fold_a, fold_b })
}

pub fn load_dataset(path: &Path, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let mut width: Option<usize> = None;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    let parse_err = |row: usize, column: String, message: String| SdrError::Parse {
        path: path.to_path_buf(),
        row,
        column,
        message,
    };

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cols = record.len();
        match width {
            None if cols < 3 => {
                return Err(parse_err(
                    row,
                    "-".into(),
                    format!("expected columns y,w,x1..xp, found {cols}"),
                ))
            }
            None => width = Some(cols),
            Some(expected) if expected != cols => {
                return Err(parse_err(
                    row,
                    "-".into(),
                    format!("expected {expected} fields, found {cols}"),
                ))
            }
            _ => {}
        }
        let mut values = Vec::with_capacity(cols);
        for (c, field) in record.iter().enumerate() {
            let name = column_name(c);
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(row, name.clone(), format!("cannot parse {field:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(row, name, "non-finite value".into()));
            }
            values.push(v);
        }
        let w = values[1];
        if w != 0.0 && w != 1.0 {
            return Err(SdrError::NonBinaryTreatment { row });
        }
        ys.push(values[0]);
        ws.push(w as u8);
        xs.extend_from_slice(&values[2..]);
    }

    let n = ys.len();
    let p = width.map_or(0, |w| w - 2);
    let x = Array2::from_shape_vec((n, p), xs)
        .map_err(|e| SdrError::invalid(format!("design matrix shape: {e}")))?;
    Dataset::new(x, Array1::from(ys), ws)
}

pub fn save_dataset(data: &Dataset, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_dataset(data, &mut out)?;
    out.flush()?;
    Ok(())
}

/// Writes with 17 significant digits so doubles round-trip exactly.
pub fn write_dataset<W: Write>(data: &Dataset, out: &mut W) -> Result<()> {
    let mut line = String::from("y,w");
    for j in 1..=data.p() {
        line.push_str(&format!(",x{j}"));
    }
    writeln!(out, "{line}")?;
    for i in 0..data.n() {
        line.clear();
        line.push_str(&format!("{:.16e},{}", data.y[i], data.w[i]));
        for v in data.x.row(i) {
            line.push_str(&format!(",{v:.16e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn column_name(c: usize) -> String {
    match c {
        0 => "y".into(),
        1 => "w".into(),
        _ => format!("x{}", c - 1),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_file() {
        let f = write_tmp("y,w,x1,x2\n1.0,1,0.5,2\n2,0,1,1\n3,1,0,0\n4,0,2,-1\n");
        let d = load_dataset(f.path(), true).unwrap();
        assert_eq!((d.n(), d.p()), (4, 2));
        assert_eq!(d.arm_size(1), 2);
        assert_eq!(d.arm_size(0), 2);
        assert_eq!(d.x()[[3, 1]], -1.0);
    }

    #[test]
    fn rejects_fractional_treatment() {
        let f = write_tmp("y,w,x1\n1,1,0\n2,0.5,1\n3,1,0\n4,0,2\n");
        let err = load_dataset(f.path(), true).unwrap_err();
        assert_eq!(err.to_string(), "non-binary treatment at row 1");
    }

    #[test]
    fn rejects_malformed_rows() {
        let f = write_tmp("y,w,x1\n1,1,0\n2,0\n3,1,0\n4,0,2\n");
        let err = load_dataset(f.path(), true).unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");

        let f = write_tmp("y,w,x1\n1,1,0\n2,0,abc\n3,1,0\n4,0,2\n");
        let err = load_dataset(f.path(), true).unwrap_err().to_string();
        assert!(err.contains("row 1") && err.contains("x1"), "{err}");

        let f = write_tmp("y,w,x1\n1,1,0\n2,0,inf\n3,1,0\n4,0,2\n");
        assert!(load_dataset(f.path(), true).is_err());
    }

    #[test]
    fn headerless_files_load() {
        let f = write_tmp("1,1,0\n2,0,1\n3,1,0\n4,0,2\n");
        assert_eq!(load_dataset(f.path(), false).unwrap().n(), 4);
    }

    #[test]
    fn constructor_enforces_invariants() {
        let x = array![[1.0], [2.0], [3.0], [4.0]];
        let y = array![1.0, 2.0, 3.0, 4.0];
        assert!(Dataset::new(x.clone(), y.clone(), vec![1, 0, 1, 0]).is_ok());
        assert!(Dataset::new(x.clone(), y.clone(), vec![1, 1, 1, 1]).is_err());
        assert!(Dataset::new(x.clone(), y.clone(), vec![1, 2, 1, 0]).is_err());
        assert!(Dataset::new(x.slice(ndarray::s![..3, ..]).to_owned(), array![1.0, 2.0, 3.0], vec![1, 0, 1]).is_err());
        let mut bad = y.clone();
        bad[2] = f64::NAN;
        assert!(Dataset::new(x, bad, vec![1, 0, 1, 0]).is_err());
    }

    #[test]
    fn split_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = split_halves(10, &mut rng).unwrap();
        assert_eq!((s.fold_a.len(), s.fold_b.len()), (5, 5));
        let s = split_halves(11, &mut rng).unwrap();
        assert_eq!((s.fold_a.len(), s.fold_b.len()), (6, 5));
        assert!(split_halves(3, &mut rng).is_err());
    }

    #[test]
    fn split_is_deterministic_given_seed() {
        let a = split_halves(50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = split_halves(50, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn split_partitions_exhaustively_small_n() {
        for n in 4..=20 {
            for seed in 0..25 {
                let s = split_halves(n, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let mut all: Vec<usize> = s.fold_a.iter().chain(&s.fold_b).copied().collect();
                all.sort_unstable();
                assert_eq!(all, (0..n).collect::<Vec<_>>());
                assert!(s.fold_a.windows(2).all(|w| w[0] < w[1]));
                assert!(s.fold_b.windows(2).all(|w| w[0] < w[1]));
                assert_eq!(s.fold_a.len() - s.fold_b.len(), n % 2);
            }
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let x = array![[0.1, -1.0 / 3.0], [1e-300, 2.5], [f64::MAX, -0.0], [7.0, 1e10]];
        let d = Dataset::new(x, array![std::f64::consts::PI, -2.0, 0.0, 1e-17], vec![0, 1, 1, 0]).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_dataset(&d, f.path()).unwrap();
        let back = load_dataset(f.path(), true).unwrap();
        assert_eq!(back, d);
    }
}
