//! Dataset loading: CSV, libsvm, and seeded synthetic generators.
//!
//! A [`DataMatrix`] stores one sparse row per training instance as
//! `(feature_index, value)` pairs sorted by feature index. An absent pair
//! means the value is *missing*, never zero; empty CSV cells and NaN tokens
//! load as missing entries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Labeled dataset held in memory. Feature values are stored single
/// precision; labels and all downstream accumulation are double precision.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n_features: usize,
    /// Per-row `(feature, value)` pairs, sorted by feature, at most one pair
    /// per feature, values finite.
    rows: Vec<Vec<(u32, f32)>>,
    labels: Vec<f64>,
}

impl DataMatrix {
    /// Build a matrix from per-row sparse pairs. Pairs are sorted and
    /// validated against the stated invariants.
    pub fn from_rows(
        n_features: usize,
        mut rows: Vec<Vec<(u32, f32)>>,
        labels: Vec<f64>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "row count {} does not match label count {}",
                rows.len(),
                labels.len()
            )));
        }
        for (r, row) in rows.iter_mut().enumerate() {
            row.sort_unstable_by_key(|&(f, _)| f);
            for w in row.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::InvalidInput(format!(
                        "row {r} has duplicate feature index {}",
                        w[0].0
                    )));
                }
            }
            if let Some(&(f, _)) = row.last() {
                if f as usize >= n_features {
                    return Err(Error::InvalidInput(format!(
                        "row {r} has feature index {f} >= n_features {n_features}"
                    )));
                }
            }
            if row.iter().any(|&(_, v)| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("row {r} has non-finite value")));
            }
        }
        Ok(DataMatrix {
            n_features,
            rows,
            labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Sparse pairs of one row, sorted by feature index.
    pub fn row(&self, r: usize) -> &[(u32, f32)] {
        &self.rows[r]
    }

    /// Value of `feature` in row `r`, or `None` when missing.
    pub fn value(&self, r: usize, feature: usize) -> Option<f64> {
        let row = &self.rows[r];
        row.binary_search_by_key(&(feature as u32), |&(f, _)| f)
            .ok()
            .map(|i| row[i].1 as f64)
    }

    /// Total number of present `(row, feature)` pairs.
    pub fn n_present(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Number of absent `(row, feature)` slots.
    pub fn n_missing(&self) -> usize {
        self.n_rows() * self.n_features - self.n_present()
    }
}

/// Index base used by libsvm files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IndexBase {
    /// Indices start at 1 (the dominant convention in published datasets).
    #[default]
    One,
    /// Indices start at 0.
    Zero,
}

fn is_missing_token(tok: &str) -> bool {
    tok.is_empty() || tok.eq_ignore_ascii_case("nan") || tok.eq_ignore_ascii_case("na")
}

/// Load a comma-separated file. `label_column` selects the label; empty
/// cells and NaN tokens become missing entries; `header` skips the first
/// line.
pub fn load_csv(path: impl AsRef<Path>, label_column: usize, header: bool) -> Result<DataMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut n_cols = None;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if header && i == 0 {
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        let cols = *n_cols.get_or_insert(cells.len());
        if cells.len() != cols {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected {cols} columns, found {}", cells.len()),
            ));
        }
        if label_column >= cols {
            return Err(Error::parse(
                path,
                lineno,
                format!("label column {label_column} out of range for {cols} columns"),
            ));
        }
        let label_tok = cells[label_column].trim();
        let label: f64 = label_tok.parse().map_err(|_| {
            Error::parse(path, lineno, format!("bad label token '{label_tok}'"))
        })?;
        let mut pairs = Vec::new();
        let mut fidx = 0u32;
        for (c, cell) in cells.iter().enumerate() {
            if c == label_column {
                continue;
            }
            let tok = cell.trim();
            if !is_missing_token(tok) {
                let v: f32 = tok.parse().map_err(|_| {
                    Error::parse(path, lineno, format!("bad value token '{tok}' in column {c}"))
                })?;
                if v.is_nan() {
                    // "nan" spelled some other way the parser accepted.
                    fidx += 1;
                    continue;
                }
                if !v.is_finite() {
                    return Err(Error::parse(
                        path,
                        lineno,
                        format!("non-finite value '{tok}' in column {c}"),
                    ));
                }
                pairs.push((fidx, v));
            }
            fidx += 1;
        }
        rows.push(pairs);
        labels.push(label);
    }

    let n_cols = n_cols.ok_or_else(|| Error::parse(path, 1, "no rows".to_string()))?;
    if rows.is_empty() {
        return Err(Error::parse(path, 1, "no rows".to_string()));
    }
    DataMatrix::from_rows(n_cols - 1, rows, labels)
}

/// Load a libsvm file: `label idx:val idx:val ...` per line, whitespace
/// separated. `n_features` becomes the largest adjusted index plus one.
pub fn load_libsvm(path: impl AsRef<Path>, base: IndexBase) -> Result<DataMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut max_feature: Option<u32> = None;

    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let mut toks = line.split_whitespace();
        let Some(label_tok) = toks.next() else {
            continue; // blank line
        };
        let label: f64 = label_tok.parse().map_err(|_| {
            Error::parse(path, lineno, format!("bad label token '{label_tok}'"))
        })?;
        let mut pairs = Vec::new();
        for (col, tok) in toks.enumerate() {
            let (idx_tok, val_tok) = tok.split_once(':').ok_or_else(|| {
                Error::parse(
                    path,
                    lineno,
                    format!("token {} '{tok}' is not idx:val", col + 1),
                )
            })?;
            let raw_idx: u64 = idx_tok.parse().map_err(|_| {
                Error::parse(
                    path,
                    lineno,
                    format!("token {} has bad index '{idx_tok}'", col + 1),
                )
            })?;
            let idx = match base {
                IndexBase::One => {
                    if raw_idx == 0 {
                        return Err(Error::parse(
                            path,
                            lineno,
                            format!("token {} index 0 in a 1-based file", col + 1),
                        ));
                    }
                    (raw_idx - 1) as u32
                }
                IndexBase::Zero => raw_idx as u32,
            };
            let val: f32 = val_tok.parse().map_err(|_| {
                Error::parse(
                    path,
                    lineno,
                    format!("token {} has bad value '{val_tok}'", col + 1),
                )
            })?;
            if val.is_nan() {
                continue; // NaN value means missing
            }
            max_feature = Some(max_feature.map_or(idx, |m| m.max(idx)));
            pairs.push((idx, val));
        }
        rows.push(pairs);
        labels.push(label);
    }

    if rows.is_empty() {
        return Err(Error::parse(path, 1, "no rows".to_string()));
    }
    let n_features = max_feature.map_or(0, |m| m as usize + 1);
    DataMatrix::from_rows(n_features, rows, labels)
}

/// Write a matrix in libsvm format. Reloading with the same `base`
/// reproduces identical (row, feature, value) triples and labels.
pub fn write_libsvm(data: &DataMatrix, path: impl AsRef<Path>, base: IndexBase) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in 0..data.n_rows() {
        write!(out, "{}", data.labels()[r]).unwrap();
        for &(f, v) in data.row(r) {
            let idx = match base {
                IndexBase::One => f as u64 + 1,
                IndexBase::Zero => f as u64,
            };
            write!(out, " {idx}:{v}").unwrap();
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Task family of a synthetic dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Regression,
    Classification,
}

/// Coefficients of the linear signal used by [`make_synthetic`]. Applied to
/// the first `min(5, n_features)` features.
pub const SYNTHETIC_WEIGHTS: [f64; 5] = [2.0, -1.5, 1.25, 0.8, -0.6];

/// Generate a deterministic synthetic dataset.
///
/// Every feature is drawn uniformly from `[-1, 1)`. Let `s` be the dot
/// product of [`SYNTHETIC_WEIGHTS`] with the first `min(5, n_features)`
/// stored feature values. Regression labels are `s + u` with noise `u`
/// uniform in `[-0.1, 0.1)`; classification labels are `1` when `s + u > 0`
/// (noise uniform in `[-0.05, 0.05)`) and `0` otherwise. The generator
/// consumes the ChaCha8 stream row by row (features first, then the noise
/// draw), so output is bitwise reproducible for a fixed seed.
pub fn make_synthetic(
    kind: SyntheticKind,
    n_rows: usize,
    n_features: usize,
    seed: u64,
) -> DataMatrix {
    assert!(n_rows >= 1 && n_features >= 1, "synthetic shape must be >= 1x1");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n_features.min(SYNTHETIC_WEIGHTS.len());
    let mut rows = Vec::with_capacity(n_rows);
    let mut labels = Vec::with_capacity(n_rows);
    let mut row = Vec::with_capacity(n_features);
    for _ in 0..n_rows {
        row.clear();
        let mut signal = 0.0f64;
        for f in 0..n_features {
            let v: f32 = rng.gen_range(-1.0f32..1.0);
            if f < k {
                signal += SYNTHETIC_WEIGHTS[f] * v as f64;
            }
            row.push((f as u32, v));
        }
        let label = match kind {
            SyntheticKind::Regression => signal + rng.gen_range(-0.1f64..0.1),
            SyntheticKind::Classification => {
                let noisy = signal + rng.gen_range(-0.05f64..0.05);
                if noisy > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        };
        rows.push(row.clone());
        labels.push(label);
    }
    DataMatrix::from_rows(n_features, rows, labels).expect("generator upholds invariants")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn tmp_file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_basic_with_missing_cell() {
        let f = tmp_file("1,2,0\n4,,1\n");
        let m = load_csv(f.path(), 2, false).unwrap();
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.n_features(), 2);
        assert_eq!(m.labels(), &[0.0, 1.0]);
        assert_eq!(m.row(0), &[(0, 1.0), (1, 2.0)]);
        assert_eq!(m.row(1), &[(0, 4.0)]); // feature 1 missing
        assert_eq!(m.n_missing(), 1);
    }

    #[test]
    fn csv_empty_file_is_error() {
        let f = tmp_file("");
        let err = load_csv(f.path(), 0, false).unwrap_err();
        assert!(err.to_string().contains("no rows"), "{err}");
    }

    #[test]
    fn csv_header_skipped() {
        let f = tmp_file("a,b,y\n1,2,3\n4,5,6\n");
        let m = load_csv(f.path(), 2, true).unwrap();
        assert_eq!(m.n_rows(), 2); // 3 lines, 1 header
        assert_eq!(m.labels(), &[3.0, 6.0]);
    }

    #[test]
    fn csv_ragged_row_reports_line() {
        let f = tmp_file("1,2,3\n1,2\n");
        let err = load_csv(f.path(), 0, false).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn csv_nan_token_is_missing() {
        let f = tmp_file("nan,0\nNaN,1\n2.5,0\n");
        let m = load_csv(f.path(), 1, false).unwrap();
        assert_eq!(m.n_missing(), 2);
        assert_eq!(m.value(2, 0), Some(2.5));
    }

    #[test]
    fn libsvm_one_based() {
        let f = tmp_file("1 1:0.5 3:2.0\n");
        let m = load_libsvm(f.path(), IndexBase::One).unwrap();
        assert_eq!(m.labels(), &[1.0]);
        assert_eq!(m.row(0), &[(0, 0.5), (2, 2.0)]);
        assert_eq!(m.n_features(), 3);
    }

    #[test]
    fn libsvm_label_only_row() {
        let f = tmp_file("0\n");
        let m = load_libsvm(f.path(), IndexBase::One).unwrap();
        assert_eq!(m.labels(), &[0.0]);
        assert!(m.row(0).is_empty());
        assert_eq!(m.n_features(), 0);
    }

    #[test]
    fn libsvm_bad_value_reports_line() {
        let f = tmp_file("1 2:x\n");
        let err = load_libsvm(f.path(), IndexBase::One).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn libsvm_zero_based() {
        let f = tmp_file("1 0:0.5 2:2.0\n");
        let m = load_libsvm(f.path(), IndexBase::Zero).unwrap();
        assert_eq!(m.row(0), &[(0, 0.5), (2, 2.0)]);
        assert_eq!(m.n_features(), 3);
    }

    #[test]
    fn libsvm_round_trip_preserves_triples_and_missing() {
        let m = make_synthetic(SyntheticKind::Regression, 60, 7, 11);
        // Punch some holes so missingness is exercised.
        let mut rows: Vec<Vec<(u32, f32)>> = (0..m.n_rows()).map(|r| m.row(r).to_vec()).collect();
        for (i, row) in rows.iter_mut().enumerate() {
            row.retain(|&(f, _)| (i + f as usize) % 5 != 0);
        }
        let holed =
            DataMatrix::from_rows(m.n_features(), rows, m.labels().to_vec()).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_libsvm(&holed, f.path(), IndexBase::One).unwrap();
        let back = load_libsvm(f.path(), IndexBase::One).unwrap();
        assert_eq!(back.n_missing(), holed.n_missing());
        assert_eq!(back.labels(), holed.labels());
        for r in 0..holed.n_rows() {
            assert_eq!(back.row(r), holed.row(r), "row {r}");
        }
    }

    #[test]
    fn synthetic_deterministic_for_seed() {
        let a = make_synthetic(SyntheticKind::Regression, 100, 10, 7);
        let b = make_synthetic(SyntheticKind::Regression, 100, 10, 7);
        assert_eq!(a, b);
        let c = make_synthetic(SyntheticKind::Regression, 100, 10, 8);
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_classification_labels_binary() {
        let m = make_synthetic(SyntheticKind::Classification, 1000, 5, 1);
        assert!(m.labels().iter().all(|&y| y == 0.0 || y == 1.0));
        // Both classes should appear on a symmetric generator.
        assert!(m.labels().iter().any(|&y| y == 0.0));
        assert!(m.labels().iter().any(|&y| y == 1.0));
    }

    #[test]
    fn synthetic_minimal_shape() {
        let m = make_synthetic(SyntheticKind::Regression, 1, 1, 0);
        assert_eq!(m.n_rows(), 1);
        assert_eq!(m.n_features(), 1);
        assert!(m.labels()[0].is_finite());
    }

    #[test]
    fn duplicate_feature_pair_rejected() {
        let err = DataMatrix::from_rows(3, vec![vec![(1, 1.0), (1, 2.0)]], vec![0.0]).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }
}
