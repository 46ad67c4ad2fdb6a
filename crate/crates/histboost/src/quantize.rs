//! Feature quantile binning: cut-point construction and value-to-bin
//! mapping.
//!
//! Cuts are exact quantiles of the sorted present values of each feature.
//! A value belongs to the first bin whose cut is `>=` the value, so a cut
//! is the inclusive upper boundary of its bin and the last cut of every
//! feature equals the feature maximum. Split thresholds copied from cuts
//! therefore agree exactly with training-time bin predicates.

use std::sync::Arc;

use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::packed::{symbol_bits, PackedArray, QuantizedMatrix};

/// Per-feature cut points in CSR layout plus the cumulative bin offsets used
/// to address one flat histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct CutMatrix {
    /// All cut values concatenated; strictly increasing within a feature.
    cut_values: Vec<f64>,
    /// `cut_ptrs[f]..cut_ptrs[f+1]` is feature `f`'s range in `cut_values`.
    /// Doubles as the global-bin offset table.
    cut_ptrs: Vec<usize>,
    /// Configured cap on bins per feature; also the missing sentinel symbol.
    max_bins: usize,
}

impl CutMatrix {
    pub fn from_feature_cuts(features: Vec<Vec<f64>>, max_bins: usize) -> Result<Self> {
        if max_bins < 2 {
            return Err(Error::InvalidInput(format!(
                "max_bins must be >= 2, got {max_bins}"
            )));
        }
        let mut cut_values = Vec::new();
        let mut cut_ptrs = Vec::with_capacity(features.len() + 1);
        cut_ptrs.push(0);
        for (f, cuts) in features.into_iter().enumerate() {
            if cuts.len() > max_bins {
                return Err(Error::Contract(format!(
                    "feature {f} has {} cuts, more than max_bins {max_bins}",
                    cuts.len()
                )));
            }
            for w in cuts.windows(2) {
                if !(w[0] < w[1]) {
                    return Err(Error::Contract(format!(
                        "feature {f} cuts are not strictly increasing"
                    )));
                }
            }
            cut_values.extend_from_slice(&cuts);
            cut_ptrs.push(cut_values.len());
        }
        Ok(CutMatrix {
            cut_values,
            cut_ptrs,
            max_bins,
        })
    }

    pub fn n_features(&self) -> usize {
        self.cut_ptrs.len() - 1
    }

    pub fn max_bins(&self) -> usize {
        self.max_bins
    }

    /// Cut values of one feature (empty when the feature had no present
    /// values and can never be split).
    pub fn feature_cuts(&self, f: usize) -> &[f64] {
        &self.cut_values[self.cut_ptrs[f]..self.cut_ptrs[f + 1]]
    }

    /// Number of bins of feature `f`.
    pub fn n_bins(&self, f: usize) -> usize {
        self.cut_ptrs[f + 1] - self.cut_ptrs[f]
    }

    /// Start of feature `f`'s range in the flat global-bin space:
    /// `global_bin(f, local) = offset(f) + local`.
    pub fn offset(&self, f: usize) -> usize {
        self.cut_ptrs[f]
    }

    /// Total global bins across all features.
    pub fn total_bins(&self) -> usize {
        *self.cut_ptrs.last().unwrap()
    }

    /// Numeric threshold for "local bin <= `bin`" on feature `f`.
    pub fn threshold(&self, f: usize, bin: usize) -> f64 {
        self.feature_cuts(f)[bin]
    }

    pub(crate) fn feature_vectors(&self) -> Vec<Vec<f64>> {
        (0..self.n_features())
            .map(|f| self.feature_cuts(f).to_vec())
            .collect()
    }
}

/// Local bin of `value` for a non-empty cut list: the smallest `i` with
/// `value <= cuts[i]`, clamped to the last bin for values above every cut
/// (quantizing unseen data at prediction time). Binary search.
#[inline]
pub fn bin_of(value: f64, cuts: &[f64]) -> usize {
    debug_assert!(!cuts.is_empty());
    let i = cuts.partition_point(|&c| c < value);
    i.min(cuts.len() - 1)
}

/// Compute per-feature quantile cuts.
///
/// Each feature's present values are sorted; when the distinct count is at
/// most `max_bins` every distinct value becomes a cut (lossless binning).
/// Otherwise cut `j` (0-based, `k = max_bins` targets) takes the sorted
/// value at position `floor((j+1)*n/k) - 1`, and duplicates collapse. The
/// last cut always equals the feature maximum.
pub fn build_cuts(data: &DataMatrix, max_bins: usize) -> Result<CutMatrix> {
    if max_bins < 2 {
        return Err(Error::InvalidInput(format!(
            "max_bins must be >= 2, got {max_bins}"
        )));
    }
    let nf = data.n_features();
    let mut per_feature: Vec<Vec<f32>> = vec![Vec::new(); nf];
    for r in 0..data.n_rows() {
        for &(f, v) in data.row(r) {
            per_feature[f as usize].push(v);
        }
    }
    let features: Vec<Vec<f64>> = per_feature
        .into_par_iter()
        .map(|mut vals| {
            vals.sort_unstable_by(f32::total_cmp);
            cuts_from_sorted(&vals, max_bins)
        })
        .collect();
    CutMatrix::from_feature_cuts(features, max_bins)
}

fn cuts_from_sorted(vals: &[f32], max_bins: usize) -> Vec<f64> {
    let n = vals.len();
    if n == 0 {
        return Vec::new();
    }
    let mut distinct: Vec<f64> = Vec::new();
    for &v in vals {
        let v = v as f64;
        if distinct.last() != Some(&v) {
            distinct.push(v);
        }
    }
    if distinct.len() <= max_bins {
        return distinct;
    }
    let k = max_bins;
    let mut cuts: Vec<f64> = Vec::with_capacity(k);
    for j in 0..k {
        let pos = (j + 1) * n / k - 1;
        let c = vals[pos] as f64;
        if cuts.last() != Some(&c) {
            cuts.push(c);
        }
    }
    cuts
}

/// Quantize a dataset against cuts built for the same feature count.
/// Output is dense row-major; missing entries carry the sentinel symbol
/// `max_bins`.
pub fn quantize(data: &DataMatrix, cuts: Arc<CutMatrix>) -> Result<QuantizedMatrix> {
    if data.n_features() != cuts.n_features() {
        return Err(Error::Contract(format!(
            "data has {} features but cuts describe {}",
            data.n_features(),
            cuts.n_features()
        )));
    }
    let (n, nf) = (data.n_rows(), data.n_features());
    let sentinel = cuts.max_bins() as u32;
    let bits = symbol_bits(sentinel);
    let mut packed = PackedArray::zeros(n * nf, bits)?;
    let mut row_syms: Vec<u32> = vec![sentinel; nf];
    for r in 0..n {
        row_syms.fill(sentinel);
        for &(f, v) in data.row(r) {
            let fc = cuts.feature_cuts(f as usize);
            if !fc.is_empty() {
                row_syms[f as usize] = bin_of(v as f64, fc) as u32;
            }
        }
        let base = r * nf;
        for (f, &s) in row_syms.iter().enumerate() {
            packed.set(base + f, s)?;
        }
    }
    Ok(QuantizedMatrix::new(packed, n, nf, sentinel, cuts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, DataMatrix, SyntheticKind};
    use proptest::prelude::*;

    fn single_feature_matrix(values: &[f32]) -> DataMatrix {
        let rows = values.iter().map(|&v| vec![(0u32, v)]).collect();
        DataMatrix::from_rows(1, rows, vec![0.0; values.len()]).unwrap()
    }

    #[test]
    fn distinct_below_cap_is_lossless() {
        let m = single_feature_matrix(&[1.0, 2.0, 3.0, 4.0]);
        let cuts = build_cuts(&m, 4).unwrap();
        assert_eq!(cuts.feature_cuts(0), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn single_distinct_value_single_cut() {
        let m = single_feature_matrix(&[5.0, 5.0, 5.0]);
        let cuts = build_cuts(&m, 8).unwrap();
        assert_eq!(cuts.feature_cuts(0), &[5.0]);
    }

    #[test]
    fn rank_rule_splits_uniform_values_evenly() {
        let vals: Vec<f32> = (1..=8).map(|v| v as f32).collect();
        let m = single_feature_matrix(&vals);
        let cuts = build_cuts(&m, 2).unwrap();

        // Independent rank computation on the sorted list.
        let n = vals.len();
        let k = 2;
        let expected: Vec<f64> = (0..k).map(|j| vals[(j + 1) * n / k - 1] as f64).collect();
        assert_eq!(cuts.feature_cuts(0), expected.as_slice());

        let mut populations = vec![0usize; cuts.n_bins(0)];
        for &v in &vals {
            populations[bin_of(v as f64, cuts.feature_cuts(0))] += 1;
        }
        assert_eq!(populations, vec![4, 4]);
    }

    #[test]
    fn feature_with_no_present_values_gets_empty_cuts() {
        let rows = vec![vec![(1u32, 3.0f32)], vec![(1u32, 4.0f32)]];
        let m = DataMatrix::from_rows(2, rows, vec![0.0, 1.0]).unwrap();
        let cuts = build_cuts(&m, 4).unwrap();
        assert!(cuts.feature_cuts(0).is_empty());
        assert_eq!(cuts.n_bins(0), 0);
        assert_eq!(cuts.feature_cuts(1), &[3.0, 4.0]);
    }

    #[test]
    fn bin_of_rules() {
        let cuts = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(bin_of(2.0, &cuts), 1); // exact hit: value <= cuts[i]
        assert_eq!(bin_of(2.5, &cuts), 2); // interval
        assert_eq!(bin_of(99.0, &cuts), 3); // clamp above all cuts
        assert_eq!(bin_of(0.5, &cuts), 0); // below first cut
    }

    #[test]
    fn quantize_single_value() {
        let m = single_feature_matrix(&[2.0]);
        let cuts = Arc::new(build_cuts(&m, 3).unwrap());
        let q = quantize(&m, cuts).unwrap();
        assert_eq!(q.symbol(0, 0), 1);
    }

    #[test]
    fn quantize_missing_gets_sentinel() {
        let rows = vec![vec![(0u32, 1.0f32)], vec![]];
        let m = DataMatrix::from_rows(1, rows, vec![0.0, 1.0]).unwrap();
        let cuts = Arc::new(build_cuts(&m, 255).unwrap());
        let q = quantize(&m, cuts).unwrap();
        assert_eq!(q.symbol(0, 0), 0);
        assert_eq!(q.symbol(1, 0), q.sentinel());
        assert_eq!(q.sentinel(), 255);
        assert_eq!(q.bits_per_symbol(), 8);
    }

    #[test]
    fn quantize_brackets_every_value() {
        let m = make_synthetic(SyntheticKind::Regression, 100, 5, 3);
        let cuts = Arc::new(build_cuts(&m, 16).unwrap());
        let q = quantize(&m, Arc::clone(&cuts)).unwrap();
        for r in 0..m.n_rows() {
            for f in 0..m.n_features() {
                let v = m.value(r, f).unwrap();
                let sym = q.symbol(r, f) as usize;
                let fc = cuts.feature_cuts(f);
                assert_eq!(sym, bin_of(v, fc));
                assert!(v <= fc[sym], "value above its bin cut");
                if sym > 0 {
                    assert!(fc[sym - 1] < v, "value not above previous cut");
                }
            }
        }
    }

    #[test]
    fn lossless_at_high_max_bins_is_injective() {
        let m = make_synthetic(SyntheticKind::Regression, 64, 3, 9);
        let cuts = build_cuts(&m, 64).unwrap();
        for f in 0..m.n_features() {
            let fc = cuts.feature_cuts(f);
            let mut seen = std::collections::BTreeMap::new();
            for r in 0..m.n_rows() {
                let v = m.value(r, f).unwrap();
                let b = bin_of(v, fc);
                if let Some(&prev) = seen.get(&v.to_bits()) {
                    assert_eq!(prev, b);
                } else {
                    for (&other, &ob) in &seen {
                        if other != v.to_bits() {
                            assert_ne!(ob, b, "two distinct values share bin {b}");
                        }
                    }
                    seen.insert(v.to_bits(), b);
                }
            }
        }
    }

    #[test]
    fn last_cut_covers_feature_maximum() {
        let m = make_synthetic(SyntheticKind::Regression, 500, 4, 21);
        let cuts = build_cuts(&m, 7).unwrap();
        for f in 0..m.n_features() {
            let max = (0..m.n_rows())
                .filter_map(|r| m.value(r, f))
                .fold(f64::NEG_INFINITY, f64::max);
            let fc = cuts.feature_cuts(f);
            assert!(*fc.last().unwrap() >= max);
            assert!(fc.len() <= 7);
            assert!(fc.windows(2).all(|w| w[0] < w[1]));
        }
    }

    proptest! {
        #[test]
        fn prop_bin_of_monotone(
            mut raw in proptest::collection::vec(-1000i32..1000, 1..40),
            v1 in -1100.0f64..1100.0,
            v2 in -1100.0f64..1100.0,
        ) {
            raw.sort_unstable();
            raw.dedup();
            let cuts: Vec<f64> = raw.iter().map(|&x| x as f64).collect();
            let (lo, hi) = if v1 <= v2 { (v1, v2) } else { (v2, v1) };
            prop_assert!(bin_of(lo, &cuts) <= bin_of(hi, &cuts));
        }
    }
}
