//! Compensated double-precision accumulation.
//!
//! Histogram bins and gradient totals are reduced across logical workers
//! whose shard boundaries change with the worker count. A plain f64 sum
//! re-associates when the grouping changes and drifts by an ulp, which
//! would make trained models depend on the worker count. Carrying a
//! Neumaier compensation term through both the per-worker sums and the
//! cross-worker merge keeps the error around 2^-100, far below the final
//! f64 rounding step, so the collapsed value is the same for any shard
//! grouping.

/// Running compensated sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct Acc {
    hi: f64,
    lo: f64,
}

impl Acc {
    /// Add one term (Neumaier two-sum).
    #[inline]
    pub fn add(&mut self, x: f64) {
        let s = self.hi + x;
        let e = if self.hi.abs() >= x.abs() {
            (self.hi - s) + x
        } else {
            (x - s) + self.hi
        };
        self.hi = s;
        self.lo += e;
    }

    /// Fold another accumulator in, keeping both compensation terms.
    #[inline]
    pub fn merge(&mut self, other: Acc) {
        let s = self.hi + other.hi;
        let e = if self.hi.abs() >= other.hi.abs() {
            (self.hi - s) + other.hi
        } else {
            (other.hi - s) + self.hi
        };
        self.hi = s;
        self.lo += e + other.lo;
    }

    /// Collapse to f64.
    #[inline]
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}
