//! Objectives (gradient/hessian computation) and evaluation metrics.
//!
//! Both supported objectives are second-order: each boosting round consumes
//! one `(g, h)` pair per training instance, computed from the cached margin.
//! Logistic loss uses `g = sigmoid(margin) - label` and
//! `h = sigmoid(margin) * (1 - sigmoid(margin))`; squared error is
//! `loss = (margin - label)^2 / 2` so that `g = margin - label` and `h = 1`
//! exactly, making leaf weights plain Newton steps.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// First- and second-order gradient of the loss for one instance.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GradientPair {
    pub grad: f64,
    pub hess: f64,
}

impl GradientPair {
    pub fn new(grad: f64, hess: f64) -> Self {
        GradientPair { grad, hess }
    }
}

/// Numerically stable logistic function. Sign-split so neither branch
/// exponentiates a positive argument; no overflow for any finite input.
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Training objective, selected by its string tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// `reg:squarederror`
    SquaredError,
    /// `binary:logistic`
    Logistic,
}

impl Objective {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "reg:squarederror" => Ok(Objective::SquaredError),
            "binary:logistic" => Ok(Objective::Logistic),
            other => Err(Error::InvalidInput(format!(
                "unknown objective '{other}' (expected reg:squarederror or binary:logistic)"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Objective::SquaredError => "reg:squarederror",
            Objective::Logistic => "binary:logistic",
        }
    }

    /// Label-domain check run once at training start.
    pub fn validate_labels(&self, labels: &[f64]) -> Result<()> {
        match self {
            Objective::SquaredError => {
                if let Some(i) = labels.iter().position(|y| !y.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "label at row {i} is not finite"
                    )));
                }
            }
            Objective::Logistic => {
                if let Some(i) = labels.iter().position(|&y| y != 0.0 && y != 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "binary:logistic requires labels in {{0,1}}, found {} at row {i}",
                        labels[i]
                    )));
                }
            }
        }
        Ok(())
    }

    /// Neutral starting margin: 0 for logistic (probability one half), the
    /// label mean for squared error.
    pub fn base_margin(&self, labels: &[f64]) -> f64 {
        match self {
            Objective::SquaredError => {
                let sum: f64 = labels.iter().sum();
                sum / labels.len() as f64
            }
            Objective::Logistic => 0.0,
        }
    }

    /// Per-instance gradients; element-wise over rows, parallel.
    pub fn gradients(&self, margins: &[f64], labels: &[f64]) -> Vec<GradientPair> {
        debug_assert_eq!(margins.len(), labels.len());
        match self {
            Objective::SquaredError => margins
                .par_iter()
                .zip(labels.par_iter())
                .map(|(&m, &y)| GradientPair::new(m - y, 1.0))
                .collect(),
            Objective::Logistic => margins
                .par_iter()
                .zip(labels.par_iter())
                .map(|(&m, &y)| {
                    let p = sigmoid(m);
                    GradientPair::new(p - y, p * (1.0 - p))
                })
                .collect(),
        }
    }

    /// Metric reported by default for this objective.
    pub fn default_metric(&self) -> Metric {
        match self {
            Objective::SquaredError => Metric::Rmse,
            Objective::Logistic => Metric::Accuracy,
        }
    }
}

/// Evaluation metric, selected by its string tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Rmse,
    /// Thresholds `sigmoid(margin)` at one half; ties predict class 1.
    Accuracy,
    LogLoss,
}

impl Metric {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "rmse" => Ok(Metric::Rmse),
            "accuracy" => Ok(Metric::Accuracy),
            "logloss" => Ok(Metric::LogLoss),
            other => Err(Error::InvalidInput(format!(
                "unknown metric '{other}' (expected rmse, accuracy, or logloss)"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            Metric::Rmse => "rmse",
            Metric::Accuracy => "accuracy",
            Metric::LogLoss => "logloss",
        }
    }

    /// Evaluate over all rows. Sequential fixed-order accumulation so the
    /// reported value does not depend on any parallelism degree.
    pub fn eval(&self, margins: &[f64], labels: &[f64]) -> Result<f64> {
        if margins.is_empty() || margins.len() != labels.len() {
            return Err(Error::InvalidInput(format!(
                "metric needs equal nonzero rows, got {} margins and {} labels",
                margins.len(),
                labels.len()
            )));
        }
        match self {
            Metric::Rmse => {
                let sq: f64 = margins
                    .iter()
                    .zip(labels)
                    .map(|(&m, &y)| (m - y) * (m - y))
                    .sum();
                Ok((sq / margins.len() as f64).sqrt())
            }
            Metric::Accuracy => {
                check_binary(labels)?;
                let correct = margins
                    .iter()
                    .zip(labels)
                    .filter(|&(&m, &y)| {
                        let predicted = if sigmoid(m) >= 0.5 { 1.0 } else { 0.0 };
                        predicted == y
                    })
                    .count();
                Ok(correct as f64 / margins.len() as f64)
            }
            Metric::LogLoss => {
                check_binary(labels)?;
                let nll: f64 = margins
                    .iter()
                    .zip(labels)
                    .map(|(&m, &y)| y * softplus(-m) + (1.0 - y) * softplus(m))
                    .sum();
                Ok(nll / margins.len() as f64)
            }
        }
    }
}

fn check_binary(labels: &[f64]) -> Result<()> {
    if let Some(i) = labels.iter().position(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::InvalidInput(format!(
            "classification metric requires labels in {{0,1}}, found {} at row {i}",
            labels[i]
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sigmoid_midpoint_and_saturation() {
        assert_eq!(sigmoid(0.0), 0.5);
        let hi = sigmoid(50.0);
        assert!(hi > 1.0 - 1e-20 && hi <= 1.0 && hi.is_finite());
        assert!(sigmoid(700.0).is_finite());
        assert!(sigmoid(-700.0).is_finite());
        assert!(sigmoid(-700.0) >= 0.0);
    }

    #[test]
    fn sigmoid_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let x: f64 = rng.gen_range(-30.0..30.0);
            assert!((sigmoid(-x) - (1.0 - sigmoid(x))).abs() <= 1e-15);
        }
    }

    #[test]
    fn logistic_gradients_at_zero_margin() {
        let obj = Objective::Logistic;
        let g = obj.gradients(&[0.0, 0.0], &[1.0, 0.0]);
        assert_eq!(g[0], GradientPair::new(-0.5, 0.25));
        assert_eq!(g[1], GradientPair::new(0.5, 0.25));
    }

    #[test]
    fn squared_error_gradients() {
        let obj = Objective::SquaredError;
        let g = obj.gradients(&[3.0, 5.0], &[5.0, 5.0]);
        assert_eq!(g[0], GradientPair::new(-2.0, 1.0));
        assert_eq!(g[1], GradientPair::new(0.0, 1.0));
    }

    /// Central finite differences of the written-out losses, evaluated
    /// independently of the gradient formulas.
    fn finite_diff_check(obj: Objective, loss: impl Fn(f64, f64) -> f64, n: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let eps = 1e-4;
        for _ in 0..n {
            let m: f64 = rng.gen_range(-5.0..5.0);
            let y: f64 = match obj {
                Objective::Logistic => {
                    if rng.gen_bool(0.5) {
                        1.0
                    } else {
                        0.0
                    }
                }
                Objective::SquaredError => rng.gen_range(-3.0..3.0),
            };
            let pair = obj.gradients(&[m], &[y])[0];
            let g_fd = (loss(m + eps, y) - loss(m - eps, y)) / (2.0 * eps);
            let h_fd = (loss(m + eps, y) - 2.0 * loss(m, y) + loss(m - eps, y)) / (eps * eps);
            assert!(
                (pair.grad - g_fd).abs() <= 1e-4,
                "grad {} vs fd {} at m={m} y={y}",
                pair.grad,
                g_fd
            );
            assert!(
                (pair.hess - h_fd).abs() <= 1e-3,
                "hess {} vs fd {} at m={m} y={y}",
                pair.hess,
                h_fd
            );
        }
    }

    #[test]
    fn logistic_matches_finite_differences() {
        finite_diff_check(
            Objective::Logistic,
            |m, y| -(y * sigmoid(m).ln() + (1.0 - y) * (1.0 - sigmoid(m)).ln()),
            1000,
        );
    }

    #[test]
    fn squared_error_matches_finite_differences() {
        finite_diff_check(Objective::SquaredError, |m, y| 0.5 * (m - y) * (m - y), 1000);
    }

    #[test]
    fn logistic_hessian_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let margins: Vec<f64> = (0..500).map(|_| rng.gen_range(-30.0..30.0)).collect();
        let labels = vec![0.0; margins.len()];
        let pairs = Objective::Logistic.gradients(&margins, &labels);
        for p in &pairs {
            assert!(p.hess > 0.0 && p.hess <= 0.25);
        }
        // Maximized at margin zero.
        let at_zero = Objective::Logistic.gradients(&[0.0], &[0.0])[0].hess;
        assert_eq!(at_zero, 0.25);
        assert!(pairs.iter().all(|p| p.hess <= at_zero));
    }

    #[test]
    fn rmse_exact_fit_is_zero() {
        let v = vec![1.0, -2.0, 3.5];
        assert_eq!(Metric::Rmse.eval(&v, &v).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_separable() {
        let acc = Metric::Accuracy
            .eval(&[10.0, -10.0], &[1.0, 0.0])
            .unwrap();
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn zero_margins_tie_break_and_logloss() {
        let margins = vec![0.0; 10];
        let labels: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        // Ties predict class 1, so accuracy is the class-1 fraction.
        let acc = Metric::Accuracy.eval(&margins, &labels).unwrap();
        assert_eq!(acc, 0.5);
        let ll = Metric::LogLoss.eval(&margins, &labels).unwrap();
        assert!((ll - std::f64::consts::LN_2).abs() <= 1e-12);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(Metric::Rmse.eval(&[], &[]).is_err());
    }

    #[test]
    fn metrics_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let margins: Vec<f64> = (0..200).map(|_| rng.gen_range(-4.0..4.0)).collect();
        let labels: Vec<f64> = (0..200).map(|_| f64::from(rng.gen_bool(0.5))).collect();
        let mut idx: Vec<usize> = (0..200).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.gen_range(0..=i));
        }
        let pm: Vec<f64> = idx.iter().map(|&i| margins[i]).collect();
        let pl: Vec<f64> = idx.iter().map(|&i| labels[i]).collect();
        for metric in [Metric::Rmse, Metric::Accuracy, Metric::LogLoss] {
            let a = metric.eval(&margins, &labels).unwrap();
            let b = metric.eval(&pm, &pl).unwrap();
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{metric:?}");
        }
    }

    #[test]
    fn label_domain_validation() {
        assert!(Objective::Logistic.validate_labels(&[0.0, 1.0]).is_ok());
        assert!(Objective::Logistic.validate_labels(&[0.0, 3.0]).is_err());
        assert!(Objective::SquaredError
            .validate_labels(&[0.5, -2.0])
            .is_ok());
        assert!(Objective::SquaredError
            .validate_labels(&[f64::NAN])
            .is_err());
    }

    #[test]
    fn tags_round_trip() {
        for obj in [Objective::SquaredError, Objective::Logistic] {
            assert_eq!(Objective::from_tag(obj.tag()).unwrap(), obj);
        }
        for m in [Metric::Rmse, Metric::Accuracy, Metric::LogLoss] {
            assert_eq!(Metric::from_tag(m.tag()).unwrap(), m);
        }
        assert!(Objective::from_tag("multi:softmax").is_err());
    }
}
