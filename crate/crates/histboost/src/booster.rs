//! Gradient boosting driver: the round loop plus model persistence.
//!
//! Each round computes gradients from the cached training margins, grows
//! one tree over the shared quantized matrix, folds the new tree's leaf
//! outputs into the cached margins, and (every `eval_period` rounds)
//! reports metrics. Training margins are updated incrementally from the
//! final training partition, which is bitwise identical to re-running
//! prediction over the whole ensemble; validation metrics deliberately take
//! the full prediction path instead so traversal stays exercised.

use std::fs;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::grower::{grow_tree, TrainParams, WorkerSet};
use crate::model::{predict_with, Model, ModelParams, Tree};
use crate::objective::{Metric, Objective};
use crate::quantize::{build_cuts, quantize};

/// Everything [`train`] needs besides the data.
#[derive(Debug, Clone)]
pub struct BoosterConfig {
    pub params: TrainParams,
    pub n_rounds: usize,
    pub objective: Objective,
    pub metric: Metric,
    pub max_bins: usize,
    /// Logical worker count (p). Trained models do not depend on it.
    pub workers: usize,
    /// Recorded for provenance; training itself is deterministic and draws
    /// no random numbers.
    pub seed: u64,
    /// Rounds between metric reports.
    pub eval_period: usize,
    /// Keep a copy of the training margins after every round (test and
    /// diagnostic aid; memory is rounds x rows).
    pub record_round_margins: bool,
}

impl Default for BoosterConfig {
    fn default() -> Self {
        BoosterConfig {
            params: TrainParams::default(),
            n_rounds: 100,
            objective: Objective::SquaredError,
            metric: Metric::Rmse,
            max_bins: 255,
            workers: 1,
            seed: 0,
            eval_period: 10,
            record_round_margins: false,
        }
    }
}

/// Wall time spent per pipeline stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimes {
    pub quantize: Duration,
    pub histogram: Duration,
    pub evaluate: Duration,
    pub predict: Duration,
    pub gradient: Duration,
}

/// One metric report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRecord {
    pub round: usize,
    pub train_metric: f64,
    pub valid_metric: Option<f64>,
}

/// Metrics and timings collected by [`train`].
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<EvalRecord>,
    pub stages: StageTimes,
    pub total: Duration,
    /// Cached training margins after the final round.
    pub final_train_margins: Vec<f64>,
    /// Per-round margin snapshots when
    /// [`record_round_margins`](BoosterConfig::record_round_margins) is set.
    pub round_margins: Option<Vec<Vec<f64>>>,
}

/// Train a model: build cuts, quantize and pack the training data, shard
/// rows across workers, then run the boosting rounds. Deterministic for a
/// fixed config and dataset.
pub fn train(
    config: &BoosterConfig,
    dtrain: &DataMatrix,
    dvalid: Option<&DataMatrix>,
) -> Result<(Model, TrainReport)> {
    let total_start = Instant::now();
    if config.n_rounds == 0 {
        return Err(Error::InvalidInput("n_rounds must be >= 1".to_string()));
    }
    if config.workers == 0 {
        return Err(Error::InvalidInput("workers must be >= 1".to_string()));
    }
    config.params.validate()?;
    if dtrain.n_rows() == 0 {
        return Err(Error::InvalidInput("empty dataset".to_string()));
    }
    config.objective.validate_labels(dtrain.labels())?;
    if let Some(v) = dvalid {
        config.objective.validate_labels(v.labels())?;
    }

    let mut stages = StageTimes::default();

    let quantize_start = Instant::now();
    let cuts = Arc::new(build_cuts(dtrain, config.max_bins)?);
    let quantized = quantize(dtrain, Arc::clone(&cuts))?;
    stages.quantize = quantize_start.elapsed();

    let mut workers = WorkerSet::new(dtrain.n_rows(), config.workers)?;
    let base_margin = config.objective.base_margin(dtrain.labels());
    let mut margins = vec![base_margin; dtrain.n_rows()];
    let mut trees: Vec<Tree> = Vec::with_capacity(config.n_rounds);
    let mut records = Vec::new();
    let mut round_margins = config.record_round_margins.then(Vec::new);

    for round in 1..=config.n_rounds {
        let gradient_start = Instant::now();
        let gradients = config.objective.gradients(&margins, dtrain.labels());
        stages.gradient += gradient_start.elapsed();

        let growth = grow_tree(&mut workers, &quantized, &gradients, &config.params)?;
        stages.histogram += growth.hist_time;
        stages.evaluate += growth.eval_time;

        let predict_start = Instant::now();
        update_margins(&mut margins, &growth.tree, &workers);
        stages.predict += predict_start.elapsed();

        trees.push(growth.tree);
        if let Some(rm) = round_margins.as_mut() {
            rm.push(margins.clone());
        }

        if round % config.eval_period == 0 || round == config.n_rounds {
            let train_metric = config.metric.eval(&margins, dtrain.labels())?;
            let valid_metric = match dvalid {
                Some(v) => {
                    let predict_start = Instant::now();
                    let vm = predict_with(&trees, base_margin, v, None);
                    stages.predict += predict_start.elapsed();
                    Some(config.metric.eval(&vm, v.labels())?)
                }
                None => None,
            };
            records.push(EvalRecord {
                round,
                train_metric,
                valid_metric,
            });
        }
    }

    let model = Model {
        trees,
        base_margin,
        objective: config.objective,
        cuts,
        params: ModelParams {
            train: config.params.clone(),
            max_bins: config.max_bins,
            n_rounds: config.n_rounds,
        },
    };
    let report = TrainReport {
        records,
        stages,
        total: total_start.elapsed(),
        final_train_margins: margins,
        round_margins,
    };
    Ok((model, report))
}

/// Fold one tree's leaf outputs into the cached margins using the final
/// training partition: `margins[row] += leaf_weight(position(row))`.
/// Bitwise identical to re-predicting the ensemble, because prediction
/// sums leaf weights in the same tree order.
pub fn update_margins(margins: &mut [f64], tree: &Tree, positions: &WorkerSet) {
    positions.for_each_position(|row, node| {
        margins[row] += tree.leaf_weight(node);
    });
}

/// Serialize a model to versioned JSON at `path`.
pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_json()).map_err(|e| Error::io(path, e))
}

/// Load a model saved by [`save_model`]. The loaded model predicts bitwise
/// identically to the original.
pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Model::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_synthetic, SyntheticKind};
    use crate::grower::leaf_weight;
    use crate::objective::GradientPair;

    fn regression_config(rounds: usize) -> BoosterConfig {
        BoosterConfig {
            n_rounds: rounds,
            ..BoosterConfig::default()
        }
    }

    #[test]
    fn single_leaf_round_gives_uniform_margin_shift() {
        let data = make_synthetic(SyntheticKind::Regression, 64, 3, 5);
        let config = BoosterConfig {
            params: TrainParams {
                max_depth: 0,
                ..TrainParams::default()
            },
            n_rounds: 1,
            ..BoosterConfig::default()
        };
        let (model, report) = train(&config, &data, None).unwrap();
        assert_eq!(model.trees.len(), 1);
        assert_eq!(model.trees[0].nodes.len(), 1);

        let base = model.base_margin;
        let mut g = 0.0;
        let mut h = 0.0;
        for &y in data.labels() {
            g += base - y;
            h += 1.0;
        }
        let expected_w =
            leaf_weight(GradientPair::new(g, h), &config.params);
        let w = model.trees[0].leaf_weight(0);
        assert!((w - expected_w).abs() <= 1e-12);
        assert!(report
            .final_train_margins
            .iter()
            .all(|&m| m == base + w));
    }

    #[test]
    fn update_margins_trivials() {
        let data = make_synthetic(SyntheticKind::Regression, 8, 2, 1);
        let mut workers = WorkerSet::new(8, 2).unwrap();
        workers.reset();
        let mut margins = vec![0.25; 8];
        let zero_tree = Tree::with_root_leaf(0.0);
        update_margins(&mut margins, &zero_tree, &workers);
        assert!(margins.iter().all(|&m| m == 0.25));

        let mut one = vec![0.0];
        let w_tree = Tree::with_root_leaf(0.7);
        let single = WorkerSet::new(1, 1).unwrap();
        update_margins(&mut one, &w_tree, &single);
        assert_eq!(one, vec![0.7]);
        let _ = data;
    }

    #[test]
    fn incremental_margins_equal_full_prediction_every_round() {
        let data = make_synthetic(SyntheticKind::Regression, 300, 5, 9);
        let config = BoosterConfig {
            n_rounds: 10,
            record_round_margins: true,
            workers: 3,
            ..BoosterConfig::default()
        };
        let (model, report) = train(&config, &data, None).unwrap();
        let snapshots = report.round_margins.unwrap();
        for (k, snapshot) in snapshots.iter().enumerate() {
            let full = model.predict(&data, Some(k + 1));
            assert_eq!(&full, snapshot, "round {}", k + 1);
        }
        assert_eq!(
            model.predict(&data, None),
            report.final_train_margins
        );
    }

    #[test]
    fn save_load_predicts_bitwise_identically() {
        let data = make_synthetic(SyntheticKind::Classification, 200, 4, 3);
        let config = BoosterConfig {
            objective: Objective::Logistic,
            metric: Metric::LogLoss,
            n_rounds: 8,
            ..BoosterConfig::default()
        };
        let (model, _) = train(&config, &data, None).unwrap();
        let file = tempfile::NamedTempFile::new().unwrap();
        save_model(&model, file.path()).unwrap();
        let loaded = load_model(file.path()).unwrap();
        assert_eq!(model.predict(&data, None), loaded.predict(&data, None));
        assert_eq!(model.to_json(), loaded.to_json());
    }

    #[test]
    fn load_missing_file_is_io_error() {
        let err = load_model("/nonexistent/model.json").unwrap_err();
        assert!(matches!(err, Error::Io { .. }), "{err}");
    }

    #[test]
    fn repeated_training_is_byte_identical() {
        let data = make_synthetic(SyntheticKind::Regression, 150, 4, 12);
        let config = regression_config(6);
        let (a, _) = train(&config, &data, None).unwrap();
        let (b, _) = train(&config, &data, None).unwrap();
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn worker_count_does_not_change_model() {
        let data = make_synthetic(SyntheticKind::Regression, 400, 5, 21);
        let mut reference = None;
        for p in [1usize, 4] {
            let config = BoosterConfig {
                workers: p,
                n_rounds: 6,
                ..BoosterConfig::default()
            };
            let (model, _) = train(&config, &data, None).unwrap();
            let json = model.to_json();
            match &reference {
                None => reference = Some(json),
                Some(r) => assert_eq!(&json, r, "p={p}"),
            }
        }
    }

    #[test]
    fn training_metric_descends_on_regression() {
        let data = make_synthetic(SyntheticKind::Regression, 2000, 10, 7);
        let config = BoosterConfig {
            eval_period: 1,
            ..regression_config(40)
        };
        let (_, report) = train(&config, &data, None).unwrap();
        let first = report.records.first().unwrap().train_metric;
        let last = report.records.last().unwrap().train_metric;
        assert!(last < first, "rmse {last} !< {first}");
        for w in report.records.windows(2) {
            assert!(
                w[1].train_metric <= w[0].train_metric + 1e-12,
                "round {}: {} > {}",
                w[1].round,
                w[1].train_metric,
                w[0].train_metric
            );
        }
    }

    #[test]
    fn validation_metrics_reported() {
        let train_data = make_synthetic(SyntheticKind::Regression, 500, 5, 2);
        let valid_data = make_synthetic(SyntheticKind::Regression, 100, 5, 9);
        let config = BoosterConfig {
            eval_period: 5,
            ..regression_config(10)
        };
        let (_, report) = train(&config, &train_data, Some(&valid_data)).unwrap();
        assert_eq!(report.records.len(), 2);
        assert!(report.records.iter().all(|r| r.valid_metric.is_some()));
    }

    #[test]
    fn label_domain_violation_rejected_at_start() {
        let data = make_synthetic(SyntheticKind::Regression, 50, 3, 1); // real labels
        let config = BoosterConfig {
            objective: Objective::Logistic,
            metric: Metric::Accuracy,
            ..BoosterConfig::default()
        };
        let err = train(&config, &data, None).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)), "{err}");
    }
}
