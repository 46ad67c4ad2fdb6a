//! Trees, the trained model, and prediction.
//!
//! Prediction traverses raw feature values against the numeric thresholds
//! stored at split time (each threshold is the cut value of the chosen
//! bin), so data never has to be re-quantized. Because a value `v` maps to
//! bin `b` exactly when `cuts[b-1] < v <= cuts[b]`, the predicate
//! `v <= threshold` agrees with the training-time bin comparison on every
//! training row. Rows with a missing split feature follow the learned
//! default direction. Each row accumulates its margin in tree order in
//! double precision, so output is bitwise identical for any parallelism
//! degree.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::grower::{GrowPolicy, TrainParams};
use crate::objective::Objective;
use crate::quantize::CutMatrix;

/// One tree node. Node 0 is the root; children always have larger indices
/// than their parent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Split {
        feature: u32,
        threshold: f64,
        default_left: bool,
        left: u32,
        right: u32,
    },
    Leaf {
        weight: f64,
    },
}

/// A single regression tree with numeric split thresholds and leaf weights
/// already scaled by the learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

/// Read access to one instance's feature values; `None` means missing.
pub trait RowAccess {
    fn feature_value(&self, feature: usize) -> Option<f64>;
}

/// [`RowAccess`] view over one row of a [`DataMatrix`].
pub struct RowView<'a> {
    data: &'a DataMatrix,
    row: usize,
}

impl<'a> RowView<'a> {
    pub fn new(data: &'a DataMatrix, row: usize) -> Self {
        RowView { data, row }
    }
}

impl RowAccess for RowView<'_> {
    #[inline]
    fn feature_value(&self, feature: usize) -> Option<f64> {
        if feature >= self.data.n_features() {
            return None;
        }
        self.data.value(self.row, feature)
    }
}

impl Tree {
    pub(crate) fn with_root_leaf(weight: f64) -> Self {
        Tree {
            nodes: vec![Node::Leaf { weight }],
        }
    }

    pub(crate) fn push_leaf(&mut self, weight: f64) -> u32 {
        self.nodes.push(Node::Leaf { weight });
        (self.nodes.len() - 1) as u32
    }

    pub(crate) fn make_split(
        &mut self,
        node: u32,
        feature: u32,
        threshold: f64,
        default_left: bool,
        left: u32,
        right: u32,
    ) {
        debug_assert!(matches!(self.nodes[node as usize], Node::Leaf { .. }));
        self.nodes[node as usize] = Node::Split {
            feature,
            threshold,
            default_left,
            left,
            right,
        };
    }

    /// Weight of a leaf node. Panics on a split node.
    pub fn leaf_weight(&self, node: u32) -> f64 {
        match self.nodes[node as usize] {
            Node::Leaf { weight } => weight,
            Node::Split { .. } => panic!("node {node} is not a leaf"),
        }
    }

    /// Leaf reached by traversing `row` from the root.
    pub fn leaf_for(&self, row: &impl RowAccess) -> u32 {
        let mut id = 0u32;
        loop {
            match &self.nodes[id as usize] {
                Node::Leaf { .. } => return id,
                Node::Split {
                    feature,
                    threshold,
                    default_left,
                    left,
                    right,
                } => {
                    id = match row.feature_value(*feature as usize) {
                        Some(v) => {
                            if v <= *threshold {
                                *left
                            } else {
                                *right
                            }
                        }
                        None => {
                            if *default_left {
                                *left
                            } else {
                                *right
                            }
                        }
                    };
                }
            }
        }
    }

    pub fn weight_for(&self, row: &impl RowAccess) -> f64 {
        self.leaf_weight(self.leaf_for(row))
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Depth of the deepest leaf; a lone root leaf has depth 0.
    pub fn depth(&self) -> usize {
        fn rec(nodes: &[Node], id: u32) -> usize {
            match &nodes[id as usize] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + rec(nodes, *left).max(rec(nodes, *right)),
            }
        }
        rec(&self.nodes, 0)
    }

    fn validate(&self, n_features: usize) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::Schema("tree has no nodes".to_string()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match node {
                Node::Leaf { weight } => {
                    if !weight.is_finite() {
                        return Err(Error::Schema(format!("leaf {i} has non-finite weight")));
                    }
                }
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if !threshold.is_finite() {
                        return Err(Error::Schema(format!("split {i} has non-finite threshold")));
                    }
                    if *feature as usize >= n_features {
                        return Err(Error::Schema(format!(
                            "split {i} references feature {feature} of {n_features}"
                        )));
                    }
                    for child in [left, right] {
                        if *child as usize >= self.nodes.len() || *child as usize <= i {
                            return Err(Error::Schema(format!(
                                "split {i} has out-of-order child {child}"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Hyperparameters recorded alongside a model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub train: TrainParams,
    pub max_bins: usize,
    pub n_rounds: usize,
}

/// A trained ensemble: ordered trees, base margin, objective tag, and the
/// cut matrix retained for re-quantization and diagnostics.
#[derive(Debug, Clone)]
pub struct Model {
    pub trees: Vec<Tree>,
    pub base_margin: f64,
    pub objective: Objective,
    pub cuts: Arc<CutMatrix>,
    pub params: ModelParams,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl Model {
    pub fn n_features(&self) -> usize {
        self.cuts.n_features()
    }

    /// Margin for one row: base margin plus each tree's leaf weight, summed
    /// in tree order.
    pub fn predict_row(&self, row: &impl RowAccess) -> f64 {
        self.predict_row_limited(row, self.trees.len())
    }

    fn predict_row_limited(&self, row: &impl RowAccess, n_trees: usize) -> f64 {
        let mut margin = self.base_margin;
        for tree in &self.trees[..n_trees] {
            margin += tree.weight_for(row);
        }
        margin
    }

    /// Margins for every row, parallel over rows. `n_trees_limit` truncates
    /// the ensemble (staged evaluation); `None` uses every tree.
    pub fn predict(&self, data: &DataMatrix, n_trees_limit: Option<usize>) -> Vec<f64> {
        predict_with(&self.trees, self.base_margin, data, n_trees_limit)
    }

    pub fn to_json(&self) -> String {
        let schema = ModelSchema {
            format_version: MODEL_FORMAT_VERSION,
            objective: self.objective.tag().to_string(),
            base_margin: self.base_margin,
            params: ParamsSchema {
                eta: self.params.train.learning_rate,
                lambda: self.params.train.reg_lambda,
                gamma: self.params.train.gamma,
                min_child_weight: self.params.train.min_child_weight,
                max_depth: self.params.train.max_depth,
                max_leaves: self.params.train.max_leaves,
                grow_policy: self.params.train.grow_policy.tag().to_string(),
                max_bins: self.params.max_bins,
                n_rounds: self.params.n_rounds,
            },
            cuts: CutsSchema {
                max_bins: self.cuts.max_bins(),
                features: self.cuts.feature_vectors(),
            },
            trees: self.trees.clone(),
        };
        serde_json::to_string(&schema).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let schema: ModelSchema = serde_json::from_str(text)
            .map_err(|e| Error::Schema(format!("malformed model JSON: {e}")))?;
        if schema.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model format_version {} (expected {MODEL_FORMAT_VERSION})",
                schema.format_version
            )));
        }
        if !schema.base_margin.is_finite() {
            return Err(Error::Schema("base_margin is not finite".to_string()));
        }
        let objective = Objective::from_tag(&schema.objective)
            .map_err(|e| Error::Schema(format!("bad objective tag: {e}")))?;
        let grow_policy = GrowPolicy::from_tag(&schema.params.grow_policy)
            .map_err(|e| Error::Schema(format!("bad grow_policy tag: {e}")))?;
        let cuts = CutMatrix::from_feature_cuts(schema.cuts.features, schema.cuts.max_bins)
            .map_err(|e| Error::Schema(format!("bad cuts: {e}")))?;
        let n_features = cuts.n_features();
        for tree in &schema.trees {
            tree.validate(n_features)?;
        }
        Ok(Model {
            trees: schema.trees,
            base_margin: schema.base_margin,
            objective,
            cuts: Arc::new(cuts),
            params: ModelParams {
                train: TrainParams {
                    max_depth: schema.params.max_depth,
                    max_leaves: schema.params.max_leaves,
                    learning_rate: schema.params.eta,
                    reg_lambda: schema.params.lambda,
                    gamma: schema.params.gamma,
                    min_child_weight: schema.params.min_child_weight,
                    grow_policy,
                },
                max_bins: schema.params.max_bins,
                n_rounds: schema.params.n_rounds,
            },
        })
    }
}

/// Row-parallel margin computation over a tree list; each row sums its leaf
/// weights in tree order in double precision.
pub(crate) fn predict_with(
    trees: &[Tree],
    base_margin: f64,
    data: &DataMatrix,
    n_trees_limit: Option<usize>,
) -> Vec<f64> {
    let n_trees = n_trees_limit.unwrap_or(trees.len()).min(trees.len());
    (0..data.n_rows())
        .into_par_iter()
        .map(|r| {
            let row = RowView::new(data, r);
            let mut margin = base_margin;
            for tree in &trees[..n_trees] {
                margin += tree.weight_for(&row);
            }
            margin
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelSchema {
    format_version: u32,
    objective: String,
    base_margin: f64,
    params: ParamsSchema,
    cuts: CutsSchema,
    trees: Vec<Tree>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamsSchema {
    eta: f64,
    lambda: f64,
    gamma: f64,
    min_child_weight: f64,
    max_depth: usize,
    max_leaves: usize,
    grow_policy: String,
    max_bins: usize,
    n_rounds: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CutsSchema {
    max_bins: usize,
    features: Vec<Vec<f64>>,
}
