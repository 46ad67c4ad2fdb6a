//! Data-parallel decision tree construction over logical workers.
//!
//! Training rows are split into `p` contiguous shards, one per logical
//! worker. Expanding a node runs in four phases: every worker repartitions
//! its shard's rows by the split just applied, then builds partial gradient
//! histograms for both new children; the partials are merged with an
//! ordered AllReduce; the merged histogram is scanned once per feature to
//! find each child's best split. Candidate nodes wait in an expand queue
//! that is FIFO for depthwise growth and a max-heap on gain for lossguide
//! growth.
//!
//! All cross-worker reductions use compensated accumulation (see
//! [`crate::accum`]) and are folded in ascending worker order, so a trained
//! tree does not depend on the worker count.

use std::collections::{BinaryHeap, VecDeque};
use std::ops::Range;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::accum::Acc;
use crate::error::{Error, Result};
use crate::model::Tree;
use crate::objective::GradientPair;
use crate::packed::QuantizedMatrix;
use crate::quantize::CutMatrix;

/// Tree-growth hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    /// Maximum leaf depth; 0 forces a single-leaf tree.
    pub max_depth: usize,
    /// Leaf budget for lossguide growth; 0 means unbounded. Ignored by
    /// depthwise growth.
    pub max_leaves: usize,
    /// Learning rate (eta) applied to every leaf weight.
    pub learning_rate: f64,
    /// L2 regularizer (lambda) on leaf weights.
    pub reg_lambda: f64,
    /// Minimum gain (gamma) a split must clear.
    pub gamma: f64,
    /// Minimum hessian sum of each child.
    pub min_child_weight: f64,
    pub grow_policy: GrowPolicy,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            max_depth: 6,
            max_leaves: 0,
            learning_rate: 0.3,
            reg_lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            grow_policy: GrowPolicy::Depthwise,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidInput(format!(
                "learning_rate must be finite and positive, got {}",
                self.learning_rate
            )));
        }
        for (name, v) in [
            ("reg_lambda", self.reg_lambda),
            ("gamma", self.gamma),
            ("min_child_weight", self.min_child_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidInput(format!(
                    "{name} must be finite and >= 0, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Node expansion order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GrowPolicy {
    /// FIFO by depth: nodes closer to the root expand first.
    #[default]
    Depthwise,
    /// Highest split gain expands first.
    Lossguide,
}

impl GrowPolicy {
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "depthwise" => Ok(GrowPolicy::Depthwise),
            "lossguide" => Ok(GrowPolicy::Lossguide),
            other => Err(Error::InvalidInput(format!(
                "unknown grow policy '{other}' (expected depthwise or lossguide)"
            ))),
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            GrowPolicy::Depthwise => "depthwise",
            GrowPolicy::Lossguide => "lossguide",
        }
    }
}

/// Logical workers: contiguous row shards plus each local row's current
/// tree node.
#[derive(Debug, Clone)]
pub struct WorkerSet {
    shards: Vec<Range<usize>>,
    positions: Vec<Vec<u32>>,
}

impl WorkerSet {
    /// Partition `[0, n_rows)` into `p` near-equal contiguous shards.
    pub fn new(n_rows: usize, p: usize) -> Result<Self> {
        if n_rows == 0 {
            return Err(Error::InvalidInput("zero rows".to_string()));
        }
        if p == 0 {
            return Err(Error::InvalidInput("worker count must be >= 1".to_string()));
        }
        let shards: Vec<Range<usize>> = (0..p)
            .map(|w| (w * n_rows / p)..((w + 1) * n_rows / p))
            .collect();
        let positions = shards.iter().map(|s| vec![0u32; s.len()]).collect();
        Ok(WorkerSet { shards, positions })
    }

    pub fn p(&self) -> usize {
        self.shards.len()
    }

    pub fn n_rows(&self) -> usize {
        self.shards.last().map_or(0, |s| s.end)
    }

    pub fn shard(&self, w: usize) -> Range<usize> {
        self.shards[w].clone()
    }

    pub fn positions(&self, w: usize) -> &[u32] {
        &self.positions[w]
    }

    /// Tree node currently holding a global row.
    pub fn position_of(&self, row: usize) -> u32 {
        let w = self
            .shards
            .partition_point(|s| s.end <= row)
            .min(self.shards.len() - 1);
        self.positions[w][row - self.shards[w].start]
    }

    /// Send every row back to the root.
    pub fn reset(&mut self) {
        for pos in &mut self.positions {
            pos.fill(0);
        }
    }

    /// Visit `(global_row, node)` for every row.
    pub fn for_each_position(&self, mut f: impl FnMut(usize, u32)) {
        for (shard, positions) in self.shards.iter().zip(&self.positions) {
            for (i, &node) in positions.iter().enumerate() {
                f(shard.start + i, node);
            }
        }
    }
}

/// Per-bin gradient sums over one node's instances, addressed by global bin
/// index. Bins carry compensation terms internally; [`pair`](Self::pair)
/// collapses one bin to plain doubles.
#[derive(Debug, Clone)]
pub struct Histogram {
    bins: Vec<BinAcc>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BinAcc {
    g: Acc,
    h: Acc,
}

impl Histogram {
    pub fn zeros(n_bins: usize) -> Self {
        Histogram {
            bins: vec![BinAcc::default(); n_bins],
        }
    }

    pub fn n_bins(&self) -> usize {
        self.bins.len()
    }

    #[inline]
    fn add(&mut self, bin: usize, g: f64, h: f64) {
        let acc = &mut self.bins[bin];
        acc.g.add(g);
        acc.h.add(h);
    }

    fn merge(&mut self, other: &Histogram) {
        debug_assert_eq!(self.bins.len(), other.bins.len());
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            a.g.merge(b.g);
            a.h.merge(b.h);
        }
    }

    /// Collapsed `(G, H)` of one bin.
    #[inline]
    pub fn pair(&self, bin: usize) -> GradientPair {
        GradientPair::new(self.bins[bin].g.value(), self.bins[bin].h.value())
    }

    pub fn pairs(&self) -> Vec<GradientPair> {
        (0..self.bins.len()).map(|b| self.pair(b)).collect()
    }
}

/// Chosen split of one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitInfo {
    pub feature: u32,
    /// Local bin index: rows with `symbol <= bin` go left.
    pub bin: u32,
    /// Numeric threshold (the bin's cut value) stored in the tree.
    pub threshold: f64,
    pub gain: f64,
    /// Direction taken by rows whose split feature is missing.
    pub default_left: bool,
    /// Gradient sums of the left child, missing mass included when
    /// `default_left`.
    pub left: GradientPair,
    pub right: GradientPair,
}

/// A queued candidate node with its evaluated best split (`None` when the
/// node cannot improve and stays a leaf).
#[derive(Debug, Clone)]
pub struct ExpandEntry {
    pub node_id: u32,
    pub depth: u32,
    pub totals: GradientPair,
    pub split: Option<SplitInfo>,
}

/// Newton-step leaf weight `-G / (H + lambda)`, scaled by the learning rate.
pub fn leaf_weight(totals: GradientPair, params: &TrainParams) -> f64 {
    let denom = totals.hess + params.reg_lambda;
    if denom <= 0.0 {
        0.0
    } else {
        -totals.grad / denom * params.learning_rate
    }
}

/// Output of [`grow_tree`]: the tree plus per-stage wall time spent in
/// histogram work (repartition, partial builds, AllReduce) and split
/// evaluation. `node_totals[i]` holds the gradient sums node `i` was
/// created with.
#[derive(Debug, Clone)]
pub struct TreeGrowth {
    pub tree: Tree,
    pub node_totals: Vec<GradientPair>,
    pub hist_time: Duration,
    pub eval_time: Duration,
}

/// Move each local row sitting at `node_id` to a child: left when its
/// quantized symbol for the split feature is `<= split.bin`, the default
/// direction when the symbol is the missing sentinel, right otherwise.
pub fn repartition_shard(
    split: &SplitInfo,
    node_id: u32,
    left_id: u32,
    right_id: u32,
    quantized: &QuantizedMatrix,
    shard: Range<usize>,
    positions: &mut [u32],
) {
    debug_assert_eq!(shard.len(), positions.len());
    let sentinel = quantized.sentinel();
    let feature = split.feature as usize;
    for (i, row) in shard.enumerate() {
        if positions[i] != node_id {
            continue;
        }
        let sym = quantized.symbol(row, feature);
        positions[i] = if sym == sentinel {
            if split.default_left {
                left_id
            } else {
                right_id
            }
        } else if sym <= split.bin {
            left_id
        } else {
            right_id
        };
    }
}

/// One worker's partial histogram for a single node: every non-missing
/// `(row, feature)` of the node deposits `(g, h)` at
/// `offset(feature) + symbol`, in shard row order. Missing symbols are not
/// accumulated; their mass is recovered later as node totals minus the
/// feature's histogram sum.
pub fn build_partial_histogram(
    node_id: u32,
    shard: Range<usize>,
    positions: &[u32],
    quantized: &QuantizedMatrix,
    gradients: &[GradientPair],
) -> Histogram {
    let cuts = quantized.cuts();
    let mut hist = Histogram::zeros(cuts.total_bins());
    deposit_rows(
        &mut hist,
        shard,
        positions,
        |pos| pos == node_id,
        quantized,
        gradients,
    );
    hist
}

/// Partial histograms for both children of a freshly applied split, in one
/// pass over the shard.
fn build_partial_pair(
    left_id: u32,
    right_id: u32,
    shard: Range<usize>,
    positions: &[u32],
    quantized: &QuantizedMatrix,
    gradients: &[GradientPair],
) -> (Histogram, Histogram) {
    let total_bins = quantized.cuts().total_bins();
    let mut left = Histogram::zeros(total_bins);
    let mut right = Histogram::zeros(total_bins);
    let sentinel = quantized.sentinel();
    let nf = quantized.n_features();
    let offsets = quantized.cuts().clone();
    for (i, row) in shard.enumerate() {
        let pos = positions[i];
        let hist = if pos == left_id {
            &mut left
        } else if pos == right_id {
            &mut right
        } else {
            continue;
        };
        let gp = gradients[row];
        for f in 0..nf {
            let sym = quantized.symbol(row, f);
            if sym != sentinel {
                hist.add(offsets.offset(f) + sym as usize, gp.grad, gp.hess);
            }
        }
    }
    (left, right)
}

fn deposit_rows(
    hist: &mut Histogram,
    shard: Range<usize>,
    positions: &[u32],
    in_node: impl Fn(u32) -> bool,
    quantized: &QuantizedMatrix,
    gradients: &[GradientPair],
) {
    let sentinel = quantized.sentinel();
    let nf = quantized.n_features();
    let cuts = quantized.cuts();
    for (i, row) in shard.enumerate() {
        if !in_node(positions[i]) {
            continue;
        }
        let gp = gradients[row];
        for f in 0..nf {
            let sym = quantized.symbol(row, f);
            if sym != sentinel {
                hist.add(cuts.offset(f) + sym as usize, gp.grad, gp.hess);
            }
        }
    }
}

/// Element-wise sum of per-worker partials, folded in ascending worker
/// index so the result is reproducible.
pub fn all_reduce_histograms(mut partials: Vec<Histogram>) -> Result<Histogram> {
    let Some(first) = partials.first() else {
        return Err(Error::Contract("all_reduce of zero histograms".to_string()));
    };
    let n_bins = first.n_bins();
    if partials.iter().any(|h| h.n_bins() != n_bins) {
        return Err(Error::Contract(format!(
            "histogram bin counts differ: {:?}",
            partials.iter().map(Histogram::n_bins).collect::<Vec<_>>()
        )));
    }
    let mut merged = partials.remove(0);
    for p in &partials {
        merged.merge(p);
    }
    Ok(merged)
}

/// Scan a node's merged histogram for the best split.
///
/// For each feature the bins are prefix-scanned once. Boundary `b` yields a
/// candidate with the missing mass (node totals minus the feature's
/// histogram sum) assigned to the right child, and, when missing mass is
/// present, a second candidate assigning it to the left child. Gain is
/// `[G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)]/2 - gamma`;
/// children must carry at least `min_child_weight` hessian. Ties keep the
/// earlier candidate in (feature, bin, missing-right-first) order. Returns
/// `None` when no candidate has positive gain, turning the node into a
/// leaf.
pub fn evaluate_split(
    hist: &Histogram,
    totals: GradientPair,
    cuts: &CutMatrix,
    params: &TrainParams,
) -> Option<SplitInfo> {
    let lambda = params.reg_lambda;
    if totals.hess + lambda <= 0.0 {
        return None;
    }
    let parent_score = totals.grad * totals.grad / (totals.hess + lambda);
    // Missing mass below this scale is subtraction residue, not evidence of
    // missing rows; such features get a single (right-default) candidate.
    let eps_g = 1e-10 * (1.0 + totals.grad.abs());
    let eps_h = 1e-10 * (1.0 + totals.hess.abs());

    let mut best: Option<SplitInfo> = None;
    for f in 0..cuts.n_features() {
        let n_bins = cuts.n_bins(f);
        if n_bins == 0 {
            continue;
        }
        let off = cuts.offset(f);
        let mut fsum_g = 0.0;
        let mut fsum_h = 0.0;
        for b in 0..n_bins {
            let p = hist.pair(off + b);
            fsum_g += p.grad;
            fsum_h += p.hess;
        }
        let missing_g = totals.grad - fsum_g;
        let missing_h = totals.hess - fsum_h;
        let material_missing = missing_h > eps_h || missing_g.abs() > eps_g;

        let mut consider = |bin: usize,
                            default_left: bool,
                            lg: f64,
                            lh: f64,
                            rg: f64,
                            rh: f64,
                            best: &mut Option<SplitInfo>| {
            if lh < params.min_child_weight || rh < params.min_child_weight {
                return;
            }
            if lh + lambda <= 0.0 || rh + lambda <= 0.0 {
                return;
            }
            let gain = 0.5 * (lg * lg / (lh + lambda) + rg * rg / (rh + lambda) - parent_score)
                - params.gamma;
            if !gain.is_finite() {
                return;
            }
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                *best = Some(SplitInfo {
                    feature: f as u32,
                    bin: bin as u32,
                    threshold: cuts.threshold(f, bin),
                    gain,
                    default_left,
                    left: GradientPair::new(lg, lh),
                    right: GradientPair::new(rg, rh),
                });
            }
        };

        let mut prefix_g = 0.0;
        let mut prefix_h = 0.0;
        for b in 0..n_bins {
            let p = hist.pair(off + b);
            prefix_g += p.grad;
            prefix_h += p.hess;
            let last = b == n_bins - 1;
            // Missing right: the last boundary only separates missing rows,
            // so it is a candidate only when missing mass is real.
            if !last || material_missing {
                consider(
                    b,
                    false,
                    prefix_g,
                    prefix_h,
                    totals.grad - prefix_g,
                    totals.hess - prefix_h,
                    &mut best,
                );
            }
            // Missing left: right child is the non-missing suffix.
            if material_missing && !last {
                let rg = fsum_g - prefix_g;
                let rh = fsum_h - prefix_h;
                consider(b, true, totals.grad - rg, totals.hess - rh, rg, rh, &mut best);
            }
        }
    }
    best.filter(|s| s.gain > 0.0)
}

/// Compute root totals (per-worker partial sums merged in worker order),
/// build and AllReduce the root histogram, and evaluate the root split.
/// Every position must already point at the root.
pub fn init_root(
    workers: &mut WorkerSet,
    quantized: &QuantizedMatrix,
    gradients: &[GradientPair],
    params: &TrainParams,
) -> Result<ExpandEntry> {
    check_shapes(workers, quantized, gradients)?;
    let (entry, _, _) = expand_root(workers, quantized, gradients, params)?;
    Ok(entry)
}

fn check_shapes(
    workers: &WorkerSet,
    quantized: &QuantizedMatrix,
    gradients: &[GradientPair],
) -> Result<()> {
    if workers.n_rows() == 0 {
        return Err(Error::InvalidInput("zero rows".to_string()));
    }
    if workers.n_rows() != quantized.n_rows() || gradients.len() != quantized.n_rows() {
        return Err(Error::Contract(format!(
            "shape mismatch: {} worker rows, {} quantized rows, {} gradients",
            workers.n_rows(),
            quantized.n_rows(),
            gradients.len()
        )));
    }
    Ok(())
}

fn expand_root(
    workers: &WorkerSet,
    quantized: &QuantizedMatrix,
    gradients: &[GradientPair],
    params: &TrainParams,
) -> Result<(ExpandEntry, Duration, Duration)> {
    let hist_start = Instant::now();
    let worker_sums: Vec<(Acc, Acc)> = workers
        .shards
        .par_iter()
        .map(|shard| {
            let mut g = Acc::default();
            let mut h = Acc::default();
            for row in shard.clone() {
                g.add(gradients[row].grad);
                h.add(gradients[row].hess);
            }
            (g, h)
        })
        .collect();
    let mut g_total = Acc::default();
    let mut h_total = Acc::default();
    for (g, h) in worker_sums {
        g_total.merge(g);
        h_total.merge(h);
    }
    let totals = GradientPair::new(g_total.value(), h_total.value());

    let partials: Vec<Histogram> = workers
        .shards
        .par_iter()
        .zip(workers.positions.par_iter())
        .map(|(shard, positions)| {
            build_partial_histogram(0, shard.clone(), positions, quantized, gradients)
        })
        .collect();
    let hist = all_reduce_histograms(partials)?;
    let hist_time = hist_start.elapsed();

    let eval_start = Instant::now();
    let split = evaluate_split(&hist, totals, quantized.cuts(), params);
    let eval_time = eval_start.elapsed();

    Ok((
        ExpandEntry {
            node_id: 0,
            depth: 0,
            totals,
            split,
        },
        hist_time,
        eval_time,
    ))
}

enum ExpandQueue {
    Depthwise(VecDeque<ExpandEntry>),
    Lossguide(BinaryHeap<GainOrdered>),
}

impl ExpandQueue {
    fn new(policy: GrowPolicy) -> Self {
        match policy {
            GrowPolicy::Depthwise => ExpandQueue::Depthwise(VecDeque::new()),
            GrowPolicy::Lossguide => ExpandQueue::Lossguide(BinaryHeap::new()),
        }
    }

    fn push(&mut self, entry: ExpandEntry) {
        match self {
            ExpandQueue::Depthwise(q) => q.push_back(entry),
            ExpandQueue::Lossguide(q) => q.push(GainOrdered(entry)),
        }
    }

    fn pop(&mut self) -> Option<ExpandEntry> {
        match self {
            ExpandQueue::Depthwise(q) => q.pop_front(),
            ExpandQueue::Lossguide(q) => q.pop().map(|e| e.0),
        }
    }
}

/// Max-heap ordering: larger gain first, lower node id on ties.
struct GainOrdered(ExpandEntry);

impl GainOrdered {
    fn gain(&self) -> f64 {
        self.0.split.as_ref().map_or(f64::NEG_INFINITY, |s| s.gain)
    }
}

impl PartialEq for GainOrdered {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for GainOrdered {}
impl PartialOrd for GainOrdered {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for GainOrdered {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.gain()
            .total_cmp(&other.gain())
            .then_with(|| other.0.node_id.cmp(&self.0.node_id))
    }
}

/// Grow one tree (the main expansion loop).
///
/// Pops candidate nodes per the grow policy, applies each split, and on
/// every worker repartitions then builds both child histograms; the
/// AllReduced child histograms are evaluated and surviving children
/// (positive gain, depth within `max_depth`, lossguide leaf budget not
/// exhausted) join the queue. Leaf weights are Newton steps scaled by the
/// learning rate.
pub fn grow_tree(
    workers: &mut WorkerSet,
    quantized: &QuantizedMatrix,
    gradients: &[GradientPair],
    params: &TrainParams,
) -> Result<TreeGrowth> {
    params.validate()?;
    check_shapes(workers, quantized, gradients)?;
    workers.reset();

    let (root_entry, mut hist_time, mut eval_time) =
        expand_root(workers, quantized, gradients, params)?;

    let mut tree = Tree::with_root_leaf(leaf_weight(root_entry.totals, params));
    let mut node_totals = vec![root_entry.totals];
    let mut n_leaves = 1usize;
    let mut queue = ExpandQueue::new(params.grow_policy);
    if root_entry.split.is_some() && (root_entry.depth as usize) < params.max_depth {
        queue.push(root_entry);
    }

    while let Some(entry) = queue.pop() {
        if params.grow_policy == GrowPolicy::Lossguide
            && params.max_leaves > 0
            && n_leaves >= params.max_leaves
        {
            break;
        }
        let split = entry.split.expect("queued entries carry a split");

        let left_id = tree.push_leaf(leaf_weight(split.left, params));
        let right_id = tree.push_leaf(leaf_weight(split.right, params));
        tree.make_split(
            entry.node_id,
            split.feature,
            split.threshold,
            split.default_left,
            left_id,
            right_id,
        );
        node_totals.push(split.left);
        node_totals.push(split.right);
        n_leaves += 1;

        let hist_start = Instant::now();
        let pairs: Vec<(Histogram, Histogram)> = workers
            .shards
            .par_iter()
            .zip(workers.positions.par_iter_mut())
            .map(|(shard, positions)| {
                repartition_shard(
                    &split,
                    entry.node_id,
                    left_id,
                    right_id,
                    quantized,
                    shard.clone(),
                    positions,
                );
                build_partial_pair(
                    left_id,
                    right_id,
                    shard.clone(),
                    positions,
                    quantized,
                    gradients,
                )
            })
            .collect();
        let (lefts, rights): (Vec<Histogram>, Vec<Histogram>) = pairs.into_iter().unzip();
        let left_hist = all_reduce_histograms(lefts)?;
        let right_hist = all_reduce_histograms(rights)?;
        hist_time += hist_start.elapsed();

        let eval_start = Instant::now();
        let child_depth = entry.depth + 1;
        for (child_id, child_totals, child_hist) in [
            (left_id, split.left, &left_hist),
            (right_id, split.right, &right_hist),
        ] {
            let child_split = evaluate_split(child_hist, child_totals, quantized.cuts(), params);
            if child_split.is_some() && (child_depth as usize) < params.max_depth {
                queue.push(ExpandEntry {
                    node_id: child_id,
                    depth: child_depth,
                    totals: child_totals,
                    split: child_split,
                });
            }
        }
        eval_time += eval_start.elapsed();
    }

    Ok(TreeGrowth {
        tree,
        node_totals,
        hist_time,
        eval_time,
    })
}
