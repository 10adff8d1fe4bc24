//! Regression trees, random forests and second-order gradient boosting.
//!
//! All learners share one exact greedy tree grower. Candidate thresholds
//! are midpoints between adjacent distinct feature values; a row goes left
//! when `value <= threshold`. Gains that agree to within a few hundred ulps
//! count as ties, and ties keep the smaller threshold and then the lower
//! feature index, so the chosen split does not depend on summation order.

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{EncodedMatrix, FeatureGroup};
use crate::scalar::{self, Scalar};
use crate::seeding;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("expected {expected} columns, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model records no split gain")]
    UntrainedModel,
    #[error("matrix has no rows")]
    Empty,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

pub type Result<T, E = ForestError> = std::result::Result<T, E>;

/// How a split is scored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitCriterion<T> {
    /// Variance reduction `n Var(P) - n_L Var(L) - n_R Var(R)`; both children
    /// need `min_leaf` rows and the gain must exceed `min_split_gain` by more
    /// than rounding noise.
    Variance { min_leaf: usize, min_split_gain: T },
    /// `1/2 [G_L^2/(H_L+lambda) + G_R^2/(H_R+lambda) - G^2/(H+lambda)] - gamma`;
    /// both children need hessian mass `min_child_weight` and the gain must be
    /// positive.
    SecondOrder { lambda: T, gamma: T, min_child_weight: T },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate<T> {
    pub threshold: T,
    pub gain: T,
    /// Rows with `value <= threshold`.
    pub n_left: usize,
}

fn tie_rtol<T: Scalar>() -> T {
    T::of(256.0) * T::epsilon()
}

/// `a` beats `b` by more than rounding noise relative to `scale`.
fn clearly_better<T: Scalar>(a: T, b: T, scale: T) -> bool {
    a - b > tie_rtol::<T>() * scale.max(a.abs()).max(b.abs())
}

#[derive(Debug, Clone, Copy)]
struct Scan<T> {
    pos: usize,
    threshold: T,
    gain: T,
    scale: T,
}

fn midpoint<T: Scalar>(lo: T, hi: T) -> T {
    let mid = (lo + hi) / T::of(2.0);
    if mid < hi {
        mid
    } else {
        lo
    }
}

/// Scans rows in ascending feature order. `pos` in the result is the number
/// of rows that go left.
fn scan_sorted<T: Scalar>(order: &[usize], values: &[T], g: &[T], h: Option<&[T]>, crit: &SplitCriterion<T>) -> Option<Scan<T>> {
    let n = order.len();
    if n < 2 {
        return None;
    }
    let hess = |i: usize| h.map_or(T::one(), |h| h[i]);
    let g_total: T = order.iter().map(|&i| g[i]).sum();
    let h_total: T = order.iter().map(|&i| hess(i)).sum();
    let mut best: Option<Scan<T>> = None;
    let mut g_left = T::zero();
    let mut h_left = T::zero();
    for k in 0..n - 1 {
        let i = order[k];
        g_left += g[i];
        h_left += hess(i);
        let (lo, hi) = (values[i], values[order[k + 1]]);
        if !(lo < hi) {
            continue;
        }
        let n_left = k + 1;
        let (gain, scale) = match *crit {
            SplitCriterion::Variance { min_leaf, min_split_gain } => {
                if n_left < min_leaf || n - n_left < min_leaf {
                    continue;
                }
                let nl = T::from_usize_lossy(n_left);
                let nr = T::from_usize_lossy(n - n_left);
                let np = T::from_usize_lossy(n);
                let g_right = g_total - g_left;
                let (a, b, c) = (g_left * g_left / nl, g_right * g_right / nr, g_total * g_total / np);
                let gain = a + b - c;
                // A zero reduction can come out as a few ulps above zero.
                if !clearly_better(gain, min_split_gain, a + b + c) {
                    continue;
                }
                (gain, a + b + c)
            }
            SplitCriterion::SecondOrder { lambda, gamma, min_child_weight } => {
                let h_right = h_total - h_left;
                if h_left < min_child_weight || h_right < min_child_weight {
                    continue;
                }
                let g_right = g_total - g_left;
                let a = g_left * g_left / (h_left + lambda);
                let b = g_right * g_right / (h_right + lambda);
                let c = g_total * g_total / (h_total + lambda);
                let gain = (a + b - c) / T::of(2.0) - gamma;
                let scale = (a + b + c) / T::of(2.0) + gamma;
                if !clearly_better(gain, T::zero(), scale) {
                    continue;
                }
                (gain, scale)
            }
        };
        let better = match &best {
            None => true,
            Some(b) => clearly_better(gain, b.gain, scale.max(b.scale)),
        };
        if better {
            best = Some(Scan {
                pos: n_left,
                threshold: midpoint(lo, hi),
                gain,
                scale,
            });
        }
    }
    best
}

fn sorted_order<T: Scalar>(values: &[T], rows: &[usize]) -> Vec<usize> {
    let mut order = rows.to_vec();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).expect("finite").then(a.cmp(&b)));
    order
}

/// Best threshold on one feature. For [`SplitCriterion::Variance`] `targets`
/// are the responses; for [`SplitCriterion::SecondOrder`] they are gradients
/// and `hessians` defaults to all ones.
pub fn best_split<T: Scalar>(
    values: &[T],
    targets: &[T],
    hessians: Option<&[T]>,
    crit: &SplitCriterion<T>,
) -> Option<SplitCandidate<T>> {
    assert_eq!(values.len(), targets.len(), "values and targets differ in length");
    let rows: Vec<usize> = (0..values.len()).collect();
    let order = sorted_order(values, &rows);
    scan_sorted(&order, values, targets, hessians, crit).map(|s| SplitCandidate {
        threshold: s.threshold,
        gain: s.gain,
        n_left: s.pos,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", tag = "kind", rename_all = "snake_case")]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
        gain: T,
        n_samples: usize,
    },
    Leaf {
        value: T,
        n_samples: usize,
    },
}

/// Flattened binary tree; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Tree<T> {
    pub nodes: Vec<Node<T>>,
    pub n_features: usize,
}

impl<T: Scalar> Tree<T> {
    pub fn leaf(value: T, n_samples: usize, n_features: usize) -> Self {
        Tree {
            nodes: vec![Node::Leaf { value, n_samples }],
            n_features,
        }
    }

    pub fn predict_row(&self, row: &[T]) -> T {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value, .. } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go<T>(nodes: &[Node<T>], at: usize) -> usize {
            match &nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    /// Adds each split's gain to `acc[feature]`.
    pub fn accumulate_gain(&self, acc: &mut [T]) {
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                acc[*feature] += *gain;
            }
        }
    }
}

fn check_width<T: Scalar>(expected: usize, m: &EncodedMatrix<T>) -> Result<()> {
    if m.n_cols() != expected {
        return Err(ForestError::DimensionMismatch {
            expected,
            got: m.n_cols(),
        });
    }
    Ok(())
}

pub fn predict_tree<T: Scalar>(tree: &Tree<T>, m: &EncodedMatrix<T>) -> Result<Vec<T>> {
    check_width(tree.n_features, m)?;
    Ok(m.rows().map(|r| tree.predict_row(r)).collect())
}

#[derive(Debug, Clone, Copy)]
enum LeafRule<T> {
    Mean,
    Newton { lambda: T },
}

struct Grower<'a, T> {
    columns: &'a [Vec<T>],
    g: &'a [T],
    h: Option<&'a [T]>,
    crit: SplitCriterion<T>,
    leaf: LeafRule<T>,
    max_depth: usize,
    /// Features examined per node; `None` means all.
    mtry: Option<usize>,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Grower<'_, T> {
    fn leaf_value(&self, rows: &[usize]) -> T {
        let g: T = rows.iter().map(|&i| self.g[i]).sum();
        match self.leaf {
            LeafRule::Mean => g / T::from_usize_lossy(rows.len().max(1)),
            LeafRule::Newton { lambda } => {
                let h: T = rows.iter().map(|&i| self.h.map_or(T::one(), |h| h[i])).sum();
                let denom = h + lambda;
                if denom > T::zero() {
                    -g / denom
                } else {
                    T::zero()
                }
            }
        }
    }

    fn push_leaf(&mut self, rows: &[usize]) -> usize {
        let value = self.leaf_value(rows);
        self.nodes.push(Node::Leaf {
            value,
            n_samples: rows.len(),
        });
        self.nodes.len() - 1
    }

    /// `orders[j]` holds this node's rows sorted by feature `j`.
    fn grow(&mut self, orders: Vec<Vec<usize>>, depth: usize, rng: &mut Option<ChaCha8Rng>) -> usize {
        let rows = &orders[0];
        let n = rows.len();
        if depth >= self.max_depth || n < 2 {
            return self.push_leaf(rows);
        }
        let d = self.columns.len();
        let features: Vec<usize> = match (self.mtry, rng.as_mut()) {
            (Some(m), Some(rng)) if m < d => {
                let mut f = index::sample(rng, d, m).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        };
        let scan = |&j: &usize| scan_sorted(&orders[j], &self.columns[j], self.g, self.h, &self.crit).map(|s| (j, s));
        let results: Vec<(usize, Scan<T>)> = if n * features.len() >= 4096 {
            features.par_iter().filter_map(scan).collect()
        } else {
            features.iter().filter_map(scan).collect()
        };
        let mut best: Option<(usize, Scan<T>)> = None;
        for (j, s) in results {
            let better = match &best {
                None => true,
                Some((_, b)) => clearly_better(s.gain, b.gain, s.scale.max(b.scale)),
            };
            if better {
                best = Some((j, s));
            }
        }
        let Some((feature, split)) = best else {
            return self.push_leaf(rows);
        };
        let column = &self.columns[feature];
        let (mut left_orders, mut right_orders) = (Vec::with_capacity(d), Vec::with_capacity(d));
        for order in orders.iter() {
            let (l, r): (Vec<usize>, Vec<usize>) = order.iter().partition(|&&i| column[i] <= split.threshold);
            left_orders.push(l);
            right_orders.push(r);
        }
        debug_assert_eq!(left_orders[0].len(), split.pos);
        drop(orders);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            value: T::zero(),
            n_samples: n,
        });
        let left = self.grow(left_orders, depth + 1, rng);
        let right = self.grow(right_orders, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold: split.threshold,
            left,
            right,
            gain: split.gain,
            n_samples: n,
        };
        id
    }
}

fn columns_of<T: Scalar>(m: &EncodedMatrix<T>) -> Vec<Vec<T>> {
    (0..m.n_cols()).map(|j| m.column(j)).collect()
}

#[allow(clippy::too_many_arguments)]
fn grow_tree<T: Scalar>(
    columns: &[Vec<T>],
    rows: &[usize],
    g: &[T],
    h: Option<&[T]>,
    crit: SplitCriterion<T>,
    leaf: LeafRule<T>,
    max_depth: usize,
    mtry: Option<usize>,
    mut rng: Option<ChaCha8Rng>,
) -> Tree<T> {
    let d = columns.len();
    let orders: Vec<Vec<usize>> = if d == 0 {
        vec![rows.to_vec()]
    } else {
        columns.iter().map(|c| sorted_order(c, rows)).collect()
    };
    let mut grower = Grower {
        columns,
        g,
        h,
        crit,
        leaf,
        max_depth,
        mtry,
        nodes: Vec::new(),
    };
    grower.grow(orders, 0, &mut rng);
    Tree {
        nodes: grower.nodes,
        n_features: d,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub min_split_gain: f64,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: 6,
            min_leaf: 5,
            min_split_gain: 0.0,
        }
    }
}

impl CartParams {
    fn validate(&self) -> Result<()> {
        if self.min_leaf == 0 || !(self.min_split_gain >= 0.0) {
            return Err(ForestError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    fn criterion<T: Scalar>(&self) -> SplitCriterion<T> {
        SplitCriterion::Variance {
            min_leaf: self.min_leaf,
            min_split_gain: T::of(self.min_split_gain),
        }
    }
}

/// Greedy variance-reduction regression tree; leaves hold target means.
pub fn fit_cart<T: Scalar>(m: &EncodedMatrix<T>, p: &CartParams) -> Result<Tree<T>> {
    p.validate()?;
    if m.n_rows() == 0 {
        return Err(ForestError::Empty);
    }
    let rows: Vec<usize> = (0..m.n_rows()).collect();
    Ok(grow_tree(
        &columns_of(m),
        &rows,
        m.y(),
        None,
        p.criterion(),
        LeafRule::Mean,
        p.max_depth,
        None,
        None,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Fraction of features drawn at every node.
    pub feature_subsample: f64,
    pub bootstrap: bool,
    pub cart: CartParams,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 300,
            feature_subsample: 1.0 / 3.0,
            bootstrap: true,
            cart: CartParams::default(),
            seed: 0,
        }
    }
}

impl ForestParams {
    fn validate(&self) -> Result<()> {
        self.cart.validate()?;
        if self.n_trees == 0 || !(self.feature_subsample > 0.0 && self.feature_subsample <= 1.0) {
            return Err(ForestError::InvalidParams(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn features_per_node(&self, d: usize) -> usize {
        ((d as f64 * self.feature_subsample).round() as usize).clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ForestModel<T> {
    pub trees: Vec<Tree<T>>,
    pub params: ForestParams,
}

/// Bagged CARTs. Tree `t` draws its bootstrap sample and per-node feature
/// subsets from a generator seeded with `mix(seed, t)`, so the result does
/// not depend on how many threads build the trees.
pub fn fit_forest<T: Scalar>(m: &EncodedMatrix<T>, p: &ForestParams) -> Result<ForestModel<T>> {
    p.validate()?;
    if m.n_rows() == 0 {
        return Err(ForestError::Empty);
    }
    let columns = columns_of(m);
    let n = m.n_rows();
    let mtry = p.features_per_node(m.n_cols());
    let trees = (0..p.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeding::rng(p.seed, t as u64);
            let rows: Vec<usize> = if p.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            grow_tree(
                &columns,
                &rows,
                m.y(),
                None,
                p.cart.criterion(),
                LeafRule::Mean,
                p.cart.max_depth,
                Some(mtry),
                Some(rng),
            )
        })
        .collect();
    Ok(ForestModel { trees, params: *p })
}

pub fn predict_forest<T: Scalar>(model: &ForestModel<T>, m: &EncodedMatrix<T>) -> Result<Vec<T>> {
    let width = model.trees.first().map_or(m.n_cols(), |t| t.n_features);
    check_width(width, m)?;
    let k = T::from_usize_lossy(model.trees.len().max(1));
    Ok(m
        .rows()
        .map(|r| model.trees.iter().map(|t| t.predict_row(r)).sum::<T>() / k)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbtParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub max_depth: usize,
    pub min_child_weight: f64,
    /// Defaults to the training mean when `None`.
    pub base_score: Option<f64>,
    /// Recorded in run manifests; exact greedy boosting draws no randomness.
    pub seed: u64,
}

impl Default for GbtParams {
    fn default() -> Self {
        GbtParams {
            n_rounds: 500,
            learning_rate: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            max_depth: 6,
            min_child_weight: 1.0,
            base_score: None,
            seed: 0,
        }
    }
}

impl GbtParams {
    fn validate(&self) -> Result<()> {
        let ok = self.n_rounds > 0
            && self.learning_rate > 0.0
            && self.learning_rate <= 1.0
            && self.lambda >= 0.0
            && self.gamma >= 0.0
            && self.min_child_weight >= 0.0
            && self.base_score.is_none_or(f64::is_finite);
        if ok {
            Ok(())
        } else {
            Err(ForestError::InvalidParams(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct GbtModel<T> {
    pub base_score: T,
    pub learning_rate: T,
    pub trees: Vec<Tree<T>>,
    pub params: GbtParams,
    /// Mean squared training error before the first round and after each round.
    pub train_loss: Vec<T>,
}

/// Squared-error boosting: gradients `pred - y`, unit hessians, Newton
/// leaves `-G / (H + lambda)`, shrunk by the learning rate.
pub fn fit_gbt<T: Scalar>(m: &EncodedMatrix<T>, p: &GbtParams) -> Result<GbtModel<T>> {
    p.validate()?;
    if m.n_rows() == 0 {
        return Err(ForestError::Empty);
    }
    let columns = columns_of(m);
    let y = m.y();
    let n = m.n_rows();
    let rows: Vec<usize> = (0..n).collect();
    let base = p.base_score.map_or_else(|| scalar::mean(y), T::of);
    let eta = T::of(p.learning_rate);
    let lambda = T::of(p.lambda);
    let crit = SplitCriterion::SecondOrder {
        lambda,
        gamma: T::of(p.gamma),
        min_child_weight: T::of(p.min_child_weight),
    };
    let mse = |pred: &[T]| pred.iter().zip(y).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>() / T::from_usize_lossy(n);
    let mut pred = vec![base; n];
    let mut train_loss = vec![mse(&pred)];
    let mut trees = Vec::with_capacity(p.n_rounds);
    let ones = vec![T::one(); n];
    for _ in 0..p.n_rounds {
        let grad: Vec<T> = pred.iter().zip(y).map(|(&a, &b)| a - b).collect();
        let tree = grow_tree(
            &columns,
            &rows,
            &grad,
            Some(&ones),
            crit,
            LeafRule::Newton { lambda },
            p.max_depth,
            None,
            None,
        );
        for (pi, row) in pred.iter_mut().zip(m.rows()) {
            *pi += eta * tree.predict_row(row);
        }
        train_loss.push(mse(&pred));
        trees.push(tree);
    }
    Ok(GbtModel {
        base_score: base,
        learning_rate: eta,
        trees,
        params: *p,
        train_loss,
    })
}

pub fn predict_gbt<T: Scalar>(model: &GbtModel<T>, m: &EncodedMatrix<T>) -> Result<Vec<T>> {
    let width = model.trees.first().map_or(m.n_cols(), |t| t.n_features);
    check_width(width, m)?;
    Ok(m
        .rows()
        .map(|r| {
            model.base_score
                + model
                    .trees
                    .iter()
                    .map(|t| model.learning_rate * t.predict_row(r))
                    .sum::<T>()
        })
        .collect())
}

/// One feature's share of the total split gain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceEntry {
    pub feature: String,
    pub weight: f64,
}

/// Sums split gains per column over `trees`, folds columns into their
/// feature groups and normalizes to one. Sorted by weight descending,
/// then name.
pub fn gain_importance<T: Scalar>(trees: &[Tree<T>], groups: &[FeatureGroup]) -> Result<Vec<ImportanceEntry>> {
    let width = groups.iter().flat_map(|g| g.columns.iter()).max().map_or(0, |&c| c + 1);
    let mut per_column = vec![T::zero(); width];
    for t in trees {
        if t.n_features != width {
            return Err(ForestError::DimensionMismatch {
                expected: width,
                got: t.n_features,
            });
        }
        t.accumulate_gain(&mut per_column);
    }
    let per_group: Vec<f64> = groups
        .iter()
        .map(|g| g.columns.iter().map(|&c| per_column[c].as_f64()).sum())
        .collect();
    let total: f64 = per_group.iter().sum();
    if !(total > 0.0) {
        return Err(ForestError::UntrainedModel);
    }
    let mut entries: Vec<ImportanceEntry> = groups
        .iter()
        .zip(per_group)
        .map(|(g, w)| ImportanceEntry {
            feature: g.name.clone(),
            weight: w / total,
        })
        .collect();
    entries.sort_by(|a, b| b.weight.total_cmp(&a.weight).then_with(|| a.feature.cmp(&b.feature)));
    Ok(entries)
}
