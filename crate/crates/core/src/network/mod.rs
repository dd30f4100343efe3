//! Composition network over knowledge trees.
//!
//! A leaf's vector is its entity embedding; an internal node's vector is
//! `tanh(W · [left; right])`. Every node feeds a softmax classifier
//! `y = softmax(W_s · x)` trained against the node's target distribution.
//! [`backward`] implements the per-node softmax / downward / complete error
//! recursion and [`fd_gradient`] is the central-difference oracle it is
//! checked against.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::EntityId;
use crate::error::{Error, Result};
use crate::tree::{KnowledgeTree, NodeId};

pub mod gradcheck;
mod matrix;

pub use matrix::{axpy, dot, norm, Matrix};

/// Floor applied to predicted probabilities inside the log of the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Which error drives the embedding gradient of a leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafGradient {
    /// Softmax error plus the parent's downward error (exact gradient).
    Complete,
    /// Softmax error only, as in the per-leaf update of the original
    /// procedure. Not a true gradient of the tree loss.
    SoftmaxOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub dim: usize,
    pub lambda: f64,
    pub init_radius: f64,
    pub seed: u64,
    /// Adds a bias to the composition (off by default).
    pub use_bias: bool,
    /// Include touched embedding rows in the L2 penalty.
    pub regularize_embeddings: bool,
    pub leaf_gradient: LeafGradient,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            dim: 50,
            lambda: 1e-4,
            init_radius: 0.1,
            seed: 0,
            use_bias: false,
            regularize_embeddings: true,
            leaf_gradient: LeafGradient::Complete,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::Config(format!("dimension {} < 2", self.dim)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda {} must be >= 0", self.lambda)));
        }
        if !(self.init_radius > 0.0 && self.init_radius.is_finite()) {
            return Err(Error::Config(format!("init radius {} must be > 0", self.init_radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// V × d, one row per entity.
    pub embeddings: Matrix,
    /// d × 2d composition matrix.
    pub composition: Matrix,
    pub bias: Option<Vec<f64>>,
    /// C × d classifier.
    pub classifier: Matrix,
}

impl ModelParams {
    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn num_entities(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.rows()
    }

    pub fn is_finite(&self) -> bool {
        self.embeddings.is_finite()
            && self.composition.is_finite()
            && self.classifier.is_finite()
            && self.bias.as_ref().is_none_or(|b| b.iter().all(|x| x.is_finite()))
    }

    /// Scales an embedding row to unit L2 norm; zero rows are left alone.
    pub fn normalize_row(&mut self, entity: EntityId) {
        let row = self.embeddings.row_mut(entity);
        let n = norm(row);
        if n > 0.0 {
            row.iter_mut().for_each(|x| *x /= n);
        }
    }
}

/// Samples every parameter i.i.d. from U(−r, r), then scales embedding rows
/// to unit norm.
pub fn init_params(num_entities: usize, num_classes: usize, cfg: &NetConfig) -> Result<ModelParams> {
    cfg.validate()?;
    if num_entities == 0 || num_classes == 0 {
        return Err(Error::Config(format!(
            "need V >= 1 and C >= 1, got V={num_entities} C={num_classes}"
        )));
    }
    let mut params = sample_params(num_entities, num_classes, cfg);
    for e in 0..num_entities {
        params.normalize_row(e);
    }
    Ok(params)
}

/// Uniform draws before the embedding renormalization.
fn sample_params(num_entities: usize, num_classes: usize, cfg: &NetConfig) -> ModelParams {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u = Uniform::new(-cfg.init_radius, cfg.init_radius);
    let d = cfg.dim;
    let embeddings = Matrix::from_fn(num_entities, d, |_, _| u.sample(&mut rng));
    let composition = Matrix::from_fn(d, 2 * d, |_, _| u.sample(&mut rng));
    let bias = cfg.use_bias.then(|| (0..d).map(|_| u.sample(&mut rng)).collect());
    let classifier = Matrix::from_fn(num_classes, d, |_, _| u.sample(&mut rng));
    ModelParams {
        embeddings,
        composition,
        bias,
        classifier,
    }
}

/// `tanh(W · [left; right] (+ b))`
pub fn compose(left: &[f64], right: &[f64], composition: &Matrix, bias: Option<&[f64]>) -> Vec<f64> {
    let mut joined = Vec::with_capacity(left.len() + right.len());
    joined.extend_from_slice(left);
    joined.extend_from_slice(right);
    let mut a = composition.mul_vec(&joined);
    if let Some(b) = bias {
        axpy(1.0, b, &mut a);
    }
    a.iter_mut().for_each(|v| *v = v.tanh());
    a
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut y: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = y.iter().sum();
    y.iter_mut().for_each(|v| *v /= s);
    y
}

/// Gradient of `−Σ t log softmax(z)` with respect to `z`.
pub fn softmax_error(y: &[f64], t: &[f64]) -> Vec<f64> {
    y.iter().zip(t).map(|(a, b)| a - b).collect()
}

/// `−Σ t log max(y, floor)`
pub fn cross_entropy(y: &[f64], t: &[f64]) -> f64 {
    -y.iter()
        .zip(t)
        .filter(|(_, &ti)| ti != 0.0)
        .map(|(&yi, &ti)| ti * yi.max(PROB_FLOOR).ln())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeActivation {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub nodes: Vec<NodeActivation>,
}

impl ActivationTrace {
    pub fn root(&self) -> &NodeActivation {
        self.nodes.last().expect("trace is never empty")
    }
}

pub fn forward(tree: &KnowledgeTree, params: &ModelParams) -> Result<ActivationTrace> {
    let mut nodes: Vec<NodeActivation> = Vec::with_capacity(tree.len());
    for node in tree.nodes() {
        let x = match node.children() {
            None => {
                let e = node.entity().expect("leaf");
                if e >= params.num_entities() {
                    return Err(Error::EntityOutOfRange {
                        id: e,
                        size: params.num_entities(),
                    });
                }
                params.embeddings.row(e).to_vec()
            }
            Some((l, r)) => compose(
                &nodes[l].x,
                &nodes[r].x,
                &params.composition,
                params.bias.as_deref(),
            ),
        };
        let z = params.classifier.mul_vec(&x);
        let y = softmax(&z);
        nodes.push(NodeActivation { x, z, y });
    }
    Ok(ActivationTrace { nodes })
}

fn tree_targets<'a>(tree: &'a KnowledgeTree, trace: &ActivationTrace) -> Result<&'a [Vec<f64>]> {
    let targets = tree
        .targets()
        .ok_or_else(|| Error::TraceMismatch("tree has no targets".into()))?;
    if trace.nodes.len() != tree.len() || targets.len() != tree.len() {
        return Err(Error::TraceMismatch(format!(
            "{} nodes, {} activations, {} targets",
            tree.len(),
            trace.nodes.len(),
            targets.len()
        )));
    }
    Ok(targets)
}

/// `λ‖θ‖²` over W, W_s, the bias and (optionally) the tree's embedding rows.
pub fn penalty(tree: &KnowledgeTree, params: &ModelParams, cfg: &NetConfig) -> f64 {
    if cfg.lambda == 0.0 {
        return 0.0;
    }
    let mut sq = params.composition.squared_norm() + params.classifier.squared_norm();
    if let Some(b) = &params.bias {
        sq += dot(b, b);
    }
    if cfg.regularize_embeddings {
        sq += tree
            .entities()
            .into_iter()
            .map(|e| {
                let row = params.embeddings.row(e);
                dot(row, row)
            })
            .sum::<f64>();
    }
    cfg.lambda * sq
}

/// Summed node cross-entropy plus the L2 penalty.
pub fn tree_loss(tree: &KnowledgeTree, trace: &ActivationTrace, params: &ModelParams, cfg: &NetConfig) -> Result<f64> {
    let targets = tree_targets(tree, trace)?;
    let ce: f64 = trace
        .nodes
        .iter()
        .zip(targets)
        .map(|(a, t)| cross_entropy(&a.y, t))
        .sum();
    Ok(ce + penalty(tree, params, cfg))
}

/// Per-node error vectors of one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeErrors {
    /// `(W_sᵀ (y − t)) ⊙ f′(x)`
    pub softmax: Vec<Vec<f64>>,
    /// `(Wᵀ δ^com) ⊙ f′([x_l; x_r])`, internal nodes only.
    pub down: Vec<Option<Vec<f64>>>,
    /// Softmax error plus the parent's downward half.
    pub complete: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub composition: Matrix,
    pub bias: Option<Vec<f64>>,
    pub classifier: Matrix,
    /// Rows for entities present in the tree only.
    pub embeddings: BTreeMap<EntityId, Vec<f64>>,
    pub errors: Option<NodeErrors>,
}

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let d = params.dim();
        GradientSet {
            composition: Matrix::zeros(d, 2 * d),
            bias: params.bias.as_ref().map(|_| vec![0.0; d]),
            classifier: Matrix::zeros(params.num_classes(), d),
            embeddings: BTreeMap::new(),
            errors: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.check_finite().is_ok()
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.composition.is_finite() {
            return Err(Error::NonFiniteGradient("composition"));
        }
        if !self.classifier.is_finite() {
            return Err(Error::NonFiniteGradient("classifier"));
        }
        if self.bias.as_ref().is_some_and(|b| b.iter().any(|x| !x.is_finite())) {
            return Err(Error::NonFiniteGradient("bias"));
        }
        if self.embeddings.values().flatten().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient("embeddings"));
        }
        Ok(())
    }

    /// `self += other`, merging embedding rows.
    pub fn accumulate(&mut self, other: &GradientSet) {
        self.composition.add_scaled(1.0, &other.composition);
        self.classifier.add_scaled(1.0, &other.classifier);
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            axpy(1.0, b, a);
        }
        for (&e, row) in &other.embeddings {
            let acc = self.embeddings.entry(e).or_insert_with(|| vec![0.0; row.len()]);
            axpy(1.0, row, acc);
        }
    }

    /// Paired `(self, other)` entries over every block, embedding rows
    /// matched by entity.
    pub fn paired_entries<'a>(&'a self, other: &'a GradientSet) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        let zip = |a: &[f64], b: &[f64], out: &mut Vec<(f64, f64)>| {
            out.extend(a.iter().copied().zip(b.iter().copied()));
        };
        zip(self.composition.as_slice(), other.composition.as_slice(), &mut out);
        zip(self.classifier.as_slice(), other.classifier.as_slice(), &mut out);
        if let (Some(a), Some(b)) = (&self.bias, &other.bias) {
            zip(a, b, &mut out);
        }
        for (e, row) in &self.embeddings {
            let empty = vec![0.0; row.len()];
            let theirs = other.embeddings.get(e).unwrap_or(&empty);
            zip(row, theirs, &mut out);
        }
        for (e, row) in &other.embeddings {
            if !self.embeddings.contains_key(e) {
                out.extend(row.iter().map(|&v| (0.0, v)));
            }
        }
        out
    }

    /// Largest `|a − b| / (|a| + |b|)` over all entries; entries whose
    /// magnitudes sum below `floor` are skipped.
    pub fn max_relative_error(&self, other: &GradientSet, floor: f64) -> f64 {
        self.paired_entries(other)
            .into_iter()
            .filter(|(a, b)| a.abs() + b.abs() >= floor)
            .map(|(a, b)| (a - b).abs() / (a.abs() + b.abs()))
            .fold(0.0, f64::max)
    }
}

fn tanh_derivative(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1.0 - v * v).collect()
}

/// Activation derivative at a node: `1 − x²` for composed nodes; leaves
/// are raw embeddings, so the identity.
fn node_derivative(tree: &KnowledgeTree, trace: &ActivationTrace, id: NodeId) -> Vec<f64> {
    let x = &trace.nodes[id].x;
    match tree.node(id).children() {
        Some(_) => tanh_derivative(x),
        None => vec![1.0; x.len()],
    }
}

/// Analytic gradient of [`tree_loss`] for one tree.
pub fn backward(
    tree: &KnowledgeTree,
    trace: &ActivationTrace,
    params: &ModelParams,
    cfg: &NetConfig,
) -> Result<GradientSet> {
    let targets = tree_targets(tree, trace)?;
    let d = params.dim();
    if trace.nodes.iter().any(|a| a.x.len() != d || a.y.len() != params.num_classes()) {
        return Err(Error::TraceMismatch("activation widths differ from parameters".into()));
    }
    let n = tree.len();
    let mut grads = GradientSet::zeros_like(params);

    let mut softmax_err = Vec::with_capacity(n);
    for (id, (a, t)) in trace.nodes.iter().zip(targets).enumerate() {
        let err = softmax_error(&a.y, t);
        grads.classifier.add_outer(1.0, &err, &a.x);
        let mut delta = params.classifier.tmul_vec(&err);
        for (v, fp) in delta.iter_mut().zip(node_derivative(tree, trace, id)) {
            *v *= fp;
        }
        softmax_err.push(delta);
    }

    let mut complete = softmax_err.clone();
    let mut down: Vec<Option<Vec<f64>>> = vec![None; n];
    for id in (0..n).rev() {
        let Some((l, r)) = tree.node(id).children() else {
            continue;
        };
        let mut joined = trace.nodes[l].x.clone();
        joined.extend_from_slice(&trace.nodes[r].x);
        grads.composition.add_outer(1.0, &complete[id], &joined);
        if let Some(b) = grads.bias.as_mut() {
            axpy(1.0, &complete[id], b);
        }

        let mut dn = params.composition.tmul_vec(&complete[id]);
        let mut fp = node_derivative(tree, trace, l);
        fp.extend(node_derivative(tree, trace, r));
        dn.iter_mut().zip(&fp).for_each(|(v, f)| *v *= f);
        axpy(1.0, &dn[..d], &mut complete[l]);
        axpy(1.0, &dn[d..], &mut complete[r]);
        down[id] = Some(dn);
    }

    for (id, node) in tree.nodes().iter().enumerate() {
        if let Some(e) = node.entity() {
            let err = match cfg.leaf_gradient {
                LeafGradient::Complete => &complete[id],
                LeafGradient::SoftmaxOnly => &softmax_err[id],
            };
            let row = grads.embeddings.entry(e).or_insert_with(|| vec![0.0; d]);
            axpy(1.0, err, row);
        }
    }

    if cfg.lambda > 0.0 {
        let two_lambda = 2.0 * cfg.lambda;
        grads.composition.add_scaled(two_lambda, &params.composition);
        grads.classifier.add_scaled(two_lambda, &params.classifier);
        if let (Some(g), Some(b)) = (grads.bias.as_mut(), params.bias.as_ref()) {
            axpy(two_lambda, b, g);
        }
        if cfg.regularize_embeddings {
            for (&e, row) in grads.embeddings.iter_mut() {
                axpy(two_lambda, params.embeddings.row(e), row);
            }
        }
    }

    grads.errors = Some(NodeErrors {
        softmax: softmax_err,
        down,
        complete,
    });
    Ok(grads)
}

/// Forward pass plus loss for a parameter set.
pub fn evaluate_loss(tree: &KnowledgeTree, params: &ModelParams, cfg: &NetConfig) -> Result<f64> {
    let trace = forward(tree, params)?;
    tree_loss(tree, &trace, params, cfg)
}

/// Central differences `(E(θ+ε) − E(θ−ε)) / 2ε` for every parameter the
/// tree's loss depends on.
pub fn fd_gradient(tree: &KnowledgeTree, params: &ModelParams, cfg: &NetConfig, eps: f64) -> Result<GradientSet> {
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::Config(format!("finite-difference step {eps} must be > 0")));
    }
    let mut work = params.clone();
    let central = |work: &mut ModelParams, get: &dyn Fn(&mut ModelParams) -> &mut f64| -> Result<f64> {
        let orig = *get(work);
        *get(work) = orig + eps;
        let plus = evaluate_loss(tree, work, cfg)?;
        *get(work) = orig - eps;
        let minus = evaluate_loss(tree, work, cfg)?;
        *get(work) = orig;
        Ok((plus - minus) / (2.0 * eps))
    };

    let mut grads = GradientSet::zeros_like(params);
    for i in 0..grads.composition.as_slice().len() {
        grads.composition.as_mut_slice()[i] = central(&mut work, &|p| &mut p.composition.as_mut_slice()[i])?;
    }
    for i in 0..grads.classifier.as_slice().len() {
        grads.classifier.as_mut_slice()[i] = central(&mut work, &|p| &mut p.classifier.as_mut_slice()[i])?;
    }
    if let Some(len) = params.bias.as_ref().map(Vec::len) {
        let mut g = vec![0.0; len];
        for (i, gi) in g.iter_mut().enumerate() {
            *gi = central(&mut work, &|p| &mut p.bias.as_mut().expect("bias")[i])?;
        }
        grads.bias = Some(g);
    }
    for e in tree.entities() {
        let mut row = vec![0.0; params.dim()];
        for (j, rj) in row.iter_mut().enumerate() {
            *rj = central(&mut work, &|p| &mut p.embeddings[(e, j)])?;
        }
        grads.embeddings.insert(e, row);
    }
    Ok(grads)
}
