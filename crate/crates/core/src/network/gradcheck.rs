//! Finite-difference verification of [`backward`] on random trees.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, fd_gradient, forward, init_params, GradientSet, ModelParams, NetConfig};
use crate::error::Result;
use crate::tree::{KnowledgeTree, NodeId, Origin, Payload, TreeNode};

/// Magnitude below which an entry pair is exempt from the relative check.
pub const EXEMPT_BELOW: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub max_leaves: usize,
    pub dims: Vec<usize>,
    pub classes: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub eps: f64,
    pub seed: u64,
    /// Init radius for W and W_s; large enough that tanh is nonlinear.
    pub init_radius: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            trials: 100,
            max_leaves: 7,
            dims: vec![4, 8],
            classes: vec![3, 5],
            lambdas: vec![0.0, 1e-4],
            eps: 1e-5,
            seed: 0,
            init_radius: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub dim: usize,
    pub classes: usize,
    pub lambda: f64,
    pub leaves: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub trials: Vec<TrialResult>,
}

impl GradcheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.trials.iter().map(|t| t.max_relative_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&TrialResult> {
        self.trials
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

/// Random simplex vector with a few exact zeros mixed in.
pub fn random_distribution(rng: &mut impl Rng, classes: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..classes)
        .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen::<f64>() })
        .collect();
    if t.iter().all(|&v| v == 0.0) {
        t[rng.gen_range(0..classes)] = 1.0;
    }
    let s: f64 = t.iter().sum();
    t.iter_mut().for_each(|v| *v /= s);
    t
}

/// Random binary tree over `leaves` leaves drawn from `num_entities`
/// entities (repeats allowed), with random targets on every node.
pub fn random_tree(rng: &mut impl Rng, leaves: usize, num_entities: usize, classes: usize) -> KnowledgeTree {
    let mut nodes: Vec<TreeNode> = (0..leaves)
        .map(|_| TreeNode::leaf(rng.gen_range(0..num_entities), 1))
        .collect();
    let mut pool: Vec<NodeId> = (0..leaves).collect();
    while pool.len() > 1 {
        pool.shuffle(rng);
        let left = pool.pop().expect("two items");
        let right = pool.pop().expect("two items");
        let coverage = nodes[left].coverage.union(&nodes[right].coverage).copied().collect();
        pool.push(nodes.len());
        nodes.push(TreeNode {
            payload: Payload::Logic {
                left,
                right,
                origin: Origin::HuffmanMerge,
            },
            weight: nodes[left].weight + nodes[right].weight,
            coverage,
        });
    }
    let first_level = (0..leaves).collect();
    let mut tree = KnowledgeTree::from_nodes(nodes, first_level).expect("random tree is valid");
    let targets = (0..tree.len()).map(|_| random_distribution(rng, classes)).collect();
    tree.set_targets(targets).expect("one target per node");
    tree
}

/// Compares analytic and finite-difference gradients for one tree.
pub fn check_tree(tree: &KnowledgeTree, params: &ModelParams, cfg: &NetConfig, eps: f64) -> Result<(GradientSet, GradientSet, f64)> {
    let trace = forward(tree, params)?;
    let analytic = backward(tree, &trace, params, cfg)?;
    let numeric = fd_gradient(tree, params, cfg, eps)?;
    let err = analytic.max_relative_error(&numeric, EXEMPT_BELOW);
    Ok((analytic, numeric, err))
}

pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut trials = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(trial as u64));
        let dim = cfg.dims[trial % cfg.dims.len()];
        let classes = cfg.classes[(trial / cfg.dims.len()) % cfg.classes.len()];
        let lambda = cfg.lambdas[(trial / (cfg.dims.len() * cfg.classes.len())) % cfg.lambdas.len()];
        let leaves = rng.gen_range(1..=cfg.max_leaves.max(1));
        // fewer entities than leaves forces shared embeddings now and then
        let num_entities = rng.gen_range(1..=leaves + 1);
        let tree = random_tree(&mut rng, leaves, num_entities, classes);
        let net = NetConfig {
            dim,
            lambda,
            init_radius: cfg.init_radius,
            seed: rng.gen(),
            ..NetConfig::default()
        };
        let params = init_params(num_entities, classes, &net)?;
        let (_, _, err) = check_tree(&tree, &params, &net, cfg.eps)?;
        trials.push(TrialResult {
            trial,
            dim,
            classes,
            lambda,
            leaves,
            max_relative_error: err,
        });
    }
    Ok(GradcheckReport { trials })
}
