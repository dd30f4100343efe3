//! SGD over the training forest.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    build_cooccurrence, build_vocabulary, extract_knowledge, filter_evidence, ClassId, CooccurrenceTable, EmrRecord,
    EvidenceMode, KnowledgeBase, Vocabulary,
};
use crate::error::{Error, Result};
use crate::eval::{dcg_of_ranking, rank_classes, DEFAULT_DEPTH};
use crate::network::{backward, forward, init_params, norm, tree_loss, GradientSet, ModelParams, NetConfig};
use crate::tree::{build_tree, instantiate_knowledge, KnowledgeTree};

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint, FORMAT_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Apply each tree's gradient as soon as it is computed.
    PerTree,
    /// Sum gradients over the epoch and apply once.
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub net: NetConfig,
    pub epochs: usize,
    pub step_vector: f64,
    pub step_weight: f64,
    pub step_softmax: f64,
    pub mode: EvidenceMode,
    /// Training metrics are computed on epoch 1, every `eval_every`
    /// epochs, and on the final epoch.
    pub eval_every: usize,
    /// Stop once the epoch's mean loss falls below this (0 disables).
    pub loss_threshold: f64,
    /// Reshuffle tree order every epoch; off replays a fixed order.
    pub shuffle: bool,
    pub update: UpdateMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            net: NetConfig::default(),
            epochs: 800,
            step_vector: 1e-3,
            step_weight: 1e-3,
            step_softmax: 1e-3,
            mode: EvidenceMode::All,
            eval_every: 1,
            loss_threshold: 0.0,
            shuffle: true,
            update: UpdateMode::PerTree,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        for (name, step) in [
            ("step_vector", self.step_vector),
            ("step_weight", self.step_weight),
            ("step_softmax", self.step_softmax),
        ] {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::Config(format!("{name} {step} must be > 0")));
            }
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if self.loss_threshold.is_nan() || self.loss_threshold < 0.0 {
            return Err(Error::Config("loss threshold must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub p_at_10: f64,
    pub dcg: f64,
}

/// A record compiled for training.
#[derive(Debug, Clone)]
pub struct TrainingTree {
    pub record: usize,
    pub tree: KnowledgeTree,
    pub gold: Vec<ClassId>,
}

/// Everything derived from the training split before the first epoch.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub vocab: Vocabulary,
    pub knowledge: KnowledgeBase,
    pub cooccurrence: CooccurrenceTable,
    pub trees: Vec<TrainingTree>,
    /// Records that produced no tree under the evidence mode.
    pub skipped: usize,
}

impl TrainingSet {
    pub fn build(records: &[EmrRecord], mode: EvidenceMode) -> Result<Self> {
        let vocab = build_vocabulary(records)?;
        let knowledge = KnowledgeBase::from(extract_knowledge(records, &vocab));
        let cooccurrence = build_cooccurrence(records, &knowledge, &vocab);
        let mut trees = Vec::new();
        let mut skipped = 0;
        for (i, record) in records.iter().enumerate() {
            let evidence = filter_evidence(record, &vocab, mode).ids;
            let active = instantiate_knowledge(&evidence, &knowledge);
            match build_tree(&evidence, &active, &knowledge, |e| u64::from(vocab.record_frequency(e))) {
                Ok(mut tree) => {
                    tree.assign_targets(&cooccurrence, vocab.num_classes());
                    trees.push(TrainingTree {
                        record: i,
                        tree,
                        gold: vocab.gold_classes(record),
                    });
                }
                Err(Error::NoEvidence) => skipped += 1,
                Err(e) => return Err(e),
            }
        }
        if trees.is_empty() {
            return Err(Error::NoTrainableTrees);
        }
        Ok(TrainingSet {
            vocab,
            knowledge,
            cooccurrence,
            trees,
            skipped,
        })
    }
}

/// SGD step for one gradient set. Touched embedding rows are renormalized
/// to unit length afterwards; zero rows stay zero.
pub fn apply_update(params: &mut ModelParams, grads: &GradientSet, cfg: &TrainConfig) -> Result<()> {
    grads.check_finite()?;
    params.composition.add_scaled(-cfg.step_weight, &grads.composition);
    if let (Some(b), Some(g)) = (params.bias.as_mut(), grads.bias.as_ref()) {
        crate::network::axpy(-cfg.step_weight, g, b);
    }
    params.classifier.add_scaled(-cfg.step_softmax, &grads.classifier);
    for (&e, g) in &grads.embeddings {
        crate::network::axpy(-cfg.step_vector, g, params.embeddings.row_mut(e));
        params.normalize_row(e);
    }
    Ok(())
}

/// Mean training P@10 and DCG@10 over trees that have gold labels.
pub fn training_metrics(set: &TrainingSet, params: &ModelParams) -> Result<(f64, f64)> {
    let (mut hits, mut dcg_sum, mut n) = (0usize, 0.0, 0usize);
    for t in set.trees.iter().filter(|t| !t.gold.is_empty()) {
        let trace = forward(&t.tree, params)?;
        let ranking = rank_classes(&trace.root().y);
        if ranking.iter().take(10).any(|(c, _)| t.gold.contains(c)) {
            hits += 1;
        }
        dcg_sum += dcg_of_ranking(&ranking, &t.gold, DEFAULT_DEPTH);
        n += 1;
    }
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((hits as f64 / n as f64, dcg_sum / n as f64))
}

/// State handed to a [`train_with`] observer after every epoch.
pub struct EpochView<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    pub params: &'a ModelParams,
    pub set: &'a TrainingSet,
    /// Present on epochs where metrics were computed.
    pub stats: Option<&'a EpochStats>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochStats>,
    pub skipped: usize,
}

pub fn train(records: &[EmrRecord], cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(records, cfg, |_| {})
}

pub fn train_with(
    records: &[EmrRecord],
    cfg: &TrainConfig,
    mut observer: impl FnMut(&EpochView<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if records.is_empty() {
        return Err(Error::NoTrainableTrees);
    }
    let set = TrainingSet::build(records, cfg.mode)?;
    let mut params = init_params(set.vocab.len(), set.vocab.num_classes(), &cfg.net)?;
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..set.trees.len()).collect();

    for epoch in 1..=cfg.epochs {
        if cfg.shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.net.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            order.sort_unstable();
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        let mut batch = (cfg.update == UpdateMode::FullBatch).then(|| GradientSet::zeros_like(&params));
        for &i in &order {
            let tree = &set.trees[i].tree;
            let trace = forward(tree, &params)?;
            loss_sum += tree_loss(tree, &trace, &params, &cfg.net)?;
            let grads = backward(tree, &trace, &params, &cfg.net)?;
            match batch.as_mut() {
                Some(acc) => acc.accumulate(&grads),
                None => apply_update(&mut params, &grads, cfg).map_err(|e| Error::Training {
                    epoch,
                    context: format!("record {}", records[set.trees[i].record].id),
                    source: Box::new(e),
                })?,
            }
        }
        if let Some(acc) = batch {
            apply_update(&mut params, &acc, cfg).map_err(|e| Error::Training {
                epoch,
                context: "batch update".into(),
                source: Box::new(e),
            })?;
        }
        let mean_loss = loss_sum / set.trees.len() as f64;
        let last = epoch == cfg.epochs || mean_loss < cfg.loss_threshold;
        let stats = if epoch == 1 || epoch % cfg.eval_every == 0 || last {
            let (p_at_10, dcg) = training_metrics(&set, &params)?;
            history.push(EpochStats {
                epoch,
                loss: mean_loss,
                p_at_10,
                dcg,
            });
            history.last()
        } else {
            None
        };
        observer(&EpochView {
            epoch,
            mean_loss,
            params: &params,
            set: &set,
            stats,
        });
        if last {
            break;
        }
    }

    let checkpoint = Checkpoint {
        vocabulary: set.vocab.clone(),
        knowledge: set.knowledge.clone(),
        params,
        config: cfg.clone(),
        history: history.clone(),
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        skipped: set.skipped,
    })
}

/// Epoch with the best `P@10 + DCG − normalized loss`, loss min-max scaled
/// over the history. Ties go to the later epoch.
pub fn select_model(history: &[EpochStats]) -> Option<usize> {
    let (lo, hi) = history.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
        (lo.min(s.loss), hi.max(s.loss))
    });
    let span = hi - lo;
    let mut best: Option<(f64, usize)> = None;
    for s in history {
        let loss = if span > 0.0 { (s.loss - lo) / span } else { 0.0 };
        let score = s.p_at_10 + s.dcg - loss;
        if best.is_none_or(|(b, _)| score >= b) {
            best = Some((score, s.epoch));
        }
    }
    best.map(|(_, e)| e)
}

pub fn write_stats_csv(history: &[EpochStats], mut out: impl std::io::Write) -> Result<()> {
    writeln!(out, "epoch,loss,p_at_10,dcg")?;
    for s in history {
        writeln!(out, "{},{},{},{}", s.epoch, s.loss, s.p_at_10, s.dcg)?;
    }
    Ok(())
}

/// Largest deviation from unit norm over the given embedding rows.
pub fn max_norm_deviation(params: &ModelParams, rows: impl IntoIterator<Item = usize>) -> f64 {
    rows.into_iter()
        .map(|e| (norm(params.embeddings.row(e)) - 1.0).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests;
