//! Disease ranking and ranking metrics.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{filter_evidence, ClassId, EmrRecord, EvidenceMode, Vocabulary};
use crate::error::{Error, Result};
use crate::network::{forward, ModelParams};
use crate::trainer::Checkpoint;
use crate::tree::{build_tree, instantiate_knowledge, KnowledgeTree};

/// DCG truncation depth used when none is given.
pub const DEFAULT_DEPTH: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisResult {
    pub record_id: String,
    /// All classes by descending probability, ties by ascending class id.
    /// Empty when the record is undiagnosable.
    pub ranking: Vec<(ClassId, f64)>,
    pub undiagnosable: bool,
}

impl DiagnosisResult {
    pub fn undiagnosable(record_id: impl Into<String>) -> Self {
        DiagnosisResult {
            record_id: record_id.into(),
            ranking: Vec::new(),
            undiagnosable: true,
        }
    }
}

/// How multi-label records decide correctness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldMatch {
    /// Any gold disease within the top k.
    #[default]
    Any,
    /// Every gold disease within the top k.
    All,
}

pub fn rank_classes(probs: &[f64]) -> Vec<(ClassId, f64)> {
    let mut ranking: Vec<(ClassId, f64)> = probs.iter().copied().enumerate().collect();
    ranking.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranking
}

/// Tree for a record under a trained vocabulary and knowledge base.
pub fn record_tree(record: &EmrRecord, ckpt: &Checkpoint, mode: EvidenceMode) -> Result<KnowledgeTree> {
    let vocab = &ckpt.vocabulary;
    let evidence = filter_evidence(record, vocab, mode).ids;
    let active = instantiate_knowledge(&evidence, &ckpt.knowledge);
    build_tree(&evidence, &active, &ckpt.knowledge, |e| u64::from(vocab.record_frequency(e)))
}

pub fn diagnose(record: &EmrRecord, ckpt: &Checkpoint, mode: EvidenceMode) -> Result<DiagnosisResult> {
    diagnose_with(record, ckpt, &ckpt.params, mode)
}

/// As [`diagnose`], with parameters other than the checkpoint's own.
pub fn diagnose_with(
    record: &EmrRecord,
    ckpt: &Checkpoint,
    params: &ModelParams,
    mode: EvidenceMode,
) -> Result<DiagnosisResult> {
    let tree = match record_tree(record, ckpt, mode) {
        Ok(t) => t,
        Err(Error::NoEvidence) => return Ok(DiagnosisResult::undiagnosable(&record.id)),
        Err(e) => return Err(e),
    };
    let trace = forward(&tree, params)?;
    Ok(DiagnosisResult {
        record_id: record.id.clone(),
        ranking: rank_classes(&trace.root().y),
        undiagnosable: false,
    })
}

fn hit(ranking: &[(ClassId, f64)], gold: &[ClassId], k: usize, rule: GoldMatch) -> bool {
    if gold.is_empty() {
        return false;
    }
    let top = &ranking[..k.min(ranking.len())];
    let found = |g: &ClassId| top.iter().any(|(c, _)| c == g);
    match rule {
        GoldMatch::Any => gold.iter().any(found),
        GoldMatch::All => gold.iter().all(found),
    }
}

/// True when the record counts as correctly diagnosed at cutoff `k`.
pub fn correct_at_k(result: &DiagnosisResult, gold: &[ClassId], k: usize, rule: GoldMatch) -> bool {
    !result.undiagnosable && hit(&result.ranking, gold, k, rule)
}

/// Fraction of results with a gold disease among the first `k` classes.
/// Undiagnosable results count as misses.
pub fn precision_at_k(results: &[DiagnosisResult], gold: &[Vec<ClassId>], k: usize, rule: GoldMatch) -> f64 {
    assert!(k >= 1, "k must be >= 1");
    assert_eq!(results.len(), gold.len(), "one gold set per result");
    if results.is_empty() {
        return 0.0;
    }
    let r = results
        .iter()
        .zip(gold)
        .filter(|(res, g)| correct_at_k(res, g, k, rule))
        .count();
    r as f64 / results.len() as f64
}

/// `rel_1 + Σ_{i≥2} rel_i / log2(i)` over the first `depth` ranks.
pub fn dcg_of_ranking(ranking: &[(ClassId, f64)], gold: &[ClassId], depth: usize) -> f64 {
    ranking
        .iter()
        .take(depth)
        .enumerate()
        .filter(|(_, (c, _))| gold.contains(c))
        .map(|(i, _)| if i == 0 { 1.0 } else { 1.0 / ((i + 1) as f64).log2() })
        .sum()
}

pub fn dcg(result: &DiagnosisResult, gold: &[ClassId], depth: usize) -> f64 {
    assert!(depth >= 1, "depth must be >= 1");
    if result.undiagnosable {
        return 0.0;
    }
    dcg_of_ranking(&result.ranking, gold, depth)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub depth: usize,
    pub gold_match: GoldMatch,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![5, 10],
            depth: DEFAULT_DEPTH,
            gold_match: GoldMatch::Any,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecordScore {
    pub record_id: String,
    pub undiagnosable: bool,
    pub gold: Vec<ClassId>,
    pub dcg: f64,
    /// Hit flag per configured k.
    pub hits: Vec<bool>,
}

/// Metric means over one population of records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricMeans {
    pub n: usize,
    /// `(k, mean P@k)` for every configured k.
    pub precision: Vec<(usize, f64)>,
    pub dcg: f64,
}

impl MetricMeans {
    fn over<'a>(ks: &[usize], scores: impl Iterator<Item = &'a RecordScore>) -> Self {
        let mut n = 0;
        let mut hits = vec![0usize; ks.len()];
        let mut dcg = 0.0;
        for s in scores {
            n += 1;
            dcg += s.dcg;
            for (h, &hit) in hits.iter_mut().zip(&s.hits) {
                *h += usize::from(hit);
            }
        }
        let mean = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        MetricMeans {
            n,
            precision: ks.iter().zip(hits).map(|(&k, h)| (k, mean(h as f64))).collect(),
            dcg: mean(dcg),
        }
    }

    pub fn p_at(&self, k: usize) -> Option<f64> {
        self.precision.iter().find(|(kk, _)| *kk == k).map(|(_, p)| *p)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_evaluated: usize,
    pub n_skipped: usize,
    /// Means over diagnosable records only.
    pub evaluated: MetricMeans,
    /// Means over every record, undiagnosable ones scoring zero.
    pub strict: MetricMeans,
    pub depth: usize,
    pub per_record: Vec<RecordScore>,
    pub results: Vec<DiagnosisResult>,
}

impl EvalReport {
    pub fn p_at(&self, k: usize) -> Option<f64> {
        self.evaluated.p_at(k)
    }

    pub fn mean_dcg(&self) -> f64 {
        self.evaluated.dcg
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "evaluated {} records, skipped {} without usable evidence",
            self.n_evaluated, self.n_skipped
        );
        for (label, m) in [("evaluated", &self.evaluated), ("all records", &self.strict)] {
            let ps: Vec<String> = m.precision.iter().map(|(k, p)| format!("P@{k}={p:.4}")).collect();
            let _ = writeln!(s, "  {label:<12} {} DCG@{}={:.4}", ps.join(" "), self.depth, m.dcg);
        }
        s
    }

    /// `view,metric,value` rows for both populations.
    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "view,metric,value")?;
        writeln!(out, "all,n_evaluated,{}", self.n_evaluated)?;
        writeln!(out, "all,n_skipped,{}", self.n_skipped)?;
        for (view, m) in [("evaluated", &self.evaluated), ("strict", &self.strict)] {
            for (k, p) in &m.precision {
                writeln!(out, "{view},p_at_{k},{p}")?;
            }
            writeln!(out, "{view},dcg,{}", m.dcg)?;
        }
        Ok(())
    }

    /// `record_id,diagnosable,dcg` per record, in input order.
    pub fn write_dcg_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "record_id,diagnosable,dcg")?;
        for s in &self.per_record {
            writeln!(out, "{},{},{}", s.record_id, u8::from(!s.undiagnosable), s.dcg)?;
        }
        Ok(())
    }
}

/// `record_id,rank,class_id,disease_name,probability`, first `top` rows per
/// record.
pub fn write_rankings_csv(results: &[DiagnosisResult], vocab: &Vocabulary, top: usize, mut out: impl Write) -> Result<()> {
    writeln!(out, "record_id,rank,class_id,disease_name,probability")?;
    for r in results {
        for (rank, (c, p)) in r.ranking.iter().take(top).enumerate() {
            writeln!(out, "{},{},{},{},{}", r.record_id, rank + 1, c, vocab.class_name(*c), p)?;
        }
    }
    Ok(())
}

pub fn evaluate(test: &[EmrRecord], ckpt: &Checkpoint, mode: EvidenceMode, opts: &EvalOptions) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if opts.ks.contains(&0) || opts.depth == 0 {
        return Err(Error::Config("k and depth must be >= 1".into()));
    }
    let mut results = Vec::with_capacity(test.len());
    let mut per_record = Vec::with_capacity(test.len());
    for record in test {
        let result = diagnose(record, ckpt, mode)?;
        let gold = ckpt.vocabulary.gold_classes(record);
        per_record.push(RecordScore {
            record_id: record.id.clone(),
            undiagnosable: result.undiagnosable,
            dcg: dcg(&result, &gold, opts.depth),
            hits: opts
                .ks
                .iter()
                .map(|&k| correct_at_k(&result, &gold, k, opts.gold_match))
                .collect(),
            gold,
        });
        results.push(result);
    }
    let evaluated = MetricMeans::over(&opts.ks, per_record.iter().filter(|s| !s.undiagnosable));
    let strict = MetricMeans::over(&opts.ks, per_record.iter());
    Ok(EvalReport {
        n_evaluated: evaluated.n,
        n_skipped: test.len() - evaluated.n,
        evaluated,
        strict,
        depth: opts.depth,
        per_record,
        results,
    })
}
