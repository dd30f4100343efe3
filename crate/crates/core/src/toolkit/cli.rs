use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::corpus::{load_corpus, split_corpus, write_corpus, EntityKind, EvidenceMode};
use crate::error::{Error, Result};
use crate::eval::{diagnose, evaluate, record_tree, write_rankings_csv, EvalOptions, GoldMatch};
use crate::network::gradcheck::{self, GradcheckConfig};
use crate::network::{LeafGradient, NetConfig};
use crate::trainer::{load_checkpoint, save_checkpoint, select_model, train, write_stats_csv, TrainConfig, UpdateMode};

use super::export::{export_embeddings, parse_embeddings};
use super::generate::{generate_corpus, GenConfig, GenManifest};
use super::project::project_2d;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "rnkn", version, about = "Recursive neural knowledge network toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    All,
    Present,
}

impl From<ModeArg> for EvidenceMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::All => EvidenceMode::All,
            ModeArg::Present => EvidenceMode::PresentOnly,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground-truth manifest
    Gen(GenArgs),
    /// Train a model on a JSONL corpus
    Train(TrainArgs),
    /// Score a model on held-out records
    Eval(EvalArgs),
    /// Print ranked diseases for records
    Diagnose(DiagnoseArgs),
    /// Export entity embeddings as TSV
    Export(ExportArgs),
    /// Project exported embeddings to 2D
    Project(ProjectArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = 5)]
    categories: usize,
    #[arg(long, default_value_t = 8)]
    diseases: usize,
    #[arg(long, default_value_t = 6)]
    symptoms: usize,
    #[arg(long, default_value_t = 600)]
    records: usize,
    #[arg(long, default_value_t = 0.15)]
    noise: f64,
    #[arg(long, default_value_t = 0.1)]
    modifier_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    mention_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// Hold out this fraction of records before training
    #[arg(long)]
    holdout: Option<f64>,
    /// Where to write held-out records (with --holdout)
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 800)]
    epochs: usize,
    /// Step size for embeddings, W and W_s
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long)]
    step_vector: Option<f64>,
    #[arg(long)]
    step_weight: Option<f64>,
    #[arg(long)]
    step_softmax: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    lambda: f64,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    #[arg(long, default_value_t = 1)]
    eval_every: usize,
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    /// Iterate trees in a fixed order
    #[arg(long)]
    no_shuffle: bool,
    /// Apply one summed update per epoch
    #[arg(long)]
    full_batch: bool,
    /// Add a bias term to the composition
    #[arg(long)]
    bias: bool,
    /// Update leaves with the softmax error only
    #[arg(long)]
    softmax_leaf_gradient: bool,
    /// Leave embedding rows out of the L2 penalty
    #[arg(long)]
    no_embedding_penalty: bool,
    /// Stats history CSV
    #[arg(long)]
    stats: Option<PathBuf>,
    /// Knowledge TSV
    #[arg(long)]
    knowledge: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    /// Directory for report.csv, rankings.csv and dcg.csv
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Ranking rows per record in rankings.csv
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, default_value_t = 10)]
    depth: usize,
    /// Require every gold disease in the top k
    #[arg(long)]
    require_all: bool,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Only this record
    #[arg(long)]
    record: Option<String>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    /// Print each record's knowledge tree
    #[arg(long)]
    dump_tree: bool,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    diseases_only: bool,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// Embedding TSV from `export`
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Generator manifest, adds a category column
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, num_args = 1.., default_values_t = [4usize, 8])]
    dim: Vec<usize>,
    #[arg(long, num_args = 1.., default_values_t = [3usize, 5])]
    classes: Vec<usize>,
    #[arg(long, num_args = 1.., default_values_t = [0.0f64, 1e-4])]
    lambda: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fail when the max relative error reaches this
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Export(a) => cmd_export(a),
        Command::Project(a) => cmd_project(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn create(path: &PathBuf) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn cmd_gen(a: GenArgs) -> Result<i32> {
    let cfg = GenConfig {
        n_categories: a.categories,
        diseases_per_category: a.diseases,
        symptoms_per_disease: a.symptoms,
        records: a.records,
        evidence_noise: a.noise,
        modifier_noise: a.modifier_noise,
        mention_rate: a.mention_rate,
        seed: a.seed,
        ..GenConfig::default()
    };
    let (records, manifest) = generate_corpus(&cfg)?;
    let mut out = create(&a.out)?;
    write_corpus(&records, &mut out)?;
    out.flush()?;
    let mut m = create(&a.manifest)?;
    manifest.write_jsonl(&mut m)?;
    m.flush()?;
    println!(
        "wrote {} records ({} diseases, {} symptoms) to {}",
        records.len(),
        cfg.n_diseases(),
        cfg.n_diseases() * cfg.symptoms_per_disease,
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let records = load_corpus(&a.corpus)?;
    let train_records = match a.holdout {
        Some(fraction) => {
            let (train, test) = split_corpus(&records, fraction, a.split_seed)?;
            if let Some(path) = &a.test_out {
                let mut out = create(path)?;
                write_corpus(&test, &mut out)?;
                out.flush()?;
            }
            println!("split: {} train, {} held out", train.len(), test.len());
            train
        }
        None => records,
    };
    let cfg = TrainConfig {
        net: NetConfig {
            dim: a.dim,
            lambda: a.lambda,
            seed: a.seed,
            use_bias: a.bias,
            regularize_embeddings: !a.no_embedding_penalty,
            leaf_gradient: if a.softmax_leaf_gradient {
                LeafGradient::SoftmaxOnly
            } else {
                LeafGradient::Complete
            },
            ..NetConfig::default()
        },
        epochs: a.epochs,
        step_vector: a.step_vector.unwrap_or(a.step),
        step_weight: a.step_weight.unwrap_or(a.step),
        step_softmax: a.step_softmax.unwrap_or(a.step),
        mode: a.mode.into(),
        eval_every: a.eval_every,
        loss_threshold: a.threshold,
        shuffle: !a.no_shuffle,
        update: if a.full_batch {
            UpdateMode::FullBatch
        } else {
            UpdateMode::PerTree
        },
    };
    let outcome = train(&train_records, &cfg)?;
    save_checkpoint(&outcome.checkpoint, &a.out)?;
    if let Some(path) = &a.stats {
        let mut out = create(path)?;
        write_stats_csv(&outcome.history, &mut out)?;
        out.flush()?;
    }
    if let Some(path) = &a.knowledge {
        let mut out = create(path)?;
        outcome
            .checkpoint
            .knowledge
            .write_tsv(&outcome.checkpoint.vocabulary, &mut out)?;
        out.flush()?;
    }
    let vocab = &outcome.checkpoint.vocabulary;
    println!(
        "V={} C={} knowledge={} trees={} skipped={}",
        vocab.len(),
        vocab.num_classes(),
        outcome.checkpoint.knowledge.len(),
        train_records.len() - outcome.skipped,
        outcome.skipped
    );
    if let Some(last) = outcome.history.last() {
        println!(
            "epoch {}: loss={:.4} P@10={:.4} DCG={:.4}",
            last.epoch, last.loss, last.p_at_10, last.dcg
        );
    }
    if let Some(best) = select_model(&outcome.history) {
        println!("selected epoch: {best}");
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&a.model)?;
    let records = load_corpus(&a.corpus)?;
    let opts = EvalOptions {
        depth: a.depth,
        gold_match: if a.require_all { GoldMatch::All } else { GoldMatch::Any },
        ..EvalOptions::default()
    };
    let report = evaluate(&records, &ckpt, a.mode.into(), &opts)?;
    print!("{}", report.summary());
    if let Some(dir) = &a.out_dir {
        fs::create_dir_all(dir)?;
        let mut out = create(&dir.join("report.csv"))?;
        report.write_csv(&mut out)?;
        out.flush()?;
        let mut out = create(&dir.join("rankings.csv"))?;
        write_rankings_csv(&report.results, &ckpt.vocabulary, a.top, &mut out)?;
        out.flush()?;
        let mut out = create(&dir.join("dcg.csv"))?;
        report.write_dcg_csv(&mut out)?;
        out.flush()?;
    }
    Ok(EXIT_OK)
}

fn cmd_diagnose(a: DiagnoseArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&a.model)?;
    let records = load_corpus(&a.corpus)?;
    let selected: Vec<_> = records
        .iter()
        .filter(|r| a.record.as_ref().is_none_or(|id| &r.id == id))
        .collect();
    if selected.is_empty() {
        return Err(Error::Config("no matching records".into()));
    }
    let mode = a.mode.into();
    for record in selected {
        let result = diagnose(record, &ckpt, mode)?;
        println!("{}", record.id);
        if result.undiagnosable {
            println!("  undiagnosable: no usable evidence");
            continue;
        }
        for (rank, (c, p)) in result.ranking.iter().take(a.top).enumerate() {
            println!("  {:>3}. {} ({:.4})", rank + 1, ckpt.vocabulary.class_name(*c), p);
        }
        if a.dump_tree {
            let mut tree = record_tree(record, &ckpt, mode)?;
            let trace = crate::network::forward(&tree, &ckpt.params)?;
            tree.set_targets(trace.nodes.into_iter().map(|n| n.y).collect())?;
            print!("{}", tree.render(&ckpt.vocabulary));
        }
    }
    Ok(EXIT_OK)
}

fn cmd_export(a: ExportArgs) -> Result<i32> {
    let ckpt = load_checkpoint(&a.model)?;
    let kind = a.diseases_only.then_some(EntityKind::Disease);
    let rows = export_embeddings(&ckpt, &a.out, kind)?;
    println!("wrote {rows} embeddings to {}", a.out.display());
    Ok(EXIT_OK)
}

fn cmd_project(a: ProjectArgs) -> Result<i32> {
    let (entities, matrix) = parse_embeddings(&fs::read_to_string(&a.input)?)?;
    let manifest = match &a.manifest {
        Some(p) => Some(GenManifest::read_jsonl(&fs::read_to_string(p)?)?),
        None => None,
    };
    let projection = project_2d(&matrix, a.seed)?;
    let mut out = create(&a.out)?;
    writeln!(out, "name\tkind\tcategory\tx\ty")?;
    for (i, e) in entities.iter().enumerate() {
        let category = manifest
            .as_ref()
            .and_then(|m| m.category_of(&e.name))
            .map(|c| c.to_string())
            .unwrap_or_default();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.name,
            e.kind,
            category,
            projection.coords[(i, 0)],
            projection.coords[(i, 1)]
        )?;
    }
    out.flush()?;
    println!(
        "projected {} points; axis variances {:.6} {:.6}",
        entities.len(),
        projection.variances[0],
        projection.variances[1]
    );
    Ok(EXIT_OK)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<i32> {
    let cfg = GradcheckConfig {
        trials: a.trials,
        dims: a.dim,
        classes: a.classes,
        lambdas: a.lambda,
        eps: a.eps,
        seed: a.seed,
        ..GradcheckConfig::default()
    };
    if cfg.dims.iter().any(|&d| d < 2) || cfg.classes.contains(&0) {
        return Err(Error::Config("dimensions must be >= 2 and classes >= 1".into()));
    }
    let report = gradcheck::run(&cfg)?;
    let max = report.max_relative_error();
    println!("trials: {}", report.trials.len());
    println!("max relative error: {max:.3e}");
    if let Some(w) = report.worst() {
        println!(
            "worst trial: #{} (d={}, C={}, lambda={}, leaves={})",
            w.trial, w.dim, w.classes, w.lambda, w.leaves
        );
    }
    Ok(if max < a.tolerance { EXIT_OK } else { EXIT_FAILURE })
}
