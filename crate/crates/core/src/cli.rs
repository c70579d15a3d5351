//! Batch command-line surface. Every command writes its outputs and a
//! `manifest-<command>.json` into `--out`.
//!
//! Exit codes: 0 success, 2 input or configuration error, 3 numerical
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Model, load_dir};
use crate::config::PipelineConfig;
use crate::corpus::{
    PairRecord, TruthMap, author_records, dataset_stats, load_pairs, load_truth, save_pairs, save_truth,
    split_train_dev, write_atomic,
};
use crate::error::{Error, Result};
use crate::evaluate::evaluate_answers;
use crate::heatmap::{pair_heat, render_html};
use crate::infer::{default_grid, ensemble_probabilities, grid_search_delta, load_answers, predict, save_answers};
use crate::resample::{AuthorPool, sample_pairs, write_epoch};
use crate::seed::derive;
use crate::synth::{SynthConfig, generate_corpus};
use crate::train::{build_vocabulary, init_model, prepare_pairs, prepare_training_set, train_ensemble};

#[derive(Debug, Parser)]
#[command(name = "bayes-av", version, about = "Authorship verification with Bayes factor scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dataset counts, optionally with the train/dev split applied.
    Stats(StatsArgs),
    /// Label-stratified train/dev split with leak removal.
    Split(SplitArgs),
    /// Build and save the vocabulary.
    Vocab(VocabArgs),
    /// Write resampled training epochs.
    Sample(SampleArgs),
    /// Train the ensemble and write one checkpoint per member.
    Train(TrainArgs),
    /// Calibrate the non-answer band on labeled pairs.
    Calibrate(CalibrateArgs),
    /// Write answers for unlabeled pairs.
    Predict(PredictArgs),
    /// Score answers against the truth.
    Evaluate(EvaluateArgs),
    /// Attention heatmap of one pair.
    Heatmap(HeatmapArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct Output {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Also report the split counts at this dev fraction.
    #[arg(long)]
    pub dev_fraction: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional directory for stats.json and the manifest.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub dev_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct VocabArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Labeled pairs for per-epoch checkpoint selection.
    #[arg(long, requires = "dev_truth")]
    pub dev_pairs: Option<PathBuf>,
    #[arg(long, requires = "dev_pairs")]
    pub dev_truth: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `train.seed` of the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint directory; defaults to `--out`.
    #[arg(long)]
    pub checkpoints: Option<PathBuf>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Comma-separated candidate half-widths; defaults to 0.00..0.25.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Non-answer half-width; defaults to `calibration.json` in the
    /// checkpoint directory, else 0.
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub answers: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub pairs: PathBuf,
    #[arg(long)]
    pub pair_id: String,
    #[arg(long)]
    pub checkpoints: PathBuf,
    /// Ensemble member to visualize.
    #[arg(long, default_value_t = 0)]
    pub member: usize,
    #[command(flatten)]
    pub out: Output,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub authors: Option<usize>,
    #[command(flatten)]
    pub out: Output,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub version: String,
    /// Seconds since the Unix epoch.
    pub started_at: u64,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub delta: f64,
    pub dev_auc: f64,
    pub dev_c_at_1: f64,
    pub dev_f_05_u: f64,
    pub dev_f1: f64,
    pub dev_overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub dev_fraction: f64,
    pub seed: u64,
    /// Non-dev pairs before leak removal.
    pub train: usize,
    pub dev: usize,
    pub leaked: usize,
    pub train_after_leak_removal: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    #[serde(flatten)]
    pub stats: crate::corpus::DatasetStats,
    pub documents: usize,
    pub split: Option<SplitCounts>,
}

struct Run {
    manifest: RunManifest,
    clock: Instant,
}

impl Run {
    fn start(command: &str) -> Self {
        let started_at = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            manifest: RunManifest {
                command: command.to_owned(),
                config: None,
                seeds: Vec::new(),
                inputs: Vec::new(),
                outputs: Vec::new(),
                version: env!("CARGO_PKG_VERSION").to_owned(),
                started_at,
                wall_clock_seconds: 0.0,
            },
            clock: Instant::now(),
        }
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.to_owned());
    }

    fn output(&mut self, p: PathBuf) {
        self.manifest.outputs.push(p);
    }

    fn finish(mut self, dir: &Path) -> Result<()> {
        self.manifest.wall_clock_seconds = self.clock.elapsed().as_secs_f64();
        let path = dir.join(format!("manifest-{}.json", self.manifest.command));
        write_json(&path, &self.manifest)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_labeled(pairs: &Path, truth: &Path, run: &mut Run) -> Result<(Vec<PairRecord>, TruthMap)> {
    run.input(pairs);
    run.input(truth);
    Ok((load_pairs(pairs)?, load_truth(truth)?))
}

fn load_models(dir: &Path) -> Result<Vec<Model>> {
    let models = load_dir(dir)?;
    if models.is_empty() {
        return Err(Error::InvalidArgument(format!("no model-*.json checkpoints in {}", dir.display())));
    }
    Ok(models)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() { 3 } else { 2 }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Stats(a) => stats(a),
        Command::Split(a) => split(a),
        Command::Vocab(a) => vocab(a),
        Command::Sample(a) => sample(a),
        Command::Train(a) => train(a),
        Command::Calibrate(a) => calibrate(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Heatmap(a) => heatmap(a),
        Command::Synth(a) => synth(a),
    }
}

pub fn stats_report(pairs: &[PairRecord], truth: &TruthMap, dev_fraction: Option<f64>, seed: u64) -> Result<StatsReport> {
    let stats = dataset_stats(pairs, truth);
    let mut docs = crate::corpus::DocumentStore::new();
    for p in pairs {
        for t in &p.texts {
            docs.intern(t);
        }
    }
    let split = match dev_fraction {
        Some(f) => {
            let s = split_train_dev(pairs, truth, f, seed)?;
            Some(SplitCounts {
                dev_fraction: f,
                seed,
                train: s.train.len() + s.leaked,
                dev: s.dev.len(),
                leaked: s.leaked,
                train_after_leak_removal: s.train.len(),
            })
        }
        None => None,
    };
    Ok(StatsReport {
        stats,
        documents: docs.len(),
        split,
    })
}

fn stats(a: StatsArgs) -> Result<()> {
    let mut run = Run::start("stats");
    let (pairs, truth) = load_labeled(&a.pairs, &a.truth, &mut run)?;
    let report = stats_report(&pairs, &truth, a.dev_fraction, a.seed)?;
    let s = &report.stats;
    println!("pairs       {}", s.pairs);
    println!("same        {}", s.same);
    println!("different   {}", s.different);
    println!("unlabeled   {}", s.unlabeled);
    println!("authors     {}", s.authors);
    println!("fandoms     {}", s.fandoms);
    println!("documents   {}", report.documents);
    if let Some(sp) = &report.split {
        println!("train       {}", sp.train);
        println!("dev         {}", sp.dev);
        println!("leaked      {}", sp.leaked);
    }
    if let Some(out) = &a.out {
        create_dir(out)?;
        run.manifest.seeds.push(a.seed);
        let p = out.join("stats.json");
        write_json(&p, &report)?;
        run.output(p);
        run.finish(out)?;
    }
    Ok(())
}

fn split(a: SplitArgs) -> Result<()> {
    let mut run = Run::start("split");
    run.manifest.seeds.push(a.seed);
    let (pairs, truth) = load_labeled(&a.pairs, &a.truth, &mut run)?;
    let s = split_train_dev(&pairs, &truth, a.dev_fraction, a.seed)?;
    let out = &a.out.out;
    create_dir(out)?;
    for (name, part) in [("train", &s.train), ("dev", &s.dev)] {
        let sub: TruthMap = part.iter().map(|p| (p.id.clone(), truth[&p.id].clone())).collect();
        let pp = out.join(format!("{name}-pairs.jsonl"));
        let tp = out.join(format!("{name}-truth.jsonl"));
        save_pairs(&pp, part)?;
        save_truth(&tp, &sub)?;
        run.output(pp);
        run.output(tp);
    }
    println!("train {}  dev {}  leaked {}", s.train.len(), s.dev.len(), s.leaked);
    run.finish(out)
}

fn vocab(a: VocabArgs) -> Result<()> {
    let mut run = Run::start("vocab");
    let cfg = load_config(a.config.as_deref())?;
    run.manifest.config = a.config.clone();
    run.input(&a.pairs);
    let pairs = load_pairs(&a.pairs)?;
    let v = build_vocabulary(&pairs, &cfg.preprocess)?;
    let out = &a.out.out;
    create_dir(out)?;
    let p = out.join("vocab.json");
    v.save(&p)?;
    run.output(p);
    println!("{} tokens, {} chars, {} fandom prefixes", v.num_tokens(), v.num_chars(), v.num_prefixes());
    run.finish(out)
}

fn sample(a: SampleArgs) -> Result<()> {
    let mut run = Run::start("sample");
    run.manifest.seeds.push(a.seed);
    let (pairs, truth) = load_labeled(&a.pairs, &a.truth, &mut run)?;
    let (records, store) = author_records(&pairs, &truth)?;
    let pool = AuthorPool::from_records(records)?;
    let out = &a.out.out;
    create_dir(out)?;
    // same stream as ensemble member 0 of `train --seed`
    let member = derive(a.seed, "member", 0);
    for e in 0..a.epochs {
        let examples = sample_pairs(&pool, derive(member, "epoch", e as u64));
        let p = write_epoch(out, &examples, &store, e)?;
        let same = examples.iter().filter(|x| x.same).count();
        println!("epoch {e}: {} pairs ({same} same)", examples.len());
        run.output(p);
    }
    run.finish(out)
}

fn train(a: TrainArgs) -> Result<()> {
    let mut run = Run::start("train");
    let mut cfg = load_config(a.config.as_deref())?;
    run.manifest.config = a.config.clone();
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let out = a.out.out.clone();
    let ckpt = a.checkpoints.clone().unwrap_or_else(|| out.clone());
    cfg.train.checkpoint_dir = Some(ckpt.clone());
    run.manifest.seeds = (0..cfg.train.ensemble_size).map(|i| derive(cfg.train.seed, "member", i as u64)).collect();
    run.manifest.seeds.insert(0, cfg.train.seed);

    let (pairs, truth) = load_labeled(&a.pairs, &a.truth, &mut run)?;
    let vocab = build_vocabulary(&pairs, &cfg.preprocess)?;
    let set = prepare_training_set(&pairs, &truth, &vocab, &cfg.preprocess)?;
    let dev = match (&a.dev_pairs, &a.dev_truth) {
        (Some(p), Some(t)) => {
            let (dp, dt) = load_labeled(p, t, &mut run)?;
            prepare_pairs(&dp, &dt, &vocab, &cfg.preprocess)?
        }
        _ => Vec::new(),
    };
    create_dir(&out)?;
    create_dir(&ckpt)?;
    let init = init_model(cfg.preprocess.clone(), vocab, cfg.encoder.clone(), cfg.train.seed)?;
    let outcomes = train_ensemble(&init, &set, &dev, &cfg.train)?;
    for (i, o) in outcomes.iter().enumerate() {
        let p = out.join(format!("train-report-{i}.csv"));
        o.report.write_csv(&p)?;
        run.output(p);
        run.output(crate::checkpoint::checkpoint_path(&ckpt, i));
        let m = &o.model.meta;
        println!(
            "member {i}: best epoch {} dev overall {}",
            m.epoch,
            m.dev_overall.map_or("n/a".to_owned(), |d| format!("{d:.3}"))
        );
    }
    let cp = out.join("config.toml");
    write_atomic(&cp, cfg.to_toml().as_bytes())?;
    run.output(cp);
    run.finish(&out)
}

fn calibrate(a: CalibrateArgs) -> Result<()> {
    let mut run = Run::start("calibrate");
    let (pairs, truth) = load_labeled(&a.pairs, &a.truth, &mut run)?;
    run.input(&a.checkpoints);
    let models = load_models(&a.checkpoints)?;
    let missing: Vec<String> = pairs.iter().filter(|p| !truth.contains_key(&p.id)).map(|p| p.id.clone()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingIds(missing));
    }
    let probs = ensemble_probabilities(&models, &pairs)?;
    let labels: Vec<bool> = pairs.iter().map(|p| truth[&p.id].same).collect();
    let grid = a.grid.unwrap_or_else(default_grid);
    let (delta, r) = grid_search_delta(&probs, &labels, &grid)?;
    let c = Calibration {
        delta,
        dev_auc: r.auc,
        dev_c_at_1: r.c_at_1,
        dev_f_05_u: r.f_05_u,
        dev_f1: r.f1,
        dev_overall: r.overall,
    };
    let out = &a.out.out;
    create_dir(out)?;
    let p = out.join("calibration.json");
    write_json(&p, &c)?;
    run.output(p);
    println!("delta {delta:.2}  overall {:.3}", r.overall);
    run.finish(out)
}

fn predict_cmd(a: PredictArgs) -> Result<()> {
    let mut run = Run::start("predict");
    run.input(&a.pairs);
    run.input(&a.checkpoints);
    let models = load_models(&a.checkpoints)?;
    let pairs = load_pairs(&a.pairs)?;
    let delta = match a.delta {
        Some(d) => d,
        None => {
            let p = a.checkpoints.join("calibration.json");
            if p.exists() {
                run.input(&p);
                let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
                let c: Calibration = serde_json::from_str(&text).map_err(|e| Error::Parse {
                    path: p.clone(),
                    line: e.line(),
                    message: e.to_string(),
                })?;
                c.delta
            } else {
                0.0
            }
        }
    };
    let answers = predict(&pairs, &models, delta)?;
    let out = &a.out.out;
    create_dir(out)?;
    let p = out.join("answers.jsonl");
    save_answers(&p, &answers)?;
    run.output(p);
    println!("{} answers from {} models, delta {delta}", answers.len(), models.len());
    run.finish(out)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let mut run = Run::start("evaluate");
    run.input(&a.answers);
    run.input(&a.truth);
    let answers = load_answers(&a.answers)?;
    let truth = load_truth(&a.truth)?;
    let r = evaluate_answers(answers.iter().map(|x| (x.id.as_str(), x.value)), &truth)?.rounded();
    let out = &a.out.out;
    create_dir(out)?;
    let p = out.join("evaluation.json");
    write_json(&p, &r)?;
    run.output(p);
    println!(
        "auc {:.3}  c@1 {:.3}  f_05_u {:.3}  F1 {:.3}  overall {:.3}",
        r.auc, r.c_at_1, r.f_05_u, r.f1, r.overall
    );
    run.finish(out)
}

fn heatmap(a: HeatmapArgs) -> Result<()> {
    let mut run = Run::start("heatmap");
    run.input(&a.pairs);
    let path = crate::checkpoint::checkpoint_path(&a.checkpoints, a.member);
    run.input(&path);
    let pairs = load_pairs(&a.pairs)?;
    let pair = pairs
        .iter()
        .find(|p| p.id == a.pair_id)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown pair id `{}`", a.pair_id)))?;
    let model = Model::load(&path)?;
    let report = pair_heat(
        &model,
        &pair.id,
        [&pair.texts[0], &pair.texts[1]],
        [&pair.fandoms[0], &pair.fandoms[1]],
    )?;
    let out = &a.out.out;
    create_dir(out)?;
    let html = out.join(format!("heatmap-{}.html", sanitize(&pair.id)));
    let json = out.join(format!("heatmap-{}.json", sanitize(&pair.id)));
    write_atomic(&html, render_html(&report).as_bytes())?;
    write_json(&json, &report)?;
    println!("{}", html.display());
    run.output(html);
    run.output(json);
    run.finish(out)
}

fn sanitize(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut run = Run::start("synth");
    run.manifest.seeds.push(a.seed);
    let mut cfg = SynthConfig {
        seed: a.seed,
        ..SynthConfig::default()
    };
    if let Some(n) = a.authors {
        cfg.authors = n;
    }
    let corpus = generate_corpus(&cfg)?;
    let out = &a.out.out;
    create_dir(out)?;
    for (name, sub) in [("train", &corpus.train), ("dev", &corpus.dev), ("test", &corpus.test)] {
        let pp = out.join(format!("{name}-pairs.jsonl"));
        let tp = out.join(format!("{name}-truth.jsonl"));
        save_pairs(&pp, &sub.pairs)?;
        save_truth(&tp, &sub.truth)?;
        run.output(pp);
        run.output(tp);
    }
    println!(
        "train {}  dev {}  test {} pairs",
        corpus.train.pairs.len(),
        corpus.dev.pairs.len(),
        corpus.test.pairs.len()
    );
    run.finish(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arguments_parse() {
        let c = Cli::try_parse_from(["bayes-av", "calibrate", "--pairs", "p", "--truth", "t", "--checkpoints", "c", "--grid", "0,0.05,0.1", "--out", "o"]).unwrap();
        match c.command {
            Command::Calibrate(a) => assert_eq!(a.grid, Some(vec![0.0, 0.05, 0.1])),
            _ => panic!("wrong command"),
        }
        assert!(Cli::try_parse_from(["bayes-av", "train", "--pairs", "p", "--truth", "t", "--dev-pairs", "d", "--out", "o"]).is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["bayes-av", "frobnicate"]), 2);
        assert_eq!(run(["bayes-av", "--help"]), 0);
    }

    #[test]
    fn numerical_errors_exit_3() {
        assert_eq!(exit_code(&Error::Numerical("x".into())), 3);
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 2);
    }
}
