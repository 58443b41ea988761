//! Command-line front-end. Every subcommand reads and writes files only,
//! and the same inputs and seed always produce byte-identical outputs.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::audio::read_wav;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{read_gram, write_gram, Extractor, FeatureGram, FeatureKind, GramManifest, MANIFEST_NAME};
use crate::metrics::{breakdown, breakdown_tsv, read_tdcf_config, MetricSummary, TdcfParams};
use crate::model::{score_dataset_parallel, train, Checkpoint, Dataset, ResNet};
use crate::objectives::ObjectiveKind;
use crate::protocol::{Label, Protocol};
use crate::replay::{corpus::wav_path, generate_corpus};
use crate::scoring::{attach_labels, mean_fuse, read_scores, write_scores, FusionModel, ScoreRecord};

#[derive(Debug, Parser)]
#[command(name = "antispoof", version, about = "Replay-attack countermeasure toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic replay corpus with train/dev/eval protocols.
    Simulate(SimulateArgs),
    /// Compute feature grams for every utterance of a protocol.
    Extract(ExtractArgs),
    /// Train a countermeasure network and save the best dev checkpoint.
    Train(TrainArgs),
    /// Score every utterance of a protocol.
    Score(ScoreArgs),
    /// Combine score files by averaging or logistic regression.
    Fuse(FuseArgs),
    /// Print EER and normalized min t-DCF.
    Evaluate(EvaluateArgs),
    /// Per-attack-code EER and min t-DCF table.
    Breakdown(BreakdownArgs),
    /// Absolute input gradient of one feature gram.
    Saliency(SaliencyArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub sources: usize,
    #[arg(long)]
    pub utts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long, value_parser = |s: &str| s.parse::<FeatureKind>())]
    pub feature: FeatureKind,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub wav_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Block-average the gram down to BINSxFRAMES, e.g. `32x32`.
    #[arg(long, value_parser = parse_pool)]
    pub pool: Option<(usize, usize)>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub feature_dir: PathBuf,
    #[arg(long)]
    pub protocol_train: PathBuf,
    #[arg(long)]
    pub protocol_dev: PathBuf,
    #[arg(long, value_parser = |s: &str| s.parse::<ObjectiveKind>())]
    pub objective: Option<ObjectiveKind>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Checkpoint path; the training log goes to `<out>.log`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub feature_dir: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseMethod {
    Mean,
    Lr,
}

fn parse_method(s: &str) -> Result<FuseMethod> {
    match s {
        "mean" => Ok(FuseMethod::Mean),
        "lr" => Ok(FuseMethod::Lr),
        _ => Err(Error::param(format!("unknown fusion method '{s}' (expected mean or lr)"))),
    }
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: FuseMethod,
    #[arg(long, num_args = 1.., required = true)]
    pub scores: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub dev_scores: Vec<PathBuf>,
    #[arg(long)]
    pub dev_protocol: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also save the fitted fusion model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub tdcf_config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BreakdownArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub protocol: PathBuf,
    #[arg(long)]
    pub tdcf_config: Option<PathBuf>,
    /// Write the table here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SaliencyArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub feature: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Class whose log-probability is differentiated.
    #[arg(long, default_value = "bonafide", value_parser = |s: &str| s.parse::<Label>())]
    pub class: Label,
}

fn parse_pool(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::param(format!("pool size '{s}' is not BINSxFRAMES"));
    let (b, f) = s.split_once('x').ok_or_else(bad)?;
    match (b.parse(), f.parse()) {
        (Ok(b), Ok(f)) if b > 0 && f > 0 => Ok((b, f)),
        _ => Err(bad()),
    }
}

/// Run one parsed command, writing any report to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train_cmd(a, out),
        Command::Score(a) => score(a),
        Command::Fuse(a) => fuse(a),
        Command::Evaluate(a) => evaluate(a, out),
        Command::Breakdown(a) => breakdown_cmd(a, out),
        Command::Saliency(a) => saliency(a),
    }
}

/// Parse `args` (program name first) and run. Returns the process exit
/// code; failures are reported on `err` as `<category>: <message>`.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "usage: {first}");
            return 1;
        }
    };
    match run(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            let _ = writeln!(err, "{}: {msg}", e.category());
            1
        }
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let mut cc = Config::load_or_default(a.config.as_deref())?.corpus;
    cc.n_sources = a.sources;
    cc.utts_per_source = a.utts;
    cc.seed = a.seed;
    if a.out.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::AlreadyExists,
            format!("output directory {} already exists", a.out.display()),
        )));
    }
    generate_corpus(&cc, a.jobs)?.write(&a.out)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let mut fc = Config::load_or_default(a.config.as_deref())?.features;
    if (a.rho.is_some() || a.lambda.is_some()) && a.feature != FeatureKind::Mgd {
        return Err(Error::param("--rho and --lambda apply to the mgd feature only"));
    }
    if let Some(r) = a.rho {
        fc.mgd.rho = r;
    }
    if let Some(l) = a.lambda {
        fc.mgd.lambda = l;
    }
    fc.mgd.validate()?;
    if a.pool.is_some() {
        fc.pool = a.pool;
    }
    let protocol = Protocol::read(&a.protocol)?;
    fs::create_dir_all(&a.out)?;
    let ids: Vec<&str> = protocol.entries.iter().map(|e| e.utt_id.as_str()).collect();
    let jobs = a.jobs.clamp(1, ids.len().max(1));
    let per = ids.len().div_ceil(jobs).max(1);
    let results: Vec<Result<()>> = std::thread::scope(|scope| {
        let handles: Vec<_> = ids
            .chunks(per)
            .map(|part| {
                let (wav_dir, out) = (&a.wav_dir, &a.out);
                scope.spawn(move || -> Result<()> {
                    let mut ex = Extractor::new(fc);
                    for id in part {
                        let w = read_wav(wav_path_in(wav_dir, id))?.with_id(*id);
                        let g = ex.extract(&w, a.feature)?;
                        write_gram(&g, GramManifest::gram_path(out, id))?;
                    }
                    Ok(())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("extraction worker panicked")).collect()
    });
    for r in results {
        r?;
    }
    // Several protocols may share one feature directory.
    let mut manifest = if a.out.join(MANIFEST_NAME).exists() {
        GramManifest::read(&a.out)?
    } else {
        GramManifest::default()
    };
    manifest
        .entries
        .extend(ids.iter().map(|id| (id.to_string(), GramManifest::gram_path(&a.out, id))));
    manifest.write(&a.out)
}

/// `<dir>/<id>.wav`, also accepting a corpus root that holds a `wav/`
/// subdirectory.
fn wav_path_in(dir: &Path, id: &str) -> PathBuf {
    let direct = dir.join(format!("{id}.wav"));
    if direct.exists() {
        direct
    } else {
        wav_path(dir, id)
    }
}

fn load_split(feature_dir: &Path, protocol: &Path) -> Result<Dataset> {
    Dataset::load(&GramManifest::read(feature_dir)?, &Protocol::read(protocol)?)
}

fn log_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = Config::load_or_default(a.config.as_deref())?;
    let mut tc = cfg.train.clone();
    if let Some(o) = a.objective {
        tc.objective = o;
    }
    if let Some(g) = a.gamma {
        tc.gamma = g;
    }
    if let Some(s) = a.seed {
        tc.seed = s;
    }
    let tr = load_split(&a.feature_dir, &a.protocol_train)?;
    let dev = load_split(&a.feature_dir, &a.protocol_dev)?;
    let mut mc = cfg.model.clone();
    mc.input_bins = tr.bins;
    mc.input_frames = tr.frames;
    let outcome = train(ResNet::new(mc, tc.seed)?, &tr, &dev, &tc)?;
    outcome.best.save(&a.out)?;
    outcome.log.write(log_path(&a.out))?;
    let best = &outcome.log.epochs[outcome.best_epoch - 1];
    writeln!(out, "best_epoch={} dev_eer={:.6}", outcome.best_epoch, best.dev_eer)?;
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.model()?;
    let data = load_split(&a.feature_dir, &a.protocol)?;
    let records = score_dataset_parallel(&model, &data, a.jobs)?;
    let plain: Vec<ScoreRecord> = records.into_iter().map(|r| ScoreRecord::new(r.utt_id, r.score)).collect();
    write_scores(&plain, &a.out)
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<Vec<ScoreRecord>>> {
    paths.iter().map(read_scores).collect()
}

fn fuse(a: FuseArgs) -> Result<()> {
    let systems = read_all(&a.scores)?;
    let model = match a.method {
        FuseMethod::Mean => {
            if !a.dev_scores.is_empty() || a.dev_protocol.is_some() {
                return Err(Error::param("mean fusion takes no dev scores"));
            }
            write_scores(&mean_fuse(&systems)?, &a.out)?;
            FusionModel::mean(systems.len())
        }
        FuseMethod::Lr => {
            let proto = a
                .dev_protocol
                .as_ref()
                .ok_or_else(|| Error::param("lr fusion needs --dev-scores and --dev-protocol"))?;
            if a.dev_scores.len() != a.scores.len() {
                return Err(Error::param(format!(
                    "{} dev score files for {} systems",
                    a.dev_scores.len(),
                    a.scores.len()
                )));
            }
            let m = FusionModel::train_on_dev(&read_all(&a.dev_scores)?, &Protocol::read(proto)?)?;
            write_scores(&m.apply(&systems)?, &a.out)?;
            m
        }
    };
    if let Some(p) = a.model_out {
        model.write(p)?;
    }
    Ok(())
}

fn labeled(scores: &Path, protocol: &Path) -> Result<Vec<ScoreRecord>> {
    attach_labels(&read_scores(scores)?, &Protocol::read(protocol)?)
}

fn tdcf(path: Option<&Path>) -> Result<TdcfParams> {
    path.map_or_else(|| Ok(TdcfParams::default()), read_tdcf_config)
}

fn evaluate(a: EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let s = MetricSummary::compute(&labeled(&a.scores, &a.protocol)?, &tdcf(a.tdcf_config.as_deref())?)?;
    writeln!(out, "{}", s.line())?;
    Ok(())
}

fn breakdown_cmd(a: BreakdownArgs, out: &mut dyn Write) -> Result<()> {
    let rows = breakdown(&labeled(&a.scores, &a.protocol)?, &tdcf(a.tdcf_config.as_deref())?)?;
    let table = breakdown_tsv(&rows);
    match a.out {
        Some(p) => fs::write(p, table)?,
        None => out.write_all(table.as_bytes())?,
    }
    Ok(())
}

fn saliency(a: SaliencyArgs) -> Result<()> {
    let model = Checkpoint::load(&a.ckpt)?.model()?;
    let id = a.feature.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let g: FeatureGram = read_gram(&a.feature, &id)?;
    write_gram(&model.saliency(&g, a.class.class_index())?, &a.out)
}
