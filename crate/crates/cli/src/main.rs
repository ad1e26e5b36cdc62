use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gaitlab::checkpoint::{Checkpoint, CheckpointKind};
use gaitlab::data::{export_csv, fit_norm_stats, import_dataset, loocv_splits, recording_file_name, synthesize_recording, Fold, Recording, IMU_CHANNELS};
use gaitlab::eval::evaluate;
use gaitlab::experiment::{pretrain_seed, run_matrix, Algorithm, ExperimentConfig, FoldData};
use gaitlab::model::{AnyModel, Arch, PhaseModel, Profile};
use gaitlab::planner::{latency_bench, CsvStream, StreamEstimator, TemplateSet};
use gaitlab::pretrain::{transfer_weights, Variant};

#[derive(Parser, Debug)]
#[command(name = "gaitlab", version, about = "Gait phase estimation lab")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize)]
struct Global {
    /// Experiment config (JSON); also accepts a `config.json` written by a previous run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = ProfileArg::Desk)]
    profile: ProfileArg,
    /// Look-back window length in samples.
    #[arg(long, global = true, default_value_t = 100)]
    lb: usize,
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
enum ProfileArg {
    Desk,
    Paper,
}

impl From<ProfileArg> for Profile {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::Desk => Profile::Desk,
            ProfileArg::Paper => Profile::Paper,
        }
    }
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Command {
    /// Generate a synthetic cohort as one CSV per subject.
    Gen(GenArgs),
    /// Masked-reconstruction pre-training on one fold's training subjects.
    Pretrain(PretrainArgs),
    /// Fine-tune a phase estimator on one fold.
    Finetune(FinetuneArgs),
    /// Per-sample evaluation of a checkpoint on held-out subjects.
    Eval(EvalArgs),
    /// Stream CSV rows through a checkpoint and the trajectory planner.
    Plan(PlanArgs),
    /// End-to-end per-sample latency.
    Bench(BenchArgs),
    /// Algorithm × look-back × seed cross-validation matrix.
    Matrix(MatrixArgs),
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[arg(long, default_value_t = 10)]
    subjects: u32,
}

#[derive(Args, Debug, Serialize)]
struct PretrainArgs {
    /// Dataset directory written by `gen`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// full, wdl, fvr, nclm or wpsv.
    #[arg(long, default_value = "full")]
    variant: String,
}

#[derive(Args, Debug, Serialize)]
#[command(group(ArgGroup::new("init").required(true).args(["from_pretrained", "from_scratch"])))]
struct FinetuneArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    fold: usize,
    /// Pre-training checkpoint whose backbone initialises the model.
    #[arg(long)]
    from_pretrained: Option<PathBuf>,
    /// Train from a fresh initialisation.
    #[arg(long)]
    from_scratch: bool,
    /// Model recipe when training from scratch: tctst, mlp, patch or patchtst.
    #[arg(long, default_value = "tctst")]
    algorithm: String,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate on this fold's test subjects.
    #[arg(long, default_value_t = 0)]
    fold: usize,
}

#[derive(Args, Debug, Serialize)]
struct PlanArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Template file `{terrain: [101 angles]}`; defaults to the generator's curves.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Recording-style CSV; standard input when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Release samples on a 100 Hz clock.
    #[arg(long)]
    paced: bool,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    /// Checkpoint to time; a freshly initialised model of the profile otherwise.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
    #[arg(long, default_value_t = 100)]
    warmup: usize,
    #[arg(long)]
    paced: bool,
}

#[derive(Args, Debug, Serialize)]
struct MatrixArgs {
    #[arg(long, value_delimiter = ',', default_value = "tctst,tctst-pt")]
    algorithms: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "50,100,150,200")]
    lbs: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    seeds: Vec<u64>,
}

/// Everything needed to rerun a command, written as `config.json`.
#[derive(Serialize)]
struct RunConfig<'a> {
    command: &'a Command,
    global: &'a Global,
    experiment: &'a ExperimentConfig,
}

fn load_experiment(g: &Global) -> Result<ExperimentConfig> {
    let cfg = match &g.config {
        None => ExperimentConfig::for_profile(g.profile.into()),
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let inner = value.get("experiment").cloned().unwrap_or(value);
            serde_json::from_value(inner).with_context(|| format!("invalid experiment config in {}", path.display()))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(g: &Global) -> Result<&Path> {
    g.out.as_deref().ok_or_else(|| anyhow!("--out is required for this command"))
}

fn prepare_out(dir: &Path, run: &RunConfig) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(run)?).with_context(|| format!("writing {}", p.display()))?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

fn fold_of(recs: &[Recording], index: usize) -> Result<Fold> {
    let ids: Vec<u32> = recs.iter().map(|r| r.subject_id).collect();
    let folds = loocv_splits(&ids)?;
    folds
        .get(index)
        .cloned()
        .ok_or_else(|| anyhow!("fold {index} out of range (0..{})", folds.len()))
}

fn log_file(dir: &Path, name: &str) -> Result<BufWriter<fs::File>> {
    let p = dir.join(name);
    Ok(BufWriter::new(fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?))
}

fn cmd_gen(a: &GenArgs, g: &Global, cfg: &ExperimentConfig, run: &RunConfig) -> Result<()> {
    let dir = out_dir(g)?;
    prepare_out(dir, run)?;
    let mut files = Vec::new();
    for s in 0..a.subjects {
        let rec = synthesize_recording(&cfg.generator, s, g.seed)?;
        let name = recording_file_name(s);
        export_csv(&rec, &dir.join(&name))?;
        files.push(serde_json::json!({"subject": s, "file": name, "samples": rec.len(), "strides": rec.stride_starts.len()}));
    }
    write_json(
        &dir.join("manifest.json"),
        &serde_json::json!({"subjects": a.subjects, "seed": g.seed, "generator": cfg.generator, "recordings": files}),
    )?;
    write_json(&dir.join("templates.json"), &serde_json::from_str::<serde_json::Value>(&TemplateSet::from_generator(&cfg.generator)?.to_json()?)?)?;
    println!("wrote {} recordings to {}", a.subjects, dir.display());
    Ok(())
}

fn cmd_pretrain(a: &PretrainArgs, g: &Global, cfg: &ExperimentConfig, run: &RunConfig) -> Result<()> {
    let dir = out_dir(g)?;
    let variant: Variant = a.variant.parse()?;
    let algo = Algorithm {
        name: variant.name().into(),
        arch: Arch::Tctst,
        embedding: gaitlab::model::EmbeddingKind::Tcn,
        pretrain: Some(variant),
    };
    let recs = import_dataset(&a.data)?;
    let data = FoldData::new(&recs, &fold_of(&recs, a.fold)?)?;
    prepare_out(dir, run)?;
    let pcfg = cfg.pretrain_for(&algo).expect("pre-training algorithm");
    let model_cfg = cfg.model_config(&algo, g.lb);
    let mut log = log_file(dir, "pretrain_log.jsonl")?;
    let seed = pretrain_seed(g.seed);
    let (mut ckpt, report) = data.pretrain(&model_cfg, &pcfg, &cfg.pretrain_train, seed, Some(&mut log))?;
    ckpt.seeds.insert("fold".into(), a.fold as u64);
    ckpt.save(&dir.join("checkpoint"))?;
    write_json(&dir.join("report.json"), &report)?;
    println!("pre-training best validation loss {:.6} at epoch {}", report.best_val, report.best_epoch);
    Ok(())
}

fn cmd_finetune(a: &FinetuneArgs, g: &Global, cfg: &ExperimentConfig, run: &RunConfig) -> Result<()> {
    let dir = out_dir(g)?;
    let recs = import_dataset(&a.data)?;
    let fold = fold_of(&recs, a.fold)?;
    let data = FoldData::new(&recs, &fold)?;
    let (model, algo, pre) = match &a.from_pretrained {
        Some(path) => {
            let pre = Checkpoint::load(path)?;
            if pre.kind != CheckpointKind::Pretrain {
                bail!("{} is not a pre-training checkpoint", path.display());
            }
            let pcfg = pre.pretrain.clone().ok_or_else(|| anyhow!("checkpoint lacks its pre-training config"))?;
            if pre.norm_stats.as_ref() != Some(&data.norm) {
                bail!("{} was pre-trained on different training subjects than fold {}", path.display(), a.fold);
            }
            let variant = Variant::ALL
                .into_iter()
                .find(|v| {
                    let f = gaitlab::pretrain::PretrainConfig::variant(*v);
                    (f.use_decoder, f.reconstruct_features, f.mask_2d, f.include_phase_channels)
                        == (pcfg.use_decoder, pcfg.reconstruct_features, pcfg.mask_2d, pcfg.include_phase_channels)
                })
                .ok_or_else(|| anyhow!("unrecognised pre-training variant"))?;
            let algo = Algorithm::preset(if variant == Variant::Full { "tctst-pt" } else { variant.name() })?;
            let mut model_cfg = pre.config.clone();
            model_cfg.channels = pcfg.finetune_rows().channels();
            let mut fresh = gaitlab::model::TctstModel::<f32>::new(model_cfg, g.seed)?;
            transfer_weights(&pre, &mut fresh)?;
            (AnyModel::Tctst(fresh), algo, Some(pcfg))
        }
        None => {
            let algo = Algorithm::preset(&a.algorithm)?;
            if algo.pretrain.is_some() {
                bail!("algorithm {} needs --from-pretrained", a.algorithm);
            }
            (AnyModel::new(algo.arch, cfg.model_config(&algo, g.lb), g.seed)?, algo, None)
        }
    };
    prepare_out(dir, run)?;
    let rows = pre.as_ref().map_or(gaitlab::data::PhaseRows::Zeros, |p| p.finetune_rows());
    let mut log = log_file(dir, "finetune_log.jsonl")?;
    let (model, report) = data.finetune(model, rows, &cfg.finetune, g.seed, Some(&mut log))?;
    let mut ckpt = Checkpoint::from_model(&model);
    ckpt.norm_stats = Some(data.norm.clone());
    ckpt.pretrain = pre;
    ckpt.seeds.insert("finetune".into(), g.seed);
    ckpt.seeds.insert("fold".into(), a.fold as u64);
    ckpt.save(&dir.join("checkpoint"))?;
    write_json(&dir.join("report.json"), &serde_json::json!({"algorithm": algo.name, "fold": fold, "fit": report}))?;
    println!("fine-tuning best validation MSE {:.6} at epoch {}", report.best_val, report.best_epoch);
    Ok(())
}

fn load_phase_model(path: &Path) -> Result<(AnyModel<f32>, Checkpoint)> {
    let ckpt = Checkpoint::load(path)?;
    if ckpt.kind == CheckpointKind::Pretrain {
        bail!("{} is a pre-training checkpoint; fine-tune it first", path.display());
    }
    if ckpt.norm_stats.is_none() {
        bail!("{} carries no normalisation statistics", path.display());
    }
    Ok((ckpt.to_model()?, ckpt))
}

fn rows_of(ckpt: &Checkpoint) -> gaitlab::data::PhaseRows {
    if ckpt.config.has_phase_rows() {
        gaitlab::data::PhaseRows::Zeros
    } else {
        gaitlab::data::PhaseRows::Omitted
    }
}

fn cmd_eval(a: &EvalArgs, g: &Global, run: &RunConfig) -> Result<()> {
    let dir = out_dir(g)?;
    let (model, ckpt) = load_phase_model(&a.checkpoint)?;
    let recs = import_dataset(&a.data)?;
    let fold = fold_of(&recs, a.fold)?;
    let norm = ckpt.norm_stats.as_ref().expect("checked on load");
    let test: Vec<Recording> = recs.iter().filter(|r| fold.test.contains(&r.subject_id)).map(|r| norm.apply(r)).collect();
    prepare_out(dir, run)?;
    let result = evaluate(&model, &test, rows_of(&ckpt))?;
    write_json(&dir.join("metrics.json"), &result.summary_json())?;
    fs::write(dir.join("metrics.csv"), result.to_csv())?;
    let s = result.subject_mean(gaitlab::eval::Scope::All);
    println!("phase RMSE {:.3}% ± {:.3}, rate MAE {:.4}% over {} subjects", s.phase_rmse, s.phase_rmse_sd, s.rate_mae, s.subjects);
    Ok(())
}

fn load_templates(path: Option<&Path>, cfg: &ExperimentConfig) -> Result<TemplateSet> {
    Ok(match path {
        Some(p) => TemplateSet::load(p)?,
        None => TemplateSet::from_generator(&cfg.generator)?,
    })
}

fn cmd_plan(a: &PlanArgs, g: &Global, cfg: &ExperimentConfig, run: &RunConfig) -> Result<()> {
    if let Some(dir) = &g.out {
        prepare_out(dir, run)?;
    }
    let (model, ckpt) = load_phase_model(&a.checkpoint)?;
    let templates = load_templates(a.templates.as_deref(), cfg)?;
    let norm = ckpt.norm_stats.clone().expect("checked on load");
    let mut est = StreamEstimator::new(model, norm, rows_of(&ckpt), templates)?;
    let input: Box<dyn BufRead> = match &a.input {
        Some(p) => Box::new(io::BufReader::new(fs::File::open(p).with_context(|| format!("opening {}", p.display()))?)),
        None => Box::new(io::stdin().lock()),
    };
    let mut stream = CsvStream::new(input)?;
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "t,phase_pct,rate_pct,event,target_deg,latency_ms")?;
    let period = Duration::from_millis(10);
    let mut next_tick = Instant::now();
    let mut n = 0usize;
    while let Some(row) = stream.next_row()? {
        if a.paced {
            let now = Instant::now();
            if next_tick > now {
                std::thread::sleep(next_tick - now);
            }
            next_tick += period;
        }
        let t = row.t.unwrap_or(n as f64 / gaitlab::data::SAMPLE_RATE_HZ);
        match est.push(&row.channels[..IMU_CHANNELS], row.terrain)? {
            None => writeln!(out, "{t},,,,,")?,
            Some(o) => {
                let target = o.plan.target_deg.map(|v| v.to_string()).unwrap_or_default();
                writeln!(
                    out,
                    "{t},{},{},{},{target},{:.4}",
                    o.plan.state.phase * 100.0,
                    o.plan.state.rate * 100.0,
                    u8::from(o.plan.event),
                    o.latency_ms
                )?;
            }
        }
        if a.paced {
            out.flush()?;
        }
        n += 1;
    }
    out.flush()?;
    Ok(())
}

fn cmd_bench(a: &BenchArgs, g: &Global, cfg: &ExperimentConfig, run: &RunConfig) -> Result<()> {
    let rec = synthesize_recording(&cfg.generator, 0, g.seed)?;
    let (model, norm, rows) = match &a.checkpoint {
        Some(p) => {
            let (m, c) = load_phase_model(p)?;
            let rows = rows_of(&c);
            (m, c.norm_stats.expect("checked on load"), rows)
        }
        None => {
            let algo = Algorithm::preset("tctst")?;
            let m = AnyModel::new(Arch::Tctst, cfg.model_config(&algo, g.lb), g.seed)?;
            (m, fit_norm_stats(std::slice::from_ref(&rec))?, gaitlab::data::PhaseRows::Zeros)
        }
    };
    let model_cfg = model.config().clone();
    let templates = TemplateSet::from_generator(&cfg.generator)?;
    let mut est = StreamEstimator::new(model, norm, rows, templates)?;
    let stream: Vec<([f32; IMU_CHANNELS], gaitlab::data::Terrain)> = (0..rec.len())
        .map(|n| {
            let mut s = [0f32; IMU_CHANNELS];
            for (c, v) in s.iter_mut().enumerate() {
                *v = rec.sample(c, n);
            }
            (s, rec.terrain[n])
        })
        .collect();
    let report = latency_bench(&mut est, &stream, a.warmup, a.samples, a.paced)?;
    if let Some(dir) = &g.out {
        prepare_out(dir, run)?;
        write_json(&dir.join("latency.json"), &serde_json::json!({"model": model_cfg, "report": report}))?;
    }
    println!(
        "median {:.3} ms, p99 {:.3} ms, max {:.3} ms, {} of {} samples over {} ms",
        report.median_ms, report.p99_ms, report.max_ms, report.deadline_misses, report.samples, report.deadline_ms
    );
    Ok(())
}

fn cmd_matrix(a: &MatrixArgs, g: &Global, cfg: &ExperimentConfig, run: &RunConfig) -> Result<()> {
    let dir = out_dir(g)?;
    let algos: Vec<Algorithm> = a.algorithms.iter().map(|n| Algorithm::preset(n)).collect::<gaitlab::Result<_>>()?;
    prepare_out(dir, run)?;
    let m = run_matrix(cfg, &algos, &a.lbs, &a.seeds, Some(dir))?;
    print!("{}", m.results_csv());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if g.lb == 0 {
        bail!("--lb must be positive");
    }
    let cfg = load_experiment(g)?;
    let run = RunConfig {
        command: &cli.command,
        global: g,
        experiment: &cfg,
    };
    match &cli.command {
        Command::Gen(a) => cmd_gen(a, g, &cfg, &run),
        Command::Pretrain(a) => cmd_pretrain(a, g, &cfg, &run),
        Command::Finetune(a) => cmd_finetune(a, g, &cfg, &run),
        Command::Eval(a) => cmd_eval(a, g, &run),
        Command::Plan(a) => cmd_plan(a, g, &cfg, &run),
        Command::Bench(a) => cmd_bench(a, g, &cfg, &run),
        Command::Matrix(a) => cmd_matrix(a, g, &cfg, &run),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
