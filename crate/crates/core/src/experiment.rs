//! Cross-validated runs: one fold, or the full algorithm × look-back matrix.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{fit_norm_stats, loocv_splits, synthesize_recording, Fold, GeneratorConfig, NormStats, PhaseRows, Recording, WindowSet, FOLD_COUNT};
use crate::model::PhaseModel;
use crate::eval::{evaluate, paired_t_test, RunResult, Scope, TTestReport};
use crate::model::{AnyModel, Arch, EmbeddingKind, Profile, TctstConfig};
use crate::pretrain::{pretrain_run, transfer_weights, PretrainConfig, Variant};
use crate::train::{finetune, FitReport, TrainConfig};
use crate::{Error, Result};

pub const LOOKBACKS: [usize; 4] = [50, 100, 150, 200];

/// A named training recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Algorithm {
    pub name: String,
    pub arch: Arch,
    pub embedding: EmbeddingKind,
    pub pretrain: Option<Variant>,
}

impl Algorithm {
    pub const PRESETS: [&'static str; 9] = ["tctst", "tctst-pt", "mlp", "patch", "patchtst", "wdl", "fvr", "nclm", "wpsv"];

    pub fn preset(name: &str) -> Result<Self> {
        let (arch, embedding, pretrain) = match name {
            "tctst" => (Arch::Tctst, EmbeddingKind::Tcn, None),
            "tctst-pt" => (Arch::Tctst, EmbeddingKind::Tcn, Some(Variant::Full)),
            "mlp" => (Arch::Tctst, EmbeddingKind::Mlp, None),
            "patch" => (Arch::Tctst, EmbeddingKind::Patch, None),
            "patchtst" => (Arch::PatchTst, EmbeddingKind::Tcn, None),
            other => match other.parse::<Variant>() {
                Ok(v) if v != Variant::Full => (Arch::Tctst, EmbeddingKind::Tcn, Some(v)),
                _ => {
                    return Err(Error::invalid(format!(
                        "unknown algorithm {name:?}; expected one of {}",
                        Self::PRESETS.join(", ")
                    )))
                }
            },
        };
        Ok(Self {
            name: name.to_string(),
            arch,
            embedding,
            pretrain,
        })
    }
}

/// Which folds each seed runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldPlan {
    /// Every seed runs all five folds.
    All,
    /// Seed number `i` (in list order) runs fold `i mod 5`.
    OnePerSeed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub subjects: u32,
    pub data_seed: u64,
    pub generator: GeneratorConfig,
    pub pretrain: PretrainConfig,
    pub pretrain_train: TrainConfig,
    pub finetune: TrainConfig,
    pub eval_batch: usize,
    pub fold_plan: FoldPlan,
    /// Replaces the profile's architecture; look-back, embedding and channel
    /// count are still set per run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub architecture: Option<TctstConfig>,
}

impl ExperimentConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let generator = GeneratorConfig::default();
        match profile {
            Profile::Paper => Self {
                profile,
                subjects: 10,
                data_seed: 1,
                generator,
                pretrain: PretrainConfig::default(),
                pretrain_train: TrainConfig {
                    epochs: 100,
                    patience: 20,
                    batch_size: 1024,
                    window_stride: 1,
                    ..TrainConfig::default()
                },
                finetune: TrainConfig::default(),
                eval_batch: 256,
                fold_plan: FoldPlan::All,
                architecture: None,
            },
            Profile::Desk => Self {
                profile,
                subjects: 10,
                data_seed: 1,
                generator,
                pretrain: PretrainConfig {
                    window_stride: 40,
                    ..PretrainConfig::default()
                },
                pretrain_train: TrainConfig {
                    epochs: 20,
                    patience: 8,
                    batch_size: 32,
                    window_stride: 40,
                    warmup_epochs: 3,
                    plateau_patience: 4,
                    ..TrainConfig::default()
                },
                finetune: TrainConfig {
                    epochs: 30,
                    patience: 10,
                    batch_size: 32,
                    window_stride: 40,
                    warmup_epochs: 3,
                    plateau_patience: 4,
                    ..TrainConfig::default()
                },
                eval_batch: 32,
                fold_plan: FoldPlan::OnePerSeed,
                architecture: None,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.pretrain_train.validate()?;
        self.finetune.validate()?;
        if (self.subjects as usize) < FOLD_COUNT {
            return Err(Error::invalid(format!("need at least {FOLD_COUNT} subjects")));
        }
        if self.eval_batch == 0 {
            return Err(Error::invalid("eval_batch must be positive"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Pre-training settings for `algo`, keeping this config's mask ratio,
    /// stride and block length.
    pub fn pretrain_for(&self, algo: &Algorithm) -> Option<PretrainConfig> {
        algo.pretrain.map(|v| {
            let flags = PretrainConfig::variant(v);
            PretrainConfig {
                use_decoder: flags.use_decoder,
                reconstruct_features: flags.reconstruct_features,
                mask_2d: flags.mask_2d,
                include_phase_channels: flags.include_phase_channels,
                ..self.pretrain.clone()
            }
        })
    }

    /// Phase rows of the fine-tuning and evaluation windows.
    pub fn rows_for(&self, algo: &Algorithm) -> PhaseRows {
        self.pretrain_for(algo).map_or(PhaseRows::Zeros, |p| p.finetune_rows())
    }

    pub fn model_config(&self, algo: &Algorithm, lookback: usize) -> TctstConfig {
        let mut cfg = match &self.architecture {
            Some(a) => TctstConfig { lookback, ..a.clone() },
            None => TctstConfig::for_profile(self.profile, lookback),
        };
        cfg.embedding = algo.embedding;
        cfg.channels = self.rows_for(algo).channels();
        cfg
    }

    /// The synthetic cohort: subject `s` is generated from `(data_seed, s)`.
    pub fn dataset(&self) -> Result<Vec<Recording>> {
        (0..self.subjects)
            .map(|s| synthesize_recording(&self.generator, s, self.data_seed))
            .collect()
    }
}

fn open_log(dir: Option<&Path>, name: &str) -> Result<Option<BufWriter<File>>> {
    match dir {
        None => Ok(None),
        Some(d) => {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
            let p = d.join(name);
            Ok(Some(BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?)))
        }
    }
}

/// A fold's recordings, normalised with statistics of its training subjects.
#[derive(Clone, Debug)]
pub struct FoldData {
    pub fold: Fold,
    pub norm: NormStats,
    pub train: Vec<Recording>,
    pub val: Vec<Recording>,
    pub test: Vec<Recording>,
}

impl FoldData {
    pub fn new(recs: &[Recording], fold: &Fold) -> Result<Self> {
        let select = |ids: &[u32]| -> Vec<Recording> { recs.iter().filter(|r| ids.contains(&r.subject_id)).cloned().collect() };
        let train_raw = select(&fold.train);
        for (name, ids) in [("training", &fold.train), ("validation", &fold.val), ("test", &fold.test)] {
            if let Some(missing) = ids.iter().find(|id| !recs.iter().any(|r| r.subject_id == **id)) {
                return Err(Error::invalid(format!("fold {}: {name} subject {missing} has no recording", fold.index)));
            }
        }
        let norm = fit_norm_stats(&train_raw)?;
        let apply = |v: Vec<Recording>| v.iter().map(|r| norm.apply(r)).collect::<Vec<_>>();
        Ok(Self {
            fold: fold.clone(),
            train: apply(train_raw),
            val: apply(select(&fold.val)),
            test: apply(select(&fold.test)),
            norm,
        })
    }

    /// Masked-reconstruction pre-training on the training subjects, with the
    /// validation subject for model selection.
    pub fn pretrain(
        &self,
        model_cfg: &TctstConfig,
        pcfg: &PretrainConfig,
        tcfg: &TrainConfig,
        seed: u64,
        log: Option<&mut dyn Write>,
    ) -> Result<(Checkpoint, FitReport)> {
        pcfg.validate(model_cfg.lookback)?;
        let (mut ckpt, report) = pretrain_run(&self.train, &self.val, model_cfg, pcfg, tcfg, seed, log)?;
        ckpt.norm_stats = Some(self.norm.clone());
        Ok((ckpt, report))
    }

    /// Fine-tunes `model` on phase-vector regression.
    pub fn finetune(
        &self,
        model: AnyModel<f32>,
        rows: PhaseRows,
        tcfg: &TrainConfig,
        seed: u64,
        log: Option<&mut dyn Write>,
    ) -> Result<(AnyModel<f32>, FitReport)> {
        let lookback = model.config().lookback;
        let train_set = WindowSet::new(self.train.clone(), lookback, tcfg.window_stride, rows)?;
        let val_set = WindowSet::new(self.val.clone(), lookback, tcfg.window_stride, rows)?;
        finetune(model, &train_set, &val_set, tcfg, seed, log)
    }
}

/// Seed of the pre-training stage derived from the run seed.
pub fn pretrain_seed(seed: u64) -> u64 {
    seed ^ 0x9e37_79b9_7f4a_7c15
}

/// Everything a single fold produces.
#[derive(Clone, Debug)]
pub struct FoldOutcome {
    pub fold: Fold,
    pub result: RunResult,
    pub finetune: FitReport,
    pub pretrain: Option<FitReport>,
    pub checkpoint: Checkpoint,
    pub wall_ms: u128,
}

/// Normalises on the fold's training subjects, optionally pre-trains and
/// transfers, fine-tunes and evaluates on the held-out subjects.
pub fn run_fold(
    recs: &[Recording],
    fold: &Fold,
    algo: &Algorithm,
    cfg: &ExperimentConfig,
    lookback: usize,
    seed: u64,
    log_dir: Option<&Path>,
) -> Result<FoldOutcome> {
    let start = Instant::now();
    let data = FoldData::new(recs, fold)?;
    let model_cfg = cfg.model_config(algo, lookback);
    let tag = format!("{}_{}_{}_fold{}", algo.name, lookback, seed, fold.index);

    let mut model = AnyModel::<f32>::new(algo.arch, model_cfg.clone(), seed)?;
    let mut pretrain_report = None;
    let mut seeds = BTreeMap::from([("finetune".to_string(), seed)]);
    if let Some(pcfg) = cfg.pretrain_for(algo) {
        let pseed = pretrain_seed(seed);
        let mut log = open_log(log_dir, &format!("{tag}_pretrain.jsonl"))?;
        let (ckpt, report) = data.pretrain(&model_cfg, &pcfg, &cfg.pretrain_train, pseed, log.as_mut().map(|w| w as &mut dyn Write))?;
        match &mut model {
            AnyModel::Tctst(m) => transfer_weights(&ckpt, m)?,
            AnyModel::PatchTst(_) => return Err(Error::invalid("pre-training applies to TCTST models only")),
        }
        seeds.insert("pretrain".into(), pseed);
        pretrain_report = Some(report);
    }

    let rows = cfg.rows_for(algo);
    let mut log = open_log(log_dir, &format!("{tag}_finetune.jsonl"))?;
    let (model, report) = data.finetune(model, rows, &cfg.finetune, seed, log.as_mut().map(|w| w as &mut dyn Write))?;
    let result = evaluate(&model, &data.test, rows)?;
    let mut checkpoint = Checkpoint::from_model(&model);
    checkpoint.norm_stats = Some(data.norm);
    checkpoint.pretrain = cfg.pretrain_for(algo);
    checkpoint.seeds = seeds;
    Ok(FoldOutcome {
        fold: fold.clone(),
        result,
        finetune: report,
        pretrain: pretrain_report,
        checkpoint,
        wall_ms: start.elapsed().as_millis(),
    })
}

/// Folds run by the `k`-th seed under `plan`.
pub fn folds_for(plan: FoldPlan, folds: &[Fold], k: usize) -> Vec<Fold> {
    match plan {
        FoldPlan::All => folds.to_vec(),
        FoldPlan::OnePerSeed => vec![folds[k % folds.len()].clone()],
    }
}

/// One (algorithm, look-back, seed) cell.
#[derive(Clone, Debug)]
pub struct CellResult {
    pub algorithm: String,
    pub lookback: usize,
    pub seed: u64,
    pub folds: Vec<FoldOutcome>,
    pub result: RunResult,
}

impl CellResult {
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}", self.algorithm, self.lookback, self.seed)
    }

    pub fn summary_json(&self, cfg: &ExperimentConfig) -> serde_json::Value {
        serde_json::json!({
            "config": cfg,
            "algorithm": self.algorithm,
            "lookback": self.lookback,
            "seed": self.seed,
            "folds": self.folds.iter().map(|f| serde_json::json!({
                "fold": f.fold,
                "wall_ms": f.wall_ms as u64,
                "finetune": {"best_epoch": f.finetune.best_epoch, "train": f.finetune.train_curve(), "val": f.finetune.val_curve()},
                "pretrain": f.pretrain.as_ref().map(|p| serde_json::json!({"best_epoch": p.best_epoch, "train": p.train_curve(), "val": p.val_curve()})),
            })).collect::<Vec<_>>(),
            "metrics": self.result.summary_json(),
        })
    }
}

pub fn run_cell(
    recs: &[Recording],
    folds: &[Fold],
    algo: &Algorithm,
    cfg: &ExperimentConfig,
    lookback: usize,
    seed: u64,
    log_dir: Option<&Path>,
) -> Result<CellResult> {
    let mut outcomes = Vec::with_capacity(folds.len());
    let mut result = RunResult::default();
    for fold in folds {
        let o = run_fold(recs, fold, algo, cfg, lookback, seed, log_dir)?;
        result.merge(&o.result);
        outcomes.push(o);
    }
    Ok(CellResult {
        algorithm: algo.name.clone(),
        lookback,
        seed,
        folds: outcomes,
        result,
    })
}

/// Summary row per (algorithm, look-back).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub algorithm: String,
    pub lookback: usize,
    pub seeds: usize,
    pub phase_rmse: f64,
    pub phase_rmse_sd: f64,
    pub rate_mae: f64,
    pub rate_mae_sd: f64,
    pub stable_phase_rmse: f64,
    pub transition_phase_rmse: f64,
    pub pooled_phase_rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub lookback: usize,
    pub algorithm: String,
    pub reference: String,
    pub report: Option<TTestReport>,
    pub note: String,
}

#[derive(Clone, Debug)]
pub struct MatrixResult {
    pub cells: Vec<CellResult>,
    pub rows: Vec<MatrixRow>,
    pub significance: Vec<SignificanceRow>,
}

fn per_subject_rmse(r: &RunResult) -> BTreeMap<u32, f64> {
    r.per_subject(Scope::All).into_iter().map(|(s, m)| (s, m.phase_rmse)).collect()
}

/// Runs every algorithm at every look-back for every seed on the same
/// folds. The first algorithm is the reference of the significance table.
pub fn run_matrix(
    cfg: &ExperimentConfig,
    algorithms: &[Algorithm],
    lookbacks: &[usize],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<MatrixResult> {
    cfg.validate()?;
    if algorithms.is_empty() || lookbacks.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("matrix needs at least one algorithm, look-back and seed"));
    }
    let recs = cfg.dataset()?;
    let ids: Vec<u32> = recs.iter().map(|r| r.subject_id).collect();
    let all_folds = loocv_splits(&ids)?;
    let log_dir: Option<PathBuf> = out.map(|o| o.join("logs"));
    if let Some(o) = out {
        fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
    }

    let mut cells = Vec::new();
    let mut rows = Vec::new();
    let mut merged: BTreeMap<(usize, String), RunResult> = BTreeMap::new();
    for &lb in lookbacks {
        for algo in algorithms {
            let mut seed_rmse = Vec::new();
            let mut seed_mae = Vec::new();
            let mut all = RunResult::default();
            for (k, &seed) in seeds.iter().enumerate() {
                let folds = folds_for(cfg.fold_plan, &all_folds, k);
                let cell = run_cell(&recs, &folds, algo, cfg, lb, seed, log_dir.as_deref())?;
                if let Some(o) = out {
                    let p = o.join(format!("{}.json", cell.file_stem()));
                    fs::write(&p, serde_json::to_string_pretty(&cell.summary_json(cfg))?).map_err(|e| Error::io(&p, e))?;
                    let p = o.join(format!("{}.csv", cell.file_stem()));
                    fs::write(&p, cell.result.to_csv()).map_err(|e| Error::io(&p, e))?;
                }
                let s = cell.result.subject_mean(Scope::All);
                seed_rmse.push(s.phase_rmse);
                seed_mae.push(s.rate_mae);
                all.merge(&cell.result);
                cells.push(cell);
            }
            let (phase_rmse, phase_rmse_sd) = mean_sd(&seed_rmse);
            let (rate_mae, rate_mae_sd) = mean_sd(&seed_mae);
            rows.push(MatrixRow {
                algorithm: algo.name.clone(),
                lookback: lb,
                seeds: seeds.len(),
                phase_rmse,
                phase_rmse_sd,
                rate_mae,
                rate_mae_sd,
                stable_phase_rmse: all.subject_mean(Scope::Stable).phase_rmse,
                transition_phase_rmse: all.subject_mean(Scope::Transition).phase_rmse,
                pooled_phase_rmse: all.pooled(Scope::All).phase_rmse,
            });
            merged.insert((lb, algo.name.clone()), all);
        }
    }

    let reference = &algorithms[0].name;
    let mut significance = Vec::new();
    for &lb in lookbacks {
        let base = per_subject_rmse(&merged[&(lb, reference.clone())]);
        for algo in &algorithms[1..] {
            let other = per_subject_rmse(&merged[&(lb, algo.name.clone())]);
            let subjects: Vec<u32> = base.keys().filter(|s| other.contains_key(s)).copied().collect();
            let a: Vec<f64> = subjects.iter().map(|s| other[s]).collect();
            let b: Vec<f64> = subjects.iter().map(|s| base[s]).collect();
            let (report, note) = match paired_t_test(&a, &b) {
                Ok(r) => (Some(r), String::new()),
                Err(e) => (None, e.to_string()),
            };
            significance.push(SignificanceRow {
                lookback: lb,
                algorithm: algo.name.clone(),
                reference: reference.clone(),
                report,
                note,
            });
        }
    }

    let result = MatrixResult { cells, rows, significance };
    if let Some(o) = out {
        let p = o.join("results.csv");
        fs::write(&p, result.results_csv()).map_err(|e| Error::io(&p, e))?;
        let p = o.join("significance.csv");
        fs::write(&p, result.significance_csv()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(result)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

impl MatrixResult {
    pub fn results_csv(&self) -> String {
        let mut s = String::from(
            "algorithm,lookback,seeds,phase_rmse_pct,phase_rmse_sd,rate_mae_pct,rate_mae_sd,stable_phase_rmse_pct,transition_phase_rmse_pct,pooled_phase_rmse_pct\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.algorithm,
                r.lookback,
                r.seeds,
                r.phase_rmse,
                r.phase_rmse_sd,
                r.rate_mae,
                r.rate_mae_sd,
                r.stable_phase_rmse,
                r.transition_phase_rmse,
                r.pooled_phase_rmse
            ));
        }
        s
    }

    pub fn significance_csv(&self) -> String {
        let mut s = String::from("lookback,algorithm,reference,n,mean_diff,t,df,p,stars\n");
        for r in &self.significance {
            match &r.report {
                Some(t) => s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.lookback, r.algorithm, r.reference, t.n, t.mean_diff, t.t, t.df, t.p, t.stars
                )),
                None => s.push_str(&format!("{},{},{},,,,,,n/a\n", r.lookback, r.algorithm, r.reference)),
            }
        }
        s
    }
}
