//! The three experiment protocols and plain training runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use courtcast::data::{NormStats, RawGame, SplitPolicy, SplitRatios};
use courtcast::eval::MetricReport;
use courtcast::models::{min_history, Dims, ModelConfig, ModelKind};
use courtcast::DT;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::{seconds_to_steps, DatasetManifest, ExperimentConfig, ExperimentId};
use crate::dataset::{load_games, manifest_hash, samples, Dataset, DatasetReport};
use crate::error::{HarnessError, Result};
use crate::evaluate::evaluate;
use crate::report::{emit_reports, ensure_writable, write_json, Metric};
use crate::train::{train_model, EpochStats};

/// Loaded inputs shared by every protocol.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub manifest: DatasetManifest,
    pub model_config: ModelConfig,
    pub games: Vec<RawGame>,
    pub manifest_hash: String,
}

impl Prepared {
    /// Checks the output directory before loading anything.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        ensure_writable(&config.output)?;
        let manifest = DatasetManifest::load(&config.dataset)?;
        Self::with_manifest(config, manifest)
    }

    pub fn with_manifest(config: ExperimentConfig, manifest: DatasetManifest) -> Result<Self> {
        ensure_writable(&config.output)?;
        let model_config = config.model_config()?;
        let games = load_games(&manifest)?;
        let manifest_hash = manifest_hash(&manifest)?;
        Ok(Prepared {
            config,
            manifest,
            model_config,
            games,
            manifest_hash,
        })
    }

    fn split(&self) -> (SplitPolicy, SplitRatios) {
        (
            self.config.split.clone().unwrap_or_else(|| self.manifest.split.clone()),
            self.config.ratios.unwrap_or(self.manifest.ratios),
        )
    }

    fn dataset(&self, policy: &SplitPolicy, ratios: SplitRatios, history: usize) -> Result<Dataset> {
        Dataset::build(
            &self.games,
            policy,
            ratios,
            self.config.seed,
            history,
            self.config.forecast_steps()?,
            self.config.stride_steps()?,
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelResult {
    pub model: ModelKind,
    pub history_steps: usize,
    pub history_s: f64,
    pub params: usize,
    pub report: MetricReport,
    pub curve: Vec<EpochStatsRecord>,
    pub best_epoch: Option<usize>,
    pub diverged: Option<String>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStatsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: Option<f64>,
    pub seconds: f64,
}

impl From<&EpochStats> for EpochStatsRecord {
    fn from(e: &EpochStats) -> Self {
        EpochStatsRecord {
            epoch: e.epoch,
            train_loss: e.train_loss,
            validation_loss: e.validation_loss,
            seconds: e.seconds,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model: ModelKind,
    pub horizon_s: f64,
    pub ade_m: f64,
    pub fde_m: f64,
    pub aae_deg: f64,
    pub fae_deg: f64,
}

/// Everything a run produced; serialized as `summary.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub manifest_hash: String,
    pub config: ExperimentConfig,
    pub model_config: ModelConfig,
    pub datasets: Vec<DatasetReportRecord>,
    pub results: Vec<ModelResult>,
    pub deltas: Option<Vec<DeltaRow>>,
    pub warnings: Vec<String>,
    pub decisions: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DatasetReportRecord {
    pub history_steps: usize,
    pub forecast_steps: usize,
    pub stride: usize,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub test_windows: usize,
    pub train_games: Vec<String>,
    pub test_games: Vec<String>,
    pub dropped_short_spans: usize,
    pub flagged_moments: usize,
}

impl From<&DatasetReport> for DatasetReportRecord {
    fn from(r: &DatasetReport) -> Self {
        DatasetReportRecord {
            history_steps: r.history_steps,
            forecast_steps: r.forecast_steps,
            stride: r.stride,
            train_windows: r.train_windows,
            validation_windows: r.validation_windows,
            test_windows: r.test_windows,
            train_games: r.train_games.clone(),
            test_games: r.test_games.clone(),
            dropped_short_spans: r.series.dropped_short,
            flagged_moments: r.series.flagged_moments,
        }
    }
}

impl RunSummary {
    fn new(name: &str, prep: &Prepared) -> Self {
        RunSummary {
            experiment: name.into(),
            manifest_hash: prep.manifest_hash.clone(),
            config: prep.config.clone(),
            model_config: prep.model_config.clone(),
            datasets: vec![],
            results: vec![],
            deltas: None,
            warnings: vec![],
            decisions: decisions(&prep.config),
        }
    }

    pub fn reports(&self) -> Vec<MetricReport> {
        self.results.iter().map(|r| r.report.clone()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HarnessError::config(path, e.to_string()))
    }
}

/// Fixed choices that are not visible in the configs themselves.
fn decisions(config: &ExperimentConfig) -> BTreeMap<String, String> {
    let mut d = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        d.insert(k.to_string(), v);
    };
    put("loss", "mse on each model's native output".into());
    put("seconds_to_steps", "nearest multiple of 0.04 s, halves up".into());
    put("split_unit", "uniform series (whole games for by_game/by_team)".into());
    put("normalization", "z-score per channel, fit on training windows".into());
    put("train_targets", format!("{:?}", config.train.train_targets));
    put("eval_targets", format!("{:?}", config.train.eval_targets));
    put("checkpoint_selection", "best validation loss".into());
    put("angle_degenerate_steps", "excluded from AAE/FAE, counted per report".into());
    put("transformer_head", "one-shot linear head on the pooled encoding".into());
    put("gnn_decoder", "autoregressive LSTM with residual projection of the last state".into());
    d
}

fn history_label(steps: usize) -> String {
    format!("h{:.2}s", steps as f64 * DT)
}

/// Train and evaluate `models` on one dataset, writing checkpoints to `dir`.
fn run_models(
    prep: &Prepared,
    data: &Dataset,
    models: &[ModelKind],
    history: usize,
    dir: &Path,
    summary: &mut RunSummary,
) -> Result<Vec<ModelResult>> {
    let cfg = &prep.config;
    let train = samples(&data.train, cfg.train.train_targets);
    let validation = samples(&data.validation, cfg.train.train_targets);
    let test = samples(&data.test, cfg.train.eval_targets);
    let dims = Dims {
        history,
        forecast: cfg.forecast_steps()?,
        objects: data.objects(),
    };
    let ckpt_dir = dir.join("checkpoints");
    ensure_writable(&ckpt_dir)?;
    let mut out = Vec::new();
    for &kind in models {
        if history < min_history(kind, &prep.model_config) {
            summary.warnings.push(format!(
                "{kind} skipped for {history} history steps (needs {})",
                min_history(kind, &prep.model_config)
            ));
            continue;
        }
        let trained = match train_model(kind, &prep.model_config, dims, &train, &validation, &data.norm, &cfg.train, cfg.seed) {
            Ok(t) => t,
            Err(e) => {
                summary.warnings.push(format!("{kind} absent: {e}"));
                continue;
            }
        };
        let diverged = trained.diverged.as_ref().map(|e| e.to_string());
        if let Some(d) = &diverged {
            summary.warnings.push(d.clone());
        }
        let report = evaluate(trained.model.as_ref(), &test, &data.norm, 256)?;
        let checkpoint = if kind.trainable() {
            let path = ckpt_dir.join(format!("{}_{}.ckpt", kind.name(), history_label(history)));
            Checkpoint::of(trained.model.as_ref(), &prep.model_config, &data.norm, &prep.manifest_hash).save(&path)?;
            Some(path)
        } else {
            None
        };
        out.push(ModelResult {
            model: kind,
            history_steps: history,
            history_s: history as f64 * DT,
            params: trained.model.params().count(),
            report,
            curve: trained.curve.iter().map(EpochStatsRecord::from).collect(),
            best_epoch: trained.best_epoch,
            diverged,
            checkpoint,
        });
    }
    Ok(out)
}

fn finish(prep: &Prepared, summary: &RunSummary, dir: &Path, title: &str) -> Result<()> {
    let reports = summary.reports();
    if !reports.is_empty() {
        emit_reports(&reports, dir, &prep.config.table_horizons_s, &Metric::ALL, title)?;
    }
    write_json(&dir.join("summary.json"), summary)
}

fn first_history(cfg: &ExperimentConfig) -> Result<usize> {
    let s = cfg
        .history_s
        .first()
        .ok_or_else(|| HarnessError::Invalid("history_s is empty".into()))?;
    seconds_to_steps(*s)
}

/// Train the configured models at the first input length and keep checkpoints.
pub fn run_training(prep: &Prepared) -> Result<RunSummary> {
    let dir = prep.config.output.join("train");
    let mut summary = RunSummary::new("train", prep);
    let (policy, ratios) = prep.split();
    let history = first_history(&prep.config)?;
    let data = prep.dataset(&policy, ratios, history)?;
    summary.datasets.push((&data.report).into());
    summary.results = run_models(prep, &data, &prep.config.models, history, &dir, &mut summary)?;
    finish(prep, &summary, &dir, "train")?;
    Ok(summary)
}

/// Input-length sweep: one dataset, training run and curve family per length.
pub fn run_experiment1(prep: &Prepared) -> Result<RunSummary> {
    let root = prep.config.output.join("input_length_sweep");
    let mut summary = RunSummary::new("input_length_sweep", prep);
    let (policy, ratios) = prep.split();
    let mut lengths: Vec<usize> = prep
        .config
        .history_s
        .iter()
        .map(|&s| seconds_to_steps(s))
        .collect::<Result<_>>()?;
    lengths.dedup();
    for history in lengths {
        let data = match prep.dataset(&policy, ratios, history) {
            Ok(d) => d,
            Err(e) => {
                summary.warnings.push(format!("input length {} skipped: {e}", history_label(history)));
                continue;
            }
        };
        summary.datasets.push((&data.report).into());
        let dir = root.join(history_label(history));
        let mut part = RunSummary::new("input_length_sweep", prep);
        let results = run_models(prep, &data, &prep.config.models, history, &dir, &mut part)?;
        part.results = results.clone();
        part.datasets.push((&data.report).into());
        finish(prep, &part, &dir, &format!("input {}", history_label(history)))?;
        summary.warnings.extend(part.warnings);
        summary.results.extend(results);
    }
    // one combined family: each model at each length
    let combined: Vec<MetricReport> = summary
        .results
        .iter()
        .map(|r| MetricReport {
            model: format!("{}@{}", r.model, history_label(r.history_steps)),
            ..r.report.clone()
        })
        .collect();
    if !combined.is_empty() {
        emit_reports(&combined, &root, &prep.config.table_horizons_s, &Metric::ALL, "input length sweep")?;
    }
    write_json(&root.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Unseen games of the same team.
pub fn run_experiment2(prep: &Prepared) -> Result<RunSummary> {
    let (policy, ratios) = prep.split();
    if !matches!(policy, SplitPolicy::ByGame { .. }) {
        return Err(HarnessError::Invalid("within_team needs a by_game split".into()));
    }
    let dir = prep.config.output.join("within_team");
    let mut summary = RunSummary::new("within_team", prep);
    let history = first_history(&prep.config)?;
    let data = prep.dataset(&policy, ratios, history)?;
    summary.datasets.push((&data.report).into());
    summary.results = run_models(prep, &data, &prep.config.models, history, &dir, &mut summary)?;
    finish(prep, &summary, &dir, "within team")?;
    Ok(summary)
}

/// `Exp3 − Exp2` per context model and metric at `step`.
pub fn deltas(exp3: &[MetricReport], exp2: &[MetricReport], step: usize) -> Vec<DeltaRow> {
    let mut rows = Vec::new();
    for r in exp3 {
        let (Ok(kind), Some(base)) = (r.model.parse::<ModelKind>(), exp2.iter().find(|b| b.model == r.model)) else {
            continue;
        };
        if step == 0 || step > r.steps() || step > base.steps() {
            continue;
        }
        let i = step - 1;
        rows.push(DeltaRow {
            model: kind,
            horizon_s: step as f64 * DT,
            ade_m: r.ade[i] - base.ade[i],
            fde_m: r.fde[i] - base.fde[i],
            aae_deg: r.aae[i] - base.aae[i],
            fae_deg: r.fae[i] - base.fae[i],
        });
    }
    rows
}

pub fn deltas_csv(rows: &[DeltaRow]) -> String {
    let mut s = String::from("model,horizon_s,d_ade_m,d_fde_m,d_aae_deg,d_fae_deg\n");
    for r in rows {
        s += &format!(
            "{},{:.2},{:.6},{:.6},{:.6},{:.6}\n",
            r.model, r.horizon_s, r.ade_m, r.fde_m, r.aae_deg, r.fae_deg
        );
    }
    s
}

/// Train on one team, test on another; context models only.
pub fn run_experiment3(prep: &Prepared, baseline: Option<&[MetricReport]>) -> Result<RunSummary> {
    let (policy, ratios) = prep.split();
    if !matches!(policy, SplitPolicy::ByTeam { .. }) {
        return Err(HarnessError::Invalid("cross_team needs a by_team split".into()));
    }
    let dir = prep.config.output.join("cross_team");
    let mut summary = RunSummary::new("cross_team", prep);
    let models: Vec<ModelKind> = prep
        .config
        .models
        .iter()
        .copied()
        .filter(|m| ModelKind::CONTEXT.contains(m))
        .collect();
    for m in &prep.config.models {
        if !models.contains(m) {
            summary.warnings.push(format!("{m} is not benchmarked across teams"));
        }
    }
    let history = first_history(&prep.config)?;
    let data = prep.dataset(&policy, ratios, history)?;
    summary.datasets.push((&data.report).into());
    summary.results = run_models(prep, &data, &models, history, &dir, &mut summary)?;
    finish(prep, &summary, &dir, "cross team")?;
    match baseline {
        Some(base) => {
            let rows = deltas(&summary.reports(), base, prep.config.forecast_steps()?);
            let path = dir.join("deltas.csv");
            std::fs::write(&path, deltas_csv(&rows)).map_err(|e| HarnessError::io(&path, e))?;
            summary.deltas = Some(rows);
        }
        None => summary
            .warnings
            .push("no within-team baseline; deltas omitted".into()),
    }
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Dispatch on the configured experiment id.
pub fn run(prep: &Prepared) -> Result<RunSummary> {
    match prep.config.experiment {
        ExperimentId::InputLengthSweep => run_experiment1(prep),
        ExperimentId::WithinTeam => run_experiment2(prep),
        ExperimentId::CrossTeam => {
            let base = match &prep.config.baseline {
                Some(p) if p.exists() => Some(RunSummary::load(p)?.reports()),
                _ => None,
            };
            run_experiment3(prep, base.as_deref())
        }
    }
}

/// Evaluate a checkpoint on the test split of `manifest`.
pub fn evaluate_checkpoint(
    ckpt: &Checkpoint,
    manifest: &DatasetManifest,
    eval_targets: crate::config::Targets,
    stride: usize,
) -> Result<(MetricReport, Vec<String>)> {
    let mut warnings = Vec::new();
    let hash = manifest_hash(manifest)?;
    if hash != ckpt.header.manifest_hash {
        warnings.push(format!(
            "checkpoint was trained on manifest {}, evaluating on {hash}",
            ckpt.header.manifest_hash
        ));
    }
    let games = load_games(manifest)?;
    let dims = ckpt.header.dims;
    let data = Dataset::build(
        &games,
        &manifest.split,
        manifest.ratios,
        manifest.seed,
        dims.history,
        dims.forecast,
        stride,
    )?;
    if data.objects() != dims.objects {
        return Err(HarnessError::Invalid(format!(
            "checkpoint expects {} objects, dataset has {}",
            dims.objects,
            data.objects()
        )));
    }
    let model = ckpt.model()?;
    let norm: &NormStats = &ckpt.header.norm;
    let test = samples(&data.test, eval_targets);
    Ok((evaluate(model.as_ref(), &test, norm, 256)?, warnings))
}
