//! Manifest → games → split series → windows, plus the leakage guard.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::BufReader;

use courtcast::data::raw::BALL_TEAM_ID;
use courtcast::data::{
    derive_velocities, generate, ingest_game, make_windows, resample_uniform, split_dataset, FrameSeries,
    NormStats, RawGame, SourceFormat, SplitPolicy, SplitRatios, Window,
};
use courtcast::models::features::channel_names;
use courtcast::models::Sample;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{DataFormat, DatasetManifest, Targets};
use crate::error::{HarnessError, Result};

pub fn load_games(manifest: &DatasetManifest) -> Result<Vec<RawGame>> {
    let format = match manifest.format {
        DataFormat::Synthetic => return Ok(generate(&manifest.synthetic)?),
        DataFormat::NbaTracking => SourceFormat::NbaTracking,
        DataFormat::NeutralCsv => SourceFormat::NeutralCsv,
    };
    manifest
        .files
        .iter()
        .map(|path| {
            let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
            let id = path.file_stem().and_then(|s| s.to_str()).unwrap_or("game");
            Ok(ingest_game(BufReader::new(file), format, id)?)
        })
        .collect()
}

/// SHA-256 over the manifest and the bytes of every listed file.
pub fn manifest_hash(manifest: &DatasetManifest) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(manifest).expect("manifest serializes"));
    for path in &manifest.files {
        let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(bytes);
    }
    Ok(hex(&h.finalize()))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Content hash of a window's frames.
pub fn window_hash(w: &Window) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in w.history.data().iter().chain(w.future.data()) {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Uniform series with velocities, long enough for one window each.
pub fn prepare_series(games: &[RawGame], min_steps: usize) -> Result<(Vec<FrameSeries>, SeriesReport)> {
    let mut out = Vec::new();
    let mut report = SeriesReport::default();
    for g in games {
        let (series, r) = resample_uniform(g, min_steps.max(2));
        report.spans += r.spans;
        report.dropped_short += r.dropped_short;
        report.flagged_moments += r.flagged_moments;
        for s in series {
            out.push(derive_velocities(&s)?);
        }
    }
    Ok((out, report))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SeriesReport {
    pub spans: usize,
    pub dropped_short: usize,
    pub flagged_moments: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DatasetReport {
    pub history_steps: usize,
    pub forecast_steps: usize,
    pub stride: usize,
    pub series: SeriesReport,
    pub train_windows: usize,
    pub validation_windows: usize,
    pub test_windows: usize,
    pub train_games: Vec<String>,
    pub test_games: Vec<String>,
}

pub struct Dataset {
    pub train: Vec<Window>,
    pub validation: Vec<Window>,
    pub test: Vec<Window>,
    pub norm: NormStats,
    pub report: DatasetReport,
}

impl Dataset {
    /// Split series by `policy`, then cut each partition into windows.
    pub fn build(
        games: &[RawGame],
        policy: &SplitPolicy,
        ratios: SplitRatios,
        seed: u64,
        history: usize,
        forecast: usize,
        stride: usize,
    ) -> Result<Dataset> {
        let (series, series_report) = prepare_series(games, history + forecast)?;
        let split = split_dataset(series, policy, ratios, seed)?;
        let windows = |part: &[FrameSeries]| -> Result<Vec<Window>> {
            let mut out = Vec::new();
            for s in part {
                out.extend(make_windows(s, history, forecast, stride)?.windows);
            }
            Ok(out)
        };
        let (train, validation, test) = (windows(&split.train)?, windows(&split.validation)?, windows(&split.test)?);
        if train.is_empty() || test.is_empty() {
            return Err(HarnessError::Invalid(format!(
                "split left {} training and {} test windows for {history}+{forecast} steps",
                train.len(),
                test.len()
            )));
        }
        check_leakage(&train, &test)?;
        check_leakage(&validation, &test)?;
        let norm = NormStats::fit(&train, &channel_names())?;
        let games_of = |ws: &[Window]| ws.iter().map(|w| w.game_id.clone()).collect::<BTreeSet<_>>().into_iter().collect();
        let report = DatasetReport {
            history_steps: history,
            forecast_steps: forecast,
            stride,
            series: series_report,
            train_windows: train.len(),
            validation_windows: validation.len(),
            test_windows: test.len(),
            train_games: games_of(&train),
            test_games: games_of(&test),
        };
        Ok(Dataset {
            train,
            validation,
            test,
            norm,
            report,
        })
    }

    pub fn objects(&self) -> usize {
        self.train[0].objects()
    }
}

/// Fails if any test window's content also occurs among `seen`.
pub fn check_leakage(seen: &[Window], test: &[Window]) -> Result<()> {
    let known: BTreeSet<[u8; 32]> = seen.iter().map(window_hash).collect();
    let leaked = test.iter().filter(|w| known.contains(&window_hash(w))).count();
    if leaked > 0 {
        return Err(HarnessError::Leakage(leaked));
    }
    Ok(())
}

/// Indices of the non-ball objects.
pub fn players(w: &Window) -> Vec<usize> {
    (0..w.objects()).filter(|&o| w.team_ids[o] != BALL_TEAM_ID).collect()
}

pub fn samples<'a>(windows: &'a [Window], targets: Targets) -> Vec<Sample<'a>> {
    let mut out = Vec::new();
    for (i, w) in windows.iter().enumerate() {
        let p = players(w);
        if p.is_empty() {
            continue;
        }
        match targets {
            Targets::Rotate => out.push(Sample {
                window: w,
                target: p[i % p.len()],
            }),
            Targets::AllPlayers => out.extend(p.into_iter().map(|target| Sample { window: w, target })),
        }
    }
    out
}
