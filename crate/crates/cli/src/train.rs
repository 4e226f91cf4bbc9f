use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;
use std::process::{Command, ExitCode};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use ssrs::training::{self, RunRecord, TrainObserver, TrainState};
use ssrs::{best_score_series, RunConfig};

use crate::io::{self, num};
use crate::{ConfigArgs, OutArgs};

#[derive(Debug, Serialize, Deserialize)]
pub struct SeedResult {
    pub status: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record: Option<RunRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failed_episode: Option<usize>,
    pub config: RunConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub seeds: Vec<u64>,
    pub completed: Vec<u64>,
    pub failed: Vec<u64>,
    pub config_hash: String,
}

pub fn read_seed_result(dir: &Path) -> Result<SeedResult> {
    let path = dir.join("run.json");
    serde_json::from_str(&io::read_text(&path)?).with_context(|| format!("parsing {}", path.display()))
}

pub fn run_seeds(args: &ConfigArgs, seeds: &str, out: &OutArgs) -> Result<ExitCode> {
    let config = io::load_config(args)?;
    config.validate()?;
    let seeds = io::parse_seeds(seeds)?;
    io::prepare_dir(&out.out, out.force)?;
    let config_path = out.out.join("config.txt");
    io::write_text(&config_path, &config.to_text())?;

    let exe = std::env::current_exe().context("locating own executable")?;
    let (mut completed, mut failed, mut records) = (Vec::new(), Vec::new(), Vec::new());
    for &seed in &seeds {
        let dir = io::seed_dir(&out.out, seed);
        if dir.exists() {
            fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
        }
        let status = Command::new(&exe)
            .arg("train-seed")
            .arg("--config")
            .arg(&config_path)
            .arg("--seed")
            .arg(seed.to_string())
            .arg("--out")
            .arg(&dir)
            .status()
            .with_context(|| format!("spawning seed {seed}"))?;
        match read_seed_result(&dir) {
            Ok(SeedResult { record: Some(record), .. }) if status.success() => {
                eprintln!("seed {seed}: final best {:.4}", record.final_best());
                records.push(record);
                completed.push(seed);
            }
            Ok(result) => {
                eprintln!("seed {seed}: failed: {}", result.error.as_deref().unwrap_or("unknown error"));
                failed.push(seed);
            }
            Err(e) => {
                eprintln!("seed {seed}: failed ({status}): {e:#}");
                failed.push(seed);
            }
        }
    }

    if !records.is_empty() {
        let mut w = io::csv_writer(&out.out.join("aggregate.csv"))?;
        w.write_record(["episode", "mean", "std", "seeds"])?;
        for p in best_score_series(&records)? {
            w.write_record([p.episode.to_string(), num(p.mean), num(p.std), records.len().to_string()])?;
        }
        w.flush()?;
    }
    let summary =
        Summary { seeds, completed, failed: failed.clone(), config_hash: training::config_hash(&config) };
    io::write_text(&out.out.join("run.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(if failed.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// Writes model state every `interval` episodes.
struct Checkpointer<'a> {
    dir: &'a Path,
    interval: usize,
}

impl TrainObserver<f64> for Checkpointer<'_> {
    fn on_episode(&mut self, state: &TrainState<'_, f64>) -> ssrs::Result<()> {
        let ep = state.record.episode;
        if self.interval == 0 || ep % self.interval != 0 {
            return Ok(());
        }
        let dir = self.dir.join("checkpoints").join(format!("ep-{ep:06}"));
        fs::create_dir_all(&dir)?;
        write_model(&dir, state.backbone, state.estimator, state.buffer)?;
        Ok(())
    }
}

fn write_model(
    dir: &Path,
    backbone: &training::BackboneQ<f64>,
    estimator: &ssrs::EstimatorParams64,
    buffer: &ssrs::ReplayBuffer64,
) -> ssrs::Result<()> {
    fs::write(dir.join("qtable.txt"), backbone.to_text())?;
    fs::write(dir.join("estimator.txt"), estimator.to_text())?;
    buffer.write_checkpoint(BufWriter::new(File::create(dir.join("buffer.bin"))?))
}

pub fn train_seed(args: &ConfigArgs, seed: u64, out: &Path) -> Result<ExitCode> {
    let mut config = io::load_config(args)?;
    config.seed = seed;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    io::write_text(&out.join("config.txt"), &config.to_text())?;

    let mut observer = Checkpointer { dir: out, interval: config.checkpoint_interval };
    let outcome = match training::train_with::<f64>(&config, &mut observer) {
        Ok(o) => o,
        Err(failure) => {
            let result = SeedResult {
                status: "failed".into(),
                seed,
                record: None,
                error: Some(failure.to_string()),
                failed_episode: Some(failure.episode),
                config,
            };
            io::write_text(&out.join("run.json"), &serde_json::to_string_pretty(&result)?)?;
            eprintln!("error: {failure}");
            return Ok(ExitCode::FAILURE);
        }
    };

    let mut w = io::csv_writer(&out.join("curve.csv"))?;
    w.write_record([
        "episode", "score", "best", "train_return", "steps", "L_r", "L_QV", "L_s", "lambda", "alpha", "p_u",
        "shaped_count",
    ])?;
    for e in &outcome.record.episodes {
        w.write_record([
            e.episode.to_string(),
            num(e.score),
            num(e.best),
            num(e.train_return),
            e.steps.to_string(),
            num(e.loss.l_r),
            num(e.loss.l_qv),
            num(e.loss.l_s),
            num(e.lambda),
            num(e.alpha),
            num(e.p_u),
            e.shaped_count.to_string(),
        ])?;
    }
    w.flush()?;

    let mut w = io::csv_writer(&out.join("snapshots.csv"))?;
    w.write_record(["epoch", "index", "reward"])?;
    for (epoch, rewards) in &outcome.snapshots {
        for (i, r) in rewards.iter().enumerate() {
            w.write_record([epoch.to_string(), i.to_string(), num(*r)])?;
        }
    }
    w.flush()?;

    write_model(out, &outcome.backbone, &outcome.estimator, &outcome.buffer)?;
    let wall: f64 = outcome.record.episodes.iter().map(|e| e.wall_ms).sum();
    eprintln!("seed {seed}: {} episodes in {:.1}s", outcome.record.episodes.len(), wall / 1e3);
    let result = SeedResult {
        status: "ok".into(),
        seed,
        record: Some(outcome.record),
        error: None,
        failed_episode: None,
        config,
    };
    io::write_text(&out.join("run.json"), &serde_json::to_string_pretty(&result)?)?;
    Ok(ExitCode::SUCCESS)
}
