use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ssrs::analysis::{trajectory_consensus, transition_feature};
use ssrs::{reward_distribution, ReplayBuffer64};

use crate::io::{self, num};
use crate::OutArgs;

/// Splits stored transitions into episodes at terminal flags. A trailing
/// partial episode (cut by the ring buffer or still running) is kept.
fn buffer_trajectories(buffer: &ReplayBuffer64) -> Vec<Vec<Vec<f64>>> {
    let mut trajs = Vec::new();
    let mut current = Vec::new();
    for entry in buffer.iter() {
        current.push(transition_feature(&entry.transition));
        if entry.transition.terminal {
            trajs.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        trajs.push(current);
    }
    trajs
}

pub fn consensus(run: &Path, k: Option<usize>, runs: usize, max_trajectories: usize, seed: u64, out: &OutArgs) -> Result<ExitCode> {
    if max_trajectories == 0 {
        bail!("--max-trajectories must be at least 1");
    }
    let config = io::run_config(run)?;
    let path = run.join("buffer.bin");
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let buffer = ReplayBuffer64::read_checkpoint(BufReader::new(file)).with_context(|| format!("{}", path.display()))?;
    let mut trajs = buffer_trajectories(&buffer);
    if trajs.is_empty() {
        bail!("{} holds no transitions", path.display());
    }
    let skip = trajs.len().saturating_sub(max_trajectories);
    trajs.drain(..skip);
    let k = k.unwrap_or(config.n_z);
    let matrix = trajectory_consensus(&trajs, k, runs, seed)?;

    io::prepare_dir(&out.out, out.force)?;
    let mut w = io::csv_writer(&out.out.join("consensus.csv"))?;
    let mut header = vec!["trajectory".to_string()];
    header.extend((0..matrix.size).map(|j| format!("t{j}")));
    w.write_record(&header)?;
    for i in 0..matrix.size {
        let mut row = vec![format!("t{i}")];
        row.extend((0..matrix.size).map(|j| num(matrix.get(i, j))));
        w.write_record(&row)?;
    }
    w.flush()?;

    let mut w = io::csv_writer(&out.out.join("consensus_long.csv"))?;
    w.write_record(["i", "j", "value"])?;
    for i in 0..matrix.size {
        for j in 0..matrix.size {
            w.write_record([i.to_string(), j.to_string(), num(matrix.get(i, j))])?;
        }
    }
    w.flush()?;
    println!("{} trajectories, k {k}, {runs} runs", matrix.size);
    Ok(ExitCode::SUCCESS)
}

pub fn dist(run: &Path, bins: usize, out: &OutArgs) -> Result<ExitCode> {
    let path = run.join("snapshots.csv");
    let mut r = io::csv_reader(&path)?;
    let mut snapshots: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let parse = || -> Option<(usize, f64)> { Some((rec.get(0)?.parse().ok()?, rec.get(2)?.parse().ok()?)) };
        let (epoch, reward) = parse().with_context(|| format!("{}: bad row {}", path.display(), line + 2))?;
        snapshots.entry(epoch).or_default().push(reward);
    }
    if snapshots.is_empty() {
        bail!("{} has no snapshots; set dist_epochs within the run length", path.display());
    }
    let snapshots: Vec<(usize, Vec<f64>)> = snapshots.into_iter().collect();
    let rows = reward_distribution(&snapshots, bins)?;
    io::prepare_file(&out.out, out.force)?;
    let mut w = io::csv_writer(&out.out)?;
    w.write_record(["epoch", "bin_left", "bin_right", "probability"])?;
    for row in &rows {
        w.write_record([row.epoch.to_string(), num(row.bin_left), num(row.bin_right), num(row.probability)])?;
    }
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}

struct FinalBest {
    dir: PathBuf,
    episode: usize,
    mean: f64,
    std: f64,
    seeds: usize,
}

fn final_best(dir: &Path) -> Result<FinalBest> {
    let path = dir.join("aggregate.csv");
    if !path.exists() {
        bail!("{} has no aggregate.csv (not a completed train output)", dir.display());
    }
    let mut r = io::csv_reader(&path)?;
    let last = r.records().last().with_context(|| format!("{} is empty", path.display()))??;
    let field = |i: usize| last.get(i).with_context(|| format!("{}: short row", path.display()));
    Ok(FinalBest {
        dir: dir.to_path_buf(),
        episode: field(0)?.parse()?,
        mean: field(1)?.parse()?,
        std: field(2)?.parse()?,
        seeds: field(3)?.parse()?,
    })
}

pub fn compare(dirs: &[PathBuf], out: &OutArgs) -> Result<ExitCode> {
    if dirs.len() < 2 {
        bail!("compare needs at least two train outputs, got {}", dirs.len());
    }
    let rows = dirs.iter().map(|d| final_best(d)).collect::<Result<Vec<_>>>()?;
    io::prepare_file(&out.out, out.force)?;
    let mut w = io::csv_writer(&out.out)?;
    w.write_record(["run", "episode", "final_best_mean", "final_best_std", "seeds"])?;
    for row in &rows {
        let name = row.dir.display().to_string();
        w.write_record([name, row.episode.to_string(), num(row.mean), num(row.std), row.seeds.to_string()])?;
    }
    w.flush()?;

    let width = rows.iter().map(|r| r.dir.display().to_string().len()).max().unwrap_or(0).max(3);
    println!("{:<width$}  {:>8}  {:>21}  {:>5}", "run", "episode", "final best", "seeds");
    for row in &rows {
        let score = format!("{:.4} ± {:.4}", row.mean, row.std);
        println!("{:<width$}  {:>8}  {:>21}  {:>5}", row.dir.display(), row.episode, score, row.seeds);
    }
    Ok(ExitCode::SUCCESS)
}
