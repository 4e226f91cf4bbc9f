use std::fs::{self, File};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use ssrs::config::RunConfig;
use ssrs::TrajectoryMatrix64;

use crate::ConfigArgs;

/// 17 significant digits, round-trip exact for f64.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::ReaderBuilder::new().from_reader(file))
}

/// Creates `dir`, refusing to reuse a nonempty one unless `force`.
pub fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?.next().is_some();
        if nonempty && !force {
            bail!("{} already exists; pass --force to overwrite", dir.display());
        }
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Checks that `path` may be written, creating its parent directory.
pub fn prepare_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("{} already exists; pass --force to overwrite", path.display());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let text = match &args.config {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let source = args.config.as_ref().map_or("<defaults>".to_string(), |p| p.display().to_string());
    RunConfig::parse(&text, &args.overrides).with_context(|| format!("config {source}"))
}

/// Config stored in a seed directory.
pub fn run_config(run: &Path) -> Result<RunConfig> {
    let path = run.join("config.txt");
    RunConfig::parse(&read_text(&path)?, &[]).with_context(|| format!("config {}", path.display()))
}

/// `0,2,5-7` → `[0, 2, 5, 6, 7]`.
pub fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
                if a > b {
                    bail!("empty seed range `{part}`");
                }
                seeds.extend(a..=b);
            }
            None => seeds.push(part.parse().with_context(|| format!("bad seed `{part}`"))?),
        }
    }
    if seeds.is_empty() {
        bail!("seed list is empty");
    }
    let mut seen = std::collections::BTreeSet::new();
    if let Some(dup) = seeds.iter().find(|s| !seen.insert(**s)) {
        bail!("seed {dup} listed twice");
    }
    Ok(seeds)
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Columns `s0..`, `a0..`, `r`.
pub fn write_trajectory(path: &Path, t: &TrajectoryMatrix64) -> Result<()> {
    let mut w = csv_writer(path)?;
    let header: Vec<String> = (0..t.state_dim())
        .map(|i| format!("s{i}"))
        .chain((0..t.action_dim()).map(|i| format!("a{i}")))
        .chain(std::iter::once("r".to_string()))
        .collect();
    w.write_record(&header)?;
    for i in 0..t.rows() {
        let row: Vec<String> =
            t.state_row(i).iter().chain(t.action_row(i)).chain(std::iter::once(&t.rewards()[i])).map(|&v| num(v)).collect();
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory(path: &Path) -> Result<TrajectoryMatrix64> {
    let mut r = csv_reader(path)?;
    let header = r.headers()?.clone();
    let m1 = header.iter().filter(|h| h.starts_with('s')).count();
    let m2 = header.iter().filter(|h| h.starts_with('a')).count();
    if header.len() != m1 + m2 + 1 || header.get(header.len() - 1) != Some("r") {
        bail!("{}: expected columns s0.., a0.., r", path.display());
    }
    let (mut states, mut actions, mut rewards) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|v| v.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}: row {}", path.display(), line + 2))?;
        states.extend_from_slice(&vals[..m1]);
        actions.extend_from_slice(&vals[m1..m1 + m2]);
        rewards.push(vals[m1 + m2]);
    }
    Ok(TrajectoryMatrix64::new(m1, m2, states, actions, rewards)?)
}
