use std::collections::BTreeMap;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use rand::Rng;
use ssrs::gradcheck::{self, TOLERANCE};
use ssrs::rng::{derive_seed, seeded, stream};
use ssrs::training::{run_episode, BackboneQ};
use ssrs::{apply_augment, AugmentSpec, TrajectoryMatrix64};

use crate::io::{self, num};
use crate::{ConfigArgs, OutArgs};

fn load_backbone(run: &Path, config: &ssrs::RunConfig) -> Result<BackboneQ<f64>> {
    let path = run.join("qtable.txt");
    BackboneQ::from_text(&io::read_text(&path)?, config.gamma, config.lr).with_context(|| format!("{}", path.display()))
}

pub fn eval(run: &Path, episodes: usize, out: &crate::OutArgs) -> Result<ExitCode> {
    if episodes == 0 {
        bail!("--episodes must be at least 1");
    }
    let config = io::run_config(run)?;
    let q = load_backbone(run, &config)?;
    let mut env = config.env.build::<f64>(config.n)?;
    io::prepare_file(&out.out, out.force)?;
    let mut w = io::csv_writer(&out.out)?;
    w.write_record(["episode", "return", "steps"])?;
    let mut total = 0.0;
    for e in 0..episodes {
        let (steps, ret) = run_episode(env.as_mut(), derive_seed(config.seed, e as u64), |s| q.greedy(s))?;
        total += ret;
        w.write_record([(e + 1).to_string(), num(ret), steps.len().to_string()])?;
    }
    w.flush()?;
    println!("mean return {:.6} over {episodes} episodes", total / episodes as f64);
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(networks: usize, seed: u64) -> Result<ExitCode> {
    let report = gradcheck::gradient_check(networks, seed)?;
    println!("networks {} params {}", report.networks, report.params_per_network);
    for (name, err) in [("L_r", report.l_r), ("L_QV", report.l_qv), ("L_s", report.l_s)] {
        let verdict = if err <= TOLERANCE { "ok" } else { "FAIL" };
        println!("{name:<5} max rel err {err:.3e} {verdict}");
    }
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn parse_params(raw: &[String]) -> Result<BTreeMap<String, f64>> {
    let mut map = BTreeMap::new();
    for p in raw {
        let (k, v) = p.split_once('=').with_context(|| format!("expected NAME=VALUE, got `{p}`"))?;
        let v: f64 = v.trim().parse().with_context(|| format!("bad value in `{p}`"))?;
        if map.insert(k.trim().to_string(), v).is_some() {
            bail!("parameter `{}` given twice", k.trim());
        }
    }
    Ok(map)
}

pub fn augment_check(input: &Path, kind: &str, params: &[String], seed: u64, out: &OutArgs) -> Result<ExitCode> {
    let spec = AugmentSpec::from_name(kind, &parse_params(params)?)?;
    let traj = io::read_trajectory(input)?;
    let mut rng = seeded(seed, stream::AUGMENT);
    let aug = apply_augment(&spec, &traj, &mut rng)?;
    let mut problems = Vec::new();
    if (aug.rows(), aug.state_dim(), aug.action_dim()) != (traj.rows(), traj.state_dim(), traj.action_dim()) {
        problems.push("shape changed");
    }
    if aug.actions() != traj.actions() {
        problems.push("actions changed");
    }
    if aug.rewards() != traj.rewards() {
        problems.push("rewards changed");
    }
    if aug.states().iter().any(|x| !x.is_finite()) {
        problems.push("non-finite state entries");
    }
    io::prepare_file(&out.out, out.force)?;
    io::write_trajectory(&out.out, &aug)?;
    println!("{spec}: {} rows, {} state columns", aug.rows(), aug.state_dim());
    if problems.is_empty() {
        println!("invariants ok");
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("invariants violated: {}", problems.join(", "));
        Ok(ExitCode::from(2))
    }
}

pub fn rollout(args: &ConfigArgs, run: Option<&Path>, seed: u64, out: &OutArgs) -> Result<ExitCode> {
    let config = match run {
        Some(dir) => io::run_config(dir)?,
        None => io::load_config(args)?,
    };
    let mut env = config.env.build::<f64>(config.n)?;
    let (steps, ret) = match run {
        Some(dir) => {
            let q = load_backbone(dir, &config)?;
            run_episode(env.as_mut(), seed, |s| q.greedy(s))?
        }
        None => {
            let n_actions = env.n_actions();
            let mut rng = seeded(seed, stream::POLICY);
            run_episode(env.as_mut(), seed, |_| rng.random_range(0..n_actions))?
        }
    };
    let traj = TrajectoryMatrix64::from_transitions(&steps)?;
    io::prepare_file(&out.out, out.force)?;
    io::write_trajectory(&out.out, &traj)?;
    println!("{} steps, return {ret}", steps.len());
    Ok(ExitCode::SUCCESS)
}
