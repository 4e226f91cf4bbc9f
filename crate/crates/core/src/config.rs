//! Run configuration: a flat `key = value` text format with dotted keys.
//!
//! Blank lines and `#` comments are ignored. Unknown keys, malformed values
//! and out-of-range settings are rejected with the offending line number.
//! [`RunConfig::to_text`] writes every key, and parsing that text gives back
//! an identical config.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::augment::{Pairing, PairingParams};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::estimator::{EstimatorShape, DEFAULT_HIDDEN};
use crate::schedules::ScheduleParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    /// λ and α follow their annealing curves.
    Dynamic,
    /// λ and α stay at their final values.
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub episodes: usize,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Backbone step size η.
    pub lr: f64,
    pub gamma: f64,
    /// Initial value of every backbone Q entry.
    pub q_init: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of the episodes over which ε decays linearly.
    pub epsilon_decay: f64,

    pub beta: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub p_u: f64,
    pub n_z: usize,
    /// Double-entropy partition count.
    pub n: usize,
    pub sigmoid_k: f64,
    pub t_sel: f64,
    pub schedule: ScheduleKind,
    pub static_pu: bool,
    pub monotonicity: bool,
    pub shaping: bool,
    /// Keep shaped rewards across passes instead of restoring them first.
    pub shaping_persist: bool,
    pub estimator_updates: bool,

    pub estimator_lr: f64,
    pub estimator_steps: usize,
    /// Entries per estimator step, split by original reward afterwards.
    pub estimator_batch: usize,
    pub estimator_hidden: Vec<usize>,
    pub estimator_dropout: bool,
    pub dropout: f64,
    pub input_scale: f64,

    pub augment: PairingParams,
    pub env: EnvSpec,

    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub checkpoint_interval: usize,
    pub dist_epochs: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            episodes: 200,
            buffer_capacity: 30_000,
            batch_size: 32,
            lr: 0.5,
            gamma: 0.99,
            q_init: 1.0,
            epsilon_start: 0.2,
            epsilon_end: 0.01,
            epsilon_decay: 0.5,
            beta: 0.5,
            lambda: 0.9,
            alpha: 0.7,
            p_u: 0.01,
            n_z: 12,
            n: 8,
            sigmoid_k: 1.0,
            t_sel: 0.1,
            schedule: ScheduleKind::Dynamic,
            static_pu: false,
            monotonicity: true,
            shaping: true,
            shaping_persist: false,
            estimator_updates: true,
            estimator_lr: 0.05,
            estimator_steps: 1,
            estimator_batch: 64,
            estimator_hidden: DEFAULT_HIDDEN.to_vec(),
            estimator_dropout: false,
            dropout: 0.2,
            input_scale: 1.0 / 255.0,
            augment: PairingParams::default(),
            env: EnvSpec::default(),
            eval_interval: 10,
            eval_episodes: 5,
            checkpoint_interval: 0,
            dist_epochs: vec![200, 400, 600, 800, 1000],
        }
    }
}

/// Every recognised key, in serialisation order.
pub const KEYS: &[&str] = &[
    "seed",
    "episodes",
    "buffer_capacity",
    "batch_size",
    "lr",
    "gamma",
    "q_init",
    "epsilon_start",
    "epsilon_end",
    "epsilon_decay",
    "beta",
    "lambda",
    "alpha",
    "p_u",
    "n_z",
    "n",
    "sigmoid_k",
    "t_sel",
    "schedule",
    "static_pu",
    "monotonicity",
    "shaping",
    "shaping_persist",
    "estimator_updates",
    "estimator_lr",
    "estimator_steps",
    "estimator_batch",
    "estimator_hidden",
    "estimator_dropout",
    "dropout",
    "input_scale",
    "augment.pairing",
    "augment.weak_sigma",
    "augment.cutout_n",
    "augment.smooth_n",
    "env.kind",
    "env.length",
    "env.width",
    "env.height",
    "env.start",
    "env.key",
    "env.door",
    "env.max_steps",
    "eval_interval",
    "eval_episodes",
    "checkpoint_interval",
    "dist_epochs",
];

/// Grid layout used when `env.kind = key_door_grid` leaves fields unset.
const GRID_DEFAULT: (usize, usize, (usize, usize), (usize, usize), (usize, usize), usize) =
    (5, 5, (0, 0), (4, 0), (0, 4), 60);

impl RunConfig {
    /// Parses `text` on top of the defaults, then applies `overrides`
    /// (`key=value` strings) in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut raw: Vec<(usize, String, String)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (k, v) = split_pair(body).ok_or_else(|| cfg_err(line_no, format!("expected `key = value`, got `{body}`")))?;
            raw.push((line_no, k, v));
        }
        for (i, ov) in overrides.iter().enumerate() {
            let (k, v) = split_pair(ov).ok_or_else(|| cfg_err(0, format!("override #{} `{ov}` is not key=value", i + 1)))?;
            raw.push((0, k, v));
        }

        let mut cfg = RunConfig::default();
        let mut lines: HashMap<&'static str, usize> = HashMap::new();
        let mut env_fields: HashMap<&'static str, (usize, String)> = HashMap::new();
        for (line, key, value) in &raw {
            let Some(&known) = KEYS.iter().find(|k| **k == key.as_str()) else {
                return Err(cfg_err(*line, format!("unknown key `{key}`")));
            };
            lines.insert(known, *line);
            if known.starts_with("env.") {
                env_fields.insert(known, (*line, value.clone()));
                continue;
            }
            cfg.set(known, value, *line)?;
        }
        cfg.env = build_env(&env_fields)?;
        cfg.validate_with(|k| lines.get(k).copied().unwrap_or(0))?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<()> {
        match key {
            "seed" => self.seed = parse(v, line)?,
            "episodes" => self.episodes = parse(v, line)?,
            "buffer_capacity" => self.buffer_capacity = parse(v, line)?,
            "batch_size" => self.batch_size = parse(v, line)?,
            "lr" => self.lr = parse(v, line)?,
            "gamma" => self.gamma = parse(v, line)?,
            "q_init" => self.q_init = parse(v, line)?,
            "epsilon_start" => self.epsilon_start = parse(v, line)?,
            "epsilon_end" => self.epsilon_end = parse(v, line)?,
            "epsilon_decay" => self.epsilon_decay = parse(v, line)?,
            "beta" => self.beta = parse(v, line)?,
            "lambda" => self.lambda = parse(v, line)?,
            "alpha" => self.alpha = parse(v, line)?,
            "p_u" => self.p_u = parse(v, line)?,
            "n_z" => self.n_z = parse(v, line)?,
            "n" => self.n = parse(v, line)?,
            "sigmoid_k" => self.sigmoid_k = parse(v, line)?,
            "t_sel" => self.t_sel = parse(v, line)?,
            "schedule" => {
                self.schedule = match v {
                    "dynamic" => ScheduleKind::Dynamic,
                    "static" => ScheduleKind::Static,
                    _ => return Err(cfg_err(line, format!("schedule must be dynamic|static, got `{v}`"))),
                }
            }
            "static_pu" => self.static_pu = parse_switch(v, line)?,
            "monotonicity" => self.monotonicity = parse_switch(v, line)?,
            "shaping" => self.shaping = parse_switch(v, line)?,
            "shaping_persist" => self.shaping_persist = parse_switch(v, line)?,
            "estimator_updates" => self.estimator_updates = parse_switch(v, line)?,
            "estimator_lr" => self.estimator_lr = parse(v, line)?,
            "estimator_steps" => self.estimator_steps = parse(v, line)?,
            "estimator_batch" => self.estimator_batch = parse(v, line)?,
            "estimator_hidden" => self.estimator_hidden = parse_list(v, line)?,
            "estimator_dropout" => self.estimator_dropout = parse_switch(v, line)?,
            "dropout" => self.dropout = parse(v, line)?,
            "input_scale" => self.input_scale = parse(v, line)?,
            "augment.pairing" => {
                self.augment.pairing = Pairing::parse(v).map_err(|e| cfg_err(line, e.to_string()))?
            }
            "augment.weak_sigma" => self.augment.weak_sigma = parse(v, line)?,
            "augment.cutout_n" => {
                self.augment.cutout_n = if v == "auto" { None } else { Some(parse(v, line)?) }
            }
            "augment.smooth_n" => self.augment.smooth_n = parse(v, line)?,
            "eval_interval" => self.eval_interval = parse(v, line)?,
            "eval_episodes" => self.eval_episodes = parse(v, line)?,
            "checkpoint_interval" => self.checkpoint_interval = parse(v, line)?,
            "dist_epochs" => self.dist_epochs = parse_list(v, line)?,
            other => unreachable!("unhandled key {other}"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.validate_with(|_| 0)
    }

    fn validate_with(&self, line_of: impl Fn(&str) -> usize) -> Result<()> {
        let check = |ok: bool, key: &str, msg: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(cfg_err(line_of(key), format!("`{key}` {msg}")))
            }
        };
        check(self.beta > 0.0 && self.beta < 1.0, "beta", "must lie in (0, 1)")?;
        check(self.lambda > 0.0 && self.lambda <= 1.0, "lambda", "must lie in (0, 1]")?;
        check((0.0..=1.0).contains(&self.alpha), "alpha", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.p_u), "p_u", "must lie in [0, 1]")?;
        check(self.n_z >= 2, "n_z", "must be at least 2")?;
        check(self.n >= 1, "n", "must be at least 1")?;
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma", "must lie in (0, 1)")?;
        check(self.episodes >= 1, "episodes", "must be at least 1")?;
        check(self.buffer_capacity >= 1, "buffer_capacity", "must be positive")?;
        check(self.batch_size >= 1, "batch_size", "must be positive")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr", "must be positive")?;
        check(self.q_init.is_finite(), "q_init", "must be finite")?;
        check((0.0..=1.0).contains(&self.epsilon_start), "epsilon_start", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.epsilon_end), "epsilon_end", "must lie in [0, 1]")?;
        check((0.0..=1.0).contains(&self.epsilon_decay), "epsilon_decay", "must lie in [0, 1]")?;
        check(self.sigmoid_k > 0.0 && self.sigmoid_k.is_finite(), "sigmoid_k", "must be positive")?;
        check(self.t_sel > 0.0 && self.t_sel.is_finite(), "t_sel", "must be positive")?;
        check(self.estimator_lr > 0.0 && self.estimator_lr.is_finite(), "estimator_lr", "must be positive")?;
        check(self.estimator_batch >= 1, "estimator_batch", "must be positive")?;
        check(self.estimator_hidden.iter().all(|&h| h > 0), "estimator_hidden", "widths must be positive")?;
        check((0.0..1.0).contains(&self.dropout), "dropout", "must lie in [0, 1)")?;
        check(self.input_scale > 0.0 && self.input_scale.is_finite(), "input_scale", "must be positive")?;
        check(self.augment.weak_sigma >= 0.0 && self.augment.weak_sigma.is_finite(), "augment.weak_sigma", "must be >= 0")?;
        check(self.augment.cutout_n != Some(0), "augment.cutout_n", "must be positive")?;
        check(self.augment.smooth_n >= 1, "augment.smooth_n", "must be positive")?;
        check(self.eval_interval >= 1, "eval_interval", "must be positive")?;
        check(self.eval_episodes >= 1, "eval_episodes", "must be positive")?;
        self.env.validate().map_err(|e| cfg_err(line_of("env.kind"), e.to_string()))?;
        Ok(())
    }

    /// Pairing parameters with the double-entropy partition count applied.
    pub fn pairing(&self) -> PairingParams {
        PairingParams { double_entropy_n: self.n, ..self.augment }
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams { lambda_final: self.lambda, alpha_final: self.alpha, ..ScheduleParams::default() }
    }

    pub fn estimator_shape(&self, state_dim: usize, action_dim: usize) -> EstimatorShape {
        EstimatorShape {
            state_dim,
            action_dim,
            reward_slots: self.n_z,
            hidden: self.estimator_hidden.clone(),
            dropout: self.dropout,
            input_scale: self.input_scale,
        }
    }

    /// ε for episode `episode` (0-based).
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let horizon = self.epsilon_decay * self.episodes as f64;
        if horizon <= 0.0 {
            return self.epsilon_end;
        }
        let frac = (episode as f64 / horizon).min(1.0);
        self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| writeln!(out, "{k} = {v}").expect("write to String");
        let onoff = |b: bool| if b { "on".to_string() } else { "off".to_string() };
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let pair = |p: (usize, usize)| format!("{},{}", p.0, p.1);
        put("seed", self.seed.to_string());
        put("episodes", self.episodes.to_string());
        put("buffer_capacity", self.buffer_capacity.to_string());
        put("batch_size", self.batch_size.to_string());
        put("lr", format!("{:?}", self.lr));
        put("gamma", format!("{:?}", self.gamma));
        put("q_init", format!("{:?}", self.q_init));
        put("epsilon_start", format!("{:?}", self.epsilon_start));
        put("epsilon_end", format!("{:?}", self.epsilon_end));
        put("epsilon_decay", format!("{:?}", self.epsilon_decay));
        put("beta", format!("{:?}", self.beta));
        put("lambda", format!("{:?}", self.lambda));
        put("alpha", format!("{:?}", self.alpha));
        put("p_u", format!("{:?}", self.p_u));
        put("n_z", self.n_z.to_string());
        put("n", self.n.to_string());
        put("sigmoid_k", format!("{:?}", self.sigmoid_k));
        put("t_sel", format!("{:?}", self.t_sel));
        put("schedule", match self.schedule {
            ScheduleKind::Dynamic => "dynamic".into(),
            ScheduleKind::Static => "static".into(),
        });
        put("static_pu", onoff(self.static_pu));
        put("monotonicity", onoff(self.monotonicity));
        put("shaping", onoff(self.shaping));
        put("shaping_persist", onoff(self.shaping_persist));
        put("estimator_updates", onoff(self.estimator_updates));
        put("estimator_lr", format!("{:?}", self.estimator_lr));
        put("estimator_steps", self.estimator_steps.to_string());
        put("estimator_batch", self.estimator_batch.to_string());
        put("estimator_hidden", list(&self.estimator_hidden));
        put("estimator_dropout", onoff(self.estimator_dropout));
        put("dropout", format!("{:?}", self.dropout));
        put("input_scale", format!("{:?}", self.input_scale));
        put("augment.pairing", self.augment.pairing.name().into());
        put("augment.weak_sigma", format!("{:?}", self.augment.weak_sigma));
        put("augment.cutout_n", self.augment.cutout_n.map_or("auto".into(), |n| n.to_string()));
        put("augment.smooth_n", self.augment.smooth_n.to_string());
        match &self.env {
            EnvSpec::SparseChain { length, max_steps } => {
                put("env.kind", "sparse_chain".into());
                put("env.length", length.to_string());
                put("env.max_steps", max_steps.to_string());
            }
            EnvSpec::KeyDoorGrid { width, height, start, key, door, max_steps } => {
                put("env.kind", "key_door_grid".into());
                put("env.width", width.to_string());
                put("env.height", height.to_string());
                put("env.start", pair(*start));
                put("env.key", pair(*key));
                put("env.door", pair(*door));
                put("env.max_steps", max_steps.to_string());
            }
        }
        put("eval_interval", self.eval_interval.to_string());
        put("eval_episodes", self.eval_episodes.to_string());
        put("checkpoint_interval", self.checkpoint_interval.to_string());
        put("dist_epochs", list(&self.dist_epochs));
        out
    }
}

fn cfg_err(line: usize, message: String) -> Error {
    Error::Config { line, message }
}

fn split_pair(s: &str) -> Option<(String, String)> {
    let (k, v) = s.split_once('=')?;
    let (k, v) = (k.trim(), v.trim());
    (!k.is_empty()).then(|| (k.to_string(), v.to_string()))
}

fn parse<T: std::str::FromStr>(v: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| cfg_err(line, format!("cannot parse `{v}`: {e}")))
}

fn parse_switch(v: &str, line: usize) -> Result<bool> {
    match v {
        "on" | "true" => Ok(true),
        "off" | "false" => Ok(false),
        _ => Err(cfg_err(line, format!("expected on|off, got `{v}`"))),
    }
}

fn parse_list(v: &str, line: usize) -> Result<Vec<usize>> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse(p.trim(), line)).collect()
}

fn parse_cell(v: &str, line: usize) -> Result<(usize, usize)> {
    match parse_list(v, line)?.as_slice() {
        [x, y] => Ok((*x, *y)),
        _ => Err(cfg_err(line, format!("expected `x,y`, got `{v}`"))),
    }
}

fn build_env(fields: &HashMap<&'static str, (usize, String)>) -> Result<EnvSpec> {
    let get = |k: &str| fields.get(k);
    let kind_line = get("env.kind").map_or(0, |(l, _)| *l);
    let kind = get("env.kind").map_or("sparse_chain", |(_, v)| v.as_str());
    let num = |k: &str, d: usize| -> Result<usize> { get(k).map_or(Ok(d), |(l, v)| parse(v, *l)) };
    let cell = |k: &str, d: (usize, usize)| -> Result<(usize, usize)> { get(k).map_or(Ok(d), |(l, v)| parse_cell(v, *l)) };
    let reject = |keys: &[&str]| -> Result<()> {
        match keys.iter().find_map(|k| get(k)) {
            Some((l, _)) => Err(cfg_err(*l, format!("key does not apply to env.kind = {kind}"))),
            None => Ok(()),
        }
    };
    match kind {
        "sparse_chain" => {
            reject(&["env.width", "env.height", "env.start", "env.key", "env.door"])?;
            let EnvSpec::SparseChain { length, max_steps } = EnvSpec::default() else { unreachable!() };
            Ok(EnvSpec::SparseChain { length: num("env.length", length)?, max_steps: num("env.max_steps", max_steps)? })
        }
        "key_door_grid" => {
            reject(&["env.length"])?;
            let (w, h, s, k, d, m) = GRID_DEFAULT;
            Ok(EnvSpec::KeyDoorGrid {
                width: num("env.width", w)?,
                height: num("env.height", h)?,
                start: cell("env.start", s)?,
                key: cell("env.key", k)?,
                door: cell("env.door", d)?,
                max_steps: num("env.max_steps", m)?,
            })
        }
        other => Err(cfg_err(kind_line, format!("unknown env.kind `{other}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_reference_defaults() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!((c.beta, c.lambda, c.alpha, c.p_u, c.n_z, c.n), (0.5, 0.9, 0.7, 0.01, 12, 8));
    }

    #[test]
    fn override_applies_last() {
        let c = RunConfig::parse("beta = 0.4\n", &["beta=0.25".into()]).unwrap();
        assert_eq!(c.beta, 0.25);
        assert_eq!(RunConfig { beta: 0.5, ..c }, RunConfig::default());
    }

    #[test]
    fn range_error_carries_line() {
        let err = RunConfig::parse("# comment\n\nbeta = 2.0\n", &[]).unwrap_err();
        match err {
            Error::Config { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("beta"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_key_and_type_errors() {
        assert!(matches!(RunConfig::parse("betta = 0.3", &[]), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("seed = 1\nn_z = twelve", &[]), Err(Error::Config { line: 2, .. })));
        assert!(matches!(RunConfig::parse("monotonicity = maybe", &[]), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("just words", &[]), Err(Error::Config { line: 1, .. })));
        assert!(matches!(RunConfig::parse("env.kind = sparse_chain\nenv.width = 3", &[]), Err(Error::Config { line: 2, .. })));
    }

    #[test]
    fn text_roundtrip_including_grid() {
        let text = "env.kind = key_door_grid\nenv.width = 6\nenv.door = 5,5\nenv.height = 6\naugment.pairing = ssrs_c\n\
                    augment.cutout_n = 4\nestimator_hidden = 16,8\nmonotonicity = off\nschedule = static\nlr = 0.123456789012345\n";
        let c = RunConfig::parse(text, &[]).unwrap();
        assert_eq!(c.augment.cutout_n, Some(4));
        let again = RunConfig::parse(&c.to_text(), &[]).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
    }

    #[test]
    fn epsilon_schedule() {
        let c = RunConfig { episodes: 100, epsilon_decay: 0.5, epsilon_start: 1.0, epsilon_end: 0.05, ..RunConfig::default() };
        assert_eq!(c.epsilon_at(0), 1.0);
        assert!((c.epsilon_at(50) - 0.05).abs() < 1e-12);
        assert!((c.epsilon_at(99) - 0.05).abs() < 1e-12);
        assert!((c.epsilon_at(25) - 0.525).abs() < 1e-12);
    }
}
