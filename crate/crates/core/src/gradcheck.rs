//! Backprop versus central finite differences on small random estimators.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentSpec;
use crate::error::Result;
use crate::estimator::{mix_heads, EstimatorParams, EstimatorShape};
use crate::losses::{
    consistency_views, finite_diff_gradient, loss_qv, loss_r, loss_s, max_relative_error, ConsistencySample, LossMode,
    LossSettings,
};
use crate::reward_set::RewardSet;
use crate::rng::{derive_seed, seeded, RunRng};
use crate::trajectory::Transition;

pub const FD_STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;
/// Minimum distance of every ReLU input and every top-two confidence gap
/// from a kink, so the finite-difference stencil stays on one smooth piece.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub networks: usize,
    pub params_per_network: usize,
    pub l_r: f64,
    pub l_qv: f64,
    pub l_s: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.l_r <= TOLERANCE && self.l_qv <= TOLERANCE && self.l_s <= TOLERANCE
    }
}

/// A random toy estimator with its batches.
#[derive(Debug, Clone)]
pub struct ToyProblem {
    pub params: EstimatorParams<f64>,
    pub labeled: Vec<Transition<f64>>,
    pub views: Vec<ConsistencySample<f64>>,
    pub zset: RewardSet<f64>,
    pub settings: LossSettings<f64>,
}

fn draw(seed: u64) -> Result<ToyProblem> {
    let mut rng: RunRng = seeded(seed, 0);
    let shape = EstimatorShape { hidden: vec![6], ..EstimatorShape::new(4, 2, 3) };
    let mut params = EstimatorParams::<f64>::init(&shape, &mut rng)?;
    let theta: Vec<f64> = params.flatten().iter().map(|w| w + rng.random_range(-0.1..0.1)).collect();
    params.set_flat(&theta)?;
    let mut transition = |reward: f64| {
        let state: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..255.0)).collect();
        let next: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..255.0)).collect();
        let mut action = vec![0.0; 2];
        action[rng.random_range(0..2)] = 1.0;
        Transition::new(state, action, reward, next, false)
    };
    let labeled = vec![transition(1.0), transition(0.5), transition(1.0), transition(0.5)];
    let unlabeled: Vec<Transition<f64>> = (0..4).map(|_| transition(0.0)).collect();
    let refs: Vec<&Transition<f64>> = unlabeled.iter().collect();
    let specs = (AugmentSpec::Gaussian { sigma: 0.1 }, AugmentSpec::DoubleEntropy { n: 2 });
    let views = consistency_views(&refs, &specs, derive_seed(seed, 1))?;
    Ok(ToyProblem {
        params,
        labeled,
        views,
        zset: RewardSet::from_values(vec![0.0, 0.5, 1.0])?,
        settings: LossSettings::new(0.34, 0.5, 1.0, 0.1),
    })
}

fn top_gap(q: &[f64]) -> f64 {
    let mut v = q.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v[0] - v[1]
}

fn min_margin(p: &ToyProblem) -> Result<f64> {
    let net = &p.params;
    let beta = p.settings.beta;
    let mut margin = f64::INFINITY;
    let mut relu = |c: &crate::mlp::ForwardCache<f64>| {
        for v in c.pre_activations().iter().flatten() {
            margin = margin.min(v.abs());
        }
    };
    let mut gaps = Vec::new();
    let mut triple = |s: &[f64], a: &[f64], s2: &[f64]| -> Result<()> {
        let q = net.forward_q::<RunRng>(s, a, None)?;
        let v_now = net.forward_v::<RunRng>(s, None)?;
        let v_next = net.forward_v::<RunRng>(s2, None)?;
        relu(&q);
        relu(&v_now);
        relu(&v_next);
        gaps.push(top_gap(&mix_heads(q.output(), v_next.output(), beta)?));
        Ok(())
    };
    for t in &p.labeled {
        triple(&t.state, &t.action, &t.next_state)?;
    }
    for x in &p.views {
        triple(&x.weak_state, &x.action, &x.weak_next)?;
        triple(&x.strong_state, &x.action, &x.strong_next)?;
    }
    Ok(gaps.into_iter().fold(margin, f64::min))
}

/// Toy problem for `seed`: 4-dim states, 2 actions, one hidden layer of 6 and
/// three reward slots (114 parameters), redrawn until every kink is at least
/// [`KINK_MARGIN`] away.
pub fn toy_problem(seed: u64) -> Result<ToyProblem> {
    let mut attempt = 0;
    loop {
        let p = draw(derive_seed(seed, attempt))?;
        if min_margin(&p)? >= KINK_MARGIN {
            return Ok(p);
        }
        attempt += 1;
    }
}

/// Worst relative error per smoothed loss over `networks` toy problems.
pub fn gradient_check(networks: usize, seed: u64) -> Result<GradcheckReport> {
    let mut report = GradcheckReport { networks, params_per_network: 0, l_r: 0.0, l_qv: 0.0, l_s: 0.0 };
    for k in 0..networks {
        let ToyProblem { mut params, labeled, views, zset, settings } = toy_problem(derive_seed(seed, k as u64))?;
        report.params_per_network = params.param_count();
        let lab: Vec<&Transition<f64>> = labeled.iter().collect();
        let theta = params.flatten();

        let (_, g_r, _) = loss_r(&params, &lab, &zset, &settings, LossMode::Smooth, None)?;
        let (_, g_qv, _) = loss_qv(&params, &lab, None)?;
        let (_, g_s, _) = loss_s(&params, &views, &settings, LossMode::Smooth, None)?;

        let mut fd = |f: &mut dyn FnMut(&EstimatorParams<f64>) -> f64| {
            finite_diff_gradient(
                |th: &[f64]| {
                    params.set_flat(th).expect("same length");
                    f(&params)
                },
                &theta,
                FD_STEP,
            )
        };
        let fd_r = fd(&mut |p| loss_r(p, &lab, &zset, &settings, LossMode::Smooth, None).expect("toy batch").0);
        let fd_qv = fd(&mut |p| loss_qv(p, &lab, None).expect("toy batch").0);
        let fd_s = fd(&mut |p| loss_s(p, &views, &settings, LossMode::Smooth, None).expect("toy batch").0);

        report.l_r = report.l_r.max(max_relative_error(&g_r.expect("smooth mode").values, &fd_r));
        report.l_qv = report.l_qv.max(max_relative_error(&g_qv.values, &fd_qv));
        report.l_s = report.l_s.max(max_relative_error(&g_s.expect("smooth mode").values, &fd_s));
    }
    Ok(report)
}
