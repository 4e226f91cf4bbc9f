//! Estimator objectives and their gradients.
//!
//! Each loss exists in a hard form (indicator gates, arg-max selection) used
//! for reporting, and a smooth form where every gate `1(x ≥ λ)` becomes
//! `σ(k (x − λ))` and hard selection becomes [`soft_select`]. Smooth forms are
//! differentiated by hand: per-sample terms produce `dL/dq`, which is pushed
//! through the two heads by [`MlpNet::backward`](crate::mlp::MlpNet::backward).

use serde::{Deserialize, Serialize};

use crate::augment::{weak_strong_pair, AugmentSpec};
use crate::error::{arg_err, Error, Result};
use crate::estimator::{mix_heads, pseudo_label_index, select, soft_select_with_grad, EstimatorParams};
use crate::mlp::ForwardCache;
use crate::reward_set::RewardSet;
use crate::rng::{derive_seed, RunRng};
use crate::scalar::{argmax, sigmoid, Scalar};
use crate::trajectory::{TrajectoryMatrix, Transition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Hard,
    Smooth,
}

/// Knobs shared by the three losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings<S> {
    pub lambda: S,
    pub beta: S,
    /// Sigmoid sharpness `k` of the smoothed gates.
    pub sharpness: S,
    /// Soft-selection temperature.
    pub temperature: S,
}

impl<S: Scalar> LossSettings<S> {
    pub fn new(lambda: f64, beta: f64, sharpness: f64, temperature: f64) -> Self {
        Self {
            lambda: S::lit(lambda),
            beta: S::lit(beta),
            sharpness: S::lit(sharpness),
            temperature: S::lit(temperature),
        }
    }
}

/// Flat gradient aligned with [`EstimatorParams::flatten`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<S> {
    pub values: Vec<S>,
}

impl<S: Scalar> Gradient<S> {
    pub fn zeros(len: usize) -> Self {
        Self { values: vec![S::zero(); len] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> S {
        self.values.iter().map(|&g| g * g).sum::<S>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|g| g.is_finite())
    }

    /// `self += c · other`.
    pub fn add_scaled(&mut self, c: S, other: &Gradient<S>) {
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a = *a + c * b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_qv: f64,
    pub l_s: f64,
    pub total: f64,
    pub alpha: f64,
    /// Labeled samples whose gate `max q ≥ λ` passed.
    pub gate_r: usize,
    /// Unlabeled samples whose weak and strong gates both passed.
    pub gate_s: usize,
    /// Labeled samples with at least one positive advantage component.
    pub qv_active: usize,
    pub labeled: usize,
    pub unlabeled: usize,
}

impl LossBreakdown {
    pub fn gate_r_rate(&self) -> f64 {
        if self.labeled == 0 { 0.0 } else { self.gate_r as f64 / self.labeled as f64 }
    }

    pub fn gate_s_rate(&self) -> f64 {
        if self.unlabeled == 0 { 0.0 } else { self.gate_s as f64 / self.unlabeled as f64 }
    }
}

// ---------------------------------------------------------------------------
// Per-sample terms on confidence vectors

/// `1(max q ≥ λ) · (r − select(q))²`.
pub fn reward_term_hard<S: Scalar>(q: &[S], z: &[S], reward: S, lambda: S) -> S {
    let i = argmax(q);
    if q[i] >= lambda {
        let e = reward - select(q, z, lambda);
        e * e
    } else {
        S::zero()
    }
}

/// `σ(k (max q − λ)) · (r − soft_select(q))²` and its gradient in `q`.
pub fn reward_term_smooth<S: Scalar>(
    q: &[S],
    z: &[S],
    reward: S,
    settings: &LossSettings<S>,
) -> (S, Vec<S>) {
    let k = settings.sharpness;
    let j = argmax(q);
    let gate = sigmoid(k * (q[j] - settings.lambda));
    let (zhat, dz) = soft_select_with_grad(q, z, settings.temperature);
    let e = reward - zhat;
    let mut grad: Vec<S> = dz.iter().map(|&d| -S::lit(2.0) * gate * e * d).collect();
    grad[j] = grad[j] + k * gate * (S::one() - gate) * e * e;
    (gate * e * e, grad)
}

/// `Σᵢ max(Qᵢ − Vᵢ, 0)²` with gradients for both heads.
pub fn advantage_term<S: Scalar>(q_head: &[S], v_head: &[S]) -> (S, Vec<S>, Vec<S>) {
    let mut value = S::zero();
    let mut dq = Vec::with_capacity(q_head.len());
    for (&qi, &vi) in q_head.iter().zip(v_head) {
        let d = (qi - vi).max(S::zero());
        value = value + d * d;
        dq.push(S::lit(2.0) * d);
    }
    let dv = dq.iter().map(|&g| -g).collect();
    (value, dq, dv)
}

fn neg_log<S: Scalar>(p: S) -> S {
    -p.max(S::min_positive_value()).ln()
}

/// `1(max qˢ ≥ λ ∧ max qʷ ≥ λ) · (−ln qˢ[i*])`, `i*` the weak pseudo-label.
pub fn consistency_term_hard<S: Scalar>(q_weak: &[S], q_strong: &[S], lambda: S) -> S {
    match pseudo_label_index(q_weak, lambda) {
        Some(i) if q_strong[argmax(q_strong)] >= lambda => neg_log(q_strong[i]),
        _ => S::zero(),
    }
}

/// Smoothed consistency term with gradients for the weak and strong views.
pub fn consistency_term_smooth<S: Scalar>(
    q_weak: &[S],
    q_strong: &[S],
    settings: &LossSettings<S>,
) -> (S, Vec<S>, Vec<S>) {
    let k = settings.sharpness;
    let jw = argmax(q_weak);
    let js = argmax(q_strong);
    let gw = sigmoid(k * (q_weak[jw] - settings.lambda));
    let gs = sigmoid(k * (q_strong[js] - settings.lambda));
    let gate = gw * gs;
    // the pseudo-label index is the weak arg-max; it is piecewise constant in θ
    let target = jw;
    let p = q_strong[target].max(S::min_positive_value());
    let h = neg_log(p);
    let mut d_weak = vec![S::zero(); q_weak.len()];
    let mut d_strong = vec![S::zero(); q_strong.len()];
    d_weak[jw] = gs * k * gw * (S::one() - gw) * h;
    d_strong[js] = k * gs * (S::one() - gs) * gw * h;
    d_strong[target] = d_strong[target] - gate / p;
    (gate * h, d_weak, d_strong)
}

// ---------------------------------------------------------------------------
// Network-level losses

struct HeadPair<S> {
    q: ForwardCache<S>,
    v: ForwardCache<S>,
}

fn heads<S: Scalar>(
    params: &EstimatorParams<S>,
    s: &[S],
    a: &[S],
    v_state: &[S],
    dropout: &mut Option<&mut RunRng>,
) -> Result<HeadPair<S>> {
    let q = params.forward_q(s, a, dropout.as_deref_mut())?;
    let v = params.forward_v(v_state, dropout.as_deref_mut())?;
    Ok(HeadPair { q, v })
}

fn push_back<S: Scalar>(
    params: &EstimatorParams<S>,
    pair: &HeadPair<S>,
    dq: &[S],
    dv: &[S],
    scale: S,
    grad: &mut Gradient<S>,
) -> Result<()> {
    let (gq, gv) = grad.values.split_at_mut(params.q_net.param_count());
    params.q_net.backward(&pair.q, dq, scale, gq)?;
    params.v_net.backward(&pair.v, dv, scale, gv)
}

fn check_labeled<S: Scalar>(batch: &[&Transition<S>]) -> Result<()> {
    if batch.iter().any(|t| t.reward == S::zero()) {
        return arg_err("labeled batch must contain only nonzero-reward transitions");
    }
    Ok(())
}

/// Supervised reward loss on nonzero-reward transitions.
///
/// Returns the value and, in smooth mode, its gradient. An empty batch gives 0.
pub fn loss_r<S: Scalar>(
    params: &EstimatorParams<S>,
    batch: &[&Transition<S>],
    zset: &RewardSet<S>,
    settings: &LossSettings<S>,
    mode: LossMode,
    mut dropout: Option<&mut RunRng>,
) -> Result<(S, Option<Gradient<S>>, usize)> {
    check_labeled(batch)?;
    let n = params.param_count();
    if batch.is_empty() {
        return Ok((S::zero(), (mode == LossMode::Smooth).then(|| Gradient::zeros(n)), 0));
    }
    if zset.len() != params.reward_slots() {
        return Err(Error::Dimension { expected: params.reward_slots(), got: zset.len() });
    }
    let inv = S::one() / S::from_usize_lossy(batch.len());
    let beta = settings.beta;
    let mut total = S::zero();
    let mut gate_count = 0;
    let mut grad = (mode == LossMode::Smooth).then(|| Gradient::zeros(n));
    for t in batch {
        let pair = heads(params, &t.state, &t.action, &t.next_state, &mut dropout)?;
        let q = mix_heads(pair.q.output(), pair.v.output(), beta)?;
        if q[argmax(&q)] >= settings.lambda {
            gate_count += 1;
        }
        match &mut grad {
            None => total = total + reward_term_hard(&q, zset.values(), t.reward, settings.lambda),
            Some(g) => {
                let (value, dq) = reward_term_smooth(&q, zset.values(), t.reward, settings);
                total = total + value;
                let d_q: Vec<S> = dq.iter().map(|&d| beta * d).collect();
                let d_v: Vec<S> = dq.iter().map(|&d| (S::one() - beta) * d).collect();
                push_back(params, &pair, &d_q, &d_v, inv, g)?;
            }
        }
    }
    Ok((total * inv, grad, gate_count))
}

/// Monotonicity loss: mean over samples of `Σᵢ max(Q(s,a)ᵢ − V(s)ᵢ, 0)²`.
pub fn loss_qv<S: Scalar>(
    params: &EstimatorParams<S>,
    batch: &[&Transition<S>],
    mut dropout: Option<&mut RunRng>,
) -> Result<(S, Gradient<S>, usize)> {
    let n = params.param_count();
    let mut grad = Gradient::zeros(n);
    if batch.is_empty() {
        return Ok((S::zero(), grad, 0));
    }
    let inv = S::one() / S::from_usize_lossy(batch.len());
    let mut total = S::zero();
    let mut active = 0;
    for t in batch {
        let pair = heads(params, &t.state, &t.action, &t.state, &mut dropout)?;
        let (value, dq, dv) = advantage_term(pair.q.output(), pair.v.output());
        if value > S::zero() {
            active += 1;
            total = total + value;
            push_back(params, &pair, &dq, &dv, inv, &mut grad)?;
        }
    }
    Ok((total * inv, grad, active))
}

/// Weakly and strongly augmented copies of one zero-reward transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencySample<S> {
    pub action: Vec<S>,
    pub weak_state: Vec<S>,
    pub weak_next: Vec<S>,
    pub strong_state: Vec<S>,
    pub strong_next: Vec<S>,
}

/// Builds both views per transition from the two-row trajectory `[s; s']`,
/// with per-sample seeds derived from `seed`.
pub fn consistency_views<S: Scalar>(
    batch: &[&Transition<S>],
    specs: &(AugmentSpec, AugmentSpec),
    seed: u64,
) -> Result<Vec<ConsistencySample<S>>> {
    batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let m1 = t.state_dim();
            let mut states = t.state.clone();
            states.extend_from_slice(&t.next_state);
            let mut actions = t.action.clone();
            actions.extend_from_slice(&t.action);
            let traj = TrajectoryMatrix::new(m1, t.action_dim(), states, actions, vec![t.reward; 2])?;
            let (weak, strong) = weak_strong_pair(specs, &traj, derive_seed(seed, i as u64))?;
            Ok(ConsistencySample {
                action: t.action.clone(),
                weak_state: weak.state_row(0).to_vec(),
                weak_next: weak.state_row(1).to_vec(),
                strong_state: strong.state_row(0).to_vec(),
                strong_next: strong.state_row(1).to_vec(),
            })
        })
        .collect()
}

/// Consistency loss over precomputed weak/strong views of zero-reward transitions.
pub fn loss_s<S: Scalar>(
    params: &EstimatorParams<S>,
    samples: &[ConsistencySample<S>],
    settings: &LossSettings<S>,
    mode: LossMode,
    mut dropout: Option<&mut RunRng>,
) -> Result<(S, Option<Gradient<S>>, usize)> {
    let n = params.param_count();
    if samples.is_empty() {
        return Ok((S::zero(), (mode == LossMode::Smooth).then(|| Gradient::zeros(n)), 0));
    }
    let inv = S::one() / S::from_usize_lossy(samples.len());
    let beta = settings.beta;
    let mut total = S::zero();
    let mut gate_count = 0;
    let mut grad = (mode == LossMode::Smooth).then(|| Gradient::zeros(n));
    for x in samples {
        let weak = heads(params, &x.weak_state, &x.action, &x.weak_next, &mut dropout)?;
        let strong = heads(params, &x.strong_state, &x.action, &x.strong_next, &mut dropout)?;
        let qw = mix_heads(weak.q.output(), weak.v.output(), beta)?;
        let qs = mix_heads(strong.q.output(), strong.v.output(), beta)?;
        if qw[argmax(&qw)] >= settings.lambda && qs[argmax(&qs)] >= settings.lambda {
            gate_count += 1;
        }
        match &mut grad {
            None => total = total + consistency_term_hard(&qw, &qs, settings.lambda),
            Some(g) => {
                let (value, dw, ds) = consistency_term_smooth(&qw, &qs, settings);
                total = total + value;
                for (pair, d) in [(&weak, &dw), (&strong, &ds)] {
                    let d_q: Vec<S> = d.iter().map(|&v| beta * v).collect();
                    let d_v: Vec<S> = d.iter().map(|&v| (S::one() - beta) * v).collect();
                    push_back(params, pair, &d_q, &d_v, inv, g)?;
                }
            }
        }
    }
    Ok((total * inv, grad, gate_count))
}

/// Inputs for one combined objective evaluation.
pub struct ObjectiveBatch<'a, S> {
    /// Transitions with nonzero original reward (supervised + monotonicity).
    pub labeled: &'a [&'a Transition<S>],
    /// Augmented views of zero-reward transitions (consistency).
    pub unlabeled: &'a [ConsistencySample<S>],
}

/// `L = L_QV + α·L_s + (1 − α)·L_r`, with the gradient combined the same way.
///
/// `monotonicity = false` drops the `L_QV` term (reported as 0). Hard mode
/// returns a zero gradient.
#[allow(clippy::too_many_arguments)]
pub fn total_loss<S: Scalar>(
    params: &EstimatorParams<S>,
    batch: &ObjectiveBatch<'_, S>,
    zset: &RewardSet<S>,
    settings: &LossSettings<S>,
    alpha: S,
    monotonicity: bool,
    mode: LossMode,
    mut dropout: Option<&mut RunRng>,
) -> Result<(LossBreakdown, Gradient<S>)> {
    if !(alpha >= S::zero() && alpha <= S::one()) {
        return arg_err(format!("alpha must lie in [0, 1], got {alpha}"));
    }
    let n = params.param_count();
    let (l_r, g_r, gate_r) = loss_r(params, batch.labeled, zset, settings, mode, dropout.as_deref_mut())?;
    let (l_s, g_s, gate_s) = loss_s(params, batch.unlabeled, settings, mode, dropout.as_deref_mut())?;
    let (l_qv, g_qv, qv_active) = if monotonicity {
        loss_qv(params, batch.labeled, dropout.as_deref_mut())?
    } else {
        (S::zero(), Gradient::zeros(n), 0)
    };
    let total = l_qv + alpha * l_s + (S::one() - alpha) * l_r;
    let mut grad = Gradient::zeros(n);
    if mode == LossMode::Smooth {
        grad.add_scaled(S::one(), &g_qv);
        if let Some(g) = &g_s {
            grad.add_scaled(alpha, g);
        }
        if let Some(g) = &g_r {
            grad.add_scaled(S::one() - alpha, g);
        }
    }
    let breakdown = LossBreakdown {
        l_r: l_r.to_f64_lossy(),
        l_qv: l_qv.to_f64_lossy(),
        l_s: l_s.to_f64_lossy(),
        total: total.to_f64_lossy(),
        alpha: alpha.to_f64_lossy(),
        gate_r,
        gate_s,
        qv_active,
        labeled: batch.labeled.len(),
        unlabeled: batch.unlabeled.len(),
    };
    Ok((breakdown, grad))
}

/// Combines component values exactly as [`total_loss`] does.
pub fn combine<S: Scalar>(l_qv: S, l_s: S, l_r: S, alpha: S) -> S {
    l_qv + alpha * l_s + (S::one() - alpha) * l_r
}

/// Plain gradient descent `θ ← θ − η g`. Non-finite gradients are rejected
/// before anything is modified.
pub fn sgd_step<S: Scalar>(params: &mut EstimatorParams<S>, grad: &Gradient<S>, lr: S) -> Result<()> {
    if !(lr > S::zero()) {
        return arg_err(format!("learning rate must be positive, got {lr}"));
    }
    if grad.len() != params.param_count() {
        return Err(Error::Dimension { expected: params.param_count(), got: grad.len() });
    }
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite gradient component".into()));
    }
    let (gq, gv) = grad.values.split_at(params.q_net.param_count());
    params.q_net.axpy(-lr, gq)?;
    params.v_net.axpy(-lr, gv)
}

/// Central differences `(L(θ + h eᵢ) − L(θ − h eᵢ)) / 2h` for every coordinate.
pub fn finite_diff_gradient<S: Scalar, F>(mut loss: F, theta: &[S], h: S) -> Vec<S>
where
    F: FnMut(&[S]) -> S,
{
    let mut probe = theta.to_vec();
    let two_h = h + h;
    (0..theta.len())
        .map(|i| {
            probe[i] = theta[i] + h;
            let up = loss(&probe);
            probe[i] = theta[i] - h;
            let down = loss(&probe);
            probe[i] = theta[i];
            (up - down) / two_h
        })
        .collect()
}

/// `max_i |a_i − b_i| / (|b_i| + 1e−8)`, with `b` the reference.
pub fn max_relative_error<S: Scalar>(actual: &[S], reference: &[S]) -> f64 {
    actual
        .iter()
        .zip(reference)
        .map(|(&a, &b)| {
            let (a, b) = (a.to_f64_lossy(), b.to_f64_lossy());
            (a - b).abs() / (b.abs() + 1e-8)
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn settings(lambda: f64) -> LossSettings<f64> {
        LossSettings::new(lambda, 0.5, 1.0, 0.1)
    }

    #[test]
    fn hard_reward_term_examples() {
        let z = [1.0, 2.0];
        assert_eq!(reward_term_hard(&[0.95, 0.05], &z, 1.0, 0.9), 0.0);
        assert_eq!(reward_term_hard(&[0.95, 0.05], &z, 3.0, 0.9), 4.0);
        assert_eq!(reward_term_hard(&[0.6, 0.4], &z, 3.0, 0.9), 0.0);
    }

    #[test]
    fn advantage_term_examples() {
        assert_eq!(advantage_term(&[0.3, 0.7], &[0.3, 0.7]).0, 0.0);
        let (v, dq, dv) = advantage_term(&[0.1, 0.2], &[0.5, 0.5]);
        assert_eq!(v, 0.0);
        assert!(dq.iter().chain(&dv).all(|&g| g == 0.0));
        // componentwise hinge: only the positive component counts
        let (v, dq, _) = advantage_term(&[0.6, 0.4], &[0.5, 0.5]);
        assert!((v - 0.01f64).abs() < 1e-15);
        assert!((dq[0] - 0.2f64).abs() < 1e-15 && dq[1] == 0.0);
    }

    #[test]
    fn hard_consistency_examples() {
        let v = consistency_term_hard(&[0.92, 0.08], &[0.91, 0.09], 0.9);
        assert!((v - 0.094_310_679_471_241_3f64).abs() < 1e-12);
        assert_eq!(consistency_term_hard(&[0.6, 0.4], &[0.99, 0.01], 0.9), 0.0);
        assert_eq!(consistency_term_hard(&[0.95, 0.05], &[1.0, 0.0], 0.9), 0.0);
        // strong gate failing
        assert_eq!(consistency_term_hard(&[0.95, 0.05], &[0.5, 0.5], 0.9), 0.0);
    }

    #[test]
    fn smooth_terms_match_differences_in_q() {
        let s = LossSettings::new(0.5, 0.5, 3.0, 0.2);
        let z = [0.0, 1.0, 2.5];
        let q = [0.2, 0.55, 0.25];
        let (_, g) = reward_term_smooth(&q, &z, 2.0, &s);
        let qs = [0.15, 0.6, 0.25];
        let (_, dw, ds) = consistency_term_smooth(&q, &qs, &s);
        for i in 0..3 {
            let bump = |v: &[f64; 3], d: f64| {
                let mut w = *v;
                w[i] += d;
                w
            };
            let h = 1e-6;
            let fd = (reward_term_smooth(&bump(&q, h), &z, 2.0, &s).0 - reward_term_smooth(&bump(&q, -h), &z, 2.0, &s).0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "reward term coord {i}: {fd} vs {}", g[i]);
            let fdw = (consistency_term_smooth(&bump(&q, h), &qs, &s).0 - consistency_term_smooth(&bump(&q, -h), &qs, &s).0)
                / (2.0 * h);
            assert!((fdw - dw[i]).abs() < 1e-7);
            let fds = (consistency_term_smooth(&q, &bump(&qs, h), &s).0 - consistency_term_smooth(&q, &bump(&qs, -h), &s).0)
                / (2.0 * h);
            assert!((fds - ds[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn combination_arithmetic() {
        assert!((combine(0.2f64, 0.4, 0.6, 0.7) - 0.66).abs() < 1e-12);
        assert_eq!(combine(0.2, 0.4, 0.6, 1.0), 0.2 + 0.4);
        assert_eq!(combine(0.2, 0.4, 0.6, 0.0), 0.2 + 0.6);
    }

    #[test]
    fn finite_differences_on_quadratic() {
        let g = finite_diff_gradient(|t: &[f64]| t.iter().map(|x| x * x).sum(), &[1.0, 2.0], 1e-5);
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let g = finite_diff_gradient(|_: &[f64]| 3.0, &[1.0, 2.0, 3.0], 1e-5);
        assert!(g.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gradient_helpers() {
        let mut g = Gradient { values: vec![3.0, 4.0] };
        assert_eq!(g.norm(), 5.0);
        g.add_scaled(2.0, &Gradient { values: vec![1.0, 1.0] });
        assert_eq!(g.values, vec![5.0, 6.0]);
        assert!(!Gradient { values: vec![f64::NAN] }.is_finite());
        let _ = settings(0.9);
    }
}
