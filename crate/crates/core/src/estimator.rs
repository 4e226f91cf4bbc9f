//! The two-head reward estimator and its selection rules.
//!
//! The reward-Q head reads `concat(s, a)`, the reward-V head reads `s`; both
//! emit a distribution over the reward set. Their convex combination is the
//! confidence vector that drives shaping.

use std::fmt::Write as _;

use rand::Rng;

use crate::buffer::ReplayBuffer;
use crate::error::{arg_err, Error, Result};
use crate::mlp::{Dense, ForwardCache, MlpNet, Mode};
use crate::reward_set::RewardSet;
use crate::trajectory::Transition;
use crate::scalar::{argmax, Scalar};

/// Layer widths of the reference reward network.
pub const DEFAULT_HIDDEN: [usize; 3] = [128, 64, 32];

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams<S> {
    pub q_net: MlpNet<S>,
    pub v_net: MlpNet<S>,
    /// Multiplies state components before they enter either network.
    pub input_scale: S,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorShape {
    pub state_dim: usize,
    pub action_dim: usize,
    pub reward_slots: usize,
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub input_scale: f64,
}

impl EstimatorShape {
    pub fn new(state_dim: usize, action_dim: usize, reward_slots: usize) -> Self {
        Self {
            state_dim,
            action_dim,
            reward_slots,
            hidden: DEFAULT_HIDDEN.to_vec(),
            dropout: 0.2,
            input_scale: 1.0 / 255.0,
        }
    }
}

impl<S: Scalar> EstimatorParams<S> {
    pub fn init<R: Rng + ?Sized>(shape: &EstimatorShape, rng: &mut R) -> Result<Self> {
        let sizes = |input: usize| {
            let mut v = vec![input];
            v.extend_from_slice(&shape.hidden);
            v.push(shape.reward_slots);
            v
        };
        let q_net = MlpNet::new(&sizes(shape.state_dim + shape.action_dim), shape.dropout, rng)?;
        let v_net = MlpNet::new(&sizes(shape.state_dim), shape.dropout, rng)?;
        Ok(Self { q_net, v_net, input_scale: S::lit(shape.input_scale) })
    }

    pub fn state_dim(&self) -> usize {
        self.v_net.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.q_net.input_dim() - self.v_net.input_dim()
    }

    pub fn reward_slots(&self) -> usize {
        self.q_net.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.q_net.param_count() + self.v_net.param_count()
    }

    /// `[θ₁ (Q head), θ₂ (V head)]`.
    pub fn flatten(&self) -> Vec<S> {
        let mut v = self.q_net.flatten();
        v.extend(self.v_net.flatten());
        v
    }

    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: flat.len() });
        }
        let (q, v) = flat.split_at(self.q_net.param_count());
        self.q_net.set_flat(q)?;
        self.v_net.set_flat(v)
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.q_net.set_mode(mode);
        self.v_net.set_mode(mode);
    }

    pub fn q_input(&self, s: &[S], a: &[S]) -> Result<Vec<S>> {
        if s.len() != self.state_dim() {
            return Err(Error::Dimension { expected: self.state_dim(), got: s.len() });
        }
        if a.len() != self.action_dim() {
            return Err(Error::Dimension { expected: self.action_dim(), got: a.len() });
        }
        let mut x: Vec<S> = s.iter().map(|&v| v * self.input_scale).collect();
        x.extend_from_slice(a);
        Ok(x)
    }

    pub fn v_input(&self, s: &[S]) -> Result<Vec<S>> {
        if s.len() != self.state_dim() {
            return Err(Error::Dimension { expected: self.state_dim(), got: s.len() });
        }
        Ok(s.iter().map(|&v| v * self.input_scale).collect())
    }

    pub fn forward_q<R: Rng + ?Sized>(&self, s: &[S], a: &[S], rng: Option<&mut R>) -> Result<ForwardCache<S>> {
        self.q_net.forward(&self.q_input(s, a)?, rng)
    }

    pub fn forward_v<R: Rng + ?Sized>(&self, s: &[S], rng: Option<&mut R>) -> Result<ForwardCache<S>> {
        self.v_net.forward(&self.v_input(s)?, rng)
    }

    /// Eval-mode reward-Q head output.
    pub fn q_head(&self, s: &[S], a: &[S]) -> Result<Vec<S>> {
        self.q_net.predict(&self.q_input(s, a)?)
    }

    /// Eval-mode reward-V head output.
    pub fn v_head(&self, s: &[S]) -> Result<Vec<S>> {
        self.v_net.predict(&self.v_input(s)?)
    }

    /// `q = β·Q(s, a) + (1 − β)·V(s')`, eval mode.
    pub fn confidence(&self, s: &[S], a: &[S], s_next: &[S], beta: S) -> Result<Vec<S>> {
        let q = self.q_head(s, a)?;
        let v = self.v_head(s_next)?;
        mix_heads(&q, &v, beta)
    }
}

/// Convex combination of two head outputs.
pub fn mix_heads<S: Scalar>(q: &[S], v: &[S], beta: S) -> Result<Vec<S>> {
    if !(beta >= S::zero() && beta <= S::one()) {
        return arg_err(format!("beta must lie in [0, 1], got {beta}"));
    }
    if q.len() != v.len() {
        return Err(Error::Dimension { expected: q.len(), got: v.len() });
    }
    Ok(q.iter().zip(v).map(|(&qi, &vi)| beta * qi + (S::one() - beta) * vi).collect())
}

/// Hard selection: the reward at the arg-max confidence when that confidence
/// is strictly above `lambda`, else 0.
pub fn select<S: Scalar>(q: &[S], z: &[S], lambda: S) -> S {
    let i = argmax(q);
    if q[i] > lambda {
        z[i]
    } else {
        S::zero()
    }
}

/// Temperature-softmax average of the reward set, `Σ wᵢ zᵢ` with `w = softmax(q / T)`.
pub fn soft_select<S: Scalar>(q: &[S], z: &[S], temperature: S) -> S {
    soft_select_with_grad(q, z, temperature).0
}

/// [`soft_select`] together with its gradient with respect to `q`.
pub fn soft_select_with_grad<S: Scalar>(q: &[S], z: &[S], temperature: S) -> (S, Vec<S>) {
    let mut w: Vec<S> = q.iter().map(|&x| x / temperature).collect();
    crate::scalar::softmax_in_place(&mut w);
    let value: S = w.iter().zip(z).map(|(&wi, &zi)| wi * zi).sum();
    let grad = w.iter().zip(z).map(|(&wi, &zi)| wi * (zi - value) / temperature).collect();
    (value, grad)
}

/// Index of the pseudo-label: arg-max of `q` when `max(q) ≥ lambda`.
pub fn pseudo_label_index<S: Scalar>(q: &[S], lambda: S) -> Option<usize> {
    let i = argmax(q);
    (q[i] >= lambda).then_some(i)
}

/// One-hot pseudo-label, or `None` below the threshold.
pub fn pseudo_label<S: Scalar>(q: &[S], lambda: S) -> Option<Vec<S>> {
    pseudo_label_index(q, lambda).map(|i| {
        let mut v = vec![S::zero(); q.len()];
        v[i] = S::one();
        v
    })
}

/// Zero-reward entries visited by one shaping pass: `floor(p_u · count)` of
/// them, drawn without replacement.
pub fn shaping_candidates<S: Scalar, R: Rng + ?Sized>(
    buffer: &ReplayBuffer<S>,
    p_u: f64,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if !(0.0..=1.0).contains(&p_u) {
        return arg_err(format!("p_u must lie in [0, 1], got {p_u}"));
    }
    let zeros = buffer.zero_reward_indices();
    let take = (p_u * zeros.len() as f64).floor() as usize;
    if take == 0 {
        return Ok(Vec::new());
    }
    Ok(rand::seq::index::sample(rng, zeros.len(), take).into_iter().map(|k| zeros[k]).collect())
}

/// Shapes a `p_u` fraction of the buffer's zero-reward entries.
///
/// Visited entries whose selection is 0 end up unshaped. Returns the number of
/// entries flagged as shaped by this pass.
pub fn shape_buffer<S: Scalar, R: Rng + ?Sized>(
    params: &EstimatorParams<S>,
    buffer: &mut ReplayBuffer<S>,
    zset: &RewardSet<S>,
    lambda: S,
    beta: S,
    p_u: f64,
    rng: &mut R,
) -> Result<usize> {
    shape_buffer_with(buffer, p_u, rng, |t| {
        let q = params.confidence(&t.state, &t.action, &t.next_state, beta)?;
        Ok(select(&q, zset.values(), lambda))
    })
}

/// [`shape_buffer`] with the selection supplied by `selector`.
pub fn shape_buffer_with<S: Scalar, R: Rng + ?Sized>(
    buffer: &mut ReplayBuffer<S>,
    p_u: f64,
    rng: &mut R,
    mut selector: impl FnMut(&Transition<S>) -> Result<S>,
) -> Result<usize> {
    let mut shaped = 0;
    for i in shaping_candidates(buffer, p_u, rng)? {
        let z = selector(&buffer.get(i).expect("candidate index in range").transition)?;
        if z != S::zero() {
            buffer.set_shaped_reward(i, z)?;
            shaped += 1;
        } else {
            buffer.clear_shaping(i);
        }
    }
    Ok(shaped)
}

// ---------------------------------------------------------------------------
// Text checkpoint (layout documented in docs/FORMATS.md)

pub const ESTIMATOR_FORMAT_VERSION: u32 = 1;

fn fmt_float(out: &mut String, x: f64) {
    // 17 significant digits round-trip every f64
    write!(out, " {x:.16e}").expect("write to String");
}

impl<S: Scalar> EstimatorParams<S> {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "ssrs-estimator {ESTIMATOR_FORMAT_VERSION}").unwrap();
        out.push_str("input_scale");
        fmt_float(&mut out, self.input_scale.to_f64_lossy());
        out.push('\n');
        out.push_str("dropout");
        fmt_float(&mut out, self.q_net.dropout());
        out.push('\n');
        for (name, net) in [("q", &self.q_net), ("v", &self.v_net)] {
            writeln!(out, "net {name} {}", net.layers().len()).unwrap();
            for l in net.layers() {
                writeln!(out, "layer {} {}", l.outputs, l.inputs).unwrap();
                out.push('w');
                for &x in &l.weights {
                    fmt_float(&mut out, x.to_f64_lossy());
                }
                out.push_str("\nb");
                for &x in &l.bias {
                    fmt_float(&mut out, x.to_f64_lossy());
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |want: &str| -> Result<(usize, Vec<&str>)> {
            let (no, line) = lines.next().ok_or_else(|| Error::Format(format!("missing `{want}` line")))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields[0] != want {
                return Err(Error::Format(format!("line {}: expected `{want}`, found `{}`", no + 1, fields[0])));
            }
            Ok((no + 1, fields))
        };
        let floats = |no: usize, f: &[&str]| -> Result<Vec<S>> {
            f.iter()
                .map(|s| {
                    s.parse::<f64>()
                        .map(S::lit)
                        .map_err(|e| Error::Format(format!("line {no}: bad number `{s}`: {e}")))
                })
                .collect()
        };
        let uint = |no: usize, s: &str| -> Result<usize> {
            s.parse().map_err(|e| Error::Format(format!("line {no}: bad integer `{s}`: {e}")))
        };

        let (no, header) = next("ssrs-estimator")?;
        if header.get(1).map(|v| uint(no, v)).transpose()? != Some(ESTIMATOR_FORMAT_VERSION as usize) {
            return Err(Error::Format("unsupported estimator format version".into()));
        }
        let (no, f) = next("input_scale")?;
        let input_scale = *floats(no, &f[1..])?.first().ok_or_else(|| Error::Format("missing scale".into()))?;
        let (no, f) = next("dropout")?;
        let dropout = floats(no, &f[1..])?.first().ok_or_else(|| Error::Format("missing dropout".into()))?.to_f64_lossy();

        let mut nets = Vec::new();
        for name in ["q", "v"] {
            let (no, f) = next("net")?;
            if f.get(1) != Some(&name) || f.len() != 3 {
                return Err(Error::Format(format!("line {no}: expected `net {name} <layers>`")));
            }
            let count = uint(no, f[2])?;
            let mut layers = Vec::with_capacity(count);
            for _ in 0..count {
                let (no, f) = next("layer")?;
                if f.len() != 3 {
                    return Err(Error::Format(format!("line {no}: expected `layer <out> <in>`")));
                }
                let (outputs, inputs) = (uint(no, f[1])?, uint(no, f[2])?);
                let (no, w) = next("w")?;
                let weights = floats(no, &w[1..])?;
                let (no, b) = next("b")?;
                let bias = floats(no, &b[1..])?;
                if weights.len() != outputs * inputs || bias.len() != outputs {
                    return Err(Error::Format(format!("line {no}: parameter count does not match layer shape")));
                }
                layers.push(Dense { inputs, outputs, weights, bias });
            }
            nets.push(MlpNet::from_layers(layers, dropout)?);
        }
        let v_net = nets.pop().expect("two nets");
        let q_net = nets.pop().expect("two nets");
        if q_net.output_dim() != v_net.output_dim() || q_net.input_dim() < v_net.input_dim() {
            return Err(Error::Format("reward heads disagree on shape".into()));
        }
        Ok(Self { q_net, v_net, input_scale })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::trajectory::Transition;

    fn small() -> EstimatorParams<f64> {
        let mut shape = EstimatorShape::new(4, 2, 3);
        shape.hidden = vec![6];
        EstimatorParams::init(&shape, &mut seeded(3, 0)).unwrap()
    }

    #[test]
    fn beta_one_is_q_head() {
        let p = small();
        let s = [10.0, 0.0, 255.0, 3.0];
        let a = [1.0, 0.0];
        let q = p.confidence(&s, &a, &[1.0, 2.0, 3.0, 4.0], 1.0).unwrap();
        assert_eq!(q, p.q_head(&s, &a).unwrap());
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixing_arithmetic() {
        let q = mix_heads(&[0.2, 0.8], &[0.4, 0.6], 0.5).unwrap();
        assert!((q[0] - 0.3f64).abs() < 1e-15 && (q[1] - 0.7).abs() < 1e-15);
        assert!(mix_heads(&[0.2, 0.8], &[0.4, 0.6], 1.5).is_err());
    }

    #[test]
    fn confidence_dimension_errors() {
        let p = small();
        assert!(matches!(p.confidence(&[1.0; 3], &[1.0, 0.0], &[1.0; 4], 0.5), Err(Error::Dimension { .. })));
        assert!(matches!(p.confidence(&[1.0; 4], &[1.0], &[1.0; 4], 0.5), Err(Error::Dimension { .. })));
    }

    #[test]
    fn hard_selection() {
        assert_eq!(select(&[0.3, 0.7], &[1.0, 5.0], 0.9), 0.0);
        assert_eq!(select(&[0.05, 0.95], &[1.0, 5.0], 0.9), 5.0);
        assert_eq!(select(&[0.5, 0.5], &[2.0, 7.0], 0.4), 2.0);
        // strictly above
        assert_eq!(select(&[0.1, 0.9], &[2.0, 7.0], 0.9), 0.0);
    }

    #[test]
    fn soft_selection() {
        let z = [1.0, 5.0];
        assert!((soft_select(&[0.5, 0.5], &z, 0.3) - 3.0f64).abs() < 1e-12);
        assert!((soft_select(&[0.05, 0.95], &z, 0.01) - 5.0f64).abs() < 1e-6);
        assert!((soft_select(&[0.0, 1.0], &z, 0.01) - 5.0f64).abs() < 1e-6);
        assert!((soft_select(&[1.0, 0.0, 0.0], &[2.0, 4.0, 9.0], 0.01) - 2.0f64).abs() < 1e-6);
    }

    #[test]
    fn soft_select_gradient_matches_differences() {
        let q = [0.2, 0.5, 0.3];
        let z = [1.0, 2.0, 4.0];
        let (_, g) = soft_select_with_grad(&q, &z, 0.4);
        for i in 0..3 {
            let mut hi = q;
            let mut lo = q;
            hi[i] += 1e-6;
            lo[i] -= 1e-6;
            let fd = (soft_select(&hi, &z, 0.4) - soft_select(&lo, &z, 0.4)) / 2e-6;
            assert!((fd - g[i] as f64).abs() < 1e-8);
        }
    }

    #[test]
    fn pseudo_labels() {
        assert_eq!(pseudo_label(&[0.95, 0.05], 0.9), Some(vec![1.0, 0.0]));
        assert_eq!(pseudo_label(&[0.6, 0.4], 0.9), None);
        assert_eq!(pseudo_label(&[0.9, 0.1], 0.9), Some(vec![1.0, 0.0]));
    }

    fn zero_buffer(n: usize) -> ReplayBuffer<f64> {
        let mut b = ReplayBuffer::new(n + 5).unwrap();
        for i in 0..n {
            let s = vec![i as f64, 1.0, 2.0, 3.0];
            b.push(Transition::new(s.clone(), vec![1.0, 0.0], 0.0, s, false)).unwrap();
        }
        b.push(Transition::new(vec![1.0; 4], vec![0.0, 1.0], 2.0, vec![1.0; 4], true)).unwrap();
        b
    }

    #[test]
    fn candidate_count_floors() {
        let b = zero_buffer(100);
        assert_eq!(shaping_candidates(&b, 0.1, &mut seeded(0, 0)).unwrap().len(), 10);
        assert_eq!(shaping_candidates(&b, 0.0, &mut seeded(0, 0)).unwrap().len(), 0);
        assert_eq!(shaping_candidates(&b, 0.019, &mut seeded(0, 0)).unwrap().len(), 1);
        let c = shaping_candidates(&b, 1.0, &mut seeded(0, 0)).unwrap();
        assert_eq!(c.len(), 100);
        assert!(!c.contains(&100));
        assert!(shaping_candidates(&b, 1.5, &mut seeded(0, 0)).is_err());
    }

    #[test]
    fn shaping_respects_threshold() {
        let p = small();
        let mut z = RewardSet::new(3).unwrap();
        z.observe(2.0);
        let mut b = zero_buffer(30);
        // max confidence of a 3-way softmax never exceeds 1
        assert_eq!(shape_buffer(&p, &mut b, &z, 1.0, 0.5, 1.0, &mut seeded(0, 0)).unwrap(), 0);
        assert_eq!(b.shaped_count(), 0);
        assert_eq!(shape_buffer(&p, &mut b, &z, 0.0, 0.5, 0.0, &mut seeded(0, 0)).unwrap(), 0);
        let n = shape_buffer(&p, &mut b, &z, 0.0, 0.5, 1.0, &mut seeded(0, 0)).unwrap();
        assert_eq!(n, b.shaped_count());
        for e in b.iter() {
            if e.shaped {
                assert!(z.values().contains(&e.transition.reward));
            }
        }
        assert_eq!(b.get(30).unwrap().transition.reward, 2.0);
    }

    #[test]
    fn checkpoint_text_roundtrip() {
        let p = small();
        let text = p.to_text();
        let back = EstimatorParams::<f64>::from_text(&text).unwrap();
        assert_eq!(back, p);
        assert!(EstimatorParams::<f64>::from_text("ssrs-estimator 2\n").is_err());
        let broken = text.replacen("layer 6 6", "layer 6 5", 1);
        assert!(EstimatorParams::<f64>::from_text(&broken).is_err());
    }
}
