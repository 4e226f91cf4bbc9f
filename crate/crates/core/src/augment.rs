//! Trajectory augmentations: matrix Shannon entropy, the double-entropy
//! transform, and the conventional weak/strong perturbations.
//!
//! Every transform acts on the state block `S` only; actions and rewards are
//! copied through untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::rng::seeded;
use crate::scalar::Scalar;
use crate::trajectory::TrajectoryMatrix;

/// Shannon entropy (natural log) of a nonnegative matrix given as its entries.
///
/// Entries are normalised by their total; an all-zero matrix has entropy 0 and
/// zero cells contribute nothing.
pub fn shannon_entropy<S: Scalar>(entries: &[S]) -> Result<S> {
    let mut total = S::zero();
    for &a in entries {
        if !(a >= S::zero()) {
            return Err(Error::Domain(format!("entropy needs nonnegative entries, found {a}")));
        }
        total = total + a;
    }
    if total == S::zero() {
        return Ok(S::zero());
    }
    let mut h = S::zero();
    for &a in entries {
        if a > S::zero() {
            let p = a / total;
            h = h - p * p.ln();
        }
    }
    Ok(h)
}

/// Column ranges of the `n` state partitions; the last one absorbs the remainder.
pub fn partition_ranges(state_dim: usize, n: usize) -> Result<Vec<Range<usize>>> {
    if n == 0 || n > state_dim {
        return arg_err(format!("partition count {n} must be in 1..={state_dim}"));
    }
    let width = state_dim / n;
    Ok((0..n)
        .map(|i| {
            let end = if i + 1 == n { state_dim } else { (i + 1) * width };
            i * width..end
        })
        .collect())
}

/// Entropy of each column partition of the stacked state block.
pub fn partition_entropies<S: Scalar>(traj: &TrajectoryMatrix<S>, n: usize) -> Result<Vec<S>> {
    let ranges = partition_ranges(traj.state_dim(), n)?;
    let mut block = Vec::new();
    ranges
        .into_iter()
        .map(|cols| {
            block.clear();
            for i in 0..traj.rows() {
                block.extend_from_slice(&traj.state_row(i)[cols.clone()]);
            }
            shannon_entropy(&block)
        })
        .collect()
}

/// Scales each of the `n` state partitions by its own entropy.
pub fn double_entropy<S: Scalar>(traj: &TrajectoryMatrix<S>, n: usize) -> Result<TrajectoryMatrix<S>> {
    let ranges = partition_ranges(traj.state_dim(), n)?;
    let h = partition_entropies(traj, n)?;
    let mut out = traj.clone();
    for i in 0..out.rows() {
        let row = out.state_row_mut(i);
        for (cols, &hi) in ranges.iter().zip(&h) {
            for x in &mut row[cols.clone()] {
                *x = *x * hi;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AugmentSpec {
    /// Additive `N(0, sigma^2)` noise, clipped at zero.
    Gaussian { sigma: f64 },
    /// Zero `n` randomly chosen state columns (all rows).
    Cutout { n: usize },
    /// Mean over the window of `n` rows ending at each row.
    Smooth { n: usize },
    /// Multiply by one factor drawn from `[low, high)`.
    Scale { low: f64, high: f64 },
    /// Circular shift of each row by `floor(lambda * m1)`, lambda drawn from `[low, high)`.
    Translate { low: f64, high: f64 },
    /// Reverse each state row.
    Flip,
    DoubleEntropy { n: usize },
}

impl AugmentSpec {
    pub const KINDS: [&'static str; 7] =
        ["gaussian", "cutout", "smooth", "scale", "translate", "flip", "double_entropy"];

    pub fn name(&self) -> &'static str {
        match self {
            AugmentSpec::Gaussian { .. } => "gaussian",
            AugmentSpec::Cutout { .. } => "cutout",
            AugmentSpec::Smooth { .. } => "smooth",
            AugmentSpec::Scale { .. } => "scale",
            AugmentSpec::Translate { .. } => "translate",
            AugmentSpec::Flip => "flip",
            AugmentSpec::DoubleEntropy { .. } => "double_entropy",
        }
    }

    /// Builds a spec from its name and named parameters, filling defaults.
    pub fn from_name(kind: &str, params: &BTreeMap<String, f64>) -> Result<Self> {
        let allowed: &[&str] = match kind {
            "gaussian" => &["sigma"],
            "cutout" | "smooth" | "double_entropy" => &["n"],
            "scale" | "translate" => &["low", "high"],
            "flip" => &[],
            other => return arg_err(format!("unknown augmentation kind `{other}`")),
        };
        if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
            return arg_err(format!("parameter `{k}` does not apply to `{kind}`"));
        }
        let get = |k: &str, d: f64| params.get(k).copied().unwrap_or(d);
        let count = |k: &str, d: usize| -> Result<usize> {
            let v = get(k, d as f64);
            if v < 1.0 || v.fract() != 0.0 {
                return arg_err(format!("`{k}` must be a positive integer, got {v}"));
            }
            Ok(v as usize)
        };
        let spec = match kind {
            "gaussian" => AugmentSpec::Gaussian { sigma: get("sigma", 0.1) },
            "cutout" => AugmentSpec::Cutout { n: count("n", 16)? },
            "smooth" => AugmentSpec::Smooth { n: count("n", 3)? },
            "double_entropy" => AugmentSpec::DoubleEntropy { n: count("n", 8)? },
            "scale" => AugmentSpec::Scale { low: get("low", 0.8), high: get("high", 1.2) },
            "translate" => AugmentSpec::Translate { low: get("low", 0.0), high: get("high", 0.1) },
            _ => AugmentSpec::Flip,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AugmentSpec::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                arg_err(format!("gaussian sigma must be finite and >= 0, got {sigma}"))
            }
            AugmentSpec::Cutout { n: 0 } | AugmentSpec::Smooth { n: 0 } | AugmentSpec::DoubleEntropy { n: 0 } => {
                arg_err(format!("{} needs n >= 1", self.name()))
            }
            AugmentSpec::Scale { low, high } if !(0.8 <= low && low < high && high <= 1.2) => {
                arg_err(format!("scale range [{low}, {high}) must lie within [0.8, 1.2]"))
            }
            AugmentSpec::Translate { low, high } if !(0.0 <= low && low < high && high <= 0.1) => {
                arg_err(format!("translate range [{low}, {high}) must lie within [0, 0.1]"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for AugmentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AugmentSpec::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            AugmentSpec::Cutout { n } => write!(f, "cutout(n={n})"),
            AugmentSpec::Smooth { n } => write!(f, "smooth(n={n})"),
            AugmentSpec::Scale { low, high } => write!(f, "scale({low}..{high})"),
            AugmentSpec::Translate { low, high } => write!(f, "translate({low}..{high})"),
            AugmentSpec::Flip => write!(f, "flip"),
            AugmentSpec::DoubleEntropy { n } => write!(f, "double_entropy(n={n})"),
        }
    }
}

pub fn apply_augment<S: Scalar, R: Rng + ?Sized>(
    spec: &AugmentSpec,
    traj: &TrajectoryMatrix<S>,
    rng: &mut R,
) -> Result<TrajectoryMatrix<S>> {
    spec.validate()?;
    let m1 = traj.state_dim();
    let mut out = traj.clone();
    match *spec {
        AugmentSpec::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
            for x in out.states_mut() {
                let noisy = *x + S::lit(normal.sample(rng));
                *x = noisy.max(S::zero());
            }
        }
        AugmentSpec::Cutout { n } => {
            let cols = rand::seq::index::sample(rng, m1, n.min(m1));
            for i in 0..out.rows() {
                let row = out.state_row_mut(i);
                for c in cols.iter() {
                    row[c] = S::zero();
                }
            }
        }
        AugmentSpec::Smooth { n } => {
            for i in 0..out.rows() {
                let start = (i + 1).saturating_sub(n);
                let count = S::from_usize_lossy(i + 1 - start);
                let row = out.state_row_mut(i);
                for (c, x) in row.iter_mut().enumerate() {
                    let sum: S = (start..=i).map(|j| traj.state_row(j)[c]).sum();
                    *x = sum / count;
                }
            }
        }
        AugmentSpec::Scale { low, high } => {
            let factor = S::lit(rng.random_range(low..high));
            for x in out.states_mut() {
                *x = *x * factor;
            }
        }
        AugmentSpec::Translate { low, high } => {
            let lambda: f64 = rng.random_range(low..high);
            let shift = (lambda * m1 as f64).floor() as usize % m1;
            for i in 0..out.rows() {
                out.state_row_mut(i).rotate_right(shift);
            }
        }
        AugmentSpec::Flip => {
            for i in 0..out.rows() {
                out.state_row_mut(i).reverse();
            }
        }
        AugmentSpec::DoubleEntropy { n } => return double_entropy(traj, n),
    }
    Ok(out)
}

/// Named weak/strong combinations. Weak is always low-sigma gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// Double-entropy strong view.
    SsrsS,
    /// Smooth strong view.
    SsrsM,
    /// Cutout strong view.
    SsrsC,
    Flip,
    Scale,
    Translate,
}

impl Pairing {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "ssrs_s" => Pairing::SsrsS,
            "ssrs_m" => Pairing::SsrsM,
            "ssrs_c" => Pairing::SsrsC,
            "flip" => Pairing::Flip,
            "scale" => Pairing::Scale,
            "translate" => Pairing::Translate,
            other => return arg_err(format!("unknown augmentation pairing `{other}`")),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Pairing::SsrsS => "ssrs_s",
            Pairing::SsrsM => "ssrs_m",
            Pairing::SsrsC => "ssrs_c",
            Pairing::Flip => "flip",
            Pairing::Scale => "scale",
            Pairing::Translate => "translate",
        }
    }
}

/// Parameters needed to turn a [`Pairing`] into concrete specs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingParams {
    pub pairing: Pairing,
    pub weak_sigma: f64,
    pub double_entropy_n: usize,
    /// `None` picks 16 for 128-wide states and `ceil(m1 / 8)` for narrower ones.
    pub cutout_n: Option<usize>,
    pub smooth_n: usize,
}

impl Default for PairingParams {
    fn default() -> Self {
        Self { pairing: Pairing::SsrsS, weak_sigma: 0.1, double_entropy_n: 8, cutout_n: None, smooth_n: 3 }
    }
}

impl PairingParams {
    pub fn resolve(&self, state_dim: usize) -> Result<(AugmentSpec, AugmentSpec)> {
        let weak = AugmentSpec::Gaussian { sigma: self.weak_sigma };
        let strong = match self.pairing {
            Pairing::SsrsS => AugmentSpec::DoubleEntropy { n: self.double_entropy_n },
            Pairing::SsrsM => AugmentSpec::Smooth { n: self.smooth_n },
            Pairing::SsrsC => AugmentSpec::Cutout {
                n: self.cutout_n.unwrap_or(if state_dim >= 128 { 16 } else { state_dim.div_ceil(8) }),
            },
            Pairing::Flip => AugmentSpec::Flip,
            Pairing::Scale => AugmentSpec::Scale { low: 0.8, high: 1.2 },
            Pairing::Translate => AugmentSpec::Translate { low: 0.0, high: 0.1 },
        };
        weak.validate()?;
        strong.validate()?;
        Ok((weak, strong))
    }
}

const WEAK_STREAM: u64 = 0x5745_414b;
const STRONG_STREAM: u64 = 0x5354_524f;

/// Weak and strong views of `traj`, drawn from two streams of one seed.
pub fn weak_strong_pair<S: Scalar>(
    specs: &(AugmentSpec, AugmentSpec),
    traj: &TrajectoryMatrix<S>,
    seed: u64,
) -> Result<(TrajectoryMatrix<S>, TrajectoryMatrix<S>)> {
    let weak = apply_augment(&specs.0, traj, &mut seeded(seed, WEAK_STREAM))?;
    let strong = apply_augment(&specs.1, traj, &mut seeded(seed, STRONG_STREAM))?;
    Ok((weak, strong))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(rows: usize, m1: usize, f: impl Fn(usize, usize) -> f64) -> TrajectoryMatrix<f64> {
        let states = (0..rows * m1).map(|k| f(k / m1, k % m1)).collect();
        TrajectoryMatrix::new(m1, 2, states, vec![0.25; rows * 2], (0..rows).map(|i| i as f64).collect()).unwrap()
    }

    #[test]
    fn entropy_golden_values() {
        assert!((shannon_entropy(&[1.0, 1.0, 1.0, 1.0]).unwrap() - 4f64.ln()).abs() < 1e-12);
        assert_eq!(shannon_entropy(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 0.0);
        // -(0.5 ln 0.5 + 2 * 0.25 ln 0.25)
        assert!((shannon_entropy(&[2.0f64, 1.0, 1.0]).unwrap() - 1.039_720_770_839_917_9).abs() < 1e-12);
        assert_eq!(shannon_entropy(&[0.0f64; 5]).unwrap(), 0.0);
        assert!(matches!(shannon_entropy(&[1.0, -1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn double_entropy_halves() {
        let t = traj(1, 4, |_, _| 1.0);
        let out = double_entropy(&t, 2).unwrap();
        for &x in out.states() {
            assert!((x - std::f64::consts::LN_2).abs() < 1e-15);
        }
        assert_eq!(out.actions(), t.actions());
        assert_eq!(out.rewards(), t.rewards());
    }

    #[test]
    fn double_entropy_zero_block() {
        let t = traj(3, 8, |_, _| 0.0);
        assert!(double_entropy(&t, 4).unwrap().states().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn double_entropy_argument_errors() {
        let t = traj(2, 4, |_, _| 1.0);
        assert!(double_entropy(&t, 0).is_err());
        assert!(double_entropy(&t, 5).is_err());
    }

    #[test]
    fn remainder_goes_to_last_partition() {
        let r = partition_ranges(10, 3).unwrap();
        assert_eq!(r, vec![0..3, 3..6, 6..10]);
    }

    #[test]
    fn flip_is_involution() {
        let t = traj(3, 5, |i, j| (i * 5 + j) as f64);
        let mut rng = seeded(0, 0);
        let once = apply_augment(&AugmentSpec::Flip, &t, &mut rng).unwrap();
        assert_eq!(once.state_row(0), &[4.0, 3.0, 2.0, 1.0, 0.0]);
        let twice = apply_augment(&AugmentSpec::Flip, &once, &mut rng).unwrap();
        assert_eq!(twice, t);
    }

    #[test]
    fn full_cutout_zeroes_everything() {
        let t = traj(4, 6, |i, j| (i + j + 1) as f64);
        let out = apply_augment(&AugmentSpec::Cutout { n: 6 }, &t, &mut seeded(3, 0)).unwrap();
        assert!(out.states().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn cutout_zeroes_same_columns_on_every_row() {
        let t = traj(4, 10, |_, _| 1.0);
        let out = apply_augment(&AugmentSpec::Cutout { n: 3 }, &t, &mut seeded(3, 0)).unwrap();
        let zero_cols: Vec<usize> = (0..10).filter(|&c| out.state_row(0)[c] == 0.0).collect();
        assert_eq!(zero_cols.len(), 3);
        for i in 1..4 {
            for c in 0..10 {
                assert_eq!(out.state_row(i)[c] == 0.0, zero_cols.contains(&c));
            }
        }
    }

    #[test]
    fn zero_sigma_gaussian_is_identity() {
        let t = traj(3, 4, |i, j| (i * j) as f64 * 0.3);
        let out = apply_augment(&AugmentSpec::Gaussian { sigma: 0.0 }, &t, &mut seeded(1, 1)).unwrap();
        assert_eq!(out, t);
    }

    #[test]
    fn gaussian_noise_is_clipped_at_zero() {
        let t = traj(5, 8, |_, _| 0.0);
        let out = apply_augment(&AugmentSpec::Gaussian { sigma: 5.0 }, &t, &mut seeded(1, 1)).unwrap();
        assert!(out.states().iter().all(|&x| x >= 0.0));
        assert!(out.states().iter().any(|&x| x > 0.0));
    }

    #[test]
    fn smooth_uses_trailing_window() {
        let t = traj(4, 1, |i, _| [3.0, 6.0, 9.0, 0.0][i]);
        let out = apply_augment(&AugmentSpec::Smooth { n: 3 }, &t, &mut seeded(0, 0)).unwrap();
        assert_eq!(out.states(), &[3.0, 4.5, 6.0, 5.0]);
    }

    #[test]
    fn translate_is_a_rotation() {
        let t = traj(1, 40, |_, j| j as f64);
        let out =
            apply_augment(&AugmentSpec::Translate { low: 0.05, high: 0.051 }, &t, &mut seeded(0, 0)).unwrap();
        // floor(0.05.. * 40) = 2
        assert_eq!(&out.states()[..3], &[38.0, 39.0, 0.0]);
        let mut sorted = out.states().to_vec();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, t.states());
    }

    #[test]
    fn scale_uses_one_factor() {
        let t = traj(2, 3, |_, _| 10.0);
        let out = apply_augment(&AugmentSpec::Scale { low: 0.8, high: 1.2 }, &t, &mut seeded(4, 0)).unwrap();
        let f = out.states()[0] / 10.0;
        assert!((0.8..1.2).contains(&f));
        assert!(out.states().iter().all(|&x| (x - out.states()[0]).abs() < 1e-12));
    }

    #[test]
    fn spec_parsing() {
        let mut p = BTreeMap::new();
        assert_eq!(AugmentSpec::from_name("smooth", &p).unwrap(), AugmentSpec::Smooth { n: 3 });
        assert_eq!(AugmentSpec::from_name("cutout", &p).unwrap(), AugmentSpec::Cutout { n: 16 });
        assert!(AugmentSpec::from_name("rotate", &p).is_err());
        p.insert("low".into(), 0.5);
        assert!(AugmentSpec::from_name("scale", &p).is_err());
        p.clear();
        p.insert("sigma".into(), 0.2);
        assert!(AugmentSpec::from_name("flip", &p).is_err());
    }

    #[test]
    fn named_pairings() {
        let mut params = PairingParams::default();
        let (weak, strong) = params.resolve(128).unwrap();
        assert_eq!(weak, AugmentSpec::Gaussian { sigma: 0.1 });
        assert_eq!(strong, AugmentSpec::DoubleEntropy { n: 8 });
        params.pairing = Pairing::SsrsC;
        assert_eq!(params.resolve(128).unwrap().1, AugmentSpec::Cutout { n: 16 });
        assert_eq!(params.resolve(24).unwrap().1, AugmentSpec::Cutout { n: 3 });
        params.pairing = Pairing::SsrsM;
        assert_eq!(params.resolve(128).unwrap().1, AugmentSpec::Smooth { n: 3 });
    }

    #[test]
    fn pair_is_seed_deterministic() {
        let t = traj(2, 8, |i, j| (i + 2 * j) as f64);
        let specs = PairingParams { pairing: Pairing::SsrsC, ..Default::default() }.resolve(8).unwrap();
        let a = weak_strong_pair(&specs, &t, 11).unwrap();
        let b = weak_strong_pair(&specs, &t, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.actions(), t.actions());
        assert_eq!(a.1.rewards(), t.rewards());
    }
}
