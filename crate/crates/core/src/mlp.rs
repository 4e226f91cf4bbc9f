//! Dense feed-forward network with a softmax head and hand-written backprop.
//!
//! Layout per hidden layer: `dense -> ReLU -> dropout`. The output layer is
//! `dense -> ReLU -> softmax`, so outputs are probability vectors.
//!
//! Parameters flatten layer by layer as `[W (row-major, out x in), b]`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{softmax_in_place, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active (inverted scaling).
    Train,
    /// Dropout is the identity.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense<S> {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs x inputs`, row-major.
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> Dense<S> {
    fn he_uniform<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let bound = (6.0 / inputs as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| S::lit(rng.random_range(-bound..bound))).collect();
        Self { inputs, outputs, weights, bias: vec![S::zero(); outputs] }
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine(&self, x: &[S], out: &mut Vec<S>) {
        out.clear();
        for (row, &b) in self.weights.chunks_exact(self.inputs).zip(&self.bias) {
            let mut acc = b;
            for (&w, &xi) in row.iter().zip(x) {
                acc = acc + w * xi;
            }
            out.push(acc);
        }
    }
}

/// Activations kept from one forward pass, consumed by [`MlpNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache<S> {
    /// Input seen by each layer (after dropout for hidden layers).
    layer_inputs: Vec<Vec<S>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<S>>,
    /// Inverted-dropout multipliers per hidden layer (`None` in eval mode).
    masks: Vec<Option<Vec<S>>>,
    output: Vec<S>,
}

impl<S> ForwardCache<S> {
    /// Pre-activation of each layer, input side first.
    pub fn pre_activations(&self) -> &[Vec<S>] {
        &self.pre
    }

    pub fn output(&self) -> &[S] {
        &self.output
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet<S> {
    layers: Vec<Dense<S>>,
    dropout: f64,
    mode: Mode,
}

impl<S: Scalar> MlpNet<S> {
    /// `sizes = [input, hidden.., output]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], dropout: f64, rng: &mut R) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::Argument(format!("invalid layer sizes {sizes:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Argument(format!("dropout must be in [0, 1), got {dropout}")));
        }
        let layers = sizes.windows(2).map(|w| Dense::he_uniform(w[0], w[1], rng)).collect();
        Ok(Self { layers, dropout, mode: Mode::Eval })
    }

    pub fn from_layers(layers: Vec<Dense<S>>, dropout: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Argument("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Format("layer shape does not match its parameters".into()));
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::Dimension { expected: w[0].outputs, got: w[1].inputs });
            }
        }
        Ok(Self { layers, dropout, mode: Mode::Eval })
    }

    pub fn layers(&self) -> &[Dense<S>] {
        &self.layers
    }

    pub fn dropout(&self) -> f64 {
        self.dropout
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn flatten(&self) -> Vec<S> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: flat.len() });
        }
        let mut rest = flat;
        for l in &mut self.layers {
            let (w, tail) = rest.split_at(l.weights.len());
            let (b, tail) = tail.split_at(l.bias.len());
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    /// Adds `step * delta` to every parameter.
    pub fn axpy(&mut self, step: S, delta: &[S]) -> Result<()> {
        if delta.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: delta.len() });
        }
        let mut rest = delta;
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p = *p + step * rest[0];
                rest = &rest[1..];
            }
        }
        Ok(())
    }

    /// Eval-mode output (no dropout, no rng needed).
    pub fn predict(&self, x: &[S]) -> Result<Vec<S>> {
        Ok(self.forward_inner::<crate::rng::RunRng>(x, None, false)?.output)
    }

    /// Forward pass keeping activations. In train mode `rng` supplies dropout masks.
    pub fn forward<R: Rng + ?Sized>(&self, x: &[S], rng: Option<&mut R>) -> Result<ForwardCache<S>> {
        let train = self.mode == Mode::Train && self.dropout > 0.0;
        if train && rng.is_none() {
            return Err(Error::Argument("train-mode forward needs an rng for dropout".into()));
        }
        self.forward_inner(x, rng, train)
    }

    fn forward_inner<R: Rng + ?Sized>(
        &self,
        x: &[S],
        mut rng: Option<&mut R>,
        train: bool,
    ) -> Result<ForwardCache<S>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        let n = self.layers.len();
        let keep = 1.0 - self.dropout;
        let mut layer_inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut masks = Vec::with_capacity(n);
        let mut a = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine(&a, &mut z);
            let mut h: Vec<S> = z.iter().map(|&v| v.max(S::zero())).collect();
            layer_inputs.push(std::mem::take(&mut a));
            pre.push(z);
            if i + 1 < n {
                let mask = match (train, rng.as_deref_mut()) {
                    (true, Some(r)) => {
                        let scale = S::lit(1.0 / keep);
                        let m: Vec<S> = (0..h.len())
                            .map(|_| if r.random::<f64>() < keep { scale } else { S::zero() })
                            .collect();
                        for (v, &k) in h.iter_mut().zip(&m) {
                            *v = *v * k;
                        }
                        Some(m)
                    }
                    _ => None,
                };
                masks.push(mask);
                a = h;
            } else {
                softmax_in_place(&mut h);
                a = h;
            }
        }
        Ok(ForwardCache { layer_inputs, pre, masks, output: a })
    }

    /// Accumulates `scale * dL/dθ` into `grad` given `d_output = dL/d(softmax output)`.
    pub fn backward(&self, cache: &ForwardCache<S>, d_output: &[S], scale: S, grad: &mut [S]) -> Result<()> {
        if d_output.len() != self.output_dim() {
            return Err(Error::Dimension { expected: self.output_dim(), got: d_output.len() });
        }
        if grad.len() != self.param_count() {
            return Err(Error::Dimension { expected: self.param_count(), got: grad.len() });
        }
        let p = &cache.output;
        let dot: S = p.iter().zip(d_output).map(|(&pi, &gi)| pi * gi).sum();
        // softmax, then the output ReLU
        let mut g: Vec<S> = p
            .iter()
            .zip(d_output)
            .zip(&cache.pre[self.layers.len() - 1])
            .map(|((&pi, &gi), &z)| if z > S::zero() { scale * pi * (gi - dot) } else { S::zero() })
            .collect();

        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }

        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let input = &cache.layer_inputs[li];
            let base = offsets[li];
            let (gw, gb) = grad[base..base + layer.param_count()].split_at_mut(layer.weights.len());
            for (o, &go) in g.iter().enumerate() {
                if go == S::zero() {
                    continue;
                }
                gb[o] = gb[o] + go;
                let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                for (w, &xi) in row.iter_mut().zip(input) {
                    *w = *w + go * xi;
                }
            }
            if li == 0 {
                break;
            }
            let mut prev = vec![S::zero(); layer.inputs];
            for (o, &go) in g.iter().enumerate() {
                if go == S::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (pv, &w) in prev.iter_mut().zip(row) {
                    *pv = *pv + w * go;
                }
            }
            let mask = &cache.masks[li - 1];
            for (j, pv) in prev.iter_mut().enumerate() {
                let alive = cache.pre[li - 1][j] > S::zero();
                *pv = if alive {
                    match mask {
                        Some(m) => *pv * m[j],
                        None => *pv,
                    }
                } else {
                    S::zero()
                };
            }
            g = prev;
        }
        Ok(())
    }
}
