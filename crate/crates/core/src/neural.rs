//! Feed-forward network kernel with hand-derived gradients.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix of
//! layer `l` (row-major, `out x in`) followed by its bias. Gradients and the
//! optimizer moments share that layout.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"UGESMLP\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Dense net with ReLU hidden layers and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNet {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl MlpNet {
    /// Initializes weights and biases uniformly in `+-1/sqrt(fan_in)`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_out * fan_in + fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            offset += fan_out * fan_in + fan_out;
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return Err(Error::invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// `(weights, bias)` of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let mut offset = 0;
        for w in self.sizes.windows(2).take(l) {
            offset += w[1] * w[0] + w[1];
        }
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        let weights = &self.params[offset..offset + fan_out * fan_in];
        let bias = &self.params[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
        (weights, bias)
    }

    /// Output for a single input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input width {} does not match network input {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.forward_batch(x, 1))
    }

    /// Outputs for `n` inputs stored row-major in `inputs`.
    pub fn forward_batch(&self, inputs: &[f64], n: usize) -> Vec<f64> {
        let mut tape = Tape::default();
        self.record(inputs, n, &mut tape);
        tape.acts.pop().unwrap()
    }

    /// Forward pass that keeps every layer's activations on `tape` for
    /// [`MlpNet::backward`]. Returns the `n x out` outputs.
    pub fn record<'t>(&self, inputs: &[f64], n: usize, tape: &'t mut Tape) -> &'t [f64] {
        assert_eq!(inputs.len(), n * self.input_dim(), "input batch shape");
        tape.n = n;
        tape.acts.clear();
        tape.acts.push(inputs.to_vec());
        let n_layers = self.sizes.len() - 1;
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_out * fan_in];
            let bias = &self.params[offset + fan_out * fan_in..offset + fan_out * fan_in + fan_out];
            offset += fan_out * fan_in + fan_out;
            let input = &tape.acts[l];
            let mut out = vec![0.0; n * fan_out];
            for k in 0..n {
                let x = &input[k * fan_in..(k + 1) * fan_in];
                let y = &mut out[k * fan_out..(k + 1) * fan_out];
                y.copy_from_slice(bias);
                for (i, &xi) in x.iter().enumerate() {
                    if xi == 0.0 {
                        continue;
                    }
                    for (o, yo) in y.iter_mut().enumerate() {
                        *yo += weights[o * fan_in + i] * xi;
                    }
                }
                if l + 1 < n_layers {
                    y.iter_mut().for_each(|v| *v = v.max(0.0));
                }
            }
            tape.acts.push(out);
        }
        tape.acts.last().unwrap()
    }

    /// Gradient of a scalar loss with respect to every parameter, given the
    /// loss gradient at the outputs recorded on `tape` (summed over the batch).
    pub fn backward(&self, tape: &Tape, d_out: &[f64]) -> Result<Vec<f64>> {
        let mut grads = vec![0.0; self.params.len()];
        self.backward_into(tape, d_out, &mut grads)?;
        Ok(grads)
    }

    /// Like [`MlpNet::backward`] but accumulates into `grads`.
    pub fn backward_into(&self, tape: &Tape, d_out: &[f64], grads: &mut [f64]) -> Result<()> {
        if tape.acts.len() != self.sizes.len() {
            return Err(Error::InvalidState(
                "backward called without a recorded forward pass".into(),
            ));
        }
        let n = tape.n;
        if d_out.len() != n * self.output_dim() || grads.len() != self.params.len() {
            return Err(Error::invalid("gradient buffer shape mismatch"));
        }
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[1] * w[0] + w[1];
        }

        let mut delta = d_out.to_vec();
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &tape.acts[l];
            {
                let (g_w, rest) = grads[off..off + fan_out * fan_in + fan_out].split_at_mut(fan_out * fan_in);
                for k in 0..n {
                    let x = &input[k * fan_in..(k + 1) * fan_in];
                    let d = &delta[k * fan_out..(k + 1) * fan_out];
                    for (o, &d_o) in d.iter().enumerate() {
                        if d_o == 0.0 {
                            continue;
                        }
                        rest[o] += d_o;
                        let row = &mut g_w[o * fan_in..(o + 1) * fan_in];
                        for (g, &xi) in row.iter_mut().zip(x) {
                            *g += d_o * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + fan_out * fan_in];
            let mut prev = vec![0.0; n * fan_in];
            for k in 0..n {
                let d = &delta[k * fan_out..(k + 1) * fan_out];
                let p = &mut prev[k * fan_in..(k + 1) * fan_in];
                for (o, &d_o) in d.iter().enumerate() {
                    if d_o == 0.0 {
                        continue;
                    }
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    for (pi, &w) in p.iter_mut().zip(row) {
                        *pi += w * d_o;
                    }
                }
                // ReLU: the recorded input to this layer is post-activation.
                for (pi, &a) in p.iter_mut().zip(&input[k * fan_in..(k + 1) * fan_in]) {
                    if a <= 0.0 {
                        *pi = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.sizes.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    /// Parses one checkpoint from the front of `bytes`, returning the net and
    /// the number of bytes consumed.
    pub fn from_bytes_prefix(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut reader = ByteReader { bytes, pos: 0 };
        let magic = reader.take(8)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Parse {
                line: 0,
                message: "not a network checkpoint".into(),
            });
        }
        let version = reader.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n_sizes = reader.u32()? as usize;
        if !(2..=64).contains(&n_sizes) {
            return Err(Error::Parse {
                line: 0,
                message: format!("implausible layer count {n_sizes}"),
            });
        }
        let sizes = (0..n_sizes)
            .map(|_| reader.u32().map(|s| s as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&sizes).map_err(|e| Error::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        for p in net.params.iter_mut() {
            *p = f64::from_le_bytes(reader.take(8)?.try_into().unwrap());
        }
        Ok((net, reader.pos))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (net, used) = Self::from_bytes_prefix(bytes)?;
        if used != bytes.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("{} trailing bytes after checkpoint", bytes.len() - used),
            });
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub(crate) struct ByteReader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse {
                line: 0,
                message: format!("truncated checkpoint at byte {}", self.pos),
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Activations cached by [`MlpNet::record`].
#[derive(Debug, Clone, Default)]
pub struct Tape {
    n: usize,
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn outputs(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// One-hot encoding of a tabular state.
pub fn featurize(state: usize, n_states: usize) -> Vec<f64> {
    let mut x = vec![0.0; n_states];
    x[state] = 1.0;
    x
}

pub fn featurize_batch(states: impl IntoIterator<Item = usize>, n_states: usize) -> (Vec<f64>, usize) {
    let mut out = Vec::new();
    let mut n = 0;
    for s in states {
        let start = out.len();
        out.resize(start + n_states, 0.0);
        out[start + s] = 1.0;
        n += 1;
    }
    (out, n)
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl OptimizerState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn for_net(net: &MlpNet, lr: f64) -> Self {
        Self::new(net.n_params(), lr)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Applies one bias-corrected adaptive-moment update. On a non-finite
/// gradient nothing is modified.
pub fn adam_step(net: &mut MlpNet, grads: &[f64], opt: &mut OptimizerState) -> Result<()> {
    if grads.len() != net.params.len() || opt.m.len() != net.params.len() {
        return Err(Error::invalid("gradient shape does not match network"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - opt.beta1.powi(t);
    let bc2 = 1.0 - opt.beta2.powi(t);
    for (((p, &g), m), v) in net
        .params
        .iter_mut()
        .zip(grads)
        .zip(opt.m.iter_mut())
        .zip(opt.v.iter_mut())
    {
        *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
        *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= opt.lr * m_hat / (v_hat.sqrt() + opt.eps);
    }
    Ok(())
}

/// `target <- (1 - tau) * target + tau * online`.
pub fn soft_update(target: &mut MlpNet, online: &MlpNet, tau: f64) -> Result<()> {
    if target.sizes != online.sizes {
        return Err(Error::invalid("soft update between different architectures"));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::invalid(format!("tau {tau} outside (0, 1]")));
    }
    if tau == 1.0 {
        target.params.copy_from_slice(&online.params);
        return Ok(());
    }
    for (t, &o) in target.params.iter_mut().zip(&online.params) {
        *t = (1.0 - tau) * *t + tau * o;
    }
    Ok(())
}
