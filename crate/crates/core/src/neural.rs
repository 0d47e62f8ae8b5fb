//! Small fully-connected networks with an explicit backward pass.
//!
//! Parameters live in one flat `f64` buffer, layer by layer, each layer laid
//! out as a row-major `out x in` weight matrix followed by its bias vector.
//! Hidden layers use ReLU; the head is linear or tanh.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

const MAGIC: &[u8; 8] = b"FRLMLP01";
const DTYPE_F64: u8 = 1;

static STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Tanh,
}

impl OutputActivation {
    fn code(self) -> u8 {
        match self {
            OutputActivation::Linear => 0,
            OutputActivation::Tanh => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(OutputActivation::Linear),
            1 => Ok(OutputActivation::Tanh),
            _ => Err(Error::Format(format!("unknown output activation code {c}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MlpNet {
    sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
    offsets: Vec<usize>,
    stamp: u64,
}

impl PartialEq for MlpNet {
    fn eq(&self, other: &Self) -> bool {
        self.sizes == other.sizes && self.output == other.output && self.params == other.params
    }
}

/// Activations recorded by [`MlpNet::forward`], consumed by [`MlpNet::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    stamp: u64,
    /// Layer inputs: `inputs[0]` is the network input, `inputs[l]` the output of hidden layer `l-1`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-activation of the output layer.
    pub fn output_pre(&self) -> &[f64] {
        self.pre.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Parameter gradients, same layout as [`MlpNet::params`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros_like(net: &MlpNet) -> Self {
        Gradients(vec![0.0; net.num_params()])
    }

    pub fn scale(&mut self, k: f64) {
        self.0.iter_mut().for_each(|g| *g *= k);
    }

    pub fn clear(&mut self) {
        self.0.iter_mut().for_each(|g| *g = 0.0);
    }
}

fn layout(sizes: &[usize]) -> (Vec<usize>, usize) {
    let mut offsets = Vec::with_capacity(sizes.len() - 1);
    let mut n = 0;
    for w in sizes.windows(2) {
        offsets.push(n);
        n += w[0] * w[1] + w[1];
    }
    (offsets, n)
}

impl MlpNet {
    /// Weights and biases drawn uniformly from `+-1/sqrt(fan_in)`.
    pub fn new(sizes: &[usize], output: OutputActivation, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(sizes, output)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in 0..net.num_layers() {
            let bound = 1.0 / (sizes[l] as f64).sqrt();
            let (start, end) = net.layer_range(l);
            for p in &mut net.params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|&s| s == 0) {
            return invalid(format!("bad layer sizes {sizes:?}"));
        }
        let (offsets, n) = layout(sizes);
        Ok(Self {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; n],
            offsets,
            stamp: next_stamp(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access; invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.stamp = next_stamp();
        &mut self.params
    }

    fn layer_range(&self, l: usize) -> (usize, usize) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        (self.offsets[l], self.offsets[l] + i * o + o)
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: input.len() });
        }
        Ok(())
    }

    fn affine(&self, l: usize, x: &[f64], z: &mut Vec<f64>) {
        let (i, o) = (self.sizes[l], self.sizes[l + 1]);
        let off = self.offsets[l];
        let w = &self.params[off..off + i * o];
        let b = &self.params[off + i * o..off + i * o + o];
        z.clear();
        for r in 0..o {
            let row = &w[r * i..(r + 1) * i];
            let mut acc = b[r];
            for (wk, xk) in row.iter().zip(x) {
                acc += wk * xk;
            }
            z.push(acc);
        }
    }

    fn head(&self, z: f64) -> f64 {
        match self.output {
            OutputActivation::Linear => z,
            OutputActivation::Tanh => z.tanh(),
        }
    }

    /// Output only, without recording activations.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let mut z = Vec::new();
        let last = self.num_layers() - 1;
        for l in 0..self.num_layers() {
            self.affine(l, &x, &mut z);
            if l == last {
                return Ok(z.iter().map(|&v| self.head(v)).collect());
            }
            x.clear();
            x.extend(z.iter().map(|&v| v.max(0.0)));
        }
        unreachable!()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        self.check_input(input)?;
        let n = self.num_layers();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        inputs.push(input.to_vec());
        for l in 0..n {
            let mut z = Vec::new();
            self.affine(l, &inputs[l], &mut z);
            if l + 1 < n {
                inputs.push(z.iter().map(|&v| v.max(0.0)).collect());
            }
            pre.push(z);
        }
        let output: Vec<f64> = pre[n - 1].iter().map(|&v| self.head(v)).collect();
        let cache = ForwardCache { stamp: self.stamp, inputs, pre, output: output.clone() };
        Ok((output, cache))
    }

    /// Back-propagates `out_grad` (dL/d output) and adds the parameter
    /// gradients into `grads`. Returns dL/d input.
    pub fn backward_into(&self, cache: &ForwardCache, out_grad: &[f64], grads: &mut Gradients) -> Result<Vec<f64>> {
        self.backward_with_pre(cache, out_grad, None, grads)
    }

    /// Like [`MlpNet::backward_into`], with an extra gradient taken directly
    /// with respect to the output layer's pre-activation.
    pub fn backward_with_pre(
        &self,
        cache: &ForwardCache,
        out_grad: &[f64],
        pre_grad: Option<&[f64]>,
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        if cache.stamp != self.stamp {
            return Err(Error::StaleCache);
        }
        if out_grad.len() != self.output_dim() {
            return Err(Error::Dimension { expected: self.output_dim(), got: out_grad.len() });
        }
        if grads.0.len() != self.num_params() {
            return Err(Error::Dimension { expected: self.num_params(), got: grads.0.len() });
        }
        let n = self.num_layers();
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Linear => out_grad.to_vec(),
            OutputActivation::Tanh => out_grad
                .iter()
                .zip(&cache.output)
                .map(|(g, y)| g * (1.0 - y * y))
                .collect(),
        };
        if let Some(pg) = pre_grad {
            if pg.len() != delta.len() {
                return Err(Error::Dimension { expected: delta.len(), got: pg.len() });
            }
            delta.iter_mut().zip(pg).for_each(|(d, g)| *d += g);
        }
        for l in (0..n).rev() {
            let (i, o) = (self.sizes[l], self.sizes[l + 1]);
            let off = self.offsets[l];
            let x = &cache.inputs[l];
            {
                let (gw, gb) = grads.0[off..off + i * o + o].split_at_mut(i * o);
                for r in 0..o {
                    let d = delta[r];
                    if d == 0.0 {
                        continue;
                    }
                    for (g, xk) in gw[r * i..(r + 1) * i].iter_mut().zip(x) {
                        *g += d * xk;
                    }
                    gb[r] += d;
                }
            }
            let w = &self.params[off..off + i * o];
            let mut dx = vec![0.0; i];
            for r in 0..o {
                let d = delta[r];
                if d == 0.0 {
                    continue;
                }
                for (dk, wk) in dx.iter_mut().zip(&w[r * i..(r + 1) * i]) {
                    *dk += d * wk;
                }
            }
            if l == 0 {
                return Ok(dx);
            }
            let zprev = &cache.pre[l - 1];
            for (dk, z) in dx.iter_mut().zip(zprev) {
                if *z <= 0.0 {
                    *dk = 0.0;
                }
            }
            delta = dx;
        }
        unreachable!()
    }

    pub fn backward(&self, cache: &ForwardCache, out_grad: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        let mut g = Gradients::zeros_like(self);
        let dx = self.backward_into(cache, out_grad, &mut g)?;
        Ok((g, dx))
    }

    fn check_same_arch(&self, other: &MlpNet) -> Result<()> {
        if self.sizes != other.sizes || self.output != other.output {
            return Err(Error::Architecture(self.sizes.clone(), other.sizes.clone()));
        }
        Ok(())
    }

    /// Polyak update `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update(&mut self, source: &MlpNet, tau: f64) -> Result<()> {
        self.check_same_arch(source)?;
        if !(0.0..=1.0).contains(&tau) {
            return invalid(format!("tau must lie in [0, 1], got {tau}"));
        }
        if tau == 0.0 {
            return Ok(());
        }
        if tau == 1.0 {
            return self.copy_from(source);
        }
        for (t, s) in self.params_mut().iter_mut().zip(&source.params) {
            *t = tau * s + (1.0 - tau) * *t;
        }
        Ok(())
    }

    pub fn copy_from(&mut self, source: &MlpNet) -> Result<()> {
        self.check_same_arch(source)?;
        self.params_mut().copy_from_slice(&source.params);
        Ok(())
    }

    /// Largest absolute parameter difference.
    pub fn max_abs_diff(&self, other: &MlpNet) -> Result<f64> {
        self.check_same_arch(other)?;
        Ok(self
            .params
            .iter()
            .zip(&other.params)
            .fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.push(DTYPE_F64);
        out.push(self.output.code());
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for &s in &self.sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(Error::Format("truncated network file".into()));
            }
            let (a, b) = cur.split_at(n);
            cur = b;
            Ok(a)
        };
        if take(8)? != MAGIC {
            return Err(Error::Format("bad network magic".into()));
        }
        let hdr = take(4)?;
        if hdr[0] != DTYPE_F64 {
            return Err(Error::Format(format!("unsupported dtype code {}", hdr[0])));
        }
        let output = OutputActivation::from_code(hdr[1])?;
        let n_sizes = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if n_sizes > 64 {
            return Err(Error::Format("implausible layer count".into()));
        }
        let mut sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            sizes.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let mut net = Self::zeros(&sizes, output).map_err(|e| Error::Format(e.to_string()))?;
        let n = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        if n != net.num_params() {
            return Err(Error::Format(format!("expected {} parameters, header says {n}", net.num_params())));
        }
        for p in net.params.iter_mut() {
            *p = f64::from_le_bytes(take(8)?.try_into().unwrap());
        }
        if !cur.is_empty() {
            return Err(Error::Format("trailing bytes after parameters".into()));
        }
        Ok(net)
    }

    pub fn manifest(&self) -> String {
        let sizes: Vec<String> = self.sizes.iter().map(|s| s.to_string()).collect();
        format!(
            "format = {}\ndtype = f64-le\nlayers = {}\nhidden = relu\noutput = {:?}\nparams = {}\n",
            String::from_utf8_lossy(MAGIC),
            sizes.join(","),
            self.output,
            self.params.len()
        )
    }

    /// Writes the binary parameter file plus a `<file>.manifest` text sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        fs::write(manifest_path(path), self.manifest())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl OptimizerState {
    pub fn new(net: &MlpNet, cfg: AdamConfig) -> Self {
        Self { cfg, m: vec![0.0; net.num_params()], v: vec![0.0; net.num_params()], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected descent step along `grads`.
    pub fn step(&mut self, net: &mut MlpNet, grads: &Gradients) -> Result<()> {
        if grads.0.len() != net.num_params() || self.m.len() != net.num_params() {
            return Err(Error::Dimension { expected: net.num_params(), got: grads.0.len() });
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let params = net.params_mut();
        for i in 0..params.len() {
            let g = grads.0[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

pub fn opt_step(net: &mut MlpNet, grads: &Gradients, state: &mut OptimizerState) -> Result<()> {
    state.step(net, grads)
}

/// Central-difference gradient of `sum(out_weights * output)` w.r.t. every
/// parameter; used by the gradient checks.
pub fn numeric_param_grad(net: &MlpNet, input: &[f64], out_weights: &[f64], h: f64) -> Result<Vec<f64>> {
    let f = |n: &MlpNet| -> Result<f64> {
        Ok(n.predict(input)?.iter().zip(out_weights).map(|(y, w)| y * w).sum())
    };
    let mut probe = net.clone();
    let mut out = Vec::with_capacity(net.num_params());
    for i in 0..net.num_params() {
        let orig = probe.params[i];
        probe.params_mut()[i] = orig + h;
        let up = f(&probe)?;
        probe.params_mut()[i] = orig - h;
        let down = f(&probe)?;
        probe.params_mut()[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = MlpNet::zeros(&[4, 32, 32, 1], OutputActivation::Linear).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0, 0.5]).unwrap(), vec![0.0]);
    }

    #[test]
    fn tanh_identity_at_zero() {
        let mut net = MlpNet::zeros(&[1, 1], OutputActivation::Tanh).unwrap();
        net.params_mut()[0] = 1.0;
        let (y, cache) = net.forward(&[0.0]).unwrap();
        assert_eq!(y, vec![0.0]);
        let (_, dx) = net.backward(&cache, &[0.7]).unwrap();
        assert_eq!(dx, vec![0.7]);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let net = MlpNet::new(&[4, 8, 1], OutputActivation::Linear, 0).unwrap();
        assert!(matches!(net.predict(&[1.0]), Err(Error::Dimension { .. })));
        let (_, c) = net.forward(&[0.0; 4]).unwrap();
        assert!(net.backward(&c, &[1.0, 2.0]).is_err());
        assert!(MlpNet::zeros(&[3], OutputActivation::Linear).is_err());
    }

    #[test]
    fn stale_cache_rejected() {
        let mut net = MlpNet::new(&[2, 4, 1], OutputActivation::Tanh, 1).unwrap();
        let (_, c) = net.forward(&[0.1, 0.2]).unwrap();
        net.params_mut()[0] += 0.1;
        assert!(matches!(net.backward(&c, &[1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn zero_out_grad_gives_zero_param_grads() {
        let net = MlpNet::new(&[4, 32, 32, 1], OutputActivation::Tanh, 2).unwrap();
        let (_, c) = net.forward(&[0.3, 0.1, -0.2, 0.5]).unwrap();
        let (g, dx) = net.backward(&c, &[0.0]).unwrap();
        assert!(g.0.iter().all(|&x| x == 0.0));
        assert!(dx.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_first_step_is_lr() {
        let mut net = MlpNet::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        let mut st = OptimizerState::new(&net, AdamConfig::default());
        let g = Gradients(vec![1.0, 0.0]);
        st.step(&mut net, &g).unwrap();
        assert!((net.params()[0] + 0.001).abs() < 1e-9);
        assert_eq!(net.params()[1], 0.0);
    }

    #[test]
    fn adam_zero_grad_is_noop() {
        let mut net = MlpNet::new(&[3, 5, 2], OutputActivation::Linear, 4).unwrap();
        let before = net.clone();
        let mut st = OptimizerState::new(&net, AdamConfig::default());
        st.step(&mut net, &Gradients::zeros_like(&before)).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn soft_update_edges() {
        let src = MlpNet::new(&[2, 3, 1], OutputActivation::Linear, 5).unwrap();
        let mut tgt = MlpNet::new(&[2, 3, 1], OutputActivation::Linear, 6).unwrap();
        let keep = tgt.clone();
        tgt.soft_update(&src, 0.0).unwrap();
        assert_eq!(tgt, keep);
        tgt.soft_update(&src, 1.0).unwrap();
        assert_eq!(tgt, src);

        let mut z = MlpNet::zeros(&[1, 1], OutputActivation::Linear).unwrap();
        let mut one = z.clone();
        one.params_mut().iter_mut().for_each(|p| *p = 1.0);
        z.soft_update(&one, 0.001).unwrap();
        assert!(z.params().iter().all(|&p| (p - 0.001).abs() < 1e-15));

        let other = MlpNet::zeros(&[2, 4, 1], OutputActivation::Linear).unwrap();
        assert!(z.soft_update(&other, 0.5).is_err());
        assert!(z.soft_update(&one, 1.5).is_err());
    }

    #[test]
    fn bytes_roundtrip_bit_exact() {
        let net = MlpNet::new(&[5, 32, 32, 1], OutputActivation::Linear, 8).unwrap();
        let back = MlpNet::from_bytes(&net.to_bytes()).unwrap();
        assert_eq!(back, net);
        let mut bad = net.to_bytes();
        bad[0] = b'X';
        assert!(MlpNet::from_bytes(&bad).is_err());
        let short = &net.to_bytes()[..40];
        assert!(MlpNet::from_bytes(short).is_err());
    }

    #[test]
    fn save_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("actor.mlp");
        let net = MlpNet::new(&[4, 32, 32, 1], OutputActivation::Tanh, 3).unwrap();
        net.save(&p).unwrap();
        assert_eq!(MlpNet::load(&p).unwrap(), net);
        let m = fs::read_to_string(manifest_path(&p)).unwrap();
        assert!(m.contains("layers = 4,32,32,1"));
        assert!(m.contains("output = Tanh"));
    }
}
