//! Small dense networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector, layer by layer: the weight matrix
//! (row-major, `out x in`) followed by the bias. Hidden layers use tanh.
//!
//! Checkpoint layout, all little-endian:
//!
//! ```text
//! 8 bytes   magic "HLMLP001"
//! u32       number of layer sizes (n)
//! n x u32   layer sizes, input first
//! u8        head: 0 = linear, 1 = softmax
//! f64 ...   parameters in the flat order above
//! ```

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HLMLP001";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Linear,
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    head: Head,
    params: Vec<f64>,
}

/// Activations kept by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `inputs[l]` is the input to layer `l`.
    inputs: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / sum).collect()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::Shape(format!("layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            head,
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], head: Head, rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes, head)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..=limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        self.sizes[self.sizes.len() - 1]
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_cached(input).output
    }

    pub fn forward_cached(&self, input: &[f64]) -> Forward {
        assert_eq!(input.len(), self.input_size(), "input width");
        let mut inputs = Vec::with_capacity(self.layers());
        let mut a = input.to_vec();
        let mut offset = 0;
        for l in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let mut z: Vec<f64> = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += row.iter().zip(&a).map(|(wi, ai)| wi * ai).sum::<f64>();
            }
            if l + 1 < self.layers() {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            inputs.push(std::mem::replace(&mut a, z));
            offset += n_in * n_out + n_out;
        }
        let output = match self.head {
            Head::Linear => a,
            Head::Softmax => softmax(&a),
        };
        Forward { inputs, output }
    }

    /// Accumulates `d loss / d params` into `grads` given `upstream = d loss /
    /// d output`, and returns `d loss / d input`.
    pub fn backward(&self, cache: &Forward, upstream: &[f64], grads: &mut [f64]) -> Vec<f64> {
        assert_eq!(upstream.len(), self.output_size(), "upstream width");
        assert_eq!(grads.len(), self.params.len(), "gradient buffer");
        let mut delta: Vec<f64> = match self.head {
            Head::Linear => upstream.to_vec(),
            Head::Softmax => {
                let p = &cache.output;
                let dot: f64 = p.iter().zip(upstream).map(|(p, u)| p * u).sum();
                p.iter().zip(upstream).map(|(p, u)| p * (u - dot)).collect()
            }
        };
        let mut offset = self.params.len();
        for l in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            offset -= n_in * n_out + n_out;
            let a = &cache.inputs[l];
            let w = &self.params[offset..offset + n_in * n_out];
            let (gw, gb) = grads[offset..offset + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut back = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                gb[o] += d;
                let row = &w[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    gw[o * n_in + i] += d * a[i];
                    back[i] += d * row[i];
                }
            }
            if l > 0 {
                // The layer input is the tanh output of the layer below.
                for (bi, ai) in back.iter_mut().zip(a) {
                    *bi *= 1.0 - ai * ai;
                }
            }
            delta = back;
        }
        delta
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        w.write_all(&[match self.head {
            Head::Linear => 0,
            Head::Softmax => 1,
        }])?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("not a network checkpoint"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
        let n = u32::from_le_bytes(u32buf) as usize;
        if !(2..=64).contains(&n) {
            return Err(bad("implausible layer count"));
        }
        let mut sizes = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut u32buf).map_err(|_| bad("truncated header"))?;
            sizes.push(u32::from_le_bytes(u32buf) as usize);
        }
        let mut head = [0u8; 1];
        r.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        let head = match head[0] {
            0 => Head::Linear,
            1 => Head::Softmax,
            h => return Err(bad(&format!("unknown head tag {h}"))),
        };
        let mut net = Self::zeros(&sizes, head)?;
        let mut f64buf = [0u8; 8];
        for p in &mut net.params {
            r.read_exact(&mut f64buf).map_err(|_| bad("truncated parameters"))?;
            *p = f64::from_le_bytes(f64buf);
        }
        if r.read(&mut f64buf)? != 0 {
            return Err(bad("trailing bytes"));
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        Ok(net)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

/// `target <- rho * main + (1 - rho) * target`.
pub fn soft_update(target: &mut Mlp, main: &Mlp, rho: f64) {
    assert_eq!(target.sizes, main.sizes, "soft update between different shapes");
    for (t, m) in target.params.iter_mut().zip(&main.params) {
        *t = rho * m + (1.0 - rho) * *t;
    }
}

/// Adam with the usual moment decay rates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, params: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; params],
            v: vec![0.0; params],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step on `params` along `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powf(self.t as f64);
        let c2 = 1.0 - self.beta2.powf(self.t as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Inverse-CDF draw; never returns a zero-probability index.
pub fn categorical_sample<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

pub fn log_prob(probs: &[f64], index: usize) -> f64 {
    probs[index].ln()
}
