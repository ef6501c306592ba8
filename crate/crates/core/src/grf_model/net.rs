use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{elu, elu_grad, ModelError, NetShape, Prediction};
use crate::motion_data::Vec3;

pub const KERNEL_WIDTH: usize = 7;
const PAD: usize = KERNEL_WIDTH / 2;
/// Two feet × three force components.
pub const OUTPUT_WIDTH: usize = 6;
const CONV_LAYERS: usize = 4;

/// Same-length 1D convolution over time. Weights are laid out `[out][in][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Frame-wise affine layer. Weights are laid out `[out][in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl Conv1d {
    fn new(in_ch: usize, out_ch: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / (in_ch * KERNEL_WIDTH) as f64).sqrt();
        Self {
            in_ch,
            out_ch,
            weight: uniform(rng, out_ch * in_ch * KERNEL_WIDTH, bound),
            bias: uniform(rng, out_ch, bound),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    /// Tap range `k` such that `t + k − PAD` lies inside `[0, len)`.
    fn taps(t: usize, len: usize) -> std::ops::Range<usize> {
        let lo = PAD.saturating_sub(t);
        let hi = (len + PAD - t).min(KERNEL_WIDTH);
        lo..hi
    }

    fn forward(&self, x: &[f64], len: usize) -> Vec<f64> {
        let (cin, cout) = (self.in_ch, self.out_ch);
        let mut z = vec![0.0; len * cout];
        for t in 0..len {
            let taps = Self::taps(t, len);
            for o in 0..cout {
                let mut acc = self.bias[o];
                for i in 0..cin {
                    let w = &self.weight[(o * cin + i) * KERNEL_WIDTH..][..KERNEL_WIDTH];
                    for k in taps.clone() {
                        acc += w[k] * x[(t + k - PAD) * cin + i];
                    }
                }
                z[t * cout + o] = acc;
            }
        }
        z
    }

    /// Accumulates parameter gradients into `grad`; returns the input
    /// gradient when `need_dx`.
    fn backward(&self, x: &[f64], dz: &[f64], len: usize, grad: &mut Conv1d, need_dx: bool) -> Vec<f64> {
        let (cin, cout) = (self.in_ch, self.out_ch);
        let mut dx = if need_dx { vec![0.0; len * cin] } else { Vec::new() };
        for t in 0..len {
            let taps = Self::taps(t, len);
            for o in 0..cout {
                let g = dz[t * cout + o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                for i in 0..cin {
                    let base = (o * cin + i) * KERNEL_WIDTH;
                    for k in taps.clone() {
                        let s = (t + k - PAD) * cin + i;
                        grad.weight[base + k] += g * x[s];
                        if need_dx {
                            dx[s] += g * self.weight[base + k];
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Dense {
    fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (1.0 / in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: uniform(rng, out_dim * in_dim, bound),
            bias: uniform(rng, out_dim, bound),
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weight: vec![0.0; self.weight.len()],
            bias: vec![0.0; self.bias.len()],
            ..*self
        }
    }

    fn forward(&self, x: &[f64], len: usize) -> Vec<f64> {
        let (din, dout) = (self.in_dim, self.out_dim);
        let mut z = vec![0.0; len * dout];
        for t in 0..len {
            let row = &x[t * din..][..din];
            for o in 0..dout {
                let w = &self.weight[o * din..][..din];
                z[t * dout + o] = self.bias[o] + w.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        z
    }

    fn backward(&self, x: &[f64], dz: &[f64], len: usize, grad: &mut Dense) -> Vec<f64> {
        let (din, dout) = (self.in_dim, self.out_dim);
        let mut dx = vec![0.0; len * din];
        for t in 0..len {
            let row = &x[t * din..][..din];
            let drow = &mut dx[t * din..][..din];
            for o in 0..dout {
                let g = dz[t * dout + o];
                if g == 0.0 {
                    continue;
                }
                grad.bias[o] += g;
                let w = &self.weight[o * din..][..din];
                let gw = &mut grad.weight[o * din..][..din];
                for i in 0..din {
                    gw[i] += g * row[i];
                    drow[i] += g * w[i];
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemporalConvNet {
    pub convs: Vec<Conv1d>,
    pub fcs: Vec<Dense>,
}

/// Pre-activations and activations from a forward pass.
pub(crate) struct Cache {
    len: usize,
    /// `acts[0]` is the input; `acts[l + 1]` follows layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl Cache {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

impl TemporalConvNet {
    /// Seeded initialization, uniform in ±sqrt(1 / fan_in).
    pub fn new(shape: &NetShape, seed: u64) -> Result<Self, ModelError> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = Vec::with_capacity(CONV_LAYERS);
        let mut width = shape.input_width;
        for _ in 0..CONV_LAYERS {
            convs.push(Conv1d::new(width, shape.conv_width, &mut rng));
            width = shape.conv_width;
        }
        let dims = [shape.conv_width, shape.fc_hidden[0], shape.fc_hidden[1], OUTPUT_WIDTH];
        let fcs = dims.windows(2).map(|d| Dense::new(d[0], d[1], &mut rng)).collect();
        Ok(Self { convs, fcs })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            convs: self.convs.iter().map(Conv1d::zeros_like).collect(),
            fcs: self.fcs.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn shape(&self) -> NetShape {
        NetShape {
            input_width: self.convs[0].in_ch,
            conv_width: self.convs[0].out_ch,
            fc_hidden: [self.fcs[0].out_dim, self.fcs[1].out_dim],
        }
    }

    pub fn input_width(&self) -> usize {
        self.convs[0].in_ch
    }

    /// Structural checks used when loading parameters from outside.
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Checkpoint(m));
        if self.convs.len() != CONV_LAYERS || self.fcs.len() != 3 {
            return bad("expected 4 conv and 3 dense layers".into());
        }
        let mut width = self.convs[0].in_ch;
        for (l, c) in self.convs.iter().enumerate() {
            if c.in_ch != width || c.weight.len() != c.out_ch * c.in_ch * KERNEL_WIDTH || c.bias.len() != c.out_ch {
                return bad(format!("conv layer {l} has inconsistent shape"));
            }
            width = c.out_ch;
        }
        for (l, d) in self.fcs.iter().enumerate() {
            if d.in_dim != width || d.weight.len() != d.out_dim * d.in_dim || d.bias.len() != d.out_dim {
                return bad(format!("dense layer {l} has inconsistent shape"));
            }
            width = d.out_dim;
        }
        if width != OUTPUT_WIDTH {
            return bad(format!("output width {width}, expected {OUTPUT_WIDTH}"));
        }
        if !self.params().all(|p| p.is_finite()) {
            return bad("non-finite parameter".into());
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.params().count()
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.convs
            .iter()
            .flat_map(|c| c.weight.iter().chain(&c.bias))
            .chain(self.fcs.iter().flat_map(|d| d.weight.iter().chain(&d.bias)))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.convs
            .iter_mut()
            .flat_map(|c| c.weight.iter_mut().chain(c.bias.iter_mut()))
            .chain(
                self.fcs
                    .iter_mut()
                    .flat_map(|d| d.weight.iter_mut().chain(d.bias.iter_mut())),
            )
    }

    /// Adds `other` element-wise.
    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        for p in self.params_mut() {
            *p *= s;
        }
    }

    fn check_input(&self, features: &[f64], len: usize) -> Result<(), ModelError> {
        if len == 0 {
            return Err(ModelError::EmptyInput);
        }
        let d = self.input_width();
        if features.len() != len * d {
            return Err(ModelError::WidthMismatch {
                expected: d,
                got: features.len() / len,
            });
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, features: &[f64], len: usize) -> Result<Cache, ModelError> {
        self.check_input(features, len)?;
        let mut acts = vec![features.to_vec()];
        let mut pre = Vec::with_capacity(CONV_LAYERS + 3);
        for conv in &self.convs {
            let z = conv.forward(acts.last().unwrap(), len);
            acts.push(z.iter().map(|&v| elu(v)).collect());
            pre.push(z);
        }
        for (l, fc) in self.fcs.iter().enumerate() {
            let z = fc.forward(acts.last().unwrap(), len);
            let a = if l + 1 < self.fcs.len() {
                z.iter().map(|&v| elu(v)).collect()
            } else {
                z.clone()
            };
            acts.push(a);
            pre.push(z);
        }
        Ok(Cache { len, acts, pre })
    }

    /// Predicts per-foot forces for a `len × D` row-major feature matrix.
    pub fn forward(&self, features: &[f64], len: usize) -> Result<Prediction, ModelError> {
        let cache = self.forward_cached(features, len)?;
        Ok(Prediction {
            forces: cache
                .output()
                .chunks_exact(OUTPUT_WIDTH)
                .map(|r| [Vec3::new(r[0], r[1], r[2]), Vec3::new(r[3], r[4], r[5])])
                .collect(),
        })
    }

    /// Parameter gradients given the loss gradient w.r.t. the `len × 6` output.
    pub(crate) fn backward(&self, cache: &Cache, d_out: &[f64]) -> Self {
        let mut grad = self.zeros_like();
        let len = cache.len;
        let n_conv = self.convs.len();
        let mut delta = d_out.to_vec();
        for l in (0..self.fcs.len()).rev() {
            if l + 1 < self.fcs.len() {
                for (d, &z) in delta.iter_mut().zip(&cache.pre[n_conv + l]) {
                    *d *= elu_grad(z);
                }
            }
            delta = self.fcs[l].backward(&cache.acts[n_conv + l], &delta, len, &mut grad.fcs[l]);
        }
        for l in (0..n_conv).rev() {
            for (d, &z) in delta.iter_mut().zip(&cache.pre[l]) {
                *d *= elu_grad(z);
            }
            delta = self.convs[l].backward(&cache.acts[l], &delta, len, &mut grad.convs[l], l > 0);
        }
        grad
    }
}
