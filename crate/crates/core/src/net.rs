//! Shared-trunk, slim-head feed-forward network.
//!
//! Derivatives with respect to the input coordinates are propagated in
//! forward mode alongside the values; gradients with respect to parameters
//! are obtained by a hand-written reverse sweep over the same trace. A batch
//! is stored column-wise in `1 + t` blocks of `n` columns: block 0 carries
//! values, block `1 + j` the tangent along coordinate `j`.

use ndarray::{s, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{DppError, Result};
use crate::problem::{permeability_at, MaterialField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// `a * sigmoid(s * a)` with a trainable slope `s` per layer.
    Swish,
    Tanh,
    /// Linear pass-through; only useful for closed-form checks.
    Identity,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Activation {
    fn init_gain(self) -> f64 {
        match self {
            Activation::Tanh => 5.0 / 3.0,
            _ => 1.0,
        }
    }

    /// (σ, σ')
    #[inline]
    fn eval(self, a: f64, s: f64) -> (f64, f64) {
        match self {
            Activation::Swish => {
                let g = sigmoid(s * a);
                (a * g, g + s * a * g * (1.0 - g))
            }
            Activation::Tanh => {
                let t = a.tanh();
                (t, 1.0 - t * t)
            }
            Activation::Identity => (a, 1.0),
        }
    }

    /// (σ', σ'', ∂σ/∂s, ∂σ'/∂s)
    #[inline]
    fn eval2(self, a: f64, s: f64) -> (f64, f64, f64, f64) {
        match self {
            Activation::Swish => {
                let g = sigmoid(s * a);
                let gg = g * (1.0 - g);
                let k = 2.0 + s * a * (1.0 - 2.0 * g);
                (g + s * a * gg, s * gg * k, a * a * gg, a * gg * k)
            }
            Activation::Tanh => {
                let t = a.tanh();
                let d = 1.0 - t * t;
                (d, -2.0 * t * d, 0.0, 0.0)
            }
            Activation::Identity => (1.0, 0.0, 0.0, 0.0),
        }
    }

    fn has_slope(self) -> bool {
        self == Activation::Swish
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadSpec {
    pub name: String,
    pub dim: usize,
    /// Fixed output multiplier (physical unit of the field).
    #[serde(default = "default_scale")]
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub heads: Vec<HeadSpec>,
    #[serde(default)]
    pub beta_input: bool,
}

impl NetworkSpec {
    /// Heads (p1, p2, u1, u2) for an `nd`-dimensional DPP problem.
    pub fn dpp(nd: usize, depth: usize, width: usize, activation: Activation) -> Self {
        let head = |name: &str, dim| HeadSpec {
            name: name.into(),
            dim,
            scale: 1.0,
        };
        NetworkSpec {
            depth,
            width,
            activation,
            heads: vec![head("p1", 1), head("p2", 1), head("u1", nd), head("u2", nd)],
            beta_input: false,
        }
    }

    pub fn with_scales(mut self, pressure: f64, velocity: f64) -> Self {
        for h in &mut self.heads {
            h.scale = if h.name.starts_with('p') {
                pressure
            } else {
                velocity
            };
        }
        self
    }

    pub fn m_tot(&self) -> usize {
        self.heads.iter().map(|h| h.dim).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.width == 0 {
            return Err(DppError::config(
                "network depth and width must be at least 1",
            ));
        }
        if self.heads.is_empty() || self.heads.iter().any(|h| h.dim == 0 || !(h.scale > 0.0)) {
            return Err(DppError::config(
                "every head needs a positive dimension and scale",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Swish slope; ignored for other activations and for heads.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub d_in: usize,
    pub trunk: Vec<Layer>,
    pub heads: Vec<Layer>,
}

/// Values kept from a forward pass for the reverse sweep.
#[derive(Debug, Clone)]
pub struct Trace {
    pub n: usize,
    pub blocks: usize,
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    /// Head outputs, `m_tot` rows.
    pub out: Array2<f64>,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..=bound))
}

pub fn init_network(spec: &NetworkSpec, d_in: usize, seed: u64) -> Result<Network> {
    spec.validate()?;
    if d_in == 0 {
        return Err(DppError::config("network input dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gain = spec.activation.init_gain();
    let mut trunk = Vec::with_capacity(spec.depth);
    let mut fan_in = d_in;
    for _ in 0..spec.depth {
        let bound = gain * (3.0 / fan_in as f64).sqrt();
        trunk.push(Layer {
            w: uniform_matrix(&mut rng, spec.width, fan_in, bound),
            b: Array1::zeros(spec.width),
            slope: 1.0,
        });
        fan_in = spec.width;
    }
    let bound = (3.0 / spec.width as f64).sqrt();
    let heads = spec
        .heads
        .iter()
        .map(|h| Layer {
            w: uniform_matrix(&mut rng, h.dim, spec.width, bound),
            b: Array1::zeros(h.dim),
            slope: 1.0,
        })
        .collect();
    Ok(Network {
        spec: spec.clone(),
        d_in,
        trunk,
        heads,
    })
}

impl Network {
    pub fn num_params(&self) -> usize {
        let slope = usize::from(self.spec.activation.has_slope());
        self.trunk
            .iter()
            .map(|l| l.w.len() + l.b.len() + slope)
            .sum::<usize>()
            + self
                .heads
                .iter()
                .map(|l| l.w.len() + l.b.len())
                .sum::<usize>()
    }

    /// Flat parameter vector: per trunk layer W (row-major), b, slope; then
    /// per head W, b.
    pub fn param_vector(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.trunk {
            v.extend(l.w.iter());
            v.extend(l.b.iter());
            if self.spec.activation.has_slope() {
                v.push(l.slope);
            }
        }
        for l in &self.heads {
            v.extend(l.w.iter());
            v.extend(l.b.iter());
        }
        v
    }

    pub fn assign_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(DppError::LengthMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let slope = self.spec.activation.has_slope();
        let mut it = flat.iter().copied();
        for l in &mut self.trunk {
            l.w.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.b.iter_mut().for_each(|b| *b = it.next().unwrap());
            if slope {
                l.slope = it.next().unwrap();
            }
        }
        for l in &mut self.heads {
            l.w.iter_mut().for_each(|w| *w = it.next().unwrap());
            l.b.iter_mut().for_each(|b| *b = it.next().unwrap());
        }
        Ok(())
    }

    pub fn with_params(&self, flat: &[f64]) -> Result<Network> {
        let mut net = self.clone();
        net.assign_params(flat)?;
        Ok(net)
    }

    fn activate(&self, slope: f64, pre: &Array2<f64>, n: usize, blocks: usize) -> Array2<f64> {
        let act = self.spec.activation;
        let mut out = Array2::<f64>::zeros(pre.raw_dim());
        for (prow, mut orow) in pre.outer_iter().zip(out.outer_iter_mut()) {
            let p = prow.as_slice().expect("standard layout");
            let o = orow.as_slice_mut().expect("standard layout");
            for c in 0..n {
                let (v, dv) = act.eval(p[c], slope);
                o[c] = v;
                for k in 1..blocks {
                    o[k * n + c] = dv * p[k * n + c];
                }
            }
        }
        out
    }

    /// Forward pass over a batch laid out in column blocks of width `n`.
    pub fn forward_trace(&self, input: Array2<f64>, n: usize) -> Result<Trace> {
        if input.nrows() != self.d_in {
            return Err(DppError::LengthMismatch {
                expected: self.d_in,
                got: input.nrows(),
            });
        }
        let blocks = if n == 0 { 1 } else { input.ncols() / n };
        let mut inputs = Vec::with_capacity(self.trunk.len());
        let mut pre = Vec::with_capacity(self.trunk.len());
        let mut h = input;
        for layer in &self.trunk {
            let mut a = layer.w.dot(&h);
            a.slice_mut(s![.., ..n])
                .outer_iter_mut()
                .zip(layer.b.iter())
                .for_each(|(mut row, b)| row += *b);
            let next = self.activate(layer.slope, &a, n, blocks);
            inputs.push(h);
            pre.push(a);
            h = next;
        }
        let mut out = Array2::<f64>::zeros((self.spec.m_tot(), h.ncols()));
        let mut r0 = 0;
        for (head, hs) in self.heads.iter().zip(&self.spec.heads) {
            let mut y = head.w.dot(&h);
            y.slice_mut(s![.., ..n])
                .outer_iter_mut()
                .zip(head.b.iter())
                .for_each(|(mut row, b)| row += *b);
            y *= hs.scale;
            out.slice_mut(s![r0..r0 + hs.dim, ..]).assign(&y);
            r0 += hs.dim;
        }
        inputs.push(h);
        Ok(Trace {
            n,
            blocks,
            inputs,
            pre,
            out,
        })
    }

    /// Reverse sweep: accumulates `∂L/∂θ` into `grad` given `gy = ∂L/∂out`.
    /// Returns `∂L/∂input` when `want_input`.
    pub fn backward(
        &self,
        trace: &Trace,
        gy: &Array2<f64>,
        grad: &mut [f64],
        want_input: bool,
    ) -> Option<Array2<f64>> {
        assert_eq!(grad.len(), self.num_params());
        assert_eq!(gy.dim(), trace.out.dim());
        let (n, blocks) = (trace.n, trace.blocks);
        let act = self.spec.activation;
        let slope_count = usize::from(act.has_slope());

        let mut offsets = Vec::with_capacity(self.trunk.len());
        let mut off = 0;
        for l in &self.trunk {
            offsets.push(off);
            off += l.w.len() + l.b.len() + slope_count;
        }

        // heads
        let z = trace.inputs.last().expect("trace holds trunk output");
        let mut gz = Array2::<f64>::zeros(z.raw_dim());
        let mut r0 = 0;
        for (head, hs) in self.heads.iter().zip(&self.spec.heads) {
            let g = gy.slice(s![r0..r0 + hs.dim, ..]).mapv(|v| v * hs.scale);
            let gw = g.dot(&z.t());
            let gb = g.slice(s![.., ..n]).sum_axis(Axis(1));
            let (wlen, blen) = (head.w.len(), head.b.len());
            grad[off..off + wlen]
                .iter_mut()
                .zip(gw.iter())
                .for_each(|(a, b)| *a += b);
            grad[off + wlen..off + wlen + blen]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(a, b)| *a += b);
            off += wlen + blen;
            gz += &head.w.t().dot(&g);
            r0 += hs.dim;
        }

        let mut g_h = gz;
        for (li, layer) in self.trunk.iter().enumerate().rev() {
            let a = &trace.pre[li];
            let mut g_a = Array2::<f64>::zeros(a.raw_dim());
            let mut g_slope = 0.0;
            for ((arow, grow), mut garow) in a
                .outer_iter()
                .zip(g_h.outer_iter())
                .zip(g_a.outer_iter_mut())
            {
                let av = arow.as_slice().expect("standard layout");
                let gv = grow.as_slice().expect("standard layout");
                let ga = garow.as_slice_mut().expect("standard layout");
                for c in 0..n {
                    let (d1, d2, ds, d1s) = act.eval2(av[c], layer.slope);
                    let mut acc = gv[c] * d1;
                    let mut sl = gv[c] * ds;
                    for k in 1..blocks {
                        let tan = av[k * n + c];
                        let gt = gv[k * n + c];
                        acc += gt * d2 * tan;
                        sl += gt * d1s * tan;
                        ga[k * n + c] = gt * d1;
                    }
                    ga[c] = acc;
                    g_slope += sl;
                }
            }
            let input = &trace.inputs[li];
            let gw = g_a.dot(&input.t());
            let gb = g_a.slice(s![.., ..n]).sum_axis(Axis(1));
            let o = offsets[li];
            let (wlen, blen) = (layer.w.len(), layer.b.len());
            grad[o..o + wlen]
                .iter_mut()
                .zip(gw.iter())
                .for_each(|(a, b)| *a += b);
            grad[o + wlen..o + wlen + blen]
                .iter_mut()
                .zip(gb.iter())
                .for_each(|(a, b)| *a += b);
            if slope_count == 1 {
                grad[o + wlen + blen] += g_slope;
            }
            if li > 0 || want_input {
                g_h = layer.w.t().dot(&g_a);
            }
        }
        want_input.then_some(g_h)
    }
}

/// Raw head outputs at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub p1: f64,
    pub p2: f64,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
}

/// Fields and the first derivatives consumed by the residuals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FieldSample {
    pub p1: f64,
    pub p2: f64,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub grad_p1: Vec<f64>,
    pub grad_p2: Vec<f64>,
    pub div_u1: f64,
    pub div_u2: f64,
}

impl FieldSample {
    pub fn zeros(nd: usize) -> Self {
        FieldSample {
            u1: vec![0.0; nd],
            u2: vec![0.0; nd],
            grad_p1: vec![0.0; nd],
            grad_p2: vec![0.0; nd],
            ..Default::default()
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        let sc = |v: &Vec<f64>| v.iter().map(|x| c * x).collect();
        FieldSample {
            p1: c * self.p1,
            p2: c * self.p2,
            u1: sc(&self.u1),
            u2: sc(&self.u2),
            grad_p1: sc(&self.grad_p1),
            grad_p2: sc(&self.grad_p2),
            div_u1: c * self.div_u1,
            div_u2: c * self.div_u2,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.p1, self.p2, self.div_u1, self.div_u2]
            .iter()
            .all(|v| v.is_finite())
            && [&self.u1, &self.u2, &self.grad_p1, &self.grad_p2]
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Sensitivity of a scalar loss to each entry of a [`FieldSample`].
pub type FieldGrad = FieldSample;

/// Encoder plus network with the DPP head layout `(p1, p2, u1, u2)`.
///
/// With `mobility` set, velocity heads are multiplied pointwise by `kᵢ(x)/μ`
/// (piecewise constant, so the divergence scales by the same factor).
#[derive(Debug, Clone, PartialEq)]
pub struct Surrogate {
    pub encoder: Encoder,
    pub net: Network,
    pub mobility: Option<MaterialField>,
}

impl Surrogate {
    pub fn new(encoder: Encoder, net: Network) -> Result<Self> {
        let nd = encoder.d();
        let expected_in = encoder.dim_out() + usize::from(net.spec.beta_input);
        if net.d_in != expected_in {
            return Err(DppError::config(format!(
                "network input dimension {} does not match encoder output {}",
                net.d_in, expected_in
            )));
        }
        let dims: Vec<usize> = net.spec.heads.iter().map(|h| h.dim).collect();
        if dims != [1, 1, nd, nd] {
            return Err(DppError::config(format!(
                "heads {dims:?} do not match the (p1, p2, u1, u2) layout"
            )));
        }
        Ok(Surrogate {
            encoder,
            net,
            mobility: None,
        })
    }

    pub fn with_mobility(mut self, material: Option<MaterialField>) -> Self {
        self.mobility = material;
        self
    }

    /// Same encoder and mobility, different network parameters.
    pub fn with_params(&self, flat: &[f64]) -> Result<Surrogate> {
        Ok(Surrogate {
            encoder: self.encoder.clone(),
            net: self.net.with_params(flat)?,
            mobility: self.mobility.clone(),
        })
    }

    /// Per-point velocity multipliers `(k1/μ, k2/μ)`.
    pub fn velocity_factors(&self, points: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        match &self.mobility {
            None => Ok(vec![(1.0, 1.0); points.len()]),
            Some(m) => points
                .iter()
                .map(|x| permeability_at(m, x).map(|(k1, k2)| (k1 / m.mu, k2 / m.mu)))
                .collect(),
        }
    }

    /// Field samples from a trace over `points`.
    pub fn samples(&self, t: &Trace, points: &[Vec<f64>]) -> Result<Vec<FieldSample>> {
        let mut out = samples_from_trace(t, self.nd());
        if self.mobility.is_some() {
            for (fs, (a, b)) in out.iter_mut().zip(self.velocity_factors(points)?) {
                fs.u1.iter_mut().for_each(|v| *v *= a);
                fs.u2.iter_mut().for_each(|v| *v *= b);
                fs.div_u1 *= a;
                fs.div_u2 *= b;
            }
        }
        Ok(out)
    }

    /// Output-gradient matrix for sensitivities taken w.r.t. [`Self::samples`].
    pub fn output_grad(
        &self,
        t: &Trace,
        points: &[Vec<f64>],
        grads: &[FieldGrad],
    ) -> Result<Array2<f64>> {
        if self.mobility.is_none() {
            return Ok(output_grad_from_fields(t, self.nd(), grads));
        }
        let scaled: Vec<FieldGrad> = grads
            .iter()
            .zip(self.velocity_factors(points)?)
            .map(|(g, (a, b))| FieldSample {
                u1: g.u1.iter().map(|v| v * a).collect(),
                u2: g.u2.iter().map(|v| v * b).collect(),
                div_u1: g.div_u1 * a,
                div_u2: g.div_u2 * b,
                ..g.clone()
            })
            .collect();
        Ok(output_grad_from_fields(t, self.nd(), &scaled))
    }

    pub fn nd(&self) -> usize {
        self.encoder.d()
    }

    fn check_beta(&self, beta: Option<f64>) -> Result<()> {
        if beta.is_some() != self.net.spec.beta_input {
            return Err(DppError::config(
                "beta must be supplied exactly when the network is beta-conditioned",
            ));
        }
        Ok(())
    }

    /// Network input matrix for `points` (see module docs for the layout).
    pub fn inputs(&self, points: &[Vec<f64>], beta: Option<f64>, with_derivs: bool) -> Array2<f64> {
        let extra = usize::from(self.net.spec.beta_input);
        let mut m = self.encoder.encode_batch(points, with_derivs, extra);
        if let Some(b) = beta {
            let r = self.encoder.dim_out();
            m.slice_mut(s![r, ..points.len()]).fill(b);
        }
        m
    }

    /// Overwrite the beta row of a cached input matrix.
    pub fn set_beta_row(&self, input: &mut Array2<f64>, n: usize, beta: f64) {
        let r = self.encoder.dim_out();
        input.slice_mut(s![r, ..n]).fill(beta);
    }

    pub fn trace(
        &self,
        points: &[Vec<f64>],
        beta: Option<f64>,
        with_derivs: bool,
    ) -> Result<Trace> {
        self.check_beta(beta)?;
        self.net
            .forward_trace(self.inputs(points, beta, with_derivs), points.len())
    }

    pub fn forward(&self, x: &[f64], beta: Option<f64>) -> Result<Outputs> {
        let fs = self.eval_batch(&[x.to_vec()], beta, false)?.remove(0);
        Ok(Outputs {
            p1: fs.p1,
            p2: fs.p2,
            u1: fs.u1,
            u2: fs.u2,
        })
    }

    pub fn forward_with_derivs(&self, x: &[f64], beta: Option<f64>) -> Result<FieldSample> {
        Ok(self.eval_batch(&[x.to_vec()], beta, true)?.remove(0))
    }

    /// Field samples at many points; derivative entries are zero unless
    /// `with_derivs`.
    pub fn eval_batch(
        &self,
        points: &[Vec<f64>],
        beta: Option<f64>,
        with_derivs: bool,
    ) -> Result<Vec<FieldSample>> {
        let t = self.trace(points, beta, with_derivs)?;
        self.samples(&t, points)
    }
}

/// Unpack a DPP trace into per-point samples.
pub fn samples_from_trace(t: &Trace, nd: usize) -> Vec<FieldSample> {
    let n = t.n;
    let out = &t.out;
    let (u1r, u2r) = (2, 2 + nd);
    (0..n)
        .map(|c| {
            let mut fs = FieldSample::zeros(nd);
            fs.p1 = out[[0, c]];
            fs.p2 = out[[1, c]];
            for j in 0..nd {
                fs.u1[j] = out[[u1r + j, c]];
                fs.u2[j] = out[[u2r + j, c]];
            }
            if t.blocks > 1 {
                for j in 0..nd {
                    let col = (1 + j) * n + c;
                    fs.grad_p1[j] = out[[0, col]];
                    fs.grad_p2[j] = out[[1, col]];
                    fs.div_u1 += out[[u1r + j, col]];
                    fs.div_u2 += out[[u2r + j, col]];
                }
            }
            fs
        })
        .collect()
}

/// Scatter per-point loss sensitivities into an output-gradient matrix with
/// the same layout as `trace.out`.
pub fn output_grad_from_fields(t: &Trace, nd: usize, grads: &[FieldGrad]) -> Array2<f64> {
    let n = t.n;
    let mut gy = Array2::<f64>::zeros(t.out.raw_dim());
    let (u1r, u2r) = (2, 2 + nd);
    for (c, g) in grads.iter().enumerate() {
        gy[[0, c]] = g.p1;
        gy[[1, c]] = g.p2;
        for j in 0..nd {
            gy[[u1r + j, c]] = g.u1[j];
            gy[[u2r + j, c]] = g.u2[j];
        }
        if t.blocks > 1 {
            for j in 0..nd {
                let col = (1 + j) * n + c;
                gy[[0, col]] = g.grad_p1[j];
                gy[[1, col]] = g.grad_p2[j];
                gy[[u1r + j, col]] = g.div_u1;
                gy[[u2r + j, col]] = g.div_u2;
            }
        }
    }
    gy
}
