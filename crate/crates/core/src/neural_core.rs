//! Network building blocks on the autodiff tape: a GRU cell, 3-layer MLP
//! heads producing diagonal Gaussians, reparameterized sampling, the
//! diagonal-Gaussian KL divergence and the binary weight checkpoint.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use crate::autodiff::{BoundParams, ParamId, ParamSet, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Floor applied to sampled coefficients before they enter a recursion.
pub const SAMPLE_FLOOR: f64 = 1e-8;

/// GRU hidden state.
#[derive(Debug, Clone, PartialEq)]
pub struct GruState {
    pub h: Vec<f64>,
}

impl GruState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden] }
    }
}

/// Diagonal Gaussian with plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
}

/// Diagonal Gaussian on a tape; both blocks are column vectors.
#[derive(Debug, Clone, Copy)]
pub struct GaussianVars<'t> {
    pub mu: Var<'t>,
    pub var: Var<'t>,
}

impl GaussianVars<'_> {
    pub fn values(&self) -> GaussianParams {
        GaussianParams {
            mu: self.mu.value(),
            var: self.var.value(),
        }
    }
}

fn uniform_tensor<R: Rng>(rng: &mut R, shape: Shape, fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..shape.len()).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor { shape, data }
}

/// GRU with the reset, update and candidate gates stacked in that order:
/// `W_i` is `3H × input`, `W_h` is `3H × H`.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input: usize,
    pub hidden: usize,
    w_i: ParamId,
    b_i: ParamId,
    w_h: ParamId,
    b_h: ParamId,
}

impl GruCell {
    pub fn new<R: Rng>(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let w_i = params.add(
            format!("{prefix}.w_i"),
            uniform_tensor(rng, Shape::new(3 * hidden, input), input),
        );
        let b_i = params.add(format!("{prefix}.b_i"), Tensor::zeros(Shape::col(3 * hidden)));
        let w_h = params.add(
            format!("{prefix}.w_h"),
            uniform_tensor(rng, Shape::new(3 * hidden, hidden), hidden),
        );
        let b_h = params.add(format!("{prefix}.b_h"), Tensor::zeros(Shape::col(3 * hidden)));
        Self {
            input,
            hidden,
            w_i,
            b_i,
            w_h,
            b_h,
        }
    }

    /// `r = σ(..)`, `z = σ(..)`, `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
    /// `h' = (1 − z) ⊙ n + z ⊙ h`.
    pub fn step<'t>(&self, p: &BoundParams<'t>, h: Var<'t>, x: Var<'t>) -> Result<Var<'t>> {
        if h.shape().len() != self.hidden || x.shape().len() != self.input {
            return Err(Error::ShapeMismatch(format!(
                "gru step: h {} and x {} for hidden {} input {}",
                h.shape(),
                x.shape(),
                self.hidden,
                self.input
            )));
        }
        let hh = self.hidden;
        let gi = p.var(self.w_i).matmul(&x)?.add(&p.var(self.b_i))?;
        let gh = p.var(self.w_h).matmul(&h)?.add(&p.var(self.b_h))?;
        let r = gi.slice(0, hh)?.add(&gh.slice(0, hh)?)?.sigmoid();
        let z = gi.slice(hh, hh)?.add(&gh.slice(hh, hh)?)?.sigmoid();
        let n = gi.slice(2 * hh, hh)?.add(&r.mul(&gh.slice(2 * hh, hh)?)?)?.tanh();
        let h_col = h.reshape(Shape::col(hh))?;
        n.add(&z.mul(&h_col.sub(&n)?)?)
    }
}

/// Three affine layers with ReLU between them and a sigmoid on the output,
/// which is split into a mean block and a variance block of `out_dim` each.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub input: usize,
    pub width: usize,
    pub out_dim: usize,
    layers: [(ParamId, ParamId); 3],
}

impl MlpHead {
    pub fn new<R: Rng>(
        params: &mut ParamSet,
        prefix: &str,
        input: usize,
        width: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let dims = [(input, width), (width, width), (width, 2 * out_dim)];
        let layers = std::array::from_fn(|i| {
            let (fan_in, fan_out) = dims[i];
            let w = params.add(
                format!("{prefix}.l{i}.w"),
                uniform_tensor(rng, Shape::new(fan_out, fan_in), fan_in),
            );
            let b = params.add(format!("{prefix}.l{i}.b"), uniform_tensor(rng, Shape::col(fan_out), fan_in));
            (w, b)
        });
        Self {
            input,
            width,
            out_dim,
            layers,
        }
    }

    /// Sets the output bias of the variance block, i.e. the initial
    /// variance `σ(value)` for inputs that cancel in the last layer.
    pub fn set_variance_bias(&self, params: &mut ParamSet, value: f64) {
        let b = params.get_mut(self.layers[2].1);
        b.data[self.out_dim..].iter_mut().for_each(|x| *x = value);
    }

    pub fn layer_ids(&self) -> [(ParamId, ParamId); 3] {
        self.layers
    }

    pub fn forward<'t>(&self, p: &BoundParams<'t>, input: Var<'t>) -> Result<GaussianVars<'t>> {
        if input.shape().len() != self.input {
            return Err(Error::ShapeMismatch(format!(
                "head expects {} inputs, got {}",
                self.input,
                input.shape()
            )));
        }
        let mut a = input.reshape(Shape::col(self.input))?;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            a = p.var(*w).matmul(&a)?.add(&p.var(*b))?;
            if i < 2 {
                a = a.relu();
            }
        }
        let out = a.sigmoid();
        Ok(GaussianVars {
            mu: out.slice(0, self.out_dim)?,
            var: out.slice(self.out_dim, self.out_dim)?,
        })
    }

    /// Forward on `concat(gamma_prev, h)`.
    pub fn forward_on<'t>(&self, p: &BoundParams<'t>, gamma_prev: Var<'t>, h: Var<'t>) -> Result<GaussianVars<'t>> {
        let tape = gamma_prev.tape();
        self.forward(p, tape.concat(&[gamma_prev, h])?)
    }
}

/// `μ + √var ⊙ noise`, floored at [`SAMPLE_FLOOR`].
pub fn sample_gaussian<'t>(g: &GaussianVars<'t>, noise: &[f64]) -> Result<Var<'t>> {
    let d = g.mu.shape().len();
    if noise.len() != d || g.var.shape().len() != d {
        return Err(Error::ShapeMismatch(format!(
            "sample: mu {}, var {}, noise {}",
            d,
            g.var.shape().len(),
            noise.len()
        )));
    }
    if noise.iter().all(|e| *e == 0.0) {
        return Ok(g.mu.max_const(SAMPLE_FLOOR));
    }
    let eps = g.mu.tape().column(noise);
    Ok(g.mu.add(&g.var.sqrt()?.mul(&eps)?)?.max_const(SAMPLE_FLOOR))
}

/// Plain-value form of [`sample_gaussian`].
pub fn sample_gaussian_values(g: &GaussianParams, noise: &[f64]) -> Result<Vec<f64>> {
    if noise.len() != g.mu.len() || g.var.len() != g.mu.len() {
        return Err(Error::ShapeMismatch("sample: dimension mismatch".into()));
    }
    Ok(g.mu
        .iter()
        .zip(&g.var)
        .zip(noise)
        .map(|((m, v), e)| (m + v.sqrt() * e).max(SAMPLE_FLOOR))
        .collect())
}

/// `KL(q ‖ p)` for diagonal Gaussians.
pub fn kl_diag_gauss(q: &GaussianParams, p: &GaussianParams) -> Result<f64> {
    let d = q.mu.len();
    if q.var.len() != d || p.mu.len() != d || p.var.len() != d {
        return Err(Error::ShapeMismatch("kl: dimension mismatch".into()));
    }
    if let Some(i) = q.var.iter().chain(&p.var).position(|v| !(*v > 0.0)) {
        return Err(Error::NonPositiveVariance(i % d));
    }
    Ok((0..d)
        .map(|i| {
            let dm = q.mu[i] - p.mu[i];
            0.5 * ((p.var[i] / q.var[i]).ln() + (q.var[i] + dm * dm) / p.var[i] - 1.0)
        })
        .sum())
}

/// Tape form of [`kl_diag_gauss`], summed over all entries. Inputs may be
/// stacked over many time steps.
pub fn kl_diag_gauss_var<'t>(q: &GaussianVars<'t>, p: &GaussianVars<'t>) -> Result<Var<'t>> {
    for v in [q.var, p.var] {
        if let Some(i) = v.value().iter().position(|x| !(*x > 0.0)) {
            return Err(Error::NonPositiveVariance(i));
        }
    }
    let log_ratio = p.var.log()?.sub(&q.var.log()?)?;
    let dm = q.mu.sub(&p.mu)?;
    let frac = q.var.add(&dm.square())?.div(&p.var)?;
    Ok(log_ratio.add(&frac)?.sum().offset(-(q.mu.shape().len() as f64)).scale(0.5))
}

/// Convenience for a fresh tape holding one Gaussian; used by tests and
/// callers that only need values.
pub fn gaussian_on<'t>(tape: &'t Tape, g: &GaussianParams) -> GaussianVars<'t> {
    GaussianVars {
        mu: tape.column(&g.mu),
        var: tape.column(&g.var),
    }
}

/// Checkpoint layout, all integers little-endian:
///
/// ```text
/// magic      4 bytes  "NGCK"
/// version    u8       CHECKPOINT_VERSION
/// meta_len   u32      byte length of the metadata block
/// meta       UTF-8    "key=value" lines
/// n_tensors  u32
/// per tensor:
///   name_len u32, name UTF-8, rows u32, cols u32, rows·cols f64 row-major
/// ```
pub mod checkpoint {
    use super::*;

    pub const MAGIC: &[u8; 4] = b"NGCK";
    pub const CHECKPOINT_VERSION: u8 = 1;

    pub fn write<W: Write>(mut w: W, meta: &BTreeMap<String, String>, params: &ParamSet) -> Result<()> {
        let meta_text: String = meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        w.write_all(MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        w.write_all(&(meta_text.len() as u32).to_le_bytes())?;
        w.write_all(meta_text.as_bytes())?;
        w.write_all(&(params.len() as u32).to_le_bytes())?;
        for (name, t) in params.names().iter().zip(params.tensors()) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.shape.rows as u32).to_le_bytes())?;
            w.write_all(&(t.shape.cols as u32).to_le_bytes())?;
            for x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(truncated)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
        let mut b = vec![0u8; len];
        r.read_exact(&mut b).map_err(truncated)?;
        String::from_utf8(b).map_err(|_| Error::Artifact("checkpoint text is not UTF-8".into()))
    }

    fn truncated(_: std::io::Error) -> Error {
        Error::Artifact("checkpoint truncated".into())
    }

    pub fn read<R: Read>(mut r: R) -> Result<(BTreeMap<String, String>, ParamSet)> {
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic[..4] != MAGIC {
            return Err(Error::Artifact("not a checkpoint (bad magic)".into()));
        }
        if magic[4] != CHECKPOINT_VERSION {
            return Err(Error::Artifact(format!("unsupported checkpoint version {}", magic[4])));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let meta_text = read_string(&mut r, meta_len)?;
        let mut meta = BTreeMap::new();
        for line in meta_text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Artifact(format!("bad metadata line '{line}'")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let n = read_u32(&mut r)?;
        let mut params = ParamSet::new();
        for _ in 0..n {
            let name_len = read_u32(&mut r)? as usize;
            let name = read_string(&mut r, name_len)?;
            let rows = read_u32(&mut r)? as usize;
            let cols = read_u32(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut b = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut b).map_err(truncated)?;
                data.push(f64::from_le_bytes(b));
            }
            params.add(name, Tensor::new(Shape::new(rows, cols), data)?);
        }
        Ok((meta, params))
    }
}
