//! The three trainable components: a point-wise denoiser
//! eps(x_t, t, z), a permutation-invariant latent encoder, and an
//! affine-coupling flow prior over the latent.
//!
//! Each network stores plain tensors and offers two forward paths: a
//! tape-bound one used while training (gradients flow to parameters
//! and to z) and a plain one for inference. Both compose the same
//! tensor kernels, so their outputs agree bitwise.

use crate::autodiff::{Tape, Var};
use crate::cloud::PointCloud;
use crate::diffusion::{Denoise, DenoiseEval};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{softplus, Tensor};

const LOG_VAR_CLAMP: f64 = 10.0;

/// Architecture hyper-parameters shared by all three networks.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub latent_dim: usize,
    pub denoiser_width: usize,
    pub denoiser_layers: usize,
    pub time_embed_dim: usize,
    pub encoder_hidden: (usize, usize),
    pub flow_layers: usize,
    pub flow_width: usize,
    pub flow_scale_max: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            latent_dim: 64,
            denoiser_width: 128,
            denoiser_layers: 4,
            time_embed_dim: 64,
            encoder_hidden: (128, 256),
            flow_layers: 6,
            flow_width: 128,
            flow_scale_max: 5.0,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return Err(Error::InvalidParam {
                name: "time_embed_dim",
                message: format!("must be even and >= 2, got {}", self.time_embed_dim),
            });
        }
        for (name, v) in [
            ("latent_dim", self.latent_dim),
            ("denoiser_width", self.denoiser_width),
            ("denoiser_layers", self.denoiser_layers),
            ("encoder_hidden.0", self.encoder_hidden.0),
            ("encoder_hidden.1", self.encoder_hidden.1),
            ("flow_layers", self.flow_layers),
            ("flow_width", self.flow_width),
        ] {
            if v == 0 {
                return Err(Error::InvalidParam {
                    name,
                    message: "must be positive".into(),
                });
            }
        }
        if self.flow_scale_max <= 0.0 {
            return Err(Error::InvalidParam {
                name: "flow_scale_max",
                message: "must be positive".into(),
            });
        }
        Ok(())
    }
}

/// A dense layer: `y = x W + b` with `W: [in x out]`, `b: [1 x out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Tensor,
    pub b: Tensor,
}

impl Linear {
    /// Uniform fan-in initialization in [-1/sqrt(in), 1/sqrt(in)].
    fn init(fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let limit = 1.0 / (fan_in as f64).sqrt();
        Linear {
            w: Tensor::rand_uniform(vec![fan_in, fan_out], limit, rng),
            b: Tensor::rand_uniform(vec![1, fan_out], limit, rng),
        }
    }

    fn init_zero(fan_in: usize, fan_out: usize) -> Self {
        Linear {
            w: Tensor::zeros(vec![fan_in, fan_out]),
            b: Tensor::zeros(vec![1, fan_out]),
        }
    }

    fn forward_plain(&self, x: &Tensor) -> Tensor {
        let rows = x.dims2().0;
        let prod = x.matmul(&self.w).expect("layer shapes fixed at init");
        prod.add(&self.b.repeat_rows(rows).expect("bias is a row"))
            .expect("same shape")
    }
}

struct LinearVars<'t> {
    w: Var<'t>,
    b: Var<'t>,
}

impl<'t> LinearVars<'t> {
    fn bind(tape: &'t Tape, layer: &Linear) -> Self {
        LinearVars {
            w: tape.var(layer.w.clone()),
            b: tape.var(layer.b.clone()),
        }
    }

    fn forward(&self, x: Var<'t>) -> Result<Var<'t>> {
        let rows = x.shape()[0];
        x.matmul(self.w)?.add(self.b.repeat_rows(rows)?)
    }
}

/// Sinusoidal embedding of integer timesteps; `ts` holds one shared
/// value or one per row.
pub fn time_embedding(ts: &[usize], rows: usize, dim: usize) -> Tensor {
    debug_assert!(ts.len() == 1 || ts.len() == rows);
    let mut out = Tensor::zeros(vec![rows, dim]);
    let half = dim / 2;
    for i in 0..rows {
        let t = ts[if ts.len() == 1 { 0 } else { i }] as f64;
        for k in 0..half {
            let freq = (-2.0 * k as f64 / dim as f64 * 10_000f64.ln()).exp();
            out.data_mut()[i * dim + 2 * k] = (t * freq).sin();
            out.data_mut()[i * dim + 2 * k + 1] = (t * freq).cos();
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

/// Point-wise noise predictor. Each point's output depends only on its
/// own coordinates, the timestep embedding and the shape latent, so
/// the map is permutation-equivariant by construction. Every hidden
/// layer re-reads the (embedding, latent, coordinates) context.
#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser {
    layers: Vec<Linear>,
    out: Linear,
    latent_dim: usize,
    time_embed_dim: usize,
}

impl Denoiser {
    pub fn init(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let ctx = cfg.time_embed_dim + cfg.latent_dim + 3;
        let mut layers = Vec::with_capacity(cfg.denoiser_layers);
        for i in 0..cfg.denoiser_layers {
            let fan_in = if i == 0 { ctx } else { cfg.denoiser_width + ctx };
            layers.push(Linear::init(fan_in, cfg.denoiser_width, rng));
        }
        Denoiser {
            layers,
            out: Linear::init_zero(cfg.denoiser_width, 3),
            latent_dim: cfg.latent_dim,
            time_embed_dim: cfg.time_embed_dim,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("denoiser.layer{i}.w"), &l.w));
            out.push((format!("denoiser.layer{i}.b"), &l.b));
        }
        out.push(("denoiser.out.w".into(), &self.out.w));
        out.push(("denoiser.out.b".into(), &self.out.b));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("denoiser.layer{i}.w"), &mut l.w));
            out.push((format!("denoiser.layer{i}.b"), &mut l.b));
        }
        out.push(("denoiser.out.w".into(), &mut self.out.w));
        out.push(("denoiser.out.b".into(), &mut self.out.b));
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> DenoiserVars<'t> {
        DenoiserVars {
            layers: self.layers.iter().map(|l| LinearVars::bind(tape, l)).collect(),
            out: LinearVars::bind(tape, &self.out),
            time_embed_dim: self.time_embed_dim,
        }
    }

    /// Inference-path forward; `z` has the configured latent
    /// dimension.
    pub fn forward_plain(&self, xt: &Tensor, ts: &[usize], z: &[f64]) -> Tensor {
        let n = xt.dims2().0;
        let temb = time_embedding(ts, n, self.time_embed_dim);
        let ztile = Tensor::row(z).repeat_rows(n).expect("z is a row");
        let ctx = temb
            .concat_cols(&ztile)
            .and_then(|c| c.concat_cols(xt))
            .expect("row counts match");
        let mut h: Option<Tensor> = None;
        for layer in &self.layers {
            let input = match &h {
                None => ctx.clone(),
                Some(prev) => prev.concat_cols(&ctx).expect("row counts match"),
            };
            h = Some(layer.forward_plain(&input).map(softplus));
        }
        self.out.forward_plain(&h.expect("at least one layer"))
    }
}

impl DenoiseEval for Denoiser {
    fn eps_hat_eval(&self, xt: &Tensor, t: usize, z: &[f64]) -> Tensor {
        self.forward_plain(xt, &[t], z)
    }
}

/// Tape-bound denoiser parameters.
pub struct DenoiserVars<'t> {
    layers: Vec<LinearVars<'t>>,
    out: LinearVars<'t>,
    time_embed_dim: usize,
}

impl<'t> DenoiserVars<'t> {
    pub fn forward(&self, xt: Var<'t>, ts: &[usize], z: Var<'t>) -> Result<Var<'t>> {
        let tape = xt.tape();
        let n = xt.shape()[0];
        let temb = tape.constant(time_embedding(ts, n, self.time_embed_dim));
        let ztile = z.repeat_rows(n)?;
        let ctx = temb.concat_cols(ztile)?.concat_cols(xt)?;
        let mut h: Option<Var<'t>> = None;
        for layer in &self.layers {
            let input = match h {
                None => ctx,
                Some(prev) => prev.concat_cols(ctx)?,
            };
            h = Some(layer.forward(input)?.softplus());
        }
        self.out.forward(h.expect("at least one layer"))
    }

    /// Parameter vars in `named_params` order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.w);
            out.push(l.b);
        }
        out.push(self.out.w);
        out.push(self.out.b);
        out
    }
}

impl<'t> Denoise<'t> for DenoiserVars<'t> {
    fn eps_hat(&self, xt: Var<'t>, ts: &[usize], z: Var<'t>) -> Result<Var<'t>> {
        self.forward(xt, ts, z)
    }
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

/// Gaussian posterior over the shape latent.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl GaussianLatent {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Reparameterized draw z = mean + exp(log_var / 2) * eta.
pub fn sample_latent(g: &GaussianLatent, rng: &mut Rng) -> Vec<f64> {
    g.mean
        .data()
        .iter()
        .zip(g.log_var.data())
        .map(|(&m, &lv)| m + (lv / 2.0).exp() * rng.normal())
        .collect()
}

/// Tape-mode reparameterized draw; gradients flow into mean/log_var.
pub fn sample_latent_var<'t>(
    mean: Var<'t>,
    log_var: Var<'t>,
    rng: &mut Rng,
) -> Result<Var<'t>> {
    let d = mean.shape().iter().product();
    let mut eta = Tensor::zeros(vec![1, d]);
    rng.fill_normal(eta.data_mut());
    let eta = mean.tape().constant(eta);
    mean.add(log_var.scale(0.5).exp().mul(eta)?)
}

/// Shared per-point MLP, max-pool over points, then mean and
/// log-variance heads. Permutation-invariant by the pooling.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    mlp1: Linear,
    mlp2: Linear,
    mean_head: Linear,
    log_var_head: Linear,
}

impl Encoder {
    pub fn init(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let (h1, h2) = cfg.encoder_hidden;
        Encoder {
            mlp1: Linear::init(3, h1, rng),
            mlp2: Linear::init(h1, h2, rng),
            mean_head: Linear::init(h2, cfg.latent_dim, rng),
            log_var_head: Linear::init(h2, cfg.latent_dim, rng),
        }
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("encoder.mlp1.w".into(), &self.mlp1.w),
            ("encoder.mlp1.b".into(), &self.mlp1.b),
            ("encoder.mlp2.w".into(), &self.mlp2.w),
            ("encoder.mlp2.b".into(), &self.mlp2.b),
            ("encoder.mean.w".into(), &self.mean_head.w),
            ("encoder.mean.b".into(), &self.mean_head.b),
            ("encoder.logvar.w".into(), &self.log_var_head.w),
            ("encoder.logvar.b".into(), &self.log_var_head.b),
        ]
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("encoder.mlp1.w".into(), &mut self.mlp1.w),
            ("encoder.mlp1.b".into(), &mut self.mlp1.b),
            ("encoder.mlp2.w".into(), &mut self.mlp2.w),
            ("encoder.mlp2.b".into(), &mut self.mlp2.b),
            ("encoder.mean.w".into(), &mut self.mean_head.w),
            ("encoder.mean.b".into(), &mut self.mean_head.b),
            ("encoder.logvar.w".into(), &mut self.log_var_head.w),
            ("encoder.logvar.b".into(), &mut self.log_var_head.b),
        ]
    }

    /// Encodes a cloud into the latent posterior (inference path).
    pub fn encode(&self, x0: &PointCloud) -> GaussianLatent {
        let x = x0.to_tensor();
        let h1 = self.mlp1.forward_plain(&x).map(softplus);
        let h2 = self.mlp2.forward_plain(&h1).map(softplus);
        let (pooled, _) = h2.max_axis(0).expect("non-empty cloud");
        let pooled = pooled
            .reshape(vec![1, pooled.len()])
            .expect("same element count");
        let mean = self.mean_head.forward_plain(&pooled);
        let log_var = self
            .log_var_head
            .forward_plain(&pooled)
            .clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP);
        GaussianLatent { mean, log_var }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> EncoderVars<'t> {
        EncoderVars {
            mlp1: LinearVars::bind(tape, &self.mlp1),
            mlp2: LinearVars::bind(tape, &self.mlp2),
            mean_head: LinearVars::bind(tape, &self.mean_head),
            log_var_head: LinearVars::bind(tape, &self.log_var_head),
        }
    }
}

pub struct EncoderVars<'t> {
    mlp1: LinearVars<'t>,
    mlp2: LinearVars<'t>,
    mean_head: LinearVars<'t>,
    log_var_head: LinearVars<'t>,
}

impl<'t> EncoderVars<'t> {
    /// Returns (mean, log_var) as `[1 x d]` vars.
    pub fn forward(&self, x0: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let h1 = self.mlp1.forward(x0)?.softplus();
        let h2 = self.mlp2.forward(h1)?.softplus();
        let pooled = h2.max_axis(0)?;
        let d = pooled.shape().iter().product();
        let pooled = pooled.reshape(vec![1, d])?;
        let mean = self.mean_head.forward(pooled)?;
        let log_var = self
            .log_var_head
            .forward(pooled)?
            .clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP);
        Ok((mean, log_var))
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        vec![
            self.mlp1.w,
            self.mlp1.b,
            self.mlp2.w,
            self.mlp2.b,
            self.mean_head.w,
            self.mean_head.b,
            self.log_var_head.w,
            self.log_var_head.b,
        ]
    }
}

// ---------------------------------------------------------------------------
// Flow prior
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
struct Coupling {
    scale1: Linear,
    scale2: Linear,
    translate1: Linear,
    translate2: Linear,
    /// 1.0 marks coordinates kept fixed (and fed to the subnets).
    mask: Vec<f64>,
}

/// Stack of affine coupling layers forming a bijection on the latent
/// space. Zero-initialized subnet output layers make the initial map
/// the identity with zero log-determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPrior {
    layers: Vec<Coupling>,
    scale_max: f64,
    dim: usize,
}

impl FlowPrior {
    pub fn init(cfg: &NetConfig, rng: &mut Rng) -> Self {
        let d = cfg.latent_dim;
        let mut layers = Vec::with_capacity(cfg.flow_layers);
        for k in 0..cfg.flow_layers {
            let mask: Vec<f64> = (0..d)
                .map(|j| if j % 2 == k % 2 { 1.0 } else { 0.0 })
                .collect();
            layers.push(Coupling {
                scale1: Linear::init(d, cfg.flow_width, rng),
                scale2: Linear::init_zero(cfg.flow_width, d),
                translate1: Linear::init(d, cfg.flow_width, rng),
                translate2: Linear::init_zero(cfg.flow_width, d),
                mask,
            });
        }
        FlowPrior {
            layers,
            scale_max: cfg.flow_scale_max,
            dim: d,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.layers.iter().enumerate() {
            out.push((format!("flow.layer{i}.scale1.w"), &c.scale1.w));
            out.push((format!("flow.layer{i}.scale1.b"), &c.scale1.b));
            out.push((format!("flow.layer{i}.scale2.w"), &c.scale2.w));
            out.push((format!("flow.layer{i}.scale2.b"), &c.scale2.b));
            out.push((format!("flow.layer{i}.translate1.w"), &c.translate1.w));
            out.push((format!("flow.layer{i}.translate1.b"), &c.translate1.b));
            out.push((format!("flow.layer{i}.translate2.w"), &c.translate2.w));
            out.push((format!("flow.layer{i}.translate2.b"), &c.translate2.b));
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (i, c) in self.layers.iter_mut().enumerate() {
            out.push((format!("flow.layer{i}.scale1.w"), &mut c.scale1.w));
            out.push((format!("flow.layer{i}.scale1.b"), &mut c.scale1.b));
            out.push((format!("flow.layer{i}.scale2.w"), &mut c.scale2.w));
            out.push((format!("flow.layer{i}.scale2.b"), &mut c.scale2.b));
            out.push((format!("flow.layer{i}.translate1.w"), &mut c.translate1.w));
            out.push((format!("flow.layer{i}.translate1.b"), &mut c.translate1.b));
            out.push((format!("flow.layer{i}.translate2.w"), &mut c.translate2.w));
            out.push((format!("flow.layer{i}.translate2.b"), &mut c.translate2.b));
        }
        out
    }

    fn subnet_plain(l1: &Linear, l2: &Linear, u: &Tensor) -> Tensor {
        l2.forward_plain(&l1.forward_plain(u).map(softplus))
    }

    /// Maps base noise w to a latent z, returning ln |det dF/dw|.
    pub fn forward(&self, w: &[f64]) -> (Vec<f64>, f64) {
        let mut x = Tensor::row(w);
        let mut log_det = 0.0;
        for c in &self.layers {
            let mask = Tensor::row(&c.mask);
            let inv_mask = mask.map(|m| 1.0 - m);
            let u = x.mul(&mask).expect("same shape");
            let s_raw = Self::subnet_plain(&c.scale1, &c.scale2, &u);
            let s = s_raw
                .map(|v| v.tanh() * self.scale_max)
                .mul(&inv_mask)
                .expect("same shape");
            let t = Self::subnet_plain(&c.translate1, &c.translate2, &u)
                .mul(&inv_mask)
                .expect("same shape");
            log_det += s.sum_value();
            let scaled = x
                .mul(&s.map(f64::exp))
                .and_then(|v| v.add(&t))
                .and_then(|v| v.mul(&inv_mask))
                .expect("same shape");
            x = u.add(&scaled).expect("same shape");
        }
        (x.into_data(), log_det)
    }

    /// Exact inverse of [`FlowPrior::forward`], returning
    /// ln |det dF^-1/dz| (the negated forward log-det at the
    /// corresponding w).
    pub fn inverse(&self, z: &[f64]) -> (Vec<f64>, f64) {
        let mut y = Tensor::row(z);
        let mut log_det_inv = 0.0;
        for c in self.layers.iter().rev() {
            let mask = Tensor::row(&c.mask);
            let inv_mask = mask.map(|m| 1.0 - m);
            let u = y.mul(&mask).expect("same shape");
            let s_raw = Self::subnet_plain(&c.scale1, &c.scale2, &u);
            let s = s_raw
                .map(|v| v.tanh() * self.scale_max)
                .mul(&inv_mask)
                .expect("same shape");
            let t = Self::subnet_plain(&c.translate1, &c.translate2, &u)
                .mul(&inv_mask)
                .expect("same shape");
            log_det_inv -= s.sum_value();
            let unscaled = y
                .sub(&t)
                .and_then(|v| v.mul(&s.map(|sv| (-sv).exp())))
                .and_then(|v| v.mul(&inv_mask))
                .expect("same shape");
            y = u.add(&unscaled).expect("same shape");
        }
        (y.into_data(), log_det_inv)
    }

    /// Exact log-density of the flow prior at z:
    /// log p(z) = log N(F^-1(z); 0, I) + ln |det dF^-1/dz|.
    pub fn prior_logp(&self, z: &[f64]) -> f64 {
        let (w, log_det_inv) = self.inverse(z);
        standard_normal_logp(&w) + log_det_inv
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> FlowVars<'t> {
        FlowVars {
            layers: self
                .layers
                .iter()
                .map(|c| CouplingVars {
                    scale1: LinearVars::bind(tape, &c.scale1),
                    scale2: LinearVars::bind(tape, &c.scale2),
                    translate1: LinearVars::bind(tape, &c.translate1),
                    translate2: LinearVars::bind(tape, &c.translate2),
                    mask: c.mask.clone(),
                })
                .collect(),
            scale_max: self.scale_max,
        }
    }
}

pub fn standard_normal_logp(w: &[f64]) -> f64 {
    let d = w.len() as f64;
    let sq: f64 = w.iter().map(|v| v * v).sum();
    -0.5 * d * (std::f64::consts::TAU).ln() - 0.5 * sq
}

struct CouplingVars<'t> {
    scale1: LinearVars<'t>,
    scale2: LinearVars<'t>,
    translate1: LinearVars<'t>,
    translate2: LinearVars<'t>,
    mask: Vec<f64>,
}

pub struct FlowVars<'t> {
    layers: Vec<CouplingVars<'t>>,
    scale_max: f64,
}

impl<'t> FlowVars<'t> {
    fn subnet(l1: &LinearVars<'t>, l2: &LinearVars<'t>, u: Var<'t>) -> Result<Var<'t>> {
        l2.forward(l1.forward(u)?.softplus())
    }

    /// Tape-mode inverse pass, for the latent prior term of the
    /// training objective. Returns (w, ln |det dF^-1/dz|).
    pub fn inverse(&self, z: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let tape = z.tape();
        let mut y = z;
        let mut log_det_inv = tape.scalar(0.0);
        for c in self.layers.iter().rev() {
            let mask = tape.constant(Tensor::row(&c.mask));
            let inv_mask = tape.constant(Tensor::row(&c.mask).map(|m| 1.0 - m));
            let u = y.mul(mask)?;
            let s = Self::subnet(&c.scale1, &c.scale2, u)?
                .tanh()
                .scale(self.scale_max)
                .mul(inv_mask)?;
            let t = Self::subnet(&c.translate1, &c.translate2, u)?.mul(inv_mask)?;
            log_det_inv = log_det_inv.sub(s.sum_all())?;
            let unscaled = y.sub(t)?.mul(s.neg().exp())?.mul(inv_mask)?;
            y = u.add(unscaled)?;
        }
        Ok((y, log_det_inv))
    }

    /// Tape-mode log p(z) under the flow prior.
    pub fn prior_logp(&self, z: Var<'t>) -> Result<Var<'t>> {
        let d: usize = z.shape().iter().product();
        let (w, log_det_inv) = self.inverse(z)?;
        let norm = -0.5 * d as f64 * (std::f64::consts::TAU).ln();
        w.square()
            .sum_all()
            .scale(-0.5)
            .add_scalar(norm)
            .add(log_det_inv)
    }

    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = Vec::new();
        for c in &self.layers {
            out.push(c.scale1.w);
            out.push(c.scale1.b);
            out.push(c.scale2.w);
            out.push(c.scale2.b);
            out.push(c.translate1.w);
            out.push(c.translate1.b);
            out.push(c.translate2.w);
            out.push(c.translate2.b);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> NetConfig {
        NetConfig {
            latent_dim: 4,
            denoiser_width: 8,
            denoiser_layers: 2,
            time_embed_dim: 6,
            encoder_hidden: (8, 12),
            flow_layers: 4,
            flow_width: 8,
            flow_scale_max: 5.0,
        }
    }

    #[test]
    fn zero_initialized_output_layer_gives_zero_eps() {
        let cfg = small_cfg();
        let den = Denoiser::init(&cfg, &mut Rng::new(1));
        let xt = Tensor::randn(vec![5, 3], &mut Rng::new(2));
        let z = vec![0.3; cfg.latent_dim];
        let eps = den.forward_plain(&xt, &[3], &z);
        assert!(eps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn denoiser_is_permutation_equivariant() {
        let cfg = small_cfg();
        let mut den = Denoiser::init(&cfg, &mut Rng::new(1));
        // non-trivial output layer
        den.out = Linear::init(cfg.denoiser_width, 3, &mut Rng::new(9));
        let xt = Tensor::randn(vec![6, 3], &mut Rng::new(2));
        let z = vec![0.1; cfg.latent_dim];
        let fwd = den.forward_plain(&xt, &[2], &z);

        // reverse the rows
        let mut rev = Tensor::zeros(vec![6, 3]);
        for i in 0..6 {
            for a in 0..3 {
                rev.data_mut()[i * 3 + a] = xt.data()[(5 - i) * 3 + a];
            }
        }
        let fwd_rev = den.forward_plain(&rev, &[2], &z);
        for i in 0..6 {
            for a in 0..3 {
                assert_eq!(fwd_rev.data()[i * 3 + a], fwd.data()[(5 - i) * 3 + a]);
            }
        }
    }

    #[test]
    fn tape_and_plain_forward_agree_bitwise() {
        let cfg = small_cfg();
        let mut den = Denoiser::init(&cfg, &mut Rng::new(1));
        den.out = Linear::init(cfg.denoiser_width, 3, &mut Rng::new(9));
        let xt = Tensor::randn(vec![4, 3], &mut Rng::new(2));
        let z: Vec<f64> = (0..cfg.latent_dim).map(|i| 0.1 * i as f64).collect();

        let plain = den.forward_plain(&xt, &[2], &z);
        let tape = Tape::new();
        let xt_v = tape.constant(xt.clone());
        let z_v = tape.constant(Tensor::row(&z));
        let eps = den.bind(&tape).forward(xt_v, &[2], z_v).unwrap();
        assert_eq!(eps.value().data(), plain.data());
    }

    #[test]
    fn encoder_permutation_and_duplication_invariance() {
        let cfg = small_cfg();
        let enc = Encoder::init(&cfg, &mut Rng::new(3));
        let pts = vec![
            [0.1, 0.2, 0.3],
            [-0.4, 0.5, -0.6],
            [0.7, -0.8, 0.9],
        ];
        let base = enc.encode(&PointCloud::new(pts.clone()).unwrap());

        let mut perm = pts.clone();
        perm.rotate_left(2);
        let enc_perm = enc.encode(&PointCloud::new(perm).unwrap());
        assert_eq!(base.mean.data(), enc_perm.mean.data());
        assert_eq!(base.log_var.data(), enc_perm.log_var.data());

        let mut doubled = pts.clone();
        doubled.extend_from_slice(&pts);
        let enc_dup = enc.encode(&PointCloud::new(doubled).unwrap());
        assert_eq!(base.mean.data(), enc_dup.mean.data());
        assert_eq!(base.log_var.data(), enc_dup.log_var.data());
    }

    #[test]
    fn latent_sampling_collapses_at_tiny_variance() {
        let g = GaussianLatent {
            mean: Tensor::row(&[0.5, -1.0]),
            log_var: Tensor::row(&[-40.0, -40.0]),
        };
        let z = sample_latent(&g, &mut Rng::new(4));
        assert!((z[0] - 0.5).abs() < 1e-8);
        assert!((z[1] + 1.0).abs() < 1e-8);
    }

    #[test]
    fn identity_initialized_flow() {
        let cfg = small_cfg();
        let flow = FlowPrior::init(&cfg, &mut Rng::new(5));
        let w = vec![0.3, -0.7, 1.1, 0.0];
        let (z, log_det) = flow.forward(&w);
        assert_eq!(z, w);
        assert_eq!(log_det, 0.0);
        let (w2, log_det_inv) = flow.inverse(&w);
        assert_eq!(w2, w);
        assert_eq!(log_det_inv, 0.0);
    }

    #[test]
    fn identity_flow_prior_matches_standard_normal() {
        let cfg = NetConfig {
            latent_dim: 2,
            ..small_cfg()
        };
        let flow = FlowPrior::init(&cfg, &mut Rng::new(5));
        // at the origin: -ln(2 pi) for d = 2
        let at_origin = flow.prior_logp(&[0.0, 0.0]);
        assert!((at_origin + (std::f64::consts::TAU).ln()).abs() < 1e-12);
        assert!((at_origin + 1.8379).abs() < 1e-4);
        // random z: matches the closed form
        let mut rng = Rng::new(6);
        for _ in 0..20 {
            let z = [rng.normal(), rng.normal()];
            let expect = standard_normal_logp(&z);
            assert!((flow.prior_logp(&z) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = NetConfig::default();
        cfg.time_embed_dim = 5;
        assert!(cfg.validate().is_err());
        cfg.time_embed_dim = 64;
        cfg.latent_dim = 0;
        assert!(cfg.validate().is_err());
    }
}
