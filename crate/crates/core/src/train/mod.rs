//! Training for the generator and auto-encoder objectives, plus the
//! sampling procedures that run on trained checkpoints.
//!
//! The generator objective combines the one-term stochastic diffusion
//! loss with a latent term: the KL between the encoder posterior and
//! the flow prior, estimated with a single reparameterized draw as
//! -log p(z) minus the closed-form diagonal-Gaussian entropy. The
//! auto-encoder objective conditions the denoiser on the encoder mean
//! directly and has no latent term. Both share the same diffusion-term
//! code path and rng substream labels, so they coincide exactly when
//! the latent collapses to its mean.

mod checkpoint;
mod sample;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use sample::{decode_cloud, generate, interpolate, reconstruct};

use std::io::Write;
use std::time::Instant;

use crate::autodiff::{Tape, Var};
use crate::cloud::PointCloud;
use crate::config::{TrainConfig, TrainMode};
use crate::diffusion::{simplified_step_loss, DiffusionSchedule, StepLossOptions};
use crate::error::{Error, Result};
use crate::nets::{sample_latent_var, Denoiser, DenoiserVars, Encoder, EncoderVars, FlowPrior, FlowVars};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Divergence guard: a loss above this aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// First- and second-moment Adam state, aligned with the model's
/// named-parameter order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    fn zeros_like(params: &[(String, &Tensor)]) -> Self {
        AdamState {
            t: 0,
            m: params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.shape().to_vec()))
                .collect(),
            v: params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.shape().to_vec()))
                .collect(),
        }
    }
}

/// A complete trainable model: networks, schedule, optimizer state and
/// the training stream.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub sched: DiffusionSchedule,
    pub denoiser: Denoiser,
    pub encoder: Encoder,
    pub flow: Option<FlowPrior>,
    pub step: u64,
    pub run_rng: Rng,
    pub adam: AdamState,
}

impl Model {
    /// Fresh model from a config; deterministic in `config.seed`.
    pub fn init(config: TrainConfig) -> Result<Model> {
        config.validate()?;
        let sched = DiffusionSchedule::linear(config.t_steps, config.beta_start, config.beta_end)?;
        let init_rng = Rng::new(config.seed).derive("init");
        let denoiser = Denoiser::init(&config.nets, &mut init_rng.derive("denoiser"));
        let encoder = Encoder::init(&config.nets, &mut init_rng.derive("encoder"));
        let flow = match config.mode {
            TrainMode::Generator => Some(FlowPrior::init(&config.nets, &mut init_rng.derive("flow"))),
            TrainMode::Autoencoder => None,
        };
        let run_rng = Rng::new(config.seed).derive("train");
        let mut model = Model {
            config,
            sched,
            denoiser,
            encoder,
            flow,
            step: 0,
            run_rng,
            adam: AdamState { t: 0, m: vec![], v: vec![] },
        };
        model.adam = AdamState::zeros_like(&model.named_params());
        Ok(model)
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.denoiser.named_params();
        out.extend(self.encoder.named_params());
        if let Some(flow) = &self.flow {
            out.extend(flow.named_params());
        }
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.denoiser.named_params_mut();
        out.extend(self.encoder.named_params_mut());
        if let Some(flow) = &mut self.flow {
            out.extend(flow.named_params_mut());
        }
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> ModelVars<'t> {
        ModelVars {
            denoiser: self.denoiser.bind(tape),
            encoder: self.encoder.bind(tape),
            flow: self.flow.as_ref().map(|f| f.bind(tape)),
        }
    }
}

/// Tape-bound parameters of all networks, in `named_params` order.
pub struct ModelVars<'t> {
    pub denoiser: DenoiserVars<'t>,
    pub encoder: EncoderVars<'t>,
    pub flow: Option<FlowVars<'t>>,
}

impl<'t> ModelVars<'t> {
    pub fn vars(&self) -> Vec<Var<'t>> {
        let mut out = self.denoiser.vars();
        out.extend(self.encoder.vars());
        if let Some(flow) = &self.flow {
            out.extend(flow.vars());
        }
        out
    }
}

/// Scalar loss with its per-term breakdown and drawn timesteps.
pub struct LossParts<'t> {
    pub total: Var<'t>,
    pub diffusion: Var<'t>,
    pub latent: Option<Var<'t>>,
    pub ts: Vec<usize>,
}

fn batch_mean<'t>(tape: &'t Tape, terms: &[Var<'t>]) -> Result<Var<'t>> {
    let mut acc = terms[0];
    for t in &terms[1..] {
        acc = acc.add(*t)?;
    }
    let _ = tape;
    Ok(acc.scale(1.0 / terms.len() as f64))
}

/// Closed-form entropy of the diagonal Gaussian with the given
/// log-variances: 0.5 * sum(1 + ln(2 pi) + log_var).
fn gaussian_entropy<'t>(log_var: Var<'t>) -> Result<Var<'t>> {
    let d: usize = log_var.shape().iter().product();
    let base = 0.5 * d as f64 * (1.0 + std::f64::consts::TAU.ln());
    Ok(log_var.sum_all().scale(0.5).add_scalar(base))
}

/// Generator objective over a batch: per cloud, encode, draw a
/// reparameterized latent, take the one-term diffusion loss, and add
/// the latent term -log p(z) - H[q]; everything batch-averaged and
/// the latent term scaled by the configured kl weight.
pub fn generator_loss<'t>(
    tape: &'t Tape,
    batch: &[&PointCloud],
    vars: &ModelVars<'t>,
    sched: &DiffusionSchedule,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<LossParts<'t>> {
    let flow = vars.flow.as_ref().ok_or_else(|| Error::ModeMismatch {
        expected: "generator".into(),
        found: "autoencoder".into(),
    })?;
    let opts = StepLossOptions {
        per_point_t: config.per_point_t,
        t_scaled: config.t_scaled_loss,
    };
    let mut diff_terms = Vec::with_capacity(batch.len());
    let mut latent_terms = Vec::with_capacity(batch.len());
    let mut ts = Vec::new();
    for (i, x0) in batch.iter().enumerate() {
        let cloud_rng = rng.derive_index(i as u64);
        let (mean, log_var) = vars.encoder.forward(tape.constant(x0.to_tensor()))?;
        let z = sample_latent_var(mean, log_var, &mut cloud_rng.derive("latent"))?;
        let step = simplified_step_loss(
            tape,
            x0,
            z,
            &vars.denoiser,
            sched,
            opts,
            &mut cloud_rng.derive("diffusion"),
        )?;
        diff_terms.push(step.loss);
        ts.extend(step.ts);
        let log_p = flow.prior_logp(z)?;
        let entropy = gaussian_entropy(log_var)?;
        latent_terms.push(log_p.neg().sub(entropy)?);
    }
    let diffusion = batch_mean(tape, &diff_terms)?;
    let latent = batch_mean(tape, &latent_terms)?;
    let total = diffusion.add(latent.scale(config.kl_weight))?;
    Ok(LossParts {
        total,
        diffusion,
        latent: Some(latent),
        ts,
    })
}

/// Auto-encoder objective: the denoiser is conditioned on the encoder
/// mean directly; no latent sampling, prior, or KL term.
pub fn autoencoder_loss<'t>(
    tape: &'t Tape,
    batch: &[&PointCloud],
    vars: &ModelVars<'t>,
    sched: &DiffusionSchedule,
    config: &TrainConfig,
    rng: &Rng,
) -> Result<LossParts<'t>> {
    let opts = StepLossOptions {
        per_point_t: config.per_point_t,
        t_scaled: config.t_scaled_loss,
    };
    let mut diff_terms = Vec::with_capacity(batch.len());
    let mut ts = Vec::new();
    for (i, x0) in batch.iter().enumerate() {
        let cloud_rng = rng.derive_index(i as u64);
        let (mean, _log_var) = vars.encoder.forward(tape.constant(x0.to_tensor()))?;
        let step = simplified_step_loss(
            tape,
            x0,
            mean,
            &vars.denoiser,
            sched,
            opts,
            &mut cloud_rng.derive("diffusion"),
        )?;
        diff_terms.push(step.loss);
        ts.extend(step.ts);
    }
    let diffusion = batch_mean(tape, &diff_terms)?;
    Ok(LossParts {
        total: diffusion,
        diffusion,
        latent: None,
        ts,
    })
}

fn adam_update(model: &mut Model, grads: &[Tensor], lr: f64) {
    model.adam.t += 1;
    let t = model.adam.t;
    let bias1 = 1.0 - ADAM_BETA1.powi(t as i32);
    let bias2 = 1.0 - ADAM_BETA2.powi(t as i32);
    let adam = &mut model.adam;
    let mut denoiser_encoder_flow = model.denoiser.named_params_mut();
    denoiser_encoder_flow.extend(model.encoder.named_params_mut());
    if let Some(flow) = &mut model.flow {
        denoiser_encoder_flow.extend(flow.named_params_mut());
    }
    for (k, (_, param)) in denoiser_encoder_flow.into_iter().enumerate() {
        let m = &mut adam.m[k];
        let v = &mut adam.v[k];
        let g = grads[k].data();
        for ((p, mm), (vv, &gg)) in param
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut().iter_mut().zip(g))
        {
            *mm = ADAM_BETA1 * *mm + (1.0 - ADAM_BETA1) * gg;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gg * gg;
            let m_hat = *mm / bias1;
            let v_hat = *vv / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
}

/// Runs one optimizer step on an explicit batch; returns the loss
/// parts as plain numbers (total, diffusion, latent).
pub fn train_step(model: &mut Model, batch: &[&PointCloud], step_rng: &Rng) -> Result<(f64, f64, f64)> {
    let tape = Tape::new();
    let vars = model.bind(&tape);
    let loss = match model.config.mode {
        TrainMode::Generator => generator_loss(
            &tape,
            batch,
            &vars,
            &model.sched,
            &model.config,
            &step_rng.derive("loss"),
        )?,
        TrainMode::Autoencoder => autoencoder_loss(
            &tape,
            batch,
            &vars,
            &model.sched,
            &model.config,
            &step_rng.derive("loss"),
        )?,
    };
    let total = loss.total.scalar_value();
    let diffusion = loss.diffusion.scalar_value();
    let latent = loss.latent.map(|l| l.scalar_value()).unwrap_or(0.0);
    if !total.is_finite() || total > DIVERGENCE_LIMIT {
        let norms: Vec<String> = model
            .named_params()
            .iter()
            .take(4)
            .map(|(n, p)| format!("|{n}|^2={:.3e}", p.data().iter().map(|v| v * v).sum::<f64>()))
            .collect();
        return Err(Error::Divergence {
            step: model.step,
            loss: total,
            diagnostics: format!("t drawn {:?}; {}", loss.ts, norms.join(", ")),
        });
    }
    tape.backward(loss.total)?;
    let grads: Vec<Tensor> = vars
        .vars()
        .iter()
        .map(|v| tape.grad(*v))
        .collect::<Result<_>>()?;
    adam_update(model, &grads, model.config.learning_rate);
    model.step += 1;
    Ok((total, diffusion, latent))
}

/// Full training loop. Writes one tab-separated trace line per logging
/// step (step, loss_total, loss_diff, loss_latent, wall_ms); when
/// `ckpt_path` is given and `ckpt_every > 0`, periodically saves a
/// checkpoint there. Deterministic in the config seed except for the
/// wall_ms column.
pub fn train(
    config: &TrainConfig,
    dataset: &[PointCloud],
    trace: &mut dyn Write,
    ckpt_path: Option<&std::path::Path>,
) -> Result<Model> {
    if dataset.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut model = Model::init(config.clone())?;
    let started = Instant::now();
    let total_steps = config.steps;
    for s in 0..total_steps {
        let step_rng = model.run_rng.derive("step").derive_index(s);
        let mut batch_rng = step_rng.derive("batch");
        let batch: Vec<&PointCloud> = (0..config.batch_size)
            .map(|_| &dataset[batch_rng.next_below(dataset.len() as u64) as usize])
            .collect();
        let (total, diffusion, latent) = train_step(&mut model, &batch, &step_rng)?;

        if s % config.eval_every == 0 || s + 1 == total_steps {
            writeln!(
                trace,
                "{s}\t{total}\t{diffusion}\t{latent}\t{}",
                started.elapsed().as_millis()
            )
            .map_err(|e| Error::io("trace", e))?;
        }
        if let (Some(path), true) = (ckpt_path, config.ckpt_every > 0) {
            if (s + 1) % config.ckpt_every == 0 {
                save_checkpoint(&model, path)?;
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_deterministic() {
        let cfg = TrainConfig {
            steps: 1,
            ..TrainConfig::default()
        };
        let a = Model::init(cfg.clone()).unwrap();
        let b = Model::init(cfg).unwrap();
        for ((na, pa), (nb, pb)) in a.named_params().iter().zip(b.named_params().iter()) {
            assert_eq!(na, nb);
            assert_eq!(pa.data(), pb.data());
        }
    }

    #[test]
    fn autoencoder_has_no_flow_params() {
        let cfg = TrainConfig {
            mode: TrainMode::Autoencoder,
            ..TrainConfig::default()
        };
        let m = Model::init(cfg).unwrap();
        assert!(m.flow.is_none());
        assert!(m.named_params().iter().all(|(n, _)| !n.starts_with("flow")));
    }
}
