//! Sampling procedures on a trained model: generation from the flow
//! prior, reconstruction through the encoder, and latent
//! interpolation.
//!
//! All three decode by running the reverse Markov chain from fresh
//! terminal noise. Per-cloud rng substreams keep parallel generation
//! deterministic, and the shared "chain" label makes a reconstruction
//! and an interpolation endpoint byte-identical under the same seed.

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::config::InterpSpace;
use crate::diffusion::{reverse_step, ReverseVariance};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::Model;

fn variance_mode(model: &Model) -> ReverseVariance {
    if model.config.reverse_var_gamma {
        ReverseVariance::Gamma
    } else {
        ReverseVariance::Beta
    }
}

/// Runs the reverse chain from terminal noise down to a cloud,
/// conditioned on the given latent.
pub fn decode_cloud(model: &Model, z: &[f64], n_points: usize, chain_rng: &Rng) -> Result<PointCloud> {
    if n_points == 0 {
        return Err(Error::EmptyCloud);
    }
    let mut rng = chain_rng.clone();
    let mut xt = Tensor::zeros(vec![n_points, 3]);
    rng.fill_normal(xt.data_mut());
    let mut cloud = PointCloud::from_tensor(&xt)?;
    for t in (1..=model.sched.t_max()).rev() {
        cloud = reverse_step(
            &cloud,
            t,
            z,
            &model.denoiser,
            &model.sched,
            variance_mode(model),
            &mut rng,
        )?;
    }
    Ok(cloud)
}

fn require_flow(model: &Model) -> Result<&crate::nets::FlowPrior> {
    model.flow.as_ref().ok_or_else(|| Error::ModeMismatch {
        expected: "generator".into(),
        found: model.config.mode.to_string(),
    })
}

/// Draws `n_clouds` shapes: w ~ N(0, I), z = F(w), then the reverse
/// chain. Clouds decode in parallel; per-cloud derived streams keep
/// the output independent of thread scheduling.
pub fn generate(model: &Model, n_clouds: usize, n_points: usize, rng: &Rng) -> Result<Vec<PointCloud>> {
    let flow = require_flow(model)?;
    (0..n_clouds)
        .into_par_iter()
        .map(|i| {
            let cloud_rng = rng.derive_index(i as u64);
            let mut w = vec![0.0; flow.dim()];
            cloud_rng.derive("latent").fill_normal(&mut w);
            let (z, _) = flow.forward(&w);
            decode_cloud(model, &z, n_points, &cloud_rng.derive("chain"))
        })
        .collect()
}

/// Encodes a cloud to the posterior mean and decodes a fresh cloud
/// from it. The decoder is resolution-free: `n_points` may differ from
/// the input size.
pub fn reconstruct(model: &Model, x0: &PointCloud, n_points: usize, rng: &Rng) -> Result<PointCloud> {
    let z = model.encoder.encode(x0).mean;
    decode_cloud(model, z.data(), n_points, &rng.derive("chain"))
}

/// Interpolates (and extrapolates by `extrapolate` beyond [0, 1])
/// between the latents of two clouds over `steps` evenly spaced
/// lambdas, decoding every frame with the same chain noise so the
/// sequence varies smoothly. Linear interpolation happens in the
/// flow's base space unless the config selects latent space.
pub fn interpolate(
    model: &Model,
    a: &PointCloud,
    b: &PointCloud,
    steps: usize,
    extrapolate: f64,
    n_points: usize,
    rng: &Rng,
) -> Result<Vec<PointCloud>> {
    let flow = require_flow(model)?;
    if steps < 2 {
        return Err(Error::InvalidParam {
            name: "steps",
            message: format!("need at least 2 interpolation steps, got {steps}"),
        });
    }
    if extrapolate < 0.0 {
        return Err(Error::InvalidParam {
            name: "extrapolate",
            message: "must be non-negative".into(),
        });
    }
    let z_a = model.encoder.encode(a).mean.into_data();
    let z_b = model.encoder.encode(b).mean.into_data();
    let chain_rng = rng.derive("chain");

    let lambdas: Vec<f64> = (0..steps)
        .map(|j| {
            let lo = -extrapolate;
            let hi = 1.0 + extrapolate;
            lo + (hi - lo) * j as f64 / (steps - 1) as f64
        })
        .collect();

    let endpoints = match model.config.interp_space {
        InterpSpace::W => {
            let (w_a, _) = flow.inverse(&z_a);
            let (w_b, _) = flow.inverse(&z_b);
            (w_a, w_b)
        }
        InterpSpace::Z => (z_a, z_b),
    };

    lambdas
        .par_iter()
        .map(|&lambda| {
            let mixed: Vec<f64> = endpoints
                .0
                .iter()
                .zip(&endpoints.1)
                .map(|(&x, &y)| (1.0 - lambda) * x + lambda * y)
                .collect();
            let z = match model.config.interp_space {
                InterpSpace::W => flow.forward(&mixed).0,
                InterpSpace::Z => mixed,
            };
            decode_cloud(model, &z, n_points, &chain_rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{TrainConfig, TrainMode};

    fn small_model(mode: TrainMode) -> Model {
        let mut cfg = TrainConfig {
            mode,
            t_steps: 6,
            ..TrainConfig::default()
        };
        cfg.nets.latent_dim = 4;
        cfg.nets.denoiser_width = 8;
        cfg.nets.denoiser_layers = 2;
        cfg.nets.time_embed_dim = 4;
        cfg.nets.encoder_hidden = (6, 8);
        cfg.nets.flow_layers = 2;
        cfg.nets.flow_width = 6;
        Model::init(cfg).unwrap()
    }

    #[test]
    fn generate_shape_contract_and_determinism() {
        let model = small_model(TrainMode::Generator);
        let rng = Rng::new(11).derive("sample");
        let clouds = generate(&model, 3, 17, &rng).unwrap();
        assert_eq!(clouds.len(), 3);
        assert!(clouds.iter().all(|c| c.len() == 17));
        let again = generate(&model, 3, 17, &rng).unwrap();
        assert_eq!(clouds, again);
    }

    #[test]
    fn generate_requires_generator_checkpoint() {
        let model = small_model(TrainMode::Autoencoder);
        let rng = Rng::new(1);
        assert!(matches!(
            generate(&model, 1, 8, &rng),
            Err(Error::ModeMismatch { .. })
        ));
    }

    #[test]
    fn interpolation_endpoint_matches_reconstruction() {
        let model = small_model(TrainMode::Generator);
        let a = PointCloud::new(vec![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0], [0.0, 0.5, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[0.0, 0.0, 0.9], [0.0, 0.0, -0.9], [0.9, 0.0, 0.0]]).unwrap();
        let rng = Rng::new(7);
        let frames = interpolate(&model, &a, &b, 2, 0.0, 5, &rng).unwrap();
        assert_eq!(frames.len(), 2);
        let ra = reconstruct(&model, &a, 5, &rng).unwrap();
        let rb = reconstruct(&model, &b, 5, &rng).unwrap();
        assert_eq!(frames[0], ra);
        assert_eq!(frames[1], rb);
    }

    #[test]
    fn degenerate_interpolation_is_constant() {
        let model = small_model(TrainMode::Generator);
        let a = PointCloud::new(vec![[0.5, 0.0, 0.0], [-0.5, 0.0, 0.0]]).unwrap();
        let rng = Rng::new(9);
        let frames = interpolate(&model, &a, &a, 3, 0.0, 4, &rng).unwrap();
        assert_eq!(frames[0], frames[1]);
        assert_eq!(frames[1], frames[2]);
    }

    #[test]
    fn reconstruction_is_resolution_free() {
        let model = small_model(TrainMode::Autoencoder);
        let x = PointCloud::new(vec![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]]).unwrap();
        let rng = Rng::new(3);
        let r = reconstruct(&model, &x, 9, &rng).unwrap();
        assert_eq!(r.len(), 9);
        assert_eq!(reconstruct(&model, &x, 9, &rng).unwrap(), r);
    }
}
