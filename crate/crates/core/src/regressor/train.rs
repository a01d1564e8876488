use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{backward, Gradients, ModelParams};
use super::{FeatureBundle, RegressorError, VariantSpec};
use crate::scalar::Real;
use crate::simulator::derive_seed;

const TAG_INIT: u64 = 1;
const TAG_SHUFFLE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

/// First and second moment estimates, one buffer per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let z: Vec<Vec<T>> = params.tensors.iter().map(|t| vec![T::zero(); t.len()]).collect();
        Self { m: z.clone(), v: z }
    }
}

/// Bias-corrected Adam update at step `t` (1-based).
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    t: u64,
    cfg: &TrainConfig,
) {
    assert!(t >= 1, "adam steps are 1-based");
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let one = T::one();
    let bc1 = T::lit(1.0 - cfg.beta1.powi(t as i32));
    let bc2 = T::lit(1.0 - cfg.beta2.powi(t as i32));
    let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
    for (ti, p) in params.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[ti];
        let (m, v) = (&mut state.m[ti], &mut state.v[ti]);
        for j in 0..p.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mh = m[j] / bc1;
            let vh = v[j] / bc2;
            p[j] = p[j] - lr * mh / (vh.sqrt() + eps);
        }
    }
}

/// Mean training loss (pixels) per epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epoch_loss: Vec<f64>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss_px\n");
        for (i, l) in self.epoch_loss.iter().enumerate() {
            s.push_str(&format!("{},{l}\n", i + 1));
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), RegressorError> {
        std::fs::write(path, self.to_csv()).map_err(|source| RegressorError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Epoch-at-a-time training loop in `f32`.
pub struct Trainer {
    params: ModelParams<f32>,
    adam: AdamState<f32>,
    cfg: TrainConfig,
    step: u64,
    epoch: usize,
    pub history: History,
}

impl Trainer {
    pub fn new(variant: VariantSpec, cfg: TrainConfig) -> Self {
        assert!(cfg.epochs > 0 && cfg.batch_size > 0 && cfg.lr > 0.0, "invalid training config");
        let params = ModelParams::init(variant, derive_seed(cfg.seed, &[TAG_INIT]));
        let adam = AdamState::new(&params);
        Self {
            params,
            adam,
            cfg,
            step: 0,
            epoch: 0,
            history: History::default(),
        }
    }

    pub fn params(&self) -> &ModelParams<f32> {
        &self.params
    }

    /// One shuffled pass; returns the epoch's mean pre-update batch loss.
    pub fn run_epoch(&mut self, data: &[&FeatureBundle], truth: &[(f64, f64)]) -> Result<f64, RegressorError> {
        if data.len() != truth.len() {
            return Err(RegressorError::LengthMismatch(data.len(), truth.len()));
        }
        if data.is_empty() {
            return Err(RegressorError::EmptyDataset);
        }
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, &[TAG_SHUFFLE, self.epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<&FeatureBundle> = chunk.iter().map(|&i| data[i]).collect();
            let t: Vec<(f64, f64)> = chunk.iter().map(|&i| truth[i]).collect();
            let (l, g) = backward(&self.params, &batch, &t)?;
            total += l.as_f64() * chunk.len() as f64;
            self.step += 1;
            adam_step(&mut self.params, &g, &mut self.adam, self.step, &self.cfg);
        }
        let mean = total / data.len() as f64;
        self.epoch += 1;
        self.history.epoch_loss.push(mean);
        Ok(mean)
    }

    pub fn finish(self) -> (ModelParams<f32>, History) {
        (self.params, self.history)
    }
}

/// Trains `variant` for `cfg.epochs` epochs.
pub fn train(
    data: &[&FeatureBundle],
    truth: &[(f64, f64)],
    variant: VariantSpec,
    cfg: &TrainConfig,
) -> Result<(ModelParams<f32>, History), RegressorError> {
    if data.is_empty() {
        return Err(RegressorError::EmptyDataset);
    }
    let mut tr = Trainer::new(variant, *cfg);
    for _ in 0..cfg.epochs {
        tr.run_epoch(data, truth)?;
    }
    Ok(tr.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> (Vec<FeatureBundle>, Vec<(f64, f64)>) {
        (0..n)
            .map(|i| {
                let g = (0.36 + 0.27 * (i % 7) as f64 / 6.0, 0.37 + 0.25 * (i % 5) as f64 / 4.0);
                let mut b = FeatureBundle::new([0.3, 0.45, 0.7, 0.45]);
                b.set_vector(0, Some((g.0 - 0.5, 0.5 - g.1)));
                b.set_vector(1, Some((g.0 - 0.5, 0.5 - g.1)));
                (b, (g.0 * 1290.0, g.1 * 2796.0))
            })
            .unzip()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = ModelParams::<f64>::init(VariantSpec::BOUNDS, 1);
        let before = p.clone();
        let g = Gradients {
            tensors: p.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            vectors: vec![],
        };
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 1, &TrainConfig::default());
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = ModelParams::<f64>::zeros(VariantSpec::BOUNDS);
        let mut g = Gradients {
            tensors: p.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            vectors: vec![],
        };
        g.tensors[0][0] = 0.37;
        g.tensors[0][1] = -250.0;
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 1, &cfg);
        assert!((p.tensors[0][0] + cfg.lr).abs() < 1e-12);
        assert!((p.tensors[0][1] - cfg.lr).abs() < 1e-12);
    }

    #[test]
    fn bias_correction_depends_on_step() {
        let cfg = TrainConfig::default();
        let p0 = ModelParams::<f64>::zeros(VariantSpec::BOUNDS);
        let mut g = Gradients {
            tensors: p0.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            vectors: vec![],
        };
        g.tensors[0][0] = 1.0;
        let (mut a, mut b) = (p0.clone(), p0.clone());
        let (mut sa, mut sb) = (AdamState::new(&a), AdamState::new(&b));
        adam_step(&mut a, &g, &mut sa, 1, &cfg);
        adam_step(&mut a, &g, &mut sa, 2, &cfg);
        adam_step(&mut b, &g, &mut sb, 1, &cfg);
        adam_step(&mut b, &g, &mut sb, 1, &cfg);
        assert_ne!(a, b);
    }

    #[test]
    fn overfits_one_sample() {
        let (data, truth) = toy(1);
        let refs: Vec<&FeatureBundle> = data.iter().collect();
        let cfg = TrainConfig {
            epochs: 200,
            lr: 1e-2,
            ..Default::default()
        };
        let (_, h) = train(&refs, &truth, "eb+rv".parse().unwrap(), &cfg).unwrap();
        assert!(h.epoch_loss[199] < 0.1 * h.epoch_loss[0], "{:?}", h.epoch_loss);
    }

    #[test]
    fn same_seed_same_history() {
        let (data, truth) = toy(100);
        let refs: Vec<&FeatureBundle> = data.iter().collect();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 4,
            ..Default::default()
        };
        let v = "eb+rv".parse().unwrap();
        let (p1, h1) = train(&refs, &truth, v, &cfg).unwrap();
        let (p2, h2) = train(&refs, &truth, v, &cfg).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(p1, p2);
        assert!(h1.to_csv().starts_with("epoch,mean_loss_px\n1,"));
    }

    #[test]
    fn masked_slot_noise_is_ignored() {
        let (mut data, truth) = toy(40);
        for b in &mut data {
            b.set_vector(1, None);
        }
        let v = "eb+rv".parse().unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..Default::default()
        };
        let refs: Vec<&FeatureBundle> = data.iter().collect();
        let (clean, _) = train(&refs, &truth, v, &cfg).unwrap();

        let mut tr = Trainer::new(v, cfg);
        for epoch in 0..3u32 {
            let noisy: Vec<FeatureBundle> = data
                .iter()
                .enumerate()
                .map(|(i, b)| {
                    let mut b = b.clone();
                    b.reflection_vectors[2] = (i as f32 * 0.7 + epoch as f32).sin() * 9.0;
                    b.reflection_vectors[3] = (i as f32 * 1.3 - epoch as f32).cos() * 9.0;
                    b
                })
                .collect();
            let refs: Vec<&FeatureBundle> = noisy.iter().collect();
            tr.run_epoch(&refs, &truth).unwrap();
        }
        assert_eq!(tr.finish().0, clean);
    }
}
