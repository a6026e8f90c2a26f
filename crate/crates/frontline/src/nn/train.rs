//! Deterministic training loop with early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::nn::adam::AdamHyper;
use crate::nn::loss::{loss, LossKind};
use crate::nn::tensor::TensorGrid;
use crate::nn::unet::{UNet, UNetConfig};

/// Optimization settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    pub max_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Parameter(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch size must be >= 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Parameter("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Parameter("max epochs must be >= 1".into()));
        }
        Ok(())
    }
}

/// One input/target pair, each shaped (1, 1, H, W).
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: TensorGrid,
    pub target: TensorGrid,
}

/// Per-epoch losses.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Training result: per-epoch history and which epoch the returned
/// parameters come from.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

fn stack(samples: &[TrainSample], indices: &[usize]) -> Result<(TensorGrid, TensorGrid)> {
    let (_, c, h, w) = samples[indices[0]].input.shape();
    let mut inputs = TensorGrid::zeros(indices.len(), c, h, w);
    let mut targets = TensorGrid::zeros(indices.len(), 1, h, w);
    for (slot, &i) in indices.iter().enumerate() {
        let s = &samples[i];
        if s.input.shape() != (1, c, h, w) || s.target.shape() != (1, 1, h, w) {
            return Err(Error::Dataset(format!(
                "sample {i} has shape {:?}/{:?}, expected (1,{c},{h},{w})",
                s.input.shape(),
                s.target.shape()
            )));
        }
        for ci in 0..c {
            inputs.plane_mut(slot, ci).copy_from_slice(s.input.plane(0, ci));
        }
        targets.plane_mut(slot, 0).copy_from_slice(s.target.plane(0, 0));
    }
    Ok((inputs, targets))
}

fn mean_loss_over(
    model: &UNet,
    samples: &[TrainSample],
    kind: LossKind,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    let indices: Vec<usize> = (0..samples.len()).collect();
    for chunk in indices.chunks(batch_size) {
        let (x, t) = stack(samples, chunk)?;
        let y = model.forward_infer(&x)?;
        let (l, _) = loss(kind, &y, &t)?;
        total += l * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Trains a freshly He-initialized network.
///
/// Every epoch shuffles the training set with a seed-derived generator,
/// steps Adam once per batch, and evaluates the validation loss in inference
/// mode. Training stops when the validation loss has not strictly improved
/// for `patience` consecutive epochs (or at `max_epochs`), and the returned
/// model carries the parameters of the best-validation epoch. Fixed seeds
/// give bit-identical histories and parameters.
pub fn train(
    model_config: &UNetConfig,
    train_set: &[TrainSample],
    val_set: &[TrainSample],
    config: &TrainConfig,
) -> Result<(UNet, TrainOutcome)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Dataset(
            "training and validation sets must be nonempty".into(),
        ));
    }
    let mut model = UNet::init(*model_config, config.seed)?;
    let hyper = AdamHyper::with_lr(config.learning_rate);
    // Separate stream from weight init so the schedules are independent.
    let mut shuffle_rng = rand_chacha::ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params = model.params.clone();
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut train_total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let (x, t) = stack(train_set, chunk)?;
            let (y, cache) = model.forward_train(&x)?;
            let (l, grad) = loss(config.loss, &y, &t)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            train_total += l * chunk.len() as f64;
            let grads = model.backward(&cache, &grad)?;
            model.params.adam_step(&grads, &hyper)?;
        }
        let train_loss = train_total / train_set.len() as f64;
        let val_loss = mean_loss_over(&model, val_set, config.loss, config.batch_size)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { epoch });
        }
        history.push(EpochStats {
            epoch,
            train_loss,
            val_loss,
        });

        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch;
            best_params = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.params = best_params;
    Ok((
        model,
        TrainOutcome {
            history,
            best_epoch,
            best_val_loss: best_val,
            stopped_early,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> UNetConfig {
        UNetConfig {
            depth: 1,
            base_filters: 2,
            conv_kernel: 3,
            leaky_slope: 0.01,
            final_kernel: 3,
        }
    }

    fn make_samples(n: usize, offset: u64) -> Vec<TrainSample> {
        // Inputs: a bright left or right half; target: the matching half.
        (0..n)
            .map(|i| {
                let left = (i as u64 + offset) % 2 == 0;
                let mut input = vec![0.1; 64];
                let mut target = vec![0.0; 64];
                for y in 0..8 {
                    for x in 0..8 {
                        let lit = if left { x < 4 } else { x >= 4 };
                        if lit {
                            input[y * 8 + x] = 0.9;
                            target[y * 8 + x] = 1.0;
                        }
                    }
                }
                TrainSample {
                    input: TensorGrid::from_vec(1, 1, 8, 8, input).unwrap(),
                    target: TensorGrid::from_vec(1, 1, 8, 8, target).unwrap(),
                }
            })
            .collect()
    }

    #[test]
    fn patience_zero_rejected() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2,
            patience: 0,
            loss: LossKind::Mse,
            max_epochs: 5,
            seed: 1,
        };
        assert!(matches!(
            train(&tiny_config(), &make_samples(4, 0), &make_samples(2, 1), &cfg),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn empty_set_rejected() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            batch_size: 2,
            patience: 1,
            loss: LossKind::Mse,
            max_epochs: 5,
            seed: 1,
        };
        assert!(matches!(
            train(&tiny_config(), &[], &make_samples(2, 1), &cfg),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            patience: 50,
            loss: LossKind::Mse,
            max_epochs: 30,
            seed: 9,
        };
        let train_set = make_samples(20, 0);
        let val_set = make_samples(6, 1);
        let (_, out_a) = train(&tiny_config(), &train_set, &val_set, &cfg).unwrap();
        let first = out_a.history.first().unwrap().train_loss;
        let last = out_a.history.last().unwrap().train_loss;
        assert!(
            last / first < 0.5,
            "training loss did not halve: {first} -> {last}"
        );

        let (_, out_b) = train(&tiny_config(), &train_set, &val_set, &cfg).unwrap();
        assert_eq!(out_a.history, out_b.history, "history not reproducible");
    }

    #[test]
    fn patience_one_stops_after_first_non_improvement() {
        let cfg = TrainConfig {
            learning_rate: 1e-2,
            batch_size: 4,
            patience: 1,
            loss: LossKind::Mse,
            max_epochs: 200,
            seed: 3,
        };
        let (_, out) = train(&tiny_config(), &make_samples(12, 0), &make_samples(4, 1), &cfg).unwrap();
        if out.stopped_early {
            // The last recorded epoch did not improve over the best.
            let last = out.history.last().unwrap();
            assert!(last.val_loss >= out.best_val_loss);
            assert_eq!(last.epoch, out.best_epoch + 1 + (out.history.len() - 1 - out.best_epoch));
        }
        assert!(out.best_epoch >= 1);
    }
}
