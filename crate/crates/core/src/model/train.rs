use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::net::{sample_loss, Gradients, Net};
use super::ModelError;
use crate::ensemble::{argmax, ModelPrediction};
use crate::seed::{derive_seed, rng_from_seed, SeedPart};
use crate::{Error, Result, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Step size used by [`fine_tune`].
    pub fine_tune_lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            fine_tune_lr: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.learning_rate >= 0.0 && self.fine_tune_lr >= 0.0) {
            return bad("step sizes must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam decay rates must lie in [0, 1) and epsilon must be positive");
        }
        Ok(())
    }
}

/// Adam with bias correction over the trainable layers of one network.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    moments: Vec<Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)>>,
}

impl Adam {
    pub fn new(net: &Net, cfg: &TrainConfig, lr: f64) -> Self {
        let moments = net
            .zero_gradients()
            .layers
            .into_iter()
            .map(|g| g.map(|(w, b)| (w.clone(), w, b.clone(), b)))
            .collect();
        Self {
            lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            moments,
        }
    }

    pub fn step(&mut self, net: &mut Net, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for ((layer, g), m) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.moments) {
            let (Some((gw, gb)), Some((mw, vw, mb, vb))) = (g, m.as_mut()) else {
                continue;
            };
            if !layer.trainable {
                continue;
            }
            for (params, grad, m, v) in [
                (layer.weight.data_mut(), gw, mw, vw),
                (layer.bias.data_mut(), gb, mb, vb),
            ] {
                for i in 0..params.len() {
                    m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                    v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                    let update = self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.epsilon);
                    params[i] = (params[i] as f64 - update) as f32;
                }
            }
        }
    }
}

/// One training or evaluation input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// CHW values matching the network input.
    pub input: Vec<f32>,
    pub label: usize,
}

/// Indexed supply of samples. `epoch` lets a source vary inputs per epoch
/// (augmentation); evaluation always asks with `epoch = None`.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn sample_id(&self, index: usize) -> &str;
    fn sample(&self, index: usize, epoch: Option<usize>) -> Result<Sample>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fixed inputs held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemorySource {
    pub ids: Vec<String>,
    pub samples: Vec<Sample>,
}

impl InMemorySource {
    pub fn new(ids: Vec<String>, samples: Vec<Sample>) -> Self {
        assert_eq!(ids.len(), samples.len());
        Self { ids, samples }
    }
}

impl SampleSource for InMemorySource {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn sample_id(&self, index: usize) -> &str {
        &self.ids[index]
    }

    fn sample(&self, index: usize, _epoch: Option<usize>) -> Result<Sample> {
        Ok(self.samples[index].clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainingHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn train_losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }
}

/// `(mean loss, accuracy)` over a source without augmentation.
pub fn evaluate(net: &Net, source: &dyn SampleSource) -> Result<(f64, f64)> {
    if source.is_empty() {
        return Err(ModelError::EmptySource.into());
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for i in 0..source.len() {
        let s = source.sample(i, None)?;
        let p = net.forward_one(&s.input)?;
        loss += sample_loss(&p, s.label);
        correct += usize::from(argmax(&p) == s.label);
    }
    let n = source.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Mini-batch Adam on `train`, shuffled per epoch from the config seed.
/// Mutates `net` in place and returns one history entry per epoch.
pub fn train(
    net: &mut Net,
    train: &dyn SampleSource,
    validation: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    run_training(net, train, validation, cfg, cfg.learning_rate)
}

/// Unfreezes every layer and continues training at `fine_tune_lr`.
pub fn fine_tune(
    net: &mut Net,
    train: &dyn SampleSource,
    validation: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    net.set_all_trainable(true);
    run_training(net, train, validation, cfg, cfg.fine_tune_lr)
}

fn run_training(
    net: &mut Net,
    train: &dyn SampleSource,
    validation: Option<&dyn SampleSource>,
    cfg: &TrainConfig,
    lr: f64,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ModelError::EmptySource.into());
    }
    let validation = validation.filter(|v| !v.is_empty());
    let mut adam = Adam::new(net, cfg, lr);
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[SeedPart::Str("shuffle"), SeedPart::from(epoch)]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = net.zero_gradients();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let s = train.sample(i, Some(epoch))?;
                let (l, p) = net.accumulate(&s.input, s.label, scale, &mut grads)?;
                batch_loss += l;
                correct += usize::from(argmax(&p) == s.label);
            }
            let max_grad = grads.max_abs();
            if !batch_loss.is_finite() || !max_grad.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b + 1,
                    max_grad,
                }
                .into());
            }
            loss_sum += batch_loss;
            adam.step(net, &grads);
        }
        let n = train.len() as f64;
        let (val_loss, val_acc) = match validation {
            Some(v) => {
                let (l, a) = evaluate(net, v)?;
                (Some(l), Some(a))
            }
            None => (None, None),
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            train_loss: loss_sum / n,
            val_loss,
            train_acc: correct as f64 / n,
            val_acc,
        };
        tracing::info!(
            epoch = stats.epoch,
            train_loss = stats.train_loss,
            train_acc = stats.train_acc,
            val_loss = stats.val_loss,
            val_acc = stats.val_acc,
            "epoch finished"
        );
        history.epochs.push(stats);
    }
    Ok(history)
}

/// Probabilities for every sample in `source`, in source order.
pub fn predict(net: &Net, source: &dyn SampleSource, model_id: &str) -> Result<ModelPrediction> {
    let mut ids = Vec::with_capacity(source.len());
    let mut rows: Vec<[f64; NUM_CLASSES]> = Vec::with_capacity(source.len());
    for i in 0..source.len() {
        let s = source.sample(i, None)?;
        ids.push(source.sample_id(i).to_string());
        rows.push(net.forward_one(&s.input)?);
    }
    Ok(ModelPrediction::new(model_id, ids, rows)?)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV `epoch,train_loss,val_loss,train_acc,val_acc`; validation columns
/// are empty when no validation set was used.
pub fn write_history(path: &Path, h: &TrainingHistory) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    w.write_record(["epoch", "train_loss", "val_loss", "train_acc", "val_acc"])
        .map_err(|e| Error::csv(path, e))?;
    for e in &h.epochs {
        w.write_record([
            e.epoch.to_string(),
            e.train_loss.to_string(),
            opt(e.val_loss),
            e.train_acc.to_string(),
            opt(e.val_acc),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history(path: &Path) -> Result<TrainingHistory> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    let mut h = TrainingHistory::default();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let field = |k: usize| -> Result<Option<f64>> {
            match rec.get(k).map(str::trim) {
                None | Some("") => Ok(None),
                Some(s) => s
                    .parse()
                    .map(Some)
                    .map_err(|e| Error::format(path, format!("line {}: {e}", i + 2))),
            }
        };
        let need = |k: usize| -> Result<f64> {
            field(k)?.ok_or_else(|| Error::format(path, format!("line {}: missing column {k}", i + 2)))
        };
        h.epochs.push(EpochStats {
            epoch: need(0)? as usize,
            train_loss: need(1)?,
            val_loss: field(2)?,
            train_acc: need(3)?,
            val_acc: field(4)?,
        });
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::super::net::{CompactNetConfig, ConvBlockConfig, ParamKind};
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> CompactNetConfig {
        CompactNetConfig {
            input: (1, 6, 6),
            conv_blocks: vec![ConvBlockConfig { filters: 4, stride: 1 }],
            dense_hidden: vec![],
            frozen: vec![],
        }
    }

    /// Two classes: dim vs bright images with noise.
    fn blobs(n: usize, seed: u64) -> InMemorySource {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut src = InMemorySource::default();
        for i in 0..n {
            let label = i % 2;
            let base = if label == 0 { 0.2 } else { 0.8 };
            let input = (0..36).map(|_| base + rng.random_range(-0.1f32..0.1)).collect();
            src.ids.push(format!("s{i}"));
            src.samples.push(Sample { input, label });
        }
        src
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size: 8,
            learning_rate: 0.01,
            seed: 5,
            ..Default::default()
        }
    }

    #[test]
    fn separable_blobs_reach_full_accuracy() {
        let data = blobs(64, 1);
        let mut net = Net::new(&tiny_cfg(), 2).unwrap();
        let h = train(&mut net, &data, None, &quick(50)).unwrap();
        assert_eq!(h.len(), 50);
        assert_eq!(h.epochs.last().unwrap().train_acc, 1.0);
        assert_eq!(evaluate(&net, &data).unwrap().1, 1.0);
        let windows: Vec<f64> = h.train_losses().chunks(5).map(|w| w.iter().sum::<f64>() / 5.0).collect();
        for w in windows.windows(2) {
            assert!(w[1] <= w[0], "{windows:?}");
        }
    }

    #[test]
    fn zero_step_size_leaves_parameters() {
        let data = blobs(20, 2);
        let mut net = Net::new(&tiny_cfg(), 3).unwrap();
        let before = net.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick(3)
        };
        train(&mut net, &data, None, &cfg).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn frozen_network_is_bitwise_unchanged() {
        let data = blobs(20, 3);
        let mut net = Net::new(&tiny_cfg(), 4).unwrap();
        net.set_all_trainable(false);
        let before = net.clone();
        let h = train(&mut net, &data, Some(&data), &quick(4)).unwrap();
        assert_eq!(net, before);
        let losses = h.train_losses();
        assert!(losses.iter().all(|&l| l == losses[0]));
    }

    #[test]
    fn frozen_features_stay_fixed_while_head_moves() {
        let data = blobs(20, 4);
        let mut net = Net::new(&tiny_cfg(), 5).unwrap();
        net.freeze_features();
        let before = net.clone();
        train(&mut net, &data, None, &quick(2)).unwrap();
        assert_eq!(net.layers[0], before.layers[0]);
        assert_ne!(net.layers[2], before.layers[2]);
    }

    #[test]
    fn fine_tune_unfreezes_and_uses_small_steps() {
        let data = blobs(20, 5);
        let mut net = Net::new(&tiny_cfg(), 6).unwrap();
        net.freeze_features();
        let before = net.clone();
        fine_tune(&mut net, &data, None, &quick(1)).unwrap();
        assert!(net.layers.iter().all(|l| l.trainable));
        let moved = (net.param(0, ParamKind::Weight, 0) as f64 - before.param(0, ParamKind::Weight, 0) as f64).abs();
        // Adam moves each parameter by at most about lr per step.
        assert!(moved > 0.0 && moved <= 3.0 * 1e-5 * 1.01, "{moved}");
    }

    #[test]
    fn training_is_deterministic() {
        let data = blobs(30, 6);
        let run = || {
            let mut net = Net::new(&tiny_cfg(), 7).unwrap();
            let h = train(&mut net, &data, Some(&data), &quick(3)).unwrap();
            (net, h)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let data = blobs(10, 7);
        let mut net = Net::new(&tiny_cfg(), 8).unwrap();
        let last = net.layers.len() - 1;
        net.layers[last].bias.data_mut()[2] = f32::INFINITY;
        let err = train(&mut net, &data, None, &quick(1)).unwrap_err();
        match err {
            Error::Model(ModelError::NonFiniteLoss { epoch, batch, .. }) => {
                assert_eq!(epoch, 1);
                assert!(batch >= 1);
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { learning_rate: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn history_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        let h = TrainingHistory {
            epochs: vec![
                EpochStats { epoch: 1, train_loss: 1.5, val_loss: Some(1.25), train_acc: 0.5, val_acc: Some(0.25) },
                EpochStats { epoch: 2, train_loss: 0.1, val_loss: None, train_acc: 1.0, val_acc: None },
            ],
        };
        write_history(&p, &h).unwrap();
        assert!(std::fs::read_to_string(&p).unwrap().starts_with("epoch,train_loss,val_loss,train_acc,val_acc\n"));
        assert_eq!(read_history(&p).unwrap(), h);
    }

    #[test]
    fn predict_emits_valid_rows_in_source_order() {
        let data = blobs(7, 8);
        let net = Net::new(&tiny_cfg(), 9).unwrap();
        let p = predict(&net, &data, "m").unwrap();
        assert_eq!(p.sample_ids(), data.ids.as_slice());
        assert_eq!(p.model_id(), "m");
    }
}
