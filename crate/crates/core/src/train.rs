//! Training loop with the per-epoch decay schedule, Adam, validation-based
//! best-model selection, evaluation, and multi-seed summaries.

use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::frontend::FrontendConfig;
use crate::manifest::FeatureSet;
use crate::metrics::{accuracy, auc_macro, softmax_rows};
use crate::mixer::MixerModel;
use crate::rng::SplitMix64;
use crate::scalar::Real;
use crate::tensor::{Tape, Tensor};

// ── Config ───────────────────────────────────────────────────────────

fn d_lr0() -> f64 {
    2.5e-4
}
fn d_decay() -> f64 {
    0.85
}
fn d_decay_start() -> usize {
    5
}
fn d_epochs() -> usize {
    30
}
fn d_batch() -> usize {
    16
}
fn d_seed() -> u64 {
    1
}
fn d_beta1() -> f64 {
    0.9
}
fn d_beta2() -> f64 {
    0.999
}
fn d_eps() -> f64 {
    1e-8
}

/// Optimizer and schedule settings. Defaults follow the paper's protocol:
/// initial rate 2.5e-4 decayed by 0.85 per epoch after epoch 5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "d_lr0")]
    pub lr0: f64,
    #[serde(default = "d_decay")]
    pub decay: f64,
    #[serde(default = "d_decay_start")]
    pub decay_start_epoch: usize,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_seed")]
    pub seed: u64,
    #[serde(default = "d_beta1")]
    pub beta1: f64,
    #[serde(default = "d_beta2")]
    pub beta2: f64,
    #[serde(default = "d_eps")]
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: d_lr0(),
            decay: d_decay(),
            decay_start_epoch: d_decay_start(),
            epochs: d_epochs(),
            batch_size: d_batch(),
            seed: d_seed(),
            beta1: d_beta1(),
            beta2: d_beta2(),
            eps: d_eps(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr0 <= 0.0 {
            return Err(Error::Input("train.lr0 must be > 0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Input("train.decay must be in (0, 1]".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Input("train.epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Input("train.batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Learning rate for a 1-based epoch index: flat at `lr0` through
/// `decay_start_epoch`, then multiplied by `decay` each following epoch.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    debug_assert!(epoch >= 1);
    if epoch <= cfg.decay_start_epoch {
        cfg.lr0
    } else {
        cfg.lr0 * cfg.decay.powi((epoch - cfg.decay_start_epoch) as i32)
    }
}

// ── Adam ─────────────────────────────────────────────────────────────

/// Adam with bias correction. Moment state is kept in f64 and updates are
/// rounded into the parameter type once per step.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig) -> Self {
        Adam { beta1: cfg.beta1, beta2: cfg.beta2, eps: cfg.eps, t: 0, m: Vec::new(), v: Vec::new() }
    }

    /// Applies one update from each tensor's accumulated gradient. Tensors
    /// without a gradient buffer are left untouched (their moments still
    /// exist but stay zero).
    pub fn step<T: Real>(&mut self, params: Vec<&mut Tensor<T>>, lr: f64) {
        if self.m.is_empty() {
            for p in &params {
                self.m.push(vec![0.0; p.numel()]);
                self.v.push(vec![0.0; p.numel()]);
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, p) in params.into_iter().enumerate() {
            let Some(grad) = p.grad() else { continue };
            let grad: Vec<f64> = grad.iter().map(|g| g.as_f64()).collect();
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            let data = p.data_mut();
            for i in 0..grad.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * grad[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let delta = lr * m_hat / (v_hat.sqrt() + self.eps);
                data[i] = T::from_f64(data[i].as_f64() - delta);
            }
        }
    }
}

// ── Records and outcomes ─────────────────────────────────────────────

/// Per-epoch log row. `seconds` is wall time and is the only field outside
/// the deterministic replay contract.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_acc: f64,
    pub val_auc: f64,
    pub seconds: f64,
}

impl EpochRecord {
    pub const CSV_HEADER: &'static str = "epoch,lr,train_loss,val_acc,val_auc,seconds";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{},{},{},{:.3}",
            self.epoch, self.lr, self.train_loss, self.val_acc, self.val_auc, self.seconds
        )
    }

    /// The replayable columns (everything except wall time).
    pub fn deterministic_fields(&self) -> (usize, f64, f64, f64, f64) {
        (self.epoch, self.lr, self.train_loss, self.val_acc, self.val_auc)
    }
}

pub struct TrainOutcome {
    pub best: Checkpoint,
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_auc: f64,
    pub records: Vec<EpochRecord>,
}

// ── Core loops ───────────────────────────────────────────────────────

fn check_set(set: &FeatureSet, model: &MixerModel<f32>, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::Input(format!("{what} set is empty")));
    }
    let want = vec![model.tokens(), model.config().patch_len()];
    for (i, p) in set.patches.iter().enumerate() {
        if p.shape() != want.as_slice() {
            return Err(Error::Input(format!(
                "{what} clip {i}: patch shape {:?}, model wants {want:?}",
                p.shape()
            )));
        }
    }
    if set.num_classes != model.config().num_classes {
        return Err(Error::Input(format!(
            "{what} set has {} classes, model has {}",
            set.num_classes,
            model.config().num_classes
        )));
    }
    if let Some(&bad) = set.labels.iter().find(|&&l| l >= set.num_classes) {
        return Err(Error::Input(format!("{what} label {bad} out of range")));
    }
    Ok(())
}

/// Logits for every clip in a set, as an `n x C` matrix.
pub fn predict_all(model: &MixerModel<f32>, set: &FeatureSet) -> Result<Tensor<f32>> {
    let c = model.config().num_classes;
    let mut data = Vec::with_capacity(set.len() * c);
    for patches in &set.patches {
        let logits = model.forward_patches(patches)?;
        data.extend_from_slice(logits.data());
    }
    Tensor::new(vec![set.len(), c], data)
}

/// Accuracy and macro AUC of a model over a feature set.
pub fn evaluate_model(model: &MixerModel<f32>, set: &FeatureSet) -> Result<(f64, f64)> {
    check_set(set, model, "eval")?;
    let logits = predict_all(model, set)?;
    let acc = accuracy(&logits, &set.labels)?;
    let probs = softmax_rows(&logits)?;
    let auc = auc_macro(&probs, &set.labels)?.auc;
    Ok((acc, auc))
}

/// Loads the checkpointed model and evaluates it.
pub fn evaluate(ckpt: &Checkpoint, set: &FeatureSet) -> Result<(f64, f64)> {
    let model = ckpt.to_model()?;
    evaluate_model(&model, set)
}

/// One gradient step over a batch of clip indices. Returns the mean loss.
fn train_batch(
    model: &mut MixerModel<f32>,
    set: &FeatureSet,
    batch: &[usize],
    adam: &mut Adam,
    lr: f64,
) -> Result<f64> {
    let mut tape: Tape<f32> = Tape::new();
    let bound = model.bind(&mut tape);
    let mut total: Option<crate::tensor::Var> = None;
    for &i in batch {
        let logits = model.forward_on(&mut tape, &bound, &set.patches[i])?;
        let loss = tape.cross_entropy(logits, &set.labels[i..=i])?;
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let total = total.expect("non-empty batch");
    tape.backward(total)?;
    model.zero_grads();
    let scale = 1.0 / batch.len() as f64;
    model.accumulate_grads(&tape, &bound, scale);
    adam.step(model.tensors_mut(), lr);
    Ok(tape.scalar_value(total) as f64 * scale)
}

/// Trains in place: per epoch, shuffle with the seeded generator, take
/// minibatch cross-entropy steps at `lr_at(epoch)`, evaluate on the
/// validation set, and retain the checkpoint of the best epoch (highest
/// val accuracy; ties broken by val AUC, then by the earlier epoch).
pub fn train(
    model: &mut MixerModel<f32>,
    train_set: &FeatureSet,
    val_set: &FeatureSet,
    cfg: &TrainConfig,
    frontend: &FrontendConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_set(train_set, model, "train")?;
    check_set(val_set, model, "val")?;

    // distinct stream from the model-init rng, still a pure function of seed
    let mut rng = SplitMix64::new(cfg.seed ^ SHUFFLE_STREAM);
    let mut adam = Adam::new(cfg);
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Checkpoint)> = None;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let lr = lr_at(epoch, cfg);
        rng.shuffle(&mut order);
        let mut loss_sum = 0f64;
        let mut batches = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            loss_sum += train_batch(model, train_set, batch, &mut adam, lr)?;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let (val_acc, val_auc) = evaluate_model(model, val_set)?;
        let seconds = started.elapsed().as_secs_f64();
        records.push(EpochRecord { epoch, lr, train_loss, val_acc, val_auc, seconds });

        let better = match &best {
            None => true,
            Some((acc, auc, _, _)) => {
                val_acc > *acc || (val_acc == *acc && val_auc > *auc)
            }
        };
        if better {
            let meta = vec![
                ("seed".into(), cfg.seed.to_string()),
                ("epoch".into(), epoch.to_string()),
                ("val_acc".into(), format!("{val_acc}")),
                ("val_auc".into(), format!("{val_auc}")),
            ];
            best = Some((val_acc, val_auc, epoch, Checkpoint::from_model(model, frontend, meta)));
        }
    }
    let (best_val_acc, best_val_auc, best_epoch, best) = best.expect("epochs >= 1");
    Ok(TrainOutcome { best, best_epoch, best_val_acc, best_val_auc, records })
}

const SHUFFLE_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

// ── Multi-seed summaries ─────────────────────────────────────────────

/// Mean and sample (n-1) standard deviation.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, sd)
}

/// `mean±sd` with four decimals, the presentation used for reported metrics.
pub fn format_mean_sd(mean: f64, sd: f64) -> String {
    format!("{mean:.4}\u{00b1}{sd:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::Activation;
    use crate::mixer::MixerConfig;

    #[test]
    fn lr_flat_then_decaying() {
        let cfg = TrainConfig { lr0: 2.5e-4, ..TrainConfig::default() };
        for e in 1..=5 {
            assert_eq!(lr_at(e, &cfg), 2.5e-4);
        }
        assert!((lr_at(6, &cfg) - 2.125e-4).abs() < 1e-18);
        let cfg2 = TrainConfig { lr0: 1e-4, ..TrainConfig::default() };
        assert!((lr_at(8, &cfg2) - 6.14125e-5).abs() / 6.14125e-5 < 1e-12);
    }

    #[test]
    fn lr_non_increasing() {
        let cfg = TrainConfig::default();
        let mut prev = f64::INFINITY;
        for e in 1..=40 {
            let lr = lr_at(e, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&cfg);
        let mut p = Tensor::vector(vec![0.5f32, -0.25, 1.0]).unwrap().with_grad();
        p.accumulate_grad(&[0.4, -0.9, 0.1]);
        let before = p.data().to_vec();
        let lr = 0.01;
        adam.step(vec![&mut p], lr);
        for i in 0..3 {
            let delta = p.data()[i] as f64 - before[i] as f64;
            let expected = -lr * (if i == 1 { -1.0 } else { 1.0 });
            assert!((delta - expected).abs() < lr * 1e-3, "delta {delta} vs {expected}");
        }
    }

    #[test]
    fn adam_zero_grad_means_zero_update() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&cfg);
        let mut p = Tensor::vector(vec![0.5f32]).unwrap().with_grad();
        p.accumulate_grad(&[0.0]);
        adam.step(vec![&mut p], 0.1);
        assert_eq!(p.data()[0], 0.5);
        assert_eq!(adam.m[0][0], 0.0);
        assert_eq!(adam.v[0][0], 0.0);
    }

    #[test]
    fn adam_converges_on_square() {
        // f(theta) = theta^2, grad = 2 theta, from theta = 1 at lr 0.1
        let cfg = TrainConfig::default();
        let mut adam = Adam::new(&cfg);
        let mut p = Tensor::vector(vec![1.0f32]).unwrap().with_grad();
        for _ in 0..100 {
            p.zero_grad();
            let g = 2.0 * p.data()[0];
            p.accumulate_grad(&[g]);
            adam.step(vec![&mut p], 0.1);
        }
        assert!(p.data()[0].abs() < 0.05, "theta = {}", p.data()[0]);
    }

    #[test]
    fn mean_sd_formatting() {
        let (m, s) = mean_sd(&[0.90, 0.92, 0.94]);
        assert_eq!(format_mean_sd(m, s), "0.9200\u{00b1}0.0200");
        let (m2, s2) = mean_sd(&[0.5, 0.5, 0.5]);
        assert_eq!(format_mean_sd(m2, s2), "0.5000\u{00b1}0.0000");
    }

    // tiny synthetic task: class-dependent constant patterns plus noise
    fn toy_sets(classes: usize, per_class: usize, seed: u64, cfg: &MixerConfig) -> FeatureSet {
        let mut rng = SplitMix64::new(seed);
        let mut patches = Vec::new();
        let mut labels = Vec::new();
        let plen = cfg.patch_len();
        let s = cfg.tokens();
        for class in 0..classes {
            for _ in 0..per_class {
                let data: Vec<f32> = (0..s * plen)
                    .map(|j| {
                        let base = if j % classes == class { 1.0 } else { -0.5 };
                        (base + rng.uniform(-0.1, 0.1)) as f32
                    })
                    .collect();
                patches.push(Tensor::new(vec![s, plen], data).unwrap());
                labels.push(class);
            }
        }
        FeatureSet { patches, labels, num_classes: classes, paths: Vec::new() }
    }

    fn toy_cfg() -> MixerConfig {
        MixerConfig {
            patch: (2, 2),
            stride: (2, 2),
            dim: 8,
            depth: 1,
            token_hidden: 4,
            channel_hidden: 16,
            activation: Activation::Gelu,
            num_classes: 3,
            input_shape: (4, 4),
        }
    }

    #[test]
    fn overfits_toy_task_and_loss_decays() {
        let mcfg = toy_cfg();
        let train_set = toy_sets(3, 8, 100, &mcfg);
        let val_set = toy_sets(3, 3, 200, &mcfg);
        let tcfg = TrainConfig {
            lr0: 2.5e-3,
            decay: 1.0,
            epochs: 40,
            batch_size: 8,
            seed: 7,
            ..TrainConfig::default()
        };
        let mut rng = SplitMix64::new(tcfg.seed);
        let mut model = MixerModel::build(mcfg, &mut rng).unwrap();
        let out = train(&mut model, &train_set, &val_set, &tcfg, &FrontendConfig::default()).unwrap();

        let logits = predict_all(&model, &train_set).unwrap();
        assert_eq!(accuracy(&logits, &train_set.labels).unwrap(), 1.0);

        let final_loss = out.records.last().unwrap().train_loss;
        assert!(final_loss < 0.05, "final loss {final_loss}");
        for w in out.records.windows(2) {
            if w[0].epoch >= 3 {
                assert!(
                    w[1].train_loss <= w[0].train_loss + 1e-9,
                    "loss rose {} -> {} at epoch {}",
                    w[0].train_loss,
                    w[1].train_loss,
                    w[1].epoch
                );
            }
        }
    }

    #[test]
    fn single_epoch_returns_that_checkpoint() {
        let mcfg = toy_cfg();
        let train_set = toy_sets(3, 4, 1, &mcfg);
        let val_set = toy_sets(3, 2, 2, &mcfg);
        let tcfg = TrainConfig { epochs: 1, batch_size: 4, ..TrainConfig::default() };
        let mut rng = SplitMix64::new(tcfg.seed);
        let mut model = MixerModel::build(mcfg, &mut rng).unwrap();
        let out = train(&mut model, &train_set, &val_set, &tcfg, &FrontendConfig::default()).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert_eq!(out.records.len(), 1);
    }

    #[test]
    fn replay_is_deterministic() {
        let mcfg = toy_cfg();
        let train_set = toy_sets(3, 6, 300, &mcfg);
        let val_set = toy_sets(3, 2, 301, &mcfg);
        let tcfg = TrainConfig { epochs: 5, batch_size: 4, seed: 9, lr0: 1e-3, ..TrainConfig::default() };
        let run = || {
            let mut rng = SplitMix64::new(tcfg.seed);
            let mut model = MixerModel::build(mcfg, &mut rng).unwrap();
            train(&mut model, &train_set, &val_set, &tcfg, &FrontendConfig::default()).unwrap()
        };
        let a = run();
        let b = run();
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.deterministic_fields(), rb.deterministic_fields());
        }
        let ba = crate::checkpoint::encode_checkpoint(&a.best);
        let bb = crate::checkpoint::encode_checkpoint(&b.best);
        assert_eq!(ba, bb);
    }

    #[test]
    fn shape_mismatch_fails_before_training() {
        let mcfg = toy_cfg();
        let other = MixerConfig { patch: (4, 4), stride: (4, 4), ..mcfg };
        let train_set = toy_sets(3, 4, 1, &other);
        let val_set = toy_sets(3, 2, 2, &other);
        let tcfg = TrainConfig::default();
        let mut rng = SplitMix64::new(1);
        let mut model = MixerModel::build(mcfg, &mut rng).unwrap();
        assert!(matches!(
            train(&mut model, &train_set, &val_set, &tcfg, &FrontendConfig::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn evaluate_matches_train_time_metrics() {
        let mcfg = toy_cfg();
        let train_set = toy_sets(3, 6, 42, &mcfg);
        let val_set = toy_sets(3, 2, 43, &mcfg);
        let tcfg = TrainConfig { epochs: 10, lr0: 2.5e-3, batch_size: 6, ..TrainConfig::default() };
        let mut rng = SplitMix64::new(tcfg.seed);
        let mut model = MixerModel::build(mcfg, &mut rng).unwrap();
        let out = train(&mut model, &train_set, &val_set, &tcfg, &FrontendConfig::default()).unwrap();
        let (acc, auc) = evaluate(&out.best, &val_set).unwrap();
        assert_eq!(acc, out.best_val_acc);
        assert_eq!(auc, out.best_val_auc);
        // twice for determinism
        let again = evaluate(&out.best, &val_set).unwrap();
        assert_eq!((acc, auc), again);
    }
}
