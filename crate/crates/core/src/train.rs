//! Supervised training and gradient-reversal domain adaptation.

use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{timestamp_now, Sample};
use crate::error::{Error, Result};
use crate::losses::{domain_bce_grad, domain_bce_loss, safety_data_loss, safety_loss_grad, LossConfig};
use crate::model::checkpoint::Checkpoint;
use crate::model::{frames_to_batch, ModelSpec, TraversabilityNet};
use crate::optim::{Adam, AdamConfig, SgdConfig, SgdMomentum};
use crate::synth::derive_seed;
use crate::types::ImageFrame;

/// Which epoch's parameters a training run returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointPolicy {
    /// Lowest training MAE, earliest epoch on ties.
    #[default]
    BestTrainMae,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub main_optimizer: AdamConfig,
    pub domain_optimizer: SgdConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub checkpoint_policy: CheckpointPolicy,
    pub model: ModelSpec,
    /// Pretrained encoder tensors imported after initialization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_weights: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 16,
            main_optimizer: AdamConfig::default(),
            domain_optimizer: SgdConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_policy: CheckpointPolicy::default(),
            model: ModelSpec::default(),
            encoder_weights: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        let lrs = [self.main_optimizer.lr, self.domain_optimizer.lr];
        if lrs.iter().any(|lr| !(*lr > 0.0 && lr.is_finite())) {
            return Err(Error::config(format!("learning rates must be > 0, got {lrs:?}")));
        }
        let b = &self.main_optimizer;
        if !(0.0..1.0).contains(&b.beta1) || !(0.0..1.0).contains(&b.beta2) || b.eps <= 0.0 {
            return Err(Error::config("adam betas must lie in [0, 1) and eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.domain_optimizer.momentum) {
            return Err(Error::config("momentum must lie in [0, 1)"));
        }
        self.loss.validate()?;
        self.model.validate()
    }
}

/// One line of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mae: f64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_acc: Option<f64>,
    /// Domain accuracy on the held-out mixed set, when one was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_domain_acc: Option<f64>,
    pub timestamp: u64,
}

/// Source data with labels plus unlabelled target images.
///
/// The target side holds frames only, so target annotations cannot leak into training.
#[derive(Debug, Clone)]
pub struct AdaptationSetup {
    pub source: Vec<Sample>,
    pub target: Vec<ImageFrame>,
    /// Optional held-out (source, target) frames for tracking domain confusion.
    pub holdout: Option<(Vec<ImageFrame>, Vec<ImageFrame>)>,
}

impl AdaptationSetup {
    pub const SOURCE_LABEL: f32 = 0.0;
    pub const TARGET_LABEL: f32 = 1.0;
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the selected epoch.
    pub checkpoint: Checkpoint,
    /// Parameters after the last epoch.
    pub final_model: TraversabilityNet<f32>,
    pub log: Vec<EpochRecord>,
}

/// Index of the record chosen by `policy`. Pure, so re-running it on a stored log
/// reproduces the choice made during training.
pub fn select_checkpoint_epoch(log: &[EpochRecord], policy: CheckpointPolicy) -> Option<usize> {
    match policy {
        CheckpointPolicy::LastEpoch => log.last().map(|r| r.epoch),
        CheckpointPolicy::BestTrainMae => log
            .iter()
            .filter(|r| r.train_mae.is_finite())
            .fold(None::<&EpochRecord>, |best, r| match best {
                Some(b) if b.train_mae <= r.train_mae => Some(b),
                _ => Some(r),
            })
            .map(|r| r.epoch),
    }
}

/// Mean absolute error between targets and predictions clamped to `[0, 1]`.
pub fn mean_absolute_error(targets: &[&[f64]], predictions: &[&[f64]]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Empty("no frames to evaluate".into()));
    }
    if targets.len() != predictions.len() {
        return Err(Error::shape(
            format!("{} predictions", targets.len()),
            format!("{} predictions", predictions.len()),
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (t, p) in targets.iter().zip(predictions) {
        if t.len() != p.len() {
            return Err(Error::shape(format!("{} sections", t.len()), format!("{} sections", p.len())));
        }
        for (a, b) in t.iter().zip(p.iter()) {
            let b = if b.is_nan() { 0.0 } else { b.clamp(0.0, 1.0) };
            sum += (a - b).abs();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Raw model outputs for `frames`, evaluated in batches of `batch_size`.
pub fn predict(model: &TraversabilityNet<f32>, frames: &[&ImageFrame], batch_size: usize) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(batch_size.max(1)) {
        let x = frames_to_batch(chunk.iter().copied())?;
        let y = model.forward_traversability(&x)?;
        out.extend(y.rows().into_iter().map(|r| r.iter().map(|&v| v as f64).collect::<Vec<_>>()));
    }
    Ok(out)
}

fn labelled(samples: &[Sample]) -> Result<Vec<&[f64]>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.scores
                .as_ref()
                .map(|v| v.scores())
                .ok_or_else(|| Error::config(format!("sample {i} has no annotation")))
        })
        .collect()
}

/// MAE of `model` (evaluation mode) over an annotated dataset.
pub fn evaluate_epoch(model: &TraversabilityNet<f32>, samples: &[Sample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("empty evaluation set".into()));
    }
    let targets = labelled(samples)?;
    let frames: Vec<&ImageFrame> = samples.iter().map(|s| &s.frame).collect();
    let preds = predict(model, &frames, 16)?;
    let preds: Vec<&[f64]> = preds.iter().map(Vec::as_slice).collect();
    mean_absolute_error(&targets, &preds)
}

/// Fraction of frames the domain classifier assigns to the right domain (evaluation mode).
pub fn domain_accuracy(model: &TraversabilityNet<f32>, source: &[ImageFrame], target: &[ImageFrame]) -> Result<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for (frames, label) in [(source, false), (target, true)] {
        for chunk in frames.chunks(16) {
            let x = frames_to_batch(chunk)?;
            let probs = model.forward_domain(&model.shared_features(&x)?)?;
            correct += probs.iter().filter(|&&p| (p > 0.5) == label).count();
            total += chunk.len();
        }
    }
    if total == 0 {
        return Err(Error::Empty("no frames for domain accuracy".into()));
    }
    Ok(correct as f64 / total as f64)
}

fn targets_of(samples: &[&Sample], k: usize) -> Result<Array2<f32>> {
    let mut t = Array2::<f32>::zeros((samples.len(), k));
    for (i, s) in samples.iter().enumerate() {
        let scores = s
            .scores
            .as_ref()
            .ok_or_else(|| Error::config("training sample without annotation"))?;
        if scores.k() != k {
            return Err(Error::shape(format!("{k} sections"), format!("{} sections", scores.k())));
        }
        for (j, &v) in scores.scores().iter().enumerate() {
            t[[i, j]] = v as f32;
        }
    }
    Ok(t)
}

struct StepStats {
    loss: f64,
    abs_err: f64,
    count: usize,
    domain_correct: usize,
    domain_total: usize,
}

/// Mutable training state shared by both procedures.
struct Trainer<'a> {
    cfg: &'a TrainConfig,
    model: TraversabilityNet<f32>,
    adam: Adam<f32>,
    sgd: SgdMomentum<f32>,
}

impl<'a> Trainer<'a> {
    fn new(cfg: &'a TrainConfig) -> Result<Self> {
        let mut model = TraversabilityNet::<f32>::new(cfg.model.clone(), derive_seed(cfg.seed, 10))?;
        if let Some(path) = &cfg.encoder_weights {
            let n = crate::model::checkpoint::import_encoder_weights(&mut model, path)?;
            log::info!("imported {n} encoder tensors from {}", path.display());
        }
        let main_sizes: Vec<usize> = model.main_params().iter().map(|p| p.data.len()).collect();
        let domain_sizes: Vec<usize> = model.domain_params().iter().map(|p| p.data.len()).collect();
        Ok(Self {
            cfg,
            adam: Adam::new(cfg.main_optimizer, &main_sizes),
            sgd: SgdMomentum::new(cfg.domain_optimizer, &domain_sizes),
            model,
        })
    }

    /// One optimizer step. The regression loss uses `source`; when `mixed` is
    /// given, the domain loss on it updates the classifier and (through the
    /// reversal layer) the shared features.
    fn step(
        &mut self,
        source: &[&Sample],
        mixed: Option<(&Array4<f32>, &Array1<f32>)>,
        epoch: usize,
        step: usize,
    ) -> Result<StepStats> {
        self.step_with(source, mixed, true, epoch, step)
    }

    /// `regression = false` drops the regression gradient (used to audit which
    /// parameters each loss reaches).
    fn step_with(
        &mut self,
        source: &[&Sample],
        mixed: Option<(&Array4<f32>, &Array1<f32>)>,
        regression: bool,
        epoch: usize,
        step: usize,
    ) -> Result<StepStats> {
        let k = self.model.k();
        let loss_cfg = self.cfg.loss;
        let x = frames_to_batch(source.iter().map(|s| &s.frame))?;
        let t = targets_of(source, k)?;
        let tape = self.model.features_with_tape(&x, true)?;
        let pred = self.model.regress(tape.features().view());
        let alpha = loss_cfg.effective_alpha();
        let data_loss = safety_data_loss(t.view(), pred.view(), alpha)?;
        let reg = loss_cfg.lambda * self.model.main_params_sq_norm();
        let mut loss = data_loss + reg;
        let diverged = |detail: String| Error::Diverged { epoch, step, detail };
        if !loss.is_finite() {
            return Err(diverged(format!("regression loss is {loss}")));
        }
        let abs_err: f64 = ndarray::Zip::from(&t)
            .and(&pred)
            .fold(0.0, |acc, &a, &b| acc + (a as f64 - (b as f64).clamp(0.0, 1.0)).abs());

        let mut grads = self.model.zeros_like();
        if regression {
            let d_pred = safety_loss_grad(t.view(), pred.view(), alpha)?;
            let d_feat = self.model.regress_backward(tape.features().view(), &d_pred, &mut grads);
            self.model.features_backward(&tape, &d_feat, &mut grads);
        }

        let (mut domain_correct, mut domain_total) = (0, 0);
        let mut mixed_tape = None;
        if let Some((xm, labels)) = mixed {
            let mtape = self.model.features_with_tape(xm, true)?;
            let dtape = self.model.domain_with_tape(mtape.features())?;
            let probs = dtape.probs();
            let dloss = domain_bce_loss(probs.view(), labels.view())?;
            if !dloss.is_finite() {
                return Err(diverged(format!("domain loss is {dloss}")));
            }
            loss += dloss;
            domain_correct = probs
                .iter()
                .zip(labels)
                .filter(|(&p, &l)| (p > 0.5) == (l > 0.5))
                .count();
            domain_total = labels.len();
            let d_probs = domain_bce_grad(probs.view(), labels.view())?;
            let d_mixed = self.model.domain_backward(&dtape, &d_probs, &mut grads);
            self.model.features_backward(&mtape, &d_mixed, &mut grads);
            mixed_tape = Some(mtape);
        }

        if loss_cfg.lambda > 0.0 {
            let two_lambda = (2.0 * loss_cfg.lambda) as f32;
            let params = self.model.main_params();
            for (g, p) in grads.main_params_mut().into_iter().zip(params) {
                for (gi, pi) in g.iter_mut().zip(p.data) {
                    *gi += two_lambda * pi;
                }
            }
        }
        let main_grads: Vec<&[f32]> = grads.main_params().into_iter().map(|p| p.data).collect();
        self.adam.step(self.model.main_params_mut(), main_grads);
        if mixed.is_some() {
            let domain_grads: Vec<&[f32]> = grads.domain_params().into_iter().map(|p| p.data).collect();
            self.sgd.step(self.model.domain_params_mut(), domain_grads);
        }
        // Both training-mode passes feed the running statistics, in forward order.
        self.model.update_running_stats(&tape);
        if let Some(mtape) = &mixed_tape {
            self.model.update_running_stats(mtape);
        }
        if !self.model.all_finite() {
            return Err(diverged("non-finite parameters after optimizer step".into()));
        }
        Ok(StepStats {
            loss,
            abs_err,
            count: t.len(),
            domain_correct,
            domain_total,
        })
    }

    fn snapshot(&self, epoch: usize, with_domain: bool) -> Checkpoint {
        let mut ck = Checkpoint::new(self.model.clone(), epoch, self.cfg.seed);
        ck.optimizers.push(("main".into(), self.adam.state()));
        if with_domain {
            ck.optimizers.push(("domain".into(), self.sgd.state()));
        }
        ck.metadata = serde_json::to_value(self.cfg).unwrap_or(serde_json::Value::Null);
        ck
    }
}

fn check_source(samples: &[Sample], cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    for (i, s) in samples.iter().enumerate() {
        match &s.scores {
            None => return Err(Error::config(format!("training sample {i} has no annotation"))),
            Some(v) if v.k() != cfg.model.k() => {
                return Err(Error::shape(
                    format!("{} sections", cfg.model.k()),
                    format!("{} sections in sample {i}", v.k()),
                ))
            }
            _ => {}
        }
    }
    Ok(())
}

type EpochHook<'h> = &'h mut dyn FnMut(&EpochRecord) -> Result<()>;

/// Supervised training on annotated samples.
///
/// `on_epoch` is called after every epoch, e.g. to append the record to a log file.
pub fn train_supervised(samples: &[Sample], cfg: &TrainConfig, on_epoch: Option<EpochHook>) -> Result<TrainOutcome> {
    check_source(samples, cfg)?;
    run(samples, None, cfg, on_epoch)
}

/// Source regression plus gradient-reversal domain confusion against unlabelled target frames.
pub fn train_adaptation(
    setup: &AdaptationSetup,
    cfg: &TrainConfig,
    on_epoch: Option<EpochHook>,
) -> Result<TrainOutcome> {
    check_source(&setup.source, cfg)?;
    if setup.target.is_empty() {
        return Err(Error::Empty("target set is empty".into()));
    }
    run(&setup.source, Some(setup), cfg, on_epoch)
}

fn run(
    samples: &[Sample],
    setup: Option<&AdaptationSetup>,
    cfg: &TrainConfig,
    mut on_epoch: Option<EpochHook>,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(cfg)?;
    // Independent streams: the source order does not depend on whether adaptation is on.
    let mut source_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 11));
    let mut target_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 12));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut target_order: Vec<usize> = setup.map(|s| (0..s.target.len()).collect()).unwrap_or_default();
    let mut target_pos = target_order.len();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Checkpoint)> = None;
    let adapt = setup.is_some();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut source_rng);
        let (mut loss, mut abs_err, mut count, mut dc, mut dt) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let mixed = match setup {
                None => None,
                Some(setup) => {
                    let half_source = batch.len().div_ceil(2);
                    let half_target = batch.len() - half_source;
                    let mut frames: Vec<&ImageFrame> = batch[..half_source].iter().map(|s| &s.frame).collect();
                    for _ in 0..half_target.max(1) {
                        if target_pos == target_order.len() {
                            target_order.shuffle(&mut target_rng);
                            target_pos = 0;
                        }
                        frames.push(&setup.target[target_order[target_pos]]);
                        target_pos += 1;
                    }
                    let mut labels = Array1::from_elem(frames.len(), AdaptationSetup::TARGET_LABEL);
                    labels.slice_mut(ndarray::s![..half_source]).fill(AdaptationSetup::SOURCE_LABEL);
                    Some((frames_to_batch(frames)?, labels))
                }
            };
            let stats = trainer.step(&batch, mixed.as_ref().map(|(x, l)| (x, l)), epoch, step)?;
            loss += stats.loss;
            abs_err += stats.abs_err;
            count += stats.count;
            dc += stats.domain_correct;
            dt += stats.domain_total;
        }
        let holdout_domain_acc = match setup.and_then(|s| s.holdout.as_ref()) {
            Some((src, tgt)) => Some(domain_accuracy(&trainer.model, src, tgt)?),
            None => None,
        };
        let record = EpochRecord {
            epoch,
            train_mae: abs_err / count as f64,
            train_loss: loss,
            domain_acc: adapt.then(|| dc as f64 / dt.max(1) as f64),
            holdout_domain_acc,
            timestamp: timestamp_now(),
        };
        log::debug!("epoch {epoch}: mae {:.4} loss {:.4}", record.train_mae, record.train_loss);
        log.push(record);
        if let Some(hook) = on_epoch.as_mut() {
            hook(log.last().expect("just pushed"))?;
        }
        let chosen = select_checkpoint_epoch(&log, cfg.checkpoint_policy);
        if chosen == Some(epoch) {
            best = Some((epoch, trainer.snapshot(epoch, adapt)));
        }
    }
    let (_, checkpoint) = best.ok_or_else(|| Error::Diverged {
        epoch: cfg.epochs,
        step: 0,
        detail: "no epoch produced a finite training error".into(),
    })?;
    Ok(TrainOutcome {
        checkpoint,
        final_model: trainer.model,
        log,
    })
}

/// Appends one record as a JSON line.
pub fn append_epoch_record(path: &Path, record: &EpochRecord) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_vec(record)?;
    line.push(b'\n');
    f.write_all(&line)?;
    Ok(())
}

pub fn read_epoch_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}
