//! Small-loss sample selection per modality and the training loop built
//! around it.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{Tape, Tensor};
use crate::branches::{
    consistency_loss, mm_ce_loss, per_sample_losses, total_mm_loss, uni_modal_loss, LossBundle,
    Reduction,
};
use crate::datasets::{shuffled, sub_seed, FeatureSequence};
use crate::error::{ClcError, Result};
use crate::evaluation::evaluate;
use crate::model::ClcModel;

const SALT_EPOCH: u64 = 0xE90C_0000_0000_0005;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Fraction of each window kept per modality, in (0, 1].
    pub tau: f64,
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Shots per window.
    pub window: usize,
    pub seed: u64,
    pub unimodal_updates_acp: bool,
    pub reduction: Reduction,
    /// Global gradient-norm bound, if any.
    pub grad_clip: Option<f64>,
    /// Median half-width used for the per-epoch validation score.
    pub filter_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            tau: 0.65,
            beta: 0.1,
            learning_rate: 0.01,
            epochs: 50,
            window: 128,
            seed: 0,
            unimodal_updates_acp: false,
            reduction: Reduction::Sum,
            grad_clip: None,
            filter_k: 9,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(ClcError::Config(format!("tau must be in (0, 1], got {}", self.tau)));
        }
        if !(self.beta >= 0.0) {
            return Err(ClcError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(ClcError::Config("learning_rate must be positive".into()));
        }
        if self.window == 0 {
            return Err(ClcError::Config("window must be at least 1".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(ClcError::Config("grad_clip must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `⌈τ·n⌉`, treating products within 1e-9 of an integer as that integer so
/// that e.g. `0.3·10` keeps 3 rather than 4.
pub fn clean_count(n: usize, tau: f64) -> usize {
    let x = tau * n as f64;
    let r = x.round();
    let c = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (c as usize).clamp(usize::from(n > 0), n)
}

/// Indices of the `⌈τ·N⌉` smallest losses (lower index first on ties),
/// returned in ascending index order.
pub fn select_clean(losses: &[f64], tau: f64) -> Result<Vec<usize>> {
    if losses.is_empty() {
        return Err(ClcError::Contract("select_clean on an empty batch".into()));
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(ClcError::Contract(format!("tau must be in (0, 1], got {tau}")));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(ClcError::NonFinite { op: "select_clean" });
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    order.truncate(clean_count(losses.len(), tau));
    order.sort_unstable();
    Ok(order)
}

/// Sorted union of two index sets.
pub fn union_selection(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct BatchSelection {
    pub visual: Vec<usize>,
    pub audio: Vec<usize>,
    pub union: Vec<usize>,
}

impl BatchSelection {
    pub fn new(visual: Vec<usize>, audio: Vec<usize>) -> Self {
        let union = union_selection(&visual, &audio);
        Self { visual, audio, union }
    }

    /// `|Nᵛ ∩ Nᵃ|`
    pub fn overlap(&self) -> usize {
        self.visual.len() + self.audio.len() - self.union.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub losses: LossBundle,
    pub selection: BatchSelection,
}

fn clip_global_norm(grads: &mut [Tensor], bound: f64) {
    let norm = grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt();
    if norm > bound {
        let s = bound / norm;
        for g in grads {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

/// One SGD update on a single labelled window.
///
/// The uni-modal heads read detached copies of the shared features (unless
/// `unimodal_updates_acp`), so a single backward pass through the summed
/// objective routes each loss only to the parameters it is meant to train.
pub fn train_step(
    model: &mut ClcModel,
    visual: &Tensor,
    audio: &Tensor,
    labels: &[u8],
    cfg: &TrainConfig,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let b = model.store.bind(&mut tape);
    let out = model.forward(&mut tape, &b, visual, audio, true, !cfg.unimodal_updates_acp)?;
    let (pv, pa) = match (out.visual, out.audio) {
        (Some(v), Some(a)) => (v, a),
        _ => unreachable!("uni-modal heads requested"),
    };
    let target_v = tape.value(pv).clone();
    let target_a = tape.value(pa).clone();

    let selection = BatchSelection::new(
        select_clean(&per_sample_losses(&target_v, labels), cfg.tau)?,
        select_clean(&per_sample_losses(&target_a, labels), cfg.tau)?,
    );

    let um_v = uni_modal_loss(&mut tape, pv, labels, cfg.reduction)?;
    let um_a = uni_modal_loss(&mut tape, pa, labels, cfg.reduction)?;
    let ce = mm_ce_loss(&mut tape, out.mm, labels, &selection.union, cfg.reduction)?;
    let cons = consistency_loss(&mut tape, out.mm, &target_v, &target_a, &selection.union, cfg.reduction)?;
    let mm = total_mm_loss(&mut tape, ce, cons, cfg.beta)?;
    let uni = tape.add(um_v, um_a)?;
    let total = tape.add(mm, uni)?;

    let losses = LossBundle {
        unimodal_visual: tape.value(um_v).item(),
        unimodal_audio: tape.value(um_a).item(),
        mm_ce: tape.value(ce).item(),
        mm_consistency: tape.value(cons).item(),
        mm_total: tape.value(mm).item(),
        beta: cfg.beta,
    };
    if !tape.value(total).item().is_finite() {
        return Err(ClcError::NonFinite { op: "train_step loss" });
    }

    let grads = tape.backward(total)?;
    let mut g = b.collect(&tape, &grads);
    if let Some(bound) = cfg.grad_clip {
        clip_global_norm(&mut g, bound);
    }
    model.store.sgd_step(&g, cfg.learning_rate)?;
    Ok(StepOutcome { losses, selection })
}

/// A window is `len` consecutive shots of video `video` starting at `start`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub video: usize,
    pub start: usize,
    pub len: usize,
}

/// Consecutive non-overlapping windows over every video; tails kept short.
pub fn windows(videos: &[FeatureSequence], window: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (v, seq) in videos.iter().enumerate() {
        let mut start = 0;
        while start < seq.len() {
            let len = window.min(seq.len() - start);
            out.push(Window { video: v, start, len });
            start += len;
        }
    }
    out
}

/// Window order for one epoch; a pure function of seed and epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, SALT_EPOCH, epoch as u64));
    shuffled(n, &mut rng)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub video: String,
    pub start: usize,
    pub len: usize,
    pub losses: LossBundle,
    pub clean: usize,
    pub overlap: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub windows: usize,
    /// Mean over the epoch's windows.
    pub losses: LossBundle,
    pub mean_clean: f64,
    pub mean_overlap: f64,
    pub val_map: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Every update in order; kept in memory only.
    pub steps: Vec<StepRecord>,
}

impl TrainLog {
    /// Header line, then one JSON object per epoch.
    pub fn to_jsonl(&self, fingerprint: &str) -> String {
        let mut out = String::new();
        let header = serde_json::json!({ "record": "header", "fingerprint": fingerprint });
        let _ = writeln!(out, "{header}");
        for e in &self.epochs {
            let mut v = serde_json::to_value(e).expect("epoch record serializes");
            v["record"] = "epoch".into();
            let _ = writeln!(out, "{v}");
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>, fingerprint: &str) -> Result<()> {
        fs::write(path, self.to_jsonl(fingerprint))?;
        Ok(())
    }

    /// Multi-modal objective of every step, in order.
    pub fn mm_trajectory(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.losses.mm_total).collect()
    }
}

/// Runs `cfg.epochs` passes over shuffled windows of `train`. When
/// `validation` is given, its mAP is recorded after every epoch.
pub fn train(
    model: &mut ClcModel,
    train: &[FeatureSequence],
    cfg: &TrainConfig,
    validation: Option<&[FeatureSequence]>,
) -> Result<TrainLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ClcError::Contract("training set is empty".into()));
    }
    for v in train {
        v.labels()?;
    }
    let all = windows(train, cfg.window);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let mut sum = LossBundle::default();
        let (mut clean, mut overlap) = (0usize, 0usize);
        for (step, &w) in epoch_order(all.len(), cfg.seed, epoch).iter().enumerate() {
            let win = all[w];
            let seq = &train[win.video];
            let labels = &seq.labels()?[win.start..win.start + win.len];
            let outcome = train_step(
                model,
                &seq.visual.slice_rows(win.start, win.len),
                &seq.audio.slice_rows(win.start, win.len),
                labels,
                cfg,
            )
            .map_err(|e| ClcError::Training {
                epoch,
                step,
                source: Box::new(e),
            })?;
            sum.accumulate(&outcome.losses);
            clean += outcome.selection.union.len();
            overlap += outcome.selection.overlap();
            log.steps.push(StepRecord {
                epoch,
                step,
                video: seq.id.clone(),
                start: win.start,
                len: win.len,
                losses: outcome.losses,
                clean: outcome.selection.union.len(),
                overlap: outcome.selection.overlap(),
            });
        }
        let n = all.len() as f64;
        let mean = LossBundle {
            unimodal_visual: sum.unimodal_visual / n,
            unimodal_audio: sum.unimodal_audio / n,
            mm_ce: sum.mm_ce / n,
            mm_consistency: sum.mm_consistency / n,
            mm_total: sum.mm_total / n,
            beta: cfg.beta,
        };
        let val_map = match validation {
            Some(val) => {
                let results = evaluate(model, val, cfg.filter_k, cfg.window)?;
                let aps: Vec<f64> = results.iter().filter_map(|r| r.ap).collect();
                (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
            }
            None => None,
        };
        log.epochs.push(EpochRecord {
            epoch,
            windows: all.len(),
            losses: mean,
            mean_clean: clean as f64 / n,
            mean_overlap: overlap as f64 / n,
            val_map,
        });
    }
    Ok(log)
}
