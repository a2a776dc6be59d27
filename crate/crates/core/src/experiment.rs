//! Train-then-evaluate runs, ablation presets and the full-objective
//! gradient check shared by the command-line driver and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{grad_check_against, Binding, GradCheckReport, Tape, Tensor, Var};
use crate::branches::{consistency_loss, mm_ce_loss, total_mm_loss, uni_modal_loss, Reduction};
use crate::cleaner::{train, TrainLog};
use crate::config::RunConfig;
use crate::datasets::FeatureSequence;
use crate::error::{ClcError, Result};
use crate::evaluation::{evaluate, VideoResult};
use crate::model::{ClcModel, ModelConfig};

/// Components that `--ablate` can switch off.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Sample cleaning (keep every shot).
    Mmc,
    /// Cross-modal propagation block.
    Cp,
    /// Consistency loss.
    Cl,
    /// Median post-processing.
    Pp,
}

impl std::str::FromStr for Ablation {
    type Err = ClcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mmc" => Ok(Self::Mmc),
            "cp" => Ok(Self::Cp),
            "cl" => Ok(Self::Cl),
            "pp" => Ok(Self::Pp),
            _ => Err(ClcError::Config(format!("unknown ablation `{s}` (mmc, cp, cl, pp)"))),
        }
    }
}

impl Ablation {
    pub fn apply(self, cfg: &mut RunConfig) {
        match self {
            Self::Mmc => cfg.tau = 1.0,
            Self::Cp => cfg.cross_propagation = false,
            Self::Cl => cfg.beta = 0.0,
            Self::Pp => cfg.filter_k = 0,
        }
    }
}

/// The cumulative grid: baseline, then cleaning, propagation, consistency
/// and post-processing switched on one after another.
pub fn ablation_ladder(full: &RunConfig) -> Vec<(&'static str, RunConfig)> {
    let with = |off: &[Ablation]| {
        let mut c = full.clone();
        for a in off {
            a.apply(&mut c);
        }
        c
    };
    use Ablation::*;
    vec![
        ("baseline", with(&[Mmc, Cp, Cl, Pp])),
        ("+mmsc", with(&[Cp, Cl, Pp])),
        ("+mmsc+cp", with(&[Cl, Pp])),
        ("+mmsc+cp+cl", with(&[Pp])),
        ("full", with(&[])),
    ]
}

pub struct RunOutcome {
    pub model: ClcModel,
    pub log: TrainLog,
    pub results: Vec<VideoResult>,
}

impl RunOutcome {
    pub fn map(&self) -> Option<f64> {
        mean_ap(&self.results)
    }
}

pub fn mean_ap(results: &[VideoResult]) -> Option<f64> {
    let aps: Vec<f64> = results.iter().filter_map(|r| r.ap).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Trains a fresh model seeded from `cfg.seed` and scores it on `test`.
pub fn train_and_evaluate(
    train_set: &[FeatureSequence],
    test_set: &[FeatureSequence],
    cfg: &RunConfig,
) -> Result<RunOutcome> {
    let first = train_set
        .first()
        .ok_or_else(|| ClcError::Contract("training set is empty".into()))?;
    let mut model = ClcModel::new(cfg.model_config(first.d_visual(), first.d_audio()), cfg.seed)?;
    let log = train(&mut model, train_set, &cfg.train_config(), None)?;
    let results = evaluate(&model, test_set, cfg.filter_k, cfg.window)?;
    Ok(RunOutcome { model, log, results })
}

/// Sizes for [`full_gradient_check`].
#[derive(Clone, Copy, Debug)]
pub struct GradCheckSizes {
    pub shots: usize,
    pub d_model: usize,
    pub hidden: usize,
    pub seed: u64,
    pub step: f64,
    /// Add a deliberate error to one analytic gradient entry.
    pub corrupt: bool,
}

impl Default for GradCheckSizes {
    fn default() -> Self {
        Self {
            shots: 6,
            d_model: 8,
            hidden: 8,
            seed: 0,
            step: 1e-5,
            corrupt: false,
        }
    }
}

/// Finite-difference check of the whole training objective (attention
/// block, three heads, both uni-modal losses and the multi-modal loss over
/// the full window). Input widths differ from `d_model` so both input
/// projections are exercised. The consistency targets are fixed at their
/// initial values, which is how training treats them.
pub fn full_gradient_check(sizes: &GradCheckSizes) -> Result<GradCheckReport> {
    let config = ModelConfig {
        d_visual: sizes.d_model + 2,
        d_audio: sizes.d_model + 3,
        d_model: sizes.d_model,
        hidden: sizes.hidden,
        cross_propagation: true,
        gate_normalize: false,
    };
    let model = ClcModel::new(config, sizes.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sizes.seed ^ 0x9C4E);
    let visual = Tensor::uniform(sizes.shots, config.d_visual, 1.0, &mut rng);
    let audio = Tensor::uniform(sizes.shots, config.d_audio, 1.0, &mut rng);
    let mut labels: Vec<u8> = (0..sizes.shots).map(|_| rng.random_range(0..=1)).collect();
    labels[0] = 0;
    if sizes.shots > 1 {
        labels[1] = 1;
    }
    let all: Vec<usize> = (0..sizes.shots).collect();

    let mut tape = Tape::new();
    let b = model.store.bind_constants(&mut tape);
    let out = model.forward(&mut tape, &b, &visual, &audio, true, false)?;
    let targets = (
        tape.value(out.visual.expect("heads")).clone(),
        tape.value(out.audio.expect("heads")).clone(),
    );

    let objective = |tape: &mut Tape, b: &Binding| -> Result<Var> {
        let out = model.forward(tape, b, &visual, &audio, true, false)?;
        let red = Reduction::Sum;
        let um_v = uni_modal_loss(tape, out.visual.expect("heads"), &labels, red)?;
        let um_a = uni_modal_loss(tape, out.audio.expect("heads"), &labels, red)?;
        let ce = mm_ce_loss(tape, out.mm, &labels, &all, red)?;
        let cons = consistency_loss(tape, out.mm, &targets.0, &targets.1, &all, red)?;
        let mm = total_mm_loss(tape, ce, cons, 0.1)?;
        let uni = tape.add(um_v, um_a)?;
        tape.add(mm, uni)
    };

    let mut tape = Tape::new();
    let b = model.store.bind(&mut tape);
    let loss = objective(&mut tape, &b)?;
    let grads = tape.backward(loss)?;
    let mut analytic = b.collect(&tape, &grads);
    if sizes.corrupt {
        analytic[0].data_mut()[0] += 1.0;
    }
    grad_check_against(&model.store, sizes.step, &analytic, objective)
}
