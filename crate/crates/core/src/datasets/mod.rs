//! Per-video feature sequences, their binary file format, and a synthetic
//! benchmark with controllable label noise.

mod format;
mod synth;

pub use format::{decode_features, encode_features, load_features, write_features, FEATURE_MAGIC, FEATURE_VERSION};
pub(crate) use format::Reader;
pub(crate) use synth::{shuffled, sub_seed};
pub use synth::{inject_noise, synth_generate, NoiseSpec, SynthConfig, SynthData, SYNTH_KEYS};

use crate::autodiff::Tensor;
use crate::error::{ClcError, Result};
use crate::labelgen::ShotTable;

/// One video: per-shot visual and audio features with optional labels.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub id: String,
    /// `T×d_v`
    pub visual: Tensor,
    /// `T×d_a`
    pub audio: Tensor,
    pub labels: Option<Vec<u8>>,
    pub shots: Option<ShotTable>,
}

impl FeatureSequence {
    pub fn new(id: impl Into<String>, visual: Tensor, audio: Tensor, labels: Option<Vec<u8>>) -> Result<Self> {
        let seq = Self {
            id: id.into(),
            visual,
            audio,
            labels,
            shots: None,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn len(&self) -> usize {
        self.visual.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.visual.rows() == 0
    }

    pub fn d_visual(&self) -> usize {
        self.visual.cols()
    }

    pub fn d_audio(&self) -> usize {
        self.audio.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.visual.rows();
        if self.audio.rows() != t {
            return Err(ClcError::shape(
                "feature_sequence",
                format!("{}: {t} visual rows vs {} audio rows", self.id, self.audio.rows()),
            ));
        }
        if !self.visual.is_finite() || !self.audio.is_finite() {
            return Err(ClcError::NonFinite { op: "feature_sequence" });
        }
        if let Some(labels) = &self.labels {
            if labels.len() != t {
                return Err(ClcError::shape(
                    "feature_sequence",
                    format!("{}: {} labels for {t} shots", self.id, labels.len()),
                ));
            }
            if labels.iter().any(|&g| g > 1) {
                return Err(ClcError::Contract(format!("{}: labels must be 0 or 1", self.id)));
            }
        }
        if let Some(shots) = &self.shots {
            if shots.len() != t {
                return Err(ClcError::shape(
                    "feature_sequence",
                    format!("{}: shot table has {} rows for {t} shots", self.id, shots.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Result<&[u8]> {
        self.labels
            .as_deref()
            .ok_or_else(|| ClcError::Contract(format!("video {} has no labels", self.id)))
    }
}
