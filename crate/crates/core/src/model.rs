//! The full network: shared feature block feeding three temporal heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::acp::{acp_forward, project_audio, visual_input, AcpOutput, AcpParams};
use crate::autodiff::{Binding, ParamStore, Tape, Tensor, Var};
use crate::branches::{head_forward, TemporalHead};
use crate::error::{ClcError, Result};

/// Dimensions and structural switches fixed at construction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub d_visual: usize,
    pub d_audio: usize,
    pub d_model: usize,
    pub hidden: usize,
    /// When off, the attention block is bypassed and the heads read the
    /// (projected) input features directly.
    pub cross_propagation: bool,
    /// Divide the cross-correlation row mass by the window length.
    pub gate_normalize: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_visual", self.d_visual),
            ("d_audio", self.d_audio),
            ("d_model", self.d_model),
            ("hidden", self.hidden),
        ] {
            if v == 0 {
                return Err(ClcError::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ClcModel {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub acp: AcpParams,
    pub mm_head: TemporalHead,
    pub visual_head: TemporalHead,
    pub audio_head: TemporalHead,
}

/// Tape handles for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    pub v_bar: Var,
    pub a_bar: Var,
    pub acp: Option<AcpOutput>,
    pub mm: Var,
    pub visual: Option<Var>,
    pub audio: Option<Var>,
}

impl ClcModel {
    /// Seeded fan-in initialization; the parameter order is fixed by the
    /// construction order here and is the checkpoint order.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.d_model;
        let acp = AcpParams::new(&mut store, config.d_visual, config.d_audio, d, &mut rng);
        let mm_head = TemporalHead::new(&mut store, "head_mm", 2 * d, config.hidden, &mut rng);
        let visual_head = TemporalHead::new(&mut store, "head_visual", d, config.hidden, &mut rng);
        let audio_head = TemporalHead::new(&mut store, "head_audio", d, config.hidden, &mut rng);
        Ok(Self {
            config,
            store,
            acp,
            mm_head,
            visual_head,
            audio_head,
        })
    }

    fn check_inputs(&self, visual: &Tensor, audio: &Tensor) -> Result<()> {
        let c = &self.config;
        if visual.cols() != c.d_visual || audio.cols() != c.d_audio {
            return Err(ClcError::shape(
                "model_forward",
                format!(
                    "features {}/{} columns, model expects {}/{}",
                    visual.cols(),
                    audio.cols(),
                    c.d_visual,
                    c.d_audio
                ),
            ));
        }
        if visual.rows() != audio.rows() || visual.rows() == 0 {
            return Err(ClcError::shape(
                "model_forward",
                format!("{} visual vs {} audio shots", visual.rows(), audio.rows()),
            ));
        }
        Ok(())
    }

    /// Shared features `(v̄, ā)`.
    pub fn features(
        &self,
        tape: &mut Tape,
        b: &Binding,
        visual: Var,
        audio: Var,
    ) -> Result<(Var, Var, Option<AcpOutput>)> {
        if self.config.cross_propagation {
            let out = acp_forward(tape, b, &self.acp, visual, audio, self.config.gate_normalize)?;
            Ok((out.v_bar, out.a_bar, Some(out)))
        } else {
            let v = visual_input(tape, b, &self.acp, visual)?;
            let a = project_audio(tape, b, audio, &self.acp.audio_proj)?;
            Ok((v, a, None))
        }
    }

    /// Forward over one window. With `unimodal` set the two uni-modal heads
    /// also run; `detach_unimodal` stops their gradients at the shared
    /// features.
    pub fn forward(
        &self,
        tape: &mut Tape,
        b: &Binding,
        visual: &Tensor,
        audio: &Tensor,
        unimodal: bool,
        detach_unimodal: bool,
    ) -> Result<ForwardOutput> {
        self.check_inputs(visual, audio)?;
        let vx = tape.constant(visual.clone());
        let ax = tape.constant(audio.clone());
        let (v_bar, a_bar, acp) = self.features(tape, b, vx, ax)?;
        let joint = tape.concat_cols(&[v_bar, a_bar])?;
        let mm = head_forward(tape, b, &self.mm_head, joint)?;
        let (visual_out, audio_out) = if unimodal {
            let (vu, au) = if detach_unimodal {
                (tape.detach(v_bar), tape.detach(a_bar))
            } else {
                (v_bar, a_bar)
            };
            (
                Some(head_forward(tape, b, &self.visual_head, vu)?),
                Some(head_forward(tape, b, &self.audio_head, au)?),
            )
        } else {
            (None, None)
        };
        Ok(ForwardOutput {
            v_bar,
            a_bar,
            acp,
            mm,
            visual: visual_out,
            audio: audio_out,
        })
    }

    /// Multi-modal class probabilities for one window (inference path).
    pub fn predict_window(&self, visual: &Tensor, audio: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &b, visual, audio, false, false)?;
        Ok(tape.value(out.mm).clone())
    }

    /// Highlight-class curve over a whole sequence, run in consecutive
    /// non-overlapping windows of `window` shots.
    pub fn predict_curve(&self, visual: &Tensor, audio: &Tensor, window: usize) -> Result<Vec<f64>> {
        if window == 0 {
            return Err(ClcError::Config("window must be positive".into()));
        }
        let t = visual.rows();
        let mut curve = Vec::with_capacity(t);
        let mut start = 0;
        while start < t {
            let len = window.min(t - start);
            let probs = self.predict_window(&visual.slice_rows(start, len), &audio.slice_rows(start, len))?;
            curve.extend((0..len).map(|i| probs.get(i, 1)));
            start += len;
        }
        Ok(curve)
    }

    /// Binds parameters as constants (no gradient bookkeeping).
    fn bind_frozen(&self, tape: &mut Tape) -> Binding {
        self.store.bind_constants(tape)
    }
}
