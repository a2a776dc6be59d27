//! Augmented cross-propagation: audio projection, per-modality
//! self-attention, cross-modal attention gated by the ReLU cross-correlation
//! row mass, and fusion into updated visual/audio features.
//!
//! Every attention is single-head with no positional term, so the block is
//! equivariant under any permutation of the shots.

use rand::Rng;

use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{ClcError, Result};

/// Affine layer `x · weight + bias` with `weight: in×out`, `bias: 1×out`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Uniform fan-in initialization in `[-1/√fan_in, 1/√fan_in]`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::uniform(fan_in, fan_out, bound, rng),
        );
        let bias = store.add(format!("{name}.bias"), Tensor::uniform(1, fan_out, bound, rng));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, b: &Binding, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.fan_in {
            return Err(ClcError::shape(
                "linear",
                format!("input has {cols} columns, layer expects {}", self.fan_in),
            ));
        }
        tape.affine(x, b.var(self.weight), b.var(self.bias))
    }
}

/// `linear(3d→d) → ReLU → linear(d→d)` over the column concatenation of its
/// three inputs.
#[derive(Clone, Copy, Debug)]
pub struct Fusion {
    pub first: Linear,
    pub second: Linear,
}

impl Fusion {
    fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, d: usize, rng: &mut R) -> Self {
        Self {
            first: Linear::new(store, &format!("{name}.first"), 3 * d, d, rng),
            second: Linear::new(store, &format!("{name}.second"), d, d, rng),
        }
    }
}

/// All learnable pieces of the block. `visual[k]` / `audio[k]` hold `W_{k+1}`.
#[derive(Clone, Debug)]
pub struct AcpParams {
    pub d_model: usize,
    pub d_visual: usize,
    pub d_audio: usize,
    /// Present only when the visual features do not arrive at `d_model`.
    pub visual_in: Option<Linear>,
    /// The audio projector `h`.
    pub audio_proj: Linear,
    pub visual: [ParamId; 6],
    pub audio: [ParamId; 6],
    pub fuse_visual: Fusion,
    pub fuse_audio: Fusion,
}

impl AcpParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        d_visual: usize,
        d_audio: usize,
        d_model: usize,
        rng: &mut R,
    ) -> Self {
        let visual_in = (d_visual != d_model)
            .then(|| Linear::new(store, "acp.visual_in", d_visual, d_model, rng));
        let audio_proj = Linear::new(store, "acp.audio_proj", d_audio, d_model, rng);
        let bound = 1.0 / (d_model as f64).sqrt();
        let mut square = |name: String, rng: &mut R| {
            store.add(name, Tensor::uniform(d_model, d_model, bound, rng))
        };
        let visual = std::array::from_fn(|k| square(format!("acp.visual.w{}", k + 1), rng));
        let audio = std::array::from_fn(|k| square(format!("acp.audio.w{}", k + 1), rng));
        let fuse_visual = Fusion::new(store, "acp.fuse_visual", d_model, rng);
        let fuse_audio = Fusion::new(store, "acp.fuse_audio", d_model, rng);
        Self {
            d_model,
            d_visual,
            d_audio,
            visual_in,
            audio_proj,
            visual,
            audio,
            fuse_visual,
            fuse_audio,
        }
    }
}

/// Forward result with the intermediate maps kept for inspection.
#[derive(Clone, Copy, Debug)]
pub struct AcpOutput {
    pub v_bar: Var,
    pub a_bar: Var,
    /// Visual features at model dimension.
    pub v: Var,
    /// Projected audio `a = h(â)`.
    pub a: Var,
    pub v_self: Var,
    pub a_self: Var,
    pub v_cross: Var,
    pub a_cross: Var,
    pub attn_self_visual: Var,
    pub attn_self_audio: Var,
    pub attn_cross_visual: Var,
    pub attn_cross_audio: Var,
    pub c_visual: Var,
    pub c_audio: Var,
}

/// `a = ReLU(â · H + bias)`.
pub fn project_audio(tape: &mut Tape, b: &Binding, audio: Var, h: &Linear) -> Result<Var> {
    let z = h.forward(tape, b, audio)?;
    tape.relu(z)
}

/// Scaled dot-product attention of `query` rows over `key` rows, returning
/// `(softmax(q kᵀ/√d) · value, attention map)`.
fn attend(tape: &mut Tape, q: Var, k: Var, value: Var, d: usize) -> Result<(Var, Var)> {
    let kt = tape.transpose(k)?;
    let logits = tape.matmul(q, kt)?;
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax_rows(logits)?;
    let out = tape.matmul(weights, value)?;
    Ok((out, weights))
}

/// `softmax((x W₁)(x W₂)ᵀ / √d) · (x W₃)`; returns the features and the map.
pub fn self_attend(
    tape: &mut Tape,
    x: Var,
    w1: Var,
    w2: Var,
    w3: Var,
    d: usize,
) -> Result<(Var, Var)> {
    let q = tape.matmul(x, w1)?;
    let k = tape.matmul(x, w2)?;
    let v = tape.matmul(x, w3)?;
    attend(tape, q, k, v, d)
}

/// `softmax((q W_q)(kv W_k)ᵀ / √d) · (kv W_v)`.
pub fn cross_attend(
    tape: &mut Tape,
    query: Var,
    kv: Var,
    w_q: Var,
    w_k: Var,
    w_v: Var,
    d: usize,
) -> Result<(Var, Var)> {
    let (qs, ks) = (tape.value(query).shape(), tape.value(kv).shape());
    if qs != ks {
        return Err(ClcError::shape(
            "cross_attend",
            format!("query {qs:?} vs key/value {ks:?}"),
        ));
    }
    let q = tape.matmul(query, w_q)?;
    let k = tape.matmul(kv, w_k)?;
    let v = tape.matmul(kv, w_v)?;
    attend(tape, q, k, v, d)
}

/// `(ReLU(v aᵀ/√d), ReLU(a vᵀ/√d))`. The second is exactly the transpose of
/// the first since both products use the same terms in the same order.
pub fn cross_correlation(tape: &mut Tape, v: Var, a: Var, d: usize) -> Result<(Var, Var)> {
    let (vs, as_) = (tape.value(v).shape(), tape.value(a).shape());
    if vs != as_ {
        return Err(ClcError::shape(
            "cross_correlation",
            format!("{vs:?} vs {as_:?}"),
        ));
    }
    let inv = 1.0 / (d as f64).sqrt();
    let at = tape.transpose(a)?;
    let va = tape.matmul(v, at)?;
    let va = tape.scale(va, inv)?;
    let c_v = tape.relu(va)?;
    let vt = tape.transpose(v)?;
    let av = tape.matmul(a, vt)?;
    let av = tape.scale(av, inv)?;
    let c_a = tape.relu(av)?;
    Ok((c_v, c_a))
}

/// Row-mass gate: row `i` of `cross` scaled by `Σⱼ c_ij` (divided by `T`
/// when `normalize` is set).
pub fn gate_cross(tape: &mut Tape, cross: Var, corr: Var, normalize: bool) -> Result<Var> {
    let mut mass = tape.row_sum(corr)?;
    if normalize {
        let t = tape.value(corr).cols() as f64;
        mass = tape.scale(mass, 1.0 / t)?;
    }
    tape.scale_rows(cross, mass)
}

/// `f(concat(x, xˢ, gated xᶜ))` with `f = linear → ReLU → linear`.
pub fn fuse(
    tape: &mut Tape,
    b: &Binding,
    x: Var,
    x_self: Var,
    gated_cross: Var,
    f: &Fusion,
) -> Result<Var> {
    let joined = tape.concat_cols(&[x, x_self, gated_cross])?;
    let hidden = f.first.forward(tape, b, joined)?;
    let hidden = tape.relu(hidden)?;
    f.second.forward(tape, b, hidden)
}

/// Visual features at model dimension: identity or the learned input map.
pub fn visual_input(tape: &mut Tape, b: &Binding, p: &AcpParams, visual: Var) -> Result<Var> {
    match &p.visual_in {
        Some(lin) => lin.forward(tape, b, visual),
        None => {
            let cols = tape.value(visual).cols();
            if cols != p.d_model {
                return Err(ClcError::shape(
                    "acp_forward",
                    format!("visual features have {cols} columns, expected {}", p.d_model),
                ));
            }
            Ok(visual)
        }
    }
}

/// Full block on one window: `visual: T×d_v`, `audio: T×d_a`.
pub fn acp_forward(
    tape: &mut Tape,
    b: &Binding,
    p: &AcpParams,
    visual: Var,
    audio: Var,
    gate_normalize: bool,
) -> Result<AcpOutput> {
    let (tv, ta) = (tape.value(visual).rows(), tape.value(audio).rows());
    if tv != ta {
        return Err(ClcError::shape(
            "acp_forward",
            format!("{tv} visual shots vs {ta} audio shots"),
        ));
    }
    let d = p.d_model;
    let v = visual_input(tape, b, p, visual)?;
    let a = project_audio(tape, b, audio, &p.audio_proj)?;
    let wv = p.visual.map(|id| b.var(id));
    let wa = p.audio.map(|id| b.var(id));

    let (v_self, attn_self_visual) = self_attend(tape, v, wv[0], wv[1], wv[2], d)?;
    let (a_self, attn_self_audio) = self_attend(tape, a, wa[0], wa[1], wa[2], d)?;
    // visual query: W4 (visual) against W4/W5 (audio); audio query: W6 (audio)
    // against W5/W6 (visual)
    let (v_cross, attn_cross_visual) = cross_attend(tape, v, a, wv[3], wa[3], wa[4], d)?;
    let (a_cross, attn_cross_audio) = cross_attend(tape, a, v, wa[5], wv[4], wv[5], d)?;
    let (c_visual, c_audio) = cross_correlation(tape, v, a, d)?;

    let gated_v = gate_cross(tape, v_cross, c_visual, gate_normalize)?;
    let gated_a = gate_cross(tape, a_cross, c_audio, gate_normalize)?;
    let v_bar = fuse(tape, b, v, v_self, gated_v, &p.fuse_visual)?;
    let a_bar = fuse(tape, b, a, a_self, gated_a, &p.fuse_audio)?;

    Ok(AcpOutput {
        v_bar,
        a_bar,
        v,
        a,
        v_self,
        a_self,
        v_cross,
        a_cross,
        attn_self_visual,
        attn_self_audio,
        attn_cross_visual,
        attn_cross_audio,
        c_visual,
        c_audio,
    })
}
