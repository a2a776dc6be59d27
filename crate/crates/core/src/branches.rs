//! Prediction branches and their losses.
//!
//! Each branch is a bidirectional gated recurrent layer followed by a
//! two-way classifier. The multi-modal branch reads `concat(v̄, ā)`, the
//! uni-modal ones read `v̄` or `ā` alone. Losses are sums over shots, with
//! an optional switch to mean reduction.

use rand::Rng;

use crate::acp::Linear;
use crate::autodiff::{Binding, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{ClcError, Result};

/// One direction of a gated recurrent layer. Column blocks of the `3H`
/// matrices are ordered reset, update, candidate.
#[derive(Clone, Copy, Debug)]
pub struct GruDirection {
    pub w_input: ParamId,
    pub b_input: ParamId,
    pub w_hidden: ParamId,
    pub b_hidden: ParamId,
}

impl GruDirection {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut add = |suffix: &str, rows: usize| {
            store.add(
                format!("{name}.{suffix}"),
                Tensor::uniform(rows, 3 * hidden, bound, rng),
            )
        };
        Self {
            w_input: add("w_input", input),
            b_input: add("b_input", 1),
            w_hidden: add("w_hidden", hidden),
            b_hidden: add("b_hidden", 1),
        }
    }

    /// Hidden states for every step, stacked in time order (`T×H`).
    fn run(
        &self,
        tape: &mut Tape,
        b: &Binding,
        x: Var,
        hidden: usize,
        reverse: bool,
    ) -> Result<Var> {
        let steps = tape.value(x).rows();
        let projected = tape.affine(x, b.var(self.w_input), b.var(self.b_input))?;
        let (w_h, b_h) = (b.var(self.w_hidden), b.var(self.b_hidden));
        let mut h = tape.constant(Tensor::zeros(1, hidden));
        let mut states = vec![h; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let xt = tape.row(projected, t)?;
            let hh = tape.matmul(h, w_h)?;
            let hh = tape.add(hh, b_h)?;

            let xr = tape.slice_cols(xt, 0, hidden)?;
            let hr = tape.slice_cols(hh, 0, hidden)?;
            let r = tape.add(xr, hr)?;
            let r = tape.sigmoid(r)?;

            let xz = tape.slice_cols(xt, hidden, hidden)?;
            let hz = tape.slice_cols(hh, hidden, hidden)?;
            let z = tape.add(xz, hz)?;
            let z = tape.sigmoid(z)?;

            let xn = tape.slice_cols(xt, 2 * hidden, hidden)?;
            let hn = tape.slice_cols(hh, 2 * hidden, hidden)?;
            let rn = tape.mul(r, hn)?;
            let n = tape.add(xn, rn)?;
            let n = tape.tanh(n)?;

            // h' = (1 − z)·n + z·h = n + z·(h − n)
            let diff = tape.sub(h, n)?;
            let zd = tape.mul(z, diff)?;
            h = tape.add(n, zd)?;
            states[t] = h;
        }
        tape.concat_rows(&states)
    }
}

/// Bidirectional recurrent layer plus `linear(2H→2)` and softmax.
#[derive(Clone, Copy, Debug)]
pub struct TemporalHead {
    pub input_dim: usize,
    pub hidden: usize,
    pub forward: GruDirection,
    pub backward: GruDirection,
    pub classifier: Linear,
}

impl TemporalHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            input_dim,
            hidden,
            forward: GruDirection::new(store, &format!("{name}.fwd"), input_dim, hidden, rng),
            backward: GruDirection::new(store, &format!("{name}.bwd"), input_dim, hidden, rng),
            classifier: Linear::new(store, &format!("{name}.classifier"), 2 * hidden, 2, rng),
        }
    }
}

/// Per-shot class probabilities `T×2`; column 1 is the highlight class.
pub fn head_forward(tape: &mut Tape, b: &Binding, head: &TemporalHead, features: Var) -> Result<Var> {
    let (rows, cols) = tape.value(features).shape();
    if cols != head.input_dim {
        return Err(ClcError::shape(
            "head_forward",
            format!("features have {cols} columns, head expects {}", head.input_dim),
        ));
    }
    if rows == 0 {
        return Err(ClcError::shape("head_forward", "empty sequence"));
    }
    let fwd = head.forward.run(tape, b, features, head.hidden, false)?;
    let bwd = head.backward.run(tape, b, features, head.hidden, true)?;
    let both = tape.concat_cols(&[fwd, bwd])?;
    let logits = head.classifier.forward(tape, b, both)?;
    tape.softmax_rows(logits)
}

/// How per-shot loss terms are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

fn check_labels(probs: &Tensor, labels: &[u8]) -> Result<()> {
    if probs.cols() != 2 || probs.rows() != labels.len() {
        return Err(ClcError::shape(
            "loss",
            format!("{:?} predictions for {} labels", probs.shape(), labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&g| g > 1) {
        return Err(ClcError::Contract(format!("label {bad} is not 0 or 1")));
    }
    Ok(())
}

fn check_selection(n: usize, selection: &[usize]) -> Result<()> {
    if selection.is_empty() {
        return Err(ClcError::NoCleanSamples);
    }
    if let Some(&i) = selection.iter().find(|&&i| i >= n) {
        return Err(ClcError::Contract(format!(
            "selected index {i} outside a batch of {n}"
        )));
    }
    Ok(())
}

/// `−Σ_{i∈sel} Σ_c weight[i,c]·log probs[i,c]` with the weights as constants.
fn weighted_nll(
    tape: &mut Tape,
    probs: Var,
    weights: Tensor,
    count: usize,
    reduction: Reduction,
) -> Result<Var> {
    let w = tape.constant(weights);
    let logp = tape.log(probs)?;
    let terms = tape.mul(w, logp)?;
    let total = tape.sum(terms)?;
    let scale = match reduction {
        Reduction::Sum => -1.0,
        Reduction::Mean => -1.0 / count as f64,
    };
    tape.scale(total, scale)
}

fn one_hot_mask(n: usize, labels: &[u8], selection: &[usize]) -> Tensor {
    let mut m = Tensor::zeros(n, 2);
    for &i in selection {
        m.set(i, labels[i] as usize, 1.0);
    }
    m
}

/// Cross-entropy over the selected shots.
pub fn selected_ce_loss(
    tape: &mut Tape,
    probs: Var,
    labels: &[u8],
    selection: &[usize],
    reduction: Reduction,
) -> Result<Var> {
    let n = tape.value(probs).rows();
    check_labels(tape.value(probs), labels)?;
    check_selection(n, selection)?;
    let mask = one_hot_mask(n, labels, selection);
    weighted_nll(tape, probs, mask, selection.len(), reduction)
}

/// Uni-modal cross-entropy over every shot of the batch.
pub fn uni_modal_loss(tape: &mut Tape, probs: Var, labels: &[u8], reduction: Reduction) -> Result<Var> {
    if labels.is_empty() {
        return Err(ClcError::Contract("empty batch".into()));
    }
    let all: Vec<usize> = (0..labels.len()).collect();
    selected_ce_loss(tape, probs, labels, &all, reduction)
}

/// Multi-modal cross-entropy restricted to the clean set `N′`.
pub fn mm_ce_loss(
    tape: &mut Tape,
    probs: Var,
    labels: &[u8],
    selection: &[usize],
    reduction: Reduction,
) -> Result<Var> {
    selected_ce_loss(tape, probs, labels, selection, reduction)
}

/// Cross-entropy from both uni-modal distributions (held constant) to the
/// multi-modal one, over the clean set.
pub fn consistency_loss(
    tape: &mut Tape,
    mm: Var,
    target_visual: &Tensor,
    target_audio: &Tensor,
    selection: &[usize],
    reduction: Reduction,
) -> Result<Var> {
    let shape = tape.value(mm).shape();
    if target_visual.shape() != shape || target_audio.shape() != shape || shape.1 != 2 {
        return Err(ClcError::shape(
            "consistency_loss",
            format!(
                "{shape:?} vs {:?} / {:?}",
                target_visual.shape(),
                target_audio.shape()
            ),
        ));
    }
    check_selection(shape.0, selection)?;
    let mut weights = Tensor::zeros(shape.0, 2);
    for &i in selection {
        for c in 0..2 {
            weights.set(i, c, target_visual.get(i, c) + target_audio.get(i, c));
        }
    }
    weighted_nll(tape, mm, weights, selection.len(), reduction)
}

/// `ce + β·cons`.
pub fn total_mm_loss(tape: &mut Tape, ce: Var, cons: Var, beta: f64) -> Result<Var> {
    if !(beta >= 0.0) {
        return Err(ClcError::Contract(format!("beta must be >= 0, got {beta}")));
    }
    let weighted = tape.scale(cons, beta)?;
    tape.add(ce, weighted)
}

/// Per-shot `−log y[i, g_i]` read off already computed probabilities.
pub fn per_sample_losses(probs: &Tensor, labels: &[u8]) -> Vec<f64> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &g)| -probs.get(i, g as usize).max(crate::autodiff::LOG_EPS).ln())
        .collect()
}

/// Scalar loss terms for one window.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossBundle {
    pub unimodal_visual: f64,
    pub unimodal_audio: f64,
    pub mm_ce: f64,
    pub mm_consistency: f64,
    pub mm_total: f64,
    pub beta: f64,
}

impl LossBundle {
    pub fn accumulate(&mut self, other: &LossBundle) {
        self.unimodal_visual += other.unimodal_visual;
        self.unimodal_audio += other.unimodal_audio;
        self.mm_ce += other.mm_ce;
        self.mm_consistency += other.mm_consistency;
        self.mm_total += other.mm_total;
        self.beta = other.beta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn probs(tape: &mut Tape, rows: &[[f64; 2]]) -> Var {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn uni_modal_loss_closed_forms() {
        let mut tape = Tape::new();
        let p = probs(&mut tape, &[[1.0, 0.0], [0.0, 1.0]]);
        let l = uni_modal_loss(&mut tape, p, &[0, 1], Reduction::Sum).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let p = probs(&mut tape, &[[0.5, 0.5]; 4]);
        let l = uni_modal_loss(&mut tape, p, &[0, 1, 1, 0], Reduction::Sum).unwrap();
        assert!((tape.value(l).item() - 4.0 * 2f64.ln()).abs() < 1e-12);
        assert!((tape.value(l).item() - 2.7726).abs() < 1e-4);

        let p = probs(&mut tape, &[[0.8, 0.2]]);
        let l = uni_modal_loss(&mut tape, p, &[0], Reduction::Sum).unwrap();
        assert!((tape.value(l).item() - 0.2231).abs() < 1e-4);
        assert!((tape.value(l).item() + 0.8f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uni_modal_loss_rejects_empty_batch() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::zeros(0, 2));
        assert!(uni_modal_loss(&mut tape, p, &[], Reduction::Sum).is_err());
    }

    #[test]
    fn mm_ce_selection_semantics() {
        let rows = [[0.9, 0.1], [0.3, 0.7], [0.6, 0.4], [0.2, 0.8]];
        let labels = [0u8, 0, 1, 1];
        let per_sample = per_sample_losses(&Tensor::from_rows(&rows).unwrap(), &labels);

        let mut tape = Tape::new();
        let p = probs(&mut tape, &rows);
        let full = mm_ce_loss(&mut tape, p, &labels, &[0, 1, 2, 3], Reduction::Sum).unwrap();
        let uni = uni_modal_loss(&mut tape, p, &labels, Reduction::Sum).unwrap();
        assert_eq!(tape.value(full).item(), tape.value(uni).item());

        let single = mm_ce_loss(&mut tape, p, &labels, &[2], Reduction::Sum).unwrap();
        assert!((tape.value(single).item() - per_sample[2]).abs() < 1e-15);

        let mixed = mm_ce_loss(&mut tape, p, &labels, &[0, 3], Reduction::Sum).unwrap();
        assert!((tape.value(mixed).item() - (per_sample[0] + per_sample[3])).abs() < 1e-14);

        assert!(matches!(
            mm_ce_loss(&mut tape, p, &labels, &[], Reduction::Sum),
            Err(ClcError::NoCleanSamples)
        ));
    }

    #[test]
    fn consistency_closed_forms() {
        let mut tape = Tape::new();
        let one_hot = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        let mm = tape.constant(one_hot.clone());
        let l = consistency_loss(&mut tape, mm, &one_hot, &one_hot, &[0, 1], Reduction::Sum).unwrap();
        assert_eq!(tape.value(l).item(), 0.0);

        let half = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        let mm = probs(&mut tape, &[[0.8, 0.2]]);
        let l = consistency_loss(&mut tape, mm, &half, &half, &[0], Reduction::Sum).unwrap();
        let expected = -(0.5 * 0.8f64.ln() + 0.5 * 0.2f64.ln()) * 2.0;
        assert!((tape.value(l).item() - expected).abs() < 1e-14);
        assert!((tape.value(l).item() - 1.8326).abs() < 1e-4);
    }

    #[test]
    fn total_loss_combination() {
        let mut tape = Tape::new();
        let ce = tape.constant(Tensor::scalar(1.0));
        let cons = tape.constant(Tensor::scalar(2.0));
        let t = total_mm_loss(&mut tape, ce, cons, 0.1).unwrap();
        assert!((tape.value(t).item() - 1.2).abs() < 1e-15);
        let t = total_mm_loss(&mut tape, ce, cons, 0.0).unwrap();
        assert_eq!(tape.value(t).item(), 1.0);
        assert!(total_mm_loss(&mut tape, ce, cons, -0.1).is_err());

        // CE of (0.8, 0.2) at g=0 plus β times the consistency example.
        let mm = probs(&mut tape, &[[0.8, 0.2]]);
        let half = Tensor::from_rows(&[[0.5, 0.5]]).unwrap();
        let ce = mm_ce_loss(&mut tape, mm, &[0], &[0], Reduction::Sum).unwrap();
        let cons = consistency_loss(&mut tape, mm, &half, &half, &[0], Reduction::Sum).unwrap();
        let t = total_mm_loss(&mut tape, ce, cons, 0.1).unwrap();
        let hand = 0.223_143_551_314_209_76 + 0.1 * 1.832_581_463_748_310_4;
        assert!((tape.value(t).item() - hand).abs() < 1e-12);
    }

    #[test]
    fn consistency_gradient_vanishes_at_average_target() {
        // y^MM = softmax(logits); stationary when y^MM = (y_v + y_a)/2.
        let yv = Tensor::from_rows(&[[0.9, 0.1], [0.3, 0.7]]).unwrap();
        let ya = Tensor::from_rows(&[[0.5, 0.5], [0.1, 0.9]]).unwrap();
        let avg = yv.zip_map(&ya, |a, b| 0.5 * (a + b));
        let logits = avg.map(f64::ln);
        let mut tape = Tape::new();
        let z = tape.leaf(logits);
        let mm = tape.softmax_rows(z).unwrap();
        let l = consistency_loss(&mut tape, mm, &yv, &ya, &[0, 1], Reduction::Sum).unwrap();
        let g = tape.backward(l).unwrap();
        let gz = g.get(z).unwrap();
        assert!(gz.data().iter().all(|v| v.abs() <= 1e-8), "{gz:?}");
    }

    #[test]
    fn head_outputs_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let head = TemporalHead::new(&mut store, "h", 4, 3, &mut rng);
        for t in [1usize, 5] {
            let mut tape = Tape::new();
            let b = store.bind(&mut tape);
            let x = tape.constant(Tensor::uniform(t, 4, 1.0, &mut rng));
            let y = head_forward(&mut tape, &b, &head, x).unwrap();
            let y = tape.value(y);
            assert_eq!(y.shape(), (t, 2));
            for r in 0..t {
                assert!((y.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_classifier_gives_even_odds() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let head = TemporalHead::new(&mut store, "h", 4, 3, &mut rng);
        *store.get_mut(head.classifier.weight) = Tensor::zeros(6, 2);
        *store.get_mut(head.classifier.bias) = Tensor::zeros(1, 2);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::uniform(7, 4, 1.0, &mut rng));
        let y = head_forward(&mut tape, &b, &head, x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn head_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let head = TemporalHead::new(&mut store, "h", 4, 3, &mut rng);
        let mut tape = Tape::new();
        let b = store.bind(&mut tape);
        let x = tape.constant(Tensor::zeros(3, 5));
        assert!(matches!(
            head_forward(&mut tape, &b, &head, x),
            Err(ClcError::Shape { .. })
        ));
    }
}
