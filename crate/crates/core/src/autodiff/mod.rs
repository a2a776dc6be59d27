//! Minimal reverse-mode automatic differentiation over dense 2-D `f64` arrays.
//!
//! A [`Tape`] records every primitive applied during one forward pass and is
//! dropped after the matching [`Tape::backward`]. Learnable matrices live in a
//! [`ParamStore`] and are bound to a fresh tape on each pass.

mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var, LOG_EPS};
pub use tensor::Tensor;

use crate::error::{ClcError, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Named learnable tensors in a fixed insertion order. The order is the
/// checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    /// Total number of scalar entries.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Registers every parameter as a trainable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        Binding { vars }
    }

    /// Registers every parameter as a constant; for inference passes.
    pub fn bind_constants(&self, tape: &mut Tape) -> Binding {
        let vars = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        Binding { vars }
    }

    /// `p ← p − lr · g` for every parameter.
    pub fn sgd_step(&mut self, grads: &[Tensor], learning_rate: f64) -> Result<()> {
        if grads.len() != self.params.len() {
            return Err(ClcError::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.params.len()
            )));
        }
        for (p, g) in self.params.iter_mut().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(ClcError::shape("sgd_step", p.name.clone()));
            }
            for (w, gv) in p.value.data_mut().iter_mut().zip(g.data()) {
                *w -= learning_rate * gv;
            }
        }
        Ok(())
    }
}

/// Tape variables for every parameter of a [`ParamStore`], in store order.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Per-parameter gradients in store order; zeros for parameters that do
    /// not influence the loss.
    pub fn collect(&self, tape: &Tape, grads: &Gradients) -> Vec<Tensor> {
        self.vars.iter().map(|&v| grads.get_or_zeros(tape, v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over all entries of `|analytic − central| / max(1, |central|)`.
    pub max_rel_error: f64,
    /// Parameter name and flat entry index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences with
/// the given step, entry by entry over the whole store.
pub fn grad_check<F>(store: &ParamStore, step: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let mut tape = Tape::new();
    let binding = store.bind(&mut tape);
    let loss = f(&mut tape, &binding)?;
    let grads = tape.backward(loss)?;
    let analytic = binding.collect(&tape, &grads);
    grad_check_against(store, step, &analytic, f)
}

/// Same as [`grad_check`] with externally supplied analytic gradients.
pub fn grad_check_against<F>(
    store: &ParamStore,
    step: f64,
    analytic: &[Tensor],
    f: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Binding) -> Result<Var>,
{
    let eval = |s: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let binding = s.bind(&mut tape);
        let loss = f(&mut tape, &binding)?;
        Ok(tape.value(loss).item())
    };

    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for p in 0..store.len() {
        let id = ParamId(p);
        for e in 0..store.get(id).len() {
            let orig = store.get(id).data()[e];
            probe.get_mut(id).data_mut()[e] = orig + step;
            let plus = eval(&probe)?;
            probe.get_mut(id).data_mut()[e] = orig - step;
            let minus = eval(&probe)?;
            probe.get_mut(id).data_mut()[e] = orig;

            let central = (plus - minus) / (2.0 * step);
            let err = (analytic[p].data()[e] - central).abs() / central.abs().max(1.0);
            report.entries_checked += 1;
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((store.name(id).to_owned(), e));
            }
        }
    }
    Ok(report)
}
