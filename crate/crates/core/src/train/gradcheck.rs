use std::cell::RefCell;

use super::{Trainer, TrainError};
use crate::numeric::{grad_check, BoundParams, GradCheckReport, Scalar, Tape, Var};

/// Outcome of a finite-difference check of the training loss.
#[derive(Debug, Clone)]
pub struct ModelGradCheck {
    /// Check over every parameter except attention key biases.
    pub report: GradCheckReport,
    /// Parameters checked analytically instead: a key bias shifts every
    /// score of a softmax row equally, so its exact gradient is zero and
    /// central differences only measure rounding noise.
    pub key_biases: Vec<String>,
    /// Largest absolute analytic gradient entry over the key biases.
    pub key_bias_max_abs: f64,
}

impl ModelGradCheck {
    /// Numeric agreement below `tol` and key-bias gradients at round-off.
    pub fn passes(&self, tol: f64) -> bool {
        self.report.max_rel_error < tol && self.key_bias_max_abs < 1e-12
    }
}

pub fn is_key_bias(name: &str) -> bool {
    name.ends_with(".k.b")
}

impl<T: Scalar> Trainer<'_, T> {
    /// Compares the analytic gradient of the total loss on `batch` against
    /// central differences with step `eps`.
    pub fn grad_check(&mut self, batch: &[(usize, usize)], eps: f64) -> Result<ModelGradCheck, TrainError> {
        let all = self.store.tensors();
        let names: Vec<String> = self.store.iter().map(|(_, p)| p.name.clone()).collect();
        let inputs: Vec<_> = all
            .iter()
            .zip(&names)
            .filter(|(_, n)| !is_key_bias(n))
            .map(|(t, _)| t.clone())
            .collect();
        let cell = RefCell::new(&mut *self);
        let report = grad_check(
            |tape: &mut Tape<T>, vars: &[Var]| -> Result<Var, TrainError> {
                let mut it = vars.iter();
                let full = all
                    .iter()
                    .zip(&names)
                    .map(|(t, n)| if is_key_bias(n) { tape.constant(t.clone()) } else { *it.next().expect("one var per input") })
                    .collect();
                let (total, _, _) = cell.borrow_mut().batch_loss(tape, &BoundParams::from_vars(full), batch)?;
                Ok(total)
            },
            &inputs,
            eps,
        )?;

        let mut tape = Tape::new();
        let p = self.store.bind(&mut tape);
        let (total, _, _) = self.batch_loss(&mut tape, &p, batch)?;
        let grads = tape.backward(total)?;
        let mut key_biases = Vec::new();
        let mut key_bias_max_abs = 0.0f64;
        for (id, param) in self.store.iter() {
            if is_key_bias(&param.name) {
                key_biases.push(param.name.clone());
                if let Some(g) = grads.get(p[id]) {
                    key_bias_max_abs = g.to_f64_vec().iter().fold(key_bias_max_abs, |m, x| m.max(x.abs()));
                }
            }
        }
        Ok(ModelGradCheck {
            report,
            key_biases,
            key_bias_max_abs,
        })
    }
}
