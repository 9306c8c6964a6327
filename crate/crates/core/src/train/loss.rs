//! Caption cross-entropy, cross-modal alignment and their weighted sum.

use crate::model::{LinearParams, Ops};
use crate::numeric::{BoundParams, NumericError, Scalar, Tape, Tensor, Var};

use super::TrainError;

/// Summed NLL of `targets` under `logits` (`[T, V]`), skipping `pad`
/// positions. Returns the sum and the number of counted tokens.
pub fn ce_sum<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[usize], pad: usize) -> Result<(Var, usize), TrainError> {
    let rows = tape.shape(logits)[0];
    if rows != targets.len() {
        return Err(TrainError::LengthMismatch {
            logits: rows,
            targets: targets.len(),
        });
    }
    let lp = tape.log_softmax(logits);
    let idx: Vec<usize> = targets.iter().map(|&t| if t == pad { 0 } else { t }).collect();
    let picked = tape.gather_elements(lp, idx.into())?;
    let keep: Vec<T> = targets.iter().map(|&t| if t == pad { T::zero() } else { T::one() }).collect();
    let count = targets.iter().filter(|&&t| t != pad).count();
    let mask = tape.constant(Tensor::vector(keep));
    let kept = tape.mul(picked, mask)?;
    let s = tape.sum_all(kept);
    Ok((tape.scale(s, -T::one()), count))
}

/// Mean token NLL over non-PAD positions.
pub fn ce_loss<T: Scalar>(tape: &mut Tape<T>, logits: Var, targets: &[usize], pad: usize) -> Result<Var, TrainError> {
    let (s, n) = ce_sum(tape, logits, targets, pad)?;
    if n == 0 {
        return Err(TrainError::NoTargets);
    }
    Ok(tape.scale(s, T::lit(1.0 / n as f64)))
}

#[derive(Debug, Clone, Copy)]
pub struct CmaLoss {
    pub loss: Var,
    /// Set when either pooled vector has zero norm or no slot is present;
    /// the loss is then the constant 1.
    pub degenerate: bool,
}

/// `1 - cos(maxpool(v_image), mean_present(proj(v_graph)))`.
pub fn cma_loss<T: Scalar>(
    tape: &mut Tape<T>,
    p: &BoundParams,
    ops: &Ops,
    proj: LinearParams,
    v_image: Var,
    v_graph: Var,
    present: &[bool],
) -> Result<CmaLoss, TrainError> {
    let slots = tape.shape(v_graph)[0];
    if slots != present.len() {
        return Err(NumericError::ShapeMismatch {
            op: "cma_loss",
            left: vec![slots],
            right: vec![present.len()],
        }
        .into());
    }
    let idx: Vec<usize> = (0..slots).filter(|&i| present[i]).collect();
    let degenerate = |tape: &mut Tape<T>| CmaLoss {
        loss: tape.constant(Tensor::scalar(T::one())),
        degenerate: true,
    };
    if idx.is_empty() {
        return Ok(degenerate(tape));
    }
    let rows = tape.gather_rows(v_graph, idx.into())?;
    let m = ops.linear(tape, p, proj, rows)?;
    let v_m = tape.mean(m, 0)?;
    let v_i = tape.max_pool(v_image, 0)?;
    let zero = |t: &Tensor<T>| t.data().iter().all(|x| *x == T::zero());
    if zero(tape.value(v_m)) || zero(tape.value(v_i)) {
        return Ok(degenerate(tape));
    }
    let cos = tape.cosine_similarity(v_i, v_m)?;
    let neg = tape.scale(cos, -T::one());
    let one = tape.constant(Tensor::scalar(T::one()));
    Ok(CmaLoss {
        loss: tape.add(one, neg)?,
        degenerate: false,
    })
}

/// `(1 - beta) l_ce + beta l_cma`; the endpoints return the selected term
/// itself so the other contributes no gradient at all.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, l_ce: Var, l_cma: Var, beta: f64) -> Result<Var, NumericError> {
    if beta == 0.0 {
        return Ok(l_ce);
    }
    if beta == 1.0 {
        return Ok(l_cma);
    }
    let a = tape.scale(l_ce, T::lit(1.0 - beta));
    let b = tape.scale(l_cma, T::lit(beta));
    tape.add(a, b)
}
