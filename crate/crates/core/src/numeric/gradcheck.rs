//! Central finite-difference verification of analytic gradients.

use thiserror::Error;

use super::error::NumericError;
use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;

#[derive(Debug, Error)]
pub enum GradCheckError {
    #[error("function output is not finite")]
    NonFiniteOutput,
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("function failed: {0}")]
    Function(BoxError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Maximum of `|a - n| / max(|a|, |n|, 1e-8)` over all coordinates.
    pub max_rel_error: f64,
    /// Per-input maximum relative error.
    pub per_input: Vec<f64>,
    /// (input, coordinate, analytic, numeric) of the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
    pub coordinates: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn evaluate<T, F, E>(f: &F, inputs: &[Tensor<T>]) -> Result<f64, GradCheckError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, E>,
    E: Into<BoxError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let out = f(&mut tape, &vars).map_err(|e| GradCheckError::Function(e.into()))?;
    let value = tape.value(out);
    if value.len() != 1 {
        return Err(NumericError::NotScalar(value.shape().to_vec()).into());
    }
    let v = value.item().as_f64();
    if !v.is_finite() {
        return Err(GradCheckError::NonFiniteOutput);
    }
    Ok(v)
}

/// Compares the tape gradient of the scalar function `f` against central
/// differences with step `eps` for every coordinate of every input.
pub fn grad_check<T, F, E>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport, GradCheckError>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var, E>,
    E: Into<BoxError>,
{
    if inputs.iter().any(|t| !t.all_finite()) {
        return Err(GradCheckError::NonFiniteOutput);
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars).map_err(|e| GradCheckError::Function(e.into()))?;
    if !tape.value(out).item().as_f64().is_finite() {
        return Err(GradCheckError::NonFiniteOutput);
    }
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        per_input: vec![0.0; inputs.len()],
        worst: None,
        coordinates: 0,
    };
    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(Tensor::to_f64_vec)
            .unwrap_or_else(|| vec![0.0; inputs[i].len()]);
        for c in 0..inputs[i].len() {
            let orig = inputs[i].data()[c];
            work[i].data_mut()[c] = orig + T::lit(eps);
            let plus = evaluate(&f, &work)?;
            work[i].data_mut()[c] = orig - T::lit(eps);
            let minus = evaluate(&f, &work)?;
            work[i].data_mut()[c] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = relative_error(analytic[c], numeric);
            report.coordinates += 1;
            if err > report.per_input[i] {
                report.per_input[i] = err;
            }
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((i, c, analytic[c], numeric));
                }
            }
        }
    }
    Ok(report)
}
