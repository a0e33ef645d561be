use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares the tape's gradients of `f` against central finite differences.
///
/// `f` builds a scalar loss from the parameters bound on a fresh tape. Returns
/// the maximum over every parameter entry of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn finite_diff_check<F>(f: F, params: &[Tensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if step <= 0.0 {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base = tape.value(loss).item();
    let grads = tape.backward(loss)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|p| tape.constant(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut work = params.to_vec();
    for _ in 0..2 {
        let again = eval(&work)?;
        if again.to_bits() != base.to_bits() {
            return Err(Error::Oracle(format!(
                "function is not deterministic: {base} then {again}"
            )));
        }
    }

    let mut worst: f64 = 0.0;
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.wrt(*var);
        for ei in 0..work[pi].numel() {
            let original = work[pi].data()[ei];
            work[pi].data_mut()[ei] = original + step;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = original - step;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = original;

            let numeric = (plus - minus) / (2.0 * step);
            let err = (analytic.data()[ei] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::Oracle(format!(
                    "non-finite gradient comparison at parameter {pi}, entry {ei}"
                )));
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
