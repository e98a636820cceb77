use crate::engine::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` against central finite differences.
///
/// `f` builds a scalar from one tape variable per entry of `params`. The
/// return value is the largest per-element relative error
/// `|g_ad − g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Config(format!(
            "grad_check eps must be positive, got {eps}"
        )));
    }

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    check_finite(tape.value(loss).item())?;
    let grads = tape.gradients(loss)?;

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|p| t.constant(p.clone())).collect();
        let out = f(&mut t, &vs)?;
        let v = t.value(out).item();
        check_finite(v)?;
        Ok(v)
    };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for (pi, var) in vars.iter().enumerate() {
        let ad = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(params[pi].shape()));
        for ei in 0..params[pi].numel() {
            let orig = params[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + eps;
            let plus = eval(&work)?;
            work[pi].data_mut()[ei] = orig - eps;
            let minus = eval(&work)?;
            work[pi].data_mut()[ei] = orig;

            let fd = (plus - minus) / (2.0 * eps);
            let g = ad.data()[ei];
            let rel = (g - fd).abs() / (g.abs() + fd.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn check_finite(v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite("grad_check objective".into()))
    }
}
