//! Bracketed bisection for monotone scalar functions.

use crate::error::{Error, Result};

/// Iteration cap; far more than needed to shrink a unit bracket to one ulp.
pub const MAX_ITER: usize = 200;

/// A root and the function value there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub fx: f64,
    pub iterations: usize,
}

/// Find a sign change of `f` on `[lo, hi]`. The endpoint values must not
/// share a strict sign. Runs until the bracket cannot be split further in
/// floating point or `|f| <= ftol`, and returns the endpoint with the
/// smaller `|f|`.
pub fn bisect<F>(mut f: F, lo: f64, hi: f64, ftol: f64) -> Result<Root>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (lo, hi);
    let mut fa = f(a)?;
    let fb = f(b)?;
    if fa == 0.0 {
        return Ok(Root {
            x: a,
            fx: fa,
            iterations: 0,
        });
    }
    if fb == 0.0 {
        return Ok(Root {
            x: b,
            fx: fb,
            iterations: 0,
        });
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Precondition(format!(
            "no sign change on [{lo}, {hi}]: f = {fa:e}, {fb:e}"
        )));
    }
    let mut best = if fa.abs() < fb.abs() {
        (a, fa)
    } else {
        (b, fb)
    };
    for it in 1..=MAX_ITER {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            return Ok(Root {
                x: best.0,
                fx: best.1,
                iterations: it,
            });
        }
        let fm = f(mid)?;
        if fm.abs() < best.1.abs() {
            best = (mid, fm);
        }
        if fm.abs() <= ftol {
            return Ok(Root {
                x: mid,
                fx: fm,
                iterations: it,
            });
        }
        if fm.signum() == fa.signum() {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    Ok(Root {
        x: best.0,
        fx: best.1,
        iterations: MAX_ITER,
    })
}
