use crate::error::{Error, Result};

/// Finds `x` in `(lo, hi)` with `|g(x)| <= tol` for a continuous
/// non-decreasing `g` with `g(lo) < 0 <= g(hi)`.
///
/// Terminates on the residual, not on the bracket width. Returns the root and
/// the number of evaluations of `g`.
pub(crate) fn bisect<G>(mut lo: f64, mut hi: f64, tol: f64, max_iter: usize, mut g: G) -> Result<(f64, usize)>
where
    G: FnMut(f64) -> f64,
{
    let mut best = f64::INFINITY;
    for it in 1..=max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // bracket collapsed to adjacent floats
            return Err(Error::MaxIterExceeded {
                iterations: it - 1,
                lo,
                hi,
                residual: best,
            });
        }
        let r = g(mid);
        if !r.is_finite() {
            return Err(Error::NonFinite("dual residual"));
        }
        best = best.min(r.abs());
        if r.abs() <= tol {
            return Ok((mid, it));
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::MaxIterExceeded {
        iterations: max_iter,
        lo,
        hi,
        residual: best,
    })
}

/// Rechecks a root found by [`bisect`] with a more accurate `g` and keeps
/// bisecting inside `bracket` (the bracket before the last step) if it misses.
///
/// Iterations are counted against the same `max_iter` budget.
pub(crate) fn refine<G>(
    x: f64,
    iterations: usize,
    bracket: (f64, f64),
    tol: f64,
    max_iter: usize,
    mut g: G,
) -> Result<(f64, usize)>
where
    G: FnMut(f64) -> f64,
{
    let r = g(x);
    if !r.is_finite() {
        return Err(Error::NonFinite("dual residual"));
    }
    if r.abs() <= tol {
        return Ok((x, iterations));
    }
    let (lo, hi) = if r < 0.0 { (x, bracket.1) } else { (bracket.0, x) };
    let (root, more) = bisect(lo, hi, tol, max_iter.saturating_sub(iterations), g).map_err(|e| match e {
        Error::MaxIterExceeded {
            iterations: n,
            lo,
            hi,
            residual,
        } => Error::MaxIterExceeded {
            iterations: iterations + n,
            lo,
            hi,
            residual: residual.min(r.abs()),
        },
        other => other,
    })?;
    Ok((root, iterations + more))
}
