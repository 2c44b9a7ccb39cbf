//! Bracketed bisection for monotone scalar equations.
//!
//! Every scalar fixed point in the crate is rewritten as a root of a function
//! that changes sign exactly once on the branch of interest, so plain
//! bisection with an expanding bracket is enough.

use crate::error::{Error, Result};

/// Relative width at which bisection stops.
pub const DEFAULT_REL_TOL: f64 = 1e-12;

const MAX_BISECTIONS: usize = 400;
const MAX_DOUBLINGS: usize = 2048;

/// Finds the root of `g` on `[lo, hi]` given `g(lo) <= 0 <= g(hi)`.
///
/// Stops once the bracket is narrower than `rel_tol * max(|lo|, |hi|)` or
/// when the midpoint no longer moves in floating point.
pub fn bisect<F>(mut g: F, mut lo: f64, mut hi: f64, rel_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let glo = g(lo);
    let ghi = g(hi);
    if glo == 0.0 {
        return Ok(lo);
    }
    if ghi == 0.0 {
        return Ok(hi);
    }
    if !(glo < 0.0 && ghi > 0.0) {
        return Err(Error::NoRoot(format!(
            "g({lo:e}) = {glo:e}, g({hi:e}) = {ghi:e}"
        )));
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let gm = g(mid);
        if gm == 0.0 {
            return Ok(mid);
        }
        if gm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= rel_tol * lo.abs().max(hi.abs()) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Root of a function that is negative at `lo` and eventually positive.
///
/// The upper end starts at `hi0` and is doubled until `g` turns positive;
/// `limit` caps the expansion (the root must lie below it).
pub fn bisect_increasing<F>(mut g: F, lo: f64, hi0: f64, limit: f64, rel_tol: f64) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let mut hi = hi0.max(lo + f64::MIN_POSITIVE);
    let mut doublings = 0;
    while g(hi) <= 0.0 {
        if hi >= limit || doublings >= MAX_DOUBLINGS || !hi.is_finite() {
            return Err(Error::NoRoot(format!(
                "no sign change between {lo:e} and {hi:e}"
            )));
        }
        hi = (2.0 * hi).min(limit);
        doublings += 1;
    }
    bisect(g, lo, hi, rel_tol)
}
