//! Bracketed scalar root finding.

use crate::{Error, Result};

/// Brent's method on `[a, b]`; `f(a)` and `f(b)` must differ in sign.
pub fn brent<F>(mut f: F, a: f64, b: f64, xtol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b) = (a, b);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::RootFailure(format!(
            "no sign change on [{a:.6e}, {b:.6e}] (f = {fa:.3e}, {fb:.3e})"
        )));
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b)?;
    }
    Err(Error::RootFailure(format!(
        "Brent did not converge in {max_iter} iterations"
    )))
}

/// Newton iteration safeguarded by bisection inside a sign-change bracket.
///
/// `f` returns the value and derivative. Iterates until the step falls to
/// the rounding level of the iterate.
pub fn safeguarded_newton<F>(mut f: F, lo: f64, hi: f64, guess: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<(f64, f64)>,
{
    let (flo, _) = f(lo)?;
    let (fhi, _) = f(hi)?;
    if flo == 0.0 {
        return Ok(lo);
    }
    if fhi == 0.0 {
        return Ok(hi);
    }
    if flo.signum() == fhi.signum() {
        return Err(Error::RootFailure("bracket without sign change".into()));
    }
    // Orient so that f(xl) < 0 < f(xh).
    let (mut xl, mut xh) = if flo < 0.0 { (lo, hi) } else { (hi, lo) };
    let mut x = guess.clamp(lo.min(hi), lo.max(hi));
    let mut dx_old = (hi - lo).abs();
    let mut dx = dx_old;
    let (mut fx, mut dfx) = f(x)?;
    for _ in 0..max_iter {
        let newton_leaves = ((x - xh) * dfx - fx) * ((x - xl) * dfx - fx) > 0.0;
        let too_slow = (2.0 * fx).abs() > (dx_old * dfx).abs();
        dx_old = dx;
        if newton_leaves || too_slow || dfx == 0.0 {
            dx = 0.5 * (xh - xl);
            x = xl + dx;
        } else {
            dx = fx / dfx;
            x -= dx;
        }
        if dx.abs() <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
            return Ok(x);
        }
        (fx, dfx) = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx < 0.0 {
            xl = x;
        } else {
            xh = x;
        }
    }
    // Rounding can make the last digits oscillate; accept a tight bracket.
    if (xh - xl).abs() <= 1e-12 * x.abs().max(1.0) || dx.abs() <= 1e-13 * x.abs().max(1.0) {
        return Ok(x);
    }
    Err(Error::RootFailure(format!(
        "safeguarded Newton did not converge in {max_iter} iterations"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x| Ok(x * x * x - 2.0), 0.0, 2.0, 1e-15, 100).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
    }

    #[test]
    fn brent_rejects_same_sign() {
        assert!(brent(|x| Ok(x * x + 1.0), -1.0, 1.0, 1e-12, 50).is_err());
    }

    #[test]
    fn newton_converges_to_machine_precision() {
        let r = safeguarded_newton(|x| Ok((x.cos() - x, -x.sin() - 1.0)), 0.0, 1.0, 0.9, 60).unwrap();
        assert!((r.cos() - r).abs() < 1e-15);
    }

    #[test]
    fn newton_survives_flat_guess() {
        // Derivative vanishes at the guess; bisection must take over.
        let r = safeguarded_newton(|x| Ok((x * x * x - 0.001, 3.0 * x * x)), -1.0, 1.0, 0.0, 200).unwrap();
        assert!((r - 0.1).abs() < 1e-14);
    }
}
