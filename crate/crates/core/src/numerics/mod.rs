//! Numerical building blocks shared by the physics modules.

pub mod ode;
pub mod quadrature;
pub mod roots;

/// Euclidean norm of a fixed-size vector.
pub fn norm<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central-difference gradient of a scalar function of `N` variables.
pub fn central_gradient<const N: usize, F>(mut f: F, x: &[f64; N], h: f64) -> crate::Result<[f64; N]>
where
    F: FnMut(&[f64; N]) -> crate::Result<f64>,
{
    let mut g = [0.0; N];
    for a in 0..N {
        let mut xp = *x;
        let mut xm = *x;
        xp[a] += h;
        xm[a] -= h;
        g[a] = (f(&xp)? - f(&xm)?) / (2.0 * h);
    }
    Ok(g)
}
