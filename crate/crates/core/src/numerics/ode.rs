//! Adaptive Dormand-Prince 5(4) integration with its fourth-order
//! continuous extension and sign-change event location.

use super::roots::brent;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen from the derivative scale when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-11,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 200_000,
        }
    }
}

/// Accepted steps of an integration, with Hermite interpolation between them.
#[derive(Debug, Clone)]
pub struct Dense<const N: usize> {
    pub ts: Vec<f64>,
    pub ys: Vec<[f64; N]>,
    pub fs: Vec<[f64; N]>,
    /// Continuous-extension coefficient of segment `i`; `None` falls back to
    /// cubic Hermite interpolation.
    pub(crate) contd: Vec<Option<[f64; N]>>,
}

impl<const N: usize> Dense<N> {
    pub fn t_first(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_last(&self) -> f64 {
        *self.ts.last().unwrap()
    }

    pub fn last(&self) -> [f64; N] {
        *self.ys.last().unwrap()
    }

    /// Index `i` such that `t` lies between `ts[i]` and `ts[i + 1]`.
    fn segment(&self, t: f64) -> usize {
        let n = self.ts.len();
        if n < 2 {
            return 0;
        }
        let forward = self.ts[n - 1] >= self.ts[0];
        let key = |s: f64| if forward { s } else { -s };
        let target = key(t);
        let idx = self.ts.partition_point(|&s| key(s) <= target);
        idx.saturating_sub(1).min(n - 2)
    }

    /// Interpolated state; extrapolates from the end segments outside the range.
    pub fn eval(&self, t: f64) -> [f64; N] {
        if self.ts.len() == 1 {
            return self.ys[0];
        }
        let i = self.segment(t);
        if let Some(r5) = &self.contd[i] {
            return continuous(self.ts[i], self.ts[i + 1], &self.ys[i], &self.ys[i + 1], &self.fs[i], &self.fs[i + 1], r5, t);
        }
        hermite(
            self.ts[i],
            self.ts[i + 1],
            &self.ys[i],
            &self.ys[i + 1],
            &self.fs[i],
            &self.fs[i + 1],
            t,
        )
    }
}

fn hermite<const N: usize>(
    t0: f64,
    t1: f64,
    y0: &[f64; N],
    y1: &[f64; N],
    f0: &[f64; N],
    f1: &[f64; N],
    t: f64,
) -> [f64; N] {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    let mut out = [0.0; N];
    for k in 0..N {
        out[k] = h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k];
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn continuous<const N: usize>(
    t0: f64,
    t1: f64,
    y0: &[f64; N],
    y1: &[f64; N],
    f0: &[f64; N],
    f1: &[f64; N],
    r5: &[f64; N],
    t: f64,
) -> [f64; N] {
    let h = t1 - t0;
    let s = (t - t0) / h;
    let s1 = 1.0 - s;
    let mut out = [0.0; N];
    for k in 0..N {
        let r2 = y1[k] - y0[k];
        let r3 = h * f0[k] - r2;
        let r4 = r2 - h * f1[k] - r3;
        out[k] = y0[k] + s * (r2 + s1 * (r3 + s * (r4 + s1 * r5[k])));
    }
    out
}

const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

/// How an integration ended.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stop<const N: usize> {
    Completed,
    Event { t: f64, y: [f64; N] },
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (either direction).
///
/// When `event` is given, integration stops at the first sign change of
/// `event(t, y)` away from a nonzero value, located on the dense output.
/// Right-hand-side failures inside a step are treated as a rejected step;
/// if the step cannot be shrunk further the error is `LeftDomain` when the
/// underlying failure was a domain exit.
pub fn integrate<const N: usize, F, G>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &OdeOptions,
    mut event: Option<G>,
) -> Result<(Dense<N>, Stop<N>)>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    G: FnMut(f64, &[f64; N]) -> f64,
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let span = (t_end - t0).abs();
    let f0 = f(t0, &y0)?;
    let mut dense = Dense {
        ts: vec![t0],
        ys: vec![y0],
        fs: vec![f0],
        contd: Vec::new(),
    };
    if span == 0.0 {
        return Ok((dense, Stop::Completed));
    }
    let scale = |y: &[f64; N], k: usize| opts.atol + opts.rtol * y[k].abs();
    let mut h = match opts.h_init {
        Some(h) => h.abs(),
        None => {
            let d0 = (0..N).map(|k| (y0[k] / scale(&y0, k)).powi(2)).sum::<f64>().sqrt();
            let d1 = (0..N).map(|k| (f0[k] / scale(&y0, k)).powi(2)).sum::<f64>().sqrt();
            if d0 < 1e-5 || d1 < 1e-5 {
                1e-6 * span.max(1e-6)
            } else {
                0.01 * d0 / d1
            }
        }
    }
    .min(span)
    .min(opts.h_max);
    let mut g_prev = event.as_mut().map(|g| g(t0, &y0));

    let mut t = t0;
    let mut y = y0;
    let mut fy = f0;
    let mut last_failure: Option<Error> = None;
    let mut k = [[0.0; N]; 7];
    for _ in 0..opts.max_steps {
        let remaining = (t_end - t).abs();
        if remaining <= 1e-15 * t_end.abs().max(span) {
            return Ok((dense, Stop::Completed));
        }
        let last_step = h >= remaining;
        let hs = if last_step { remaining } else { h };
        let h_signed = dir * hs;

        k[0] = fy;
        let mut stage_error = None;
        let mut y_new = [0.0; N];
        for s in 1..7 {
            let mut ys = y;
            for j in 0..s {
                let a = A[s][j];
                if a != 0.0 {
                    for c in 0..N {
                        ys[c] += h_signed * a * k[j][c];
                    }
                }
            }
            if s == 6 {
                y_new = ys;
            }
            match f(t + C[s] * h_signed, &ys) {
                Ok(v) => k[s] = v,
                Err(e) => {
                    stage_error = Some(e);
                    break;
                }
            }
        }
        if let Some(e) = stage_error {
            h = 0.25 * hs;
            if h < 1e-14 * t.abs().max(span) {
                return Err(match e {
                    Error::OutOfDomain { point, .. } => Error::LeftDomain { t, point },
                    other => other,
                });
            }
            last_failure = Some(e);
            continue;
        }
        let mut err = 0.0;
        for c in 0..N {
            let mut ec = 0.0;
            for s in 0..7 {
                ec += E[s] * k[s][c];
            }
            ec *= h_signed;
            let sc = opts.atol + opts.rtol * y[c].abs().max(y_new[c].abs());
            err += (ec / sc).powi(2);
        }
        err = (err / N as f64).sqrt();
        if !err.is_finite() {
            h = 0.25 * hs;
            if h < 1e-14 * t.abs().max(span) {
                return Err(Error::StepFailure { t, h });
            }
            continue;
        }
        if err <= 1.0 {
            let t_new = if last_step { t_end } else { t + h_signed };
            let f_new = k[6];
            if let (Some(g), Some(gp)) = (event.as_mut(), g_prev) {
                let g_new = g(t_new, &y_new);
                if gp != 0.0 && (g_new == 0.0 || g_new.signum() != gp.signum()) {
                    let (ta, ya, fa) = (t, y, fy);
                    let te = if g_new == 0.0 {
                        t_new
                    } else {
                        brent(
                            |s| Ok(g(s, &hermite(ta, t_new, &ya, &y_new, &fa, &f_new, s))),
                            ta,
                            t_new,
                            1e-15 * t_new.abs().max(1.0),
                            200,
                        )?
                    };
                    let ye = hermite(ta, t_new, &ya, &y_new, &fa, &f_new, te);
                    let fe = f(te, &ye)?;
                    dense.ts.push(te);
                    dense.ys.push(ye);
                    dense.fs.push(fe);
                    dense.contd.push(None);
                    return Ok((dense, Stop::Event { t: te, y: ye }));
                }
                g_prev = Some(g_new);
            }
            t = t_new;
            y = y_new;
            fy = f_new;
            dense.ts.push(t);
            dense.ys.push(y);
            dense.fs.push(fy);
            dense.contd.push(Some(std::array::from_fn(|c| {
                h_signed * (0..7).map(|st| D[st] * k[st][c]).sum::<f64>()
            })));
            last_failure = None;
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            h = (hs * factor).min(opts.h_max);
        } else {
            h = hs * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            if h < 1e-14 * t.abs().max(span) {
                return Err(Error::StepFailure { t, h });
            }
        }
    }
    Err(last_failure.unwrap_or(Error::StepFailure { t, h }))
}

#[cfg(test)]
mod tests {
    use super::*;

    type NoEvent = fn(f64, &[f64; 2]) -> f64;

    #[test]
    fn harmonic_oscillator_period() {
        let opts = OdeOptions::default();
        let (dense, stop) = integrate(
            |_, y: &[f64; 2]| Ok([y[1], -y[0]]),
            0.0,
            [1.0, 0.0],
            2.0 * std::f64::consts::PI,
            &opts,
            None::<NoEvent>,
        )
        .unwrap();
        assert_eq!(stop, Stop::Completed);
        let y = dense.last();
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8, "{y:?}");
        let mid = dense.eval(1.0);
        assert!((mid[0] - 1f64.cos()).abs() < 1e-7);
    }

    #[test]
    fn backward_integration() {
        let (dense, _) = integrate(
            |_, y: &[f64; 1]| Ok([y[0]]),
            1.0,
            [1.0],
            0.0,
            &OdeOptions::default(),
            None::<fn(f64, &[f64; 1]) -> f64>,
        )
        .unwrap();
        assert!((dense.last()[0] - (-1f64).exp()).abs() < 1e-9);
        assert!((dense.eval(0.5)[0] - (-0.5f64).exp()).abs() < 1e-8);
    }

    #[test]
    fn continuous_extension_is_fourth_order() {
        // Forced large steps: the interpolation error between steps must
        // shrink like h^5 when the step is halved.
        let err = |h: f64| {
            let opts = OdeOptions { rtol: 1e-3, atol: 1e-3, h_init: Some(h), h_max: h, max_steps: 10_000 };
            let (dense, _) = integrate(
                |_, y: &[f64; 1]| Ok([y[0]]),
                0.0,
                [1.0],
                4.0 * h,
                &opts,
                None::<fn(f64, &[f64; 1]) -> f64>,
            )
            .unwrap();
            let mut worst = 0.0f64;
            for i in 0..40 {
                let t = 4.0 * h * (i as f64 + 0.5) / 40.0;
                worst = worst.max((dense.eval(t)[0] - t.exp()).abs() / t.exp());
            }
            worst
        };
        let (e1, e2) = (err(0.4), err(0.2));
        let order = (e1 / e2).log2();
        assert!(order > 4.5, "interpolation order {order} ({e1:.3e}, {e2:.3e})");
    }

    #[test]
    fn event_is_located_on_dense_output() {
        // Falling body y'' = -1 from y = 1: hits zero at t = sqrt(2).
        let (_, stop) = integrate(
            |_, y: &[f64; 2]| Ok([y[1], -1.0]),
            0.0,
            [1.0, 0.0],
            10.0,
            &OdeOptions::default(),
            Some(|_t: f64, y: &[f64; 2]| y[0]),
        )
        .unwrap();
        match stop {
            Stop::Event { t, .. } => assert!((t - 2f64.sqrt()).abs() < 1e-12),
            Stop::Completed => panic!("event missed"),
        }
    }

    #[test]
    fn domain_exit_maps_to_left_domain() {
        let res = integrate(
            |_, y: &[f64; 1]| {
                if y[0] > 2.0 {
                    Err(Error::OutOfDomain { point: [y[0], 0.0, 0.0, 0.0], margin: 0.0 })
                } else {
                    Ok([1.0])
                }
            },
            0.0,
            [0.0],
            5.0,
            &OdeOptions::default(),
            None::<fn(f64, &[f64; 1]) -> f64>,
        );
        assert!(matches!(res, Err(Error::LeftDomain { .. })));
    }
}
