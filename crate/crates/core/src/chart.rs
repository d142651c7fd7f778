//! Comoving charts: proper time along a reference worldline, spatial
//! labels from the level sets of the phase.
//!
//! The chart map sends an inertial point `x` to `(xi^0, q)`:
//!
//! - `xi^0` is the clock reading of the worldline through `O'` at the
//!   point where the worldline crosses the level set `S = S(x)`;
//! - `q` are the spatial inertial coordinates where the level flow
//!   `dx/ds = grad S / (grad S . grad S)` through `x` meets the reference
//!   surface `S = S(O')`.
//!
//! Flow lines of the level flow are the integral curves of `V` (up to
//! reparametrization), so `q` is constant along the velocity field.

use crate::fields::{flip_time, minkowski_dot, Box4, FieldBundle, Frame, FourVectorField, SpacetimePoint};
use crate::numerics::ode::{integrate, Dense, OdeOptions, Stop};
use crate::numerics::roots::{brent, safeguarded_newton};
use crate::{Error, Result};
use nalgebra::{Matrix3, Matrix4, SymmetricEigen, Vector4};
use std::fmt;
use std::sync::Arc;

/// A user-supplied clock: `g_00(xi^0) < 0` and its primitive
/// `P(xi^0) = integral_0^{xi^0} sqrt(-g_00)`.
pub trait ClockFunction: Send + Sync {
    fn g00(&self, xi0: f64) -> f64;
    fn primitive(&self, xi0: f64) -> f64;
}

/// How the comoving time coordinate is read off the worldline.
#[derive(Clone)]
pub enum TimeConvention {
    /// `xi^0` is proper length along the worldline: `g_00 = -1` on it.
    ProperTime,
    /// `xi^0 = l / a`, so `g_00 = -a^2` on the worldline.
    Scaled(f64),
    Custom(Arc<dyn ClockFunction>),
}

impl fmt::Debug for TimeConvention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeConvention::ProperTime => write!(f, "ProperTime"),
            TimeConvention::Scaled(a) => write!(f, "Scaled({a})"),
            TimeConvention::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

impl TimeConvention {
    /// `g_00` on the worldline at clock reading `xi0`.
    pub fn g00(&self, xi0: f64) -> f64 {
        match self {
            TimeConvention::ProperTime => -1.0,
            TimeConvention::Scaled(a) => -a * a,
            TimeConvention::Custom(c) => c.g00(xi0),
        }
    }

    /// Arc length from `O'` for clock reading `xi0`.
    pub fn arc_from_clock(&self, xi0: f64) -> f64 {
        match self {
            TimeConvention::ProperTime => xi0,
            TimeConvention::Scaled(a) => a * xi0,
            TimeConvention::Custom(c) => c.primitive(xi0),
        }
    }

    /// Clock reading at arc length `l`.
    pub fn clock_from_arc(&self, l: f64) -> Result<f64> {
        match self {
            TimeConvention::ProperTime => Ok(l),
            TimeConvention::Scaled(a) => Ok(l / a),
            TimeConvention::Custom(c) => {
                // The primitive is strictly increasing; widen until bracketed.
                let mut w = l.abs().max(1.0);
                while c.primitive(-w) > l || c.primitive(w) < l {
                    w *= 2.0;
                    if w > 1e12 {
                        return Err(Error::RootFailure(format!("clock primitive never reaches {l}")));
                    }
                }
                safeguarded_newton(|t| Ok((c.primitive(t) - l, (-c.g00(t)).sqrt())), -w, w, l, 200)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            TimeConvention::Scaled(a) if !(*a > 0.0 && a.is_finite()) => {
                Err(Error::InvalidConfig(format!("clock scale {a} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChartConfig {
    /// `O'`: where the reference worldline crosses the reference surface.
    pub origin: [f64; 4],
    pub time: TimeConvention,
    pub ode: OdeOptions,
    /// Central-difference step for Jacobians.
    pub jacobian_step: f64,
}

impl Default for ChartConfig {
    fn default() -> Self {
        Self { origin: [0.0; 4], time: TimeConvention::ProperTime, ode: OdeOptions::default(), jacobian_step: 1e-3 }
    }
}

/// Integral curve of a contravariant field from `start` over parameter `span`.
///
/// Fails with `LeftDomain` if the curve exits the field's domain.
pub fn integrate_curve(
    field: &FourVectorField<'_>,
    start: &SpacetimePoint,
    span: f64,
    ode: &OdeOptions,
) -> Result<Dense<4>> {
    let x0 = start.in_frame(field.frame)?;
    let contra = field.variance == crate::fields::Variance::Contravariant;
    let frame = field.frame;
    let (dense, _) = integrate(
        |_, y: &[f64; 4]| {
            let v = field.at(&SpacetimePoint { coords: *y, frame })?.components;
            Ok(if contra { v } else { flip_time(&v) })
        },
        0.0,
        x0,
        span,
        ode,
        None::<fn(f64, &[f64; 4]) -> f64>,
    )?;
    Ok(dense)
}

/// Worldline through `O'` with arc length carried as a fifth state.
#[derive(Debug, Clone)]
pub struct Worldline {
    /// `tau <= 0` leg, integrated from `O'` backwards.
    past: Dense<5>,
    /// `tau >= 0` leg.
    future: Dense<5>,
}

impl Worldline {
    pub fn build(bundle: &FieldBundle, origin: &[f64; 4], ode: &OdeOptions) -> Result<Self> {
        let domain = bundle.domain;
        let extent = (0..4).map(|a| domain.hi[a] - domain.lo[a]).fold(0.0, f64::max);
        let guard = 1e-6 * extent;
        let leg = |tau_end: f64| -> Result<Dense<5>> {
            let y0 = [origin[0], origin[1], origin[2], origin[3], 0.0];
            let mut opts = *ode;
            opts.h_max = (0.05 * extent).min(1.0);
            let (dense, stop) = integrate(
                |_, y: &[f64; 5]| {
                    let x = [y[0], y[1], y[2], y[3]];
                    let v = bundle.velocity(&x)?;
                    let speed = (-minkowski_dot(&v, &v)).sqrt();
                    Ok([v[0], v[1], v[2], v[3], speed])
                },
                0.0,
                y0,
                tau_end,
                &opts,
                Some(|_t: f64, y: &[f64; 5]| domain.margin(&[y[0], y[1], y[2], y[3]]) - guard),
            )?;
            if let Stop::Completed = stop {
                return Err(Error::RootFailure("worldline did not reach the domain boundary".into()));
            }
            Ok(dense)
        };
        if domain.margin(origin) <= guard {
            return Err(Error::OutOfDomain { point: *origin, margin: guard });
        }
        // Any tau range long enough to cross the box works; the event stops it.
        let speed = bundle.velocity(origin)?[0].abs().max(1e-12);
        let tau_max = 1e3 * extent / speed;
        Ok(Self { past: leg(-tau_max)?, future: leg(tau_max)? })
    }

    pub fn tau_range(&self) -> (f64, f64) {
        (self.past.t_last(), self.future.t_last())
    }

    /// Point and arc length at parameter `tau`.
    pub fn state(&self, tau: f64) -> ([f64; 4], f64) {
        let y = if tau < 0.0 { self.past.eval(tau) } else { self.future.eval(tau) };
        ([y[0], y[1], y[2], y[3]], y[4])
    }

    /// Parameter at which the phase equals `s`; `S` decreases along the worldline.
    pub fn tau_at_phase(&self, bundle: &FieldBundle, s: f64) -> Result<f64> {
        let (lo, hi) = self.tau_range();
        brent(|tau| Ok(bundle.phase(&self.state(tau).0)? - s), lo, hi, 1e-15, 300).map_err(|_| {
            Error::RootFailure(format!("phase {s:.6e} not reached on the worldline inside the domain"))
        })
    }

    /// Parameter at which the arc length equals `l`.
    pub fn tau_at_arc(&self, l: f64) -> Result<f64> {
        let (lo, hi) = self.tau_range();
        brent(|tau| Ok(self.state(tau).1 - l), lo, hi, 1e-15, 300)
            .map_err(|_| Error::RootFailure(format!("arc length {l:.6e} not reached on the worldline inside the domain")))
    }
}

/// The level set `S = S(O')` written as a graph `x^0 = f(q)`.
#[derive(Debug, Clone)]
pub struct ReferenceSurface {
    pub level: f64,
    pub origin: [f64; 4],
}

/// A point on the reference surface with its slope `f_i = d_i f`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfacePoint {
    pub x: [f64; 4],
    pub slope: [f64; 3],
}

impl ReferenceSurface {
    /// Height `f(q)`, solved by bracketed Newton iteration to machine precision.
    pub fn height(&self, bundle: &FieldBundle, q: &[f64; 3], guess: Option<f64>) -> Result<f64> {
        let lo = bundle.domain.lo[0];
        let hi = bundle.domain.hi[0];
        let at = |t: f64| [t, q[0], q[1], q[2]];
        let g = |t: f64| -> Result<(f64, f64)> {
            let x = at(t);
            Ok((bundle.phase(&x)? - self.level, bundle.phase_gradient(&x)?[0]))
        };
        let (glo, _) = g(lo)?;
        let (ghi, _) = g(hi)?;
        if glo.signum() == ghi.signum() {
            return Err(Error::NoBracket { q: *q });
        }
        let t = safeguarded_newton(g, lo, hi, guess.unwrap_or(self.origin[0]), 200)?;
        let slope = bundle.phase_gradient(&at(t))?[0];
        if slope == 0.0 {
            return Err(Error::ZeroSlope { point: at(t) });
        }
        Ok(t)
    }

    /// Surface point above `q` with its slope from implicit differentiation.
    pub fn point(&self, bundle: &FieldBundle, q: &[f64; 3]) -> Result<SurfacePoint> {
        let t = self.height(bundle, q, None)?;
        let x = [t, q[0], q[1], q[2]];
        let g = bundle.phase_gradient(&x)?;
        Ok(SurfacePoint { x, slope: [-g[1] / g[0], -g[2] / g[0], -g[3] / g[0]] })
    }

    /// Tangent vectors `e_i = (f_i, delta_i)` obtained by central differences of `f`.
    pub fn tangent_basis(&self, bundle: &FieldBundle, q: &[f64; 3], h: f64) -> Result<[[f64; 4]; 3]> {
        let t0 = self.height(bundle, q, None)?;
        let mut out = [[0.0; 4]; 3];
        for i in 0..3 {
            let mut qp = *q;
            let mut qm = *q;
            qp[i] += h;
            qm[i] -= h;
            let fp = self.height(bundle, &qp, Some(t0))?;
            let fm = self.height(bundle, &qm, Some(t0))?;
            out[i][0] = (fp - fm) / (2.0 * h);
            out[i][1 + i] = 1.0;
        }
        Ok(out)
    }
}

/// Comoving chart built from a field bundle.
#[derive(Debug, Clone)]
pub struct ComovingChart {
    pub bundle: Arc<FieldBundle>,
    pub config: ChartConfig,
    pub worldline: Worldline,
    pub surface: ReferenceSurface,
}

impl ComovingChart {
    pub fn build(bundle: Arc<FieldBundle>, config: ChartConfig) -> Result<Self> {
        config.time.validate()?;
        if !bundle.domain.contains(&config.origin) {
            return Err(Error::OutOfDomain { point: config.origin, margin: 0.0 });
        }
        let worldline = Worldline::build(&bundle, &config.origin, &config.ode)?;
        let level = bundle.phase(&config.origin)?;
        let surface = ReferenceSurface { level, origin: config.origin };
        Ok(Self { bundle, config, worldline, surface })
    }

    pub fn domain(&self) -> &Box4 {
        &self.bundle.domain
    }

    /// Follows the level flow from `x` (phase `S(x)`) to phase `s_target`.
    fn level_flow(&self, x: &[f64; 4], s_from: f64, s_target: f64) -> Result<[f64; 4]> {
        let bundle = &*self.bundle;
        let (dense, _) = integrate(
            |_, y: &[f64; 4]| {
                let g = bundle.phase_gradient(y)?;
                let n = minkowski_dot(&g, &g);
                let up = flip_time(&g);
                Ok(up.map(|v| v / n))
            },
            s_from,
            *x,
            s_target,
            &self.config.ode,
            None::<fn(f64, &[f64; 4]) -> f64>,
        )?;
        let mut y = dense.last();
        // One Newton step along the gradient restores the level exactly.
        let g = bundle.phase_gradient(&y)?;
        let n = minkowski_dot(&g, &g);
        let r = bundle.phase(&y)? - s_target;
        let up = flip_time(&g);
        for a in 0..4 {
            y[a] -= r * up[a] / n;
        }
        Ok(y)
    }

    /// `Phi(x) = (xi^0, q)`.
    pub fn forward_map(&self, point: &SpacetimePoint) -> Result<SpacetimePoint> {
        let x = point.in_frame(Frame::Inertial)?;
        Ok(SpacetimePoint::comoving(self.forward(&x)?))
    }

    pub(crate) fn forward(&self, x: &[f64; 4]) -> Result<[f64; 4]> {
        let s = self.bundle.phase(x)?;
        let tau = self.worldline.tau_at_phase(&self.bundle, s)?;
        let (_, arc) = self.worldline.state(tau);
        let xi0 = self.config.time.clock_from_arc(arc)?;
        let y = self.level_flow(x, s, self.surface.level)?;
        Ok([xi0, y[1], y[2], y[3]])
    }

    /// `Phi^{-1}(xi^0, q)`.
    pub fn inverse_map(&self, point: &SpacetimePoint) -> Result<SpacetimePoint> {
        let xi = point.in_frame(Frame::Comoving)?;
        Ok(SpacetimePoint::inertial(self.inverse(&xi)?))
    }

    pub(crate) fn inverse(&self, xi: &[f64; 4]) -> Result<[f64; 4]> {
        let arc = self.config.time.arc_from_clock(xi[0]);
        let tau = self.worldline.tau_at_arc(arc)?;
        let (gamma, _) = self.worldline.state(tau);
        let s_target = self.bundle.phase(&gamma)?;
        let q = [xi[1], xi[2], xi[3]];
        let t = self.surface.height(&self.bundle, &q, None)?;
        self.level_flow(&[t, q[0], q[1], q[2]], self.surface.level, s_target)
    }

    /// `d xi^a / d x^mu` by central differences (rows `a`, columns `mu`).
    pub fn jacobian(&self, point: &SpacetimePoint) -> Result<Matrix4<f64>> {
        let x = point.in_frame(Frame::Inertial)?;
        fd_jacobian(|y| self.forward(y), &x, self.config.jacobian_step)
    }

    /// `d x^mu / d xi^a` by central differences.
    pub fn inverse_jacobian(&self, point: &SpacetimePoint) -> Result<Matrix4<f64>> {
        let xi = point.in_frame(Frame::Comoving)?;
        fd_jacobian(|y| self.inverse(y), &xi, self.config.jacobian_step)
    }

    /// Components in the comoving chart of a contravariant vector at `x`.
    pub fn pushforward(&self, vector: &[f64; 4], point: &SpacetimePoint) -> Result<[f64; 4]> {
        let j = self.jacobian(point)?;
        let v = j * Vector4::from_column_slice(vector);
        Ok([v[0], v[1], v[2], v[3]])
    }

    /// Symmetric square root of the reference-surface metric at `O'`.
    ///
    /// Multiplying base coordinates by it turns the chart into local
    /// orthonormal (normal) coordinates at `O'` without a spatial rotation.
    pub fn origin_frame(&self) -> Result<Matrix3<f64>> {
        let q = [self.config.origin[1], self.config.origin[2], self.config.origin[3]];
        let p = self.surface.point(&self.bundle, &q)?;
        let f = nalgebra::Vector3::from_column_slice(&p.slope);
        let sigma = Matrix3::identity() - f * f.transpose();
        symmetric_sqrt(&sigma, &q)
    }

    /// Chart coordinates re-expressed in normal coordinates at `O'`.
    pub fn to_normal(&self, xi: &[f64; 4]) -> Result<[f64; 4]> {
        let e = self.origin_frame()?;
        let o = &self.config.origin;
        let d = nalgebra::Vector3::new(xi[1] - o[1], xi[2] - o[2], xi[3] - o[3]);
        let n = e * d;
        Ok([xi[0], n[0], n[1], n[2]])
    }

    /// Inverse of [`to_normal`](Self::to_normal).
    pub fn from_normal(&self, xn: &[f64; 4]) -> Result<[f64; 4]> {
        let e = self.origin_frame()?;
        let inv = e.try_inverse().ok_or_else(|| Error::Singular("origin frame".into()))?;
        let o = &self.config.origin;
        let d = inv * nalgebra::Vector3::new(xn[1], xn[2], xn[3]);
        Ok([xn[0], d[0] + o[1], d[1] + o[2], d[2] + o[3]])
    }

    /// `|Phi^{-1}(Phi(x)) - x|_inf`.
    pub fn round_trip_error(&self, x: &[f64; 4]) -> Result<f64> {
        let back = self.inverse(&self.forward(x)?)?;
        Ok((0..4).map(|a| (back[a] - x[a]).abs()).fold(0.0, f64::max))
    }
}

pub(crate) fn symmetric_sqrt(m: &Matrix3<f64>, q: &[f64; 3]) -> Result<Matrix3<f64>> {
    let eig = SymmetricEigen::new(*m);
    let min = eig.eigenvalues.min();
    if !(min > 0.0) {
        return Err(Error::NotSpacelike { q: *q, min_eigenvalue: min });
    }
    let d = Matrix3::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    Ok(eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// Central-difference Jacobian of a map of four variables.
pub fn fd_jacobian<F>(f: F, x: &[f64; 4], h: f64) -> Result<Matrix4<f64>>
where
    F: Fn(&[f64; 4]) -> Result<[f64; 4]>,
{
    let mut j = Matrix4::zeros();
    for mu in 0..4 {
        let mut xp = *x;
        let mut xm = *x;
        xp[mu] += h;
        xm[mu] -= h;
        let (fp, fm) = (f(&xp)?, f(&xm)?);
        for a in 0..4 {
            j[(a, mu)] = (fp[a] - fm[a]) / (2.0 * h);
        }
    }
    Ok(j)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{DerivativeMode, PacketOptions, PhysicalConstants, Variance};
    use num_complex::Complex64 as C64;

    /// Closed-form boost from the lab frame to the rest frame of velocity `v` (c = 1).
    pub(crate) fn lorentz_inverse(v: &[f64; 3], x: &[f64; 4]) -> [f64; 4] {
        let v2 = v.iter().map(|a| a * a).sum::<f64>();
        let g = 1.0 / (1.0 - v2).sqrt();
        let vx = v[0] * x[1] + v[1] * x[2] + v[2] * x[3];
        let t = g * (x[0] - vx);
        let coef = if v2 > 0.0 { (g - 1.0) * vx / v2 } else { 0.0 };
        [t, x[1] + coef * v[0] - g * v[0] * x[0], x[2] + coef * v[1] - g * v[1] * x[0], x[3] + coef * v[2] - g * v[2] * x[0]]
    }

    fn boost_chart(beta: f64, dir: [f64; 3]) -> (ComovingChart, [f64; 3]) {
        let c = PhysicalConstants::natural();
        let g = 1.0 / (1.0 - beta * beta).sqrt();
        let k = dir.map(|d| g * beta * d);
        let b = FieldBundle::plane_wave(k, c, Box4::cube(50.0), DerivativeMode::Analytic).unwrap();
        let chart = ComovingChart::build(Arc::new(b), ChartConfig::default()).unwrap();
        (chart, dir.map(|d| beta * d))
    }

    #[test]
    fn boost_chart_matches_lorentz_boost() {
        let (chart, v) = boost_chart(0.6, [1.0, 0.0, 0.0]);
        for x in [[0.3, 0.2, -0.4, 0.9], [-1.0, 0.5, 0.5, 0.5], [0.0, -0.8, 0.1, 0.0]] {
            let xi = chart.forward_map(&SpacetimePoint::inertial(x)).unwrap().coords;
            let n = chart.to_normal(&xi).unwrap();
            let expect = lorentz_inverse(&v, &x);
            for a in 0..4 {
                assert!((n[a] - expect[a]).abs() < 1e-9, "{n:?} vs {expect:?}");
            }
        }
    }

    #[test]
    fn boost_jacobian_entries() {
        let (chart, _) = boost_chart(0.6, [1.0, 0.0, 0.0]);
        let j = chart.jacobian(&SpacetimePoint::inertial([0.1, 0.2, 0.3, 0.4])).unwrap();
        // Time row in any spatial convention: (gamma, -gamma v).
        assert!((j[(0, 0)] - 1.25).abs() < 1e-8);
        assert!((j[(0, 1)] + 0.75).abs() < 1e-8);
        // Spatial rows after orthonormalization at O'.
        let e = chart.origin_frame().unwrap();
        let s = e * j.fixed_view::<3, 4>(1, 0);
        assert!((s[(0, 1)] - 1.25).abs() < 1e-8 && (s[(0, 0)] + 0.75).abs() < 1e-8);
        assert!((s[(1, 2)] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rest_wave_chart_is_identity() {
        let (chart, _) = boost_chart(0.0, [1.0, 0.0, 0.0]);
        let x = [0.7, -0.2, 1.3, 0.4];
        let xi = chart.forward_map(&SpacetimePoint::inertial(x)).unwrap().coords;
        for a in 0..4 {
            assert!((xi[a] - x[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_is_inverse_boost() {
        let (chart, v) = boost_chart(0.9, [0.6, 0.0, 0.8]);
        let x = [0.4, -0.3, 0.2, 0.7];
        let xi = chart.forward(&x).unwrap();
        let back = chart.inverse(&xi).unwrap();
        for a in 0..4 {
            assert!((back[a] - x[a]).abs() < 1e-10);
        }
        let n = chart.to_normal(&xi).unwrap();
        let expect = lorentz_inverse(&v, &x);
        for a in 0..4 {
            assert!((n[a] - expect[a]).abs() < 1e-9);
        }
    }

    #[test]
    fn wrong_frame_is_rejected() {
        let (chart, _) = boost_chart(0.3, [1.0, 0.0, 0.0]);
        let r = chart.forward_map(&SpacetimePoint::comoving([0.0; 4]));
        assert!(matches!(r, Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn velocity_pushes_forward_to_time_axis() {
        let (chart, _) = boost_chart(0.6, [1.0, 0.0, 0.0]);
        let x = [0.2, 0.1, 0.0, -0.3];
        let v = chart.bundle.velocity(&x).unwrap();
        let p = chart.pushforward(&v, &SpacetimePoint::inertial(x)).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-9);
        assert!(p[1].abs() < 1e-9 && p[2].abs() < 1e-9 && p[3].abs() < 1e-9);
    }

    #[test]
    fn curve_leaving_domain_fails() {
        let c = PhysicalConstants::natural();
        let b = FieldBundle::plane_wave([0.5, 0.0, 0.0], c, Box4::cube(1.0), DerivativeMode::Analytic).unwrap();
        let v = b.four_velocity();
        assert_eq!(v.variance, Variance::Covariant);
        let r = integrate_curve(&v, &SpacetimePoint::inertial([0.0; 4]), 10.0, &OdeOptions::default());
        assert!(matches!(r, Err(Error::LeftDomain { .. })), "{r:?}");
        assert!(integrate_curve(&v, &SpacetimePoint::inertial([0.0; 4]), 0.5, &OdeOptions::default()).is_ok());
    }

    #[test]
    fn surface_basis_is_orthogonal_to_velocity() {
        let c = PhysicalConstants::natural();
        let modes: Vec<([f64; 3], C64)> = vec![
            ([0.0, 0.0, 0.0], C64::new(1.0, 0.0)),
            ([0.2, 0.1, 0.0], C64::new(0.5, 0.0)),
            ([-0.1, 0.2, 0.1], C64::new(0.3, 0.0)),
        ];
        let b = FieldBundle::packet(&modes, c, Box4::cube(8.0), &PacketOptions::default()).unwrap();
        let chart = ComovingChart::build(Arc::new(b), ChartConfig::default()).unwrap();
        for q in [[0.0, 0.0, 0.0], [1.0, -2.0, 0.5], [3.0, 1.0, -1.0]] {
            let basis = chart.surface.tangent_basis(&chart.bundle, &q, 1e-4).unwrap();
            let p = chart.surface.point(&chart.bundle, &q).unwrap();
            let v = chart.bundle.velocity(&p.x).unwrap();
            let vn = (-minkowski_dot(&v, &v)).sqrt();
            for e in &basis {
                assert!(minkowski_dot(&v, e).abs() / vn < 1e-6);
            }
        }
    }

    #[test]
    fn packet_round_trip() {
        let c = PhysicalConstants::natural();
        let modes: Vec<([f64; 3], C64)> = vec![
            ([0.0, 0.0, 0.0], C64::new(1.0, 0.0)),
            ([0.2, 0.1, 0.0], C64::new(0.5, 0.0)),
            ([-0.1, 0.2, 0.1], C64::new(0.3, 0.0)),
        ];
        let b = FieldBundle::packet(&modes, c, Box4::cube(8.0), &PacketOptions::default()).unwrap();
        let chart = ComovingChart::build(Arc::new(b), ChartConfig::default()).unwrap();
        for x in [[0.5, 1.0, -1.0, 0.3], [-1.0, 2.0, 0.5, -0.5], [1.5, -2.0, -1.0, 1.0]] {
            assert!(chart.round_trip_error(&x).unwrap() < 1e-8);
        }
    }

    #[test]
    fn scaled_clock_rescales_time() {
        let c = PhysicalConstants::natural();
        let b = Arc::new(FieldBundle::plane_wave([0.3, 0.0, 0.0], c, Box4::cube(20.0), DerivativeMode::Analytic).unwrap());
        let proper = ComovingChart::build(b.clone(), ChartConfig::default()).unwrap();
        let scaled = ComovingChart::build(b, ChartConfig { time: TimeConvention::Scaled(2.0), ..Default::default() }).unwrap();
        let x = [1.0, 0.3, 0.0, 0.0];
        assert!((proper.forward(&x).unwrap()[0] - 2.0 * scaled.forward(&x).unwrap()[0]).abs() < 1e-12);
    }
}
