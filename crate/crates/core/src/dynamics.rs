//! Dynamical identities of Klein-Gordon solutions: wave-equation residuals
//! in inertial and comoving coordinates, equations of motion on the leaf,
//! four-currents and their classification, local boost equivalence of the
//! chart and the non-relativistic limit of the hydrodynamical equations.

use crate::chart::{ComovingChart, TimeConvention};
use crate::estimators::LeafDensity;
use crate::exec::Execution;
use crate::fields::{flip_time, minkowski_dot, Box4, FieldBundle, PacketOptions, PhysicalConstants, SpacetimePoint};
use crate::geometry::{covariant_gradient, laplace_beltrami, pullback_metric, SpatialMetric};
use crate::{Error, Result};
use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64 as C64;
use serde::Serialize;

const ETA: [f64; 4] = [-1.0, 1.0, 1.0, 1.0];

/// Normalized residual `|box phi - (m c / hbar)^2 phi| / ((m c / hbar)^2 |phi|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KgResidual {
    pub value: f64,
    pub budget: f64,
}

impl KgResidual {
    pub fn within_budget(&self) -> bool {
        self.value <= self.budget
    }
}

/// Wave-equation residual at `x` from the derivatives of `L = ln phi`:
/// `box phi / phi = eta^{mu nu} (L_{mu nu} + L_mu L_nu)`.
pub fn kg_residual(bundle: &FieldBundle, x: &[f64; 4]) -> Result<KgResidual> {
    let j = bundle.log_jet(x, 2)?;
    let hb = bundle.constants.hbar;
    let l1: [C64; 4] = std::array::from_fn(|a| C64::new(0.5 * j.dlnp[a], j.ds[a] / hb));
    let mut boxed = C64::new(0.0, 0.0);
    for a in 0..4 {
        boxed += ETA[a] * (C64::new(0.5 * j.ddlnp[a][a], j.dds[a][a] / hb) + l1[a] * l1[a]);
    }
    let mu2 = bundle.constants.compton_wavenumber().powi(2);
    Ok(KgResidual { value: (boxed - mu2).norm() / mu2, budget: bundle.derivative_budget() })
}

/// Step sizes of the comoving wave-equation residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComovingStencil {
    /// Outer central-difference step in chart coordinates.
    pub step: f64,
}

impl Default for ComovingStencil {
    fn default() -> Self {
        Self { step: 1e-2 }
    }
}

/// `L~ = (ln p / 2, S / hbar)` at the inertial image of `xi`.
fn chart_log(chart: &ComovingChart, xi: &[f64; 4]) -> Result<[f64; 2]> {
    let x = chart.inverse(xi)?;
    let b = &chart.bundle;
    Ok([0.5 * b.ln_density(&x)?, b.phase(&x)? / b.constants.hbar])
}

fn chart_log_gradient(chart: &ComovingChart, xi: &[f64; 4], h: f64) -> Result<[[f64; 2]; 4]> {
    let mut g = [[0.0; 2]; 4];
    for a in 0..4 {
        let mut p = *xi;
        let mut m = *xi;
        p[a] += h;
        m[a] -= h;
        let (lp, lm) = (chart_log(chart, &p)?, chart_log(chart, &m)?);
        for c in 0..2 {
            g[a][c] = (lp[c] - lm[c]) / (2.0 * h);
        }
    }
    Ok(g)
}

fn inverse_and_root(g: &Matrix4<f64>) -> Result<(Matrix4<f64>, f64)> {
    let inv = g.try_inverse().ok_or_else(|| Error::Singular("pulled-back metric".into()))?;
    Ok((inv, g.determinant().abs().sqrt()))
}

/// Wave-equation residual of `phi~ = phi o Phi^{-1}` at chart point `xi`
/// under `box_g = (1/sqrt|g|) d_a (sqrt|g| g^{ab} d_b)` with the metric
/// pulled back through the chart.
///
/// The budget adds the truncation error of the nested stencil, set by the
/// envelope wavenumber, to the amplification of the chart-map error
/// (measured by a round trip) through the outer and Jacobian steps.
pub fn comoving_kg_residual(chart: &ComovingChart, xi: &[f64; 4], stencil: &ComovingStencil) -> Result<KgResidual> {
    let h = stencil.step;
    let mut div = [0.0; 2];
    for a in 0..4 {
        for sign in [1.0, -1.0] {
            let mut p = *xi;
            p[a] += sign * h;
            let (inv, root) = inverse_and_root(&pullback_metric(chart, &p)?)?;
            let grad = chart_log_gradient(chart, &p, h)?;
            for c in 0..2 {
                let flux: f64 = (0..4).map(|b| inv[(a, b)] * grad[b][c]).sum();
                div[c] += sign * root * flux / (2.0 * h);
            }
        }
    }
    let (inv, root) = inverse_and_root(&pullback_metric(chart, xi)?)?;
    let grad = chart_log_gradient(chart, xi, h)?;
    let mut quad = C64::new(0.0, 0.0);
    for a in 0..4 {
        for b in 0..4 {
            quad += inv[(a, b)] * C64::new(grad[a][0], grad[a][1]) * C64::new(grad[b][0], grad[b][1]);
        }
    }
    let boxed = C64::new(div[0], div[1]) / root + quad;
    let constants = &chart.bundle.constants;
    let mu = constants.compton_wavenumber();
    let x = chart.inverse(xi)?;
    let map_error = chart.round_trip_error(&x)?.max(f64::EPSILON * norm_inf(&x).max(1.0));
    let k = chart.bundle.modes().envelope_wavenumber();
    let hj = chart.config.jacobian_step;
    let truncation = h * h * (k.powi(4) + mu * k.powi(3));
    let noise = mu * map_error * (1.0 / (h * h) + 1.0 / (h * hj));
    let budget = 10.0 * (truncation + noise) / (mu * mu) + chart.bundle.derivative_budget();
    Ok(KgResidual { value: (boxed - mu * mu).norm() / (mu * mu), budget })
}

fn norm_inf<const N: usize>(v: &[f64; N]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// Left-hand side of `(hbar^2/2m) nabla_i nabla^i u_k + hbar u^i nabla_i u_k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MotionResidual {
    pub residual: [f64; 3],
    pub diffusion: [f64; 3],
    pub advection: [f64; 3],
    /// Richardson estimate of the stencil error (steps `h` and `2h`) plus a
    /// rounding floor.
    pub budget: f64,
}

impl MotionResidual {
    pub fn norm(&self) -> f64 {
        norm_inf(&self.residual)
    }

    pub fn within_budget(&self) -> bool {
        self.norm() <= self.budget
    }
}

fn motion_terms<F>(u: &F, metric: &dyn SpatialMetric, q: &[f64; 3], h: f64, k: &PhysicalConstants) -> Result<([f64; 3], [f64; 3])>
where
    F: Fn(&[f64; 3]) -> Result<[f64; 3]> + ?Sized,
{
    let lap = laplace_beltrami(u, metric, q, h)?;
    let grad = covariant_gradient(u, metric, q, h)?;
    let inverse = metric
        .metric(q)?
        .try_inverse()
        .ok_or_else(|| Error::Singular("spatial metric".into()))?;
    let lower = u(q)?;
    let upper: [f64; 3] = std::array::from_fn(|i| (0..3).map(|j| inverse[(i, j)] * lower[j]).sum());
    let diffusion = lap.map(|v| k.hbar * k.hbar / (2.0 * k.mass) * v);
    let advection: [f64; 3] = std::array::from_fn(|kk| k.hbar * (0..3).map(|j| upper[j] * grad[j][kk]).sum::<f64>());
    Ok((diffusion, advection))
}

/// Stationary equation of motion for the osmotic covector `u_k` on the
/// leaf, evaluated by nested central differences with step `h`.
pub fn motion_residual<F>(
    u: &F,
    metric: &dyn SpatialMetric,
    q: &[f64; 3],
    h: f64,
    constants: &PhysicalConstants,
) -> Result<MotionResidual>
where
    F: Fn(&[f64; 3]) -> Result<[f64; 3]> + ?Sized,
{
    let (d, a) = motion_terms(u, metric, q, h, constants)?;
    let (d2, a2) = motion_terms(u, metric, q, 2.0 * h, constants)?;
    let residual: [f64; 3] = std::array::from_fn(|i| d[i] + a[i]);
    let coarse: [f64; 3] = std::array::from_fn(|i| d2[i] + a2[i]);
    let scale = norm_inf(&d).max(norm_inf(&a)).max(norm_inf(&u(q)?));
    let richardson = (0..3).map(|i| (residual[i] - coarse[i]).abs()).fold(0.0, f64::max);
    let budget = 2.0 * richardson + 64.0 * f64::EPSILON * scale.max(f64::MIN_POSITIVE) / (h * h);
    Ok(MotionResidual { residual, diffusion: d, advection: a, budget })
}

/// The osmotic covector `u_k = (hbar/2m) d_k ln rho` of a leaf density.
pub fn osmotic_covector<'a>(rho: &'a dyn LeafDensity, constants: &PhysicalConstants) -> impl Fn(&[f64; 3]) -> Result<[f64; 3]> + 'a {
    let f = 0.5 * constants.nu();
    move |q: &[f64; 3]| Ok(rho.log_gradient(q)?.map(|g| f * g))
}

/// Four-dimensional motion and continuity residuals of a stationary state
/// in comoving coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovariantResiduals {
    /// `g^{ab} [-(hbar^2/2m) nabla_a nabla_b U^mu - hbar U_a nabla_b U^mu + hbar V_a nabla_b V^mu]`.
    pub motion: [f64; 4],
    /// `nabla_mu (p V^mu)`.
    pub continuity: f64,
    pub budget: f64,
}

type Connection = [[[f64; 4]; 4]; 4];

struct BlockMetric<'a> {
    spatial: &'a dyn SpatialMetric,
    time: &'a TimeConvention,
}

impl BlockMetric<'_> {
    fn at(&self, xi: &[f64; 4]) -> Result<Matrix4<f64>> {
        let s = self.spatial.metric(&[xi[1], xi[2], xi[3]])?;
        let mut g = Matrix4::zeros();
        g[(0, 0)] = self.time.g00(xi[0]);
        for i in 0..3 {
            for j in 0..3 {
                g[(1 + i, 1 + j)] = s[(i, j)];
            }
        }
        Ok(g)
    }

    /// `Gamma^a_{bc}` by central differences of the metric.
    fn connection(&self, xi: &[f64; 4], h: f64) -> Result<(Connection, Matrix4<f64>)> {
        let g = self.at(xi)?;
        let inv = g.try_inverse().ok_or_else(|| Error::Singular("block metric".into()))?;
        let mut dg = [Matrix4::zeros(); 4];
        for (c, d) in dg.iter_mut().enumerate() {
            let mut p = *xi;
            let mut m = *xi;
            p[c] += h;
            m[c] -= h;
            *d = (self.at(&p)? - self.at(&m)?) / (2.0 * h);
        }
        let mut gamma = [[[0.0; 4]; 4]; 4];
        for a in 0..4 {
            for b in 0..4 {
                for c in 0..4 {
                    gamma[a][b][c] = 0.5
                        * (0..4)
                            .map(|d| inv[(a, d)] * (dg[b][(d, c)] + dg[c][(d, b)] - dg[d][(b, c)]))
                            .sum::<f64>();
                }
            }
        }
        Ok((gamma, inv))
    }
}

/// `T[b][mu] = nabla_b W^mu` for a contravariant field `W`.
fn nabla_vector<F>(w: &F, metric: &BlockMetric, xi: &[f64; 4], h: f64) -> Result<[[f64; 4]; 4]>
where
    F: Fn(&[f64; 4]) -> Result<[f64; 4]>,
{
    let (gamma, _) = metric.connection(xi, h)?;
    let w0 = w(xi)?;
    let mut t = [[0.0; 4]; 4];
    for b in 0..4 {
        let mut p = *xi;
        let mut m = *xi;
        p[b] += h;
        m[b] -= h;
        let (wp, wm) = (w(&p)?, w(&m)?);
        for mu in 0..4 {
            t[b][mu] = (wp[mu] - wm[mu]) / (2.0 * h) + (0..4).map(|l| gamma[mu][b][l] * w0[l]).sum::<f64>();
        }
    }
    Ok(t)
}

/// `(g^{ab} nabla_a nabla_b W^mu, W^b nabla_b W^mu)`.
fn box_and_advect<F>(w: &F, metric: &BlockMetric, xi: &[f64; 4], h: f64) -> Result<([f64; 4], [f64; 4])>
where
    F: Fn(&[f64; 4]) -> Result<[f64; 4]>,
{
    let (gamma, inv) = metric.connection(xi, h)?;
    let t0 = nabla_vector(w, metric, xi, h)?;
    let mut dt = [[[0.0; 4]; 4]; 4];
    for a in 0..4 {
        let mut p = *xi;
        let mut m = *xi;
        p[a] += h;
        m[a] -= h;
        let (tp, tm) = (nabla_vector(w, metric, &p, h)?, nabla_vector(w, metric, &m, h)?);
        for b in 0..4 {
            for mu in 0..4 {
                dt[a][b][mu] = (tp[b][mu] - tm[b][mu]) / (2.0 * h);
            }
        }
    }
    let w0 = w(xi)?;
    let mut boxed = [0.0; 4];
    let mut advect = [0.0; 4];
    for mu in 0..4 {
        for a in 0..4 {
            for b in 0..4 {
                let mut n = dt[a][b][mu];
                for l in 0..4 {
                    n += gamma[mu][a][l] * t0[b][l] - gamma[l][a][b] * t0[l][mu];
                }
                boxed[mu] += inv[(a, b)] * n;
            }
            advect[mu] += w0[a] * t0[a][mu];
        }
    }
    Ok((boxed, advect))
}

fn covariant_terms(
    rho: &dyn LeafDensity,
    spatial: &dyn SpatialMetric,
    time: &TimeConvention,
    k: &PhysicalConstants,
    xi: &[f64; 4],
    h: f64,
) -> Result<([f64; 4], f64)> {
    let metric = BlockMetric { spatial, time };
    let nu = k.nu();
    let osmotic = |p: &[f64; 4]| -> Result<[f64; 4]> {
        let q = [p[1], p[2], p[3]];
        let inv = spatial
            .metric(&q)?
            .try_inverse()
            .ok_or_else(|| Error::Singular("spatial metric".into()))?;
        let g = rho.log_gradient(&q)?;
        let mut u = [0.0; 4];
        for i in 0..3 {
            u[1 + i] = 0.5 * nu * (0..3).map(|j| inv[(i, j)] * g[j]).sum::<f64>();
        }
        Ok(u)
    };
    let current = |p: &[f64; 4]| -> Result<[f64; 4]> { Ok([k.c / (-time.g00(p[0])).sqrt(), 0.0, 0.0, 0.0]) };
    let (ub, ua) = box_and_advect(&osmotic, &metric, xi, h)?;
    let (_, va) = box_and_advect(&current, &metric, xi, h)?;
    let motion: [f64; 4] =
        std::array::from_fn(|mu| -(k.hbar * k.hbar / (2.0 * k.mass) * ub[mu] + k.hbar * ua[mu]) + k.hbar * va[mu]);

    let flux = |p: &[f64; 4]| -> Result<[f64; 4]> {
        let root = metric.at(p)?.determinant().abs().sqrt();
        let d = rho.density(&[p[1], p[2], p[3]])?;
        let v = current(p)?;
        Ok(v.map(|c| root * d * c))
    };
    let mut div = 0.0;
    for a in 0..4 {
        let mut p = *xi;
        let mut m = *xi;
        p[a] += h;
        m[a] -= h;
        div += (flux(&p)?[a] - flux(&m)?[a]) / (2.0 * h);
    }
    let continuity = div / metric.at(xi)?.determinant().abs().sqrt();
    Ok((motion, continuity))
}

/// Motion and continuity residuals for `V = (c / sqrt(-g00), 0)`,
/// `U = (0, u^i)` on the block metric `g00(xi^0) (+) sigma(q)`, with the
/// density taken time-independent.
pub fn covariant_residuals(
    rho: &dyn LeafDensity,
    spatial: &dyn SpatialMetric,
    time: &TimeConvention,
    constants: &PhysicalConstants,
    xi: &[f64; 4],
    h: f64,
) -> Result<CovariantResiduals> {
    let (m1, c1) = covariant_terms(rho, spatial, time, constants, xi, h)?;
    let (m2, c2) = covariant_terms(rho, spatial, time, constants, xi, 2.0 * h)?;
    let richardson = (0..4).map(|i| (m1[i] - m2[i]).abs()).fold((c1 - c2).abs(), f64::max);
    let scale = constants.hbar * constants.nu() * rho.log_gradient(&[xi[1], xi[2], xi[3]])?.iter().fold(1.0f64, |a, g| a.max(g.abs()));
    Ok(CovariantResiduals {
        motion: m1,
        continuity: c1,
        budget: 2.0 * richardson + 64.0 * f64::EPSILON * scale / (h * h),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    OneParticle,
    Specular,
    Indeterminate,
}

/// Four-current `J_mu = p d_mu S` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurrentSample {
    pub point: [f64; 4],
    /// Contravariant components.
    pub j: [f64; 4],
    /// `J_mu J^mu`.
    pub jj: f64,
    pub density: f64,
    /// `|J_mu J^mu + m^2 c^2 p^2| / (m^2 c^2 p^2)`.
    pub modulus_defect: f64,
    /// Relative difference between `p d S` and `(hbar/2i)(phi* d phi - phi d phi*)`.
    pub route_mismatch: f64,
    pub tolerance: f64,
    pub classification: Classification,
}

pub fn four_current(bundle: &FieldBundle, x: &[f64; 4]) -> Result<CurrentSample> {
    let jet = bundle.log_jet(x, 1)?;
    let p = jet.density;
    let lower: [f64; 4] = jet.ds.map(|s| p * s);
    let (phi, dphi) = bundle.amplitude_grad(x)?;
    let hb = bundle.constants.hbar;
    let other: [f64; 4] = std::array::from_fn(|a| hb * (phi.conj() * dphi[a]).im);
    let scale = norm_inf(&lower).max(f64::MIN_POSITIVE);
    let route_mismatch = (0..4).map(|a| (lower[a] - other[a]).abs()).fold(0.0, f64::max) / scale;
    let j = flip_time(&lower);
    let jj = minkowski_dot(&lower, &lower);
    let mc = bundle.constants.mass * bundle.constants.c;
    let rest = mc * mc * p * p;
    let modulus_defect = (jj + rest).abs() / rest;
    let tolerance = 10.0 * bundle.derivative_budget();
    let sign_scale = tolerance * mc * p;
    let classification = if modulus_defect >= tolerance {
        Classification::Indeterminate
    } else if j[0] >= -sign_scale {
        Classification::OneParticle
    } else if j[0] <= -sign_scale {
        Classification::Specular
    } else {
        Classification::Indeterminate
    };
    Ok(CurrentSample { point: *x, j, jj, density: p, modulus_defect, route_mismatch, tolerance, classification })
}

/// One class for a set of samples: the common class if all agree.
pub fn classify(samples: &[CurrentSample]) -> Classification {
    match samples.first() {
        Some(first) if samples.iter().all(|s| s.classification == first.classification) => first.classification,
        _ => Classification::Indeterminate,
    }
}

/// Three-velocity `v = c J^i / J^0` and density `p = phi* phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kinematics {
    pub velocity: [f64; 3],
    pub density: f64,
}

impl Kinematics {
    /// `(gamma c, gamma v)`.
    pub fn four_velocity(&self, c: f64) -> [f64; 4] {
        let v2: f64 = self.velocity.iter().map(|v| v * v).sum();
        let gamma = 1.0 / (1.0 - v2 / (c * c)).sqrt();
        [gamma * c, gamma * self.velocity[0], gamma * self.velocity[1], gamma * self.velocity[2]]
    }

    pub fn speed(&self) -> f64 {
        self.velocity.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub fn reconstruct_kinematics(bundle: &FieldBundle, x: &[f64; 4]) -> Result<Kinematics> {
    let s = four_current(bundle, x)?;
    if s.j[0] == 0.0 || !s.j[0].is_finite() {
        return Err(Error::ZeroJ0 { point: *x });
    }
    let c = bundle.constants.c;
    Ok(Kinematics { velocity: [c * s.j[1] / s.j[0], c * s.j[2] / s.j[0], c * s.j[3] / s.j[0]], density: s.density })
}

/// The four-current pushed into the comoving chart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComovingCurrent {
    /// Contravariant chart components `J~^a`.
    pub j: [f64; 4],
    /// `max |J~^i| / |J~^0|`.
    pub spatial_defect: f64,
    /// `|J~^0 sqrt(-g00) / (m c p) - 1|`.
    pub temporal_defect: f64,
    pub budget: f64,
}

impl ComovingCurrent {
    pub fn spatial_ok(&self) -> bool {
        self.spatial_defect <= self.budget
    }

    pub fn temporal_ok(&self) -> bool {
        self.temporal_defect <= self.budget
    }
}

pub fn comoving_current(chart: &ComovingChart, x: &[f64; 4]) -> Result<ComovingCurrent> {
    let s = four_current(&chart.bundle, x)?;
    let point = SpacetimePoint::inertial(*x);
    let j = chart.pushforward(&s.j, &point)?;
    let xi = chart.forward_map(&point)?.coords;
    let g00 = pullback_metric(chart, &xi)?[(0, 0)];
    let k = &chart.bundle.constants;
    let spatial_defect = norm_inf(&[j[1], j[2], j[3]]) / j[0].abs();
    let temporal_defect = (j[0] * (-g00).sqrt() / (k.mass * k.c * s.density) - 1.0).abs();
    let h = chart.config.jacobian_step;
    let kenv = chart.bundle.modes().envelope_wavenumber();
    let budget = 10.0 * (h * h * kenv * kenv + 1e-13 / h + s.tolerance);
    Ok(ComovingCurrent { j, spatial_defect, temporal_defect, budget })
}

/// Pure boost `Lambda^mu_nu` taking rest-frame components to a frame
/// moving with three-velocity `-v`, i.e. `Lambda (c, 0) = (gamma c, gamma v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostMatrix {
    pub matrix: Matrix4<f64>,
    pub inverse: Matrix4<f64>,
    pub velocity: [f64; 3],
}

impl BoostMatrix {
    pub fn new(velocity: [f64; 3], c: f64) -> Result<Self> {
        let v2: f64 = velocity.iter().map(|v| v * v).sum();
        if !(v2 < c * c) {
            return Err(Error::InvalidConfig(format!("speed {} is not below c = {c}", v2.sqrt())));
        }
        let build = |v: [f64; 3]| {
            let gamma = 1.0 / (1.0 - v2 / (c * c)).sqrt();
            let mut m = Matrix4::identity();
            m[(0, 0)] = gamma;
            for i in 0..3 {
                m[(0, 1 + i)] = gamma * v[i] / c;
                m[(1 + i, 0)] = gamma * v[i] / c;
                for j in 0..3 {
                    let extra = if v2 > 0.0 { (gamma - 1.0) * v[i] * v[j] / v2 } else { 0.0 };
                    m[(1 + i, 1 + j)] += extra;
                }
            }
            m
        };
        Ok(Self { matrix: build(velocity), inverse: build(velocity.map(|v| -v)), velocity })
    }

    /// `max |Lambda^T eta Lambda - eta|`.
    pub fn metric_defect(&self) -> f64 {
        let eta = Matrix4::from_diagonal(&Vector4::from(ETA));
        (self.matrix.transpose() * eta * self.matrix - eta).abs().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoostEquivalence {
    pub velocity: [f64; 3],
    /// `max |J_normal - Lambda^{-1}(v)|` over entries.
    pub deviation: f64,
    /// Whether `x` is the chart's base point, where normal coordinates apply.
    pub at_base_point: bool,
    pub jacobian: Matrix4<f64>,
    pub boost_inverse: Matrix4<f64>,
}

/// Compares the chart Jacobian at `x`, expressed in normal coordinates at
/// the chart origin, with the inverse boost of the local three-velocity.
pub fn boost_equivalence_check(chart: &ComovingChart, x: &[f64; 4]) -> Result<BoostEquivalence> {
    let bundle = &chart.bundle;
    let v4 = bundle.velocity(x)?;
    let c = bundle.constants.c;
    let velocity = [c * v4[1] / v4[0], c * v4[2] / v4[0], c * v4[3] / v4[0]];
    let boost = BoostMatrix::new(velocity, c)?;
    let j = chart.jacobian(&SpacetimePoint::inertial(*x))?;
    let e = chart.origin_frame()?;
    let mut normal = Matrix4::identity();
    for i in 0..3 {
        for k in 0..3 {
            normal[(1 + i, 1 + k)] = e[(i, k)];
        }
    }
    let jn = normal * j;
    let deviation = (jn - boost.inverse).abs().max();
    let at_base_point = *x == chart.config.origin;
    Ok(BoostEquivalence { velocity, deviation, at_base_point, jacobian: jn, boost_inverse: boost.inverse })
}

/// One named term of the hydrodynamical equations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TermMagnitude {
    pub name: &'static str,
    /// Carries an explicit `hbar^2/c` or `hbar^2/c^2` factor.
    pub quantum_relativistic: bool,
    /// Component of the equation the term belongs to.
    pub equation: &'static str,
    pub magnitude: f64,
}

/// Hydrodynamical quantities of a field at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HydroPoint {
    /// `|N - R|` where `R` is the spatial relativistic equation and `N`
    /// the Schroedinger-hydrodynamics operator.
    pub discrepancy: f64,
    /// Largest magnitude among the four terms of `N`.
    pub scale: f64,
    /// `|R|` (spatial) and temporal residual, zero for exact solutions.
    pub relativistic_residual: f64,
    pub temporal_residual: f64,
    pub speed: f64,
    pub terms: Vec<TermMagnitude>,
}

/// Evaluates both hydrodynamical systems at `x` from analytic jets.
pub fn hydro_point(bundle: &FieldBundle, x: &[f64; 4]) -> Result<HydroPoint> {
    let k = &bundle.constants;
    let (m, c) = (k.mass, k.c);
    let f = 0.5 * k.nu();
    let j = bundle.log_jet(x, 3)?;
    // Covariant components and their derivatives, d[nu][mu] = d_nu X_mu.
    let v_lo: [f64; 4] = j.ds.map(|s| s / m);
    let dv_lo: [[f64; 4]; 4] = j.dds.map(|r| r.map(|s| s / m));
    let u_lo: [f64; 4] = j.dlnp.map(|s| f * s);
    let du_lo: [[f64; 4]; 4] = j.ddlnp.map(|r| r.map(|s| f * s));
    let ddu_lo = j.dddlnp.map(|a| a.map(|r| r.map(|s| f * s)));
    let up = |mu: usize, x: f64| ETA[mu] * x;
    let v_up: [f64; 4] = std::array::from_fn(|mu| up(mu, v_lo[mu]));
    let u_up: [f64; 4] = std::array::from_fn(|mu| up(mu, u_lo[mu]));

    // Relativistic equation V.dV^mu - [(hbar/2m) box U^mu + U.dU^mu], all mu.
    let mut rel = [0.0; 4];
    for mu in 0..4 {
        let mut vdv = 0.0;
        let mut udu = 0.0;
        let mut boxed = 0.0;
        for nu in 0..4 {
            vdv += v_up[nu] * up(mu, dv_lo[nu][mu]);
            udu += u_up[nu] * up(mu, du_lo[nu][mu]);
            boxed += ETA[nu] * up(mu, ddu_lo[nu][nu][mu]);
        }
        rel[mu] = vdv - (f * boxed + udu);
    }

    // Three-velocity v^i = c V^i / V^0 and its derivatives.
    let dv_up = |nu: usize, mu: usize| up(mu, dv_lo[nu][mu]);
    let vel: [f64; 3] = std::array::from_fn(|i| c * v_up[1 + i] / v_up[0]);
    let dvel = |nu: usize, i: usize| c * (dv_up(nu, 1 + i) * v_up[0] - v_up[1 + i] * dv_up(nu, 0)) / (v_up[0] * v_up[0]);
    let mut n = [0.0; 3];
    let mut t_dt = [0.0; 3];
    let mut t_adv = [0.0; 3];
    let mut t_lap = [0.0; 3];
    let mut t_uu = [0.0; 3];
    let mut t_d00 = [0.0; 3];
    let mut t_u0 = [0.0; 3];
    for i in 0..3 {
        t_dt[i] = c * dvel(0, i);
        t_adv[i] = (0..3).map(|jj| vel[jj] * dvel(1 + jj, i)).sum();
        t_lap[i] = f * (1..4).map(|a| ddu_lo[a][a][1 + i]).sum::<f64>();
        t_uu[i] = (0..3).map(|jj| u_up[1 + jj] * du_lo[1 + jj][1 + i]).sum();
        t_d00[i] = f * ddu_lo[0][0][1 + i];
        t_u0[i] = u_up[0] * du_lo[0][1 + i];
        n[i] = t_dt[i] + t_adv[i] - (t_lap[i] + t_uu[i]);
    }
    let discrepancy = (0..3).map(|i| (n[i] - rel[1 + i]).abs()).fold(0.0, f64::max);
    let scale = [norm_inf(&t_dt), norm_inf(&t_adv), norm_inf(&t_lap), norm_inf(&t_uu)].into_iter().fold(0.0, f64::max);

    let temporal = [
        ("laplacian_u0", true, f * (1..4).map(|a| ddu_lo[a][a][0]).sum::<f64>()),
        ("time_curvature_u0", true, f * ddu_lo[0][0][0]),
        ("u0_time_advection_u0", true, u_up[0] * du_lo[0][0]),
        ("spatial_advection_u0", true, (1..4).map(|a| u_up[a] * du_lo[a][0]).sum::<f64>()),
        ("spatial_advection_v0", false, (1..4).map(|a| v_up[a] * dv_up(a, 0)).sum::<f64>()),
        ("time_advection_v0", false, v_up[0] * dv_up(0, 0)),
    ];
    let mut terms = vec![
        TermMagnitude { name: "time_curvature_u", quantum_relativistic: true, equation: "spatial", magnitude: norm_inf(&t_d00) },
        TermMagnitude { name: "u0_time_advection_u", quantum_relativistic: true, equation: "spatial", magnitude: norm_inf(&t_u0) },
    ];
    for (name, flagged, value) in temporal {
        terms.push(TermMagnitude { name, quantum_relativistic: flagged, equation: "temporal", magnitude: value.abs() });
    }
    let speed = vel.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(HydroPoint {
        discrepancy,
        scale,
        relativistic_residual: norm_inf(&[rel[1], rel[2], rel[3]]),
        temporal_residual: rel[0].abs(),
        speed,
        terms,
    })
}

/// A family of packets `sum_j w_j exp(i (eps kappa_j . x - omega_j t))` with
/// a fixed shape, sampled at `x = y / eps`, `t = s / eps^2` for fixed
/// scaled points `(s, y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonrelFamily {
    pub shape: Vec<([f64; 3], [f64; 2])>,
    pub scaled_points: Vec<[f64; 4]>,
    pub eps: Vec<f64>,
}

impl NonrelFamily {
    /// Three node-free modes, weights `(1, 0.4, 0.3)`, on a `2 x 3^3` grid
    /// of scaled points.
    pub fn standard() -> Self {
        let mut points = Vec::new();
        for s in [0.0, 0.5] {
            for a in [-1.0, 0.0, 1.0] {
                for b in [-1.0, 0.0, 1.0] {
                    for cc in [-1.0, 0.0, 1.0] {
                        points.push([s, a, 0.8 * b, 0.6 * cc]);
                    }
                }
            }
        }
        Self {
            shape: vec![
                ([0.0, 0.0, 0.0], [1.0, 0.0]),
                ([1.0, 0.5, 0.0], [0.4, 0.0]),
                ([-0.5, 1.0, 0.3], [0.0, 0.3]),
            ],
            scaled_points: points,
            eps: vec![0.1, 0.05, 0.025, 0.0125],
        }
    }

    pub fn bundle(&self, eps: f64, constants: PhysicalConstants) -> Result<FieldBundle> {
        let modes: Vec<([f64; 3], C64)> =
            self.shape.iter().map(|(k, w)| (k.map(|v| eps * v), C64::new(w[0], w[1]))).collect();
        let points: Vec<[f64; 4]> = self.scaled_points.iter().map(|p| self.physical(p, eps, &constants)).collect();
        let margin = 1.0;
        let lo: [f64; 4] = std::array::from_fn(|a| points.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min) - margin);
        let hi: [f64; 4] = std::array::from_fn(|a| points.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max) + margin);
        FieldBundle::packet(&modes, constants, Box4::new(lo, hi)?, &PacketOptions::default())
    }

    /// `(c s / eps^2, y / eps)` for `eps > 0`, the scaled point itself otherwise.
    pub fn physical(&self, p: &[f64; 4], eps: f64, constants: &PhysicalConstants) -> [f64; 4] {
        if eps == 0.0 {
            return *p;
        }
        [constants.c * p[0] / (eps * eps), p[1] / eps, p[2] / eps, p[3] / eps]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonrelRow {
    pub eps_nominal: f64,
    /// `max |v| / c` over the sample points.
    pub eps_measured: f64,
    /// `max |N - R| / max term`.
    pub discrepancy: f64,
    pub relativistic_residual: f64,
    pub temporal_residual: f64,
    /// Largest magnitude per audited term.
    pub terms: Vec<TermMagnitude>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NonrelReport {
    pub rows: Vec<NonrelRow>,
    /// Least-squares slope of `ln discrepancy` against `ln eps_measured`.
    pub slope: f64,
    pub intercept: f64,
    /// Every `hbar^2/c`-type term decreases strictly as `eps` decreases.
    pub flagged_terms_monotone: bool,
}

pub fn nonrel_limit_study(family: &NonrelFamily, constants: PhysicalConstants, exec: Execution) -> Result<NonrelReport> {
    let mut eps = family.eps.clone();
    eps.sort_by(|a, b| b.total_cmp(a));
    let rows = exec.try_map(eps.len(), |r| {
        let e = eps[r];
        let bundle = family.bundle(e, constants)?;
        let mut row = NonrelRow {
            eps_nominal: e,
            eps_measured: 0.0,
            discrepancy: 0.0,
            relativistic_residual: 0.0,
            temporal_residual: 0.0,
            terms: Vec::new(),
        };
        let mut disc = 0.0f64;
        let mut scale = 0.0f64;
        for p in &family.scaled_points {
            let h = hydro_point(&bundle, &family.physical(p, e, &constants))?;
            disc = disc.max(h.discrepancy);
            scale = scale.max(h.scale);
            row.eps_measured = row.eps_measured.max(h.speed / constants.c);
            row.relativistic_residual = row.relativistic_residual.max(h.relativistic_residual);
            row.temporal_residual = row.temporal_residual.max(h.temporal_residual);
            if row.terms.is_empty() {
                row.terms = h.terms;
            } else {
                for (a, b) in row.terms.iter_mut().zip(h.terms) {
                    a.magnitude = a.magnitude.max(b.magnitude);
                }
            }
        }
        row.discrepancy = if scale > 0.0 { disc / scale } else { 0.0 };
        Ok::<_, Error>(row)
    })?;
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.eps_measured > 0.0 && r.discrepancy > 0.0)
        .map(|r| (r.eps_measured.ln(), r.discrepancy.ln()))
        .collect();
    let (slope, intercept) = least_squares(&pts);
    let flagged_terms_monotone = rows.windows(2).all(|w| {
        w[0].terms
            .iter()
            .zip(&w[1].terms)
            .filter(|(a, _)| a.quantum_relativistic)
            .all(|(a, b)| b.magnitude < a.magnitude)
    });
    Ok(NonrelReport { rows, slope, intercept, flagged_terms_monotone })
}

fn least_squares(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chart::ChartConfig;
    use crate::estimators::{CoshDensity, GaussianDensity, LogLinearDensity, UniformDensity};
    use crate::fields::{Mode, ModeSum};
    use crate::fields::DerivativeMode;
    use crate::geometry::{ConstantMetric, CylindricalFlat};
    use nalgebra::Matrix3;
    use std::sync::Arc;

    fn nat() -> PhysicalConstants {
        PhysicalConstants::natural()
    }

    fn plane(k: [f64; 3]) -> FieldBundle {
        FieldBundle::plane_wave(k, nat(), Box4::cube(6.0), DerivativeMode::Analytic).unwrap()
    }

    fn three_mode() -> FieldBundle {
        let modes = [
            ([0.0, 0.0, 0.0], C64::new(1.0, 0.0)),
            ([0.3, 0.1, 0.0], C64::new(0.4, 0.0)),
            ([-0.1, 0.2, 0.25], C64::new(0.0, 0.3)),
        ];
        FieldBundle::packet(&modes, nat(), Box4::cube(6.0), &PacketOptions::default()).unwrap()
    }

    #[test]
    fn plane_wave_solves_the_wave_equation() {
        for k in [[0.0; 3], [0.75, 0.0, 0.0], [0.3, -0.4, 1.2]] {
            let r = kg_residual(&plane(k), &[0.3, 1.0, -2.0, 0.5]).unwrap();
            assert!(r.value < 1e-15, "{r:?}");
        }
    }

    #[test]
    fn packet_residual_within_budget() {
        let b = three_mode();
        for x in [[0.0, 0.0, 0.0, 0.0], [1.5, -2.0, 0.7, 3.0], [-3.0, 2.0, 2.0, -1.0]] {
            assert!(kg_residual(&b, &x).unwrap().within_budget());
            let fd = b.with_derivative(DerivativeMode::FiniteDifference { step: 1e-3 });
            let r = kg_residual(&fd, &x).unwrap();
            assert!(r.within_budget(), "{r:?}");
        }
    }

    #[test]
    fn wrong_frequency_is_detected() {
        // omega^2 = k^2 + 1 + delta, so the residual is delta / mu^2.
        let k = 0.5f64;
        let delta = 0.3;
        let omega = (k * k + 1.0 + delta).sqrt();
        let mode = Mode {
            weight: C64::new(1.0, 0.0),
            wave: [C64::new(0.0, -omega), C64::new(0.0, k), C64::new(0.0, 0.0), C64::new(0.0, 0.0)],
        };
        let b = FieldBundle::from_modes(ModeSum::new(vec![mode]), nat(), Box4::cube(4.0), &PacketOptions::default()).unwrap();
        let r = kg_residual(&b, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((r.value - delta).abs() < 1e-12, "{r:?}");
        assert!(!r.within_budget());
    }

    #[test]
    fn comoving_residual_of_rest_and_boosted_waves() {
        for k in [[0.0; 3], [0.75, 0.0, 0.0]] {
            let b = Arc::new(plane(k));
            let chart = ComovingChart::build(b.clone(), ChartConfig::default()).unwrap();
            let xi = chart.forward(&[0.5, 0.3, -0.2, 0.1]).unwrap();
            let r = comoving_kg_residual(&chart, &xi, &ComovingStencil::default()).unwrap();
            assert!(r.value < 1e-4 && r.within_budget(), "{r:?}");
        }
    }

    #[test]
    fn motion_residual_vanishes_for_laplace_eigenfunctions() {
        let k = nat();
        let flat = ConstantMetric(Matrix3::identity());
        for rho in [&CoshDensity { a: [0.6, -0.3, 0.2] } as &dyn LeafDensity, &LogLinearDensity { a: [0.2, 0.1, -0.4] }, &UniformDensity] {
            let u = osmotic_covector(rho, &k);
            let r = motion_residual(&u, &flat, &[0.3, -0.5, 0.8], 1e-3, &k).unwrap();
            assert!(r.within_budget(), "{r:?}");
        }
        // the cosh fixture cancels two nonzero terms
        let rho = CoshDensity { a: [0.6, -0.3, 0.2] };
        let r = motion_residual(&osmotic_covector(&rho, &k), &flat, &[0.3, -0.5, 0.8], 1e-3, &k).unwrap();
        assert!(norm_inf(&r.advection) > 1e-3 && r.norm() < 1e-6 * norm_inf(&r.advection));
    }

    #[test]
    fn gaussian_is_not_a_stationary_solution() {
        let k = nat();
        let rho = GaussianDensity { center: [0.0; 3], variance: 1.0 };
        let r = motion_residual(&osmotic_covector(&rho, &k), &ConstantMetric(Matrix3::identity()), &[0.5, 0.2, -0.1], 1e-3, &k).unwrap();
        // R = (nu^2/2) d(Delta sqrt(rho) / sqrt(rho)) with Delta sqrt(rho) / sqrt(rho) = |q|^2/4 - 3/2.
        let expected = [0.5, 0.2, -0.1].map(|q: f64| 0.25 * q);
        for i in 0..3 {
            assert!((r.residual[i] - expected[i]).abs() < 1e-6, "{:?}", r.residual);
        }
        assert!(!r.within_budget());
    }

    #[test]
    fn motion_residual_on_curvilinear_flat_coordinates() {
        // sqrt(rho) = cosh(a z) stays a Laplace eigenfunction in cylindrical coordinates.
        let k = nat();
        let rho = CoshDensity { a: [0.0, 0.0, 0.7] };
        let r = motion_residual(&osmotic_covector(&rho, &k), &CylindricalFlat, &[1.3, 0.4, 0.2], 1e-3, &k).unwrap();
        assert!(r.within_budget(), "{r:?}");
    }

    #[test]
    fn covariant_residuals_of_stationary_states() {
        let k = nat();
        let flat = ConstantMetric(Matrix3::identity());
        let xi = [0.2, 0.3, -0.5, 0.8];
        let rho = CoshDensity { a: [0.6, -0.3, 0.2] };
        for time in [TimeConvention::ProperTime, TimeConvention::Scaled(2.0)] {
            let r = covariant_residuals(&rho, &flat, &time, &k, &xi, 1e-3).unwrap();
            assert_eq!(r.continuity, 0.0);
            assert!(norm_inf(&r.motion) <= r.budget, "{r:?}");
        }
        let r = covariant_residuals(&UniformDensity, &flat, &TimeConvention::ProperTime, &k, &xi, 1e-3).unwrap();
        assert_eq!(r.motion, [0.0; 4]);
    }

    #[test]
    fn covariant_motion_matches_leaf_equation() {
        let k = nat();
        let rho = GaussianDensity { center: [0.0; 3], variance: 2.0 };
        let q = [0.4, -0.2, 0.3];
        let flat = ConstantMetric(Matrix3::identity());
        let leaf = motion_residual(&osmotic_covector(&rho, &k), &flat, &q, 1e-3, &k).unwrap();
        let cov = covariant_residuals(&rho, &flat, &TimeConvention::ProperTime, &k, &[0.0, q[0], q[1], q[2]], 1e-3).unwrap();
        for i in 0..3 {
            assert!((cov.motion[1 + i] + leaf.residual[i]).abs() < 1e-6);
        }
        assert!(cov.motion[0].abs() < 1e-9);
    }

    #[test]
    fn rest_wave_current() {
        let s = four_current(&plane([0.0; 3]), &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((s.j[0] - 1.0).abs() < 1e-15 && s.j[1..].iter().all(|v| v.abs() < 1e-15));
        assert!((s.jj + 1.0).abs() < 1e-14);
        assert_eq!(s.classification, Classification::OneParticle);
        let c = four_current(&plane([0.0; 3]).conjugate(), &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((c.j[0] + 1.0).abs() < 1e-15);
        assert_eq!(c.classification, Classification::Specular);
    }

    #[test]
    fn boosted_wave_current_and_kinematics() {
        // gamma = 1.25 for v = 0.6 c, so k = gamma v m = 0.75.
        let b = plane([0.75, 0.0, 0.0]);
        let s = four_current(&b, &[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((s.j[0] - 1.25).abs() < 1e-14 && (s.j[1] - 0.75).abs() < 1e-14);
        assert!(s.route_mismatch < 1e-12);
        let kin = reconstruct_kinematics(&b, &[0.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((kin.velocity[0] - 0.6).abs() < 1e-14 && kin.density == 1.0);
        let v = b.velocity(&[0.0, 1.0, 1.0, 1.0]).unwrap();
        let w = kin.four_velocity(1.0);
        assert!((0..4).all(|a| (v[a] - w[a]).abs() < 1e-13));
    }

    #[test]
    fn packet_kinematics_are_subluminal() {
        let b = three_mode();
        for x in [[0.0, 0.0, 0.0, 0.0], [2.0, -1.0, 3.0, 0.5]] {
            assert!(reconstruct_kinematics(&b, &x).unwrap().speed() < 1.0);
            let s = four_current(&b, &x).unwrap();
            assert!(s.route_mismatch < 1e-8);
        }
    }

    #[test]
    fn comoving_current_has_only_a_time_component() {
        let chart = ComovingChart::build(Arc::new(plane([0.75, 0.0, 0.0])), ChartConfig::default()).unwrap();
        let r = comoving_current(&chart, &[0.4, -0.3, 0.2, 0.1]).unwrap();
        assert!(r.spatial_ok() && r.temporal_ok(), "{r:?}");
        assert!((r.j[0] - 1.0).abs() < 1e-8);
        let chart = ComovingChart::build(Arc::new(three_mode()), ChartConfig::default()).unwrap();
        let r = comoving_current(&chart, &[0.4, -0.3, 0.2, 0.1]).unwrap();
        assert!(r.spatial_ok(), "{r:?}");
    }

    #[test]
    fn fd_packet_residual_scales_with_step() {
        let b = three_mode();
        let x = [0.7, -1.1, 0.4, 2.2];
        let coarse = kg_residual(&b.with_derivative(DerivativeMode::FiniteDifference { step: 2e-3 }), &x).unwrap();
        let fine = kg_residual(&b.with_derivative(DerivativeMode::FiniteDifference { step: 1e-3 }), &x).unwrap();
        assert!(fine.value < coarse.value && coarse.within_budget() && fine.within_budget());
    }

    #[test]
    fn boost_matrix_preserves_the_metric() {
        let b = BoostMatrix::new([0.6, 0.0, 0.0], 1.0).unwrap();
        assert!((b.matrix[(0, 0)] - 1.25).abs() < 1e-15 && (b.inverse[(0, 1)] + 0.75).abs() < 1e-15);
        assert!(b.metric_defect() < 1e-12);
        let o = BoostMatrix::new([0.3, -0.5, 0.7], 1.0).unwrap();
        assert!(o.metric_defect() < 1e-12);
        assert!(((o.matrix * o.inverse) - Matrix4::identity()).abs().max() < 1e-12);
        assert!(BoostMatrix::new([1.0, 0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn boost_equivalence_for_plane_waves() {
        for k in [[0.0; 3], [0.75, 0.0, 0.0]] {
            let chart = ComovingChart::build(Arc::new(plane(k)), ChartConfig::default()).unwrap();
            let r = boost_equivalence_check(&chart, &chart.config.origin.clone()).unwrap();
            assert!(r.at_base_point);
            assert!(r.deviation < 1e-5, "{r:?}");
        }
    }

    #[test]
    fn rest_member_has_no_discrepancy() {
        let family = NonrelFamily::standard();
        let b = family.bundle(0.0, nat()).unwrap();
        let h = hydro_point(&b, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(h.discrepancy, 0.0);
        assert_eq!(h.speed, 0.0);
    }

    #[test]
    fn relativistic_hydrodynamics_hold_for_packets() {
        let h = hydro_point(&three_mode(), &[0.5, 0.2, -0.3, 1.0]).unwrap();
        assert!(h.relativistic_residual < 1e-13 && h.temporal_residual < 1e-13, "{h:?}");
        assert!(h.discrepancy > 0.0);
    }
}
