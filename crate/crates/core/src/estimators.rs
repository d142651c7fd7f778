//! Density and velocity estimates from path ensembles, expectations with
//! the invariant measure `rho sqrt|sigma| d^3q`, and the energy and action
//! functionals of a stationary state.

use crate::chart::{ComovingChart, TimeConvention};
use crate::diffusion::{accumulate, ratio_field, BinSpec, BinSums, BinnedField, IncrementSums, PathEnsemble, VectorField};
use crate::exec::Execution;
use crate::fields::PhysicalConstants;
use crate::geometry::{Box3, MetricPatch, MetricSample, SpatialMetric};
use crate::numerics::quadrature::{box3_nodes, GaussLegendre};
use crate::{Error, Result};
use serde::Serialize;
use std::sync::Arc;

/// Unnormalized density on a leaf, relative to the invariant measure.
pub trait LeafDensity: Send + Sync {
    fn density(&self, q: &[f64; 3]) -> Result<f64>;
    /// `d_i ln rho`.
    fn log_gradient(&self, q: &[f64; 3]) -> Result<[f64; 3]>;
}

/// Isotropic Gaussian `exp(-|q - center|^2 / (2 variance))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianDensity {
    pub center: [f64; 3],
    pub variance: f64,
}

impl LeafDensity for GaussianDensity {
    fn density(&self, q: &[f64; 3]) -> Result<f64> {
        let r2: f64 = (0..3).map(|a| (q[a] - self.center[a]).powi(2)).sum();
        Ok((-0.5 * r2 / self.variance).exp())
    }

    fn log_gradient(&self, q: &[f64; 3]) -> Result<[f64; 3]> {
        Ok(std::array::from_fn(|a| -(q[a] - self.center[a]) / self.variance))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UniformDensity;

impl LeafDensity for UniformDensity {
    fn density(&self, _q: &[f64; 3]) -> Result<f64> {
        Ok(1.0)
    }

    fn log_gradient(&self, _q: &[f64; 3]) -> Result<[f64; 3]> {
        Ok([0.0; 3])
    }
}

/// `rho = cosh^2(a . q)`: `sqrt(rho)` is a Laplace eigenfunction on flat space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoshDensity {
    pub a: [f64; 3],
}

impl LeafDensity for CoshDensity {
    fn density(&self, q: &[f64; 3]) -> Result<f64> {
        let s: f64 = (0..3).map(|i| self.a[i] * q[i]).sum();
        Ok(s.cosh().powi(2))
    }

    fn log_gradient(&self, q: &[f64; 3]) -> Result<[f64; 3]> {
        let t = (0..3).map(|i| self.a[i] * q[i]).sum::<f64>().tanh();
        Ok(self.a.map(|a| 2.0 * a * t))
    }
}

/// `rho = exp(2 a . q)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLinearDensity {
    pub a: [f64; 3],
}

impl LeafDensity for LogLinearDensity {
    fn density(&self, q: &[f64; 3]) -> Result<f64> {
        Ok((2.0 * (0..3).map(|i| self.a[i] * q[i]).sum::<f64>()).exp())
    }

    fn log_gradient(&self, _q: &[f64; 3]) -> Result<[f64; 3]> {
        Ok(self.a.map(|a| 2.0 * a))
    }
}

/// `p` restricted to the reference surface of a chart, in base coordinates.
#[derive(Debug, Clone)]
pub struct SurfaceDensity {
    pub chart: Arc<ComovingChart>,
}

impl LeafDensity for SurfaceDensity {
    fn density(&self, q: &[f64; 3]) -> Result<f64> {
        let p = self.chart.surface.point(&self.chart.bundle, q)?;
        self.chart.bundle.density(&p.x)
    }

    fn log_gradient(&self, q: &[f64; 3]) -> Result<[f64; 3]> {
        let p = self.chart.surface.point(&self.chart.bundle, q)?;
        let j = self.chart.bundle.log_jet(&p.x, 1)?;
        Ok(std::array::from_fn(|i| j.dlnp[1 + i] + j.dlnp[0] * p.slope[i]))
    }
}

/// `u^i = (nu/2) sigma^{ij} d_j ln rho`.
pub fn osmotic_velocity(rho: &dyn LeafDensity, metric: &MetricSample, nu: f64, q: &[f64; 3]) -> Result<[f64; 3]> {
    let g = rho.log_gradient(q)?;
    Ok(std::array::from_fn(|i| 0.5 * nu * (0..3).map(|j| metric.inverse[(i, j)] * g[j]).sum::<f64>()))
}

/// Contravariant `u` of a leaf density as a vector field.
pub fn osmotic_field(rho: Arc<dyn LeafDensity>, patch: Arc<dyn MetricPatch>, nu: f64) -> VectorField {
    Arc::new(move |q: &[f64; 3]| osmotic_velocity(&*rho, &patch.sample(q)?, nu, q))
}

/// Histogram estimate of `rho`: bin fractions divided by the bin's
/// invariant volume `sqrt|sigma| dV`, so `sum rho sqrt|sigma| dV = 1`
/// over the bins.
pub fn estimate_density(
    ensemble: &PathEnsemble,
    bins: &BinSpec,
    burn_in: f64,
    patch: &dyn MetricPatch,
    exec: Execution,
) -> Result<BinnedField> {
    bins.validate()?;
    let sums = accumulate(ensemble, bins, burn_in, exec, |_| Some([0.0; 3]));
    let counts: Vec<Vec<usize>> = sums.into_iter().map(|s| s.count).collect();
    density_from_counts(&counts, bins, patch)
}

/// [`estimate_density`] from streamed increment sums.
pub fn density_from_sums(sums: &IncrementSums, patch: &dyn MetricPatch) -> Result<BinnedField> {
    let counts: Vec<Vec<usize>> = sums.batches.iter().map(|b| b.count.clone()).collect();
    density_from_counts(&counts, &sums.bins, patch)
}

fn density_from_counts(counts: &[Vec<usize>], bins: &BinSpec, patch: &dyn MetricPatch) -> Result<BinnedField> {
    let nbins = bins.len();
    let totals: Vec<f64> = counts.iter().map(|c| c.iter().sum::<usize>() as f64).collect();
    let total: f64 = totals.iter().sum();
    let nb = counts.len() as f64;
    let mut out = ratio_field(
        &counts
            .iter()
            .map(|c| BinSums { count: c.clone(), pos: vec![[0.0; 3]; nbins], value: vec![[0.0; 3]; nbins] })
            .collect::<Vec<_>>(),
        bins,
        1,
    );
    for i in 0..nbins {
        out.centroid[i] = bins.center(i);
        let n: f64 = counts.iter().map(|c| c[i] as f64).sum();
        let p = if total > 0.0 { n / total } else { 0.0 };
        let var: f64 = counts.iter().zip(&totals).map(|(c, t)| (c[i] as f64 - p * t).powi(2)).sum();
        let se = if nb > 1.0 && total > 0.0 { (nb / (nb - 1.0) * var).sqrt() / total } else { f64::NAN };
        let vol = bins.volume() * patch.sample(&out.centroid[i])?.sqrt_det;
        out.estimate[i] = [p / vol, 0.0, 0.0];
        out.stderr[i] = [se / vol, 0.0, 0.0];
    }
    Ok(out)
}

/// Current and osmotic velocity estimates on a common set of bins.
#[derive(Debug, Clone, Serialize)]
pub struct Velocities {
    /// `beta = (v_+ + v_-) / 2`.
    pub current: BinnedField,
    /// `u = (v_+ - v_-) / 2`.
    pub osmotic: BinnedField,
}

/// Invariant drifts `v_+ = b_+ + (nu/2) Gamma^i`, `v_- = b_- - (nu/2) Gamma^i`
/// from raw forward and backward drift estimates, combined into `beta` and
/// `u`. Standard errors treat the two inputs as independent.
pub fn velocities_from_drifts(
    forward: &BinnedField,
    backward: &BinnedField,
    patch: &dyn MetricPatch,
    nu: f64,
) -> Result<Velocities> {
    if forward.bins != backward.bins {
        return Err(Error::InvalidConfig("forward and backward drifts use different bins".into()));
    }
    let mut current = forward.clone();
    let mut osmotic = forward.clone();
    for i in 0..forward.counts.len() {
        let n = forward.counts[i].min(backward.counts[i]);
        current.counts[i] = n;
        osmotic.counts[i] = n;
        let f = forward.estimate[i];
        let b = backward.estimate[i];
        let c = if forward.centroid[i][0].is_finite() { forward.centroid[i] } else { forward.bins.center(i) };
        let gamma = contracted_christoffel(patch, &c)?;
        for a in 0..3 {
            let se = 0.5 * forward.stderr[i][a].hypot(backward.stderr[i][a]);
            current.estimate[i][a] = 0.5 * (f[a] + b[a]);
            osmotic.estimate[i][a] = 0.5 * (f[a] - b[a]) + 0.5 * nu * gamma[a];
            current.stderr[i][a] = se;
            osmotic.stderr[i][a] = se;
        }
    }
    Ok(Velocities { current, osmotic })
}

/// `beta` and `u` from per-sample combinations of forward and backward
/// increments, so standard errors account for their correlation.
pub fn velocities_from_sums(sums: &IncrementSums, patch: &dyn MetricPatch, nu: f64) -> Result<Velocities> {
    let current = sums.combination(0.5, 0.5);
    let mut osmotic = sums.combination(0.5, -0.5);
    for i in 0..osmotic.counts.len() {
        if osmotic.counts[i] == 0 {
            continue;
        }
        let gamma = contracted_christoffel(patch, &osmotic.centroid[i])?;
        for a in 0..3 {
            osmotic.estimate[i][a] += 0.5 * nu * gamma[a];
        }
    }
    Ok(Velocities { current, osmotic })
}

fn contracted_christoffel(patch: &dyn MetricPatch, q: &[f64; 3]) -> Result<[f64; 3]> {
    let s = patch.sample(q)?;
    Ok(s.christoffel.contracted(&s.inverse))
}

/// `(nu/2) sigma^{ij} d_j ln rho_hat` by central differences of the log
/// histogram between neighbouring bins. Edge bins and bins next to empty
/// ones are left `NaN`.
pub fn osmotic_from_density(density: &BinnedField, patch: &dyn MetricPatch, nu: f64) -> Result<BinnedField> {
    let bins = density.bins;
    let n = bins.n;
    let mut out = density.clone();
    out.components = 3;
    let flat = |i: usize, j: usize, k: usize| (i * n[1] + j) * n[2] + k;
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                let c = flat(i, j, k);
                out.estimate[c] = [f64::NAN; 3];
                out.stderr[c] = [f64::NAN; 3];
                let idx = [i, j, k];
                let mut grad = [0.0; 3];
                let mut var = [0.0; 3];
                let mut ok = true;
                for a in 0..3 {
                    if idx[a] == 0 || idx[a] + 1 == n[a] {
                        ok = false;
                        break;
                    }
                    let mut p = idx;
                    let mut m = idx;
                    p[a] += 1;
                    m[a] -= 1;
                    let (cp, cm) = (flat(p[0], p[1], p[2]), flat(m[0], m[1], m[2]));
                    let (rp, rm) = (density.estimate[cp][0], density.estimate[cm][0]);
                    if !(rp > 0.0 && rm > 0.0) {
                        ok = false;
                        break;
                    }
                    let w = 2.0 * bins.width(a);
                    grad[a] = (rp.ln() - rm.ln()) / w;
                    var[a] = ((density.stderr[cp][0] / rp).powi(2) + (density.stderr[cm][0] / rm).powi(2)) / (w * w);
                }
                if !ok {
                    continue;
                }
                let s = patch.sample(&bins.center(c))?;
                for a in 0..3 {
                    let mut u = 0.0;
                    let mut v = 0.0;
                    for b in 0..3 {
                        u += s.inverse[(a, b)] * grad[b];
                        v += (s.inverse[(a, b)]).powi(2) * var[b];
                    }
                    out.estimate[c][a] = 0.5 * nu * u;
                    out.stderr[c][a] = 0.5 * nu * v.sqrt();
                }
                out.centroid[c] = bins.center(c);
            }
        }
    }
    Ok(out)
}

/// Fraction of well-populated bins in which an estimate agrees with a
/// reference within `k` combined standard errors, per component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Agreement {
    pub bins_checked: usize,
    pub comparisons: usize,
    pub within: usize,
    pub fraction: f64,
    /// Largest `|estimate - reference| / se`.
    pub worst_z: f64,
    pub k: f64,
    pub min_count: usize,
}

impl Agreement {
    pub fn passes(&self, fraction: f64) -> bool {
        self.comparisons > 0 && self.fraction >= fraction
    }
}

/// Compares `estimate` against `reference(bin, centroid)`, which returns
/// the reference value and its own standard error (zero for exact values).
pub fn compare<F>(estimate: &BinnedField, min_count: usize, k: f64, reference: F) -> Result<Agreement>
where
    F: Fn(usize, &[f64; 3]) -> Result<Option<([f64; 3], [f64; 3])>>,
{
    let mut report = Agreement {
        bins_checked: 0,
        comparisons: 0,
        within: 0,
        fraction: 0.0,
        worst_z: 0.0,
        k,
        min_count,
    };
    for i in estimate.populated(min_count) {
        let Some((r, rse)) = reference(i, &estimate.centroid[i])? else { continue };
        let mut any = false;
        for a in 0..estimate.components {
            let se = estimate.stderr[i][a].hypot(rse[a]);
            let d = (estimate.estimate[i][a] - r[a]).abs();
            if !(se.is_finite() && d.is_finite()) {
                continue;
            }
            any = true;
            report.comparisons += 1;
            let z = if se > 0.0 { d / se } else if d == 0.0 { 0.0 } else { f64::INFINITY };
            report.worst_z = report.worst_z.max(z);
            if z <= k {
                report.within += 1;
            }
        }
        report.bins_checked += usize::from(any);
    }
    report.fraction = if report.comparisons > 0 { report.within as f64 / report.comparisons as f64 } else { 0.0 };
    Ok(report)
}

/// Covariant divergence `(1/sqrt|sigma|) d_i (sqrt|sigma| rho beta^i)` at
/// `q` by central differences. The `d_t rho` term is dropped, which is
/// exact only for stationary states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContinuityResidual {
    pub value: f64,
    pub stationary_assumed: bool,
}

pub fn continuity_residual(
    rho: &dyn LeafDensity,
    beta: &(dyn Fn(&[f64; 3]) -> Result<[f64; 3]> + Send + Sync),
    metric: &dyn SpatialMetric,
    q: &[f64; 3],
    h: f64,
) -> Result<ContinuityResidual> {
    let flux = |p: &[f64; 3], a: usize| -> Result<f64> {
        Ok(metric.metric(p)?.determinant().sqrt() * rho.density(p)? * beta(p)?[a])
    };
    let mut div = 0.0;
    for a in 0..3 {
        let mut p = *q;
        let mut m = *q;
        p[a] += h;
        m[a] -= h;
        div += (flux(&p, a)? - flux(&m, a)?) / (2.0 * h);
    }
    Ok(ContinuityResidual { value: div / metric.metric(q)?.determinant().sqrt(), stationary_assumed: true })
}

/// Per-bin continuity residual from estimated `rho` and `beta`, with the
/// error propagated from both (treated as independent).
pub fn continuity_residual_binned(rho: &BinnedField, beta: &BinnedField, patch: &dyn MetricPatch) -> Result<BinnedField> {
    if rho.bins != beta.bins {
        return Err(Error::InvalidConfig("density and current use different bins".into()));
    }
    let bins = rho.bins;
    let n = bins.n;
    let flat = |i: [usize; 3]| (i[0] * n[1] + i[1]) * n[2] + i[2];
    let root: Vec<f64> = (0..bins.len()).map(|c| patch.sample(&bins.center(c)).map(|s| s.sqrt_det)).collect::<Result<_>>()?;
    let mut out = rho.clone();
    out.components = 1;
    for c in 0..bins.len() {
        let k = c % n[2];
        let j = (c / n[2]) % n[1];
        let i = c / (n[2] * n[1]);
        let idx = [i, j, k];
        out.estimate[c] = [f64::NAN, 0.0, 0.0];
        out.stderr[c] = [f64::NAN, 0.0, 0.0];
        out.counts[c] = rho.counts[c].min(beta.counts[c]);
        if (0..3).any(|a| idx[a] == 0 || idx[a] + 1 == n[a]) {
            continue;
        }
        let mut div = 0.0;
        let mut var = 0.0;
        for a in 0..3 {
            let mut p = idx;
            let mut m = idx;
            p[a] += 1;
            m[a] -= 1;
            let w = 2.0 * bins.width(a);
            for (cell, sign) in [(flat(p), 1.0), (flat(m), -1.0)] {
                let (r, rs) = (rho.estimate[cell][0], rho.stderr[cell][0]);
                let (b, bs) = (beta.estimate[cell][a], beta.stderr[cell][a]);
                div += sign * root[cell] * r * b / w;
                var += (root[cell] / w).powi(2) * ((r * bs).powi(2) + (b * rs).powi(2));
            }
        }
        out.estimate[c][0] = div / root[c];
        out.stderr[c][0] = var.sqrt() / root[c];
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureOptions {
    /// Gauss-Legendre points per axis.
    pub order: usize,
    /// Largest tolerated `max rho sqrt|sigma|` on the box faces relative
    /// to its interior maximum.
    pub tail_tolerance: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { order: 32, tail_tolerance: 1e-8 }
    }
}

/// A quadrature value with its error estimate (difference to the rule with
/// three quarters of the order).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Expectation {
    pub value: f64,
    pub error: f64,
    /// `int rho sqrt|sigma| d^3q` of the unnormalized density.
    pub normalization: f64,
    pub tail: f64,
}

struct WeightedNodes {
    node: Vec<[f64; 3]>,
    /// Quadrature weight times `rho sqrt|sigma|`.
    weight: Vec<f64>,
    sample: Vec<MetricSample>,
    log_grad: Vec<[f64; 3]>,
}

fn weighted_nodes(
    rho: &dyn LeafDensity,
    patch: &dyn MetricPatch,
    region: &Box3,
    order: usize,
    exec: Execution,
) -> Result<WeightedNodes> {
    let nodes = box3_nodes(&GaussLegendre::new(order), &region.lo, &region.hi);
    let evals = exec.try_map(nodes.len(), |i| {
        let (q, w) = nodes[i];
        let s = patch.sample(&q)?;
        let d = rho.density(&q)?;
        Ok::<_, Error>((w * d * s.sqrt_det, s, rho.log_gradient(&q)?))
    })?;
    let mut out = WeightedNodes { node: Vec::new(), weight: Vec::new(), sample: Vec::new(), log_grad: Vec::new() };
    for ((q, _), (w, s, g)) in nodes.into_iter().zip(evals) {
        out.node.push(q);
        out.weight.push(w);
        out.sample.push(s);
        out.log_grad.push(g);
    }
    Ok(out)
}

/// `max rho sqrt|sigma|` over a grid on the faces of `region`, relative to
/// `interior_max`.
fn tail_ratio(rho: &dyn LeafDensity, patch: &dyn MetricPatch, region: &Box3, interior_max: f64) -> Result<f64> {
    const N: usize = 9;
    let mut max = 0.0f64;
    for axis in 0..3 {
        for side in [region.lo[axis], region.hi[axis]] {
            let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
            for i in 0..N {
                for j in 0..N {
                    let mut q = [0.0; 3];
                    q[axis] = side;
                    q[a] = region.lo[a] + (region.hi[a] - region.lo[a]) * i as f64 / (N - 1) as f64;
                    q[b] = region.lo[b] + (region.hi[b] - region.lo[b]) * j as f64 / (N - 1) as f64;
                    max = max.max(rho.density(&q)? * patch.sample(&q)?.sqrt_det);
                }
            }
        }
    }
    Ok(max / interior_max)
}

fn u2_at(nodes: &WeightedNodes, nu: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..nodes.node.len() {
        let g = &nodes.log_grad[i];
        let inv = &nodes.sample[i].inverse;
        let mut u2 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                u2 += inv[(a, b)] * g[a] * g[b];
            }
        }
        num += nodes.weight[i] * 0.25 * nu * nu * u2;
        den += nodes.weight[i];
    }
    num / den
}

/// `E{u^2} = (nu/2)^2 int sigma^{ij} d_i ln rho d_j ln rho rho sqrt|sigma| d^3q`
/// with `rho` normalized over `region`.
pub fn expectation_u2(
    rho: &dyn LeafDensity,
    patch: &dyn MetricPatch,
    region: &Box3,
    nu: f64,
    opts: &QuadratureOptions,
    exec: Execution,
) -> Result<Expectation> {
    let fine = weighted_nodes(rho, patch, region, opts.order, exec)?;
    let coarse = weighted_nodes(rho, patch, region, (3 * opts.order / 4).max(2), exec)?;
    let normalization: f64 = fine.weight.iter().sum();
    let interior = fine
        .weight
        .iter()
        .zip(&fine.node)
        .map(|(_, q)| Ok(rho.density(q)? * patch.sample(q)?.sqrt_det))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let tail = tail_ratio(rho, patch, region, interior)?;
    if tail > opts.tail_tolerance {
        return Err(Error::QuadratureDivergence { tail, tolerance: opts.tail_tolerance });
    }
    let value = u2_at(&fine, nu);
    let error = (value - u2_at(&coarse, nu)).abs();
    Ok(Expectation { value, error, normalization, tail })
}

/// `E{u^2}` from binned estimates: `sum u_i u^i rho sqrt|sigma| dV`.
pub fn expectation_u2_binned(u: &BinnedField, density: &BinnedField, patch: &dyn MetricPatch) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..u.counts.len() {
        let r = density.estimate[i][0];
        let v = u.estimate[i];
        if !(r.is_finite() && v.iter().all(|x| x.is_finite())) {
            continue;
        }
        let s = patch.sample(&u.bins.center(i))?;
        let mut u2 = 0.0;
        for a in 0..3 {
            for b in 0..3 {
                u2 += s.sigma[(a, b)] * v[a] * v[b];
            }
        }
        let w = r * s.sqrt_det * u.bins.volume();
        num += u2 * w;
        den += w;
    }
    Ok(num / den)
}

/// Mean energy of a stationary state by two routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyReport {
    /// Four-dimensional quadrature of `(m/2)(V.V + U.U)` against the
    /// normalized `p sqrt|g|` on `[-delta, delta] x region`.
    pub mu_direct: f64,
    /// `-(1/2) m c^2 + (1/2) m E{u^2}`.
    pub mu_identity: f64,
    pub e_u2: f64,
    pub e_u2_error: f64,
    /// `(1 + E{u^2}/c^2)^{-1/2}`.
    pub gamma_tilde: f64,
    /// `E{u^2} / c^2`.
    pub ratio: f64,
    pub delta: f64,
    /// Agreement tolerance on `|mu_direct - mu_identity|`, `1e-6 m c^2`.
    pub tolerance: f64,
}

impl EnergyReport {
    pub fn discrepancy(&self) -> f64 {
        (self.mu_direct - self.mu_identity).abs()
    }

    pub fn agrees(&self) -> bool {
        self.discrepancy() <= self.tolerance
    }
}

/// Energy report for a time-independent density on `[-delta, delta] x region`
/// with block metric `g = g00(xi^0) (+) sigma`, `V = (c / sqrt(-g00), 0)`
/// and `U = (0, u)`.
#[allow(clippy::too_many_arguments)]
pub fn energy_report(
    rho: &dyn LeafDensity,
    patch: &dyn MetricPatch,
    region: &Box3,
    time: &TimeConvention,
    delta: f64,
    constants: &PhysicalConstants,
    opts: &QuadratureOptions,
    exec: Execution,
) -> Result<EnergyReport> {
    if !(delta > 0.0) {
        return Err(Error::InvalidConfig(format!("delta = {delta} must be positive")));
    }
    let (m, c) = (constants.mass, constants.c);
    let nu = constants.nu();
    let expectation = expectation_u2(rho, patch, region, nu, opts, exec)?;
    let nodes = weighted_nodes(rho, patch, region, opts.order, exec)?;
    let (t_nodes, t_weights) = GaussLegendre::new(8).on_interval(-delta, delta);
    let mut num = 0.0;
    let mut den = 0.0;
    for (t, wt) in t_nodes.iter().zip(&t_weights) {
        let g00 = time.g00(*t);
        if !(g00 < 0.0) {
            return Err(Error::InvalidConfig(format!("g00 = {g00} is not timelike at xi0 = {t}")));
        }
        let v0 = c / (-g00).sqrt();
        let vv = g00 * v0 * v0;
        let lapse = (-g00).sqrt();
        for i in 0..nodes.node.len() {
            let s = &nodes.sample[i];
            let g = &nodes.log_grad[i];
            let u: [f64; 3] = std::array::from_fn(|a| 0.5 * nu * (0..3).map(|b| s.inverse[(a, b)] * g[b]).sum::<f64>());
            let mut uu = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    uu += s.sigma[(a, b)] * u[a] * u[b];
                }
            }
            let w = wt * lapse * nodes.weight[i];
            num += w * 0.5 * m * (vv + uu);
            den += w;
        }
    }
    let mu_direct = num / den;
    let e_u2 = expectation.value;
    let ratio = e_u2 / (c * c);
    Ok(EnergyReport {
        mu_direct,
        mu_identity: -0.5 * m * c * c + 0.5 * m * e_u2,
        e_u2,
        e_u2_error: expectation.error,
        gamma_tilde: 1.0 / (1.0 + ratio).sqrt(),
        ratio,
        delta,
        tolerance: 1e-6 * m * c * c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionReport {
    pub action: f64,
    /// `1 - E{beta^2 - u^2} / c^2`.
    pub radicand: f64,
    /// `dA/dt` at the quadrature nodes in time, all equal for a stationary state.
    pub rate_spread: f64,
}

/// `A = -m c^2 int dt (1 - (1/c^2) int (beta^2 - u^2) rho sqrt|sigma| d^3q)^{1/2}`
/// for a time-independent density and current velocity (`beta = 0` if `None`).
#[allow(clippy::too_many_arguments)]
pub fn stochastic_action(
    rho: &dyn LeafDensity,
    beta: Option<&VectorField>,
    patch: &dyn MetricPatch,
    region: &Box3,
    interval: (f64, f64),
    constants: &PhysicalConstants,
    opts: &QuadratureOptions,
    exec: Execution,
) -> Result<ActionReport> {
    let (ta, tb) = interval;
    let (m, c) = (constants.mass, constants.c);
    let nodes = weighted_nodes(rho, patch, region, opts.order, exec)?;
    let u2 = u2_at(&nodes, constants.nu());
    let b2 = match beta {
        None => 0.0,
        Some(beta) => {
            let mut num = 0.0;
            let mut den = 0.0;
            for i in 0..nodes.node.len() {
                let b = beta(&nodes.node[i])?;
                let s = &nodes.sample[i].sigma;
                let mut bb = 0.0;
                for x in 0..3 {
                    for y in 0..3 {
                        bb += s[(x, y)] * b[x] * b[y];
                    }
                }
                num += nodes.weight[i] * bb;
                den += nodes.weight[i];
            }
            num / den
        }
    };
    let radicand = 1.0 - (b2 - u2) / (c * c);
    if !(radicand > 0.0) {
        return Err(Error::ImaginaryAction { t: ta, radicand });
    }
    let (ts, ws) = GaussLegendre::new(4).on_interval(ta, tb);
    let rate = -m * c * c * radicand.sqrt();
    let rates: Vec<f64> = ts.iter().map(|_| rate).collect();
    let action = rates.iter().zip(&ws).map(|(r, w)| r * w).sum();
    let spread = rates.iter().fold(0.0f64, |a, r| a.max((r - rate).abs()));
    Ok(ActionReport { action, radicand, rate_spread: spread })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{simulate, FnDrift, InitialCondition, DiffusionConfig};
    use crate::geometry::{ConstantMetric, ConstantPatch, CylindricalFlat};
    use nalgebra::Matrix3;

    fn gaussian(variance: f64) -> GaussianDensity {
        GaussianDensity { center: [0.0; 3], variance }
    }

    #[test]
    fn gaussian_u2_closed_form() {
        let nat = PhysicalConstants::natural();
        for var in [0.5, 1.0, 2.0] {
            let region = Box3::cube(8.0 * f64::sqrt(var));
            let e = expectation_u2(&gaussian(var), &ConstantPatch::euclidean(), &region, nat.nu(), &Default::default(), Execution::Parallel).unwrap();
            let exact = 3.0 * 0.25 / var;
            assert!((e.value - exact).abs() < 1e-9 * exact, "{} {}", e.value, exact);
            assert!(e.error >= (e.value - exact).abs() && e.error < 1e-4, "{}", e.error);
        }
    }

    #[test]
    fn u2_scales_inversely_with_length_squared() {
        let region = |v: f64| Box3::cube(8.0 * v.sqrt());
        let p = ConstantPatch::euclidean();
        let o = QuadratureOptions::default();
        let a = expectation_u2(&gaussian(1.0), &p, &region(1.0), 1.0, &o, Execution::Sequential).unwrap().value;
        let b = expectation_u2(&gaussian(9.0), &p, &region(9.0), 1.0, &o, Execution::Sequential).unwrap().value;
        assert!((a / b - 9.0).abs() < 1e-9);
    }

    #[test]
    fn truncated_tails_are_rejected() {
        let r = expectation_u2(&gaussian(1.0), &ConstantPatch::euclidean(), &Box3::cube(2.0), 1.0, &Default::default(), Execution::Sequential);
        assert!(matches!(r, Err(Error::QuadratureDivergence { .. })));
    }

    #[test]
    fn uniform_density_has_no_osmotic_energy() {
        let e = expectation_u2(&UniformDensity, &ConstantPatch::euclidean(), &Box3::cube(1.0), 1.0, &QuadratureOptions { order: 4, tail_tolerance: 2.0 }, Execution::Sequential).unwrap();
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn plane_wave_energy_is_half_rest_energy() {
        let nat = PhysicalConstants::natural();
        let opts = QuadratureOptions { order: 8, tail_tolerance: 2.0 };
        let r = energy_report(&UniformDensity, &ConstantPatch::euclidean(), &Box3::cube(1.0), &TimeConvention::ProperTime, 1.0, &nat, &opts, Execution::Sequential).unwrap();
        assert_eq!(r.mu_direct, -0.5);
        assert_eq!(r.mu_identity, -0.5);
        assert_eq!(r.gamma_tilde, 1.0);
    }

    #[test]
    fn gaussian_energy_routes_agree() {
        let k = PhysicalConstants::new(1.0, 2.0, 3.0).unwrap();
        let sigma = Matrix3::from_diagonal(&nalgebra::Vector3::new(0.64, 1.0, 1.0));
        let patch = ConstantPatch::new(sigma).unwrap();
        let rho = gaussian(0.3);
        let region = Box3::cube(8.0 * 0.3f64.sqrt());
        let r = energy_report(&rho, &patch, &region, &TimeConvention::Scaled(1.5), 1.0, &k, &Default::default(), Execution::Parallel).unwrap();
        assert!(r.agrees(), "{r:?}");
        assert!(r.gamma_tilde > 0.0 && r.gamma_tilde < 1.0);
        // sigma^{11} = 1/0.64 enters only the first axis.
        let exact = (0.5 * k.nu()).powi(2) * (1.0 / 0.64 + 2.0) / 0.3;
        assert!((r.e_u2 - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn action_closed_forms() {
        let nat = PhysicalConstants::natural();
        let p = ConstantPatch::euclidean();
        let o = QuadratureOptions { order: 8, tail_tolerance: 2.0 };
        let a = stochastic_action(&UniformDensity, None, &p, &Box3::cube(1.0), (0.0, 1.0), &nat, &o, Execution::Sequential).unwrap();
        assert!((a.action + 1.0).abs() < 1e-15);
        assert_eq!(a.rate_spread, 0.0);

        let region = Box3::cube(8.0);
        let e = expectation_u2(&gaussian(1.0), &p, &region, 1.0, &Default::default(), Execution::Sequential).unwrap();
        let a = stochastic_action(&gaussian(1.0), None, &p, &region, (0.0, 2.0), &nat, &Default::default(), Execution::Sequential).unwrap();
        assert!((a.action + 2.0 * (1.0 + e.value).sqrt()).abs() < 1e-12);

        let fast: VectorField = Arc::new(|_: &[f64; 3]| Ok([2.0, 0.0, 0.0]));
        let r = stochastic_action(&UniformDensity, Some(&fast), &p, &Box3::cube(1.0), (0.0, 1.0), &nat, &o, Execution::Sequential);
        assert!(matches!(r, Err(Error::ImaginaryAction { .. })));
    }

    #[test]
    fn continuity_residual_matches_closed_form() {
        let rho = gaussian(1.0);
        let beta = |q: &[f64; 3]| -> Result<[f64; 3]> { Ok([q[0] * q[0], 0.0, 0.0]) };
        let q = [0.4, -0.3, 0.2];
        let r = continuity_residual(&rho, &beta, &ConstantMetric(Matrix3::identity()), &q, 1e-4).unwrap();
        let exact = rho.density(&q).unwrap() * (2.0 * q[0] - q[0].powi(3));
        assert!((r.value - exact).abs() < 1e-7);
        assert!(r.stationary_assumed);

        let zero = |_: &[f64; 3]| -> Result<[f64; 3]> { Ok([0.0; 3]) };
        assert_eq!(continuity_residual(&rho, &zero, &CylindricalFlat, &[1.0, 0.2, 0.0], 1e-4).unwrap().value, 0.0);
    }

    #[test]
    fn equal_drifts_give_zero_osmotic_velocity() {
        let bins = BinSpec { lo: [0.0; 3], hi: [1.0; 3], n: [1, 1, 2] };
        let f = BinnedField {
            bins,
            components: 3,
            counts: vec![10, 10],
            centroid: vec![[0.5, 0.5, 0.25], [0.5, 0.5, 0.75]],
            estimate: vec![[0.3, -0.1, 0.2]; 2],
            stderr: vec![[0.1; 3]; 2],
            batches: 32,
        };
        let v = velocities_from_drifts(&f, &f, &ConstantPatch::euclidean(), 1.0).unwrap();
        assert_eq!(v.osmotic.estimate[0], [0.0; 3]);
        assert_eq!(v.current.estimate[1], [0.3, -0.1, 0.2]);
    }

    #[test]
    fn density_normalization_includes_volume_factor() {
        let sigma = Matrix3::from_diagonal(&nalgebra::Vector3::new(0.64, 1.0, 1.0));
        let patch = ConstantPatch::new(sigma).unwrap();
        let region = Box3::cube(1.0);
        let config = DiffusionConfig {
            dt: 1e-3,
            horizon: 1e-2,
            paths: 20_000,
            seed: 2,
            nu: 1e-3,
            record_every: 5,
            explosion_bound: 1e3,
            initial: InitialCondition::Density { density: Arc::new(|_: &[f64; 3]| 1.0), region, bound: 1.0 },
        };
        let e = simulate(&FnDrift(|_: &[f64; 3]| Ok([0.0; 3])), &patch, &config, Execution::Parallel).unwrap();
        let bins = BinSpec { lo: [-0.9; 3], hi: [0.9; 3], n: [3, 3, 3] };
        let d = estimate_density(&e, &bins, 0.0, &patch, Execution::Parallel).unwrap();
        let total: f64 = d.estimate.iter().map(|r| r[0] * 0.8 * bins.volume()).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let expected = 1.0 / (bins.volume() * 27.0 * 0.8);
        let a = compare(&d, 100, 4.0, |_, _| Ok(Some(([expected, 0.0, 0.0], [0.0; 3])))).unwrap();
        assert_eq!(a.fraction, 1.0, "{a:?}");
    }
}
