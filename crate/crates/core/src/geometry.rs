//! Riemannian geometry of the spatial leaves: pulled-back metrics,
//! Christoffel symbols, curvature and the Laplace-Beltrami operator.

use crate::chart::ComovingChart;
use crate::exec::Execution;
use crate::fields::{FieldBundle, SpacetimePoint};
use crate::{Error, Result};
use nalgebra::{Matrix3, Matrix4};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Axis-aligned box in the spatial coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Box3 {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        if (0..3).any(|a| !(lo[a] < hi[a])) {
            return Err(Error::InvalidConfig(format!("empty box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(half: f64) -> Self {
        Self { lo: [-half; 3], hi: [half; 3] }
    }

    pub fn contains(&self, q: &[f64; 3]) -> bool {
        (0..3).all(|a| q[a] >= self.lo[a] && q[a] <= self.hi[a])
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.hi[a] - self.lo[a]).product()
    }
}

/// Regular spatial lattice with `n[a]` points per axis including both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Lattice3 {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub n: [usize; 3],
}

impl Lattice3 {
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> Box3 {
        Box3 { lo: self.lo, hi: self.hi }
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if self.n[axis] <= 1 {
            0.5 * (self.lo[axis] + self.hi[axis])
        } else {
            self.lo[axis] + (self.hi[axis] - self.lo[axis]) * i as f64 / (self.n[axis] - 1) as f64
        }
    }

    pub fn point(&self, idx: usize) -> [f64; 3] {
        let k = idx % self.n[2];
        let j = (idx / self.n[2]) % self.n[1];
        let i = idx / (self.n[2] * self.n[1]);
        [self.coordinate(0, i), self.coordinate(1, j), self.coordinate(2, k)]
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

/// `Gamma^i_{jk}` stored flat, row-major in `(i, j, k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Christoffel {
    pub data: [f64; 27],
}

impl Christoffel {
    pub fn zero() -> Self {
        Self { data: [0.0; 27] }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[9 * i + 3 * j + k]
    }

    /// `Gamma^i = sigma^{jk} Gamma^i_{jk}`.
    pub fn contracted(&self, inverse: &Matrix3<f64>) -> [f64; 3] {
        std::array::from_fn(|i| {
            let mut s = 0.0;
            for j in 0..3 {
                for k in 0..3 {
                    s += inverse[(j, k)] * self.get(i, j, k);
                }
            }
            s
        })
    }
}

/// `R^i_{klm}` stored flat, row-major in `(i, k, l, m)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Riemann {
    pub data: [f64; 81],
}

impl Riemann {
    #[inline]
    pub fn get(&self, i: usize, k: usize, l: usize, m: usize) -> f64 {
        self.data[27 * i + 9 * k + 3 * l + m]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, b| a.max(b.abs()))
    }

    /// `R_{km} = R^i_{kim}`.
    pub fn ricci(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|k, m| (0..3).map(|i| self.get(i, k, i, m)).sum())
    }

    pub fn scalar(&self, inverse: &Matrix3<f64>) -> f64 {
        let r = self.ricci();
        (0..3).flat_map(|k| (0..3).map(move |m| (k, m))).map(|(k, m)| inverse[(k, m)] * r[(k, m)]).sum()
    }
}

/// A Riemannian 3-metric with first derivatives.
pub trait SpatialMetric: Send + Sync {
    fn metric(&self, q: &[f64; 3]) -> Result<Matrix3<f64>>;

    /// `d_k sigma_ij` as `[d_1 sigma, d_2 sigma, d_3 sigma]`; central
    /// differences unless overridden.
    fn derivatives(&self, q: &[f64; 3]) -> Result<[Matrix3<f64>; 3]> {
        let h = self.fd_step();
        let mut out = [Matrix3::zeros(); 3];
        for (k, slot) in out.iter_mut().enumerate() {
            let mut p = *q;
            let mut m = *q;
            p[k] += h;
            m[k] -= h;
            *slot = (self.metric(&p)? - self.metric(&m)?) / (2.0 * h);
        }
        Ok(out)
    }

    /// Step used by finite-difference derivatives of this metric.
    fn fd_step(&self) -> f64 {
        1e-4
    }
}

/// Everything the diffusion kernel needs at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSample {
    pub sigma: Matrix3<f64>,
    pub inverse: Matrix3<f64>,
    pub sqrt_det: f64,
    /// Lower-triangular `G` with `G G^T = sigma^{-1}`.
    pub factor: Matrix3<f64>,
    pub christoffel: Christoffel,
}

impl MetricSample {
    pub fn from_parts(sigma: Matrix3<f64>, christoffel: Christoffel, q: &[f64; 3]) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(sigma).ok_or_else(|| Error::NotSpacelike {
            q: *q,
            min_eigenvalue: sigma.symmetric_eigenvalues().min(),
        })?;
        let l = chol.l();
        let sqrt_det = l[(0, 0)] * l[(1, 1)] * l[(2, 2)];
        let inverse = chol.inverse();
        let factor = nalgebra::Cholesky::new(inverse)
            .ok_or_else(|| Error::Singular("inverse spatial metric".into()))?
            .l();
        Ok(Self { sigma, inverse, sqrt_det, factor, christoffel })
    }

    /// Flat metric in Cartesian-like coordinates.
    pub fn constant(sigma: Matrix3<f64>) -> Result<Self> {
        Self::from_parts(sigma, Christoffel::zero(), &[0.0; 3])
    }
}

/// `Gamma^i_{jk} = (1/2) sigma^{il} (d_j sigma_lk + d_k sigma_lj - d_l sigma_jk)`.
pub fn christoffel_from(inverse: &Matrix3<f64>, d: &[Matrix3<f64>; 3]) -> Christoffel {
    let mut out = Christoffel::zero();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let mut s = 0.0;
                for l in 0..3 {
                    s += inverse[(i, l)] * (d[j][(l, k)] + d[k][(l, j)] - d[l][(j, k)]);
                }
                out.data[9 * i + 3 * j + k] = 0.5 * s;
            }
        }
    }
    out
}

pub fn christoffel(metric: &dyn SpatialMetric, q: &[f64; 3]) -> Result<Christoffel> {
    let sigma = metric.metric(q)?;
    let inverse = sigma.try_inverse().ok_or_else(|| Error::Singular(format!("spatial metric at {q:?}")))?;
    Ok(christoffel_from(&inverse, &metric.derivatives(q)?))
}

pub fn sample(metric: &dyn SpatialMetric, q: &[f64; 3]) -> Result<MetricSample> {
    let sigma = metric.metric(q)?;
    let probe = MetricSample::from_parts(sigma, Christoffel::zero(), q)?;
    let gamma = christoffel_from(&probe.inverse, &metric.derivatives(q)?);
    Ok(MetricSample { christoffel: gamma, ..probe })
}

/// `R^i_{klm} = d_l Gamma^i_{km} - d_m Gamma^i_{kl} + Gamma^i_{al} Gamma^a_{km} - Gamma^i_{am} Gamma^a_{kl}`,
/// with derivatives of `Gamma` by central differences of step `h`.
pub fn riemann(metric: &dyn SpatialMetric, q: &[f64; 3], h: f64) -> Result<Riemann> {
    let g0 = christoffel(metric, q)?;
    let mut dg = [Christoffel::zero(); 3];
    for (l, slot) in dg.iter_mut().enumerate() {
        let mut p = *q;
        let mut m = *q;
        p[l] += h;
        m[l] -= h;
        let (gp, gm) = (christoffel(metric, &p)?, christoffel(metric, &m)?);
        for n in 0..27 {
            slot.data[n] = (gp.data[n] - gm.data[n]) / (2.0 * h);
        }
    }
    let mut r = Riemann { data: [0.0; 81] };
    for i in 0..3 {
        for k in 0..3 {
            for l in 0..3 {
                for m in 0..3 {
                    let mut v = dg[l].get(i, k, m) - dg[m].get(i, k, l);
                    for a in 0..3 {
                        v += g0.get(i, a, l) * g0.get(a, k, m) - g0.get(i, a, m) * g0.get(a, k, l);
                    }
                    r.data[27 * i + 9 * k + 3 * l + m] = v;
                }
            }
        }
    }
    Ok(r)
}

pub fn scalar_curvature(metric: &dyn SpatialMetric, q: &[f64; 3], h: f64) -> Result<f64> {
    let inverse = metric.metric(q)?.try_inverse().ok_or_else(|| Error::Singular("spatial metric".into()))?;
    Ok(riemann(metric, q, h)?.scalar(&inverse))
}

#[derive(Debug, Clone, Serialize)]
pub struct FlatnessReport {
    pub max_abs_riemann: f64,
    pub worst_point: [f64; 3],
    pub budget: f64,
    pub points: usize,
    pub flat: bool,
}

/// Largest Riemann component over `lattice`, compared against `budget`.
pub fn flatness_report(
    metric: &dyn SpatialMetric,
    lattice: &Lattice3,
    h: f64,
    budget: f64,
    exec: Execution,
) -> Result<FlatnessReport> {
    let values = exec.try_map(lattice.len(), |i| {
        let q = lattice.point(i);
        riemann(metric, &q, h).map(|r| (r.max_abs(), q))
    })?;
    let (max, worst) = values.iter().fold((0.0f64, [0.0; 3]), |acc, v| if v.0 > acc.0 { *v } else { acc });
    Ok(FlatnessReport { max_abs_riemann: max, worst_point: worst, budget, points: values.len(), flat: max < budget })
}

/// `nabla_j u_k = d_j u_k - Gamma^l_{jk} u_l` for a covector field `u`.
pub fn covariant_gradient<F>(u: &F, metric: &dyn SpatialMetric, q: &[f64; 3], h: f64) -> Result<[[f64; 3]; 3]>
where
    F: Fn(&[f64; 3]) -> Result<[f64; 3]> + ?Sized,
{
    let g = christoffel(metric, q)?;
    let u0 = u(q)?;
    let mut t = [[0.0; 3]; 3];
    for j in 0..3 {
        let mut p = *q;
        let mut m = *q;
        p[j] += h;
        m[j] -= h;
        let (up, um) = (u(&p)?, u(&m)?);
        for k in 0..3 {
            t[j][k] = (up[k] - um[k]) / (2.0 * h) - (0..3).map(|l| g.get(l, j, k) * u0[l]).sum::<f64>();
        }
    }
    Ok(t)
}

/// Rough Laplacian `sigma^{ij} nabla_i nabla_j u_k` of a 1-form, by nested
/// central differences.
pub fn laplace_beltrami<F>(u: &F, metric: &dyn SpatialMetric, q: &[f64; 3], h: f64) -> Result<[f64; 3]>
where
    F: Fn(&[f64; 3]) -> Result<[f64; 3]> + ?Sized,
{
    let sigma = metric.metric(q)?;
    let inverse = sigma.try_inverse().ok_or_else(|| Error::Singular("spatial metric".into()))?;
    let g = christoffel(metric, q)?;
    let t0 = covariant_gradient(u, metric, q, h)?;
    let mut dt = [[[0.0; 3]; 3]; 3];
    for i in 0..3 {
        let mut p = *q;
        let mut m = *q;
        p[i] += h;
        m[i] -= h;
        let (tp, tm) = (covariant_gradient(u, metric, &p, h)?, covariant_gradient(u, metric, &m, h)?);
        for j in 0..3 {
            for k in 0..3 {
                dt[i][j][k] = (tp[j][k] - tm[j][k]) / (2.0 * h);
            }
        }
    }
    let mut out = [0.0; 3];
    for (k, o) in out.iter_mut().enumerate() {
        for i in 0..3 {
            for j in 0..3 {
                let mut nt = dt[i][j][k];
                for l in 0..3 {
                    nt -= g.get(l, i, j) * t0[l][k] + g.get(l, i, k) * t0[j][l];
                }
                *o += inverse[(i, j)] * nt;
            }
        }
    }
    Ok(out)
}

/// `g_{ab}(xi) = (dx/dxi)^T eta (dx/dxi)` from the inverse chart map.
pub fn pullback_metric(chart: &ComovingChart, xi: &[f64; 4]) -> Result<Matrix4<f64>> {
    let j = chart.inverse_jacobian(&SpacetimePoint::comoving(*xi))?;
    let eta = Matrix4::from_diagonal(&nalgebra::Vector4::new(-1.0, 1.0, 1.0, 1.0));
    Ok(j.transpose() * eta * j)
}

/// Induced metric of the reference surface `x^0 = f(q)` in base
/// coordinates, `sigma_ij = delta_ij - f_i f_j`, with analytic derivatives
/// `d_k sigma_ij = -(f_ik f_j + f_i f_jk)` from implicit differentiation.
#[derive(Debug, Clone)]
pub struct SurfaceMetric {
    pub chart: Arc<ComovingChart>,
}

impl SurfaceMetric {
    pub fn new(chart: Arc<ComovingChart>) -> Self {
        Self { chart }
    }

    fn slopes(&self, q: &[f64; 3]) -> Result<([f64; 3], [[f64; 3]; 3])> {
        let bundle: &FieldBundle = &self.chart.bundle;
        let p = self.chart.surface.point(bundle, q)?;
        let j = bundle.log_jet(&p.x, 2)?;
        let s0 = j.ds[0];
        if s0 == 0.0 {
            return Err(Error::ZeroSlope { point: p.x });
        }
        let f = p.slope;
        let s = &j.dds;
        let mut f2 = [[0.0; 3]; 3];
        for i in 0..3 {
            for k in 0..3 {
                f2[i][k] = -(s[1 + i][1 + k] + s[0][1 + i] * f[k] + s[0][1 + k] * f[i] + s[0][0] * f[i] * f[k]) / s0;
            }
        }
        Ok((f, f2))
    }
}

impl SpatialMetric for SurfaceMetric {
    fn metric(&self, q: &[f64; 3]) -> Result<Matrix3<f64>> {
        let (f, _) = self.slopes(q)?;
        Ok(Matrix3::from_fn(|i, j| if i == j { 1.0 } else { 0.0 } - f[i] * f[j]))
    }

    fn derivatives(&self, q: &[f64; 3]) -> Result<[Matrix3<f64>; 3]> {
        let (f, f2) = self.slopes(q)?;
        Ok(std::array::from_fn(|k| Matrix3::from_fn(|i, j| -(f2[i][k] * f[j] + f[i] * f2[j][k]))))
    }
}

/// Reference-surface metric sample at `q`; `NotSpacelike` if it is not positive definite.
pub fn spatial_metric(chart: &Arc<ComovingChart>, q: &[f64; 3]) -> Result<MetricSample> {
    sample(&SurfaceMetric::new(chart.clone()), q)
}

/// Constant metric with vanishing connection.
#[derive(Debug, Clone, Copy)]
pub struct ConstantMetric(pub Matrix3<f64>);

impl SpatialMetric for ConstantMetric {
    fn metric(&self, _q: &[f64; 3]) -> Result<Matrix3<f64>> {
        Ok(self.0)
    }

    fn derivatives(&self, _q: &[f64; 3]) -> Result<[Matrix3<f64>; 3]> {
        Ok([Matrix3::zeros(); 3])
    }
}

/// Flat space in cylindrical coordinates `(r, theta, z)`: `diag(1, r^2, 1)`.
#[derive(Debug, Clone, Copy)]
pub struct CylindricalFlat;

impl SpatialMetric for CylindricalFlat {
    fn metric(&self, q: &[f64; 3]) -> Result<Matrix3<f64>> {
        Ok(Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, q[0] * q[0], 1.0)))
    }

    fn derivatives(&self, q: &[f64; 3]) -> Result<[Matrix3<f64>; 3]> {
        let mut d = [Matrix3::zeros(); 3];
        d[0][(1, 1)] = 2.0 * q[0];
        Ok(d)
    }
}

/// Unit two-sphere times a line, coordinates `(theta, phi, z)`:
/// `diag(1, sin^2 theta, 1)`, scalar curvature 2.
#[derive(Debug, Clone, Copy)]
pub struct SphereTimesLine;

impl SpatialMetric for SphereTimesLine {
    fn metric(&self, q: &[f64; 3]) -> Result<Matrix3<f64>> {
        Ok(Matrix3::from_diagonal(&nalgebra::Vector3::new(1.0, q[0].sin().powi(2), 1.0)))
    }

    fn derivatives(&self, q: &[f64; 3]) -> Result<[Matrix3<f64>; 3]> {
        let mut d = [Matrix3::zeros(); 3];
        d[0][(1, 1)] = 2.0 * q[0].sin() * q[0].cos();
        Ok(d)
    }
}

/// Source of metric samples for the diffusion kernel.
pub trait MetricPatch: Send + Sync {
    fn sample(&self, q: &[f64; 3]) -> Result<MetricSample>;

    /// Whether `q` lies where the patch is defined.
    fn contains(&self, _q: &[f64; 3]) -> bool {
        true
    }

    /// The sample, if it does not depend on the position.
    fn constant(&self) -> Option<&MetricSample> {
        None
    }
}

/// Position-independent metric.
#[derive(Debug, Clone, Copy)]
pub struct ConstantPatch {
    sample: MetricSample,
}

impl ConstantPatch {
    pub fn new(sigma: Matrix3<f64>) -> Result<Self> {
        Ok(Self { sample: MetricSample::constant(sigma)? })
    }

    pub fn euclidean() -> Self {
        Self::new(Matrix3::identity()).expect("identity is positive definite")
    }
}

impl MetricPatch for ConstantPatch {
    fn sample(&self, _q: &[f64; 3]) -> Result<MetricSample> {
        Ok(self.sample)
    }

    fn constant(&self) -> Option<&MetricSample> {
        Some(&self.sample)
    }
}

/// Samples computed on demand from a metric, optionally restricted to a box.
pub struct DirectPatch<M: SpatialMetric> {
    pub metric: M,
    pub region: Option<Box3>,
}

impl<M: SpatialMetric> MetricPatch for DirectPatch<M> {
    fn sample(&self, q: &[f64; 3]) -> Result<MetricSample> {
        sample(&self.metric, q)
    }

    fn contains(&self, q: &[f64; 3]) -> bool {
        self.region.is_none_or(|r| r.contains(q))
    }
}

/// Metric and connection tabulated on a lattice and interpolated trilinearly.
#[derive(Debug, Clone)]
pub struct LatticePatch {
    pub lattice: Lattice3,
    sigma: Vec<Matrix3<f64>>,
    gamma: Vec<Christoffel>,
}

impl LatticePatch {
    pub fn build(metric: &dyn SpatialMetric, lattice: Lattice3, exec: Execution) -> Result<Self> {
        if lattice.n.iter().any(|&n| n < 2) {
            return Err(Error::InvalidConfig("metric lattice needs at least two points per axis".into()));
        }
        let samples = exec.try_map(lattice.len(), |i| sample(metric, &lattice.point(i)))?;
        Ok(Self {
            lattice,
            sigma: samples.iter().map(|s| s.sigma).collect(),
            gamma: samples.iter().map(|s| s.christoffel).collect(),
        })
    }

    fn cell(&self, q: &[f64; 3]) -> ([usize; 3], [f64; 3]) {
        let l = &self.lattice;
        let mut idx = [0usize; 3];
        let mut w = [0.0; 3];
        for a in 0..3 {
            let span = (l.hi[a] - l.lo[a]) / (l.n[a] - 1) as f64;
            let s = ((q[a] - l.lo[a]) / span).clamp(0.0, (l.n[a] - 1) as f64);
            let i = (s.floor() as usize).min(l.n[a] - 2);
            idx[a] = i;
            w[a] = s - i as f64;
        }
        (idx, w)
    }
}

impl MetricPatch for LatticePatch {
    fn sample(&self, q: &[f64; 3]) -> Result<MetricSample> {
        let (idx, w) = self.cell(q);
        let n = &self.lattice.n;
        let mut sigma = Matrix3::zeros();
        let mut gamma = Christoffel::zero();
        for corner in 0..8 {
            let o = [(corner >> 2) & 1, (corner >> 1) & 1, corner & 1];
            let weight: f64 = (0..3).map(|a| if o[a] == 1 { w[a] } else { 1.0 - w[a] }).product();
            if weight == 0.0 {
                continue;
            }
            let flat = ((idx[0] + o[0]) * n[1] + idx[1] + o[1]) * n[2] + idx[2] + o[2];
            sigma += self.sigma[flat] * weight;
            for m in 0..27 {
                gamma.data[m] += weight * self.gamma[flat].data[m];
            }
        }
        MetricSample::from_parts(sigma, gamma, q)
    }

    fn contains(&self, q: &[f64; 3]) -> bool {
        self.lattice.bounds().contains(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cylindrical_christoffels() {
        let q = [1.7, 0.4, -0.2];
        let g = christoffel(&CylindricalFlat, &q).unwrap();
        assert!((g.get(0, 1, 1) + 1.7).abs() < 1e-14);
        assert!((g.get(1, 0, 1) - 1.0 / 1.7).abs() < 1e-14);
        assert!((g.get(1, 1, 0) - 1.0 / 1.7).abs() < 1e-14);
        assert_eq!(g.get(2, 2, 2), 0.0);
        let r = riemann(&CylindricalFlat, &q, 1e-3).unwrap();
        assert!(r.max_abs() < 1e-5, "{}", r.max_abs());
    }

    #[test]
    fn sphere_has_scalar_curvature_two() {
        for q in [[0.8, 0.1, 0.0], [1.3, 2.0, 5.0], [2.1, -1.0, 0.3]] {
            let s = scalar_curvature(&SphereTimesLine, &q, 1e-3).unwrap();
            assert!((s - 2.0).abs() < 1e-5, "{s}");
            let r = riemann(&SphereTimesLine, &q, 1e-3).unwrap();
            assert!((r.get(0, 1, 0, 1) - q[0].sin().powi(2)).abs() < 1e-5);
        }
    }

    #[test]
    fn flatness_gate_rejects_sphere() {
        let l = Lattice3 { lo: [0.6, -1.0, -1.0], hi: [2.4, 1.0, 1.0], n: [4, 3, 3] };
        let rep = flatness_report(&SphereTimesLine, &l, 1e-3, 1e-3, Execution::Sequential).unwrap();
        assert!(!rep.flat);
        let rep = flatness_report(&CylindricalFlat, &l, 1e-3, 1e-3, Execution::Sequential).unwrap();
        assert!(rep.flat);
    }

    #[test]
    fn factor_reproduces_inverse() {
        let sigma = Matrix3::new(0.64, 0.1, 0.0, 0.1, 1.0, 0.2, 0.0, 0.2, 1.5);
        let s = MetricSample::constant(sigma).unwrap();
        assert!((s.factor * s.factor.transpose() - s.inverse).abs().max() < 1e-14);
        assert!((s.sqrt_det - sigma.determinant().sqrt()).abs() < 1e-14);
        let bad = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(matches!(MetricSample::constant(bad), Err(Error::NotSpacelike { .. })));
    }

    #[test]
    fn laplacian_of_gradient_in_cylindrical_coordinates() {
        // u = d(r^2) = (2r, 0, 0): its rough Laplacian equals d(Delta r^2) = 0
        // on flat space, so the result must vanish in curvilinear coordinates.
        let u = |q: &[f64; 3]| Ok([2.0 * q[0], 0.0, 0.0]);
        let lap = laplace_beltrami(&u, &CylindricalFlat, &[1.3, 0.2, 0.0], 1e-3).unwrap();
        assert!(lap.iter().all(|v| v.abs() < 1e-6), "{lap:?}");
        // u = d(x), x = r cos(theta): harmonic in Cartesian terms as well.
        let u = |q: &[f64; 3]| Ok([q[1].cos(), -q[0] * q[1].sin(), 0.0]);
        let lap = laplace_beltrami(&u, &CylindricalFlat, &[0.9, 0.7, 0.0], 1e-3).unwrap();
        assert!(lap.iter().all(|v| v.abs() < 1e-6), "{lap:?}");
        // u = d(r^4 / 4) = (r^3, 0, 0): Delta of r^4/4 is 4 r^2, gradient (8 r, 0, 0).
        let u = |q: &[f64; 3]| Ok([q[0].powi(3), 0.0, 0.0]);
        let lap = laplace_beltrami(&u, &CylindricalFlat, &[1.1, 0.0, 0.0], 1e-3).unwrap();
        assert!((lap[0] - 8.0 * 1.1).abs() < 1e-5 && lap[1].abs() < 1e-6, "{lap:?}");
    }

    #[test]
    fn lattice_patch_interpolates_constant_exactly() {
        let m = ConstantMetric(Matrix3::new(2.0, 0.3, 0.0, 0.3, 1.0, 0.0, 0.0, 0.0, 1.0));
        let lat = Lattice3 { lo: [-1.0; 3], hi: [1.0; 3], n: [3; 3] };
        let p = LatticePatch::build(&m, lat, Execution::Sequential).unwrap();
        let s = p.sample(&[0.3, -0.7, 0.1]).unwrap();
        assert!((s.sigma - m.0).abs().max() < 1e-15);
        assert!(!p.contains(&[1.5, 0.0, 0.0]));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        /// Lowering the first index gives the Christoffel symbols of the first kind,
        /// which are symmetric in the last two indices; and the Riemann tensor is
        /// antisymmetric in its last pair.
        #[test]
        fn connection_and_curvature_symmetries(th in 0.4f64..2.7, ph in -3.0f64..3.0, z in -2.0f64..2.0) {
            let q = [th, ph, z];
            let g = christoffel(&SphereTimesLine, &q).unwrap();
            for i in 0..3 { for j in 0..3 { for k in 0..3 {
                prop_assert_eq!(g.get(i, j, k), g.get(i, k, j));
            }}}
            let r = riemann(&SphereTimesLine, &q, 1e-3).unwrap();
            for i in 0..3 { for k in 0..3 { for l in 0..3 { for m in 0..3 {
                prop_assert!((r.get(i, k, l, m) + r.get(i, k, m, l)).abs() < 1e-12);
            }}}}
        }
    }
}
