use super::modes::{Mode, ModeSum};
use super::{flip_time, Box4, Frame, FourVectorField, PhysicalConstants, Variance};
use crate::{Error, Result};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

/// How derivatives of `p` and `S` are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub enum DerivativeMode {
    /// Closed-form derivatives of the mode sum.
    Analytic,
    /// Second-order central differences with the given step.
    FiniteDifference { step: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarField {
    Density,
    Phase,
    LogDensity,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldKind {
    PlaneWave { k: [f64; 3] },
    Packet,
    Evanescent { a: [f64; 3] },
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketOptions {
    /// `NodeInDomain` is raised where `|phi|` drops below this.
    pub node_floor: f64,
    /// Scan lattice points per axis for the node search.
    pub scan_points: usize,
    pub derivative: DerivativeMode,
}

impl Default for PacketOptions {
    fn default() -> Self {
        Self { node_floor: 1e-6, scan_points: 9, derivative: DerivativeMode::Analytic }
    }
}

/// Derivatives of `ln p` and `S` at a point. Entries above `order` are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogJet {
    pub order: usize,
    pub density: f64,
    pub dlnp: [f64; 4],
    pub ddlnp: [[f64; 4]; 4],
    pub dddlnp: [[[f64; 4]; 4]; 4],
    pub ds: [f64; 4],
    pub dds: [[f64; 4]; 4],
    pub ddds: [[[f64; 4]; 4]; 4],
}

/// A Klein-Gordon solution on a spacetime box, exposing the density
/// `p = |phi|^2`, the phase `S` with `phi = sqrt(p) exp(i S / hbar)`, and
/// their derivatives.
#[derive(Debug, Clone)]
pub struct FieldBundle {
    pub constants: PhysicalConstants,
    modes: ModeSum,
    pub domain: Box4,
    pub derivative: DerivativeMode,
    /// Log-derivatives are refused where `p` falls below this.
    pub density_floor: f64,
    /// Base point of the phase unwrapping.
    reference: [f64; 4],
    pub kind: FieldKind,
}

fn plane_mode(k: &[f64; 3], weight: C64, constants: &PhysicalConstants) -> Mode {
    let omega = constants.omega(k);
    Mode {
        weight,
        wave: [
            C64::new(0.0, -omega / constants.c),
            C64::new(0.0, k[0]),
            C64::new(0.0, k[1]),
            C64::new(0.0, k[2]),
        ],
    }
}

impl FieldBundle {
    fn build(
        modes: ModeSum,
        constants: PhysicalConstants,
        domain: Box4,
        derivative: DerivativeMode,
        kind: FieldKind,
    ) -> Result<Self> {
        if let DerivativeMode::FiniteDifference { step } = derivative {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::InvalidConfig(format!("finite-difference step {step} must be positive")));
            }
        }
        Ok(Self { constants, modes, domain, derivative, density_floor: 1e-12, reference: domain.center(), kind })
    }

    /// `phi = exp(i (k . x - omega t))` with `omega = c sqrt(k^2 + (m c / hbar)^2)`.
    pub fn plane_wave(k: [f64; 3], constants: PhysicalConstants, domain: Box4, derivative: DerivativeMode) -> Result<Self> {
        let modes = ModeSum::new(vec![plane_mode(&k, C64::new(1.0, 0.0), &constants)]);
        Self::build(modes, constants, domain, derivative, FieldKind::PlaneWave { k })
    }

    /// Superposition of positive-frequency plane waves `sum_j w_j exp(i (k_j . x - omega_j t))`.
    pub fn packet(
        modes: &[([f64; 3], C64)],
        constants: PhysicalConstants,
        domain: Box4,
        options: &PacketOptions,
    ) -> Result<Self> {
        if modes.len() < 2 {
            return Err(Error::InvalidConfig("a packet needs at least two modes".into()));
        }
        let sum = ModeSum::new(modes.iter().map(|(k, w)| plane_mode(k, *w, &constants)).collect());
        if let Some((location, amplitude)) = find_node(&sum, &domain, options.node_floor, options.scan_points) {
            return Err(Error::NodeInDomain { location, amplitude });
        }
        Self::build(sum, constants, domain, options.derivative, FieldKind::Packet)
    }

    /// `phi = exp(a . x - i omega t)` with `omega = c sqrt((m c / hbar)^2 - a^2)`.
    ///
    /// A nodeless solution whose density restricted to `t = 0` is
    /// `exp(2 a . q)`; needs `|a| < m c / hbar`.
    pub fn evanescent(a: [f64; 3], constants: PhysicalConstants, domain: Box4, derivative: DerivativeMode) -> Result<Self> {
        let a2 = a.iter().map(|x| x * x).sum::<f64>();
        let kc2 = constants.compton_wavenumber().powi(2);
        if a2 >= kc2 {
            return Err(Error::InvalidConfig(format!(
                "evanescent decay |a| = {} must be below m c / hbar = {}",
                a2.sqrt(),
                kc2.sqrt()
            )));
        }
        let omega = constants.c * (kc2 - a2).sqrt();
        let mode = Mode {
            weight: C64::new(1.0, 0.0),
            wave: [C64::new(0.0, -omega / constants.c), C64::new(a[0], 0.0), C64::new(a[1], 0.0), C64::new(a[2], 0.0)],
        };
        Self::build(ModeSum::new(vec![mode]), constants, domain, derivative, FieldKind::Evanescent { a })
    }

    /// Arbitrary mode sum, checked for nodes at `node_floor`.
    pub fn from_modes(
        modes: ModeSum,
        constants: PhysicalConstants,
        domain: Box4,
        options: &PacketOptions,
    ) -> Result<Self> {
        if let Some((location, amplitude)) = find_node(&modes, &domain, options.node_floor, options.scan_points) {
            return Err(Error::NodeInDomain { location, amplitude });
        }
        Self::build(modes, constants, domain, options.derivative, FieldKind::Custom)
    }

    pub fn modes(&self) -> &ModeSum {
        &self.modes
    }

    /// The complex-conjugate (negative-frequency) field.
    pub fn conjugate(&self) -> Self {
        Self { modes: self.modes.conjugate(), kind: FieldKind::Custom, ..self.clone() }
    }

    pub fn with_derivative(&self, derivative: DerivativeMode) -> Self {
        Self { derivative, ..self.clone() }
    }

    /// Boundary clearance the derivative stencil needs.
    pub fn stencil_margin(&self) -> f64 {
        match self.derivative {
            DerivativeMode::Analytic => 0.0,
            DerivativeMode::FiniteDifference { step } => 2.0 * step,
        }
    }

    /// Relative error scale of first and second derivatives.
    pub fn derivative_budget(&self) -> f64 {
        match self.derivative {
            DerivativeMode::Analytic => 1e-11,
            DerivativeMode::FiniteDifference { step } => {
                let k = self.modes.max_wavenumber().max(1e-300);
                (k * step).powi(2) + 1e-14 / (k * step).powi(2)
            }
        }
    }

    fn check(&self, x: &[f64; 4], margin: f64) -> Result<()> {
        if self.domain.margin(x) < margin || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfDomain { point: *x, margin });
        }
        Ok(())
    }

    pub fn in_domain(&self, x: &[f64; 4]) -> bool {
        self.domain.margin(x) >= self.stencil_margin()
    }

    /// `phi(x)`.
    pub fn amplitude(&self, x: &[f64; 4]) -> Result<C64> {
        self.check(x, 0.0)?;
        Ok(self.modes.value(x))
    }

    /// `phi(x)` and `d_mu phi(x)` from the mode sum.
    pub fn amplitude_grad(&self, x: &[f64; 4]) -> Result<(C64, [C64; 4])> {
        self.check(x, 0.0)?;
        Ok(self.modes.value_grad(x))
    }

    /// `p(x) = |phi(x)|^2`.
    pub fn density(&self, x: &[f64; 4]) -> Result<f64> {
        Ok(self.amplitude(x)?.norm_sqr())
    }

    pub fn ln_density(&self, x: &[f64; 4]) -> Result<f64> {
        self.check(x, 0.0)?;
        let env = self.modes.envelope(x);
        Ok(2.0 * (self.modes.carrier_log_modulus(x) + env.norm().ln()))
    }

    /// Single-valued phase `S(x)` on the domain.
    pub fn phase(&self, x: &[f64; 4]) -> Result<f64> {
        self.check(x, 0.0)?;
        let theta = self.modes.carrier_phase(x) + self.modes.envelope_phase(&self.reference, x);
        Ok(self.constants.hbar * theta)
    }

    /// `S(y) - S(x)` for nearby points, from the ratio of amplitudes.
    fn phase_step(&self, x: &[f64; 4], y: &[f64; 4]) -> f64 {
        self.constants.hbar * (self.modes.value(y) / self.modes.value(x)).arg()
    }

    fn floor_check(&self, x: &[f64; 4], density: f64) -> Result<()> {
        if !(density >= self.density_floor) {
            return Err(Error::DensityZero { location: *x, density });
        }
        Ok(())
    }

    /// `d_mu S`.
    pub fn phase_gradient(&self, x: &[f64; 4]) -> Result<[f64; 4]> {
        match self.derivative {
            DerivativeMode::Analytic => {
                self.check(x, 0.0)?;
                let (v, g) = self.modes.envelope_grad(x);
                let carrier = self.modes.carrier();
                let density = v.norm_sqr() * (2.0 * self.modes.carrier_log_modulus(x)).exp();
                self.floor_check(x, density)?;
                let hb = self.constants.hbar;
                Ok(std::array::from_fn(|a| hb * ((g[a] / v).im + carrier[a].im)))
            }
            DerivativeMode::FiniteDifference { .. } => Ok(self.log_jet(x, 1)?.ds),
        }
    }

    /// Contravariant four-velocity `V^mu = eta^{mu nu} d_nu S / m`.
    pub fn velocity(&self, x: &[f64; 4]) -> Result<[f64; 4]> {
        let g = self.phase_gradient(x)?;
        let m = self.constants.mass;
        Ok(flip_time(&g).map(|v| v / m))
    }

    /// Contravariant osmotic velocity `U^mu = (hbar / 2m) eta^{mu nu} d_nu ln p`.
    pub fn osmotic(&self, x: &[f64; 4]) -> Result<[f64; 4]> {
        let j = self.log_jet(x, 1)?;
        let f = 0.5 * self.constants.nu();
        Ok(flip_time(&j.dlnp).map(|v| f * v))
    }

    /// Covariant `V_mu = d_mu S / m` as a field on inertial coordinates.
    pub fn four_velocity(&self) -> FourVectorField<'_> {
        let m = self.constants.mass;
        FourVectorField::new(
            move |x| Ok(self.phase_gradient(x)?.map(|v| v / m)),
            Variance::Covariant,
            Frame::Inertial,
        )
    }

    /// Covariant `U_mu = (hbar / 2m) d_mu ln p` as a field on inertial coordinates.
    pub fn osmotic_velocity(&self) -> FourVectorField<'_> {
        let f = 0.5 * self.constants.nu();
        FourVectorField::new(
            move |x| Ok(self.log_jet(x, 1)?.dlnp.map(|v| f * v)),
            Variance::Covariant,
            Frame::Inertial,
        )
    }

    /// Derivatives of `ln p` and `S` up to `order` (3 only analytically).
    pub fn log_jet(&self, x: &[f64; 4], order: usize) -> Result<LogJet> {
        self.check(x, self.stencil_margin())?;
        match self.derivative {
            DerivativeMode::Analytic => self.analytic_jet(x, order),
            DerivativeMode::FiniteDifference { step } => self.fd_jet(x, order, step),
        }
    }

    fn analytic_jet(&self, x: &[f64; 4], order: usize) -> Result<LogJet> {
        let env = self.modes.envelope(x);
        let lnp = 2.0 * (self.modes.carrier_log_modulus(x) + env.norm().ln());
        let density = lnp.exp();
        self.floor_check(x, density)?;
        let cj = self.modes.log_jet(x, order);
        let hb = self.constants.hbar;
        let mut j = LogJet {
            order,
            density,
            dlnp: [0.0; 4],
            ddlnp: [[0.0; 4]; 4],
            dddlnp: [[[0.0; 4]; 4]; 4],
            ds: [0.0; 4],
            dds: [[0.0; 4]; 4],
            ddds: [[[0.0; 4]; 4]; 4],
        };
        for a in 0..4 {
            j.dlnp[a] = 2.0 * cj.d1[a].re;
            j.ds[a] = hb * cj.d1[a].im;
            if order >= 2 {
                for b in 0..4 {
                    j.ddlnp[a][b] = 2.0 * cj.d2[a][b].re;
                    j.dds[a][b] = hb * cj.d2[a][b].im;
                    if order >= 3 {
                        for c in 0..4 {
                            j.dddlnp[a][b][c] = 2.0 * cj.d3[a][b][c].re;
                            j.ddds[a][b][c] = hb * cj.d3[a][b][c].im;
                        }
                    }
                }
            }
        }
        Ok(j)
    }

    fn fd_jet(&self, x: &[f64; 4], order: usize, h: f64) -> Result<LogJet> {
        if order > 2 {
            return Err(Error::InvalidConfig("finite-difference derivatives support order <= 2".into()));
        }
        let density = self.modes.value(x).norm_sqr();
        self.floor_check(x, density)?;
        let lnp = |y: &[f64; 4]| self.modes.value(y).norm_sqr().ln();
        let shift = |y: &[f64; 4], a: usize, d: f64| {
            let mut z = *y;
            z[a] += d;
            z
        };
        let l0 = density.ln();
        let mut j = LogJet {
            order,
            density,
            dlnp: [0.0; 4],
            ddlnp: [[0.0; 4]; 4],
            dddlnp: [[[0.0; 4]; 4]; 4],
            ds: [0.0; 4],
            dds: [[0.0; 4]; 4],
            ddds: [[[0.0; 4]; 4]; 4],
        };
        for a in 0..4 {
            let xp = shift(x, a, h);
            let xm = shift(x, a, -h);
            j.dlnp[a] = (lnp(&xp) - lnp(&xm)) / (2.0 * h);
            j.ds[a] = self.phase_step(&xm, &xp) / (2.0 * h);
            if order >= 2 {
                j.ddlnp[a][a] = (lnp(&xp) - 2.0 * l0 + lnp(&xm)) / (h * h);
                let ratio = self.modes.value(&xp) * self.modes.value(&xm) / self.modes.value(x).powi(2);
                j.dds[a][a] = self.constants.hbar * ratio.arg() / (h * h);
                for b in 0..a {
                    let pp = shift(&xp, b, h);
                    let pm = shift(&xp, b, -h);
                    let mp = shift(&xm, b, h);
                    let mm = shift(&xm, b, -h);
                    let v = (lnp(&pp) - lnp(&pm) - lnp(&mp) + lnp(&mm)) / (4.0 * h * h);
                    j.ddlnp[a][b] = v;
                    j.ddlnp[b][a] = v;
                    let m = &self.modes;
                    let r = m.value(&pp) * m.value(&mm) / (m.value(&pm) * m.value(&mp));
                    let s = self.constants.hbar * r.arg() / (4.0 * h * h);
                    j.dds[a][b] = s;
                    j.dds[b][a] = s;
                }
            }
        }
        Ok(j)
    }

    /// Partial derivative of a scalar field along the multi-index `index`
    /// (axis numbers, e.g. `[0, 2]` for `d_0 d_2`).
    pub fn differentiate(&self, field: ScalarField, x: &[f64; 4], index: &[usize]) -> Result<f64> {
        if index.iter().any(|&a| a >= 4) || index.len() > 3 {
            return Err(Error::InvalidConfig(format!("unsupported multi-index {index:?}")));
        }
        if index.is_empty() {
            return match field {
                ScalarField::Density => {
                    self.check(x, self.stencil_margin())?;
                    self.density(x)
                }
                ScalarField::Phase => {
                    self.check(x, self.stencil_margin())?;
                    self.phase(x)
                }
                ScalarField::LogDensity => {
                    let j = self.log_jet(x, 0)?;
                    Ok(j.density.ln())
                }
            };
        }
        let j = self.log_jet(x, index.len())?;
        let l = |idx: &[usize]| match idx.len() {
            1 => j.dlnp[idx[0]],
            2 => j.ddlnp[idx[0]][idx[1]],
            _ => j.dddlnp[idx[0]][idx[1]][idx[2]],
        };
        Ok(match field {
            ScalarField::LogDensity => l(index),
            ScalarField::Phase => match index.len() {
                1 => j.ds[index[0]],
                2 => j.dds[index[0]][index[1]],
                _ => j.ddds[index[0]][index[1]][index[2]],
            },
            ScalarField::Density => {
                let p = j.density;
                match index {
                    [a] => p * j.dlnp[*a],
                    [a, b] => p * (j.ddlnp[*a][*b] + j.dlnp[*a] * j.dlnp[*b]),
                    [a, b, c] => {
                        let (la, lb, lc) = (j.dlnp[*a], j.dlnp[*b], j.dlnp[*c]);
                        p * (j.dddlnp[*a][*b][*c]
                            + j.ddlnp[*a][*b] * lc
                            + j.ddlnp[*a][*c] * lb
                            + j.ddlnp[*b][*c] * la
                            + la * lb * lc)
                    }
                    _ => unreachable!(),
                }
            }
        })
    }
}

/// Searches `domain` for a point with `|phi| < floor`: a lattice scan
/// followed by Levenberg-Marquardt descent on `|psi|^2` from the lowest
/// lattice minima.
pub(crate) fn find_node(modes: &ModeSum, domain: &Box4, floor: f64, scan: usize) -> Option<([f64; 4], f64)> {
    let n = scan.max(2);
    let coord = |a: usize, i: usize| domain.lo[a] + (domain.hi[a] - domain.lo[a]) * i as f64 / (n - 1) as f64;
    let total = n.pow(4);
    let index = |i: [usize; 4]| ((i[0] * n + i[1]) * n + i[2]) * n + i[3];
    let mut values = Vec::with_capacity(total);
    let mut points = Vec::with_capacity(total);
    for i0 in 0..n {
        for i1 in 0..n {
            for i2 in 0..n {
                for i3 in 0..n {
                    let x = [coord(0, i0), coord(1, i1), coord(2, i2), coord(3, i3)];
                    let a = modes.value(&x).norm();
                    if a < floor {
                        return Some((x, a));
                    }
                    values.push(a);
                    points.push(x);
                }
            }
        }
    }
    let mut candidates: Vec<usize> = (0..total)
        .filter(|&flat| {
            let mut rem = flat;
            let mut idx = [0usize; 4];
            for a in (0..4).rev() {
                idx[a] = rem % n;
                rem /= n;
            }
            (0..4).all(|a| {
                [-1i64, 1].iter().all(|d| {
                    let k = idx[a] as i64 + d;
                    if k < 0 || k >= n as i64 {
                        return true;
                    }
                    let mut nb = idx;
                    nb[a] = k as usize;
                    values[index(nb)] >= values[flat]
                })
            })
        })
        .collect();
    candidates.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    // Symmetric fields repeat the same minimum along flat directions; try
    // each distinct value once.
    candidates.dedup_by(|a, b| (values[*a] - values[*b]).abs() <= 1e-12 * values[*b]);
    candidates.truncate(32);
    for c in candidates {
        if let Some(hit) = descend_to_node(modes, domain, points[c], floor) {
            return Some(hit);
        }
    }
    None
}

fn descend_to_node(modes: &ModeSum, domain: &Box4, start: [f64; 4], floor: f64) -> Option<([f64; 4], f64)> {
    let clamp = |x: [f64; 4]| -> [f64; 4] { std::array::from_fn(|a| x[a].clamp(domain.lo[a], domain.hi[a])) };
    let mut x = start;
    let (mut v, mut g) = modes.envelope_grad(&x);
    let mut lambda = 1e-3 * (0..4).map(|a| g[a].norm_sqr()).sum::<f64>().max(1e-300);
    for _ in 0..100 {
        // Normal equations of the 2 x 4 real Jacobian of (Re psi, Im psi).
        let jr: [f64; 4] = std::array::from_fn(|a| g[a].re);
        let ji: [f64; 4] = std::array::from_fn(|a| g[a].im);
        let d = |p: &[f64; 4], q: &[f64; 4]| (0..4).map(|a| p[a] * q[a]).sum::<f64>();
        let (a11, a12, a22) = (d(&jr, &jr) + lambda, d(&jr, &ji), d(&ji, &ji) + lambda);
        let det = a11 * a22 - a12 * a12;
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let y1 = (a22 * v.re - a12 * v.im) / det;
        let y2 = (a11 * v.im - a12 * v.re) / det;
        let trial = clamp(std::array::from_fn(|a| x[a] - (jr[a] * y1 + ji[a] * y2)));
        let (tv, tg) = modes.envelope_grad(&trial);
        if tv.norm() < v.norm() {
            x = trial;
            v = tv;
            g = tg;
            lambda *= 0.3;
            let amp = modes.value(&x).norm();
            if amp < floor {
                return Some((x, amp));
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e30 {
                break;
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn domain() -> Box4 {
        Box4::cube(6.0)
    }

    fn comb() -> Vec<([f64; 3], C64)> {
        let mut modes = Vec::new();
        for i in -1..=1 {
            for j in -1..=1 {
                let k = [0.1 * i as f64, 0.1 * j as f64, 0.0];
                let w = (-(k[0] * k[0] + k[1] * k[1]) / (2.0 * 0.01)).exp();
                modes.push((k, C64::new(w, 0.0)));
            }
        }
        modes
    }

    #[test]
    fn plane_wave_is_exact() {
        let k = PhysicalConstants::natural();
        let b = FieldBundle::plane_wave([0.75, 0.0, 0.0], k, domain(), DerivativeMode::Analytic).unwrap();
        let x = [0.3, 1.2, -0.4, 2.0];
        assert_eq!(b.density(&x).unwrap(), 1.0);
        assert!((b.phase(&x).unwrap() - (0.75 * 1.2 - 1.25 * 0.3)).abs() < 1e-15);
        let v = b.velocity(&x).unwrap();
        assert!((v[0] - 1.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
        for idx in [[0usize, 0], [1, 3], [2, 2]] {
            assert_eq!(b.differentiate(ScalarField::Density, &x, &idx).unwrap(), 0.0);
        }
    }

    #[test]
    fn standing_wave_node_is_found() {
        // phi = 2 cos(k x) exp(-i omega t) vanishes at x = pi / (2k).
        let c = PhysicalConstants::natural();
        let k = 0.7;
        let modes = [([k, 0.0, 0.0], C64::new(1.0, 0.0)), ([-k, 0.0, 0.0], C64::new(1.0, 0.0))];
        let err = FieldBundle::packet(&modes, c, domain(), &PacketOptions::default()).unwrap_err();
        match err {
            Error::NodeInDomain { location, amplitude } => {
                assert!(amplitude < 1e-6);
                // Oracle: bisection on cos(k x) in the bracket holding the reported node.
                let period = std::f64::consts::PI / k;
                let lo = ((location[1] * k / std::f64::consts::PI - 0.5).floor() + 0.5) * period - 0.5 * period;
                let oracle = crate::numerics::roots::brent(|x| Ok((k * x).cos()), lo + 1e-9, lo + period - 1e-9, 1e-15, 200)
                    .unwrap();
                assert!((location[1] - oracle).abs() < 1e-5, "{location:?} vs {oracle}");
            }
            other => panic!("unexpected {other:?}"),
        }
        // A domain strictly between nodes is accepted.
        let narrow = Box4::new([-1.0, -1.0, -1.0, -1.0], [1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(FieldBundle::packet(&modes, c, narrow, &PacketOptions::default()).is_ok());
    }

    #[test]
    fn comb_packet_has_no_node() {
        let c = PhysicalConstants::natural();
        assert!(FieldBundle::packet(&comb(), c, domain(), &PacketOptions::default()).is_ok());
    }

    #[test]
    fn single_mode_packet_rejected() {
        let c = PhysicalConstants::natural();
        let r = FieldBundle::packet(&comb()[..1], c, domain(), &PacketOptions::default());
        assert!(matches!(r, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn evanescent_density_is_log_linear() {
        let c = PhysicalConstants::natural();
        let a = [0.2, -0.1, 0.05];
        let b = FieldBundle::evanescent(a, c, domain(), DerivativeMode::Analytic).unwrap();
        let x = [0.4, 1.0, 2.0, -1.0];
        let expect = 2.0 * (a[0] * x[1] + a[1] * x[2] + a[2] * x[3]);
        assert!((b.ln_density(&x).unwrap() - expect).abs() < 1e-14);
        let u = b.osmotic(&x).unwrap();
        assert!((u[1] - a[0]).abs() < 1e-15);
        assert!(FieldBundle::evanescent([1.0, 0.1, 0.0], c, domain(), DerivativeMode::Analytic).is_err());
    }

    #[test]
    fn stencil_respects_domain_margin() {
        let c = PhysicalConstants::natural();
        let b = FieldBundle::plane_wave([0.1, 0.0, 0.0], c, Box4::cube(1.0), DerivativeMode::FiniteDifference { step: 0.01 })
            .unwrap();
        assert!(matches!(
            b.differentiate(ScalarField::Phase, &[0.99, 0.0, 0.0, 0.0], &[0]),
            Err(Error::OutOfDomain { .. })
        ));
        assert!(b.differentiate(ScalarField::Phase, &[0.9, 0.0, 0.0, 0.0], &[0]).is_ok());
    }

    #[test]
    fn finite_differences_converge_at_second_order() {
        let c = PhysicalConstants::natural();
        let analytic = FieldBundle::packet(&comb(), c, domain(), &PacketOptions::default()).unwrap();
        let x = [0.7, 1.3, -2.1, 0.4];
        let exact = analytic.log_jet(&x, 2).unwrap();
        let hs = [0.4, 0.2, 0.1, 0.05];
        for (field, pick) in [
            ("ds0", Box::new(|j: &LogJet| j.ds[0]) as Box<dyn Fn(&LogJet) -> f64>),
            ("dds01", Box::new(|j: &LogJet| j.dds[0][1])),
            ("ddlnp11", Box::new(|j: &LogJet| j.ddlnp[1][1])),
            ("dlnp2", Box::new(|j: &LogJet| j.dlnp[2])),
        ] {
            let errs: Vec<f64> = hs
                .iter()
                .map(|&h| {
                    let b = analytic.with_derivative(DerivativeMode::FiniteDifference { step: h });
                    (pick(&b.log_jet(&x, 2).unwrap()) - pick(&exact)).abs()
                })
                .collect();
            let slope = ((errs[0] / errs[3]).ln()) / ((hs[0] / hs[3]).ln());
            assert!((slope - 2.0).abs() < 0.2, "{field}: errors {errs:?}, slope {slope}");
        }
    }

    #[test]
    fn density_derivatives_match_product_rule() {
        let c = PhysicalConstants::natural();
        let b = FieldBundle::packet(&comb(), c, domain(), &PacketOptions::default()).unwrap();
        let x = [0.2, -0.5, 1.5, 0.0];
        let h = 1e-4;
        let p = |y: [f64; 4]| b.density(&y).unwrap();
        let mut xp = x;
        let mut xm = x;
        xp[1] += h;
        xm[1] -= h;
        let fd = (p(xp) - 2.0 * p(x) + p(xm)) / (h * h);
        let an = b.differentiate(ScalarField::Density, &x, &[1, 1]).unwrap();
        assert!((fd - an).abs() < 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The unwrapped phase agrees with the principal argument of phi
        /// modulo 2 pi and its gradient with the analytic one.
        #[test]
        fn phase_is_consistent(x0 in -5.0f64..5.0, x1 in -5.0f64..5.0, x2 in -5.0f64..5.0, x3 in -5.0f64..5.0) {
            let c = PhysicalConstants::natural();
            let b = FieldBundle::packet(&comb(), c, domain(), &PacketOptions::default()).unwrap();
            let x = [x0, x1, x2, x3];
            let s = b.phase(&x).unwrap();
            let arg = b.amplitude(&x).unwrap().arg();
            let wrapped = (s - arg).rem_euclid(std::f64::consts::TAU);
            prop_assert!(wrapped < 1e-9 || std::f64::consts::TAU - wrapped < 1e-9);
            let h = 1e-5;
            let g = b.phase_gradient(&x).unwrap();
            for a in 0..4 {
                let mut p = x; p[a] += h;
                let mut m = x; m[a] -= h;
                let fd = (b.phase(&p).unwrap() - b.phase(&m).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[a]).abs() < 1e-7);
            }
        }
    }
}
