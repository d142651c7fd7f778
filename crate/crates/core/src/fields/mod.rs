//! Physical constants, spacetime points, four-vectors and the field bundle.
//!
//! Conventions: `x^0 = c t`, Minkowski metric `diag(-1, 1, 1, 1)`.

mod bundle;
mod hypotheses;
mod modes;

pub use bundle::{DerivativeMode, FieldBundle, FieldKind, LogJet, PacketOptions, ScalarField};
pub use hypotheses::{check_theorem_hypotheses, HypothesisReport};
pub use modes::{Mode, ModeSum};

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
    pub c: f64,
}

impl PhysicalConstants {
    pub fn new(hbar: f64, mass: f64, c: f64) -> Result<Self> {
        for (name, v) in [("hbar", hbar), ("mass", mass), ("c", c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConstants(format!("{name} = {v} must be positive and finite")));
            }
        }
        Ok(Self { hbar, mass, c })
    }

    /// `hbar = mass = c = 1`.
    pub fn natural() -> Self {
        Self { hbar: 1.0, mass: 1.0, c: 1.0 }
    }

    /// Diffusion coefficient `nu = hbar / m`.
    pub fn nu(&self) -> f64 {
        self.hbar / self.mass
    }

    /// Inverse reduced Compton wavelength `m c / hbar`.
    pub fn compton_wavenumber(&self) -> f64 {
        self.mass * self.c / self.hbar
    }

    /// Angular frequency of a plane wave with wavevector `k`.
    pub fn omega(&self, k: &[f64; 3]) -> f64 {
        let k2 = k.iter().map(|x| x * x).sum::<f64>();
        self.c * (k2 + self.compton_wavenumber().powi(2)).sqrt()
    }
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self::natural()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    Inertial,
    Comoving,
}

impl Frame {
    pub fn name(self) -> &'static str {
        match self {
            Frame::Inertial => "inertial",
            Frame::Comoving => "comoving",
        }
    }
}

/// Coordinates tagged with the chart they belong to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpacetimePoint {
    pub coords: [f64; 4],
    pub frame: Frame,
}

impl SpacetimePoint {
    pub fn inertial(coords: [f64; 4]) -> Self {
        Self { coords, frame: Frame::Inertial }
    }

    pub fn comoving(coords: [f64; 4]) -> Self {
        Self { coords, frame: Frame::Comoving }
    }

    /// Coordinates if the point is in `frame`, `FrameMismatch` otherwise.
    pub fn in_frame(&self, frame: Frame) -> Result<[f64; 4]> {
        if self.frame == frame {
            Ok(self.coords)
        } else {
            Err(Error::FrameMismatch { expected: frame.name(), found: self.frame.name() })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variance {
    Contravariant,
    Covariant,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourVector {
    pub components: [f64; 4],
    pub variance: Variance,
}

/// Index raising and lowering with the Minkowski metric is a sign flip of
/// the time component.
#[inline]
pub fn flip_time(v: &[f64; 4]) -> [f64; 4] {
    [-v[0], v[1], v[2], v[3]]
}

/// `eta_{mu nu} a^mu b^nu`.
#[inline]
pub fn minkowski_dot(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    -a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

impl FourVector {
    pub fn contravariant(components: [f64; 4]) -> Self {
        Self { components, variance: Variance::Contravariant }
    }

    pub fn covariant(components: [f64; 4]) -> Self {
        Self { components, variance: Variance::Covariant }
    }

    pub fn raised(self) -> Self {
        match self.variance {
            Variance::Contravariant => self,
            Variance::Covariant => Self::contravariant(flip_time(&self.components)),
        }
    }

    pub fn lowered(self) -> Self {
        match self.variance {
            Variance::Covariant => self,
            Variance::Contravariant => Self::covariant(flip_time(&self.components)),
        }
    }

    /// Lorentz-invariant contraction, whatever the index positions.
    pub fn dot(&self, other: &FourVector) -> f64 {
        let a = &self.components;
        let b = &other.components;
        if self.variance == other.variance {
            minkowski_dot(a, b)
        } else {
            a.iter().zip(b).map(|(x, y)| x * y).sum()
        }
    }

    /// Invariant square `A . A`: negative for timelike vectors.
    pub fn square(&self) -> f64 {
        minkowski_dot(&self.components, &self.components)
    }
}

type VectorFn<'a> = Box<dyn Fn(&[f64; 4]) -> Result<[f64; 4]> + Send + Sync + 'a>;

/// A four-vector field evaluated pointwise in a fixed frame.
pub struct FourVectorField<'a> {
    eval: VectorFn<'a>,
    pub variance: Variance,
    pub frame: Frame,
}

impl<'a> FourVectorField<'a> {
    pub fn new<F>(eval: F, variance: Variance, frame: Frame) -> Self
    where
        F: Fn(&[f64; 4]) -> Result<[f64; 4]> + Send + Sync + 'a,
    {
        Self { eval: Box::new(eval), variance, frame }
    }

    pub fn at(&self, point: &SpacetimePoint) -> Result<FourVector> {
        let x = point.in_frame(self.frame)?;
        Ok(FourVector { components: (self.eval)(&x)?, variance: self.variance })
    }
}

/// Axis-aligned box in spacetime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box4 {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
}

impl Box4 {
    pub fn new(lo: [f64; 4], hi: [f64; 4]) -> Result<Self> {
        if (0..4).any(|a| !(lo[a] < hi[a])) {
            return Err(Error::InvalidConfig(format!("empty box {lo:?} .. {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(half: f64) -> Self {
        Self { lo: [-half; 4], hi: [half; 4] }
    }

    /// Signed distance to the nearest face: positive inside.
    pub fn margin(&self, x: &[f64; 4]) -> f64 {
        (0..4)
            .map(|a| (x[a] - self.lo[a]).min(self.hi[a] - x[a]))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64; 4]) -> bool {
        self.margin(x) >= 0.0
    }

    pub fn contains_box(&self, other: &Box4) -> bool {
        (0..4).all(|a| other.lo[a] >= self.lo[a] && other.hi[a] <= self.hi[a])
    }

    pub fn center(&self) -> [f64; 4] {
        std::array::from_fn(|a| 0.5 * (self.lo[a] + self.hi[a]))
    }
}

/// Regular lattice with `n[a]` points per axis including both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct Lattice4 {
    pub lo: [f64; 4],
    pub hi: [f64; 4],
    pub n: [usize; 4],
}

impl Lattice4 {
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bounds(&self) -> Box4 {
        Box4 { lo: self.lo, hi: self.hi }
    }

    pub fn coordinate(&self, axis: usize, i: usize) -> f64 {
        if self.n[axis] <= 1 {
            0.5 * (self.lo[axis] + self.hi[axis])
        } else {
            self.lo[axis] + (self.hi[axis] - self.lo[axis]) * i as f64 / (self.n[axis] - 1) as f64
        }
    }

    /// Point number `idx` in lexicographic order (last axis fastest).
    pub fn point(&self, idx: usize) -> [f64; 4] {
        let mut rem = idx;
        let mut out = [0.0; 4];
        for a in (0..4).rev() {
            out[a] = self.coordinate(a, rem % self.n[a]);
            rem /= self.n[a];
        }
        out
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 4]> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constants_reject_nonpositive() {
        assert!(PhysicalConstants::new(1.0, 0.0, 1.0).is_err());
        assert!(PhysicalConstants::new(1.0, 1.0, f64::NAN).is_err());
        let k = PhysicalConstants::new(2.0, 4.0, 3.0).unwrap();
        assert_eq!(k.nu(), 0.5);
        assert_eq!(k.compton_wavenumber(), 6.0);
    }

    #[test]
    fn frame_tags_are_enforced() {
        let p = SpacetimePoint::comoving([0.0; 4]);
        assert!(matches!(p.in_frame(Frame::Inertial), Err(Error::FrameMismatch { .. })));
        assert!(p.in_frame(Frame::Comoving).is_ok());
    }

    #[test]
    fn lattice_enumerates_corners() {
        let l = Lattice4 { lo: [0.0; 4], hi: [1.0, 2.0, 3.0, 4.0], n: [2, 3, 1, 2] };
        assert_eq!(l.len(), 12);
        assert_eq!(l.point(0), [0.0, 0.0, 1.5, 0.0]);
        assert_eq!(l.point(11), [1.0, 2.0, 1.5, 4.0]);
    }

    proptest! {
        #[test]
        fn raising_then_lowering_is_identity(v in proptest::array::uniform4(-1e6f64..1e6)) {
            let a = FourVector::covariant(v);
            prop_assert_eq!(a.raised().lowered(), a);
            let b = FourVector::contravariant(v);
            prop_assert_eq!(b.lowered().raised(), b);
        }

        #[test]
        fn contraction_is_variance_independent(
            v in proptest::array::uniform4(-10f64..10.0),
            w in proptest::array::uniform4(-10f64..10.0),
        ) {
            let a = FourVector::contravariant(v);
            let b = FourVector::contravariant(w);
            let d = a.dot(&b);
            prop_assert_eq!(a.lowered().dot(&b), d);
            prop_assert_eq!(a.lowered().dot(&b.lowered()), d);
        }
    }
}
