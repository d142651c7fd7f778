use super::bundle::find_node;
use super::{minkowski_dot, FieldBundle, Lattice4};
use crate::{Error, Result};
use serde::Serialize;

/// Lattice check of the conditions under which the comoving construction
/// applies: (i) nonvanishing `V_0`, (ii) a closed velocity 1-form and
/// (iii) a timelike velocity.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub points_checked: usize,
    pub min_abs_v0: f64,
    pub v0_sign_changes: bool,
    /// Points where `V` is undefined or `V_0` changes sign, at most ten.
    pub v0_failures: Vec<[f64; 4]>,
    /// A node of the field inside the lattice box, where the phase is undefined.
    pub node: Option<[f64; 4]>,
    /// Largest `|d_mu V_nu - d_nu V_mu|` relative to the largest `|d V|`.
    pub closedness_max: f64,
    pub closedness_tolerance: f64,
    pub timelike_fraction: f64,
    pub first_spacelike: Option<[f64; 4]>,
}

impl HypothesisReport {
    pub fn nonvanishing_v0(&self) -> bool {
        self.v0_failures.is_empty() && !self.v0_sign_changes && self.node.is_none() && self.min_abs_v0 > 0.0
    }

    pub fn closed(&self) -> bool {
        self.closedness_max <= self.closedness_tolerance
    }

    pub fn timelike(&self) -> bool {
        self.timelike_fraction == 1.0
    }

    pub fn passed(&self) -> bool {
        self.nonvanishing_v0() && self.closed() && self.timelike()
    }
}

/// Evaluates the three hypotheses on `lattice`.
///
/// Closedness is measured by central differences of the velocity with
/// step `1e-3` in each direction, so a constant field gives exactly zero.
pub fn check_theorem_hypotheses(bundle: &FieldBundle, lattice: &Lattice4) -> Result<HypothesisReport> {
    if !bundle.domain.contains_box(&lattice.bounds()) {
        return Err(Error::InvalidConfig(format!(
            "lattice {:?}..{:?} is not inside the field domain {:?}..{:?}",
            lattice.lo, lattice.hi, bundle.domain.lo, bundle.domain.hi
        )));
    }
    let h = 1e-3;
    let mut report = HypothesisReport {
        points_checked: 0,
        min_abs_v0: f64::INFINITY,
        v0_sign_changes: false,
        v0_failures: Vec::new(),
        node: None,
        closedness_max: 0.0,
        closedness_tolerance: 1e-6,
        timelike_fraction: 0.0,
        first_spacelike: None,
    };
    let floor = bundle.density_floor.sqrt();
    report.node = find_node(bundle.modes(), &lattice.bounds(), floor, 7).map(|(x, _)| x);
    let mut sign = 0.0f64;
    let mut timelike = 0usize;
    let (mut curl_max, mut grad_max) = (0.0f64, 0.0f64);
    for x in lattice.points() {
        report.points_checked += 1;
        let v = match bundle.velocity(&x) {
            Ok(v) => v,
            Err(Error::DensityZero { .. }) => {
                if report.v0_failures.len() < 10 {
                    report.v0_failures.push(x);
                }
                report.min_abs_v0 = 0.0;
                continue;
            }
            Err(e) => return Err(e),
        };
        // Covariant V_0 = -V^0.
        let v0 = -v[0];
        report.min_abs_v0 = report.min_abs_v0.min(v0.abs());
        if sign == 0.0 {
            sign = v0.signum();
        } else if v0.signum() != sign {
            report.v0_sign_changes = true;
            if report.v0_failures.len() < 10 {
                report.v0_failures.push(x);
            }
        }
        if minkowski_dot(&v, &v) < 0.0 {
            timelike += 1;
        } else if report.first_spacelike.is_none() {
            report.first_spacelike = Some(x);
        }
        let mut dv = [[0.0; 4]; 4];
        let mut ok = true;
        for mu in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[mu] += h;
            xm[mu] -= h;
            match (bundle.phase_gradient(&xp), bundle.phase_gradient(&xm)) {
                (Ok(gp), Ok(gm)) => {
                    for nu in 0..4 {
                        dv[mu][nu] = (gp[nu] - gm[nu]) / (2.0 * h * bundle.constants.mass);
                    }
                }
                _ => ok = false,
            }
        }
        if ok {
            for mu in 0..4 {
                for nu in 0..4 {
                    grad_max = grad_max.max(dv[mu][nu].abs());
                    curl_max = curl_max.max((dv[mu][nu] - dv[nu][mu]).abs());
                }
            }
        }
    }
    report.timelike_fraction = timelike as f64 / report.points_checked.max(1) as f64;
    report.closedness_max = if grad_max > 0.0 { curl_max / grad_max } else { curl_max };
    if !report.min_abs_v0.is_finite() {
        report.min_abs_v0 = 0.0;
    }
    Ok(report)
}
