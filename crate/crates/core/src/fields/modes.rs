//! Superpositions of complex exponentials `phi = sum_j w_j exp(K_j . x)`.
//!
//! Derivatives are computed on the envelope `psi = phi exp(-K_c . x)`,
//! where `K_c` is the wave vector of the heaviest mode. The carrier then
//! only enters first log-derivatives, which keeps the rest-mass oscillation
//! out of the cancellations in higher orders.

use num_complex::Complex64 as C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mode {
    pub weight: C64,
    /// Complex wave covector `K_mu` such that the mode is `w exp(K_mu x^mu)`.
    pub wave: [C64; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSum {
    modes: Vec<Mode>,
    carrier: [C64; 4],
    /// Modes relative to the carrier.
    relative: Vec<Mode>,
}

/// Value and partial derivatives of the envelope up to third order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Jet {
    pub v: C64,
    pub d1: [C64; 4],
    pub d2: [[C64; 4]; 4],
    pub d3: [[[C64; 4]; 4]; 4],
}

/// Derivatives of `ln phi` up to third order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ComplexLogJet {
    pub d1: [C64; 4],
    pub d2: [[C64; 4]; 4],
    pub d3: [[[C64; 4]; 4]; 4],
}

#[inline]
fn dot(k: &[C64; 4], x: &[f64; 4]) -> C64 {
    k[0] * x[0] + k[1] * x[1] + k[2] * x[2] + k[3] * x[3]
}

impl ModeSum {
    pub fn new(modes: Vec<Mode>) -> Self {
        assert!(!modes.is_empty(), "mode sum needs at least one mode");
        let heaviest = modes
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.weight.norm().total_cmp(&b.1.weight.norm()))
            .map(|(i, _)| i)
            .unwrap();
        let carrier = modes[heaviest].wave;
        let relative = modes
            .iter()
            .map(|m| Mode {
                weight: m.weight,
                wave: std::array::from_fn(|a| m.wave[a] - carrier[a]),
            })
            .collect();
        Self { modes, carrier, relative }
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn carrier(&self) -> &[C64; 4] {
        &self.carrier
    }

    /// Complex conjugate field.
    pub fn conjugate(&self) -> Self {
        Self::new(
            self.modes
                .iter()
                .map(|m| Mode { weight: m.weight.conj(), wave: m.wave.map(|k| k.conj()) })
                .collect(),
        )
    }

    /// Largest `|K|` over modes; sets the finite-difference error scale.
    pub fn max_wavenumber(&self) -> f64 {
        self.modes
            .iter()
            .map(|m| m.wave.iter().map(|k| k.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Largest `|K_j - K_carrier|`: the wavenumber scale of the envelope.
    pub fn envelope_wavenumber(&self) -> f64 {
        self.relative
            .iter()
            .map(|m| m.wave.iter().map(|k| k.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    pub fn is_single(&self) -> bool {
        self.modes.len() == 1
    }

    #[inline]
    pub(crate) fn envelope(&self, x: &[f64; 4]) -> C64 {
        self.relative.iter().map(|m| m.weight * dot(&m.wave, x).exp()).sum()
    }

    /// Envelope and its gradient.
    #[inline]
    pub(crate) fn envelope_grad(&self, x: &[f64; 4]) -> (C64, [C64; 4]) {
        let mut v = C64::new(0.0, 0.0);
        let mut g = [C64::new(0.0, 0.0); 4];
        for m in &self.relative {
            let e = m.weight * dot(&m.wave, x).exp();
            v += e;
            for a in 0..4 {
                g[a] += e * m.wave[a];
            }
        }
        (v, g)
    }

    /// `phi(x)`.
    pub fn value(&self, x: &[f64; 4]) -> C64 {
        dot(&self.carrier, x).exp() * self.envelope(x)
    }

    /// `phi` and its gradient.
    pub fn value_grad(&self, x: &[f64; 4]) -> (C64, [C64; 4]) {
        let carrier = dot(&self.carrier, x).exp();
        let (v, g) = self.envelope_grad(x);
        let phi = carrier * v;
        let grad = std::array::from_fn(|a| carrier * (g[a] + self.carrier[a] * v));
        (phi, grad)
    }

    pub(crate) fn jet(&self, x: &[f64; 4], order: usize) -> Jet {
        let z = C64::new(0.0, 0.0);
        let mut j = Jet { v: z, d1: [z; 4], d2: [[z; 4]; 4], d3: [[[z; 4]; 4]; 4] };
        for m in &self.relative {
            let e = m.weight * dot(&m.wave, x).exp();
            let k = &m.wave;
            j.v += e;
            if order >= 1 {
                for a in 0..4 {
                    let ea = e * k[a];
                    j.d1[a] += ea;
                    if order >= 2 {
                        for b in a..4 {
                            let eab = ea * k[b];
                            j.d2[a][b] += eab;
                            if order >= 3 {
                                for c in b..4 {
                                    j.d3[a][b][c] += eab * k[c];
                                }
                            }
                        }
                    }
                }
            }
        }
        // Fill the symmetric entries.
        for a in 0..4 {
            for b in a..4 {
                j.d2[b][a] = j.d2[a][b];
                for c in b..4 {
                    let v = j.d3[a][b][c];
                    for (p, q, r) in [(a, c, b), (b, a, c), (b, c, a), (c, a, b), (c, b, a)] {
                        j.d3[p][q][r] = v;
                    }
                }
            }
        }
        j
    }

    /// Derivatives of `ln phi`.
    pub(crate) fn log_jet(&self, x: &[f64; 4], order: usize) -> ComplexLogJet {
        let j = self.jet(x, order);
        let inv = 1.0 / j.v;
        let z = C64::new(0.0, 0.0);
        let mut out = ComplexLogJet { d1: [z; 4], d2: [[z; 4]; 4], d3: [[[z; 4]; 4]; 4] };
        let l1: [C64; 4] = std::array::from_fn(|a| j.d1[a] * inv);
        if order >= 2 {
            for a in 0..4 {
                for b in 0..4 {
                    out.d2[a][b] = j.d2[a][b] * inv - l1[a] * l1[b];
                }
            }
        }
        if order >= 3 {
            for a in 0..4 {
                for b in 0..4 {
                    for c in 0..4 {
                        out.d3[a][b][c] = j.d3[a][b][c] * inv
                            - out.d2[a][b] * l1[c]
                            - out.d2[a][c] * l1[b]
                            - out.d2[b][c] * l1[a]
                            - l1[a] * l1[b] * l1[c];
                    }
                }
            }
        }
        out.d1 = std::array::from_fn(|a| l1[a] + self.carrier[a]);
        out
    }

    /// Continuous phase of the envelope at `x`, unwrapped along the segment
    /// from `reference`. Exact as long as no node lies on the segment.
    pub(crate) fn envelope_phase(&self, reference: &[f64; 4], x: &[f64; 4]) -> f64 {
        let start = self.envelope(reference);
        if self.is_single() {
            return start.arg();
        }
        let dir: [f64; 4] = std::array::from_fn(|a| x[a] - reference[a]);
        let at = |s: f64| -> [f64; 4] { std::array::from_fn(|a| reference[a] + s * dir[a]) };
        let mut theta = start.arg();
        let mut s = 0.0f64;
        let mut cur = start;
        let mut y = *reference;
        while s < 1.0 {
            let (v, g) = self.envelope_grad(&y);
            let rate = (0..4).map(|a| (g[a] / v).im * dir[a]).sum::<f64>().abs();
            let mut ds = (1.0 - s).min(if rate > 0.0 { 0.3 / rate } else { 1.0 });
            loop {
                let s_next = if s + ds >= 1.0 { 1.0 } else { s + ds };
                let y_next = if s_next == 1.0 { *x } else { at(s_next) };
                let next = self.envelope(&y_next);
                let step = (next / cur).arg();
                if step.abs() <= 1.0 || ds < 1e-12 {
                    theta += step;
                    s = s_next;
                    cur = next;
                    y = y_next;
                    break;
                }
                ds *= 0.25;
            }
        }
        theta
    }

    /// `Im(K_c . x)`: the carrier contribution to the phase.
    pub(crate) fn carrier_phase(&self, x: &[f64; 4]) -> f64 {
        dot(&self.carrier, x).im
    }

    /// `Re(K_c . x)`: the carrier contribution to `ln |phi|`.
    pub(crate) fn carrier_log_modulus(&self, x: &[f64; 4]) -> f64 {
        dot(&self.carrier, x).re
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ModeSum {
        let i = C64::i();
        ModeSum::new(vec![
            Mode { weight: C64::new(1.0, 0.0), wave: [-i * 1.2, i * 0.3, C64::new(0.1, 0.2), i * -0.5] },
            Mode { weight: C64::new(0.4, 0.1), wave: [-i * 1.5, i * 0.9, i * 0.2, C64::new(-0.05, 0.0)] },
            Mode { weight: C64::new(0.2, -0.3), wave: [-i * 1.1, i * -0.4, i * 0.1, i * 0.7] },
        ])
    }

    /// Complex log-derivatives against central differences of `ln phi`
    /// computed from the phase-unwrapped logarithm of `phi` itself.
    #[test]
    fn log_jet_matches_finite_differences() {
        let m = sample();
        let x = [0.3, -0.7, 1.1, 0.4];
        let lj = m.log_jet(&x, 3);
        let h = 1e-4;
        let ln = |y: &[f64; 4]| -> C64 {
            let v = m.value(y);
            let phase = m.carrier_phase(y) + m.envelope_phase(&x, y);
            C64::new(v.norm().ln(), phase)
        };
        for a in 0..4 {
            let mut p = x;
            let mut q = x;
            p[a] += h;
            q[a] -= h;
            let fd = (ln(&p) - ln(&q)) / (2.0 * h);
            assert!((fd - lj.d1[a]).norm() < 1e-7, "d1[{a}]");
            for b in 0..4 {
                let mut pp = p;
                let mut pm = p;
                let mut mp = q;
                let mut mm = q;
                pp[b] += h;
                pm[b] -= h;
                mp[b] += h;
                mm[b] -= h;
                let fd2 = (ln(&pp) - ln(&pm) - ln(&mp) + ln(&mm)) / (4.0 * h * h);
                assert!((fd2 - lj.d2[a][b]).norm() < 1e-5, "d2[{a}][{b}]");
            }
        }
        // Third derivatives via differences of the analytic second derivatives.
        for c in 0..4 {
            let mut p = x;
            let mut q = x;
            p[c] += h;
            q[c] -= h;
            let (lp, lq) = (m.log_jet(&p, 2), m.log_jet(&q, 2));
            for a in 0..4 {
                for b in 0..4 {
                    let fd = (lp.d2[a][b] - lq.d2[a][b]) / (2.0 * h);
                    assert!((fd - lj.d3[a][b][c]).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn unwrapped_phase_tracks_many_turns() {
        // A single spatial frequency of 40 rad per unit over 3 units: ~19 turns.
        let i = C64::i();
        let m = ModeSum::new(vec![
            Mode { weight: C64::new(1.0, 0.0), wave: [C64::new(0.0, 0.0); 4] },
            Mode { weight: C64::new(0.3, 0.0), wave: [C64::new(0.0, 0.0), i * 40.0, C64::new(0.0, 0.0), C64::new(0.0, 0.0)] },
            Mode { weight: C64::new(2.0, 0.0), wave: [C64::new(0.0, 0.0), i * 40.0 * 1.01, C64::new(0.0, 0.0), C64::new(0.0, 0.0)] },
        ]);
        let r = [0.0; 4];
        let x = [0.0, 3.0, 0.0, 0.0];
        // Oracle: integrate the phase gradient with a fine trapezoid rule.
        let n = 200_000;
        let mut acc = 0.0;
        for k in 0..n {
            let s0 = 3.0 * k as f64 / n as f64;
            let s1 = 3.0 * (k + 1) as f64 / n as f64;
            let g = |s: f64| {
                let (v, g) = m.value_grad(&[0.0, s, 0.0, 0.0]);
                (g[1] / v).im
            };
            acc += 0.5 * (g(s0) + g(s1)) * (s1 - s0);
        }
        let total = m.carrier_phase(&x) + m.envelope_phase(&r, &x) - m.carrier_phase(&r) - m.envelope_phase(&r, &r);
        assert!((total - acc).abs() < 1e-6, "{total} vs {acc}");
    }

    #[test]
    fn conjugate_flips_phase() {
        let m = sample();
        let x = [0.2, 0.1, -0.3, 0.5];
        assert!((m.conjugate().value(&x) - m.value(&x).conj()).norm() < 1e-14);
    }
}
