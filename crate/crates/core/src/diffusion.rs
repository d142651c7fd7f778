//! Euler-Maruyama path ensembles on a spatial leaf, binned drift estimates
//! and specular time reversal.
//!
//! The forward process is `dq = b dt + sqrt(nu) G dW`, `G G^T = sigma^{-1}`,
//! with Ito drift `b^i = beta_+^i - (nu/2) Gamma^i` so that the generator is
//! `(nu/2) Delta_LB + beta_+ . grad`.

use crate::exec::Execution;
use crate::geometry::{Box3, MetricPatch, MetricSample};
use crate::rng::NoiseStream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Velocity field on the leaf.
pub type VectorField = Arc<dyn Fn(&[f64; 3]) -> Result<[f64; 3]> + Send + Sync>;

/// Ito drift of the simulated process.
pub trait Drift: Send + Sync {
    fn drift(&self, q: &[f64; 3], metric: &MetricSample) -> Result<[f64; 3]>;
}

/// Ito drift `u - (nu/2) Gamma^i` for a prescribed osmotic velocity `u`
/// (contravariant components).
#[derive(Clone)]
pub struct OsmoticDrift {
    pub velocity: VectorField,
    pub nu: f64,
}

impl Drift for OsmoticDrift {
    fn drift(&self, q: &[f64; 3], metric: &MetricSample) -> Result<[f64; 3]> {
        let u = (self.velocity)(q)?;
        let g = metric.christoffel.contracted(&metric.inverse);
        Ok(std::array::from_fn(|i| u[i] - 0.5 * self.nu * g[i]))
    }
}

/// Forward drift `beta_+^i = u^i - (nu/2) sigma^{jk} Gamma^i_{jk}`.
pub fn drift_from_fields(velocity: VectorField, nu: f64) -> OsmoticDrift {
    OsmoticDrift { velocity, nu }
}

/// Ito drift given directly as a function of position.
pub struct FnDrift<F>(pub F);

impl<F> Drift for FnDrift<F>
where
    F: Fn(&[f64; 3]) -> Result<[f64; 3]> + Send + Sync,
{
    fn drift(&self, q: &[f64; 3], _metric: &MetricSample) -> Result<[f64; 3]> {
        (self.0)(q)
    }
}

/// Unnormalized coordinate density of the initial state.
pub type ScalarDensity = Arc<dyn Fn(&[f64; 3]) -> f64 + Send + Sync>;

/// Where each path starts.
#[derive(Clone)]
pub enum InitialCondition {
    Point([f64; 3]),
    /// Rejection sampling from uniform proposals on `region` against an
    /// unnormalized coordinate density bounded by `bound`.
    Density {
        density: ScalarDensity,
        region: Box3,
        bound: f64,
    },
}

impl std::fmt::Debug for InitialCondition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitialCondition::Point(q) => write!(f, "Point({q:?})"),
            InitialCondition::Density { region, bound, .. } => write!(f, "Density {{ region: {region:?}, bound: {bound} }}"),
        }
    }
}

impl InitialCondition {
    fn draw(&self, noise: &NoiseStream, path: u64) -> Result<[f64; 3]> {
        match self {
            InitialCondition::Point(q) => Ok(*q),
            InitialCondition::Density { density, region, bound } => {
                for attempt in 0..1_000_000u32 {
                    let u = noise.init_uniform4(path, attempt);
                    let q: [f64; 3] = std::array::from_fn(|a| region.lo[a] + u[a] * (region.hi[a] - region.lo[a]));
                    let d = density(&q);
                    if d > *bound {
                        return Err(Error::InvalidConfig(format!(
                            "initial density {d} exceeds the rejection bound {bound} at {q:?}"
                        )));
                    }
                    if u[3] * bound < d {
                        return Ok(q);
                    }
                }
                Err(Error::InvalidConfig("initial-state rejection sampler accepts nothing".into()))
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct DiffusionConfig {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    pub seed: u64,
    pub nu: f64,
    /// Keep every `record_every`-th step (with its neighbours).
    pub record_every: usize,
    /// `Explosion` if `|q|` exceeds this.
    pub explosion_bound: f64,
    pub initial: InitialCondition,
}

impl DiffusionConfig {
    pub fn steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidConfig(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidConfig(format!("horizon = {} must be positive", self.horizon)));
        }
        if self.dt > self.horizon / 10.0 {
            return Err(Error::InvalidConfig(format!(
                "dt = {} exceeds a tenth of the horizon {}",
                self.dt, self.horizon
            )));
        }
        let ratio = self.horizon / self.dt;
        let steps = ratio.round();
        if (ratio - steps).abs() > 1e-9 * ratio {
            return Err(Error::InvalidConfig(format!("horizon / dt = {ratio} is not an integer")));
        }
        let steps = steps as usize;
        if self.record_every == 0 || !steps.is_multiple_of(self.record_every) {
            return Err(Error::InvalidConfig(format!(
                "record_every = {} must divide the step count {steps}",
                self.record_every
            )));
        }
        if steps >= u32::MAX as usize {
            return Err(Error::InvalidConfig("too many steps per path".into()));
        }
        if self.paths == 0 {
            return Err(Error::InvalidConfig("need at least one path".into()));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidConfig(format!("nu = {} must be positive", self.nu)));
        }
        Ok(steps)
    }
}

/// A recorded step: the state and its neighbours one `dt` before and after
/// (`NaN` where the path has no neighbour).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot {
    pub prev: [f64; 3],
    pub state: [f64; 3],
    pub next: [f64; 3],
}

const MISSING: [f64; 3] = [f64::NAN; 3];

impl Snapshot {
    fn empty() -> Self {
        Self { prev: MISSING, state: MISSING, next: MISSING }
    }

    pub fn has_next(&self) -> bool {
        self.next[0].is_finite() && self.state[0].is_finite()
    }

    pub fn has_prev(&self) -> bool {
        self.prev[0].is_finite() && self.state[0].is_finite()
    }

    /// Bitwise equality; unlike `==` it treats matching `NaN`s as equal.
    pub fn bit_eq(&self, other: &Snapshot) -> bool {
        let same = |a: &[f64; 3], b: &[f64; 3]| (0..3).all(|i| a[i].to_bits() == b[i].to_bits());
        same(&self.prev, &other.prev) && same(&self.state, &other.state) && same(&self.next, &other.next)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDirection {
    Forward,
    /// Specular reversal of a forward ensemble: `t' = -t`.
    Specular,
}

/// Recorded snapshots of `paths` sample paths, path-major.
#[derive(Debug, Clone)]
pub struct PathEnsemble {
    pub dt: f64,
    pub steps: usize,
    pub record_every: usize,
    pub seed: u64,
    pub direction: TimeDirection,
    pub paths: usize,
    snapshots: Vec<Snapshot>,
    /// First step at which a path left the metric patch.
    pub clipped: Vec<Option<u64>>,
}

impl PathEnsemble {
    pub fn records_per_path(&self) -> usize {
        self.steps / self.record_every + 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps as f64 * self.dt
    }

    pub fn path(&self, p: usize) -> &[Snapshot] {
        let n = self.records_per_path();
        &self.snapshots[p * n..(p + 1) * n]
    }

    /// Step index, in this ensemble's time order, of record `j`.
    pub fn step_of(&self, j: usize) -> usize {
        j * self.record_every
    }

    /// Time of record `j`: `[0, T]` forward, `[-T, 0]` after specular reversal.
    pub fn time(&self, j: usize) -> f64 {
        let t = self.step_of(j) as f64 * self.dt;
        match self.direction {
            TimeDirection::Forward => t,
            TimeDirection::Specular => t - self.horizon(),
        }
    }

    /// Record index in the original forward simulation.
    pub fn forward_index(&self, j: usize) -> usize {
        match self.direction {
            TimeDirection::Forward => j,
            TimeDirection::Specular => self.records_per_path() - 1 - j,
        }
    }

    /// Whether record `j` of path `p` is usable: recorded, not clipped and
    /// past the burn-in fraction of the original forward run.
    pub fn usable(&self, p: usize, j: usize, burn_in: f64) -> bool {
        let fj = self.forward_index(j);
        let step = self.step_of(fj) as f64;
        if step < burn_in * self.steps as f64 {
            return false;
        }
        match self.clipped[p] {
            Some(c) => (self.step_of(fj) as u64 + 1) < c,
            None => true,
        }
    }

    /// Bit-identical comparison, including metadata.
    pub fn bit_eq(&self, other: &PathEnsemble) -> bool {
        self.dt.to_bits() == other.dt.to_bits()
            && self.steps == other.steps
            && self.record_every == other.record_every
            && self.seed == other.seed
            && self.direction == other.direction
            && self.paths == other.paths
            && self.clipped == other.clipped
            && self.snapshots.len() == other.snapshots.len()
            && self.snapshots.iter().zip(&other.snapshots).all(|(a, b)| a.bit_eq(b))
    }

    pub fn clipped_count(&self) -> usize {
        self.clipped.iter().filter(|c| c.is_some()).count()
    }
}

/// Simulates `config.paths` independent paths.
///
/// Each Gaussian increment is keyed by `(seed, path, step)`, so the result
/// does not depend on `exec`.
pub fn simulate(
    drift: &dyn Drift,
    patch: &dyn MetricPatch,
    config: &DiffusionConfig,
    exec: Execution,
) -> Result<PathEnsemble> {
    Ok(run(drift, patch, config, None, exec)?.0)
}

/// Like [`simulate`], and also accumulates every post-burn-in step (not
/// only the recorded ones) into per-bin increment sums.
pub fn simulate_with_statistics(
    drift: &dyn Drift,
    patch: &dyn MetricPatch,
    config: &DiffusionConfig,
    bins: &BinSpec,
    burn_in: f64,
    exec: Execution,
) -> Result<(PathEnsemble, IncrementSums)> {
    bins.validate()?;
    let (ensemble, sums) = run(drift, patch, config, Some((bins, burn_in)), exec)?;
    Ok((ensemble, sums.expect("statistics requested")))
}

fn run(
    drift: &dyn Drift,
    patch: &dyn MetricPatch,
    config: &DiffusionConfig,
    stats: Option<(&BinSpec, f64)>,
    exec: Execution,
) -> Result<(PathEnsemble, Option<IncrementSums>)> {
    let steps = config.steps()?;
    let noise = NoiseStream::new(config.seed);
    let nb = BATCHES.min(config.paths);
    let first_step = stats.map(|(_, burn)| ((burn * steps as f64).ceil() as usize).max(1));
    let batches = exec.try_map(nb, |b| {
        let (lo, hi) = (b * config.paths / nb, (b + 1) * config.paths / nb);
        let mut sums = stats.map(|(bins, _)| BatchSums::new(bins.len()));
        let mut out = Vec::with_capacity(hi - lo);
        for p in lo..hi {
            let acc = match (&mut sums, stats, first_step) {
                (Some(s), Some((bins, _)), Some(k0)) => Some((s, bins, k0)),
                _ => None,
            };
            out.push(simulate_path(drift, patch, config, steps, &noise, p as u64, acc)?);
        }
        Ok::<_, Error>((out, sums))
    })?;
    let n = steps / config.record_every + 1;
    let mut snapshots = Vec::with_capacity(config.paths * n);
    let mut clipped = Vec::with_capacity(config.paths);
    let mut per_batch = Vec::with_capacity(nb);
    for (paths, sums) in batches {
        for (snaps, clip) in paths {
            snapshots.extend_from_slice(&snaps);
            clipped.push(clip);
        }
        per_batch.extend(sums);
    }
    let ensemble = PathEnsemble {
        dt: config.dt,
        steps,
        record_every: config.record_every,
        seed: config.seed,
        direction: TimeDirection::Forward,
        paths: config.paths,
        snapshots,
        clipped,
    };
    let sums = stats.map(|(bins, _)| IncrementSums { bins: *bins, dt: config.dt, batches: per_batch });
    Ok((ensemble, sums))
}

#[allow(clippy::too_many_arguments)]
fn simulate_path(
    drift: &dyn Drift,
    patch: &dyn MetricPatch,
    config: &DiffusionConfig,
    steps: usize,
    noise: &NoiseStream,
    path: u64,
    mut stats: Option<(&mut BatchSums, &BinSpec, usize)>,
) -> Result<(Vec<Snapshot>, Option<u64>)> {
    let r = config.record_every;
    let mut snaps = vec![Snapshot::empty(); steps / r + 1];
    let mut q = config.initial.draw(noise, path)?;
    let mut increments = noise.path(path);
    let mut prev = MISSING;
    let scale = (config.nu * config.dt).sqrt();
    let dt = config.dt;
    let bound2 = config.explosion_bound * config.explosion_bound;
    let fixed = patch.constant();
    for k in 0..steps {
        if k % r == 0 {
            snaps[k / r].prev = prev;
            snaps[k / r].state = q;
        }
        if fixed.is_none() && !patch.contains(&q) {
            return Ok((snaps, Some(k as u64)));
        }
        let owned;
        let sample = match fixed {
            Some(s) => s,
            None => {
                owned = patch.sample(&q)?;
                &owned
            }
        };
        let b = drift.drift(&q, sample)?;
        let z = increments.next3();
        let g = &sample.factor;
        let mut next = [0.0; 3];
        for i in 0..3 {
            let mut gz = 0.0;
            for j in 0..=i {
                gz += g[(i, j)] * z[j];
            }
            next[i] = q[i] + b[i] * dt + scale * gz;
        }
        if next[0] * next[0] + next[1] * next[1] + next[2] * next[2] > bound2 || !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Explosion { path, step: k as u64 });
        }
        if k % r == 0 {
            snaps[k / r].next = next;
        }
        if let Some((sums, bins, k0)) = stats.as_mut() {
            if k >= *k0 {
                sums.add(bins, &prev, &q, &next);
            }
        }
        prev = q;
        q = next;
    }
    let last = steps / r;
    snaps[last].prev = prev;
    snaps[last].state = q;
    let clip = if fixed.is_none() && !patch.contains(&q) { Some(steps as u64) } else { None };
    Ok((snaps, clip))
}

/// Increment sums of one batch of paths, per bin of the state.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSums {
    pub count: Vec<usize>,
    pub pos: Vec<[f64; 3]>,
    /// Sum of `q(t + dt) - q(t)`.
    pub forward: Vec<[f64; 3]>,
    /// Sum of `q(t) - q(t - dt)`.
    pub backward: Vec<[f64; 3]>,
    /// All samples, inside the bins or not.
    pub samples: usize,
    pub moment1: [f64; 3],
    pub moment2: [f64; 3],
}

impl BatchSums {
    fn new(n: usize) -> Self {
        Self {
            count: vec![0; n],
            pos: vec![[0.0; 3]; n],
            forward: vec![[0.0; 3]; n],
            backward: vec![[0.0; 3]; n],
            samples: 0,
            moment1: [0.0; 3],
            moment2: [0.0; 3],
        }
    }

    #[inline]
    fn add(&mut self, bins: &BinSpec, prev: &[f64; 3], q: &[f64; 3], next: &[f64; 3]) {
        self.samples += 1;
        for a in 0..3 {
            self.moment1[a] += q[a];
            self.moment2[a] += q[a] * q[a];
        }
        if let Some(i) = bins.index(q) {
            self.count[i] += 1;
            for a in 0..3 {
                self.pos[i][a] += q[a];
                self.forward[i][a] += next[a] - q[a];
                self.backward[i][a] += q[a] - prev[a];
            }
        }
    }
}

/// Binned increment sums over interior samples (those with both
/// neighbours), split into contiguous batches of paths.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementSums {
    pub bins: BinSpec,
    pub dt: f64,
    pub batches: Vec<BatchSums>,
}

impl IncrementSums {
    /// Sums over the usable recorded snapshots of an ensemble.
    pub fn from_ensemble(ensemble: &PathEnsemble, bins: &BinSpec, burn_in: f64, exec: Execution) -> Result<Self> {
        bins.validate()?;
        let nb = BATCHES.min(ensemble.paths).max(1);
        let batches = exec.map(nb, |b| {
            let mut sums = BatchSums::new(bins.len());
            for p in b * ensemble.paths / nb..(b + 1) * ensemble.paths / nb {
                for (j, s) in ensemble.path(p).iter().enumerate() {
                    if ensemble.usable(p, j, burn_in) && s.has_next() && s.has_prev() {
                        sums.add(bins, &s.prev, &s.state, &s.next);
                    }
                }
            }
            sums
        });
        Ok(Self { bins: *bins, dt: ensemble.dt, batches })
    }

    /// Ratio field of `(a * forward + b * backward) / dt`.
    pub fn combination(&self, a: f64, b: f64) -> BinnedField {
        let inv = 1.0 / self.dt;
        let sums: Vec<BinSums> = self
            .batches
            .iter()
            .map(|s| BinSums {
                count: s.count.clone(),
                pos: s.pos.clone(),
                value: s
                    .forward
                    .iter()
                    .zip(&s.backward)
                    .map(|(f, w)| std::array::from_fn(|k| (a * f[k] + b * w[k]) * inv))
                    .collect(),
            })
            .collect();
        ratio_field(&sums, &self.bins, 3)
    }

    /// Ito forward drift.
    pub fn forward_drift(&self) -> BinnedField {
        self.combination(1.0, 0.0)
    }

    /// Backward drift `E[q(t) - q(t - dt) | q(t)] / dt`.
    pub fn backward_drift(&self) -> BinnedField {
        self.combination(0.0, 1.0)
    }

    pub fn samples(&self) -> usize {
        self.batches.iter().map(|b| b.samples).sum()
    }

    /// Per-axis single-time variance with its batch-means standard error.
    pub fn variance(&self) -> ([f64; 3], [f64; 3]) {
        let n = self.samples() as f64;
        let mut var = [0.0; 3];
        let mut se = [0.0; 3];
        for a in 0..3 {
            let m1: f64 = self.batches.iter().map(|b| b.moment1[a]).sum::<f64>() / n;
            let m2: f64 = self.batches.iter().map(|b| b.moment2[a]).sum::<f64>() / n;
            var[a] = m2 - m1 * m1;
            let per: Vec<f64> = self
                .batches
                .iter()
                .filter(|b| b.samples > 1)
                .map(|b| {
                    let k = b.samples as f64;
                    b.moment2[a] / k - (b.moment1[a] / k).powi(2)
                })
                .collect();
            let nb = per.len() as f64;
            let mean = per.iter().sum::<f64>() / nb;
            let s2 = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nb - 1.0);
            se[a] = (s2 / nb).sqrt();
        }
        (var, se)
    }
}

/// Time reversal `t' = -t` of a recorded ensemble. An involution: applying
/// it twice returns a bit-identical ensemble.
pub fn specular_reverse(ensemble: &PathEnsemble) -> PathEnsemble {
    let n = ensemble.records_per_path();
    let mut snapshots = Vec::with_capacity(ensemble.snapshots.len());
    for p in 0..ensemble.paths {
        let path = ensemble.path(p);
        for j in (0..n).rev() {
            let s = path[j];
            snapshots.push(Snapshot { prev: s.next, state: s.state, next: s.prev });
        }
    }
    PathEnsemble {
        direction: match ensemble.direction {
            TimeDirection::Forward => TimeDirection::Specular,
            TimeDirection::Specular => TimeDirection::Forward,
        },
        snapshots,
        ..ensemble.clone()
    }
}

/// Regular binning of the leaf coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
pub struct BinSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    pub n: [usize; 3],
}

impl BinSpec {
    pub fn len(&self) -> usize {
        self.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self, a: usize) -> f64 {
        (self.hi[a] - self.lo[a]) / self.n[a] as f64
    }

    pub fn volume(&self) -> f64 {
        (0..3).map(|a| self.width(a)).product()
    }

    #[inline]
    pub fn index(&self, q: &[f64; 3]) -> Option<usize> {
        let mut flat = 0;
        for a in 0..3 {
            let s = (q[a] - self.lo[a]) / self.width(a);
            if !(s >= 0.0) || s >= self.n[a] as f64 {
                return None;
            }
            flat = flat * self.n[a] + s as usize;
        }
        Some(flat)
    }

    pub fn center(&self, flat: usize) -> [f64; 3] {
        let k = flat % self.n[2];
        let j = (flat / self.n[2]) % self.n[1];
        let i = flat / (self.n[2] * self.n[1]);
        let c = |a: usize, m: usize| self.lo[a] + (m as f64 + 0.5) * self.width(a);
        [c(0, i), c(1, j), c(2, k)]
    }

    pub fn validate(&self) -> Result<()> {
        if self.n.contains(&0) || (0..3).any(|a| !(self.lo[a] < self.hi[a])) {
            return Err(Error::InvalidConfig(format!("invalid bins {self:?}")));
        }
        Ok(())
    }
}

/// Per-bin estimates with batch-means standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinnedField {
    pub bins: BinSpec,
    /// Number of meaningful components in `estimate` (1 for scalars).
    pub components: usize,
    pub counts: Vec<usize>,
    /// Mean sample position per bin (`NaN` if empty).
    pub centroid: Vec<[f64; 3]>,
    pub estimate: Vec<[f64; 3]>,
    pub stderr: Vec<[f64; 3]>,
    pub batches: usize,
}

impl BinnedField {
    /// Estimate and standard error of one bin, if it holds at least `required` samples.
    pub fn get(&self, bin: usize, required: usize) -> Result<([f64; 3], [f64; 3])> {
        let count = self.counts[bin];
        if count < required.max(2) {
            return Err(Error::InsufficientSamples { bin, count, required: required.max(2) });
        }
        Ok((self.estimate[bin], self.stderr[bin]))
    }

    /// Bins holding at least `required` samples.
    pub fn populated(&self, required: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.counts.len()).filter(move |&i| self.counts[i] >= required.max(2))
    }
}

pub(crate) const BATCHES: usize = 32;

/// Per-bin sums over one batch of paths.
#[derive(Clone)]
pub(crate) struct BinSums {
    pub count: Vec<usize>,
    pub pos: Vec<[f64; 3]>,
    pub value: Vec<[f64; 3]>,
}

impl BinSums {
    fn new(n: usize) -> Self {
        Self { count: vec![0; n], pos: vec![[0.0; 3]; n], value: vec![[0.0; 3]; n] }
    }
}

/// Accumulates `value(snapshot)` binned by `snapshot.state` over usable
/// records, one accumulator per contiguous batch of paths.
pub(crate) fn accumulate<F>(ensemble: &PathEnsemble, bins: &BinSpec, burn_in: f64, exec: Execution, value: F) -> Vec<BinSums>
where
    F: Fn(&Snapshot) -> Option<[f64; 3]> + Sync + Send,
{
    let nb = BATCHES.min(ensemble.paths).max(1);
    exec.map(nb, |b| {
        let lo = b * ensemble.paths / nb;
        let hi = (b + 1) * ensemble.paths / nb;
        let mut sums = BinSums::new(bins.len());
        for p in lo..hi {
            for (j, s) in ensemble.path(p).iter().enumerate() {
                if !ensemble.usable(p, j, burn_in) {
                    continue;
                }
                let Some(idx) = bins.index(&s.state) else { continue };
                let Some(v) = value(s) else { continue };
                sums.count[idx] += 1;
                for a in 0..3 {
                    sums.pos[idx][a] += s.state[a];
                    sums.value[idx][a] += v[a];
                }
            }
        }
        sums
    })
}

/// Ratio estimates `sum value / count` per bin with batch-means errors
/// `SE^2 = nb/(nb-1) sum_b (S_b - xbar n_b)^2 / (sum_b n_b)^2`.
pub(crate) fn ratio_field(sums: &[BinSums], bins: &BinSpec, components: usize) -> BinnedField {
    let nbins = bins.len();
    let nb = sums.len();
    let mut out = BinnedField {
        bins: *bins,
        components,
        counts: vec![0; nbins],
        centroid: vec![[f64::NAN; 3]; nbins],
        estimate: vec![[f64::NAN; 3]; nbins],
        stderr: vec![[f64::NAN; 3]; nbins],
        batches: nb,
    };
    for i in 0..nbins {
        let n: usize = sums.iter().map(|s| s.count[i]).sum();
        out.counts[i] = n;
        if n == 0 {
            continue;
        }
        let nf = n as f64;
        let mut mean = [0.0; 3];
        let mut cen = [0.0; 3];
        for s in sums {
            for a in 0..3 {
                mean[a] += s.value[i][a];
                cen[a] += s.pos[i][a];
            }
        }
        for a in 0..3 {
            mean[a] /= nf;
            cen[a] /= nf;
        }
        let mut var = [0.0; 3];
        for s in sums {
            let nbf = s.count[i] as f64;
            for a in 0..3 {
                var[a] += (s.value[i][a] - mean[a] * nbf).powi(2);
            }
        }
        let factor = if nb > 1 { nb as f64 / (nb as f64 - 1.0) } else { f64::NAN };
        out.estimate[i] = mean;
        out.centroid[i] = cen;
        out.stderr[i] = std::array::from_fn(|a| (factor * var[a]).sqrt() / nf);
    }
    out
}

/// Raw forward increments `(q(t + dt) - q(t)) / dt` binned by `q(t)`:
/// the Ito forward drift.
pub fn forward_drift_estimate(ensemble: &PathEnsemble, bins: &BinSpec, burn_in: f64, exec: Execution) -> Result<BinnedField> {
    bins.validate()?;
    let inv = 1.0 / ensemble.dt;
    let sums = accumulate(ensemble, bins, burn_in, exec, |s| {
        s.has_next().then(|| std::array::from_fn(|a| (s.next[a] - s.state[a]) * inv))
    });
    Ok(ratio_field(&sums, bins, 3))
}

/// Raw backward increments `(q(t) - q(t - dt)) / dt` binned by `q(t)`.
pub fn backward_drift_estimate(ensemble: &PathEnsemble, bins: &BinSpec, burn_in: f64, exec: Execution) -> Result<BinnedField> {
    bins.validate()?;
    let inv = 1.0 / ensemble.dt;
    let sums = accumulate(ensemble, bins, burn_in, exec, |s| {
        s.has_prev().then(|| std::array::from_fn(|a| (s.state[a] - s.prev[a]) * inv))
    });
    Ok(ratio_field(&sums, bins, 3))
}

/// Standard normals implied by recorded forward increments under a given
/// Ito drift: `z = G^{-1} (q(t + dt) - q(t) - b dt) / sqrt(nu dt)`.
pub fn implied_noise(
    ensemble: &PathEnsemble,
    drift: &dyn Drift,
    patch: &dyn MetricPatch,
    nu: f64,
    path: usize,
) -> Result<Vec<[f64; 3]>> {
    let scale = (nu * ensemble.dt).sqrt();
    let mut out = Vec::new();
    for s in ensemble.path(path) {
        if !s.has_next() {
            continue;
        }
        let m = patch.sample(&s.state)?;
        let b = drift.drift(&s.state, &m)?;
        let r = nalgebra::Vector3::from_fn(|a, _| (s.next[a] - s.state[a] - b[a] * ensemble.dt) / scale);
        let z = m
            .factor
            .solve_lower_triangular(&r)
            .ok_or_else(|| Error::Singular("noise factor".into()))?;
        out.push([z[0], z[1], z[2]]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ConstantPatch;
    use proptest::prelude::*;

    fn brownian(paths: usize, seed: u64) -> PathEnsemble {
        let config = DiffusionConfig {
            dt: 1e-2,
            horizon: 1.0,
            paths,
            seed,
            nu: 1.0,
            record_every: 10,
            explosion_bound: 1e6,
            initial: InitialCondition::Point([0.0; 3]),
        };
        let drift = FnDrift(|_: &[f64; 3]| Ok([0.0; 3]));
        simulate(&drift, &ConstantPatch::euclidean(), &config, Execution::Parallel).unwrap()
    }

    #[test]
    fn brownian_variance_grows_linearly() {
        let e = brownian(20_000, 3);
        let n = e.records_per_path();
        let last: Vec<[f64; 3]> = (0..e.paths).map(|p| e.path(p)[n - 1].state).collect();
        let var = last.iter().map(|q| q[0] * q[0]).sum::<f64>() / last.len() as f64;
        // nu t = 1; standard error sqrt(2 / N).
        assert!((var - 1.0).abs() < 3.0 * (2.0 / 20_000f64).sqrt(), "{var}");
    }

    #[test]
    fn thread_count_does_not_change_paths() {
        let config = DiffusionConfig {
            dt: 1e-2,
            horizon: 0.5,
            paths: 300,
            seed: 9,
            nu: 0.7,
            record_every: 5,
            explosion_bound: 1e6,
            initial: InitialCondition::Point([0.1, 0.2, 0.3]),
        };
        let drift = FnDrift(|q: &[f64; 3]| Ok([-q[0], -q[1], 0.5]));
        let patch = ConstantPatch::euclidean();
        let a = simulate(&drift, &patch, &config, Execution::Sequential).unwrap();
        let b = simulate(&drift, &patch, &config, Execution::Parallel).unwrap();
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn invalid_step_configuration() {
        let mut config = DiffusionConfig {
            dt: 0.3,
            horizon: 1.0,
            paths: 1,
            seed: 0,
            nu: 1.0,
            record_every: 1,
            explosion_bound: 1e6,
            initial: InitialCondition::Point([0.0; 3]),
        };
        assert!(config.steps().is_err());
        config.dt = 2.0;
        assert!(config.steps().is_err());
        config.dt = 0.1;
        config.record_every = 3;
        assert!(config.steps().is_err());
        config.record_every = 2;
        assert_eq!(config.steps().unwrap(), 10);
    }

    #[test]
    fn explosion_is_reported() {
        let config = DiffusionConfig {
            dt: 0.1,
            horizon: 10.0,
            paths: 2,
            seed: 1,
            nu: 1.0,
            record_every: 1,
            explosion_bound: 1e3,
            initial: InitialCondition::Point([1.0, 0.0, 0.0]),
        };
        let drift = FnDrift(|q: &[f64; 3]| Ok([5.0 * q[0], 0.0, 0.0]));
        let r = simulate(&drift, &ConstantPatch::euclidean(), &config, Execution::Sequential);
        assert!(matches!(r, Err(Error::Explosion { path: 0, .. })));
    }

    #[test]
    fn specular_reversal_swaps_increments() {
        let e = brownian(5, 1);
        let r = specular_reverse(&e);
        assert_eq!(r.direction, TimeDirection::Specular);
        let n = e.records_per_path();
        assert_eq!(r.time(0), -1.0);
        assert_eq!(r.time(n - 1), 0.0);
        let (a, b) = (e.path(2)[3], r.path(2)[n - 1 - 3]);
        assert_eq!(a.state, b.state);
        assert_eq!(a.next, b.prev);
    }

    #[test]
    fn implied_noise_recovers_draws() {
        let e = brownian(3, 5);
        let drift = FnDrift(|_: &[f64; 3]| Ok([0.0; 3]));
        let z = implied_noise(&e, &drift, &ConstantPatch::euclidean(), 1.0, 1).unwrap();
        let direct = NoiseStream::new(5).normal3(1, 0);
        for a in 0..3 {
            assert!((z[0][a] - direct[a]).abs() < 1e-12);
        }
    }

    #[test]
    fn binning_round_trips_centers() {
        let b = BinSpec { lo: [-1.0, 0.0, 2.0], hi: [1.0, 3.0, 4.0], n: [4, 3, 2] };
        for i in 0..b.len() {
            assert_eq!(b.index(&b.center(i)), Some(i));
        }
        assert_eq!(b.index(&[1.0, 1.0, 3.0]), None);
    }

    #[test]
    fn streamed_sums_match_recorded_sums() {
        let config = DiffusionConfig {
            dt: 1e-2,
            horizon: 0.5,
            paths: 40,
            seed: 4,
            nu: 1.0,
            record_every: 1,
            explosion_bound: 1e6,
            initial: InitialCondition::Point([0.0; 3]),
        };
        let drift = FnDrift(|q: &[f64; 3]| Ok([-q[0], 0.2, -q[2]]));
        let bins = BinSpec { lo: [-1.0; 3], hi: [1.0; 3], n: [3, 4, 5] };
        let patch = ConstantPatch::euclidean();
        let (e, streamed) = simulate_with_statistics(&drift, &patch, &config, &bins, 0.3, Execution::Parallel).unwrap();
        let recorded = IncrementSums::from_ensemble(&e, &bins, 0.3, Execution::Sequential).unwrap();
        assert_eq!(streamed, recorded);
        assert!(streamed.samples() > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn double_specular_reversal_is_identity(seed in 0u64..1000, paths in 1usize..6) {
            let e = brownian(paths, seed);
            prop_assert!(specular_reverse(&specular_reverse(&e)).bit_eq(&e));
        }
    }
}
