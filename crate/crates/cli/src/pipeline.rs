//! Executes the analyses of a scenario in dependency order.

use crate::report::{write_jsonl, AnalysisResult, Check, RunReport, Status, Table};
use crate::scenario::{Analysis, DensitySpec, DiffusionSpec, FieldSpec, GaussianSpec, InitialSpec, MetricSpec, PacketSpec, Scenario};
use comoving_core::chart::ComovingChart;
use comoving_core::diffusion::{
    drift_from_fields, simulate_with_statistics, specular_reverse, DiffusionConfig, IncrementSums, InitialCondition, PathEnsemble,
};
use comoving_core::dynamics::{
    boost_equivalence_check, classify, comoving_kg_residual, four_current, kg_residual, nonrel_limit_study, Classification,
    ComovingStencil, NonrelFamily,
};
use comoving_core::estimators::{
    compare, density_from_sums, energy_report, osmotic_field, osmotic_velocity, velocities_from_sums, CoshDensity, GaussianDensity,
    LeafDensity, LogLinearDensity, QuadratureOptions, SurfaceDensity, UniformDensity,
};
use comoving_core::fields::{check_theorem_hypotheses, FieldBundle, FieldKind, PhysicalConstants, SpacetimePoint};
use comoving_core::geometry::{pullback_metric, riemann, Box3, ConstantPatch, LatticePatch, MetricPatch, SpatialMetric, SurfaceMetric};
use comoving_core::{Error, Execution};
use nalgebra::Matrix3;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

/// Failure of a single analysis.
#[derive(Debug)]
pub enum Failure {
    /// A dependency did not produce its result.
    Skipped(String),
    Core(Error),
    Io(std::io::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e)
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Skipped(s) => f.write_str(s),
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io(e) => write!(f, "i/o: {e}"),
        }
    }
}

#[derive(Default)]
struct Outcome {
    checks: Vec<Check>,
    details: Value,
    files: Vec<String>,
}

struct Simulation {
    ensemble: PathEnsemble,
    sums: IncrementSums,
    rho: Arc<dyn LeafDensity>,
    patch: Arc<dyn MetricPatch>,
}

struct Context<'a> {
    scenario: &'a Scenario,
    constants: PhysicalConstants,
    out: &'a Path,
    exec: Execution,
    bundle: Result<Arc<FieldBundle>, Error>,
    chart: Option<Result<Arc<ComovingChart>, String>>,
    simulation: Option<Simulation>,
}

impl Context<'_> {
    fn bundle(&self) -> Result<Arc<FieldBundle>, Failure> {
        self.bundle.clone().map_err(|e| Failure::Skipped(format!("field construction failed: {e}")))
    }

    fn chart(&mut self) -> Result<Arc<ComovingChart>, Failure> {
        if self.chart.is_none() {
            let built = self
                .bundle()
                .map_err(|e| e.to_string())
                .and_then(|b| ComovingChart::build(b, self.scenario.chart.config()).map(Arc::new).map_err(|e| e.to_string()));
            self.chart = Some(built);
        }
        match self.chart.as_ref().expect("set above") {
            Ok(c) => Ok(c.clone()),
            Err(e) => Err(Failure::Skipped(format!("chart construction failed: {e}"))),
        }
    }

    fn density(&mut self, spec: &DensitySpec) -> Result<Arc<dyn LeafDensity>, Failure> {
        Ok(match spec {
            DensitySpec::Gaussian(g) => Arc::new(GaussianDensity { center: g.center, variance: g.variance }),
            DensitySpec::Cosh(e) => Arc::new(CoshDensity { a: e.a }),
            DensitySpec::LogLinear(e) => Arc::new(LogLinearDensity { a: e.a }),
            DensitySpec::Uniform => Arc::new(UniformDensity),
            DensitySpec::Surface => Arc::new(SurfaceDensity { chart: self.chart()? }),
        })
    }

    fn patch(&mut self, spec: &MetricSpec) -> Result<Arc<dyn MetricPatch>, Failure> {
        Ok(match spec {
            MetricSpec::Euclidean => Arc::new(ConstantPatch::euclidean()),
            MetricSpec::Constant(s) => Arc::new(ConstantPatch::new(Matrix3::from_fn(|i, j| s[i][j]))?),
            MetricSpec::Chart { lattice } => {
                let metric = SurfaceMetric::new(self.chart()?);
                Arc::new(LatticePatch::build(&metric, *lattice, self.exec)?)
            }
        })
    }

    fn file(&self, name: &str) -> std::path::PathBuf {
        self.out.join(name)
    }
}

fn module_of(a: Analysis) -> (&'static str, &'static str) {
    match a {
        Analysis::Hypotheses => ("fields", "check_theorem_hypotheses"),
        Analysis::ChartDiag => ("chart", "forward_map/inverse_map/pushforward"),
        Analysis::GeometryDiag => ("geometry", "flatness_report"),
        Analysis::Kg => ("dynamics", "kg_residual/comoving_kg_residual"),
        Analysis::Classify => ("dynamics", "four_current"),
        Analysis::Simulate => ("diffusion", "simulate"),
        Analysis::Estimate => ("estimators", "velocities_from_sums"),
        Analysis::Specular => ("diffusion", "specular_reverse"),
        Analysis::Energy => ("estimators", "energy_report"),
        Analysis::Nonrel => ("dynamics", "nonrel_limit_study"),
    }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn hypotheses(ctx: &mut Context) -> Result<Outcome, Failure> {
    let lattice = ctx.scenario.lattice.expect("validated");
    let bundle = match &ctx.bundle {
        Ok(b) => b.clone(),
        Err(Error::NodeInDomain { location, amplitude }) => {
            let FieldSpec::Packet(PacketSpec { node_floor, .. }) = &ctx.scenario.field else { unreachable!("only packets scan for nodes") };
            return Ok(Outcome {
                checks: vec![Check::at_least("(i) V_0 nonvanishing: min |phi|", *amplitude, *node_floor)],
                details: json!({
                    "violated": ["(i) V_0 = 0 locus"],
                    "node": location,
                    "amplitude": amplitude,
                }),
                files: vec![],
            });
        }
        Err(e) => return Err(Failure::Core(e.clone())),
    };
    let r = check_theorem_hypotheses(&bundle, &lattice)?;
    let mut violated = Vec::new();
    if !r.nonvanishing_v0() {
        violated.push("(i) V_0 = 0 locus");
    }
    if !r.closed() {
        violated.push("(ii) V not closed");
    }
    if !r.timelike() {
        violated.push("(iii) V not timelike");
    }
    Ok(Outcome {
        checks: vec![
            Check::holds("(i) V_0 nonvanishing without sign change", r.nonvanishing_v0()),
            Check::at_most("(ii) closedness |dV - dV^T| / |dV|", r.closedness_max, r.closedness_tolerance),
            Check::at_least("(iii) timelike fraction", r.timelike_fraction, 1.0),
        ],
        details: json!({ "violated": violated, "report": r }),
        files: vec![],
    })
}

fn chart_diag(ctx: &mut Context) -> Result<Outcome, Failure> {
    let chart = ctx.chart()?;
    let spec = &ctx.scenario.chart;
    let lattice = spec.lattice();
    let time = spec.time_convention();
    let rows = ctx.exec.try_map(lattice.len(), |i| -> Result<[f64; 9], Error> {
        let xi = lattice.point(i);
        let x = chart.inverse_map(&SpacetimePoint::comoving(xi))?;
        let back = chart.forward_map(&x)?.coords;
        let round_trip = max_of((0..4).map(|a| (back[a] - xi[a]).abs()));
        let g = pullback_metric(&chart, &xi)?;
        let g0i = max_of((1..4).map(|a| g[(0, a)].abs().max(g[(a, 0)].abs())));
        let g00 = (g[(0, 0)] - time.g00(xi[0])).abs();
        let v = chart.bundle.velocity(&x.coords)?;
        let pushed = chart.pushforward(&v, &x)?;
        let spatial = max_of((1..4).map(|a| pushed[a].abs())) / pushed[0].abs();
        Ok([xi[0], xi[1], xi[2], xi[3], round_trip, g0i, g00, spatial, g[(0, 0)]])
    })?;
    let mut t = Table::create(&ctx.file("chart.csv"), &["xi0", "xi1", "xi2", "xi3", "round_trip", "g0i", "g00_defect", "pushforward_spatial", "g00"])?;
    for r in &rows {
        t.row(r.iter())?;
    }
    t.finish()?;
    let col = |k: usize| max_of(rows.iter().map(|r| r[k]));
    let boost = boost_equivalence_check(&chart, &spec.origin)?;
    let constant_field = matches!(chart.bundle.kind, FieldKind::PlaneWave { .. } | FieldKind::Evanescent { .. });
    let boost_tol = if constant_field { 1e-5 } else { 1e-3 };
    let mean_rt = rows.iter().map(|r| r[4]).sum::<f64>() / rows.len().max(1) as f64;
    Ok(Outcome {
        checks: vec![
            Check::at_most("max |g_0i|", col(5), spec.block_tolerance),
            Check::at_most("max |g_00 - g_00(xi^0)|", col(6), spec.block_tolerance),
            Check::at_most("max round-trip error", col(4), 1e-6),
            Check::at_most("max |V'^i| / V'^0", col(7), 1e-4),
            Check::at_most("boost deviation at O'", boost.deviation, boost_tol),
        ],
        details: json!({
            "origin": spec.origin,
            "lattice": lattice,
            "round_trip": { "max": col(4), "mean": mean_rt },
            "pushforward_spatial_max": col(7),
            "boost": {
                "velocity": boost.velocity,
                "deviation": boost.deviation,
                "jacobian_normal": matrix_rows(&boost.jacobian),
                "boost_inverse": matrix_rows(&boost.boost_inverse),
            },
        }),
        files: vec!["chart.csv".into()],
    })
}

fn matrix_rows(m: &nalgebra::Matrix4<f64>) -> Vec<[f64; 4]> {
    (0..4).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)], m[(i, 3)]]).collect()
}

fn geometry_diag(ctx: &mut Context) -> Result<Outcome, Failure> {
    let chart = ctx.chart()?;
    let spec = ctx.scenario.geometry.expect("validated");
    let metric = SurfaceMetric::new(chart);
    let lattice = spec.lattice;
    let rows = ctx.exec.try_map(lattice.len(), |i| -> Result<Vec<f64>, Error> {
        let q = lattice.point(i);
        let sigma = metric.metric(&q)?;
        let mut eig: Vec<f64> = sigma.symmetric_eigenvalues().iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        let r = riemann(&metric, &q, spec.curvature_step)?;
        let inverse = sigma.try_inverse().ok_or_else(|| Error::Singular("spatial metric".into()))?;
        let mut row = q.to_vec();
        row.extend((0..3).flat_map(|a| (a..3).map(move |b| (a, b))).map(|(a, b)| sigma[(a, b)]));
        row.extend(eig);
        row.push(r.max_abs());
        row.push(r.scalar(&inverse));
        Ok(row)
    })?;
    let header = [
        "q1", "q2", "q3", "s11", "s12", "s13", "s22", "s23", "s33", "eig1", "eig2", "eig3", "max_riemann", "scalar_curvature",
    ];
    let mut t = Table::create(&ctx.file("geometry.csv"), &header)?;
    for r in &rows {
        t.row(r.iter())?;
    }
    t.finish()?;
    let max_r = max_of(rows.iter().map(|r| r[12]));
    let min_eig = rows.iter().map(|r| r[9]).fold(f64::INFINITY, f64::min);
    Ok(Outcome {
        checks: vec![
            Check::at_most("max |R^i_klm|", max_r, spec.flatness_budget),
            Check::new("min eigenvalue of sigma", min_eig, crate::report::Relation::Above, 0.0),
        ],
        details: json!({ "lattice": lattice, "curvature_step": spec.curvature_step, "points": rows.len() }),
        files: vec!["geometry.csv".into()],
    })
}

fn kg(ctx: &mut Context) -> Result<Outcome, Failure> {
    let chart = ctx.chart()?;
    let bundle = ctx.bundle()?;
    let spec = ctx.scenario.kg.expect("validated");
    let stencil = ComovingStencil { step: spec.step };
    let rows = ctx.exec.try_map(spec.lattice.len(), |i| -> Result<[f64; 8], Error> {
        let x = spec.lattice.point(i);
        let inertial = kg_residual(&bundle, &x)?;
        let xi = chart.forward_map(&SpacetimePoint::inertial(x))?.coords;
        let comoving = comoving_kg_residual(&chart, &xi, &stencil)?;
        Ok([x[0], x[1], x[2], x[3], inertial.value, inertial.budget, comoving.value, comoving.budget])
    })?;
    let mut t = Table::create(&ctx.file("kg.csv"), &["x0", "x1", "x2", "x3", "inertial", "inertial_budget", "comoving", "comoving_budget"])?;
    for r in &rows {
        t.row(r.iter())?;
    }
    t.finish()?;
    let inertial = max_of(rows.iter().map(|r| r[4] / r[5]));
    let invariance = max_of(rows.iter().map(|r| (r[4] - r[6]).abs() / (r[5] + r[7])));
    Ok(Outcome {
        checks: vec![
            Check::at_most("max inertial residual / budget", inertial, 1.0),
            Check::at_most("max |inertial - comoving| / combined budget", invariance, 1.0),
        ],
        details: json!({ "points": rows.len(), "step": spec.step }),
        files: vec!["kg.csv".into()],
    })
}

fn class_name(c: Classification) -> &'static str {
    match c {
        Classification::OneParticle => "one_particle",
        Classification::Specular => "specular",
        Classification::Indeterminate => "indeterminate",
    }
}

fn classify_analysis(ctx: &mut Context) -> Result<Outcome, Failure> {
    let bundle = ctx.bundle()?;
    let conjugate = bundle.conjugate();
    let lattice = ctx.scenario.lattice.expect("validated");
    let pairs = ctx.exec.try_map(lattice.len(), |i| {
        let x = lattice.point(i);
        Ok::<_, Error>((four_current(&bundle, &x)?, four_current(&conjugate, &x)?))
    })?;
    let (samples, conj): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let class = classify(&samples);
    let conj_class = classify(&conj);
    let flipped = samples.iter().zip(&conj).all(|(a, b)| match a.classification {
        Classification::OneParticle => b.classification == Classification::Specular,
        Classification::Specular => b.classification == Classification::OneParticle,
        Classification::Indeterminate => false,
    });
    let defect = max_of(samples.iter().map(|s| s.modulus_defect));
    let tol = samples.first().map_or(0.0, |s| s.tolerance);
    let min_j0 = samples.iter().map(|s| s.j[0]).fold(f64::INFINITY, f64::min);
    let mismatch = max_of(samples.iter().map(|s| s.route_mismatch));
    let count = |c: Classification| samples.iter().filter(|s| s.classification == c).count();
    Ok(Outcome {
        checks: vec![
            Check::at_most("max |J.J + m^2 c^2 p^2| / (m^2 c^2 p^2)", defect, tol),
            Check::holds("uniform classification", class != Classification::Indeterminate),
            Check::holds("phase conjugation flips every sample", flipped),
            Check::at_most("max relative mismatch of the two current formulas", mismatch, 1e-8),
        ],
        details: json!({
            "classification": class_name(class),
            "conjugate_classification": class_name(conj_class),
            "min_j0": min_j0,
            "counts": {
                "one_particle": count(Classification::OneParticle),
                "specular": count(Classification::Specular),
                "indeterminate": count(Classification::Indeterminate),
            },
        }),
        files: vec![],
    })
}

fn diffusion_spec<'a>(ctx: &Context<'a>) -> &'a DiffusionSpec {
    ctx.scenario.diffusion.as_ref().expect("validated")
}

fn simulate(ctx: &mut Context) -> Result<Outcome, Failure> {
    let spec = diffusion_spec(ctx);
    let rho = ctx.density(&spec.density)?;
    let patch = ctx.patch(&spec.metric)?;
    let nu = ctx.constants.nu();
    let initial = match &spec.initial {
        InitialSpec::Point(q) => InitialCondition::Point(*q),
        InitialSpec::Stationary(b) => {
            let region = Box3::new(b.lo, b.hi)?;
            let (r, p) = (rho.clone(), patch.clone());
            let coordinate = move |q: &[f64; 3]| -> f64 {
                match (r.density(q), p.sample(q)) {
                    (Ok(d), Ok(s)) => d * s.sqrt_det,
                    _ => 0.0,
                }
            };
            // Bound from a grid scan with a safety factor; the sampler
            // raises an error if a draw ever exceeds it.
            let n = 21;
            let mut bound = 0.0f64;
            for i in 0..n * n * n {
                let idx = [i / (n * n), (i / n) % n, i % n];
                let q: [f64; 3] = std::array::from_fn(|a| b.lo[a] + (b.hi[a] - b.lo[a]) * idx[a] as f64 / (n - 1) as f64);
                bound = bound.max(coordinate(&q));
            }
            InitialCondition::Density { density: Arc::new(coordinate), region, bound: 1.5 * bound }
        }
    };
    let config = DiffusionConfig {
        dt: spec.dt,
        horizon: spec.horizon,
        paths: spec.paths,
        seed: ctx.scenario.seed,
        nu,
        record_every: spec.record_every,
        explosion_bound: spec.explosion_bound,
        initial,
    };
    let drift = drift_from_fields(osmotic_field(rho.clone(), patch.clone(), nu), nu);
    let (ensemble, sums) = simulate_with_statistics(&drift, &*patch, &config, &spec.bins, spec.burn_in, ctx.exec)?;

    let mut files = vec!["ensemble.header.jsonl".to_string()];
    let mut lines = vec![json!({
        "format": "comoving-ensemble",
        "paths": ensemble.paths,
        "steps": ensemble.steps,
        "dt": ensemble.dt,
        "record_every": ensemble.record_every,
        "records_per_path": ensemble.records_per_path(),
        "seed": ensemble.seed,
        "direction": ensemble.direction,
        "nu": nu,
        "columns": ["path_id", "step", "t", "q1", "q2", "q3"],
        "data": if spec.write_paths { Value::from("ensemble.csv") } else { Value::Null },
    })];
    for (p, c) in ensemble.clipped.iter().enumerate() {
        if let Some(step) = c {
            lines.push(json!({ "path_id": p, "clipped_at_step": step }));
        }
    }
    write_jsonl(&ctx.file("ensemble.header.jsonl"), &lines)?;
    if spec.write_paths {
        let mut t = Table::create(&ctx.file("ensemble.csv"), &["path_id", "step", "t", "q1", "q2", "q3"])?;
        for p in 0..ensemble.paths {
            for (j, s) in ensemble.path(p).iter().enumerate() {
                t.row([
                    p.to_string(),
                    ensemble.step_of(j).to_string(),
                    ensemble.time(j).to_string(),
                    s.state[0].to_string(),
                    s.state[1].to_string(),
                    s.state[2].to_string(),
                ])?;
            }
        }
        t.finish()?;
        files.push("ensemble.csv".into());
    }
    let clipped = ensemble.clipped_count() as f64 / ensemble.paths as f64;
    let outcome = Outcome {
        checks: vec![Check::at_most("fraction of paths leaving the metric patch", clipped, 0.01)],
        details: json!({
            "paths": ensemble.paths,
            "steps": ensemble.steps,
            "streamed_samples": sums.samples(),
            "clipped_paths": ensemble.clipped_count(),
        }),
        files,
    };
    ctx.simulation = Some(Simulation { ensemble, sums, rho, patch });
    Ok(outcome)
}

fn simulation<'a>(ctx: &'a Context) -> Result<&'a Simulation, Failure> {
    ctx.simulation.as_ref().ok_or_else(|| Failure::Skipped("simulate did not complete".into()))
}

fn estimate(ctx: &mut Context) -> Result<Outcome, Failure> {
    let spec = diffusion_spec(ctx);
    let sim = simulation(ctx)?;
    let nu = ctx.constants.nu();
    let (rho, patch) = (&*sim.rho, &*sim.patch);
    let v = velocities_from_sums(&sim.sums, patch, nu)?;
    let density = density_from_sums(&sim.sums, patch)?;
    let reference = |_: usize, c: &[f64; 3]| -> comoving_core::Result<Option<([f64; 3], [f64; 3])>> {
        Ok(Some((osmotic_velocity(rho, &patch.sample(c)?, nu, c)?, [0.0; 3])))
    };
    let u_agree = compare(&v.osmotic, spec.min_count, spec.k, reference)?;
    let beta_agree = compare(&v.current, spec.min_count, spec.k, |_, _| Ok(Some(([0.0; 3], [0.0; 3]))))?;
    let mut checks = vec![
        Check::at_least("fraction of bins with u within k SE of (hbar/2m) grad ln rho", u_agree.fraction, spec.fraction),
        Check::at_least("fraction of bins with beta_- = -beta_+ within k SE", beta_agree.fraction, spec.fraction),
    ];
    let mut variance = Value::Null;
    if let (DensitySpec::Gaussian(GaussianSpec { variance: s2, .. }), MetricSpec::Euclidean | MetricSpec::Constant(_)) = (&spec.density, &spec.metric) {
        let (var, se) = sim.sums.variance();
        let z = max_of((0..3).map(|a| (var[a] - s2).abs() / se[a]));
        checks.push(Check::at_most("max |var - sigma_rho^2| / SE over axes", z, spec.k));
        variance = json!({ "estimate": var, "stderr": se, "expected": s2 });
    }

    let bins = sim.sums.bins;
    let header = [
        "bin", "q1", "q2", "q3", "count", "density", "density_se", "u1", "u2", "u3", "u1_se", "u2_se", "u3_se", "beta1", "beta2",
        "beta3", "beta1_se", "beta2_se", "beta3_se",
    ];
    let mut t = Table::create(&ctx.file("estimators.csv"), &header)?;
    let mid = [bins.n[1] / 2, bins.n[2] / 2];
    let mut profile = Vec::new();
    for i in 0..bins.len() {
        if density.counts[i] == 0 {
            continue;
        }
        let c = bins.center(i);
        let (u, us, b, bs) = (v.osmotic.estimate[i], v.osmotic.stderr[i], v.current.estimate[i], v.current.stderr[i]);
        let mut row = vec![i as f64, c[0], c[1], c[2], density.counts[i] as f64, density.estimate[i][0], density.stderr[i][0]];
        row.extend(u);
        row.extend(us);
        row.extend(b);
        row.extend(bs);
        t.row(row.iter())?;
        if (i / bins.n[2]) % bins.n[1] == mid[0] && i % bins.n[2] == mid[1] {
            profile.push(json!({
                "q1": c[0], "count": density.counts[i], "density": density.estimate[i][0], "density_se": density.stderr[i][0],
                "u1": u[0], "u1_se": us[0], "beta1": b[0], "beta1_se": bs[0],
            }));
        }
    }
    t.finish()?;
    Ok(Outcome {
        checks,
        details: json!({ "osmotic": u_agree, "current": beta_agree, "variance": variance, "profile": profile }),
        files: vec!["estimators.csv".into()],
    })
}

fn specular(ctx: &mut Context) -> Result<Outcome, Failure> {
    let spec = diffusion_spec(ctx);
    let sim = simulation(ctx)?;
    let nu = ctx.constants.nu();
    let reversed = specular_reverse(&sim.ensemble);
    let exact = specular_reverse(&reversed).bit_eq(&sim.ensemble);
    let sums = IncrementSums::from_ensemble(&reversed, &spec.bins, spec.burn_in, ctx.exec)?;
    let forward = sums.forward_drift();
    let (rho, patch) = (&*sim.rho, &*sim.patch);
    // Invariant forward drift: raw drift plus (nu/2) Gamma.
    let reference = |_: usize, c: &[f64; 3]| -> comoving_core::Result<Option<([f64; 3], [f64; 3])>> {
        let s = patch.sample(c)?;
        let g = s.christoffel.contracted(&s.inverse);
        let u = osmotic_velocity(rho, &s, nu, c)?;
        Ok(Some((std::array::from_fn(|a| u[a] - 0.5 * nu * g[a]), [0.0; 3])))
    };
    let agreement = compare(&forward, spec.min_count, spec.k, reference)?;
    Ok(Outcome {
        checks: vec![
            Check::holds("double reversal is bit-exact", exact),
            Check::at_least("fraction of bins with specular forward drift within k SE of u", agreement.fraction, spec.fraction),
        ],
        details: json!({ "agreement": agreement, "samples": sums.samples() }),
        files: vec![],
    })
}

fn energy(ctx: &mut Context) -> Result<Outcome, Failure> {
    let spec = ctx.scenario.energy.clone().expect("validated");
    let rho = ctx.density(&spec.density)?;
    let patch = ctx.patch(&spec.metric)?;
    let region = Box3::new(spec.region.lo, spec.region.hi)?;
    let default_tail = if spec.density == DensitySpec::Uniform { f64::INFINITY } else { QuadratureOptions::default().tail_tolerance };
    let opts = QuadratureOptions { order: spec.order, tail_tolerance: spec.tail_tolerance.unwrap_or(default_tail) };
    let time = ctx.scenario.chart.time_convention();
    let r = energy_report(&*rho, &*patch, &region, &time, spec.delta, &ctx.constants, &opts, ctx.exec)?;
    let mut t = Table::create(&ctx.file("energy.csv"), &["mu_direct", "mu_identity", "E_u2"])?;
    t.row([r.mu_direct, r.mu_identity, r.e_u2])?;
    t.finish()?;
    let mut checks = vec![Check::at_most("|mu_direct - mu_identity|", r.discrepancy(), r.tolerance)];
    if spec.density == DensitySpec::Uniform {
        let k = &ctx.constants;
        checks.push(Check::at_most("|mu + m c^2 / 2| for a uniform density", (r.mu_direct + 0.5 * k.mass * k.c * k.c).abs(), 0.0));
    }
    Ok(Outcome { checks, details: json!(r), files: vec!["energy.csv".into()] })
}

fn nonrel(ctx: &mut Context) -> Result<Outcome, Failure> {
    let spec = ctx.scenario.nonrel.clone().unwrap_or_default();
    let family = NonrelFamily { eps: spec.eps.clone(), ..NonrelFamily::standard() };
    let r = nonrel_limit_study(&family, ctx.constants, ctx.exec)?;
    let names: Vec<&str> = r.rows.first().map(|row| row.terms.iter().map(|t| t.name).collect()).unwrap_or_default();
    let mut header = vec!["eps_nominal", "eps_measured", "discrepancy", "relativistic_residual", "temporal_residual"];
    header.extend(&names);
    let mut t = Table::create(&ctx.file("nonrel.csv"), &header)?;
    for row in &r.rows {
        let mut v = vec![row.eps_nominal, row.eps_measured, row.discrepancy, row.relativistic_residual, row.temporal_residual];
        v.extend(row.terms.iter().map(|t| t.magnitude));
        t.row(v.iter())?;
    }
    t.finish()?;
    Ok(Outcome {
        checks: vec![
            Check::at_most("|slope - expected|", (r.slope - spec.expected_slope).abs(), spec.slope_tolerance),
            Check::holds("flagged terms decrease monotonically with eps", r.flagged_terms_monotone),
        ],
        details: json!(r),
        files: vec!["nonrel.csv".into()],
    })
}

/// Runs every requested analysis, writing data files into `out`.
pub fn run(scenario: &Scenario, out: &Path, threads: Option<usize>) -> std::io::Result<RunReport> {
    let started = Instant::now();
    let started_unix_seconds = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    std::fs::create_dir_all(out)?;
    let k = scenario.constants;
    let constants = PhysicalConstants::new(k.hbar, k.mass, k.c).expect("validated");
    let mut ctx = Context {
        scenario,
        constants,
        out,
        exec: Execution::Parallel,
        bundle: scenario.field.build(constants).map(Arc::new),
        chart: None,
        simulation: None,
    };
    let mut results = Vec::new();
    for a in Analysis::ALL.into_iter().filter(|a| scenario.analyses.contains(a)) {
        let outcome = match a {
            Analysis::Hypotheses => hypotheses(&mut ctx),
            Analysis::ChartDiag => chart_diag(&mut ctx),
            Analysis::GeometryDiag => geometry_diag(&mut ctx),
            Analysis::Kg => kg(&mut ctx),
            Analysis::Classify => classify_analysis(&mut ctx),
            Analysis::Simulate => simulate(&mut ctx),
            Analysis::Estimate => estimate(&mut ctx),
            Analysis::Specular => specular(&mut ctx),
            Analysis::Energy => energy(&mut ctx),
            Analysis::Nonrel => nonrel(&mut ctx),
        };
        let (module, operation) = module_of(a);
        let result = match outcome {
            Ok(o) => AnalysisResult {
                analysis: a,
                module,
                operation,
                status: if o.checks.iter().all(|c| c.pass) { Status::Pass } else { Status::Fail },
                checks: o.checks,
                details: o.details,
                files: o.files,
                error: None,
            },
            Err(e) => AnalysisResult {
                analysis: a,
                module,
                operation,
                status: if matches!(e, Failure::Skipped(_)) { Status::Skipped } else { Status::Error },
                checks: vec![],
                details: Value::Null,
                files: vec![],
                error: Some(e.to_string()),
            },
        };
        results.push(result);
    }
    let data_files = results.iter().flat_map(|r| r.files.iter().cloned()).collect();
    let exit_code = RunReport::exit_code_for(&results);
    let versions = BTreeMap::from([("comoving-core", comoving_core::VERSION), ("comoving-cli", env!("CARGO_PKG_VERSION"))]);
    Ok(RunReport {
        scenario: scenario.clone(),
        seed: scenario.seed,
        threads,
        versions,
        started_unix_seconds,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
        results,
        data_files,
        exit_code,
    })
}
