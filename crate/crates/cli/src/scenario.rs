//! Declarative scenario files and their validation.

use comoving_core::chart::{ChartConfig, TimeConvention};
use comoving_core::diffusion::BinSpec;
use comoving_core::fields::{Box4, DerivativeMode, FieldBundle, Lattice4, PacketOptions, PhysicalConstants};
use comoving_core::geometry::{Box3, Lattice3};
use comoving_core::numerics::ode::OdeOptions;
use num_complex::Complex64 as C64;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Analysis {
    Hypotheses,
    ChartDiag,
    GeometryDiag,
    Kg,
    Classify,
    Simulate,
    Estimate,
    Specular,
    Energy,
    Nonrel,
}

impl Analysis {
    /// Execution order; the derive of `Ord` follows declaration order.
    pub const ALL: [Analysis; 10] = [
        Analysis::Hypotheses,
        Analysis::ChartDiag,
        Analysis::GeometryDiag,
        Analysis::Kg,
        Analysis::Classify,
        Analysis::Simulate,
        Analysis::Estimate,
        Analysis::Specular,
        Analysis::Energy,
        Analysis::Nonrel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Analysis::Hypotheses => "hypotheses",
            Analysis::ChartDiag => "chart_diag",
            Analysis::GeometryDiag => "geometry_diag",
            Analysis::Kg => "kg",
            Analysis::Classify => "classify",
            Analysis::Simulate => "simulate",
            Analysis::Estimate => "estimate",
            Analysis::Specular => "specular",
            Analysis::Energy => "energy",
            Analysis::Nonrel => "nonrel",
        }
    }

    pub fn requires(self) -> &'static [Analysis] {
        match self {
            Analysis::Estimate | Analysis::Specular => &[Analysis::Simulate],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    #[serde(default = "one")]
    pub hbar: f64,
    #[serde(default = "one")]
    pub mass: f64,
    #[serde(default = "one")]
    pub c: f64,
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, c: 1.0 }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec<const N: usize> {
    #[serde(with = "serde_arrays")]
    pub lo: [f64; N],
    #[serde(with = "serde_arrays")]
    pub hi: [f64; N],
}

impl<const N: usize> JsonSchema for BoxSpec<N> {
    fn schema_name() -> std::borrow::Cow<'static, str> {
        format!("Box{N}").into()
    }

    fn json_schema(_: &mut schemars::SchemaGenerator) -> schemars::Schema {
        let corner = serde_json::json!({"type": "array", "items": {"type": "number"}, "minItems": N, "maxItems": N});
        schemars::json_schema!({
            "type": "object",
            "properties": {"lo": corner, "hi": corner},
            "required": ["lo", "hi"],
            "additionalProperties": false
        })
    }
}

/// Serde for const-generic arrays, which serde only supports up to fixed sizes.
mod serde_arrays {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[f64; N], s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[f64; N], D::Error> {
        let v = Vec::<f64>::deserialize(d)?;
        let n = v.len();
        v.try_into().map_err(|_| serde::de::Error::invalid_length(n, &format!("an array of {N} numbers").as_str()))
    }
}

fn default_domain() -> BoxSpec<4> {
    BoxSpec { lo: [-5.0; 4], hi: [5.0; 4] }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(untagged)]
pub enum Weight {
    Real(f64),
    Complex([f64; 2]),
}

impl Weight {
    pub fn value(self) -> C64 {
        match self {
            Weight::Real(w) => C64::new(w, 0.0),
            Weight::Complex([re, im]) => C64::new(re, im),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: [f64; 3],
    pub w: Weight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PlaneWaveSpec {
    pub k: [f64; 3],
    #[serde(default = "default_domain")]
    pub domain: BoxSpec<4>,
    #[serde(default = "analytic")]
    pub derivative: DerivativeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct PacketSpec {
    pub modes: Vec<ModeSpec>,
    #[serde(default = "default_domain")]
    pub domain: BoxSpec<4>,
    #[serde(default = "analytic")]
    pub derivative: DerivativeMode,
    #[serde(default = "node_floor")]
    pub node_floor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EvanescentSpec {
    pub a: [f64; 3],
    #[serde(default = "default_domain")]
    pub domain: BoxSpec<4>,
    #[serde(default = "analytic")]
    pub derivative: DerivativeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum FieldSpec {
    PlaneWave(PlaneWaveSpec),
    Packet(PacketSpec),
    Evanescent(EvanescentSpec),
}

fn analytic() -> DerivativeMode {
    DerivativeMode::Analytic
}

fn node_floor() -> f64 {
    PacketOptions::default().node_floor
}

impl FieldSpec {
    pub fn domain(&self) -> BoxSpec<4> {
        match self {
            FieldSpec::PlaneWave(f) => f.domain,
            FieldSpec::Packet(f) => f.domain,
            FieldSpec::Evanescent(f) => f.domain,
        }
    }

    pub fn build(&self, constants: PhysicalConstants) -> comoving_core::Result<FieldBundle> {
        let domain = Box4::new(self.domain().lo, self.domain().hi)?;
        match self {
            FieldSpec::PlaneWave(f) => FieldBundle::plane_wave(f.k, constants, domain, f.derivative),
            FieldSpec::Evanescent(f) => FieldBundle::evanescent(f.a, constants, domain, f.derivative),
            FieldSpec::Packet(f) => {
                let modes: Vec<([f64; 3], C64)> = f.modes.iter().map(|m| (m.k, m.w.value())).collect();
                let options = PacketOptions { node_floor: f.node_floor, derivative: f.derivative, ..PacketOptions::default() };
                FieldBundle::packet(&modes, constants, domain, &options)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TimeSpec {
    ProperTime,
    Scaled(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    #[serde(default)]
    pub origin: [f64; 4],
    #[serde(default = "proper_time")]
    pub time: TimeSpec,
    #[serde(default = "jacobian_step")]
    pub jacobian_step: f64,
    #[serde(default = "rtol")]
    pub rtol: f64,
    #[serde(default = "atol")]
    pub atol: f64,
    /// Chart-coordinate lattice for metric diagnostics.
    #[serde(default)]
    pub lattice: Option<Lattice4>,
    /// Bound on `|g_0i|` and `|g_00 - g_00(xi^0)|`.
    #[serde(default = "block_tolerance")]
    pub block_tolerance: f64,
}

impl Default for ChartSpec {
    fn default() -> Self {
        Self {
            origin: [0.0; 4],
            time: TimeSpec::ProperTime,
            jacobian_step: jacobian_step(),
            rtol: rtol(),
            atol: atol(),
            lattice: None,
            block_tolerance: block_tolerance(),
        }
    }
}

fn proper_time() -> TimeSpec {
    TimeSpec::ProperTime
}
fn jacobian_step() -> f64 {
    1e-3
}
fn rtol() -> f64 {
    OdeOptions::default().rtol
}
fn atol() -> f64 {
    OdeOptions::default().atol
}
fn block_tolerance() -> f64 {
    1e-4
}

impl ChartSpec {
    pub fn time_convention(&self) -> TimeConvention {
        match self.time {
            TimeSpec::ProperTime => TimeConvention::ProperTime,
            TimeSpec::Scaled(a) => TimeConvention::Scaled(a),
        }
    }

    pub fn config(&self) -> ChartConfig {
        ChartConfig {
            origin: self.origin,
            time: self.time_convention(),
            ode: OdeOptions { rtol: self.rtol, atol: self.atol, ..OdeOptions::default() },
            jacobian_step: self.jacobian_step,
        }
    }

    /// The configured lattice, or `3^4` points within `0.5` of `Phi(O')`.
    pub fn lattice(&self) -> Lattice4 {
        self.lattice.unwrap_or_else(|| {
            let o = self.origin;
            let c = [0.0, o[1], o[2], o[3]];
            Lattice4 { lo: c.map(|v| v - 0.5), hi: c.map(|v| v + 0.5), n: [3; 4] }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GeometrySpec {
    pub lattice: Lattice3,
    #[serde(default = "curvature_step")]
    pub curvature_step: f64,
    #[serde(default = "flatness_budget")]
    pub flatness_budget: f64,
}

fn curvature_step() -> f64 {
    1e-2
}
fn flatness_budget() -> f64 {
    1e-3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct KgSpec {
    /// Inertial sample points are the nodes of this lattice.
    pub lattice: Lattice4,
    #[serde(default = "kg_step")]
    pub step: f64,
}

fn kg_step() -> f64 {
    1e-2
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct GaussianSpec {
    #[serde(default)]
    pub center: [f64; 3],
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ExponentSpec {
    pub a: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DensitySpec {
    Gaussian(GaussianSpec),
    Cosh(ExponentSpec),
    LogLinear(ExponentSpec),
    Uniform,
    /// `p` of the field restricted to the chart's reference surface.
    Surface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MetricSpec {
    Euclidean,
    Constant([[f64; 3]; 3]),
    /// Reference-surface metric of the chart, tabulated on a lattice.
    Chart { lattice: Lattice3 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialSpec {
    Point([f64; 3]),
    /// Rejection sampling from the stationary density on a box.
    Stationary(BoxSpec<3>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct DiffusionSpec {
    pub dt: f64,
    pub horizon: f64,
    pub paths: usize,
    #[serde(default = "record_every")]
    pub record_every: usize,
    #[serde(default = "explosion_bound")]
    pub explosion_bound: f64,
    pub density: DensitySpec,
    #[serde(default = "euclidean")]
    pub metric: MetricSpec,
    pub initial: InitialSpec,
    pub bins: BinSpec,
    #[serde(default = "burn_in")]
    pub burn_in: f64,
    #[serde(default = "min_count")]
    pub min_count: usize,
    /// Agreement threshold in standard errors.
    #[serde(default = "k_se")]
    pub k: f64,
    /// Required fraction of agreeing bins.
    #[serde(default = "fraction")]
    pub fraction: f64,
    /// Write the recorded trajectories as CSV.
    #[serde(default = "yes")]
    pub write_paths: bool,
}

fn record_every() -> usize {
    1
}
fn explosion_bound() -> f64 {
    1e3
}
fn euclidean() -> MetricSpec {
    MetricSpec::Euclidean
}
fn burn_in() -> f64 {
    0.2
}
fn min_count() -> usize {
    500
}
fn k_se() -> f64 {
    3.0
}
fn fraction() -> f64 {
    0.95
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct EnergySpec {
    pub density: DensitySpec,
    #[serde(default = "euclidean")]
    pub metric: MetricSpec,
    pub region: BoxSpec<3>,
    #[serde(default = "one")]
    pub delta: f64,
    #[serde(default = "quadrature_order")]
    pub order: usize,
    /// Largest admissible boundary-to-peak density ratio. Defaults to 1e-8,
    /// or no limit for a uniform density, whose support is the region.
    #[serde(default)]
    pub tail_tolerance: Option<f64>,
}

fn quadrature_order() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NonrelSpec {
    #[serde(default = "nonrel_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "two")]
    pub expected_slope: f64,
    #[serde(default = "slope_tolerance")]
    pub slope_tolerance: f64,
}

impl Default for NonrelSpec {
    fn default() -> Self {
        Self { eps: nonrel_eps(), expected_slope: 2.0, slope_tolerance: slope_tolerance() }
    }
}

fn nonrel_eps() -> Vec<f64> {
    vec![0.1, 0.05, 0.025, 0.0125]
}
fn two() -> f64 {
    2.0
}
fn slope_tolerance() -> f64 {
    0.3
}

/// Pretty-printed JSON schema of scenario files, as published in
/// `schemas/scenario.schema.json`.
pub fn schema_text() -> String {
    serde_json::to_string_pretty(&schemars::schema_for!(Scenario)).expect("schemas serialize")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub constants: ConstantsSpec,
    pub field: FieldSpec,
    #[serde(default)]
    pub chart: ChartSpec,
    /// Inertial lattice for the hypothesis and current checks.
    #[serde(default)]
    pub lattice: Option<Lattice4>,
    #[serde(default)]
    pub geometry: Option<GeometrySpec>,
    #[serde(default)]
    pub kg: Option<KgSpec>,
    #[serde(default)]
    pub diffusion: Option<DiffusionSpec>,
    #[serde(default)]
    pub energy: Option<EnergySpec>,
    #[serde(default)]
    pub nonrel: Option<NonrelSpec>,
    pub analyses: Vec<Analysis>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// A problem located by a JSON pointer into the scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub pointer: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = if self.pointer.is_empty() { "/" } else { &self.pointer };
        write!(f, "{at}: {}", self.message)
    }
}

fn diag(pointer: impl Into<String>, message: impl Into<String>) -> Diagnostic {
    Diagnostic { pointer: pointer.into(), message: message.into() }
}

#[derive(Debug)]
pub enum LoadError {
    Io(PathBuf, std::io::Error),
    Invalid(Vec<Diagnostic>),
}

impl fmt::Display for LoadError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LoadError::Io(p, e) => write!(f, "cannot read {}: {e}", p.display()),
            LoadError::Invalid(d) => {
                for (i, x) in d.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
        }
    }
}

impl std::error::Error for LoadError {}

fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    out
}

fn body_error<T: serde::de::DeserializeOwned>(body: Value) -> Option<(String, String)> {
    serde_path_to_error::deserialize::<_, T>(body).err().map(|e| (pointer(e.path()), e.into_inner().to_string()))
}

/// Internally tagged sections are buffered before dispatch, which hides the
/// location of errors inside them. Re-reading the body of the tagged object
/// at `at` as its variant type recovers the inner pointer.
fn refine(text: &str, at: &str) -> Option<(String, String)> {
    let root: Value = serde_json::from_str(text).ok()?;
    let mut body = root.pointer(at)?.as_object()?.clone();
    let tag = body.remove("type")?;
    let body = Value::Object(body);
    let (inner, message) = match tag.as_str()? {
        "plane_wave" => body_error::<PlaneWaveSpec>(body),
        "packet" => body_error::<PacketSpec>(body),
        "evanescent" => body_error::<EvanescentSpec>(body),
        "gaussian" => body_error::<GaussianSpec>(body),
        "cosh" | "log_linear" => body_error::<ExponentSpec>(body),
        _ => None,
    }?;
    Some((format!("{at}{inner}"), message))
}

/// Parses a scenario, reporting the location of the first schema error.
pub fn parse(text: &str) -> Result<Scenario, Vec<Diagnostic>> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let at = pointer(e.path());
        let (at, message) = refine(text, &at).unwrap_or_else(|| (at, e.into_inner().to_string()));
        vec![diag(at, message)]
    })
}

/// Reads, parses and validates a scenario file.
pub fn load(path: &Path) -> Result<Scenario, LoadError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadError::Io(path.to_path_buf(), e))?;
    let scenario = parse(&text).map_err(LoadError::Invalid)?;
    let d = validate(&scenario);
    if d.is_empty() {
        Ok(scenario)
    } else {
        Err(LoadError::Invalid(d))
    }
}

fn box4_str(lo: &[f64; 4], hi: &[f64; 4]) -> String {
    format!("{lo:?}..{hi:?}")
}

fn inside4(lo: &[f64; 4], hi: &[f64; 4], outer: &BoxSpec<4>) -> bool {
    (0..4).all(|a| lo[a] >= outer.lo[a] && hi[a] <= outer.hi[a])
}

fn check_lattice4(out: &mut Vec<Diagnostic>, at: &str, l: &Lattice4, domain: &BoxSpec<4>, name: &str) {
    if l.n.contains(&0) || (0..4).any(|a| l.lo[a] > l.hi[a]) {
        out.push(diag(at, format!("{name} lattice {} with n = {:?} is empty", box4_str(&l.lo, &l.hi), l.n)));
    } else if !inside4(&l.lo, &l.hi, domain) {
        out.push(diag(
            at,
            format!(
                "{name} lattice {} lies outside the field domain {}",
                box4_str(&l.lo, &l.hi),
                box4_str(&domain.lo, &domain.hi)
            ),
        ));
    }
}

fn check_density(out: &mut Vec<Diagnostic>, at: &str, d: &DensitySpec) {
    if let DensitySpec::Gaussian(GaussianSpec { variance, .. }) = d {
        if !(*variance > 0.0 && variance.is_finite()) {
            out.push(diag(format!("{at}/variance"), format!("variance {variance} must be positive")));
        }
    }
}

fn check_metric(out: &mut Vec<Diagnostic>, at: &str, m: &MetricSpec) {
    match m {
        MetricSpec::Euclidean => {}
        MetricSpec::Constant(s) => {
            let sym = (0..3).all(|i| (0..3).all(|j| s[i][j] == s[j][i]));
            let sigma = nalgebra::Matrix3::from_fn(|i, j| s[i][j]);
            if !sym || nalgebra::Cholesky::new(sigma).is_none() {
                out.push(diag(format!("{at}/constant"), "metric must be symmetric positive definite"));
            }
        }
        MetricSpec::Chart { lattice } => {
            if lattice.n.iter().any(|&n| n < 2) {
                out.push(diag(format!("{at}/chart/lattice/n"), "metric lattice needs at least two points per axis"));
            }
        }
    }
}

/// Cross-field checks that the schema cannot express.
pub fn validate(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let k = s.constants;
    if let Err(e) = PhysicalConstants::new(k.hbar, k.mass, k.c) {
        out.push(diag("/constants", e.to_string()));
    }
    let domain = s.field.domain();
    if (0..4).any(|a| !(domain.lo[a] < domain.hi[a])) {
        out.push(diag("/field/domain", format!("empty domain {}", box4_str(&domain.lo, &domain.hi))));
    }
    if let FieldSpec::Packet(PacketSpec { modes, .. }) = &s.field {
        if modes.len() < 2 {
            out.push(diag("/field/modes", "a packet needs at least two modes"));
        }
        for (i, m) in modes.iter().enumerate() {
            let w = m.w.value();
            if !(w.norm() > 0.0) {
                out.push(diag(format!("/field/modes/{i}/w"), "weights must be nonzero"));
            }
        }
    }
    if s.analyses.is_empty() {
        out.push(diag("/analyses", "no analyses requested"));
    }
    for (i, a) in s.analyses.iter().enumerate() {
        if s.analyses[..i].contains(a) {
            out.push(diag(format!("/analyses/{i}"), format!("{} listed twice", a.name())));
        }
        for r in a.requires() {
            if !s.analyses.contains(r) {
                out.push(diag(format!("/analyses/{i}"), format!("{} requires {}", a.name(), r.name())));
            }
        }
    }
    let wants = |a: Analysis| s.analyses.contains(&a);
    let chart_needed = [Analysis::ChartDiag, Analysis::GeometryDiag, Analysis::Kg].into_iter().any(wants)
        || s.diffusion.as_ref().is_some_and(|d| matches!(d.metric, MetricSpec::Chart { .. }) || d.density == DensitySpec::Surface)
        || s.energy.as_ref().is_some_and(|e| matches!(e.metric, MetricSpec::Chart { .. }) || e.density == DensitySpec::Surface);
    if chart_needed && !inside4(&s.chart.origin, &s.chart.origin, &domain) {
        out.push(diag("/chart/origin", format!("origin {:?} lies outside the field domain", s.chart.origin)));
    }
    if !(s.chart.jacobian_step > 0.0) {
        out.push(diag("/chart/jacobian_step", "must be positive"));
    }
    if let TimeSpec::Scaled(a) = s.chart.time {
        if !(a > 0.0 && a.is_finite()) {
            out.push(diag("/chart/time/scaled", format!("scale {a} must be positive")));
        }
    }
    if let Some(l) = &s.chart.lattice {
        if l.n.contains(&0) {
            out.push(diag("/chart/lattice/n", "empty lattice"));
        }
    }
    if [Analysis::Hypotheses, Analysis::Classify].into_iter().any(wants) {
        match &s.lattice {
            None => out.push(diag("/lattice", "hypotheses and classify need an inertial lattice")),
            Some(l) => check_lattice4(&mut out, "/lattice", l, &domain, "inertial"),
        }
    }
    if wants(Analysis::GeometryDiag) && s.geometry.is_none() {
        out.push(diag("/geometry", "geometry_diag needs a geometry section"));
    }
    if wants(Analysis::Kg) {
        match &s.kg {
            None => out.push(diag("/kg", "kg needs a kg section")),
            Some(kg) => {
                check_lattice4(&mut out, "/kg/lattice", &kg.lattice, &domain, "kg");
                if !(kg.step > 0.0) {
                    out.push(diag("/kg/step", "must be positive"));
                }
            }
        }
    }
    if [Analysis::Simulate, Analysis::Estimate, Analysis::Specular].into_iter().any(wants) {
        match &s.diffusion {
            None => out.push(diag("/diffusion", "simulate needs a diffusion section")),
            Some(d) => {
                if !(d.dt > 0.0 && d.dt.is_finite()) {
                    out.push(diag("/diffusion/dt", format!("dt = {} must be positive", d.dt)));
                } else if !(d.horizon > 0.0 && d.horizon.is_finite()) {
                    out.push(diag("/diffusion/horizon", format!("horizon = {} must be positive", d.horizon)));
                } else if d.dt > d.horizon {
                    out.push(diag("/diffusion/dt", format!("dt = {} exceeds the horizon T = {}", d.dt, d.horizon)));
                } else if d.dt > d.horizon / 10.0 {
                    out.push(diag("/diffusion/dt", format!("dt = {} leaves fewer than 10 steps in T = {}", d.dt, d.horizon)));
                } else {
                    let steps = (d.horizon / d.dt).round();
                    if ((steps * d.dt - d.horizon) / d.horizon).abs() > 1e-9 {
                        out.push(diag("/diffusion/dt", format!("T = {} is not a whole number of steps dt = {}", d.horizon, d.dt)));
                    } else if d.record_every == 0 || !(steps as usize).is_multiple_of(d.record_every) {
                        out.push(diag(
                            "/diffusion/record_every",
                            format!("{} does not divide the {} steps", d.record_every, steps as usize),
                        ));
                    }
                }
                if d.paths == 0 {
                    out.push(diag("/diffusion/paths", "at least one path"));
                }
                if !(d.explosion_bound > 0.0) {
                    out.push(diag("/diffusion/explosion_bound", "must be positive"));
                }
                if d.bins.validate().is_err() {
                    out.push(diag("/diffusion/bins", format!("invalid bins {:?}..{:?} n = {:?}", d.bins.lo, d.bins.hi, d.bins.n)));
                }
                if !(0.0..1.0).contains(&d.burn_in) {
                    out.push(diag("/diffusion/burn_in", "must lie in [0, 1)"));
                }
                if !(d.fraction > 0.0 && d.fraction <= 1.0) {
                    out.push(diag("/diffusion/fraction", "must lie in (0, 1]"));
                }
                check_density(&mut out, "/diffusion/density", &d.density);
                check_metric(&mut out, "/diffusion/metric", &d.metric);
                if let InitialSpec::Stationary(b) = &d.initial {
                    if (0..3).any(|a| !(b.lo[a] < b.hi[a])) {
                        out.push(diag("/diffusion/initial/stationary", "empty region"));
                    }
                }
            }
        }
    }
    if wants(Analysis::Energy) {
        match &s.energy {
            None => out.push(diag("/energy", "energy needs an energy section")),
            Some(e) => {
                check_density(&mut out, "/energy/density", &e.density);
                check_metric(&mut out, "/energy/metric", &e.metric);
                if Box3::new(e.region.lo, e.region.hi).is_err() {
                    out.push(diag("/energy/region", "empty region"));
                }
                if !(e.delta > 0.0) {
                    out.push(diag("/energy/delta", "must be positive"));
                }
                if e.order < 4 {
                    out.push(diag("/energy/order", "at least 4 quadrature points"));
                }
                if e.tail_tolerance.is_some_and(|t| !(t > 0.0)) {
                    out.push(diag("/energy/tail_tolerance", "must be positive"));
                }
            }
        }
    }
    if let Some(n) = &s.nonrel {
        if n.eps.len() < 2 {
            out.push(diag("/nonrel/eps", "a slope fit needs at least two values"));
        }
        for (i, e) in n.eps.iter().enumerate() {
            if !(*e > 0.0 && *e < 1.0) {
                out.push(diag(format!("/nonrel/eps/{i}"), format!("eps = {e} must lie in (0, 1)")));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"name":"rest","field":{"type":"plane_wave","k":[0,0,0]},
        "lattice":{"lo":[-1,-1,-1,-1],"hi":[1,1,1,1],"n":[2,2,2,2]},"analyses":["hypotheses"]}"#;

    #[test]
    fn minimal_scenario_is_valid() {
        let s = parse(MINIMAL).unwrap();
        assert!(validate(&s).is_empty());
        assert_eq!(s.field.domain(), default_domain());
    }

    #[test]
    fn schema_errors_carry_pointers() {
        let text = MINIMAL.replace(r#""k":[0,0,0]"#, r#""k":[0,0]"#);
        let d = parse(&text).unwrap_err();
        assert_eq!(d[0].pointer, "/field/k");
        let text = MINIMAL.replace(r#""analyses":["hypotheses"]"#, r#""analyses":["hypotheses","bogus"]"#);
        assert_eq!(parse(&text).unwrap_err()[0].pointer, "/analyses/1");
    }

    #[test]
    fn packet_weights_accept_real_and_complex() {
        let text = r#"{"type":"packet","modes":[{"k":[0,0,0],"w":1.0},{"k":[0.1,0,0],"w":[0.2,0.1]}]}"#;
        let f: FieldSpec = serde_json::from_str(text).unwrap();
        let FieldSpec::Packet(PacketSpec { modes, .. }) = f else { panic!() };
        assert_eq!(modes[1].w.value(), C64::new(0.2, 0.1));
    }

    #[test]
    fn lattice_outside_domain_names_both_boxes() {
        let text = MINIMAL.replace(r#""hi":[1,1,1,1]"#, r#""hi":[1,1,1,9]"#);
        let d = validate(&parse(&text).unwrap());
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].pointer, "/lattice");
        assert!(d[0].message.contains("[1.0, 1.0, 1.0, 9.0]") && d[0].message.contains("[5.0, 5.0, 5.0, 5.0]"));
    }

    #[test]
    fn estimate_requires_simulate() {
        let text = MINIMAL.replace(r#""analyses":["hypotheses"]"#, r#""analyses":["estimate"]"#);
        let d = validate(&parse(&text).unwrap());
        assert!(d.iter().any(|x| x.pointer == "/analyses/0" && x.message.contains("requires simulate")));
    }
}
