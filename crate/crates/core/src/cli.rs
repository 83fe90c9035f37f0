//! Batch runner behind the command-line front end: TOML configuration,
//! instance expansion, parallel execution and report files.

use crate::geometry::{make_two_graph, GeometryError, GraphDomain, GraphShape};
use crate::inequalities::{check_compatible, evaluate_case, CaseDomain, InequalityCase, InequalityReport};
use crate::optimize::{
    ab_pareto, eig_best_constant_1d, minimize_ratio, BoundaryCondition, Grid, OptError, ParetoFlag, Profile1d,
    RayleighProblem, Reduction, TrialConstraint, TrialTemplate, Weight1d,
};
use crate::probe::{classify_singular, default_eps, divergence_scan, predicted_exponent, Classification, SingularRegime};
use crate::quad::QuadSettings;
use crate::testfn::{make_testfn, uniform_knots, TestFnFamily, TestFunction};
use crate::weights::{make_weight, WeightFamily, WeightSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_CONFIG: i32 = 4;

const SECTIONS: [&str; 11] =
    ["mode", "seed", "case", "weight", "domain", "testfns", "quad", "output", "sweep", "optimize", "counterexample"];
/// Keys kept as integers when normalising numeric TOML values.
const INTEGER_KEYS: [&str; 6] = ["dim", "count", "seed", "budget", "elements", "max_cells"];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config key `{key}`: {message}")]
    ConfigInvalid { key: String, message: String },
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigInvalid { .. } => EXIT_CONFIG,
            CliError::Io { .. } => EXIT_NUMERICAL,
        }
    }
}

fn invalid(key: &str, message: impl std::fmt::Display) -> CliError {
    CliError::ConfigInvalid { key: key.to_string(), message: message.to_string() }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Verify,
    Sweep,
    Optimize,
    Counterexample,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SuiteFamily {
    #[default]
    RadialBump,
    ProductBump,
    Plateau,
}

/// Seeded test-function suite: centres uniform in `[center_lo, center_hi]`,
/// radii uniform in `radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFnSuite {
    #[serde(default)]
    pub family: SuiteFamily,
    #[serde(default)]
    pub count: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub center_lo: Vec<f64>,
    #[serde(default)]
    pub center_hi: Vec<f64>,
    #[serde(default = "default_radius")]
    pub radius: [f64; 2],
    /// Extra functions appended after the random ones.
    #[serde(default)]
    pub explicit: Vec<TestFnFamily>,
}

fn default_radius() -> [f64; 2] {
    [0.5, 1.5]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    #[serde(default = "zero_shape")]
    pub shape: GraphShape,
    #[serde(default)]
    pub shift: f64,
}

fn zero_shape() -> GraphShape {
    GraphShape::Zero
}

/// Single graph (`shape`, `shift`) or two graphs (`lower`, `upper`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(default)]
    pub shape: Option<GraphShape>,
    #[serde(default)]
    pub shift: f64,
    #[serde(default)]
    pub lower: Option<GraphSpec>,
    #[serde(default)]
    pub upper: Option<GraphSpec>,
}

impl DomainConfig {
    pub fn build(&self, dim: usize) -> Result<CaseDomain, CliError> {
        let geo = |e: GeometryError| invalid("domain", e);
        match (self.lower, self.upper) {
            (Some(lo), Some(up)) => {
                if self.shape.is_some() {
                    return Err(invalid("domain.shape", "give either shape or lower/upper, not both"));
                }
                let lower = GraphDomain::shifted(lo.shape, lo.shift, dim).map_err(geo)?;
                let upper = GraphDomain::shifted(up.shape, up.shift, dim).map_err(geo)?;
                Ok(CaseDomain::TwoGraph(make_two_graph(lower, upper, dim).map_err(geo)?))
            }
            (None, None) => Ok(CaseDomain::Graph(GraphDomain::shifted(self.shape.unwrap_or(GraphShape::Zero), self.shift, dim).map_err(geo)?)),
            _ => Err(invalid("domain", "two-graph domains need both lower and upper")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `case.<key>`, `weight.<key>` or `p`.
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizeConfig {
    Rayleigh {
        #[serde(default)]
        budget: usize,
        #[serde(default)]
        knots: Vec<f64>,
        /// `[a, b, count]` for `count` uniform interior knots.
        #[serde(default)]
        knots_uniform: Option<[f64; 3]>,
        #[serde(default)]
        initial: Option<Vec<f64>>,
        #[serde(default = "default_cutoff")]
        cutoff_radius: f64,
        #[serde(default)]
        constraint: TrialConstraint,
        #[serde(default)]
        reduction: Reduction,
    },
    Eigen {
        left: Profile1d,
        right: Profile1d,
        bc: BoundaryCondition,
        #[serde(default = "default_length")]
        length: f64,
        #[serde(default = "default_elements")]
        elements: usize,
        #[serde(default)]
        grid: Option<Grid>,
    },
    Pareto {
        a_grid: Vec<f64>,
    },
}

fn default_cutoff() -> f64 {
    2.0
}
fn default_length() -> f64 {
    50.0
}
fn default_elements() -> usize {
    4000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CounterexampleConfig {
    pub gamma: f64,
    pub p: f64,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "one")]
    pub r_inner: f64,
    #[serde(default = "two")]
    pub r_outer: f64,
    #[serde(default)]
    pub eps: Option<Vec<f64>>,
}

fn default_dim() -> usize {
    2
}
fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

/// Parsed configuration; `[case]` and `[weight]` stay as raw tables so
/// sweeps can substitute parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteConfig {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub case: Option<toml::Table>,
    pub weight: Option<toml::Table>,
    pub domain: DomainConfig,
    pub testfns: Option<TestFnSuite>,
    pub quad: QuadSettings,
    pub output: OutputConfig,
    pub sweep: Option<SweepConfig>,
    pub optimize: Option<OptimizeConfig>,
    pub counterexample: Option<CounterexampleConfig>,
}

/// Integer literals become floats except under [`INTEGER_KEYS`].
fn floatify(v: &mut toml::Value, key: &str) {
    match v {
        toml::Value::Integer(i) if !INTEGER_KEYS.contains(&key) => *v = toml::Value::Float(*i as f64),
        toml::Value::Array(a) => a.iter_mut().for_each(|x| floatify(x, key)),
        toml::Value::Table(t) => t.iter_mut().for_each(|(k, x)| floatify(x, k)),
        _ => {}
    }
}

fn section<T: DeserializeOwned>(table: &toml::Table, key: &str) -> Result<Option<T>, CliError> {
    table.get(key).map(|v| v.clone().try_into::<T>().map_err(|e| invalid(key, e.to_string().trim()))).transpose()
}

fn table_section(table: &toml::Table, key: &str) -> Result<Option<toml::Table>, CliError> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Table(t)) => Ok(Some(t.clone())),
        Some(_) => Err(invalid(key, "expected a table")),
    }
}

pub fn parse_config(text: &str) -> Result<SuiteConfig, CliError> {
    let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid("<file>", e.message()))?;
    if let Some(k) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        return Err(invalid(k, "unknown key"));
    }
    table.iter_mut().for_each(|(k, v)| floatify(v, k));
    Ok(SuiteConfig {
        mode: section(&table, "mode")?,
        seed: section(&table, "seed")?,
        case: table_section(&table, "case")?,
        weight: table_section(&table, "weight")?,
        domain: section(&table, "domain")?.unwrap_or_default(),
        testfns: section(&table, "testfns")?,
        quad: section(&table, "quad")?.unwrap_or_default(),
        output: section(&table, "output")?.unwrap_or_default(),
        sweep: section(&table, "sweep")?,
        optimize: section(&table, "optimize")?,
        counterexample: section(&table, "counterexample")?,
    })
}

pub fn load_config(path: &Path) -> Result<SuiteConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| invalid("--config", format!("{}: {e}", path.display())))?;
    parse_config(&text)
}

/// Command-line overrides.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub seed: Option<u64>,
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub mode: String,
    pub instances: usize,
    pub verified: usize,
    pub empirical: usize,
    pub degenerate: usize,
    pub violations: usize,
    pub failures: usize,
    pub exit_code: i32,
    pub out_dir: PathBuf,
}

impl RunSummary {
    pub fn line(&self) -> String {
        format!(
            "{}: {} instances, {} verified, {} empirical, {} degenerate, {} violations, {} failures (exit {})",
            self.mode, self.instances, self.verified, self.empirical, self.degenerate, self.violations, self.failures, self.exit_code
        )
    }

    fn new(mode: &str, out_dir: &Path) -> Self {
        Self {
            mode: mode.into(),
            instances: 0,
            verified: 0,
            empirical: 0,
            degenerate: 0,
            violations: 0,
            failures: 0,
            exit_code: EXIT_OK,
            out_dir: out_dir.to_path_buf(),
        }
    }

    fn finish(mut self) -> Self {
        self.exit_code = if self.violations > 0 {
            EXIT_VIOLATION
        } else if self.failures > 0 {
            EXIT_NUMERICAL
        } else {
            EXIT_OK
        };
        self
    }
}

/// One evaluated `(case, weight, domain, p)` configuration.
#[derive(Debug, Clone)]
struct CaseSetup {
    case: InequalityCase,
    weight: Option<WeightSpec>,
    domain: CaseDomain,
    p: f64,
    dim: usize,
}

impl SuiteConfig {
    fn seed(&self, opts: &RunOptions) -> Option<u64> {
        opts.seed.or(self.seed)
    }

    fn settings(&self, opts: &RunOptions) -> Result<QuadSettings, CliError> {
        let mut s = self.quad;
        if let Some(t) = opts.tol {
            s.tol = t;
        }
        if !(s.tol > 0.0 && s.tol < 1.0) {
            return Err(invalid("quad.tol", format!("must lie in (0, 1), got {}", s.tol)));
        }
        if s.max_cells == 0 {
            return Err(invalid("quad.max_cells", "must be positive"));
        }
        Ok(s)
    }

    fn case_setup(&self, sweep: Option<(&str, f64)>) -> Result<CaseSetup, CliError> {
        let mut case = self.case.clone().ok_or_else(|| invalid("case", "missing section"))?;
        let mut weight = self.weight.clone();
        if let Some((param, value)) = sweep {
            let v = toml::Value::Float(value);
            if param == "p" {
                case.insert("p".into(), v);
            } else if let Some(k) = param.strip_prefix("case.") {
                case.insert(k.into(), v);
            } else if let Some(k) = param.strip_prefix("weight.") {
                weight.get_or_insert_with(toml::Table::new).insert(k.into(), v);
            } else {
                return Err(invalid("sweep.parameter", format!("expected p, case.<key> or weight.<key>, got {param}")));
            }
        }
        let p = match case.remove("p") {
            Some(toml::Value::Float(p)) => p,
            Some(_) => return Err(invalid("case.p", "expected a number")),
            None => return Err(invalid("case.p", "missing")),
        };
        let dim = match case.remove("dim") {
            Some(toml::Value::Integer(d)) if (2..=3).contains(&d) => d as usize,
            Some(_) => return Err(invalid("case.dim", "expected 2 or 3")),
            None => return Err(invalid("case.dim", "missing")),
        };
        let case: InequalityCase = toml::Value::Table(case).try_into().map_err(|e| invalid("case", e.to_string().trim()))?;
        let weight = match weight {
            Some(w) if case.needs_weight() => {
                let fam: WeightFamily = toml::Value::Table(w).try_into().map_err(|e| invalid("weight", e.to_string().trim()))?;
                Some(make_weight(fam, dim).map_err(|e| invalid("weight", e))?)
            }
            _ => None,
        };
        let domain = self.domain.build(dim)?;
        check_compatible(&case, weight.as_ref(), &domain, p).map_err(|e| invalid("case", e))?;
        Ok(CaseSetup { case, weight, domain, p, dim })
    }

    fn suite(&self, dim: usize, opts: &RunOptions) -> Result<(Vec<TestFunction>, Option<u64>), CliError> {
        let s = self.testfns.as_ref().ok_or_else(|| invalid("testfns", "missing section"))?;
        if s.count == 0 && s.explicit.is_empty() {
            return Err(invalid("testfns.count", "suite is empty"));
        }
        let mut out = vec![];
        let seed = s.seed.or(self.seed(opts));
        if s.count > 0 {
            let seed = seed.ok_or_else(|| invalid("testfns.seed", "a seed is required for random suites"))?;
            if s.center_lo.len() != dim || s.center_hi.len() != dim {
                return Err(invalid("testfns.center_lo", format!("center_lo and center_hi need {dim} entries")));
            }
            if s.center_lo.iter().zip(&s.center_hi).any(|(a, b)| !(a <= b)) {
                return Err(invalid("testfns.center_hi", "must be >= center_lo"));
            }
            let [r0, r1] = s.radius;
            if !(r0 > 0.0 && r0 <= r1) {
                return Err(invalid("testfns.radius", "need 0 < radius[0] <= radius[1]"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
            for _ in 0..s.count {
                let center: Vec<f64> = (0..dim).map(|i| draw(s.center_lo[i], s.center_hi[i])).collect();
                let fam = match s.family {
                    SuiteFamily::RadialBump => TestFnFamily::RadialBump { center, radius: draw(r0, r1) },
                    SuiteFamily::ProductBump => TestFnFamily::ProductBump { center, radii: (0..dim).map(|_| draw(r0, r1)).collect() },
                    SuiteFamily::Plateau => {
                        let r = draw(r0, r1);
                        TestFnFamily::Plateau { r_inner: r, r_outer: 2.0 * r, center }
                    }
                };
                out.push(make_testfn(fam).map_err(|e| invalid("testfns", e))?);
            }
        }
        for fam in &s.explicit {
            let u = make_testfn(fam.clone()).map_err(|e| invalid("testfns.explicit", e))?;
            if u.dim() != dim {
                return Err(invalid("testfns.explicit", format!("function of dimension {} in an N={dim} suite", u.dim())));
            }
            out.push(u);
        }
        Ok((out, seed))
    }

    fn out_dir(&self, opts: &RunOptions) -> PathBuf {
        opts.out.clone().or_else(|| self.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Verified,
    Empirical,
    Degenerate,
    Violation,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub index: usize,
    #[serde(default)]
    pub sweep_parameter: Option<String>,
    #[serde(default)]
    pub sweep_value: Option<f64>,
    pub testfn_index: usize,
    pub testfn: TestFunction,
    pub status: Status,
    pub report: Option<InequalityReport>,
    pub error: Option<String>,
}

fn status_of(r: &InequalityReport) -> Status {
    if r.degenerate {
        Status::Degenerate
    } else if r.margin.is_none() {
        Status::Empirical
    } else if r.verified() {
        Status::Verified
    } else {
        Status::Violation
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(value).expect("serialisable");
    write_file(path, &(s + "\n"))
}

fn timestamp_line() -> String {
    let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    format!("# generated_at_unix={secs}\n")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn family_name(u: &TestFunction) -> &'static str {
    match u.family {
        TestFnFamily::RadialBump { .. } => "radial_bump",
        TestFnFamily::ProductBump { .. } => "product_bump",
        TestFnFamily::Plateau { .. } => "plateau",
        TestFnFamily::SeparableTrial { .. } => "separable_trial",
    }
}

/// Aggregate CSV, preceded by a timestamp comment line.
pub fn write_summary_csv(path: &Path, records: &[InstanceRecord]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new().from_writer(vec![]);
    let header = [
        "index", "sweep_parameter", "sweep_value", "testfn_index", "testfn", "kind", "p", "dim", "status", "lhs", "rhs", "margin",
        "margin_tolerance", "ratio", "ratio_threshold", "error",
    ];
    w.write_record(header).expect("in-memory csv");
    for r in records {
        let rep = r.report.as_ref();
        let p = rep.and_then(|x| x.params["p"].as_f64());
        let dim = rep.and_then(|x| x.params["dim"].as_u64()).map(|d| d.to_string()).unwrap_or_default();
        let status = serde_json::to_value(&r.status).unwrap().as_str().unwrap().to_string();
        w.write_record([
            r.index.to_string(),
            r.sweep_parameter.clone().unwrap_or_default(),
            fmt_opt(r.sweep_value),
            r.testfn_index.to_string(),
            family_name(&r.testfn).to_string(),
            rep.map(|x| x.kind.clone()).unwrap_or_default(),
            fmt_opt(p),
            dim,
            status,
            fmt_opt(rep.map(|x| x.lhs_total.value)),
            fmt_opt(rep.map(|x| x.rhs_total.value)),
            fmt_opt(rep.and_then(|x| x.margin)),
            fmt_opt(rep.filter(|x| x.margin.is_some()).map(|x| x.margin_tolerance())),
            fmt_opt(rep.and_then(|x| x.ratio)),
            fmt_opt(rep.and_then(|x| x.ratio_threshold)),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory csv");
    }
    let body = String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8");
    write_file(path, &(timestamp_line() + &body))
}

fn tally(records: &[InstanceRecord], mode: &str, out: &Path) -> RunSummary {
    let mut s = RunSummary::new(mode, out);
    s.instances = records.len();
    for r in records {
        match r.status {
            Status::Verified => s.verified += 1,
            Status::Empirical => s.empirical += 1,
            Status::Degenerate => s.degenerate += 1,
            Status::Violation => s.violations += 1,
            Status::Failed => s.failures += 1,
        }
    }
    s.finish()
}

fn pool(workers: Option<usize>) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers.unwrap_or(0)).build().expect("thread pool")
}

fn prepare_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

/// Runs `mode` (or the config's own mode) and writes all report files.
pub fn run_suite(config: &SuiteConfig, mode: Option<Mode>, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let mode = match (mode, config.mode) {
        (Some(m), Some(c)) if m != c => return Err(invalid("mode", format!("config declares {c:?} but {m:?} was requested"))),
        (Some(m), _) | (None, Some(m)) => m,
        (None, None) => return Err(invalid("mode", "missing (pass a subcommand or set mode)")),
    };
    if opts.workers == Some(0) {
        return Err(invalid("--workers", "must be at least 1"));
    }
    let pool = pool(opts.workers);
    match mode {
        Mode::Verify | Mode::Sweep => pool.install(|| run_instances(config, mode, opts)),
        Mode::Optimize => pool.install(|| run_optimize(config, opts)),
        Mode::Counterexample => pool.install(|| run_counterexample(config, opts)),
    }
}

fn run_instances(config: &SuiteConfig, mode: Mode, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let settings = config.settings(opts)?;
    let axis: Vec<Option<(String, f64)>> = match (mode, &config.sweep) {
        (Mode::Sweep, Some(s)) => {
            if s.values.is_empty() || s.values.iter().any(|v| !v.is_finite()) {
                return Err(invalid("sweep.values", "need a finite, non-empty grid"));
            }
            s.values.iter().map(|v| Some((s.parameter.clone(), *v))).collect()
        }
        (Mode::Sweep, None) => return Err(invalid("sweep", "missing section")),
        _ => vec![None],
    };
    let setups: Vec<CaseSetup> =
        axis.iter().map(|a| config.case_setup(a.as_ref().map(|(k, v)| (k.as_str(), *v)))).collect::<Result<_, _>>()?;
    let (suite, seed) = config.suite(setups[0].dim, opts)?;
    let out = config.out_dir(opts);
    prepare_dir(&out)?;

    let jobs: Vec<(usize, usize, usize)> =
        (0..setups.len()).flat_map(|a| (0..suite.len()).map(move |t| (a, t))).enumerate().map(|(i, (a, t))| (i, a, t)).collect();
    let records: Vec<InstanceRecord> = jobs
        .par_iter()
        .map(|&(index, a, t)| {
            let s = &setups[a];
            let u = &suite[t];
            let (status, report, error) = match evaluate_case(&s.case, s.weight.as_ref(), &s.domain, u, s.p, &settings) {
                Ok(mut r) => {
                    r.seed = seed;
                    (status_of(&r), Some(r), None)
                }
                Err(e) => (Status::Failed, None, Some(e.to_string())),
            };
            InstanceRecord {
                index,
                sweep_parameter: axis[a].as_ref().map(|x| x.0.clone()),
                sweep_value: axis[a].as_ref().map(|x| x.1),
                testfn_index: t,
                testfn: u.clone(),
                status,
                report,
                error,
            }
        })
        .collect();

    for r in &records {
        write_json(&out.join(format!("instance_{:05}.json", r.index)), r)?;
    }
    write_summary_csv(&out.join("summary.csv"), &records)?;
    if let (Mode::Sweep, Some(s)) = (mode, &config.sweep) {
        write_sweep_curves(&out, s, &records)?;
    }
    Ok(tally(&records, if mode == Mode::Sweep { "sweep" } else { "verify" }, &out))
}

/// Two-column files: parameter value against the minimum margin and
/// minimum ratio over the suite.
fn write_sweep_curves(out: &Path, s: &SweepConfig, records: &[InstanceRecord]) -> Result<(), CliError> {
    let name = s.parameter.replace('.', "_");
    let mut margin = format!("# {} min_margin\n", s.parameter);
    let mut ratio = format!("# {} min_ratio\n", s.parameter);
    let (mut any_margin, mut any_ratio) = (false, false);
    for v in &s.values {
        let rows = records.iter().filter(|r| r.sweep_value == Some(*v)).filter_map(|r| r.report.as_ref()).filter(|r| !r.degenerate);
        let (mut m, mut q) = (f64::INFINITY, f64::INFINITY);
        for r in rows {
            if let Some(x) = r.margin {
                m = m.min(x);
            }
            if let Some(x) = r.ratio {
                q = q.min(x);
            }
        }
        if m.is_finite() {
            any_margin = true;
            margin.push_str(&format!("{v} {m}\n"));
        }
        if q.is_finite() {
            any_ratio = true;
            ratio.push_str(&format!("{v} {q}\n"));
        }
    }
    if any_margin {
        write_file(&out.join(format!("margin_vs_{name}.dat")), &margin)?;
    }
    if any_ratio {
        write_file(&out.join(format!("ratio_vs_{name}.dat")), &ratio)?;
    }
    Ok(())
}

fn run_optimize(config: &SuiteConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let oc = config.optimize.as_ref().ok_or_else(|| invalid("optimize", "missing section"))?;
    let settings = config.settings(opts)?;
    let out = config.out_dir(opts);
    let mut summary = RunSummary::new("optimize", &out);
    summary.instances = 1;
    match oc {
        OptimizeConfig::Rayleigh { budget, knots, knots_uniform, initial, cutoff_radius, constraint, reduction } => {
            let seed = config.seed(opts).ok_or_else(|| invalid("seed", "required for the randomised search"))?;
            let s = config.case_setup(None)?;
            let knots = match (knots.is_empty(), knots_uniform) {
                (false, None) => knots.clone(),
                (true, Some([a, b, c])) if *c >= 2.0 && b > a => uniform_knots(*a, *b, *c as usize),
                _ => return Err(invalid("optimize.knots", "give either knots or knots_uniform = [a, b, count]")),
            };
            let coeffs = knots.len().saturating_sub(4);
            let initial = initial.clone().unwrap_or_else(|| {
                let mut v = if *reduction == Reduction::HalfLine { vec![0.25] } else { vec![] };
                v.extend(std::iter::repeat(1.0).take(coeffs));
                v
            });
            let problem = RayleighProblem {
                case: s.case,
                weight: s.weight,
                domain: s.domain,
                p: s.p,
                trial: TrialTemplate { knots, cutoff_radius: *cutoff_radius, initial },
                constraint: *constraint,
                reduction: *reduction,
                settings,
            };
            let result = minimize_ratio(&problem, *budget, seed);
            if let Err(OptError::InvalidProblem(m)) = &result {
                return Err(invalid("optimize", m));
            }
            prepare_dir(&out)?;
            let (status, body) = match result {
                Ok(r) => {
                    summary.empirical = 1;
                    ("ok", serde_json::json!({ "problem": problem, "seed": seed, "budget": budget, "result": r }))
                }
                Err(e @ OptError::BoundViolation { .. }) => {
                    summary.violations = 1;
                    ("bound_violation", serde_json::json!({ "problem": problem, "seed": seed, "error": e.to_string(), "detail": format!("{e:?}") }))
                }
                Err(e) => {
                    summary.failures = 1;
                    ("failed", serde_json::json!({ "problem": problem, "seed": seed, "error": e.to_string() }))
                }
            };
            let mut body = body;
            body["status"] = serde_json::Value::from(status);
            write_json(&out.join("optimize.json"), &body)?;
        }
        OptimizeConfig::Eigen { left, right, bc, length, elements, grid } => {
            let w = Weight1d { left: *left, right: *right };
            let grid = grid.unwrap_or_else(|| Grid::default_for(*bc));
            prepare_dir(&out)?;
            match eig_best_constant_1d(&w, *bc, *length, *elements, grid) {
                Ok(r) => {
                    summary.empirical = 1;
                    let body = serde_json::json!({
                        "weight": w, "bc": bc, "length": length, "elements": elements, "grid": grid,
                        "lambda_min": r.lambda_min,
                    });
                    write_json(&out.join("eigen.json"), &body)?;
                    let mut dat = String::from("# t u\n");
                    for (t, v) in r.nodes.iter().zip(&r.eigvector) {
                        dat.push_str(&format!("{t} {v}\n"));
                    }
                    write_file(&out.join("eigenvector.dat"), &dat)?;
                }
                Err(e) => {
                    summary.failures = 1;
                    write_json(&out.join("eigen.json"), &serde_json::json!({ "error": e.to_string() }))?;
                }
            }
        }
        OptimizeConfig::Pareto { a_grid } => {
            let s = config.case_setup(None)?;
            if !matches!(s.case, InequalityCase::HardyII) {
                return Err(invalid("case.kind", "pareto needs hardy_ii"));
            }
            if a_grid.is_empty() || a_grid.windows(2).any(|w| !(w[1] > w[0])) || a_grid.iter().any(|a| !(*a >= 0.0)) {
                return Err(invalid("optimize.a_grid", "must be non-empty, nonnegative and increasing"));
            }
            let (suite, seed) = config.suite(s.dim, opts)?;
            prepare_dir(&out)?;
            match ab_pareto(&s.case, s.weight.as_ref(), &s.domain, s.p, a_grid, &suite, &settings) {
                Ok(points) => {
                    summary.empirical = 1;
                    let mut w = csv::Writer::from_writer(vec![]);
                    w.write_record(["A", "B_min", "flag"]).expect("in-memory csv");
                    for pt in &points {
                        let flag = match pt.flag {
                            ParetoFlag::Bounded => "bounded",
                            ParetoFlag::Unbounded => "unbounded",
                        };
                        w.write_record([pt.a.to_string(), pt.b_min.map_or("inf".into(), |b| b.to_string()), flag.into()])
                            .expect("in-memory csv");
                    }
                    let body = String::from_utf8(w.into_inner().expect("csv")).expect("utf8");
                    write_file(&out.join("pareto.csv"), &(timestamp_line() + &body))?;
                    write_json(&out.join("pareto.json"), &serde_json::json!({ "seed": seed, "points": points }))?;
                }
                Err(e) => {
                    summary.failures = 1;
                    write_json(&out.join("pareto.json"), &serde_json::json!({ "error": e.to_string() }))?;
                }
            }
        }
    }
    Ok(summary.finish())
}

fn run_counterexample(config: &SuiteConfig, opts: &RunOptions) -> Result<RunSummary, CliError> {
    let c = config.counterexample.as_ref().ok_or_else(|| invalid("counterexample", "missing section"))?;
    if !(c.p > 1.0) {
        return Err(invalid("counterexample.p", "must exceed 1"));
    }
    if !(2..=3).contains(&c.dim) {
        return Err(invalid("counterexample.dim", "must be 2 or 3"));
    }
    let u = make_testfn(TestFnFamily::Plateau { r_inner: c.r_inner, r_outer: c.r_outer, center: vec![0.0; c.dim] })
        .map_err(|e| invalid("counterexample", e))?;
    let eps = c.eps.clone().unwrap_or_else(default_eps);
    if eps.len() < 5 || eps.windows(2).any(|w| !(w[1] < w[0])) || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("counterexample.eps", "need >= 5 positive, strictly decreasing values"));
    }
    let out = config.out_dir(opts);
    prepare_dir(&out)?;
    let mut summary = RunSummary::new("counterexample", &out);
    summary.instances = 1;
    let regime = classify_singular(c.gamma, c.p);
    match divergence_scan(c.gamma, c.p, &u, &eps) {
        Ok(r) => {
            let consistent = matches!(
                (&r.classification, regime),
                (Classification::ConvergesTo { .. }, SingularRegime::InequalityHolds)
                    | (Classification::PowerDivergence { .. } | Classification::LogDivergence, SingularRegime::FailsByDivergence)
            );
            let mut csv = String::from("eps,integral\n");
            for (e, v) in r.eps_values.iter().zip(&r.integrals) {
                csv.push_str(&format!("{e},{v}\n"));
            }
            write_file(&out.join("counterexample.csv"), &csv)?;
            write_json(
                &out.join("counterexample.json"),
                &serde_json::json!({
                    "report": r,
                    "regime": regime,
                    "predicted_exponent": predicted_exponent(c.gamma, c.p),
                    "consistent": consistent,
                }),
            )?;
            if consistent {
                summary.empirical = 1;
            } else {
                summary.failures = 1;
            }
        }
        Err(e) => {
            summary.failures = 1;
            write_json(&out.join("counterexample.json"), &serde_json::json!({ "error": e.to_string(), "regime": regime }))?;
        }
    }
    Ok(summary.finish())
}

/// Re-reads `instance_*.json` under `dir` and rewrites the aggregate CSV.
pub fn rebuild_report(dir: &Path) -> Result<RunSummary, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("instance_") && n.ends_with(".json")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(invalid("--out", format!("no instance reports in {}", dir.display())));
    }
    let mut records = vec![];
    for f in &files {
        let text = fs::read_to_string(f).map_err(io_err(f))?;
        let r: InstanceRecord = serde_json::from_str(&text).map_err(|e| invalid("--out", format!("{}: {e}", f.display())))?;
        records.push(r);
    }
    write_summary_csv(&dir.join("summary.csv"), &records)?;
    Ok(tally(&records, "report", dir))
}

/// Writes `text` to stdout, ignoring a closed pipe.
pub fn print_line(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}
