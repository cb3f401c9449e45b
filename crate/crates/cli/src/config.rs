//! Run configuration: a JSON document, patched by `--key=value` overrides,
//! then deserialized and validated before any work starts.

use std::path::PathBuf;

use serde::{Deserialize, Deserializer};
use serde_json::{Map, Value};

use neumann_ocp::analysis::{MuSpec, StudyConfig};
use neumann_ocp::assembly::AssemblyOptions;
use neumann_ocp::coeffs::make_example;
use neumann_ocp::domain::PolygonDomain;
use neumann_ocp::mesh::GradingSpec;
use neumann_ocp::ocp::{Bounds, OcpOptions};
use neumann_ocp::solver::LinearSolveConfig;
use neumann_ocp::Point;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Mesh,
    SolveBvp,
    SolveOcp,
    Study,
    CheckCoercivity,
}

impl Command {
    /// Levels used when the configuration does not name any.
    pub fn default_levels(self) -> LevelRange {
        match self {
            Command::Mesh => LevelRange { min: 1, max: 5 },
            Command::SolveBvp | Command::SolveOcp => LevelRange { min: 5, max: 5 },
            Command::Study => LevelRange { min: 1, max: 7 },
            Command::CheckCoercivity => LevelRange { min: 4, max: 4 },
        }
    }

    /// Whether the command needs the manufactured L-shape solution.
    fn needs_example(self) -> bool {
        matches!(self, Command::SolveBvp | Command::SolveOcp | Command::Study)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelRange {
    pub min: usize,
    pub max: usize,
}

impl LevelRange {
    pub fn parse(s: &str) -> Result<Self, String> {
        let num = |t: &str| t.trim().parse::<usize>().map_err(|_| format!("bad level '{t}' in '{s}'"));
        match s.split_once("..") {
            Some((a, b)) => Ok(LevelRange { min: num(a)?, max: num(b.trim_start_matches('='))? }),
            None => {
                let l = num(s)?;
                Ok(LevelRange { min: l, max: l })
            }
        }
    }
}

impl<'de> Deserialize<'de> for LevelRange {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            One(usize),
            Pair([usize; 2]),
            Obj { min: usize, max: usize },
            Text(String),
        }
        Ok(match Repr::deserialize(d)? {
            Repr::One(l) => LevelRange { min: l, max: l },
            Repr::Pair([min, max]) | Repr::Obj { min, max } => LevelRange { min, max },
            Repr::Text(s) => LevelRange::parse(&s).map_err(serde::de::Error::custom)?,
        })
    }
}

/// A real number given as JSON number or decimal string; `"inf"` and
/// `"-inf"` are accepted.
#[derive(Deserialize)]
#[serde(untagged)]
enum Num {
    Value(f64),
    Text(String),
}

impl Num {
    fn get<E: serde::de::Error>(self) -> Result<f64, E> {
        match self {
            Num::Value(v) => Ok(v),
            Num::Text(s) => s.trim().parse().map_err(|_| E::custom(format!("'{s}' is not a number"))),
        }
    }
}

fn num<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    Num::deserialize(d)?.get()
}

fn opt_num<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
    Option::<Num>::deserialize(d)?.map(Num::get).transpose()
}

fn mu_spec<'de, D: Deserializer<'de>>(d: D) -> Result<MuSpec, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        One(f64),
        List(Vec<Num>),
        Text(String),
    }
    let parse = |s: &str| -> Result<f64, D::Error> {
        s.trim().parse().map_err(|_| serde::de::Error::custom(format!("bad grading parameter '{s}'")))
    };
    match Repr::deserialize(d)? {
        Repr::One(v) => Ok(MuSpec::Singular(v)),
        Repr::List(l) => Ok(MuSpec::PerCorner(l.into_iter().map(Num::get).collect::<Result<_, _>>()?)),
        Repr::Text(s) if s.contains(',') => Ok(MuSpec::PerCorner(s.split(',').map(parse).collect::<Result<_, _>>()?)),
        Repr::Text(s) => Ok(MuSpec::Singular(parse(&s)?)),
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DomainSpec {
    Preset(String),
    Vertices(Vec<[f64; 2]>),
}

impl Default for DomainSpec {
    fn default() -> Self {
        DomainSpec::Preset("lshape".into())
    }
}

impl DomainSpec {
    pub fn build(&self) -> neumann_ocp::Result<PolygonDomain> {
        match self {
            DomainSpec::Preset(name) => PolygonDomain::preset(name),
            DomainSpec::Vertices(v) => PolygonDomain::new(v.iter().map(|&[x, y]| Point::new(x, y)).collect()),
        }
    }

    fn is_lshape(&self) -> bool {
        matches!(self, DomainSpec::Preset(n) if n == "lshape" || n == "l-shape")
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradingConfig {
    #[serde(deserialize_with = "num")]
    pub radius: f64,
    #[serde(deserialize_with = "num")]
    pub c_g: f64,
    /// Coarse mesh size; half the coarse element diameter when absent.
    #[serde(deserialize_with = "opt_num")]
    pub h0: Option<f64>,
}

impl Default for GradingConfig {
    fn default() -> Self {
        GradingConfig { radius: 0.5, c_g: 1.0, h0: None }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    /// Takes precedence over the top-level `nu`.
    #[serde(deserialize_with = "opt_num")]
    pub nu: Option<f64>,
    #[serde(deserialize_with = "num")]
    pub u_min: f64,
    #[serde(deserialize_with = "num")]
    pub u_max: f64,
    #[serde(deserialize_with = "num")]
    pub opt_tol: f64,
    /// Conjugate-gradient iterations of the unconstrained solve.
    pub max_iter: usize,
    pub active_set_max_iter: usize,
    pub gradient_max_iter: usize,
}

impl Default for OcpConfig {
    fn default() -> Self {
        let o = OcpOptions::default();
        OcpConfig {
            nu: None,
            u_min: f64::NEG_INFINITY,
            u_max: f64::INFINITY,
            opt_tol: o.opt_tol,
            max_iter: o.cg_max_iter,
            active_set_max_iter: o.active_set_max_iter,
            gradient_max_iter: o.gradient_max_iter,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoercivityConfig {
    /// Constant reaction coefficient replacing the example's `r^alpha`.
    #[serde(deserialize_with = "opt_num")]
    pub a0: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Allowed deviation of the final EOCs from the expected orders, per
    /// column; chosen from the grading when absent.
    pub assert_tol: Option<[f64; 5]>,
    /// Level pairs averaged for the final EOC row.
    pub final_pairs: usize,
    pub parallel: bool,
}

impl Default for StudySection {
    fn default() -> Self {
        StudySection { assert_tol: None, final_pairs: 2, parallel: true }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: Option<Command>,
    pub domain: DomainSpec,
    #[serde(deserialize_with = "mu_spec")]
    pub mu: MuSpec,
    pub levels: Option<LevelRange>,
    #[serde(deserialize_with = "num")]
    pub delta: f64,
    #[serde(deserialize_with = "num")]
    pub alpha: f64,
    #[serde(deserialize_with = "num")]
    pub nu: f64,
    pub grading: GradingConfig,
    pub quadrature: AssemblyOptions,
    pub solver: LinearSolveConfig,
    pub ocp: OcpConfig,
    pub coercivity: CoercivityConfig,
    pub study: StudySection,
    pub out: Option<PathBuf>,
    pub quiet: bool,
    pub assert: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let s = StudyConfig::default();
        RunConfig {
            command: None,
            domain: DomainSpec::default(),
            mu: s.mu,
            levels: None,
            delta: s.delta,
            alpha: s.alpha,
            nu: s.nu,
            grading: GradingConfig::default(),
            quadrature: s.assembly,
            solver: s.solver,
            ocp: OcpConfig::default(),
            coercivity: CoercivityConfig::default(),
            study: StudySection::default(),
            out: None,
            quiet: false,
            assert: false,
        }
    }
}

/// Sets `key` (dotted path, `-` read as `_`) in `root` to `raw`, parsed as
/// JSON when possible and kept as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), CliError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let parts: Vec<String> = key.split('.').map(|p| p.replace('-', "_")).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("malformed key '{key}'")));
    }
    let mut node = root;
    for p in &parts[..parts.len() - 1] {
        if !node.is_object() {
            return Err(CliError::Config(format!("key '{key}' descends into a non-object")));
        }
        node = node
            .as_object_mut()
            .unwrap()
            .entry(p.clone())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    match node.as_object_mut() {
        Some(obj) => {
            obj.insert(parts[parts.len() - 1].clone(), value);
            Ok(())
        }
        None => Err(CliError::Config(format!("key '{key}' descends into a non-object"))),
    }
}

impl RunConfig {
    pub fn from_value(v: Value) -> Result<Self, CliError> {
        serde_json::from_value(v).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn levels_for(&self, cmd: Command) -> LevelRange {
        self.levels.unwrap_or_else(|| cmd.default_levels())
    }

    pub fn effective_nu(&self) -> f64 {
        self.ocp.nu.unwrap_or(self.nu)
    }

    /// The domain with the grading parameters applied.
    pub fn domain(&self) -> Result<PolygonDomain, CliError> {
        let mut d = self.domain.build()?;
        self.mu.apply(&mut d)?;
        Ok(d)
    }

    pub fn grading(&self, domain: &PolygonDomain) -> GradingSpec {
        let mut g = GradingSpec::from_domain(domain);
        g.radius = vec![self.grading.radius; g.mu.len()];
        g.c_g = self.grading.c_g;
        g.h0 = self.grading.h0;
        g
    }

    pub fn study_config(&self, cmd: Command) -> StudyConfig {
        let levels = self.levels_for(cmd);
        StudyConfig {
            mu: self.mu.clone(),
            level_min: levels.min,
            level_max: levels.max,
            delta: self.delta,
            alpha: self.alpha,
            nu: self.effective_nu(),
            bounds: Bounds { u_min: self.ocp.u_min, u_max: self.ocp.u_max },
            grading_radius: self.grading.radius,
            c_g: self.grading.c_g,
            h0: self.grading.h0,
            assembly: self.quadrature,
            solver: self.solver,
            ocp: OcpOptions {
                opt_tol: self.ocp.opt_tol,
                cg_max_iter: self.ocp.max_iter,
                active_set_max_iter: self.ocp.active_set_max_iter,
                gradient_max_iter: self.ocp.gradient_max_iter,
            },
            parallel_levels: self.study.parallel,
        }
    }

    /// Checks everything `cmd` will use.
    pub fn validate(&self, cmd: Command) -> Result<(), CliError> {
        let levels = self.levels_for(cmd);
        if levels.min < 1 || levels.max < levels.min {
            return Err(CliError::Config(format!(
                "levels {}..{} must satisfy 1 <= min <= max",
                levels.min, levels.max
            )));
        }
        if levels.max > 12 {
            return Err(CliError::Config(format!("level {} is beyond the supported 12", levels.max)));
        }
        let domain = self.domain()?;
        self.grading(&domain).validate(domain.num_sides())?;
        make_example(self.delta, self.alpha, self.effective_nu())?;
        if let Some(a0) = self.coercivity.a0 {
            if !a0.is_finite() {
                return Err(CliError::Config(format!("coercivity.a0 = {a0} is not finite")));
            }
        }
        if self.study.final_pairs == 0 {
            return Err(CliError::Config("study.final_pairs must be at least 1".into()));
        }
        if cmd.needs_example() {
            if !self.domain.is_lshape() {
                return Err(CliError::Config(format!(
                    "{cmd:?} uses the manufactured L-shape solution; domain must be \"lshape\""
                )));
            }
            self.study_config(cmd).validate()?;
        }
        Ok(())
    }
}
