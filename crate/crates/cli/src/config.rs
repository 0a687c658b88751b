//! Scenario files: TOML with a required `schema_version`; unknown keys are
//! rejected.

use std::path::{Path, PathBuf};

use bsde_game::{
    build_lattice, dual_driver, AdaptedField, Coefficient, DefaultLattice, DefaultTag, Driver, MarketParams,
    NuGrid,
};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub market: MarketConfig,
    pub payoff: PayoffConfig,
    #[serde(default)]
    pub driver: DriverConfig,
    pub n_steps: usize,
    /// Control levels; the default 8-point grid when absent.
    #[serde(default)]
    pub nu_grid: Option<Vec<f64>>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_path_budget")]
    pub path_budget: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub formats: Format,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub study: StudyConfig,
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_path_budget() -> usize {
    100_000
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A coefficient given as one number or one value per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CoefficientConfig {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl CoefficientConfig {
    fn to_coefficient(&self) -> Coefficient<f64> {
        match self {
            CoefficientConfig::Constant(v) => Coefficient::Constant(*v),
            CoefficientConfig::PerStep(vs) => Coefficient::PerStep(vs.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketConfig {
    pub r: CoefficientConfig,
    pub mu: CoefficientConfig,
    pub sigma: CoefficientConfig,
    pub beta: CoefficientConfig,
    pub lambda0: CoefficientConfig,
    pub horizon: f64,
    pub s0: f64,
}

impl MarketConfig {
    pub fn params(&self) -> MarketParams<f64> {
        MarketParams {
            r: self.r.to_coefficient(),
            mu: self.mu.to_coefficient(),
            sigma: self.sigma.to_coefficient(),
            beta: self.beta.to_coefficient(),
            lambda0: self.lambda0.to_coefficient(),
            horizon: self.horizon,
            s0: self.s0,
        }
    }
}

/// One entry of a custom payoff table. `d` is the default step (0 while
/// alive); `jd`, the Brownian position at default, narrows a defaulted entry
/// to one node and matches every such node when omitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub k: usize,
    pub j: i64,
    #[serde(default)]
    pub d: usize,
    #[serde(default)]
    pub jd: Option<i64>,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    Put {
        strike: f64,
    },
    Call {
        strike: f64,
    },
    Constant {
        value: f64,
    },
    Table {
        entries: Vec<TableEntry>,
        /// Value at nodes no entry matches.
        #[serde(default)]
        fallback: f64,
    },
}

impl PayoffConfig {
    pub fn obstacle(&self, lattice: &DefaultLattice<f64>) -> Result<AdaptedField<f64>, CliError> {
        let field = match self {
            PayoffConfig::Put { strike } => AdaptedField::put(lattice, *strike),
            PayoffConfig::Call { strike } => AdaptedField::call(lattice, *strike),
            PayoffConfig::Constant { value } => AdaptedField::constant(lattice, *value),
            PayoffConfig::Table { entries, fallback } => {
                let mut field = AdaptedField::constant(lattice, *fallback);
                let mut matched = vec![false; entries.len()];
                for id in lattice.node_ids() {
                    let st = lattice.state(id);
                    let (d, jd) = match st.tag {
                        DefaultTag::Alive => (0, None),
                        DefaultTag::DefaultedAt { step, j } => (step, Some(j)),
                    };
                    // later entries override earlier ones
                    for (i, e) in entries.iter().enumerate() {
                        if e.k == st.step && e.j == st.j && e.d == d && (e.jd.is_none() || e.jd == jd) {
                            field[id] = e.value;
                            matched[i] = true;
                        }
                    }
                }
                if let Some(i) = matched.iter().position(|m| !m) {
                    let e = &entries[i];
                    return Err(CliError::invalid(
                        format!("payoff.entries[{i}]"),
                        format!("no lattice node has k = {}, j = {}, d = {}, jd = {:?}", e.k, e.j, e.d, e.jd),
                    ));
                }
                field
            }
        };
        if let Some(i) = field.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(CliError::invalid("payoff", format!("non-finite payoff at node {i}")));
        }
        Ok(field)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverConfig {
    #[default]
    Linear,
    TwoRate {
        borrow_rate: f64,
    },
    Zero,
}

impl DriverConfig {
    /// The wealth driver `f`.
    pub fn wealth(&self, params: &MarketParams<f64>) -> Result<Driver<f64>, CliError> {
        Ok(match self {
            DriverConfig::Linear => Driver::linear_wealth(params),
            DriverConfig::TwoRate { borrow_rate } => Driver::two_rate(params, *borrow_rate)?,
            DriverConfig::Zero => Driver::zero(),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriverConfig::Linear => "linear",
            DriverConfig::TwoRate { .. } => "two_rate",
            DriverConfig::Zero => "zero",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Json,
    Csv,
    #[default]
    Both,
}

impl Format {
    pub fn json(self) -> bool {
        matches!(self, Format::Json | Format::Both)
    }

    pub fn csv(self) -> bool {
        matches!(self, Format::Csv | Format::Both)
    }
}

/// Which checks run and decide the exit code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChecksConfig {
    pub constraints: bool,
    pub submartingale: bool,
    pub submartingale_windows: usize,
    pub superhedge: bool,
    pub interchange: bool,
    /// Complete-market oracle; runs only when the market has no default.
    pub oracle: bool,
}

impl Default for ChecksConfig {
    fn default() -> Self {
        Self {
            constraints: true,
            submartingale: true,
            submartingale_windows: 20,
            superhedge: true,
            interchange: true,
            oracle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    /// Step counts, ascending.
    pub levels: Vec<usize>,
    /// Control grids; each must contain 0.
    pub grids: Vec<Vec<f64>>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            levels: vec![25, 50, 100],
            grids: vec![vec![0.0], NuGrid::<f64>::default().levels().to_vec()],
        }
    }
}

/// Validated pieces of a scenario, ready to solve.
pub struct Prepared {
    pub lattice: DefaultLattice<f64>,
    pub obstacle: AdaptedField<f64>,
    pub f: Driver<f64>,
    pub fbar: Driver<f64>,
    pub grid: NuGrid<f64>,
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| CliError::invalid("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    /// Checks everything that can be checked without building the lattice.
    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::invalid(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, found {}", self.schema_version),
            ));
        }
        if self.n_steps == 0 {
            return Err(CliError::invalid("n_steps", "must be at least 1"));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(CliError::invalid("epsilon", "must be finite and nonnegative"));
        }
        if self.path_budget == 0 {
            return Err(CliError::invalid("path_budget", "must be at least 1"));
        }
        if let Some(levels) = &self.nu_grid {
            NuGrid::new(levels.clone()).map_err(|e| CliError::invalid("nu_grid", e.to_string()))?;
        }
        if self.study.levels.is_empty() || self.study.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::invalid("study.levels", "must be nonempty and strictly ascending"));
        }
        for (i, g) in self.study.grids.iter().enumerate() {
            NuGrid::new(g.clone()).map_err(|e| CliError::invalid(format!("study.grids[{i}]"), e.to_string()))?;
        }
        if let DriverConfig::TwoRate { borrow_rate } = self.driver {
            if !borrow_rate.is_finite() {
                return Err(CliError::invalid("driver.borrow_rate", "must be finite"));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> NuGrid<f64> {
        match &self.nu_grid {
            Some(levels) => NuGrid::new(levels.clone()).expect("validated"),
            None => NuGrid::default(),
        }
    }

    /// Builds the lattice with `n_steps` and the payoff and drivers on it.
    pub fn prepare(&self, n_steps: usize) -> Result<Prepared, CliError> {
        let lattice = build_lattice(self.market.params(), n_steps)?;
        let obstacle = self.payoff.obstacle(&lattice)?;
        let f = self.driver.wealth(lattice.params())?;
        let fbar = dual_driver(&f);
        Ok(Prepared {
            lattice,
            obstacle,
            f,
            fbar,
            grid: self.grid(),
        })
    }
}

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub steps: Option<usize>,
    pub nu_grid: Option<Vec<f64>>,
    pub epsilon: Option<f64>,
    pub paths: Option<usize>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ScenarioConfig) -> Result<(), CliError> {
        if let Some(n) = self.steps {
            cfg.n_steps = n;
        }
        if let Some(g) = &self.nu_grid {
            cfg.nu_grid = Some(g.clone());
        }
        if let Some(e) = self.epsilon {
            cfg.epsilon = e;
        }
        if let Some(p) = self.paths {
            cfg.path_budget = p;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        if let Some(f) = self.format {
            cfg.formats = f;
        }
        cfg.validate()
    }
}

/// Parses `--nu-grid` values such as `-0.95,0,1`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, CliError> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::invalid("--nu-grid", format!("`{s}`: {e}")))
        })
        .collect()
}
