//! Solve, decompose, check and hedge one scenario, then write the report files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use bsde_game::{
    check_constraints, check_submartingale, controlled_driver, epsilon_stop, hedge_strategy, lower_value,
    solve_buyer_price, verify_superhedge, Coefficient, ConstraintReport, ControlProcess, DefaultTag, GameSolution,
    HedgeReport, LatticeSummary, PathMode, Window,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{DriverConfig, PayoffConfig, Prepared, ScenarioConfig};
use crate::error::CliError;
use crate::oracle::crr_american;

/// Submartingale residual tolerance.
pub const SUBMARTINGALE_TOL: f64 = 1e-9;
/// Hedge slack tolerance on top of `-epsilon`.
pub const SLACK_TOL: f64 = 1e-9;
/// Relative tolerance of the complete-market oracle.
pub const ORACLE_TOL: f64 = 1e-12;
/// Round-off allowance for the sign of the interchange gap.
pub const GAP_TOL: f64 = 1e-12;

/// Writes a float with 17 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// JSON cannot carry infinities or NaN; those become `null`.
fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub enabled: bool,
    pub passed: bool,
    pub value: Option<f64>,
    pub threshold: Option<f64>,
    pub detail: String,
}

impl CheckOutcome {
    fn disabled(name: &str, detail: &str) -> Self {
        Self {
            name: name.into(),
            enabled: false,
            passed: true,
            value: None,
            threshold: None,
            detail: detail.into(),
        }
    }

    fn new(name: &str, passed: bool, value: f64, threshold: f64, detail: String) -> Self {
        Self {
            name: name.into(),
            enabled: true,
            passed,
            value: finite(value),
            threshold: finite(threshold),
            detail,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeRecord {
    pub n_steps: usize,
    pub dt: f64,
    pub nodes: usize,
    pub alive_nodes: usize,
    pub defaulted_nodes: usize,
    pub branches: usize,
    pub max_probability_error: f64,
    pub max_martingale_error: f64,
}

impl From<LatticeSummary<f64>> for LatticeRecord {
    fn from(s: LatticeSummary<f64>) -> Self {
        Self {
            n_steps: s.n_steps,
            dt: 0.0,
            nodes: s.nodes,
            alive_nodes: s.alive_nodes,
            defaulted_nodes: s.defaulted_nodes,
            branches: s.branches,
            max_probability_error: s.max_probability_error,
            max_martingale_error: s.max_martingale_error,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintRecord {
    pub skorokhod_a: f64,
    pub skorokhod_kbar: f64,
    pub singular_a: f64,
    pub singular_kbar: f64,
    pub cond1_min: Option<f64>,
    pub measconst_min: Option<f64>,
    pub max_off_obstacle_residual: f64,
    pub predictable_kbar_jumps: usize,
    pub reconstruction_error: f64,
    pub min_increment: f64,
    pub nodes_above_obstacle: usize,
    /// `10 C dt` with `C` the Lipschitz constant of the dual driver.
    pub tolerance: f64,
}

impl ConstraintRecord {
    fn new(r: &ConstraintReport<f64>, tolerance: f64) -> Self {
        Self {
            skorokhod_a: r.skorokhod_a,
            skorokhod_kbar: r.skorokhod_kbar,
            singular_a: r.singular_a,
            singular_kbar: r.singular_kbar,
            cond1_min: finite(r.cond1_min),
            measconst_min: finite(r.measconst_min),
            max_off_obstacle_residual: r.max_off_obstacle_residual,
            predictable_kbar_jumps: r.predictable_kbar_jumps,
            reconstruction_error: r.reconstruction_error,
            min_increment: r.min_increment,
            nodes_above_obstacle: r.nodes_above_obstacle,
            tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HedgeSummary {
    pub initial_capital: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub mode: String,
    pub paths: usize,
    pub min_slack: f64,
    pub mean_slack: f64,
    pub min_dominance: f64,
    pub warning: Option<String>,
}

impl HedgeSummary {
    fn new(r: &HedgeReport<f64>, seed: u64) -> Self {
        Self {
            initial_capital: r.initial_capital,
            epsilon: r.epsilon,
            seed,
            mode: match r.mode {
                PathMode::Exhaustive => "exhaustive".into(),
                PathMode::Sampled { .. } => "sampled".into(),
            },
            paths: r.path_count(),
            min_slack: r.min_slack,
            mean_slack: r.mean_slack,
            min_dominance: r.min_dominance,
            warning: r.warning.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRecord {
    pub crr_value: f64,
    pub abs_error: f64,
    pub matched: bool,
}

/// Everything in `summary.json`. Holds no timestamps or paths so reruns
/// are byte-identical.
#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub schema_version: u32,
    pub driver: String,
    pub nu_grid: Vec<f64>,
    pub epsilon: f64,
    pub seed: u64,
    pub lattice: LatticeRecord,
    pub y0: f64,
    pub lower_value: f64,
    pub interchange_gap: f64,
    /// `epsilon (1 - C dt)^-n`, valid when `min_scheme_weight >= 0`.
    pub interchange_bound: f64,
    pub lipschitz: f64,
    pub augmented_lipschitz: f64,
    pub min_scheme_weight: f64,
    pub boundary_nodes: usize,
    pub constraints: ConstraintRecord,
    pub submartingale_min: Option<f64>,
    pub hedge: Option<HedgeSummary>,
    pub oracle: Option<OracleRecord>,
    pub checks: Vec<CheckOutcome>,
    pub all_passed: bool,
}

/// Result of [`run_scenario`]: the summary, the paths written and the solution.
pub struct Outcome {
    pub summary: Summary,
    pub files: Vec<PathBuf>,
    pub solution: GameSolution<f64>,
}

impl Outcome {
    /// 0 iff every enabled check passed.
    pub fn exit_code(&self) -> i32 {
        if self.summary.all_passed {
            0
        } else {
            1
        }
    }
}

/// Value of a constant-coefficient default-free put or call by the
/// independent binomial induction, when the scenario qualifies.
fn oracle_value(cfg: &ScenarioConfig, prep: &Prepared) -> Option<f64> {
    let p = prep.lattice.params();
    let constant = |c: &Coefficient<f64>| match c {
        Coefficient::Constant(v) => Some(*v),
        Coefficient::PerStep(_) => None,
    };
    if !p.default_free() || cfg.driver != DriverConfig::Linear {
        return None;
    }
    let (r, mu, sigma) = (constant(&p.r)?, constant(&p.mu)?, constant(&p.sigma)?);
    let n = prep.lattice.n_steps();
    match cfg.payoff {
        PayoffConfig::Put { strike } => Some(crr_american(r, mu, sigma, p.s0, p.horizon, n, |s| (strike - s).max(0.0))),
        PayoffConfig::Call { strike } => Some(crr_american(r, mu, sigma, p.s0, p.horizon, n, |s| (s - strike).max(0.0))),
        _ => None,
    }
}

/// Runs the full pipeline and writes the report files into `cfg.output_dir`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<Outcome, CliError> {
    cfg.validate()?;
    let prep = cfg.prepare(cfg.n_steps)?;
    let Prepared {
        lattice,
        obstacle,
        f,
        fbar,
        grid,
    } = &prep;
    let dt = lattice.dt();
    let n = lattice.n_steps();

    let sol = solve_buyer_price(lattice, fbar, obstacle, grid)?;
    let y0 = sol.root_value();
    let report = check_constraints(&sol, lattice, fbar);
    let c = fbar.lipschitz();
    let tolerance = 10.0 * c * dt;
    let scheme_weight = grid.min_scheme_weight(lattice, c);

    let tau = epsilon_stop(&sol, lattice, cfg.epsilon);
    let lower = lower_value(lattice, fbar, grid, &tau, obstacle)?;
    let gap = y0 - lower;
    let bound = cfg.epsilon * (1.0 - c * dt).powi(-(n as i32));

    let mut checks = Vec::new();
    checks.push(if cfg.checks.constraints {
        let exact = report.exact_identities_hold();
        let ineq = report.inequalities_hold(tolerance);
        let worst = report.cond1_min.min(report.measconst_min);
        CheckOutcome::new(
            "constraints",
            exact && ineq,
            worst,
            -tolerance,
            format!(
                "skorokhod A {:e}, skorokhod kbar {:e}, singular A {:e}, singular kbar {:e}, min increment {:e}",
                report.skorokhod_a, report.skorokhod_kbar, report.singular_a, report.singular_kbar, report.min_increment
            ),
        )
    } else {
        CheckOutcome::disabled("constraints", "disabled")
    });

    let mut submartingale_min = None;
    checks.push(if cfg.checks.submartingale {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let windows: Vec<Window> = (0..cfg.checks.submartingale_windows)
            .map(|_| Window::random(lattice, 0.3, 0.5, &mut rng))
            .collect();
        let mut worst = f64::INFINITY;
        for nu in grid.levels() {
            let g = controlled_driver(fbar, &ControlProcess::constant(*nu), lattice.params())?;
            let rep = check_submartingale(lattice, &sol.ybar, &g, obstacle, &windows)?;
            worst = worst.min(rep.min_at_s).min(rep.min_all_nodes);
        }
        submartingale_min = finite(worst);
        CheckOutcome::new(
            "submartingale",
            worst >= -SUBMARTINGALE_TOL,
            worst,
            -SUBMARTINGALE_TOL,
            format!("{} controls x {} windows", grid.len(), windows.len()),
        )
    } else {
        CheckOutcome::disabled("submartingale", "disabled")
    });

    let hedge = if cfg.checks.superhedge {
        Some(verify_superhedge(lattice, &sol, cfg.epsilon, f, cfg.path_budget, cfg.seed)?)
    } else {
        None
    };
    checks.push(match &hedge {
        Some(h) => CheckOutcome::new(
            "superhedge",
            h.passes(SLACK_TOL),
            h.min_slack,
            -cfg.epsilon - SLACK_TOL,
            format!("{} paths", h.path_count()),
        ),
        None => CheckOutcome::disabled("superhedge", "disabled"),
    });

    checks.push(if cfg.checks.interchange {
        CheckOutcome::new(
            "interchange",
            gap >= -GAP_TOL && gap <= bound,
            gap,
            bound,
            format!("gap in [0, eps (1 - C dt)^-n]; min scheme weight {scheme_weight:e}"),
        )
    } else {
        CheckOutcome::disabled("interchange", "disabled")
    });

    let oracle = if cfg.checks.oracle {
        oracle_value(cfg, &prep).map(|v| {
            let err = (y0 - v).abs();
            OracleRecord {
                crr_value: v,
                abs_error: err,
                matched: err <= ORACLE_TOL * v.abs().max(1.0),
            }
        })
    } else {
        None
    };
    checks.push(match &oracle {
        Some(o) => CheckOutcome::new(
            "oracle",
            o.matched,
            o.abs_error,
            ORACLE_TOL * o.crr_value.abs().max(1.0),
            "binomial American option".into(),
        ),
        None if cfg.checks.oracle => CheckOutcome::disabled("oracle", "not applicable to this market or payoff"),
        None => CheckOutcome::disabled("oracle", "disabled"),
    });

    let all_passed = checks.iter().all(|c| c.passed);
    let boundary = tau.stopping_nodes(lattice);
    let mut lattice_record = LatticeRecord::from(lattice.summary());
    lattice_record.dt = dt;
    let summary = Summary {
        schema_version: cfg.schema_version,
        driver: cfg.driver.name().into(),
        nu_grid: grid.levels().to_vec(),
        epsilon: cfg.epsilon,
        seed: cfg.seed,
        lattice: lattice_record,
        y0,
        lower_value: lower,
        interchange_gap: gap,
        interchange_bound: bound,
        lipschitz: c,
        augmented_lipschitz: grid.augmented_lipschitz(fbar, lattice),
        min_scheme_weight: scheme_weight,
        boundary_nodes: boundary.len(),
        constraints: ConstraintRecord::new(&report, tolerance),
        submartingale_min,
        hedge: hedge.as_ref().map(|h| HedgeSummary::new(h, cfg.seed)),
        oracle,
        checks,
        all_passed,
    };

    let out = &cfg.output_dir;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut files = Vec::new();
    if cfg.formats.json() {
        let path = out.join("summary.json");
        let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
        text.push('\n');
        fs::write(&path, text).map_err(|e| io_err(&path, e))?;
        files.push(path);
    }
    if cfg.formats.csv() {
        let phi = hedge_strategy(&sol, lattice);
        files.push(write_csv(out, "nodes.csv", |w| write_nodes(w, &prep, &sol, &phi))?);
        files.push(write_csv(out, "branches.csv", |w| write_branches(w, &prep, &sol))?);
        files.push(write_csv(out, "boundary.csv", |w| write_boundary(w, &prep, &sol, &boundary))?);
        if let Some(h) = &hedge {
            files.push(write_csv(out, "hedge.csv", |w| write_hedge(w, h))?);
        }
    }
    Ok(Outcome {
        summary,
        files,
        solution: sol,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

type Sink = BufWriter<fs::File>;

fn write_csv(dir: &Path, name: &str, body: impl FnOnce(&mut Sink) -> std::io::Result<()>) -> Result<PathBuf, CliError> {
    let path = dir.join(name);
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)
        .and_then(|_| w.flush())
        .map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// `d` is the default step (0 while alive), `jd` the Brownian position at
/// default (empty while alive).
fn state_columns(prep: &Prepared, id: bsde_game::NodeId) -> String {
    let st = prep.lattice.state(id);
    let (d, jd) = match st.tag {
        DefaultTag::Alive => (0, String::new()),
        DefaultTag::DefaultedAt { step, j } => (step, j.to_string()),
    };
    format!("{},{},{},{}", st.step, st.j, d, jd)
}

pub const NODES_HEADER: &str = "node,k,j,d,jd,t,s,xi,ybar,zbar,kbar,continuation,a_inc,a_prime_inc,off_obstacle_residual,nu_star,phibar,on_obstacle";
pub const BRANCHES_HEADER: &str = "node,branch,kind,prob,dms,kbar_inc,kbar_prime_inc";
pub const BOUNDARY_HEADER: &str = "node,k,j,d,jd,t,s,xi,ybar";
pub const HEDGE_HEADER: &str = "path_id,stop_node,stop_step,wealth,payoff,slack,weight,min_dominance";

fn write_nodes(w: &mut Sink, prep: &Prepared, sol: &GameSolution<f64>, phi: &bsde_game::Field) -> std::io::Result<()> {
    let lat = &prep.lattice;
    writeln!(w, "{NODES_HEADER}")?;
    for id in lat.node_ids() {
        let vals = [
            lat.time(id),
            lat.price(id),
            sol.obstacle[id],
            sol.ybar[id],
            sol.zbar[id],
            sol.kbar[id],
            sol.continuation[id],
            sol.a_inc[id],
            sol.a_prime_inc[id],
            sol.off_obstacle_residual[id],
            sol.nu_star[id],
            phi[id],
        ];
        write!(w, "{},{}", id.0, state_columns(prep, id))?;
        for v in vals {
            write!(w, ",{}", fmt_float(v))?;
        }
        writeln!(w, ",{}", u8::from(sol.on_obstacle(id)))?;
    }
    Ok(())
}

fn write_branches(w: &mut Sink, prep: &Prepared, sol: &GameSolution<f64>) -> std::io::Result<()> {
    let lat = &prep.lattice;
    writeln!(w, "{BRANCHES_HEADER}")?;
    for id in lat.node_ids().filter(|id| !lat.is_terminal(*id)) {
        for (b, br) in lat.branch_range(id).zip(lat.branches(id).iter()) {
            let kind = format!("{:?}", br.kind).to_lowercase();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                id.0,
                b,
                kind,
                fmt_float(br.prob),
                fmt_float(br.dms),
                fmt_float(sol.kbar_inc[b]),
                fmt_float(sol.kbar_prime_inc[b]),
            )?;
        }
    }
    Ok(())
}

fn write_boundary(
    w: &mut Sink,
    prep: &Prepared,
    sol: &GameSolution<f64>,
    nodes: &[bsde_game::NodeId],
) -> std::io::Result<()> {
    let lat = &prep.lattice;
    writeln!(w, "{BOUNDARY_HEADER}")?;
    for &id in nodes {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            id.0,
            state_columns(prep, id),
            fmt_float(lat.time(id)),
            fmt_float(lat.price(id)),
            fmt_float(sol.obstacle[id]),
            fmt_float(sol.ybar[id]),
        )?;
    }
    Ok(())
}

fn write_hedge(w: &mut Sink, h: &HedgeReport<f64>) -> std::io::Result<()> {
    writeln!(w, "{HEDGE_HEADER}")?;
    for r in &h.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            r.path_id,
            r.stop_node.0,
            r.stop_step,
            fmt_float(r.wealth),
            fmt_float(r.payoff),
            fmt_float(r.slack),
            fmt_float(r.weight),
            fmt_float(r.min_dominance),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 6.758721814986, -2.5e-300, 1e300] {
            let s = fmt_float(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
        }
        assert_eq!(fmt_float(0.0), "0.0000000000000000e0");
    }

    #[test]
    fn non_finite_values_serialize_as_null() {
        assert_eq!(finite(f64::INFINITY), None);
        assert_eq!(finite(1.5), Some(1.5));
    }
}
