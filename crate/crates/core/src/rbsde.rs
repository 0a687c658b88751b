//! Reflected BSDE with a lower obstacle: the nonlinear operator `Y^g_{s,t}`,
//! and the strong `Y^g`-submartingale check.

use rand::Rng;

use crate::bsde::{backward, check_contraction, check_rule, implicit_step, terminal_field};
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::field::{AdaptedField, StopRule};
use crate::lattice::DefaultLattice;
use crate::scalar::Scalar;

/// Solution of a reflected BSDE: `Y_t = c + g(t, Y_t, Z_t, K_t) dt + dA_t`
/// with `Y >= xi` and `dA > 0` only where `Y = xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbsdeSolution<T> {
    pub y: AdaptedField<T>,
    pub z: AdaptedField<T>,
    pub k: AdaptedField<T>,
    /// Reflection increment at the node where the projection occurs.
    pub a_inc: AdaptedField<T>,
}

impl<T: Scalar> RbsdeSolution<T> {
    /// `sum (Y - xi) dA` over all nodes.
    pub fn skorokhod_sum(&self, obstacle: &AdaptedField<T>) -> T {
        self.y
            .as_slice()
            .iter()
            .zip(obstacle.as_slice())
            .zip(self.a_inc.as_slice())
            .fold(T::zero(), |acc, ((y, xi), a)| acc + (*y - *xi) * *a)
    }
}

/// A pair of stopping rules `s <= t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Window {
    pub s: StopRule,
    pub t: StopRule,
}

impl Window {
    /// `[0, T]`.
    pub fn full<T: Scalar>(lattice: &DefaultLattice<T>) -> Self {
        Self {
            s: StopRule::immediately(lattice),
            t: StopRule::at_terminal(lattice),
        }
    }

    /// Random pair: `s` flags nodes with probability `p_s`, `t` keeps each of
    /// those flags with probability `p_t`, so that `s <= t`.
    pub fn random<T: Scalar, R: Rng>(lattice: &DefaultLattice<T>, p_s: f64, p_t: f64, rng: &mut R) -> Self {
        let s = StopRule::random(lattice, p_s, rng);
        let keep = StopRule::random(lattice, p_t, rng);
        let t = s.intersect(&keep);
        Self { s, t }
    }
}

/// `Y^g_{., t}(terminal)` at every node: the reflected recursion frozen at
/// `Y = terminal` on nodes flagged by `t_rule`.
pub fn solve_rbsde<T: Scalar>(
    lattice: &DefaultLattice<T>,
    g: &Driver<T>,
    obstacle: &AdaptedField<T>,
    t_rule: &StopRule,
    terminal: &AdaptedField<T>,
) -> Result<RbsdeSolution<T>> {
    check_contraction(g.lipschitz(), lattice.dt())?;
    check_rule(lattice, t_rule)?;
    obstacle.check_len(lattice)?;
    obstacle.check_finite("obstacle")?;
    terminal.check_len(lattice)?;
    for id in lattice.node_ids().filter(|id| t_rule.is_stop(*id)) {
        if !terminal[id].is_finite() {
            return Err(Error::NonFinite {
                what: "terminal",
                node: id.0,
            });
        }
        if terminal[id] < obstacle[id] {
            return Err(Error::TerminalBelowObstacle { node: id.0 });
        }
    }
    let mut a_inc = AdaptedField::zeros(lattice);
    let mut y = terminal_field(lattice, terminal)?;
    let (z, k) = backward(lattice, &mut y, |id, rep, _| {
        if t_rule.is_stop(id) {
            return Ok(terminal[id]);
        }
        let cont = implicit_step(lattice, g, id, rep, T::zero())?;
        if cont < obstacle[id] {
            a_inc[id] = obstacle[id] - cont;
            Ok(obstacle[id])
        } else {
            Ok(cont)
        }
    })?;
    Ok(RbsdeSolution { y, z, k, a_inc })
}

/// Reflected BSDE on `[0, T]` with terminal value `xi_T`.
pub fn solve_rbsde_full<T: Scalar>(
    lattice: &DefaultLattice<T>,
    g: &Driver<T>,
    obstacle: &AdaptedField<T>,
) -> Result<RbsdeSolution<T>> {
    solve_rbsde(lattice, g, obstacle, &StopRule::at_terminal(lattice), obstacle)
}

/// Residuals `Y^g_{s,t}(X_t) - X_s` of a submartingale check.
#[derive(Debug, Clone, PartialEq)]
pub struct SubmartingaleReport<T> {
    /// Minimum over pairs of the residual at the nodes where `s` stops.
    pub min_at_s: T,
    /// Minimum over pairs and over every node taken as the start of the window.
    pub min_all_nodes: T,
    pub pairs: usize,
}

impl<T: Scalar> SubmartingaleReport<T> {
    pub fn passes(&self, tol: T) -> bool {
        self.min_at_s >= -tol && self.min_all_nodes >= -tol
    }
}

/// Checks that `x` is a strong `Y^g`-submartingale on the given windows.
pub fn check_submartingale<T: Scalar>(
    lattice: &DefaultLattice<T>,
    x: &AdaptedField<T>,
    g: &Driver<T>,
    obstacle: &AdaptedField<T>,
    pairs: &[Window],
) -> Result<SubmartingaleReport<T>> {
    x.check_len(lattice)?;
    obstacle.check_len(lattice)?;
    if let Some(node) = lattice.node_ids().find(|id| x[*id] < obstacle[*id]) {
        return Err(Error::ObstacleViolation { node: node.0 });
    }
    let mut report = SubmartingaleReport {
        min_at_s: T::infinity(),
        min_all_nodes: T::infinity(),
        pairs: pairs.len(),
    };
    for w in pairs {
        let sol = solve_rbsde(lattice, g, obstacle, &w.t, x)?;
        for id in w.s.stopping_nodes(lattice) {
            report.min_at_s = report.min_at_s.min(sol.y[id] - x[id]);
        }
        for id in lattice.node_ids() {
            report.min_all_nodes = report.min_all_nodes.min(sol.y[id] - x[id]);
        }
    }
    Ok(report)
}

/// Residual field `Y^g_{., t}(X_t) - X` for a single stopping rule.
pub fn submartingale_residual<T: Scalar>(
    lattice: &DefaultLattice<T>,
    x: &AdaptedField<T>,
    g: &Driver<T>,
    obstacle: &AdaptedField<T>,
    t_rule: &StopRule,
) -> Result<AdaptedField<T>> {
    let sol = solve_rbsde(lattice, g, obstacle, t_rule, x)?;
    Ok(sol.y.zip_with(x, |a, b| a - b))
}
