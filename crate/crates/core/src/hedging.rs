//! Buyer's hedge `phibar = -Zbar / sigma`, forward wealth simulation and
//! pathwise certification of the (epsilon-)superhedge.
//!
//! Wealth follows `V_{t+1} = V_t - f(t, V_t, phi sigma) dt + phi sigma dm^S`,
//! the forward reading of the implicit backward step, so a wealth path is
//! exactly a BSDE solution with driver `f`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bsde::{check_contraction, represent_branches, solve_implicit};
use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::field::{AdaptedField, StopRule};
use crate::game::{epsilon_stop, GameSolution};
use crate::lattice::{DefaultLattice, NodeId};
use crate::scalar::Scalar;

/// `phibar = -Zbar / sigma` at every node.
pub fn hedge_strategy<T: Scalar>(sol: &GameSolution<T>, lattice: &DefaultLattice<T>) -> AdaptedField<T> {
    AdaptedField::from_fn(lattice, |id, st, _| -sol.zbar[id] / lattice.params().sigma.at(st.step))
}

#[inline]
fn wealth_step<T: Scalar>(
    lattice: &DefaultLattice<T>,
    f: &Driver<T>,
    strategy: &AdaptedField<T>,
    node: NodeId,
    v: T,
    dms: T,
) -> T {
    let ctx = lattice.context(node);
    let zv = strategy[node] * ctx.sigma;
    v - f.eval(&ctx, v, zv, T::zero()) * ctx.dt + zv * dms
}

/// Nodes and wealth values along one path.
#[derive(Debug, Clone, PartialEq)]
pub struct WealthPath<T> {
    pub nodes: Vec<NodeId>,
    pub wealth: Vec<T>,
}

/// Simulates wealth from `x0` along `path`, given as the index of the branch
/// taken at each visited node.
pub fn simulate_wealth<T: Scalar>(
    lattice: &DefaultLattice<T>,
    x0: T,
    strategy: &AdaptedField<T>,
    f: &Driver<T>,
    path: &[usize],
) -> Result<WealthPath<T>> {
    check_contraction(f.lipschitz(), lattice.dt())?;
    strategy.check_len(lattice)?;
    if path.len() > lattice.n_steps() {
        return Err(Error::InvalidPath(format!(
            "{} moves on a lattice with {} steps",
            path.len(),
            lattice.n_steps()
        )));
    }
    let mut node = lattice.root();
    let mut v = x0;
    let mut out = WealthPath {
        nodes: vec![node],
        wealth: vec![v],
    };
    for (step, &choice) in path.iter().enumerate() {
        let br = lattice.branches(node);
        let b = br.get(choice).ok_or_else(|| {
            Error::InvalidPath(format!("branch {choice} at step {step} but node has {}", br.len()))
        })?;
        v = wealth_step(lattice, f, strategy, node, v, b.dms);
        node = b.child;
        out.nodes.push(node);
        out.wealth.push(v);
    }
    Ok(out)
}

/// How the paths of a hedge evaluation were produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathMode {
    Exhaustive,
    Sampled { seed: u64 },
}

/// Outcome of one hedged path.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord<T> {
    pub path_id: usize,
    pub stop_node: NodeId,
    pub stop_step: usize,
    pub wealth: T,
    pub payoff: T,
    /// `V_tau + xi_tau`.
    pub slack: T,
    /// Path probability (exhaustive mode) or `1 / paths` (sampled mode).
    pub weight: T,
    /// `min (V_t + Ybar_t)` over the nodes visited up to the stop.
    pub min_dominance: T,
}

/// Pathwise superhedge certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct HedgeReport<T> {
    pub initial_capital: T,
    pub epsilon: T,
    pub records: Vec<PathRecord<T>>,
    pub min_slack: T,
    pub min_dominance: T,
    /// Probability-weighted mean slack.
    pub mean_slack: T,
    pub mode: PathMode,
    pub warning: Option<String>,
}

impl<T: Scalar> HedgeReport<T> {
    pub fn path_count(&self) -> usize {
        self.records.len()
    }

    /// `min slack >= -epsilon - tol`.
    pub fn passes(&self, tol: T) -> bool {
        self.min_slack >= -self.epsilon - tol
    }
}

/// Number of root-to-horizon paths when no rule stops early, saturating.
pub fn full_path_count<T: Scalar>(lattice: &DefaultLattice<T>) -> u128 {
    let width = if lattice.params().default_free() { 2u128 } else { 3 };
    (0..lattice.n_steps()).fold(1u128, |acc, _| acc.saturating_mul(width))
}

/// Runs wealth from `x0` with `strategy` on every path until `tau` and
/// records `V_tau + obstacle_tau`. Paths are enumerated when `3^n` (or `2^n`
/// without default) fits in `path_budget`, otherwise `path_budget` paths are
/// sampled under the lattice measure from `seed`.
#[allow(clippy::too_many_arguments)]
pub fn evaluate_hedge<T: Scalar>(
    lattice: &DefaultLattice<T>,
    x0: T,
    strategy: &AdaptedField<T>,
    tau: &StopRule,
    f: &Driver<T>,
    obstacle: &AdaptedField<T>,
    reference: Option<&AdaptedField<T>>,
    path_budget: usize,
    seed: u64,
) -> Result<HedgeReport<T>> {
    check_contraction(f.lipschitz(), lattice.dt())?;
    strategy.check_len(lattice)?;
    obstacle.check_len(lattice)?;
    if path_budget == 0 {
        return Err(Error::InvalidParams {
            field: "path_budget",
            reason: "must be at least 1".into(),
        });
    }
    let dominance = |id: NodeId, v: T| reference.map_or(T::infinity(), |r| v + r[id]);
    let record = |path_id, node: NodeId, v: T, weight: T, min_dom: T| PathRecord {
        path_id,
        stop_node: node,
        stop_step: lattice.state(node).step,
        wealth: v,
        payoff: obstacle[node],
        slack: v + obstacle[node],
        weight,
        min_dominance: min_dom,
    };
    let mut records = Vec::new();
    let mode = if full_path_count(lattice) <= path_budget as u128 {
        // depth-first in branch order
        let mut stack = vec![(lattice.root(), x0, T::one(), dominance(lattice.root(), x0))];
        while let Some((node, v, p, dom)) = stack.pop() {
            if tau.is_stop(node) {
                records.push(record(records.len(), node, v, p, dom));
                continue;
            }
            for b in lattice.branches(node).iter().rev() {
                let next = wealth_step(lattice, f, strategy, node, v, b.dms);
                stack.push((b.child, next, p * b.prob, dom.min(dominance(b.child, next))));
            }
        }
        PathMode::Exhaustive
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weight = T::one() / T::lit(path_budget as f64);
        for path_id in 0..path_budget {
            let mut node = lattice.root();
            let mut v = x0;
            let mut dom = dominance(node, v);
            while !tau.is_stop(node) {
                let br = lattice.branches(node);
                let u = T::lit(rng.gen::<f64>());
                let mut acc = T::zero();
                let mut pick = br.len() - 1;
                for (i, b) in br.iter().enumerate() {
                    acc += b.prob;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                let b = &br[pick];
                v = wealth_step(lattice, f, strategy, node, v, b.dms);
                node = b.child;
                dom = dom.min(dominance(node, v));
            }
            records.push(record(path_id, node, v, weight, dom));
        }
        PathMode::Sampled { seed }
    };
    let min_slack = records.iter().fold(T::infinity(), |m, r| m.min(r.slack));
    let min_dominance = records.iter().fold(T::infinity(), |m, r| m.min(r.min_dominance));
    let mean_slack = records.iter().fold(T::zero(), |m, r| m + r.weight * r.slack);
    Ok(HedgeReport {
        initial_capital: x0,
        epsilon: T::zero(),
        records,
        min_slack,
        min_dominance,
        mean_slack,
        mode,
        warning: None,
    })
}

/// Certifies the buyer's epsilon-superhedge: capital `-Ybar_0`, strategy
/// `phibar`, exercise at `tau_eps`.
pub fn verify_superhedge<T: Scalar>(
    lattice: &DefaultLattice<T>,
    sol: &GameSolution<T>,
    epsilon: T,
    f: &Driver<T>,
    path_budget: usize,
    seed: u64,
) -> Result<HedgeReport<T>> {
    if !(epsilon >= T::zero() && epsilon.is_finite()) {
        return Err(Error::InvalidParams {
            field: "epsilon",
            reason: format!("{epsilon} must be finite and nonnegative"),
        });
    }
    let tau = epsilon_stop(sol, lattice, epsilon);
    let phi = hedge_strategy(sol, lattice);
    let mut report = evaluate_hedge(
        lattice,
        -sol.root_value(),
        &phi,
        &tau,
        f,
        &sol.obstacle,
        Some(&sol.ybar),
        path_budget,
        seed,
    )?;
    report.epsilon = epsilon;
    if epsilon == T::zero() {
        report.warning = Some(
            "epsilon = 0 exercises where the price meets the payoff; this is a superhedge only for payoffs without downward jumps at grid times"
                .into(),
        );
    }
    Ok(report)
}

/// `E^g_{0,T}(V_T)` for the wealth started at `x0`, computed on the full
/// (non-recombining) path tree since wealth is path dependent. Cost grows
/// like `3^n`.
pub fn wealth_expectation<T: Scalar>(
    lattice: &DefaultLattice<T>,
    g: &Driver<T>,
    x0: T,
    strategy: &AdaptedField<T>,
    f: &Driver<T>,
) -> Result<T> {
    check_contraction(g.lipschitz(), lattice.dt())?;
    check_contraction(f.lipschitz(), lattice.dt())?;
    strategy.check_len(lattice)?;
    fn go<T: Scalar>(
        lat: &DefaultLattice<T>,
        g: &Driver<T>,
        f: &Driver<T>,
        strategy: &AdaptedField<T>,
        node: NodeId,
        v: T,
    ) -> Result<T> {
        if lat.is_terminal(node) {
            return Ok(v);
        }
        let br = lat.branches(node);
        let mut children = [T::zero(); 3];
        for (slot, b) in children.iter_mut().zip(br.iter()) {
            let next = wealth_step(lat, f, strategy, node, v, b.dms);
            *slot = go(lat, g, f, strategy, b.child, next)?;
        }
        let (c, z, k) = represent_branches(node, &br, &children[..br.len()])?;
        let ctx = lat.context(node);
        solve_implicit(c, T::zero(), ctx.dt, |y| g.eval(&ctx, y, z, k))
    }
    go(lattice, g, f, strategy, lattice.root(), x0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{controlled_driver, dual_driver, ControlProcess};
    use crate::game::{solve_buyer_price, NuGrid};
    use crate::lattice::{build_lattice, MarketParams};

    fn ref1(n: usize) -> DefaultLattice<f64> {
        build_lattice(MarketParams::constant(0.03, 0.05, 0.2, -0.3, 0.1, 1.0, 100.0), n).unwrap()
    }

    #[test]
    fn zero_strategy_keeps_wealth() {
        let lat = ref1(5);
        let w = simulate_wealth(&lat, 2.5, &AdaptedField::zeros(&lat), &Driver::zero(), &[1, 2, 0, 1, 0]).unwrap();
        assert!(w.wealth.iter().all(|v| *v == 2.5));
        assert_eq!(w.nodes.len(), 6);
    }

    #[test]
    fn unit_exposure_telescopes() {
        let lat = ref1(4);
        let phi = AdaptedField::from_fn(&lat, |_, _, _| 1.0 / 0.2);
        let path = [1, 0, 1, 0];
        let w = simulate_wealth(&lat, 0.0, &phi, &Driver::zero(), &path).unwrap();
        let mut sum = 0.0;
        let mut node = lat.root();
        for &c in &path {
            let b = lat.branches(node)[c];
            sum += b.dms;
            node = b.child;
        }
        assert!((w.wealth[4] - sum).abs() < 1e-14);
    }

    #[test]
    fn invalid_paths_rejected() {
        let lat = ref1(3);
        let phi = AdaptedField::zeros(&lat);
        assert!(matches!(
            simulate_wealth(&lat, 0.0, &phi, &Driver::zero(), &[0, 0, 0, 0]),
            Err(Error::InvalidPath(_))
        ));
        // after default only two branches exist
        assert!(matches!(
            simulate_wealth(&lat, 0.0, &phi, &Driver::zero(), &[0, 2]),
            Err(Error::InvalidPath(_))
        ));
    }

    #[test]
    fn strategy_formula() {
        let lat = ref1(6);
        let put = AdaptedField::put(&lat, 100.0);
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let mut sol = solve_buyer_price(&lat, &fbar, &put, &NuGrid::default()).unwrap();
        sol.zbar[NodeId(1)] = 0.05;
        let phi = hedge_strategy(&sol, &lat);
        assert!((phi[NodeId(1)] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn constant_obstacle_hedges_exactly() {
        let lat = ref1(6);
        let xi = AdaptedField::constant(&lat, 2.0);
        let sol = solve_buyer_price(&lat, &Driver::zero(), &xi, &NuGrid::default()).unwrap();
        let rep = verify_superhedge(&lat, &sol, 0.0, &Driver::zero(), 1000, 0).unwrap();
        assert!(rep.records.iter().all(|r| r.slack == 0.0));
        assert!(rep.warning.is_some());
        assert_eq!(rep.mode, PathMode::Exhaustive);
    }

    #[test]
    fn exhaustive_weights_sum_to_one_and_sampling_is_seeded() {
        let lat = ref1(6);
        let put = AdaptedField::put(&lat, 100.0);
        let f = Driver::linear_wealth(lat.params());
        let sol = solve_buyer_price(&lat, &dual_driver(&f), &put, &NuGrid::default()).unwrap();
        let rep = verify_superhedge(&lat, &sol, 0.01, &f, 1000, 0).unwrap();
        let total: f64 = rep.records.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let a = verify_superhedge(&lat, &sol, 0.01, &f, 500, 9).unwrap();
        let b = verify_superhedge(&lat, &sol, 0.01, &f, 500, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mode, PathMode::Sampled { seed: 9 });
    }

    #[test]
    fn wealth_is_an_e_nu_martingale() {
        let lat = ref1(6);
        let f = Driver::linear_wealth(lat.params());
        let phi = AdaptedField::constant(&lat, 0.7);
        for nu in [-0.5, 0.0, 5.0] {
            let g = controlled_driver(&f, &ControlProcess::constant(nu), lat.params()).unwrap();
            let e = wealth_expectation(&lat, &g, 1.5, &phi, &f).unwrap();
            assert!((e - 1.5).abs() < 1e-12);
        }
    }
}
