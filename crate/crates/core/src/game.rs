//! Buyer's price `Ybar = ess inf_nu ess sup_tau E^nu(xi_tau)` by dynamic
//! programming over a finite control grid, its constrained reflected and
//! optional decompositions, constraint diagnostics, the `epsilon`-optimal
//! exercise rule and the lower game value.
//!
//! At a node the value is `max(xi, min_nu step^nu)`, where `step^nu` is the
//! implicit BSDE step with driver `fbar^nu`. The max with a control-free
//! obstacle commutes with the min over controls.

use crate::bsde::{backward, check_contraction, check_rule, represent_branches, solve_implicit, terminal_field};
use crate::drivers::{controlled_value, Driver};
use crate::error::{Error, Result};
use crate::field::{AdaptedField, BranchField, StopRule};
use crate::lattice::{DefaultLattice, StepContext};
use crate::scalar::{neg, pos, Scalar};

/// Finite set of constant control levels in `(-1, nu_max]`, sorted, containing 0.
#[derive(Debug, Clone, PartialEq)]
pub struct NuGrid<T> {
    levels: Vec<T>,
}

impl<T: Scalar> NuGrid<T> {
    pub fn new(mut levels: Vec<T>) -> Result<Self> {
        if let Some(v) = levels.iter().find(|v| !(v.is_finite() && **v > -T::one())) {
            return Err(Error::InvalidGrid(format!("level {v} is not a finite value above -1")));
        }
        levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
        levels.dedup();
        if !levels.contains(&T::zero()) {
            return Err(Error::InvalidGrid("the grid must contain 0".into()));
        }
        Ok(Self { levels })
    }

    /// `{0}`.
    pub fn zero_only() -> Self {
        Self { levels: vec![T::zero()] }
    }

    pub fn levels(&self) -> &[T] {
        &self.levels
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn max(&self) -> T {
        *self.levels.last().expect("grid contains 0")
    }

    pub fn sup_abs(&self) -> T {
        self.levels.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    /// Superset with `factor - 1` equally spaced levels inserted between
    /// neighbours.
    pub fn refined(&self, factor: usize) -> Self {
        let mut levels = Vec::with_capacity(self.levels.len() * factor.max(1));
        for w in self.levels.windows(2) {
            for i in 0..factor.max(1) {
                let s = T::lit(i as f64) / T::lit(factor.max(1) as f64);
                levels.push(w[0] + (w[1] - w[0]) * s);
            }
        }
        levels.extend(self.levels.last());
        levels.dedup();
        Self { levels }
    }

    /// True when every level of `self` is a level of `other`.
    pub fn is_subset_of(&self, other: &Self) -> bool {
        self.levels.iter().all(|v| other.levels.contains(v))
    }

    /// Lambda-constant of the controlled drivers built from `fbar` over this grid.
    pub fn augmented_lipschitz(&self, fbar: &Driver<T>, lattice: &DefaultLattice<T>) -> T {
        fbar.lipschitz() + self.sup_abs() * lattice.params().sup_control_weight()
    }

    /// Lower bound on the branch weights of the controlled one-step maps when
    /// `fbar` has z-slope at most `z_slope`. Alive up/down weights are
    /// `(1 - lambda dt (1 + nu)) / 2 -+ (z-slope + nu lambda beta / sigma) sqrt(dt) / 2`,
    /// the default weight is `lambda dt (1 + nu)`. When the bound is
    /// nonnegative every step is monotone in the child values, so the lattice
    /// inherits comparison (sandwich bounds, obstacle and driver ordering).
    pub fn min_scheme_weight(&self, lattice: &DefaultLattice<T>, z_slope: T) -> T {
        let half = T::lit(0.5);
        let p = lattice.params();
        let dt = lattice.dt();
        let mut worst = half - half * z_slope * dt.sqrt();
        for k in 0..lattice.n_steps() {
            let lambda = p.lambda0.at(k);
            if !(lambda > T::zero()) {
                continue;
            }
            let jump = lambda * p.beta.at(k).abs() / p.sigma.at(k);
            for nu in &self.levels {
                let q = lambda * dt * (T::one() + *nu);
                let w = half * (T::one() - q) - half * (z_slope + nu.abs() * jump) * dt.sqrt();
                worst = worst.min(w).min(q);
            }
        }
        worst
    }
}

impl<T: Scalar> Default for NuGrid<T> {
    fn default() -> Self {
        Self {
            levels: [-0.95, -0.5, 0.0, 0.5, 1.0, 2.0, 5.0, 10.0].map(T::lit).to_vec(),
        }
    }
}

/// Buyer's value field with its decompositions.
///
/// Predictable part at a node, under `nu = 0`:
/// `Ybar_t = c + fbar(Ybar_t, Zbar_t) dt + dA_t - dA'_t + off_obstacle_residual_t`.
/// Optional part on each branch:
/// `Ybar_child = Ybar_t - fbar dt + Zbar dm^S - dkbar + dkbar'`.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSolution<T> {
    pub ybar: AdaptedField<T>,
    pub zbar: AdaptedField<T>,
    pub kbar: AdaptedField<T>,
    /// `min_nu step^nu` before the max with the obstacle.
    pub continuation: AdaptedField<T>,
    pub a_inc: AdaptedField<T>,
    pub a_prime_inc: AdaptedField<T>,
    /// Positive predictable residual at nodes strictly above the obstacle;
    /// not absorbed into `A` or `A'`.
    pub off_obstacle_residual: AdaptedField<T>,
    pub kbar_inc: BranchField<T>,
    pub kbar_prime_inc: BranchField<T>,
    /// Smallest minimising grid level at each non-terminal node.
    pub nu_star: AdaptedField<T>,
    pub obstacle: AdaptedField<T>,
    pub grid: NuGrid<T>,
    /// Lambda-constant used for the contraction check.
    pub lipschitz: T,
}

impl<T: Scalar> GameSolution<T> {
    pub fn root_value(&self) -> T {
        self.ybar.as_slice()[0]
    }

    #[inline]
    pub fn on_obstacle(&self, id: crate::lattice::NodeId) -> bool {
        self.ybar[id] == self.obstacle[id]
    }
}

/// `min_nu step^nu` over the grid and the index of the smallest minimiser.
/// Post-default every level gives the same step, computed once.
#[inline]
fn min_over_grid<T: Scalar>(
    fbar: &Driver<T>,
    grid: &NuGrid<T>,
    ctx: &StepContext<T>,
    (c, z, k): (T, T, T),
) -> Result<(T, usize)> {
    let step = |nu: T| solve_implicit(c, T::zero(), ctx.dt, |y| controlled_value(fbar.eval(ctx, y, z, T::zero()), nu, ctx, z, k));
    if !(ctx.lambda > T::zero()) {
        return Ok((step(grid.levels[0])?, 0));
    }
    let mut best = (step(grid.levels[0])?, 0);
    for (i, nu) in grid.levels.iter().enumerate().skip(1) {
        let v = step(*nu)?;
        if v < best.0 {
            best = (v, i);
        }
    }
    Ok(best)
}

/// Solves the buyer's price and extracts its decompositions.
pub fn solve_buyer_price<T: Scalar>(
    lattice: &DefaultLattice<T>,
    fbar: &Driver<T>,
    obstacle: &AdaptedField<T>,
    grid: &NuGrid<T>,
) -> Result<GameSolution<T>> {
    let lipschitz = grid.augmented_lipschitz(fbar, lattice);
    check_contraction(lipschitz, lattice.dt())?;
    obstacle.check_len(lattice)?;
    obstacle.check_finite("obstacle")?;

    let mut continuation = terminal_field(lattice, obstacle)?;
    let mut nu_star = AdaptedField::zeros(lattice);
    let mut ybar = terminal_field(lattice, obstacle)?;
    let (zbar, kbar) = backward(lattice, &mut ybar, |id, rep, _| {
        let ctx = lattice.context(id);
        let (best, arg) = min_over_grid(fbar, grid, &ctx, rep)?;
        continuation[id] = best;
        nu_star[id] = grid.levels[arg];
        Ok(if best > obstacle[id] { best } else { obstacle[id] })
    })?;

    let mut sol = GameSolution {
        ybar,
        zbar,
        kbar,
        continuation,
        a_inc: AdaptedField::zeros(lattice),
        a_prime_inc: AdaptedField::zeros(lattice),
        off_obstacle_residual: AdaptedField::zeros(lattice),
        kbar_inc: BranchField::zeros(lattice),
        kbar_prime_inc: BranchField::zeros(lattice),
        nu_star,
        obstacle: obstacle.clone(),
        grid: grid.clone(),
        lipschitz,
    };
    extract_decomposition(&mut sol, lattice, fbar)?;
    Ok(sol)
}

/// Fills the predictable increments `(A, A')` and the per-branch Jordan parts
/// `(kbar, kbar')` from `Ybar`.
///
/// With `rho = Ybar_t - c - fbar(Ybar_t, Zbar_t) dt`: `dA = rho^+` on the
/// obstacle, `dA' = rho^-`, and `rho^+` off the obstacle goes to the
/// diagnostic field. On each branch
/// `delta = Ybar_t - Ybar_child - fbar dt + Zbar dm^S`, split as
/// `dkbar = delta^+`, `dkbar' = delta^-`.
pub fn extract_decomposition<T: Scalar>(
    sol: &mut GameSolution<T>,
    lattice: &DefaultLattice<T>,
    fbar: &Driver<T>,
) -> Result<()> {
    let mut children = [T::zero(); 3];
    for id in lattice.node_ids() {
        sol.a_inc[id] = T::zero();
        sol.a_prime_inc[id] = T::zero();
        sol.off_obstacle_residual[id] = T::zero();
        if lattice.is_terminal(id) {
            continue;
        }
        let ctx = lattice.context(id);
        let br = lattice.branches(id);
        for (slot, b) in children.iter_mut().zip(br.iter()) {
            *slot = sol.ybar[b.child];
        }
        let (c, z, k) = represent_branches(id, &br, &children[..br.len()])?;
        sol.zbar[id] = z;
        sol.kbar[id] = k;
        let y = sol.ybar[id];
        let drift = fbar.eval(&ctx, y, z, T::zero()) * ctx.dt;
        let rho = y - c - drift;
        if sol.on_obstacle(id) {
            sol.a_inc[id] = pos(rho);
        } else {
            sol.off_obstacle_residual[id] = pos(rho);
        }
        sol.a_prime_inc[id] = neg(rho);
        for (b, branch) in lattice.branch_range(id).zip(br.iter()) {
            let child = sol.ybar[branch.child];
            let mut delta = y - child - drift + z * branch.dms;
            // a spanned branch leaves only rounding noise; call it zero. The
            // scale floors at 1 like the implicit step's tolerance.
            let scale = T::one().max(y.abs() + child.abs() + drift.abs() + (z * branch.dms).abs());
            if delta.abs() <= T::lit(16.0) * T::epsilon() * scale {
                delta = T::zero();
            }
            sol.kbar_inc[b] = pos(delta);
            sol.kbar_prime_inc[b] = neg(delta);
        }
    }
    Ok(())
}

/// Constraint and decomposition diagnostics of a [`GameSolution`].
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintReport<T> {
    /// `sum (Ybar - xi) dA`.
    pub skorokhod_a: T,
    /// `sum over branches of (Ybar_t - xi_t) dkbar`.
    pub skorokhod_kbar: T,
    /// `sum dA dA'`.
    pub singular_a: T,
    /// `sum dkbar dkbar'`.
    pub singular_kbar: T,
    /// `min (Kbar - beta/sigma Zbar) lambda` over non-terminal nodes above the obstacle.
    pub cond1_min: T,
    /// `min dA' - (Kbar - beta/sigma Zbar) lambda dt` over the same nodes.
    pub measconst_min: T,
    pub max_off_obstacle_residual: T,
    /// Non-default branches with `dkbar > 0` leaving nodes above the obstacle.
    pub predictable_kbar_jumps: usize,
    /// Worst error of the predictable and per-branch one-step identities.
    pub reconstruction_error: T,
    /// `min dA`, `min dA'`, `min dkbar`, `min dkbar'`.
    pub min_increment: T,
    pub nodes_above_obstacle: usize,
}

impl<T: Scalar> ConstraintReport<T> {
    pub fn exact_identities_hold(&self) -> bool {
        self.skorokhod_a == T::zero()
            && self.skorokhod_kbar == T::zero()
            && self.singular_a == T::zero()
            && self.singular_kbar == T::zero()
            && self.min_increment >= T::zero()
    }

    pub fn inequalities_hold(&self, tol: T) -> bool {
        self.cond1_min >= -tol && self.measconst_min >= -tol
    }
}

/// Evaluates Skorokhod sums, mutual singularity, the jump constraint
/// `(Kbar - beta/sigma Zbar) lambda >= 0` and the measure constraint
/// `dA' >= (Kbar - beta/sigma Zbar) lambda dt` off the obstacle.
pub fn check_constraints<T: Scalar>(
    sol: &GameSolution<T>,
    lattice: &DefaultLattice<T>,
    fbar: &Driver<T>,
) -> ConstraintReport<T> {
    let mut r = ConstraintReport {
        skorokhod_a: T::zero(),
        skorokhod_kbar: T::zero(),
        singular_a: T::zero(),
        singular_kbar: T::zero(),
        cond1_min: T::infinity(),
        measconst_min: T::infinity(),
        max_off_obstacle_residual: T::zero(),
        predictable_kbar_jumps: 0,
        reconstruction_error: T::zero(),
        min_increment: T::zero(),
        nodes_above_obstacle: 0,
    };
    for id in lattice.node_ids() {
        if lattice.is_terminal(id) {
            continue;
        }
        let ctx = lattice.context(id);
        let y = sol.ybar[id];
        let gap = y - sol.obstacle[id];
        let (da, dap) = (sol.a_inc[id], sol.a_prime_inc[id]);
        r.skorokhod_a += gap * da;
        r.singular_a += da * dap;
        r.min_increment = r.min_increment.min(da).min(dap);
        r.max_off_obstacle_residual = r.max_off_obstacle_residual.max(sol.off_obstacle_residual[id]);

        let br = lattice.branches(id);
        let c = br.iter().fold(T::zero(), |acc, b| acc + b.prob * sol.ybar[b.child]);
        let z = sol.zbar[id];
        let drift = fbar.eval(&ctx, y, z, T::zero()) * ctx.dt;
        let predicted = c + drift + da - dap + sol.off_obstacle_residual[id];
        r.reconstruction_error = r.reconstruction_error.max((predicted - y).abs());

        for (b, branch) in lattice.branch_range(id).zip(br.iter()) {
            let (dk, dkp) = (sol.kbar_inc[b], sol.kbar_prime_inc[b]);
            r.skorokhod_kbar += gap * dk;
            r.singular_kbar += dk * dkp;
            r.min_increment = r.min_increment.min(dk).min(dkp);
            let child = y - drift + z * branch.dms - dk + dkp;
            r.reconstruction_error = r.reconstruction_error.max((child - sol.ybar[branch.child]).abs());
            if gap > T::zero() && branch.dn == T::zero() && dk > T::zero() && ctx.lambda > T::zero() {
                r.predictable_kbar_jumps += 1;
            }
        }

        if gap > T::zero() {
            r.nodes_above_obstacle += 1;
            let q = sol.kbar[id] - ctx.beta / ctx.sigma * z;
            r.cond1_min = r.cond1_min.min(q * ctx.lambda);
            r.measconst_min = r.measconst_min.min(dap - q * ctx.lambda * ctx.dt);
        }
    }
    if r.nodes_above_obstacle == 0 {
        r.cond1_min = T::zero();
        r.measconst_min = T::zero();
    }
    r
}

/// `tau_eps = inf {t : Ybar_t <= xi_t + epsilon}`, forced at the horizon.
pub fn epsilon_stop<T: Scalar>(sol: &GameSolution<T>, lattice: &DefaultLattice<T>, epsilon: T) -> StopRule {
    StopRule::from_fn(lattice, |id| sol.ybar[id] <= sol.obstacle[id] + epsilon)
}

/// `inf_nu E^nu_{., tau}(xi_tau)` at every node, by per-step minimisation over the grid.
pub fn lower_value_field<T: Scalar>(
    lattice: &DefaultLattice<T>,
    fbar: &Driver<T>,
    grid: &NuGrid<T>,
    tau: &StopRule,
    obstacle: &AdaptedField<T>,
) -> Result<AdaptedField<T>> {
    check_contraction(grid.augmented_lipschitz(fbar, lattice), lattice.dt())?;
    check_rule(lattice, tau)?;
    obstacle.check_len(lattice)?;
    let mut y = terminal_field(lattice, obstacle)?;
    backward(lattice, &mut y, |id, rep, _| {
        if tau.is_stop(id) {
            return Ok(obstacle[id]);
        }
        Ok(min_over_grid(fbar, grid, &lattice.context(id), rep)?.0)
    })?;
    Ok(y)
}

/// Root value of [`lower_value_field`].
pub fn lower_value<T: Scalar>(
    lattice: &DefaultLattice<T>,
    fbar: &Driver<T>,
    grid: &NuGrid<T>,
    tau: &StopRule,
    obstacle: &AdaptedField<T>,
) -> Result<T> {
    Ok(lower_value_field(lattice, fbar, grid, tau, obstacle)?.as_slice()[0])
}

/// Subsolution obtained by pushing the value down by `extra >= 0` at each
/// step: `Y' = max(xi, min_nu step^nu(Y') - extra)`. It plays the role of a
/// larger `kbar'` and stays below `Ybar`.
pub fn perturbed_subsolution<T: Scalar>(
    lattice: &DefaultLattice<T>,
    fbar: &Driver<T>,
    grid: &NuGrid<T>,
    obstacle: &AdaptedField<T>,
    extra: &AdaptedField<T>,
) -> Result<AdaptedField<T>> {
    check_contraction(grid.augmented_lipschitz(fbar, lattice), lattice.dt())?;
    obstacle.check_len(lattice)?;
    extra.check_len(lattice)?;
    if let Some(v) = extra.as_slice().iter().find(|v| !(**v >= T::zero())) {
        return Err(Error::InvalidParams {
            field: "extra",
            reason: format!("perturbation {v} must be nonnegative"),
        });
    }
    let mut y = terminal_field(lattice, obstacle)?;
    backward(lattice, &mut y, |id, rep, _| {
        let v = min_over_grid(fbar, grid, &lattice.context(id), rep)?.0 - extra[id];
        Ok(if v > obstacle[id] { v } else { obstacle[id] })
    })?;
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{controlled_driver, dual_driver, ControlProcess};
    use crate::lattice::{build_lattice, MarketParams};
    use crate::rbsde::solve_rbsde_full;

    fn ref1(n: usize) -> DefaultLattice<f64> {
        build_lattice(MarketParams::constant(0.03, 0.05, 0.2, -0.3, 0.1, 1.0, 100.0), n).unwrap()
    }

    #[test]
    fn grid_validation_and_refinement() {
        assert!(NuGrid::new(vec![-1.0, 0.0]).is_err());
        assert!(NuGrid::new(vec![0.5, 1.0]).is_err());
        let g = NuGrid::new(vec![1.0, 0.0, -0.5]).unwrap();
        assert_eq!(g.levels(), &[-0.5, 0.0, 1.0]);
        let d = NuGrid::<f64>::default();
        assert_eq!(d.len(), 8);
        let r = d.refined(2);
        assert!(d.is_subset_of(&r));
        assert_eq!(r.len(), 15);
        assert!((r.levels()[1] - (-0.725)).abs() < 1e-15);
    }

    #[test]
    fn scheme_weights() {
        let lat = ref1(10);
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let w = NuGrid::default().min_scheme_weight(&lat, fbar.lipschitz());
        // the default weight at nu = -0.95 binds; nu = 10 leaves 0.445 - 0.815 sqrt(0.1) = 0.187 on up/down
        assert!((w - 0.01 * 0.05).abs() < 1e-15);
        let top = NuGrid::new(vec![0.0, 10.0]).unwrap().min_scheme_weight(&lat, fbar.lipschitz());
        assert!((top - 0.01).abs() < 1e-15);
        let steep = build_lattice(MarketParams::constant(0.03, 0.05, 0.1, 0.5, 0.4, 1.0, 100.0), 4).unwrap();
        assert!(NuGrid::default().min_scheme_weight(&steep, 0.5) < 0.0);
        let free = build_lattice(MarketParams::constant(0.03, 0.05, 0.2, 0.0, 0.0, 1.0, 100.0), 4).unwrap();
        assert_eq!(NuGrid::default().min_scheme_weight(&free, 0.2), 0.5 - 0.1 * 0.5);
    }

    #[test]
    fn constant_obstacle_and_zero_driver() {
        let lat = ref1(8);
        let xi = AdaptedField::constant(&lat, 3.0);
        let sol = solve_buyer_price(&lat, &Driver::zero(), &xi, &NuGrid::default()).unwrap();
        let rep = check_constraints(&sol, &lat, &Driver::zero());
        for id in lat.node_ids() {
            assert_eq!(sol.ybar[id], 3.0);
            assert_eq!(sol.a_inc[id], 0.0);
            assert_eq!(sol.a_prime_inc[id], 0.0);
        }
        assert!(sol.zbar.as_slice().iter().all(|z| *z == 0.0));
        assert!(sol.kbar_inc.as_slice().iter().all(|v| *v == 0.0));
        assert!(rep.exact_identities_hold());
        assert_eq!(rep.cond1_min, 0.0);
        let tau = epsilon_stop(&sol, &lat, 0.0);
        assert_eq!(tau.stopping_nodes(&lat), vec![lat.root()]);
    }

    #[test]
    fn no_default_matches_single_control_rbsde() {
        let lat = build_lattice(MarketParams::constant(0.03, 0.05, 0.2, -0.3, 0.0, 1.0, 100.0), 30).unwrap();
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let put = AdaptedField::put(&lat, 100.0);
        let game = solve_buyer_price(&lat, &fbar, &put, &NuGrid::default()).unwrap();
        let rb = solve_rbsde_full(&lat, &fbar, &put).unwrap();
        assert_eq!(game.ybar, rb.y);
        let zero = solve_buyer_price(&lat, &fbar, &put, &NuGrid::zero_only()).unwrap();
        assert_eq!(game.ybar, zero.ybar);
    }

    #[test]
    fn single_level_grid_matches_controlled_rbsde() {
        let lat = ref1(20);
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let put = AdaptedField::put(&lat, 100.0);
        for nu in [-0.5, 0.0, 2.0] {
            let grid = NuGrid { levels: vec![nu] };
            let game = solve_buyer_price(&lat, &fbar, &put, &grid).unwrap();
            let g = controlled_driver(&fbar, &ControlProcess::constant(nu), lat.params()).unwrap();
            let rb = solve_rbsde_full(&lat, &g, &put).unwrap();
            assert_eq!(game.ybar, rb.y, "nu = {nu}");
        }
    }

    #[test]
    fn sandwich_and_decomposition() {
        let lat = ref1(20);
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let put = AdaptedField::put(&lat, 100.0);
        let grid = NuGrid::default();
        let sol = solve_buyer_price(&lat, &fbar, &put, &grid).unwrap();
        let lower = lower_value_field(&lat, &fbar, &grid, &StopRule::at_terminal(&lat), &put).unwrap();
        assert!(lower.le(&sol.ybar));
        for nu in grid.levels() {
            let g = controlled_driver(&fbar, &ControlProcess::constant(*nu), lat.params()).unwrap();
            assert!(sol.ybar.le(&solve_rbsde_full(&lat, &g, &put).unwrap().y));
        }
        let rep = check_constraints(&sol, &lat, &fbar);
        assert_eq!(rep.skorokhod_a, 0.0);
        assert_eq!(rep.singular_a, 0.0);
        assert_eq!(rep.singular_kbar, 0.0);
        assert!(rep.reconstruction_error < 1e-12, "{rep:?}");
        for id in lat.node_ids().filter(|id| !lat.is_terminal(*id)) {
            assert!(sol.ybar[id] >= put[id]);
            assert!(sol.a_inc[id] * sol.a_prime_inc[id] == 0.0);
        }
    }

    #[test]
    fn epsilon_stop_is_monotone() {
        let lat = ref1(20);
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let put = AdaptedField::put(&lat, 100.0);
        let sol = solve_buyer_price(&lat, &fbar, &put, &NuGrid::default()).unwrap();
        let small = epsilon_stop(&sol, &lat, 0.01);
        let large = epsilon_stop(&sol, &lat, 0.05);
        assert!(large.precedes(&small));
        let huge = epsilon_stop(&sol, &lat, 1e9);
        assert_eq!(huge.stopping_nodes(&lat), vec![lat.root()]);
        assert_eq!(lower_value(&lat, &fbar, &NuGrid::default(), &huge, &put).unwrap(), put[lat.root()]);
    }

    #[test]
    fn perturbed_subsolution_stays_below() {
        let lat = ref1(15);
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let put = AdaptedField::put(&lat, 100.0);
        let grid = NuGrid::default();
        let sol = solve_buyer_price(&lat, &fbar, &put, &grid).unwrap();
        let zero = perturbed_subsolution(&lat, &fbar, &grid, &put, &AdaptedField::zeros(&lat)).unwrap();
        assert_eq!(zero, sol.ybar);
        let bump = AdaptedField::constant(&lat, 0.01);
        let sub = perturbed_subsolution(&lat, &fbar, &grid, &put, &bump).unwrap();
        assert!(sub.le(&sol.ybar));
        assert!(sub[lat.root()] < sol.ybar[lat.root()]);
    }
}
