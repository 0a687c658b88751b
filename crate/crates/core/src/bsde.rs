//! Exact one-step martingale representation and the backward solver for
//! BSDEs with jumps `-dY = g(t, Y, Z, K) dt - Z dW - K dM`, optionally with a
//! finite-variation adjustment `-dkappa`, and the nonlinear expectation `E^g`
//! up to a stopping rule.

use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::field::{AdaptedField, StopRule};
use crate::lattice::{Branch, DefaultLattice, NodeId};
use crate::scalar::Scalar;

/// Iteration cap of the implicit step.
pub const MAX_FIXED_POINT_ITERATIONS: usize = 100;

/// `(c, z, k)` with `child = c + z dW + k dM` on every branch of `node`.
/// `k` is zero on two-branch nodes.
pub fn represent_step<T: Scalar>(
    lattice: &DefaultLattice<T>,
    node: NodeId,
    child_values: &[T],
) -> Result<(T, T, T)> {
    if node.0 >= lattice.len() {
        return Err(Error::UnknownNode(node.0));
    }
    represent_branches(node, &lattice.branches(node), child_values)
}

pub(crate) fn represent_branches<T: Scalar>(
    node: NodeId,
    branches: &[Branch<T>],
    values: &[T],
) -> Result<(T, T, T)> {
    if values.len() != branches.len() {
        return Err(Error::FieldSizeMismatch {
            expected: branches.len(),
            got: values.len(),
        });
    }
    match branches.len() {
        2 => {
            let mut a = [[T::one(), branches[0].dw], [T::one(), branches[1].dw]];
            let mut b = [values[0], values[1]];
            let x = gauss(&mut a, &mut b).ok_or(Error::SingularSystem { node: node.0 })?;
            Ok((x[0], x[1], T::zero()))
        }
        3 => {
            let row = |br: &Branch<T>| [T::one(), br.dw, br.dm];
            let mut a = [row(&branches[0]), row(&branches[1]), row(&branches[2])];
            let mut b = [values[0], values[1], values[2]];
            let x = gauss(&mut a, &mut b).ok_or(Error::SingularSystem { node: node.0 })?;
            Ok((x[0], x[1], x[2]))
        }
        _ => Err(Error::SingularSystem { node: node.0 }),
    }
}

/// Gaussian elimination with partial pivoting; `None` when a pivot vanishes
/// relative to the matrix scale.
fn gauss<T: Scalar, const N: usize>(a: &mut [[T; N]; N], b: &mut [T; N]) -> Option<[T; N]> {
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(T::zero(), |m, v| m.max(v.abs()));
    let tiny = scale * T::epsilon() * T::lit(16.0);
    for col in 0..N {
        let pivot = (col..N).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if !(a[pivot][col].abs() > tiny) {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..N {
            let factor = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, v) in a[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *dst -= factor * *v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    let mut x = [T::zero(); N];
    for row in (0..N).rev() {
        let mut acc = b[row];
        for c in row + 1..N {
            acc -= a[row][c] * x[c];
        }
        x[row] = acc / a[row][row];
    }
    Some(x)
}

/// Fails with [`Error::StepContractionFailure`] unless `lipschitz * dt < 1`.
pub fn check_contraction<T: Scalar>(lipschitz: T, dt: T) -> Result<()> {
    let l = lipschitz * dt;
    if l < T::one() {
        Ok(())
    } else {
        Err(Error::StepContractionFailure {
            lipschitz_dt: l.to_f64().unwrap_or(f64::NAN),
        })
    }
}

/// Solves `y = c + h(y) dt - dkappa` by fixed-point iteration from
/// `y = c - dkappa`. Callers check the contraction of `h` beforehand.
#[inline]
pub fn solve_implicit<T: Scalar>(c: T, dkappa: T, dt: T, h: impl Fn(T) -> T) -> Result<T> {
    let tol = T::fixed_point_tol();
    let mut y = c - dkappa;
    for _ in 0..MAX_FIXED_POINT_ITERATIONS {
        let next = c + h(y) * dt - dkappa;
        if !next.is_finite() {
            break;
        }
        if (next - y).abs() <= tol * T::one().max(next.abs()) {
            return Ok(next);
        }
        y = next;
    }
    Err(Error::StepContractionFailure {
        lipschitz_dt: f64::NAN,
    })
}

/// One implicit BSDE step at a node: `y = c + g(t, y, z, k) dt - dkappa`.
pub fn implicit_step<T: Scalar>(
    lattice: &DefaultLattice<T>,
    g: &Driver<T>,
    node: NodeId,
    (c, z, k): (T, T, T),
    dkappa: T,
) -> Result<T> {
    let ctx = lattice.context(node);
    solve_implicit(c, dkappa, ctx.dt, |y| g.eval(&ctx, y, z, k))
}

/// Runs a backward pass over all non-terminal nodes, latest first. `step`
/// receives the node and its representation of the already-computed child
/// values and returns the node value. Returns the `(z, k)` fields.
pub(crate) fn backward<T: Scalar>(
    lattice: &DefaultLattice<T>,
    y: &mut AdaptedField<T>,
    mut step: impl FnMut(NodeId, (T, T, T), &AdaptedField<T>) -> Result<T>,
) -> Result<(AdaptedField<T>, AdaptedField<T>)> {
    let mut z = AdaptedField::zeros(lattice);
    let mut k = AdaptedField::zeros(lattice);
    let mut children = [T::zero(); 3];
    for id in lattice.node_ids().rev() {
        if lattice.is_terminal(id) {
            continue;
        }
        let br = lattice.branches(id);
        for (slot, b) in children.iter_mut().zip(br.iter()) {
            *slot = y[b.child];
        }
        let rep = represent_branches(id, &br, &children[..br.len()])?;
        z[id] = rep.1;
        k[id] = rep.2;
        y[id] = step(id, rep, y)?;
    }
    Ok((z, k))
}

/// `(Y, Z, K)` of a BSDE on the lattice. `K` is zero on defaulted nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct BsdeSolution<T> {
    pub y: AdaptedField<T>,
    pub z: AdaptedField<T>,
    pub k: AdaptedField<T>,
}

/// Copies the terminal layer of `terminal` into a fresh field.
pub(crate) fn terminal_field<T: Scalar>(
    lattice: &DefaultLattice<T>,
    terminal: &AdaptedField<T>,
) -> Result<AdaptedField<T>> {
    terminal.check_len(lattice)?;
    let mut y = AdaptedField::zeros(lattice);
    for id in lattice.layer(lattice.n_steps()) {
        if !terminal[id].is_finite() {
            return Err(Error::NonFinite {
                what: "terminal",
                node: id.0,
            });
        }
        y[id] = terminal[id];
    }
    Ok(y)
}

/// Backward solve of `Y_t = c + g(t, Y_t, Z_t, K_t) dt - dkappa_t` with
/// `Y_T = terminal`. Only the terminal layer of `terminal` is read.
pub fn solve_bsde<T: Scalar>(
    lattice: &DefaultLattice<T>,
    g: &Driver<T>,
    terminal: &AdaptedField<T>,
    fv_adjustment: Option<&AdaptedField<T>>,
) -> Result<BsdeSolution<T>> {
    check_contraction(g.lipschitz(), lattice.dt())?;
    if let Some(fv) = fv_adjustment {
        fv.check_len(lattice)?;
        fv.check_finite("fv_adjustment")?;
    }
    let mut y = terminal_field(lattice, terminal)?;
    let (z, k) = backward(lattice, &mut y, |id, rep, _| {
        let dkappa = fv_adjustment.map_or(T::zero(), |fv| fv[id]);
        implicit_step(lattice, g, id, rep, dkappa)
    })?;
    Ok(BsdeSolution { y, z, k })
}

/// `E^g_{t, tau}(payoff_tau)` at every node: `Y = payoff` on nodes flagged by
/// `tau`, the BSDE step elsewhere.
pub fn evaluate_expectation<T: Scalar>(
    lattice: &DefaultLattice<T>,
    g: &Driver<T>,
    tau: &StopRule,
    payoff: &AdaptedField<T>,
) -> Result<AdaptedField<T>> {
    Ok(expectation_with_parts(lattice, g, tau, payoff)?.y)
}

/// As [`evaluate_expectation`], also returning the representation fields.
pub fn expectation_with_parts<T: Scalar>(
    lattice: &DefaultLattice<T>,
    g: &Driver<T>,
    tau: &StopRule,
    payoff: &AdaptedField<T>,
) -> Result<BsdeSolution<T>> {
    check_contraction(g.lipschitz(), lattice.dt())?;
    check_rule(lattice, tau)?;
    let mut y = terminal_field(lattice, payoff)?;
    let (z, k) = backward(lattice, &mut y, |id, rep, _| {
        if tau.is_stop(id) {
            Ok(payoff[id])
        } else {
            implicit_step(lattice, g, id, rep, T::zero())
        }
    })?;
    Ok(BsdeSolution { y, z, k })
}

pub(crate) fn check_rule<T: Scalar>(lattice: &DefaultLattice<T>, rule: &StopRule) -> Result<()> {
    if rule.len() == lattice.len() {
        Ok(())
    } else {
        Err(Error::FieldSizeMismatch {
            expected: lattice.len(),
            got: rule.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{dual_driver, ControlProcess, controlled_driver};
    use crate::lattice::{build_lattice, DefaultTag, MarketParams};

    fn params(lambda0: f64) -> MarketParams<f64> {
        MarketParams::constant(0.03, 0.05, 0.2, -0.3, lambda0, 1.0, 100.0)
    }

    #[test]
    fn representation_of_basis_values() {
        let lat = build_lattice(params(0.1), 4).unwrap();
        let root = lat.root();
        let br = lat.branches(root).to_vec();
        let (c, z, k) = represent_step(&lat, root, &[7.0, 7.0, 7.0]).unwrap();
        assert!((c - 7.0).abs() < 1e-14 && z.abs() < 1e-14 && k.abs() < 1e-14);
        let dm: Vec<f64> = br.iter().map(|b| b.dm).collect();
        let (c, z, k) = represent_step(&lat, root, &dm).unwrap();
        assert!(c.abs() < 1e-15 && z.abs() < 1e-15 && (k - 1.0).abs() < 1e-15);
        let dw: Vec<f64> = br.iter().map(|b| b.dw).collect();
        let (c, z, k) = represent_step(&lat, root, &dw).unwrap();
        assert!(c.abs() < 1e-15 && (z - 1.0).abs() < 1e-15 && k.abs() < 1e-15);
    }

    #[test]
    fn representation_is_exact_and_centred() {
        let lat = build_lattice(params(0.1), 4).unwrap();
        for id in lat.node_ids().filter(|id| !lat.is_terminal(*id)) {
            let br = lat.branches(id);
            let vals: Vec<f64> = (0..br.len()).map(|i| (i as f64 + 1.3).powi(2)).collect();
            let (c, z, k) = represent_step(&lat, id, &vals).unwrap();
            let mean: f64 = br.iter().zip(&vals).map(|(b, v)| b.prob * v).sum();
            assert!((c - mean).abs() < 1e-13);
            for (b, v) in br.iter().zip(&vals) {
                assert!((c + z * b.dw + k * b.dm - v).abs() < 1e-13);
            }
            if !lat.state(id).tag.is_alive() {
                assert_eq!(k, 0.0);
            }
        }
    }

    #[test]
    fn representation_rejects_bad_input() {
        let lat = build_lattice(params(0.1), 2).unwrap();
        assert!(matches!(
            represent_step(&lat, lat.root(), &[1.0, 2.0]),
            Err(Error::FieldSizeMismatch { .. })
        ));
        let mut br = lat.branches(lat.root()).to_vec();
        br[2].dw = br[1].dw;
        br[2].dm = br[1].dm;
        assert!(matches!(
            represent_branches(NodeId(0), &br, &[1.0, 2.0, 3.0]),
            Err(Error::SingularSystem { node: 0 })
        ));
    }

    #[test]
    fn constant_terminal_with_zero_driver() {
        let lat = build_lattice(params(0.1), 6).unwrap();
        let sol = solve_bsde(&lat, &Driver::zero(), &AdaptedField::constant(&lat, 5.0), None).unwrap();
        for id in lat.node_ids() {
            assert!((sol.y[id] - 5.0).abs() < 1e-13);
            assert!(sol.z[id].abs() < 1e-12 && sol.k[id].abs() < 1e-12);
        }
    }

    #[test]
    fn discounting_closed_form() {
        let lat = build_lattice(params(0.0), 10).unwrap();
        let g = Driver::new("disc", 0.03, |_, y: f64, _, _| -0.03 * y);
        let sol = solve_bsde(&lat, &g, &AdaptedField::constant(&lat, 1.0), None).unwrap();
        let expected = 1.003f64.powi(-10);
        assert!((sol.y[lat.root()] - expected).abs() < 1e-13);
        assert!((expected - 0.970_489_117_4).abs() < 1e-10);
    }

    #[test]
    fn default_probability_two_steps() {
        let lat = build_lattice(MarketParams { horizon: 0.2, ..params(0.1) }, 2).unwrap();
        let terminal = AdaptedField::from_fn(&lat, |_, st, _| if st.tag.is_alive() { 0.0 } else { 1.0 });
        let sol = solve_bsde(&lat, &Driver::zero(), &terminal, None).unwrap();
        assert!((sol.y[lat.root()] - 0.0199).abs() < 1e-15);
    }

    #[test]
    fn contraction_is_enforced() {
        let lat = build_lattice(params(0.1), 2).unwrap();
        let g = Driver::new("steep", 2.0, |_, y: f64, _, _| 2.0 * y);
        assert!(matches!(
            solve_bsde(&lat, &g, &AdaptedField::constant(&lat, 1.0), None),
            Err(Error::StepContractionFailure { .. })
        ));
    }

    #[test]
    fn fv_adjustment_shifts_value() {
        let lat = build_lattice(params(0.1), 5).unwrap();
        let fv = AdaptedField::from_fn(&lat, |_, st, _| if st.step == 0 { 0.25 } else { 0.0 });
        let base = solve_bsde(&lat, &Driver::zero(), &AdaptedField::constant(&lat, 1.0), None).unwrap();
        let adj = solve_bsde(&lat, &Driver::zero(), &AdaptedField::constant(&lat, 1.0), Some(&fv)).unwrap();
        assert!((base.y[lat.root()] - adj.y[lat.root()] - 0.25).abs() < 1e-14);
    }

    #[test]
    fn expectation_frozen_at_stops() {
        let lat = build_lattice(params(0.1), 6).unwrap();
        let payoff = AdaptedField::put(&lat, 100.0);
        let g = dual_driver(&Driver::linear_wealth(lat.params()));
        let y = evaluate_expectation(&lat, &g, &StopRule::immediately(&lat), &payoff).unwrap();
        assert_eq!(y, payoff);
        let tau = StopRule::at_step(&lat, 3);
        let y = evaluate_expectation(&lat, &g, &tau, &payoff).unwrap();
        for id in lat.node_ids().filter(|id| tau.is_stop(*id)) {
            assert_eq!(y[id], payoff[id]);
        }
    }

    #[test]
    fn controlled_expectation_post_default_ignores_control() {
        let lat = build_lattice(params(0.1), 6).unwrap();
        let payoff = AdaptedField::put(&lat, 100.0);
        let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
        let tau = StopRule::at_terminal(&lat);
        let a = evaluate_expectation(&lat, &fbar, &tau, &payoff).unwrap();
        let g = controlled_driver(&fbar, &ControlProcess::constant(5.0), lat.params()).unwrap();
        let b = evaluate_expectation(&lat, &g, &tau, &payoff).unwrap();
        for id in lat.node_ids() {
            if matches!(lat.state(id).tag, DefaultTag::DefaultedAt { .. }) {
                assert_eq!(a[id], b[id]);
            }
        }
    }
}
