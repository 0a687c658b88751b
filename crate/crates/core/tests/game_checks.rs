//! Structural checks of the buyer's price on the reference default market.

use bsde_game::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn ref1(n: usize) -> Lattice {
    build_lattice(MarketParams::constant(0.03, 0.05, 0.2, -0.3, 0.1, 1.0, 100.0), n).unwrap()
}

fn solve(lat: &Lattice, grid: &Grid) -> (Game, DriverF64, Field) {
    let fbar = dual_driver(&Driver::linear_wealth(lat.params()));
    let put = AdaptedField::put(lat, 100.0);
    let sol = solve_buyer_price(lat, &fbar, &put, grid).unwrap();
    (sol, fbar, put)
}

#[test]
fn regression_value_and_sandwich() {
    let lat = ref1(50);
    let (sol, fbar, put) = solve(&lat, &NuGrid::default());
    assert!((sol.root_value() - 6.758721814986).abs() < 1e-9, "{}", sol.root_value());
    let european = lower_value(&lat, &fbar, &NuGrid::default(), &StopRule::at_terminal(&lat), &put).unwrap();
    let unconstrained = solve_rbsde_full(&lat, &fbar, &put).unwrap().y[lat.root()];
    assert!(european <= sol.root_value() && sol.root_value() <= unconstrained);
}

#[test]
fn value_is_a_submartingale_for_every_control() {
    let lat = ref1(20);
    let grid = NuGrid::default();
    let (sol, fbar, put) = solve(&lat, &grid);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let windows: Vec<Window> = (0..20).map(|_| Window::random(&lat, 0.3, 0.5, &mut rng)).collect();
    for nu in grid.levels() {
        let g = controlled_driver(&fbar, &ControlProcess::constant(*nu), lat.params()).unwrap();
        let rep = check_submartingale(&lat, &sol.ybar, &g, &put, &windows).unwrap();
        assert!(rep.passes(1e-9), "nu = {nu}: {rep:?}");
    }
}

#[test]
fn strictly_binding_controls_charge_a_prime_only() {
    let lat = ref1(25);
    let (sol, fbar, _) = solve(&lat, &NuGrid::default());
    let mut seen = 0;
    for id in lat.node_ids().filter(|id| !lat.is_terminal(*id) && !sol.on_obstacle(*id)) {
        let (c, z, k) = represent_step(&lat, id, &lat.branches(id).iter().map(|b| sol.ybar[b.child]).collect::<Vec<_>>()).unwrap();
        let neutral = implicit_step(&lat, &fbar, id, (c, z, k), 0.0).unwrap();
        if sol.nu_star[id] != 0.0 && sol.continuation[id] < neutral - 1e-12 {
            seen += 1;
            assert!(sol.a_prime_inc[id] > 0.0);
            assert_eq!(sol.a_inc[id], 0.0);
        }
    }
    assert!(seen > 0);
}

#[test]
fn predictable_part_reconstructs_the_value() {
    let lat = ref1(30);
    let (sol, fbar, _) = solve(&lat, &NuGrid::default());
    for id in lat.node_ids().filter(|id| !lat.is_terminal(*id)) {
        let br = lat.branches(id);
        let c: f64 = br.iter().map(|b| b.prob * sol.ybar[b.child]).sum();
        let drift = fbar.eval(&lat.context(id), sol.ybar[id], sol.zbar[id], 0.0) * lat.dt();
        let rebuilt = c + drift + sol.a_inc[id] - sol.a_prime_inc[id] + sol.off_obstacle_residual[id];
        assert!((rebuilt - sol.ybar[id]).abs() < 1e-12);
        for (b, branch) in lat.branch_range(id).zip(br.iter()) {
            let child = sol.ybar[id] - drift + sol.zbar[id] * branch.dms - sol.kbar_inc[b] + sol.kbar_prime_inc[b];
            assert!((child - sol.ybar[branch.child]).abs() < 1e-12);
        }
    }
}

#[test]
fn maximality_against_pushed_subsolutions() {
    let lat = ref1(20);
    let grid = NuGrid::default();
    let (sol, fbar, put) = solve(&lat, &grid);
    for extra in [1e-6, 1e-3, 0.05] {
        let sub = perturbed_subsolution(&lat, &fbar, &grid, &put, &AdaptedField::constant(&lat, extra)).unwrap();
        assert!(sub.le(&sol.ybar));
        assert!(sub[lat.root()] < sol.root_value());
    }
}

#[test]
fn interchange_gap_is_small_and_vanishes_at_zero() {
    let lat = ref1(25);
    let grid = NuGrid::default();
    let (sol, fbar, put) = solve(&lat, &grid);
    let gap = |eps: f64| sol.root_value() - lower_value(&lat, &fbar, &grid, &epsilon_stop(&sol, &lat, eps), &put).unwrap();
    assert_eq!(gap(0.0), 0.0);
    let (g1, g5) = (gap(0.01), gap(0.05));
    assert!(0.0 <= g1 && g1 < g5 && g5 <= 0.05);
}

#[test]
fn per_step_rate_and_two_rate_driver() {
    let mut p = MarketParams::constant(0.03, 0.05, 0.2, -0.3, 0.1, 1.0, 100.0);
    p.r = Coefficient::PerStep((0..20).map(|k| 0.01 + 0.002 * k as f64).collect());
    let lat = build_lattice(p, 20).unwrap();
    let put = AdaptedField::put(&lat, 100.0);
    let lin = dual_driver(&Driver::linear_wealth(lat.params()));
    let two = dual_driver(&Driver::two_rate(lat.params(), 0.08).unwrap());
    let a = solve_buyer_price(&lat, &lin, &put, &NuGrid::default()).unwrap();
    let b = solve_buyer_price(&lat, &two, &put, &NuGrid::default()).unwrap();
    // fbar for the two-rate market lies below the linear one on y >= 0
    assert!(b.ybar.le(&a.ybar));
    assert!(b.root_value() < a.root_value());
}
