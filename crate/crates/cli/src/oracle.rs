//! Binomial backward induction for the default-free market, written against
//! the tree alone so it can cross-check the BSDE solvers.

/// American option value on the tree with up/down factors
/// `1 + mu dt +- sigma sqrt(dt)` and one-period growth `1 + r dt`.
pub fn crr_american(r: f64, mu: f64, sigma: f64, s0: f64, horizon: f64, n: usize, payoff: impl Fn(f64) -> f64) -> f64 {
    let dt = horizon / n as f64;
    let u = 1.0 + mu * dt + sigma * dt.sqrt();
    let d = 1.0 + mu * dt - sigma * dt.sqrt();
    let growth = 1.0 + r * dt;
    let q = (growth - d) / (u - d);
    let spot = |k: usize, ups: usize| s0 * u.powi(ups as i32) * d.powi((k - ups) as i32);
    let mut v: Vec<f64> = (0..=n).map(|i| payoff(spot(n, i))).collect();
    for k in (0..n).rev() {
        for i in 0..=k {
            let cont = (q * v[i + 1] + (1.0 - q) * v[i]) / growth;
            v[i] = cont.max(payoff(spot(k, i)));
        }
        v.truncate(k + 1);
    }
    v[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_step_put_by_hand() {
        // u = 1.25, d = 0.85, growth 1.05, q = 0.5
        let v = crr_american(0.05, 0.05, 0.2, 100.0, 1.0, 1, |s| (100.0 - s).max(0.0));
        assert!((v - 7.5 / 1.05).abs() < 1e-12);
    }

    #[test]
    fn deep_in_the_money_put_is_exercised() {
        let v = crr_american(0.03, 0.05, 0.2, 10.0, 1.0, 50, |s| (100.0 - s).max(0.0));
        assert_eq!(v, 90.0);
    }
}
