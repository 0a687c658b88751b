//! Lambda-admissible drivers `g(t, y, z, k)`, the buyer's dual driver
//! `fbar(t, y, z) = -f(t, -y, -z)`, the controlled family
//! `fbar^nu = fbar + nu * lambda * (k - beta/sigma * z)` and sampled
//! admissibility checks.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::field::AdaptedField;
use crate::lattice::{DefaultLattice, MarketParams, NodeId, StepContext};
use crate::scalar::{neg, pos, Scalar};

pub type DriverFn<T> = dyn Fn(&StepContext<T>, T, T, T) -> T + Send + Sync;

/// Comparison certificate `gamma(t, y, z, k1, k2)`.
pub type CertificateFn<T> = dyn Fn(&StepContext<T>, T, T, T, T) -> T + Send + Sync;

/// A driver together with its declared lambda-constant and, optionally, a
/// comparison certificate.
#[derive(Clone)]
pub struct Driver<T> {
    eval: Arc<DriverFn<T>>,
    lipschitz: T,
    certificate: Option<Arc<CertificateFn<T>>>,
    label: String,
}

impl<T: Scalar> fmt::Debug for Driver<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("label", &self.label)
            .field("lipschitz", &self.lipschitz)
            .field("certificate", &self.certificate.is_some())
            .finish()
    }
}

impl<T: Scalar> Driver<T> {
    pub fn new(
        label: impl Into<String>,
        lipschitz: T,
        eval: impl Fn(&StepContext<T>, T, T, T) -> T + Send + Sync + 'static,
    ) -> Self {
        Self {
            eval: Arc::new(eval),
            lipschitz,
            certificate: None,
            label: label.into(),
        }
    }

    pub fn with_certificate(
        mut self,
        gamma: impl Fn(&StepContext<T>, T, T, T, T) -> T + Send + Sync + 'static,
    ) -> Self {
        self.certificate = Some(Arc::new(gamma));
        self
    }

    /// Certificate `gamma = 0`, valid for drivers that ignore `k`.
    pub fn k_free(self) -> Self {
        self.with_certificate(|_, _, _, _, _| T::zero())
    }

    /// Overrides the declared lambda-constant.
    pub fn with_lipschitz(mut self, lipschitz: T) -> Self {
        self.lipschitz = lipschitz;
        self
    }

    #[inline]
    pub fn eval(&self, ctx: &StepContext<T>, y: T, z: T, k: T) -> T {
        (self.eval)(ctx, y, z, k)
    }

    pub fn lipschitz(&self) -> T {
        self.lipschitz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn has_certificate(&self) -> bool {
        self.certificate.is_some()
    }

    pub fn certificate(&self, ctx: &StepContext<T>, y: T, z: T, k1: T, k2: T) -> Option<T> {
        self.certificate.as_ref().map(|g| g(ctx, y, z, k1, k2))
    }

    /// `g = 0`.
    pub fn zero() -> Self {
        Self::new("zero", T::zero(), |_, _, _, _| T::zero()).k_free()
    }

    /// Linear market wealth driver `f(t, y, z) = -r_t y - theta_t z` with
    /// `theta = (mu - r) / sigma`.
    pub fn linear_wealth(params: &MarketParams<T>) -> Self {
        let c = params.sup_abs_r() + params.sup_abs_theta();
        Self::new("linear", c, |ctx, y, z, _| {
            let theta = (ctx.mu - ctx.r) / ctx.sigma;
            -ctx.r * y - theta * z
        })
        .k_free()
    }

    /// Wealth driver with a borrowing rate `R >= r`:
    /// `f(t, y, z) = -r_t y^+ + R y^- - theta_t z`.
    pub fn two_rate(params: &MarketParams<T>, borrow_rate: T) -> Result<Self> {
        if !(borrow_rate.is_finite() && borrow_rate >= params.sup_abs_r()) {
            return Err(Error::InvalidParams {
                field: "borrow_rate",
                reason: format!("{borrow_rate} must be finite and at least every lending rate"),
            });
        }
        let c = params.sup_abs_r().max(borrow_rate) + params.sup_abs_theta();
        Ok(Self::new("two_rate", c, move |ctx, y, z, _| {
            let theta = (ctx.mu - ctx.r) / ctx.sigma;
            -ctx.r * pos(y) + borrow_rate * neg(y) - theta * z
        })
        .k_free())
    }
}

/// Buyer's dual driver `gbar(t, y, z, k) = -g(t, -y, -z, -k)`; for a wealth
/// driver this is `fbar(t, y, z) = -f(t, -y, -z)`. The map is an involution
/// and keeps the lambda-constant.
pub fn dual_driver<T: Scalar>(f: &Driver<T>) -> Driver<T> {
    let inner = f.eval.clone();
    let mut out = Driver::new(format!("dual({})", f.label), f.lipschitz, move |ctx, y, z, k| {
        -inner(ctx, -y, -z, -k)
    });
    if let Some(cert) = f.certificate.clone() {
        // gbar(k1) - gbar(k2) = g(-k2) - g(-k1) >= gamma(-k2, -k1) (k1 - k2) lambda
        out = out.with_certificate(move |ctx, y, z, k1, k2| cert(ctx, -y, -z, -k2, -k1));
    }
    out
}

/// `nu * lambda * (k - beta/sigma * z)`, the control's contribution to a
/// controlled driver. Returns exactly `base` when `lambda = 0`.
#[inline]
pub fn controlled_value<T: Scalar>(base: T, nu: T, ctx: &StepContext<T>, z: T, k: T) -> T {
    if ctx.lambda > T::zero() {
        base + nu * ctx.lambda * (k - ctx.beta / ctx.sigma * z)
    } else {
        base
    }
}

#[derive(Debug, Clone, PartialEq)]
enum ControlValues<T> {
    Constant(T),
    PerNode(AdaptedField<T>),
}

/// Bounded control `nu > -1`, constant or one value per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlProcess<T> {
    values: ControlValues<T>,
    upper: T,
}

impl<T: Scalar> ControlProcess<T> {
    /// Constant control, with `nu_max = max(nu, 0)`.
    pub fn constant(nu: T) -> Self {
        Self {
            values: ControlValues::Constant(nu),
            upper: nu.max(T::zero()),
        }
    }

    /// Node-dependent control, with `nu_max` the field maximum.
    pub fn per_node(values: AdaptedField<T>) -> Self {
        let upper = values.as_slice().iter().fold(T::zero(), |m, v| m.max(*v));
        Self {
            values: ControlValues::PerNode(values),
            upper,
        }
    }

    /// Declares a larger `nu_max` than the values need.
    pub fn with_upper(mut self, upper: T) -> Self {
        self.upper = upper;
        self
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    #[inline]
    pub fn at(&self, node: NodeId) -> T {
        match &self.values {
            ControlValues::Constant(v) => *v,
            ControlValues::PerNode(f) => f[node],
        }
    }

    /// `sup |nu|`.
    pub fn sup_abs(&self) -> T {
        match &self.values {
            ControlValues::Constant(v) => v.abs(),
            ControlValues::PerNode(f) => f.as_slice().iter().fold(T::zero(), |m, v| m.max(v.abs())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let upper = self.upper;
        let bad = |v: T| !(v.is_finite() && v > -T::one() && v <= upper);
        let offending = match &self.values {
            ControlValues::Constant(v) => bad(*v).then_some(*v),
            ControlValues::PerNode(f) => f.as_slice().iter().copied().find(|v| bad(*v)),
        };
        match offending {
            Some(v) => Err(Error::InvalidControl {
                value: v.to_f64().unwrap_or(f64::NAN),
                upper: upper.to_f64().unwrap_or(f64::NAN),
            }),
            None => Ok(()),
        }
    }
}

/// Controlled dual driver `fbar^nu(t, y, z, k) = fbar(t, y, z) + nu_t lambda_t (k - beta_t/sigma_t z)`.
///
/// Its lambda-constant is `C + sup|nu| * sup_t max(lambda |beta|/sigma, sqrt(lambda))`
/// and its comparison certificate is `gamma = nu`.
pub fn controlled_driver<T: Scalar>(
    fbar: &Driver<T>,
    nu: &ControlProcess<T>,
    params: &MarketParams<T>,
) -> Result<Driver<T>> {
    nu.validate()?;
    let c = fbar.lipschitz + nu.sup_abs().max(nu.upper.abs()) * params.sup_control_weight();
    let inner = fbar.eval.clone();
    let control = nu.clone();
    let gamma = nu.clone();
    Ok(Driver::new(format!("{}^nu", fbar.label), c, move |ctx, y, z, k| {
        controlled_value(inner(ctx, y, z, T::zero()), control.at(ctx.node), ctx, z, k)
    })
    .with_certificate(move |ctx, _, _, _, _| gamma.at(ctx.node)))
}

/// Sampling plan for [`admissibility_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpec<T> {
    pub points: usize,
    pub y_range: (T, T),
    pub z_range: (T, T),
    pub k_range: (T, T),
    pub seed: u64,
}

impl<T: Scalar> SampleSpec<T> {
    /// `points` samples with every coordinate in `[-half_width, half_width]`.
    pub fn symmetric(points: usize, half_width: T, seed: u64) -> Self {
        let r = (-half_width, half_width);
        Self {
            points,
            y_range: r,
            z_range: r,
            k_range: r,
            seed,
        }
    }
}

impl<T: Scalar> Default for SampleSpec<T> {
    fn default() -> Self {
        Self::symmetric(10_000, T::lit(10.0), 0)
    }
}

/// Worst cases found by [`admissibility_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdmissibilityReport<T> {
    pub declared_lipschitz: T,
    /// `max |g(a) - g(b)| / (|dy| + |dz| + sqrt(lambda)|dk|)` over sampled pairs.
    pub max_lipschitz_ratio: T,
    /// `max (gamma (k1 - k2) lambda - (g(k1) - g(k2)))^+`; zero without a certificate.
    pub max_comparison_violation: T,
    /// `gamma >= -1` and `|gamma sqrt(lambda)| <= C` on every sample.
    pub certificate_bounds_ok: bool,
    pub max_abs_at_origin: T,
}

impl<T: Scalar> AdmissibilityReport<T> {
    pub const COMPARISON_TOL: f64 = 1e-12;

    pub fn lipschitz_ok(&self) -> bool {
        let slack = T::lit(1e-12) * self.declared_lipschitz.max(T::one());
        self.max_lipschitz_ratio <= self.declared_lipschitz + slack
    }

    pub fn comparison_ok(&self) -> bool {
        self.certificate_bounds_ok && self.max_comparison_violation <= T::lit(Self::COMPARISON_TOL)
    }

    pub fn passes(&self) -> bool {
        self.lipschitz_ok() && self.comparison_ok() && self.max_abs_at_origin.is_finite()
    }
}

fn ratio<T: Scalar>(num: T, den: T) -> T {
    if den > T::zero() {
        num / den
    } else if num == T::zero() {
        T::zero()
    } else {
        T::infinity()
    }
}

/// Samples driver quadruples on non-terminal nodes of `lattice` and reports
/// the worst Lipschitz ratio and comparison violation.
pub fn admissibility_check<T: Scalar>(
    g: &Driver<T>,
    lattice: &DefaultLattice<T>,
    spec: &SampleSpec<T>,
) -> AdmissibilityReport<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let interior = lattice.len() - lattice.layer(lattice.n_steps()).len();
    let draw = |rng: &mut ChaCha8Rng, (lo, hi): (T, T)| lo + (hi - lo) * T::lit(rng.gen::<f64>());
    let mut report = AdmissibilityReport {
        declared_lipschitz: g.lipschitz,
        max_lipschitz_ratio: T::zero(),
        max_comparison_violation: T::zero(),
        certificate_bounds_ok: true,
        max_abs_at_origin: T::zero(),
    };
    let eps = T::lit(1e-12);
    for _ in 0..spec.points.max(1) {
        let node = NodeId(rng.gen_range(0..interior.max(1)));
        let ctx = lattice.context(node);
        let sl = ctx.lambda.sqrt();
        let (y1, y2) = (draw(&mut rng, spec.y_range), draw(&mut rng, spec.y_range));
        let (z1, z2) = (draw(&mut rng, spec.z_range), draw(&mut rng, spec.z_range));
        let (k1, k2) = (draw(&mut rng, spec.k_range), draw(&mut rng, spec.k_range));

        let joint = ratio(
            (g.eval(&ctx, y1, z1, k1) - g.eval(&ctx, y2, z2, k2)).abs(),
            (y1 - y2).abs() + (z1 - z2).abs() + sl * (k1 - k2).abs(),
        );
        let k_only = ratio(
            (g.eval(&ctx, y1, z1, k1) - g.eval(&ctx, y1, z1, k2)).abs(),
            sl * (k1 - k2).abs(),
        );
        let z_only = ratio(
            (g.eval(&ctx, y1, z1, k1) - g.eval(&ctx, y1, z2, k1)).abs(),
            (z1 - z2).abs(),
        );
        let y_only = ratio(
            (g.eval(&ctx, y1, z1, k1) - g.eval(&ctx, y2, z1, k1)).abs(),
            (y1 - y2).abs(),
        );
        report.max_lipschitz_ratio = report
            .max_lipschitz_ratio
            .max(joint)
            .max(k_only)
            .max(z_only)
            .max(y_only);

        report.max_abs_at_origin = report
            .max_abs_at_origin
            .max(g.eval(&ctx, T::zero(), T::zero(), T::zero()).abs());

        if let Some(gamma) = g.certificate(&ctx, y1, z1, k1, k2) {
            if !(gamma >= -T::one() - eps && (gamma * sl).abs() <= g.lipschitz + eps) {
                report.certificate_bounds_ok = false;
            }
            let diff = g.eval(&ctx, y1, z1, k1) - g.eval(&ctx, y1, z1, k2);
            let violation = gamma * (k1 - k2) * ctx.lambda - diff;
            report.max_comparison_violation = report.max_comparison_violation.max(violation);
        }
    }
    report
}
