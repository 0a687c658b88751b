//! Discrete default lattice carrying the Brownian motion `W`, the single-jump
//! default indicator `N` with intensity `lambda`, its compensated martingale
//! `M = N - int lambda dt`, the tradable martingale `m^S = W + int beta/sigma dM`
//! and the risky asset price `S`.
//!
//! Alive nodes branch three ways:
//!
//! ```text
//! default  p = lambda*dt          dW = 0         dM = 1 - lambda*dt
//! up       p = (1-lambda*dt)/2    dW = +sqrt(dt) dM = -lambda*dt
//! down     p = (1-lambda*dt)/2    dW = -sqrt(dt) dM = -lambda*dt
//! ```
//!
//! and defaulted nodes branch two ways (`p = 1/2`, `dW = +-sqrt(dt)`, `dM = 0`).
//! With three branches the span of `{1, dW, dM}` matches the branch count, so
//! the one-step martingale representation is exact.
//!
//! An alive up-move carries the compensator drift `-beta*lambda*dt` and a
//! post-default up-move does not, so after default the price depends on how
//! the Brownian moves split around the default step. A defaulted node is
//! therefore keyed by the default step and the net up-moves at default as well
//! as by `(step, j)`. The lattice has `(n+1)(n+2)/2` alive nodes and
//! `C(n+3, 4)` defaulted ones.
//!
//! Branches and node states are computed from the node index; only prices are
//! stored.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A market coefficient: constant in time or one value per time step.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficient<T> {
    Constant(T),
    PerStep(Vec<T>),
}

impl<T: Scalar> Coefficient<T> {
    /// Value used on the step `[t_step, t_step + dt)`. Steps past the end of a
    /// per-step array reuse the last entry (only terminal nodes ask for them).
    pub fn at(&self, step: usize) -> T {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::PerStep(vs) => vs[step.min(vs.len() - 1)],
        }
    }

    fn values(&self) -> &[T] {
        match self {
            Coefficient::Constant(v) => std::slice::from_ref(v),
            Coefficient::PerStep(vs) => vs,
        }
    }

    fn check(&self, field: &'static str, n_steps: usize, ok: impl Fn(T) -> bool, rule: &str) -> Result<()> {
        if let Coefficient::PerStep(vs) = self {
            if vs.len() != n_steps {
                return Err(Error::InvalidParams {
                    field,
                    reason: format!("per-step array has length {} but n_steps = {}", vs.len(), n_steps),
                });
            }
        }
        for (i, v) in self.values().iter().enumerate() {
            if !v.is_finite() || !ok(*v) {
                return Err(Error::InvalidParams {
                    field,
                    reason: format!("value {v} at index {i} violates {rule}"),
                });
            }
        }
        Ok(())
    }

    fn sup_abs(&self) -> T {
        self.values().iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }
}

impl<T> From<T> for Coefficient<T> {
    fn from(v: T) -> Self {
        Coefficient::Constant(v)
    }
}

/// Coefficients of the market: riskless rate, drift, volatility, default jump
/// size and pre-default intensity, plus horizon and initial price.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketParams<T> {
    pub r: Coefficient<T>,
    pub mu: Coefficient<T>,
    pub sigma: Coefficient<T>,
    pub beta: Coefficient<T>,
    pub lambda0: Coefficient<T>,
    pub horizon: T,
    pub s0: T,
}

impl<T: Scalar> MarketParams<T> {
    /// Market with time-constant coefficients.
    pub fn constant(r: T, mu: T, sigma: T, beta: T, lambda0: T, horizon: T, s0: T) -> Self {
        Self {
            r: r.into(),
            mu: mu.into(),
            sigma: sigma.into(),
            beta: beta.into(),
            lambda0: lambda0.into(),
            horizon,
            s0,
        }
    }

    pub fn validate(&self, n_steps: usize) -> Result<()> {
        if n_steps == 0 {
            return Err(Error::InvalidParams {
                field: "n_steps",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.horizon.is_finite() && self.horizon > T::zero()) {
            return Err(Error::InvalidParams {
                field: "horizon",
                reason: format!("{} must be finite and positive", self.horizon),
            });
        }
        if !(self.s0.is_finite() && self.s0 > T::zero()) {
            return Err(Error::InvalidParams {
                field: "s0",
                reason: format!("{} must be finite and positive", self.s0),
            });
        }
        let any = |_: T| true;
        self.r.check("r", n_steps, any, "finiteness")?;
        self.mu.check("mu", n_steps, any, "finiteness")?;
        self.sigma.check("sigma", n_steps, |v| v > T::zero(), "sigma > 0")?;
        self.beta.check("beta", n_steps, |v| v > -T::one(), "beta > -1")?;
        self.lambda0.check("lambda0", n_steps, |v| v >= T::zero(), "lambda0 >= 0")?;
        Ok(())
    }

    /// Market price of Brownian risk `(mu - r) / sigma` on a step.
    pub fn theta_at(&self, step: usize) -> T {
        (self.mu.at(step) - self.r.at(step)) / self.sigma.at(step)
    }

    /// `sup_t |r_t|`.
    pub fn sup_abs_r(&self) -> T {
        self.r.sup_abs()
    }

    /// Number of distinct coefficient steps: the longest per-step array, or 1.
    fn coefficient_steps(&self) -> usize {
        [&self.r, &self.mu, &self.sigma, &self.beta, &self.lambda0]
            .iter()
            .map(|c| c.values().len())
            .max()
            .unwrap_or(1)
    }

    /// `sup_t |theta_t|`.
    pub fn sup_abs_theta(&self) -> T {
        (0..self.coefficient_steps()).fold(T::zero(), |m, k| m.max(self.theta_at(k).abs()))
    }

    /// `sup_t max(lambda |beta| / sigma, sqrt(lambda))`: the factor a control
    /// `nu` multiplies into the Lipschitz constant of the controlled driver.
    pub fn sup_control_weight(&self) -> T {
        (0..self.coefficient_steps()).fold(T::zero(), |m, k| {
            let lambda = self.lambda0.at(k);
            let zw = lambda * self.beta.at(k).abs() / self.sigma.at(k);
            m.max(zw.max(lambda.sqrt()))
        })
    }

    /// True when no default can ever occur.
    pub fn default_free(&self) -> bool {
        self.lambda0.values().iter().all(|l| *l == T::zero())
    }
}

/// Index of a node in a [`DefaultLattice`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

impl NodeId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// Default status of a node: still alive, or defaulted on the move into step
/// `step` with `j` net Brownian up-moves at that time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DefaultTag {
    Alive,
    DefaultedAt { step: usize, j: i64 },
}

impl DefaultTag {
    /// Default step, 0 while alive.
    pub fn code(self) -> usize {
        match self {
            DefaultTag::Alive => 0,
            DefaultTag::DefaultedAt { step, .. } => step,
        }
    }

    pub fn is_alive(self) -> bool {
        matches!(self, DefaultTag::Alive)
    }
}

/// `(step, j, tag)` key of a node; `j` is the net number of Brownian up-moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeState {
    pub step: usize,
    pub j: i64,
    pub tag: DefaultTag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Default,
    Up,
    Down,
}

/// One outgoing branch of a node with its martingale increments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch<T> {
    pub kind: Move,
    pub prob: T,
    pub dw: T,
    pub dn: T,
    pub dm: T,
    /// Increment of `m^S = W + int beta/sigma dM`.
    pub dms: T,
    pub child: NodeId,
}

/// The (two or three) branches of a node, by value.
#[derive(Debug, Clone, Copy)]
pub struct Branches<T> {
    items: [Branch<T>; 3],
    len: usize,
}

impl<T> std::ops::Deref for Branches<T> {
    type Target = [Branch<T>];

    fn deref(&self) -> &[Branch<T>] {
        &self.items[..self.len]
    }
}

impl<'a, T> IntoIterator for &'a Branches<T> {
    type Item = &'a Branch<T>;
    type IntoIter = std::slice::Iter<'a, Branch<T>>;

    fn into_iter(self) -> Self::IntoIter {
        self.items[..self.len].iter()
    }
}

/// Everything a driver may depend on at a node: the predictable data of the step
/// leaving the node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepContext<T> {
    pub node: NodeId,
    pub step: usize,
    pub t: T,
    pub dt: T,
    /// Default intensity on the step: `lambda0` while alive, zero after default.
    pub lambda: T,
    pub r: T,
    pub mu: T,
    pub sigma: T,
    pub beta: T,
}

/// Per-step branch data shared by all nodes of a layer.
#[derive(Debug, Clone, Copy)]
struct StepData<T> {
    lambda_dt: T,
    p_move: T,
    sqrt_dt: T,
    ratio: T,
    /// Branches leaving an alive node of this layer (2 or 3).
    alive_width: usize,
}

/// Defaulted block `(k, m)`: nodes of layer `k` that defaulted into step `m`.
#[derive(Debug, Clone, Copy)]
struct Block {
    m: usize,
    /// Offset of the block within the layer's defaulted part.
    start: usize,
}

/// Immutable default lattice.
#[derive(Debug, Clone)]
pub struct DefaultLattice<T> {
    params: MarketParams<T>,
    n_steps: usize,
    dt: T,
    steps: Vec<StepData<T>>,
    layer_offsets: Vec<usize>,
    layer_branch_offsets: Vec<usize>,
    /// Defaulted blocks of each layer, ascending in `m`.
    blocks: Vec<Vec<Block>>,
    prices: Vec<T>,
}

/// Builds the lattice for `params` with `n_steps` equal time steps.
pub fn build_lattice<T: Scalar>(params: MarketParams<T>, n_steps: usize) -> Result<DefaultLattice<T>> {
    params.validate(n_steps)?;
    let dt = params.horizon / T::lit(n_steps as f64);
    let sqrt_dt = dt.sqrt();

    let mut steps = Vec::with_capacity(n_steps);
    for k in 0..n_steps {
        let lambda_dt = params.lambda0.at(k) * dt;
        if lambda_dt >= T::one() {
            return Err(Error::IntensityTooLarge {
                step: k,
                lambda_dt: lambda_dt.to_f64().unwrap_or(f64::NAN),
            });
        }
        // every branch factor must keep prices positive
        let (mu, sigma, beta) = (params.mu.at(k), params.sigma.at(k), params.beta.at(k));
        let base = T::one() + mu * dt;
        let mut factors = vec![
            base + sigma * sqrt_dt - beta * lambda_dt,
            base - sigma * sqrt_dt - beta * lambda_dt,
            base + sigma * sqrt_dt,
            base - sigma * sqrt_dt,
        ];
        if lambda_dt > T::zero() {
            factors.push(base + beta * (T::one() - lambda_dt));
        }
        if let Some(f) = factors.into_iter().find(|f| !(*f > T::zero())) {
            return Err(Error::NegativePriceFactor {
                step: k,
                factor: f.to_f64().unwrap_or(f64::NAN),
            });
        }
        steps.push(StepData {
            lambda_dt,
            p_move: (T::one() - lambda_dt) * T::lit(0.5),
            sqrt_dt,
            ratio: beta / sigma,
            alive_width: if lambda_dt > T::zero() { 3 } else { 2 },
        });
    }

    let mut blocks: Vec<Vec<Block>> = Vec::with_capacity(n_steps + 1);
    let mut layer_offsets = Vec::with_capacity(n_steps + 2);
    let mut layer_branch_offsets = Vec::with_capacity(n_steps + 2);
    let (mut offset, mut branch_offset) = (0usize, 0usize);
    for k in 0..=n_steps {
        let mut layer_blocks = Vec::new();
        let mut start = 0;
        for m in 1..=k {
            if steps[m - 1].lambda_dt > T::zero() {
                layer_blocks.push(Block { m, start });
                start += m * (k - m + 1);
            }
        }
        layer_offsets.push(offset);
        layer_branch_offsets.push(branch_offset);
        offset += (k + 1) + start;
        if k < n_steps {
            branch_offset += (k + 1) * steps[k].alive_width + 2 * start;
        }
        blocks.push(layer_blocks);
    }
    layer_offsets.push(offset);
    layer_branch_offsets.push(branch_offset);

    let mut lattice = DefaultLattice {
        params,
        n_steps,
        dt,
        steps,
        layer_offsets,
        layer_branch_offsets,
        blocks,
        prices: vec![T::nan(); offset],
    };
    lattice.fill_prices()?;
    Ok(lattice)
}

/// Branch data of `node`.
pub fn branch_increments<T: Scalar>(lattice: &DefaultLattice<T>, node: NodeId) -> Result<Branches<T>> {
    lattice.check_node(node)?;
    Ok(lattice.branches(node))
}

/// Risky asset price at `node`.
pub fn asset_price<T: Scalar>(lattice: &DefaultLattice<T>, node: NodeId) -> Result<T> {
    lattice.check_node(node)?;
    Ok(lattice.price(node))
}

/// Position of a node inside its layer.
#[derive(Debug, Clone, Copy)]
enum Slot {
    Alive { u: usize },
    /// Block index `bi`, alive up-moves `a` before default, up-moves `b` after.
    Defaulted { bi: usize, a: usize, b: usize },
}

impl<T: Scalar> DefaultLattice<T> {
    /// Forward pass: each child's price is the parent's times the branch
    /// factor; every additional parent must agree.
    fn fill_prices(&mut self) -> Result<()> {
        let dt = self.dt;
        self.prices[0] = self.params.s0;
        for idx in 0..self.prices.len() {
            let id = NodeId(idx);
            let k = self.step_of(id);
            if k == self.n_steps {
                continue;
            }
            let s = self.prices[idx];
            let (mu, sigma, beta) = (self.params.mu.at(k), self.params.sigma.at(k), self.params.beta.at(k));
            for br in self.branches(id).iter() {
                let factor = T::one() + mu * dt + sigma * br.dw + beta * br.dm;
                let candidate = s * factor;
                let child = &mut self.prices[br.child.0];
                if child.is_nan() {
                    *child = candidate;
                } else if (*child - candidate).abs() > T::recombination_tol(k + 1) * child.abs() {
                    return Err(Error::NonRecombining { step: k + 1 });
                }
            }
        }
        Ok(())
    }

    fn check_node(&self, node: NodeId) -> Result<()> {
        if node.0 < self.prices.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(node.0))
        }
    }

    #[inline]
    fn step_of(&self, node: NodeId) -> usize {
        self.layer_offsets.partition_point(|o| *o <= node.0) - 1
    }

    #[inline]
    fn locate(&self, node: NodeId) -> (usize, Slot) {
        let k = self.step_of(node);
        let p = node.0 - self.layer_offsets[k];
        if p <= k {
            return (k, Slot::Alive { u: p });
        }
        let q = p - (k + 1);
        let blocks = &self.blocks[k];
        let bi = blocks.partition_point(|b| b.start <= q) - 1;
        let width = k - blocks[bi].m + 1;
        let r = q - blocks[bi].start;
        (k, Slot::Defaulted { bi, a: r / width, b: r % width })
    }

    #[inline]
    fn alive_id(&self, k: usize, u: usize) -> NodeId {
        NodeId(self.layer_offsets[k] + u)
    }

    #[inline]
    fn defaulted_id(&self, k: usize, bi: usize, a: usize, b: usize) -> NodeId {
        let block = self.blocks[k][bi];
        NodeId(self.layer_offsets[k] + (k + 1) + block.start + a * (k - block.m + 1) + b)
    }

    /// Index of block `m` in layer `k`.
    #[inline]
    fn block_index(&self, k: usize, m: usize) -> Option<usize> {
        self.blocks[k].binary_search_by_key(&m, |b| b.m).ok()
    }

    pub fn params(&self) -> &MarketParams<T> {
        &self.params
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of nodes.
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// Total number of branches (size of a per-branch field).
    pub fn branch_count(&self) -> usize {
        self.layer_branch_offsets[self.n_steps + 1]
    }

    pub fn root(&self) -> NodeId {
        NodeId(0)
    }

    /// All node ids in index order (which is also time order).
    pub fn node_ids(&self) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator {
        (0..self.prices.len()).map(NodeId)
    }

    /// Node ids of time layer `step`.
    pub fn layer(&self, step: usize) -> impl DoubleEndedIterator<Item = NodeId> + ExactSizeIterator {
        (self.layer_offsets[step]..self.layer_offsets[step + 1]).map(NodeId)
    }

    pub fn state(&self, node: NodeId) -> NodeState {
        let (k, slot) = self.locate(node);
        match slot {
            Slot::Alive { u } => NodeState {
                step: k,
                j: 2 * u as i64 - k as i64,
                tag: DefaultTag::Alive,
            },
            Slot::Defaulted { bi, a, b } => {
                let m = self.blocks[k][bi].m;
                let jd = 2 * a as i64 - (m as i64 - 1);
                NodeState {
                    step: k,
                    j: jd + 2 * b as i64 - (k - m) as i64,
                    tag: DefaultTag::DefaultedAt { step: m, j: jd },
                }
            }
        }
    }

    pub fn price(&self, node: NodeId) -> T {
        self.prices[node.0]
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        node.0 >= self.layer_offsets[self.n_steps]
    }

    pub fn time(&self, node: NodeId) -> T {
        T::lit(self.step_of(node) as f64) * self.dt
    }

    /// Outgoing branches of `node` in the order default, up, down; empty at
    /// the horizon.
    pub fn branches(&self, node: NodeId) -> Branches<T> {
        let (k, slot) = self.locate(node);
        let blank = Branch {
            kind: Move::Up,
            prob: T::zero(),
            dw: T::zero(),
            dn: T::zero(),
            dm: T::zero(),
            dms: T::zero(),
            child: node,
        };
        let mut out = Branches {
            items: [blank; 3],
            len: 0,
        };
        if k == self.n_steps {
            return out;
        }
        let sd = self.steps[k];
        let half = T::lit(0.5);
        match slot {
            Slot::Alive { u } => {
                let dm = -sd.lambda_dt;
                if sd.lambda_dt > T::zero() {
                    let ddm = T::one() - sd.lambda_dt;
                    let bi = self.block_index(k + 1, k + 1).expect("default block exists");
                    out.items[0] = Branch {
                        kind: Move::Default,
                        prob: sd.lambda_dt,
                        dw: T::zero(),
                        dn: T::one(),
                        dm: ddm,
                        dms: sd.ratio * ddm,
                        child: self.defaulted_id(k + 1, bi, u, 0),
                    };
                    out.len = 1;
                }
                for (kind, dw, du) in [(Move::Up, sd.sqrt_dt, 1), (Move::Down, -sd.sqrt_dt, 0)] {
                    out.items[out.len] = Branch {
                        kind,
                        prob: sd.p_move,
                        dw,
                        dn: T::zero(),
                        dm,
                        dms: dw + sd.ratio * dm,
                        child: self.alive_id(k + 1, u + du),
                    };
                    out.len += 1;
                }
            }
            Slot::Defaulted { bi, a, b } => {
                // layer k+1 keeps the blocks of layer k in the same order
                for (kind, dw, db) in [(Move::Up, sd.sqrt_dt, 1), (Move::Down, -sd.sqrt_dt, 0)] {
                    out.items[out.len] = Branch {
                        kind,
                        prob: half,
                        dw,
                        dn: T::zero(),
                        dm: T::zero(),
                        dms: dw,
                        child: self.defaulted_id(k + 1, bi, a, b + db),
                    };
                    out.len += 1;
                }
            }
        }
        out
    }

    /// Indices of the node's branches in per-branch fields.
    pub fn branch_range(&self, node: NodeId) -> Range<usize> {
        let (k, slot) = self.locate(node);
        if k == self.n_steps {
            let start = self.layer_branch_offsets[k];
            return start..start;
        }
        let base = self.layer_branch_offsets[k];
        let w = self.steps[k].alive_width;
        match slot {
            Slot::Alive { u } => base + u * w..base + (u + 1) * w,
            Slot::Defaulted { .. } => {
                let q = node.0 - self.layer_offsets[k] - (k + 1);
                let start = base + (k + 1) * w + 2 * q;
                start..start + 2
            }
        }
    }

    /// Default intensity in force on the step leaving `node`.
    pub fn lambda_at(&self, node: NodeId) -> T {
        let (k, slot) = self.locate(node);
        match slot {
            Slot::Alive { .. } => self.params.lambda0.at(k),
            Slot::Defaulted { .. } => T::zero(),
        }
    }

    pub fn context(&self, node: NodeId) -> StepContext<T> {
        let (k, slot) = self.locate(node);
        StepContext {
            node,
            step: k,
            t: T::lit(k as f64) * self.dt,
            dt: self.dt,
            lambda: match slot {
                Slot::Alive { .. } => self.params.lambda0.at(k),
                Slot::Defaulted { .. } => T::zero(),
            },
            r: self.params.r.at(k),
            mu: self.params.mu.at(k),
            sigma: self.params.sigma.at(k),
            beta: self.params.beta.at(k),
        }
    }

    /// Looks up a node by its key.
    pub fn node_id(&self, state: NodeState) -> Option<NodeId> {
        let k = state.step;
        if k > self.n_steps {
            return None;
        }
        let half_index = |shifted: i64, moves: usize| -> Option<usize> {
            (shifted >= 0 && shifted % 2 == 0 && shifted / 2 <= moves as i64).then_some((shifted / 2) as usize)
        };
        match state.tag {
            DefaultTag::Alive => Some(self.alive_id(k, half_index(state.j + k as i64, k)?)),
            DefaultTag::DefaultedAt { step: m, j: jd } => {
                if m == 0 || m > k {
                    return None;
                }
                let bi = self.block_index(k, m)?;
                let a = half_index(jd + m as i64 - 1, m - 1)?;
                let b = half_index(state.j - jd + (k - m) as i64, k - m)?;
                Some(self.defaulted_id(k, bi, a, b))
            }
        }
    }

    /// Summary counts for diagnostics.
    pub fn summary(&self) -> LatticeSummary<T> {
        let alive: usize = (0..=self.n_steps).map(|k| k + 1).sum();
        let mut max_prob_err = T::zero();
        let mut max_mart_err = T::zero();
        for id in self.node_ids() {
            if self.is_terminal(id) {
                continue;
            }
            let br = self.branches(id);
            let total: T = br.iter().fold(T::zero(), |a, b| a + b.prob);
            max_prob_err = max_prob_err.max((total - T::one()).abs());
            let mw = br.iter().fold(T::zero(), |a, b| a + b.prob * b.dw);
            let mm = br.iter().fold(T::zero(), |a, b| a + b.prob * b.dm);
            let wm = br.iter().fold(T::zero(), |a, b| a + b.prob * b.dw * b.dm);
            max_mart_err = max_mart_err.max(mw.abs()).max(mm.abs()).max(wm.abs());
        }
        LatticeSummary {
            n_steps: self.n_steps,
            nodes: self.len(),
            alive_nodes: alive,
            defaulted_nodes: self.len() - alive,
            branches: self.branch_count(),
            max_probability_error: max_prob_err,
            max_martingale_error: max_mart_err,
        }
    }
}

/// Node counts and worst probability / martingale identity errors.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeSummary<T> {
    pub n_steps: usize,
    pub nodes: usize,
    pub alive_nodes: usize,
    pub defaulted_nodes: usize,
    pub branches: usize,
    pub max_probability_error: T,
    pub max_martingale_error: T,
}
