//! Per-node and per-branch value carriers, and node-flag stopping rules.

use std::ops::{Index, IndexMut};

use rand::Rng;

use crate::error::{Error, Result};
use crate::lattice::{DefaultLattice, NodeId, NodeState};
use crate::scalar::Scalar;

/// One real value per lattice node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedField<T> {
    values: Vec<T>,
}

impl<T: Scalar> AdaptedField<T> {
    pub fn from_vec(lattice: &DefaultLattice<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != lattice.len() {
            return Err(Error::FieldSizeMismatch {
                expected: lattice.len(),
                got: values.len(),
            });
        }
        Ok(Self { values })
    }

    pub fn constant(lattice: &DefaultLattice<T>, value: T) -> Self {
        Self {
            values: vec![value; lattice.len()],
        }
    }

    pub fn zeros(lattice: &DefaultLattice<T>) -> Self {
        Self::constant(lattice, T::zero())
    }

    /// Evaluates `f(node, state, price)` on every node.
    pub fn from_fn(lattice: &DefaultLattice<T>, mut f: impl FnMut(NodeId, NodeState, T) -> T) -> Self {
        Self {
            values: lattice
                .node_ids()
                .map(|id| f(id, lattice.state(id), lattice.price(id)))
                .collect(),
        }
    }

    /// Payoff of an American put `(strike - S)^+`.
    pub fn put(lattice: &DefaultLattice<T>, strike: T) -> Self {
        Self::from_fn(lattice, |_, _, s| (strike - s).max(T::zero()))
    }

    /// Payoff of an American call `(S - strike)^+`.
    pub fn call(lattice: &DefaultLattice<T>, strike: T) -> Self {
        Self::from_fn(lattice, |_, _, s| (s - strike).max(T::zero()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            values: self.values.iter().map(|v| f(*v)).collect(),
        }
    }

    /// Pointwise combination of two fields.
    pub fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        Self {
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    pub fn check_len(&self, lattice: &DefaultLattice<T>) -> Result<()> {
        if self.values.len() == lattice.len() {
            Ok(())
        } else {
            Err(Error::FieldSizeMismatch {
                expected: lattice.len(),
                got: self.values.len(),
            })
        }
    }

    pub fn check_finite(&self, what: &'static str) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(node) => Err(Error::NonFinite { what, node }),
            None => Ok(()),
        }
    }

    /// True when `self <= other` on every node.
    pub fn le(&self, other: &Self) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }
}

impl<T> Index<NodeId> for AdaptedField<T> {
    type Output = T;

    fn index(&self, id: NodeId) -> &T {
        &self.values[id.0]
    }
}

impl<T> IndexMut<NodeId> for AdaptedField<T> {
    fn index_mut(&mut self, id: NodeId) -> &mut T {
        &mut self.values[id.0]
    }
}

/// One real value per lattice branch, addressed through
/// [`DefaultLattice::branch_range`].
#[derive(Debug, Clone, PartialEq)]
pub struct BranchField<T> {
    values: Vec<T>,
}

impl<T: Scalar> BranchField<T> {
    pub fn zeros(lattice: &DefaultLattice<T>) -> Self {
        Self {
            values: vec![T::zero(); lattice.branch_count()],
        }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }
}

impl<T> Index<usize> for BranchField<T> {
    type Output = T;

    fn index(&self, b: usize) -> &T {
        &self.values[b]
    }
}

impl<T> IndexMut<usize> for BranchField<T> {
    fn index_mut(&mut self, b: usize) -> &mut T {
        &mut self.values[b]
    }
}

/// Stopping rule given by per-node stop flags. The stopping time on a path is
/// the first flagged node; terminal nodes are always flagged.
///
/// Flags are a function of the node only, so the rule is adapted. A node that
/// is flagged also acts as the stopping point for the rule restarted there.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopRule {
    flags: Vec<bool>,
}

impl StopRule {
    pub fn from_fn<T: Scalar>(lattice: &DefaultLattice<T>, mut f: impl FnMut(NodeId) -> bool) -> Self {
        Self {
            flags: lattice
                .node_ids()
                .map(|id| lattice.is_terminal(id) || f(id))
                .collect(),
        }
    }

    /// Stop only at the horizon.
    pub fn at_terminal<T: Scalar>(lattice: &DefaultLattice<T>) -> Self {
        Self::from_fn(lattice, |_| false)
    }

    /// Stop immediately, wherever the rule is started.
    pub fn immediately<T: Scalar>(lattice: &DefaultLattice<T>) -> Self {
        Self::from_fn(lattice, |_| true)
    }

    /// Deterministic time: stop at step `k` (or at once if started later).
    pub fn at_step<T: Scalar>(lattice: &DefaultLattice<T>, k: usize) -> Self {
        Self::from_fn(lattice, |id| lattice.state(id).step >= k)
    }

    /// Each non-terminal node flagged independently with probability `p`.
    pub fn random<T: Scalar, R: Rng>(lattice: &DefaultLattice<T>, p: f64, rng: &mut R) -> Self {
        Self::from_fn(lattice, |_| rng.gen_bool(p))
    }

    pub fn is_stop(&self, id: NodeId) -> bool {
        self.flags[id.0]
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    /// Rule stopping at nodes flagged by both. Its stopping time is never
    /// earlier than either input's.
    pub fn intersect(&self, other: &Self) -> Self {
        Self {
            flags: self.flags.iter().zip(&other.flags).map(|(a, b)| *a && *b).collect(),
        }
    }

    /// Rule stopping at nodes flagged by either.
    pub fn union(&self, other: &Self) -> Self {
        Self {
            flags: self.flags.iter().zip(&other.flags).map(|(a, b)| *a || *b).collect(),
        }
    }

    /// Nodes where a path started at the root actually stops: flagged and
    /// reachable through unflagged nodes only.
    pub fn stopping_nodes<T: Scalar>(&self, lattice: &DefaultLattice<T>) -> Vec<NodeId> {
        let mut running = vec![false; lattice.len()];
        running[0] = true;
        let mut out = Vec::new();
        for id in lattice.node_ids() {
            if !running[id.0] {
                continue;
            }
            if self.flags[id.0] {
                out.push(id);
                continue;
            }
            for b in lattice.branches(id).iter() {
                running[b.child.0] = true;
            }
        }
        out
    }

    /// `self <= other` as stopping times started at any node. Holds when every
    /// node flagged by `other` is flagged by `self`.
    pub fn precedes(&self, other: &Self) -> bool {
        self.flags.iter().zip(&other.flags).all(|(a, b)| !*b || *a)
    }
}
