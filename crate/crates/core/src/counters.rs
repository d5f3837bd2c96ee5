//! Deterministic work and memory instrumentation shared by the gradient engines.

use serde::{Deserialize, Serialize};

/// Per-solve counters. Step evaluations count calls of `Ψ_h` (each costs one
/// pass over the tableau stages); VJP evaluations count `step_vjp` calls.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Peak number of stored primal states, in checkpoint units.
    pub stored_state_peak: usize,
    /// Peak number of stored `d`-dimensional vectors, adjoints included.
    pub stored_vector_peak: usize,
    pub step_evals_forward: usize,
    pub step_evals_backward: usize,
    pub vjp_evals: usize,
    /// Scheme advances `n → n+1`, first pass and recomputation together.
    pub advances: usize,
}

impl Counters {
    pub fn step_evals(&self) -> usize {
        self.step_evals_forward + self.step_evals_backward
    }

    /// Step evaluations beyond what a single forward pass needs.
    pub fn recomputations(&self) -> usize {
        self.step_evals_backward
    }
}

/// Tracks how many state vectors are simultaneously held.
#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Occupancy {
    live: usize,
    peak: usize,
}

impl Occupancy {
    pub(crate) fn hold(&mut self, n: usize) {
        self.live += n;
        self.peak = self.peak.max(self.live);
    }

    pub(crate) fn release(&mut self, n: usize) {
        debug_assert!(n <= self.live, "released more than held");
        self.live -= n;
    }

    pub(crate) fn peak(&self) -> usize {
        self.peak
    }
}
