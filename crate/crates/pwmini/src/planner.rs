//! Granularity-aware process-count planning.
//!
//! Not every phase of the solver scales with more processes: the dense
//! subspace eigensolve in particular has a sweet spot well below the full
//! machine. The planner picks a per-phase process count `P_opt` from the
//! power-of-2 candidates `{2^k : P_min <= 2^k <= min(2A, P_avail)}` —
//! bounded below by the memory-feasible minimum and above by twice the
//! atom count and the available processes. Cost comes either from a
//! measured `P -> seconds` table (authoritative when present) or from an
//! analytic model `t(P) = a·n³/P + b·n²·log₂P + c·P`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Execution phase being planned.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Dense subspace eigensolve: has an interior optimum, planned by
    /// cost argmin.
    SubspaceEig,
    /// Grid-local work: more processes are faster, planned to the max
    /// candidate.
    Hamiltonian,
    Pseudopotential,
    Repartition,
}

/// Cost estimate used for the `SubspaceEig` argmin.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostModel {
    /// Measured seconds per process count. Candidates absent from the
    /// table are skipped; measured non-power-of-2 entries are legal in
    /// the table but can never become candidates.
    Table(BTreeMap<u64, f64>),
    /// `t(P) = a·n³/P + b·n²·log₂P + c·P` for a problem dimension `n`.
    Analytic { a: f64, b: f64, c: f64, n: f64 },
}

impl CostModel {
    /// Cost of running the phase on `p` processes, if the model can say.
    pub fn seconds(&self, p: u64) -> Option<f64> {
        match self {
            CostModel::Table(table) => table.get(&p).copied(),
            CostModel::Analytic { a, b, c, n } => {
                let pf = p as f64;
                Some(a * n.powi(3) / pf + b * n.powi(2) * pf.log2() + c * pf)
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PlanInput {
    /// Atom count `A`; beyond `2A` processes the phases stop scaling, so
    /// that is the candidate cap.
    pub atoms: u64,
    /// Memory-feasible minimum process count.
    pub p_min: u64,
    /// Processes available to the job.
    pub p_avail: u64,
    pub phase: Phase,
    pub cost: CostModel,
}

impl PlanInput {
    /// Upper bound of the candidate interval.
    pub fn p_cap(&self) -> u64 {
        (2 * self.atoms).min(self.p_avail)
    }
}

/// The power-of-2 candidate set `{2^k : P_min <= 2^k <= min(2A, P_avail)}`
/// in ascending order.
pub fn candidates(input: &PlanInput) -> Vec<u64> {
    let cap = input.p_cap();
    let mut out = Vec::new();
    let mut p: u64 = 1;
    loop {
        if p >= input.p_min && p <= cap {
            out.push(p);
        }
        match p.checked_mul(2) {
            Some(next) if next <= cap => p = next,
            _ => break,
        }
    }
    out
}

/// Chooses `P_opt` for the phase: cost argmin for the subspace eigensolve
/// (ties toward smaller `P`), the largest candidate for phases that only
/// get faster with more processes.
pub fn plan(input: &PlanInput) -> Result<u64> {
    let cands = candidates(input);
    if cands.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "infeasible plan: no power of 2 in [{}, {}]",
            input.p_min,
            input.p_cap()
        )));
    }
    match input.phase {
        Phase::SubspaceEig => {
            let mut best: Option<(u64, f64)> = None;
            for &p in &cands {
                let Some(cost) = input.cost.seconds(p) else {
                    continue;
                };
                match best {
                    Some((_, best_cost)) if cost >= best_cost => {}
                    _ => best = Some((p, cost)),
                }
            }
            best.map(|(p, _)| p).ok_or_else(|| {
                Error::InvalidArgument(
                    "cost table covers none of the candidate process counts".into(),
                )
            })
        }
        Phase::Hamiltonian | Phase::Pseudopotential | Phase::Repartition => {
            Ok(*cands.last().expect("nonempty"))
        }
    }
}

/// Smallest process count whose per-rank memory estimate fits the budget,
/// searched by doubling then bisection (the estimator must be monotone
/// non-increasing in `P`). `cap` bounds the search, typically `2A`.
pub fn min_processes(
    estimate: impl Fn(u64) -> u64,
    budget_bytes: u64,
    cap: u64,
) -> Result<u64> {
    if cap == 0 {
        return Err(Error::Infeasible {
            cap,
            budget: budget_bytes,
        });
    }
    if estimate(1) <= budget_bytes {
        return Ok(1);
    }
    // Double until feasible.
    let mut hi = 1u64;
    loop {
        hi = hi.saturating_mul(2).min(cap);
        if estimate(hi) <= budget_bytes {
            break;
        }
        if hi == cap {
            return Err(Error::Infeasible {
                cap,
                budget: budget_bytes,
            });
        }
    }
    // Invariant: estimate(lo) > budget >= estimate(hi).
    let mut lo = hi / 2;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if estimate(mid) <= budget_bytes {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}
