//! Miniature self-consistent plane-wave solver.
//!
//! This is the integration layer: a dense-grid plane-wave basis, a
//! Hamiltonian with kinetic, local and non-local parts, and a
//! self-consistency loop with linear density mixing.  Exchange-correlation
//! is deliberately omitted — the point is to exercise the distributed
//! kernels (repartition, multistage reduction, pseudopotential ring,
//! subspace solves) end to end on a problem small enough to check against
//! dense linear algebra.
//!
//! The eigensolver is a block preconditioned scheme: each sweep augments
//! the current orbitals `Ψ` with the preconditioned residuals
//! `W = K·(HΨ − Ψ·diag(θ))`, projects `H` into the trial space `[Ψ | W]`,
//! and keeps the lowest Ritz vectors.  All dense work happens on rank 0
//! and is broadcast, so every rank holds bitwise-identical coefficients.

pub mod config;
pub mod density;
pub mod fft;
pub mod grid;
pub mod hamiltonian;
pub mod subspace;

use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::collectives::MultistageAllreduce;
use crate::error::{Error, Result};
use crate::layout::{col_to_row, row_to_col, DistMatrix, Layout};
use crate::memmon::{self, Category};
use crate::pseudo::AtomShard;
use crate::transport::World;

pub use config::{AtomSpec, KindSpec, SolverConfig, SystemConfig};
pub use density::{compute_density, external_potential, hartree_potential, integrate, Well};
pub use fft::{fft3d_in_place, fft_in_place, next_fft_friendly};
pub use grid::PwGrid;
pub use hamiltonian::{precondition, Hamiltonian};
pub use subspace::{
    concat_columns, generalized_lowest, gram, loewdin_transform, orthonormalize, rayleigh_ritz,
    rotate, subspace_project,
};

/// Final fields of a run: the orbitals, the density that produced the last
/// potential, and the eigenvalues of `H[v_loc]`.
#[derive(Debug, Clone)]
pub struct ScfState {
    pub grid: PwGrid,
    /// Column-partitioned orthonormal orbitals.
    pub psi: DistMatrix<Complex64>,
    /// Replicated density; integrates to the electron count.
    pub rho: Vec<f64>,
    /// Replicated effective local potential `V_ext + V_H[rho]`.
    pub v_loc: Vec<f64>,
    /// Ascending orbital eigenvalues of the final Hamiltonian.
    pub eigenvalues: Vec<f64>,
}

/// Wall-clock seconds per phase, accumulated across the whole run.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq)]
pub struct PhaseTimings {
    pub hamiltonian: f64,
    pub repartition: f64,
    pub reduction: f64,
    pub eigensolve: f64,
    pub density: f64,
}

/// This rank's transport counters over the run (payload bytes only).
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize, PartialEq, Eq)]
pub struct TrafficTotals {
    pub msgs_sent: u64,
    pub bytes_sent: u64,
    pub msgs_received: u64,
    pub bytes_received: u64,
}

/// Everything observable about a run.  Non-convergence is reported here,
/// not raised as an error: the histories are the diagnostic.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ScfReport {
    pub converged: bool,
    /// Completed outer iterations (excluding the final polish solve).
    pub iterations: usize,
    /// `‖ρ_out − ρ_in‖₂·ΔV` per outer iteration.
    pub density_residuals: Vec<f64>,
    /// Same norm applied to the effective potential update.
    pub potential_residuals: Vec<f64>,
    /// `∫ρ_out dV` per outer iteration; must stay at the electron count.
    pub electron_counts: Vec<f64>,
    /// `2·Σ_occ λ` per outer iteration.
    pub band_energies: Vec<f64>,
    /// `Σλ` after each diagonalization sweep, one list per inner solve;
    /// non-increasing within each list.
    pub inner_energy_sums: Vec<Vec<f64>>,
    /// Final ascending eigenvalues (copy of the state for serialization).
    pub eigenvalues: Vec<f64>,
    pub timings: PhaseTimings,
    pub traffic: TrafficTotals,
}

fn timed<T>(slot: &mut f64, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    *slot += start.elapsed().as_secs_f64();
    out
}

/// Shared, immutable pieces of one run.
struct Ctx<'a> {
    grid: &'a PwGrid,
    half_g2: &'a [f64],
    shard: &'a AtomShard,
    reducer: &'a MultistageAllreduce,
    window: usize,
    /// Solved block width: reported wavefunctions plus guard states.
    block: usize,
}

/// One inner eigensolve: `sweeps` rounds of residual expansion and
/// Rayleigh–Ritz, at fixed local potential.  Returns the rotated orbitals
/// (column partition), the ascending eigenvalues, and the `Σλ` history.
fn diagonalize(
    world: &World,
    ctx: &Ctx<'_>,
    v_loc: &[f64],
    psi_col: DistMatrix<Complex64>,
    sweeps: usize,
    timers: &mut PhaseTimings,
) -> Result<(DistMatrix<Complex64>, Vec<f64>, Vec<f64>)> {
    let dv = ctx.grid.dv();
    let h = Hamiltonian::new(ctx.grid, ctx.half_g2, v_loc, ctx.shard, ctx.window)?;
    let h_psi_col = timed(&mut timers.hamiltonian, || h.apply(world, &psi_col))?;
    let mut psi_row = timed(&mut timers.repartition, || col_to_row(world, psi_col))?;
    let mut h_psi_row = timed(&mut timers.repartition, || col_to_row(world, h_psi_col))?;
    let mut lambda = Vec::new();
    let mut sums = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        let s1 = timed(&mut timers.reduction, || {
            gram(&psi_row, &h_psi_row, dv, ctx.reducer)
        })?;
        let theta: Vec<f64> = (0..ctx.block).map(|j| s1[(j, j)].re).collect();

        // Shifted residuals, column by column in the row partition.
        let mut r_row = h_psi_row.clone();
        let strip = r_row.local_rows();
        for (j, &t) in theta.iter().enumerate() {
            let offset = j * strip;
            for i in 0..strip {
                r_row.local_mut()[offset + i] -= psi_row.local()[offset + i] * t;
            }
        }

        let mut w_col = timed(&mut timers.repartition, || row_to_col(world, r_row))?;
        timed(&mut timers.hamiltonian, || {
            precondition(ctx.grid, ctx.half_g2, &mut w_col)
        })?;
        // Unit-normalize each expansion column (whole columns are rank
        // local) so the trial overlap is well scaled; zero residuals are
        // left alone for the rank filter to discard.
        for local_col in 0..w_col.local_cols() {
            let column = w_col.column_mut(local_col);
            let norm2: f64 = column.iter().map(|v| v.norm_sqr()).sum::<f64>() * dv;
            if norm2 > 1e-28 {
                let scale = 1.0 / norm2.sqrt();
                for v in column.iter_mut() {
                    *v *= scale;
                }
            }
        }
        let h_w_col = timed(&mut timers.hamiltonian, || h.apply(world, &w_col))?;
        let w_row = timed(&mut timers.repartition, || col_to_row(world, w_col))?;
        let h_w_row = timed(&mut timers.repartition, || col_to_row(world, h_w_col))?;

        let trial = concat_columns(world, &psi_row, &w_row)?;
        let h_trial = concat_columns(world, &h_psi_row, &h_w_row)?;
        let trial_bytes = 16 * (trial.local().len() + h_trial.local().len()) as u64;
        memmon::track_alloc("scf.trial_basis", Category::Temporary, trial_bytes);

        let a = timed(&mut timers.reduction, || gram(&trial, &h_trial, dv, ctx.reducer))?;
        let b = timed(&mut timers.reduction, || gram(&trial, &trial, dv, ctx.reducer))?;
        let (l, c) = timed(&mut timers.eigensolve, || {
            generalized_lowest(world, &a, &b, ctx.block)
        })?;
        psi_row = rotate(world, &trial, &c)?;
        h_psi_row = rotate(world, &h_trial, &c)?;
        memmon::track_free("scf.trial_basis");

        // The whitening solve leaves the rotated basis orthonormal only to
        // the conditioning of the trial overlap; one Löwdin correction
        // (applied to HΨ as well, preserving consistency) pins the overlap
        // back to the identity at working precision.
        let overlap = timed(&mut timers.reduction, || {
            gram(&psi_row, &psi_row, dv, ctx.reducer)
        })?;
        let fixup = timed(&mut timers.eigensolve, || {
            subspace::loewdin_transform(world, &overlap)
        })?;
        psi_row = rotate(world, &psi_row, &fixup)?;
        h_psi_row = rotate(world, &h_psi_row, &fixup)?;

        sums.push(l.iter().sum());
        lambda = l;
    }
    let psi_col = timed(&mut timers.repartition, || row_to_col(world, psi_row))?;
    Ok((psi_col, lambda, sums))
}

/// Runs the self-consistency loop described by `system`.
///
/// The loop alternates inner diagonalization sweeps with a density update
/// and linear mixing, and stops when `‖ρ_out − ρ_in‖₂·ΔV` drops below the
/// configured tolerance.  One extra "polish" diagonalization runs against
/// the final potential so the returned eigenpairs belong to the returned
/// `v_loc`.  Hitting the iteration cap is reported, not raised.
pub fn scf_loop(world: &World, system: &SystemConfig) -> Result<(ScfState, ScfReport)> {
    system.validate()?;
    let solver = &system.solver;
    let grid = system.grid()?;
    let n = grid.n_points();
    let dv = grid.dv();
    let nwf = system.wavefunctions;
    let block = nwf + solver.guard_states;
    if block > n {
        return Err(Error::Config(format!(
            "{nwf} wavefunctions plus {} guard states cannot fit in a basis of {n} grid points",
            solver.guard_states
        )));
    }

    let table = system.kind_table()?;
    let entries = system.entries(&table, &grid)?;
    let shard = AtomShard::for_rank(world, &entries)?;
    let wells = system.wells()?;
    let columns = if solver.reduce_columns == 0 {
        world.size().min(2)
    } else {
        solver.reduce_columns
    };
    let reducer = MultistageAllreduce::new(world, columns)?;

    let counters_before = world.counters();
    let mut timers = PhaseTimings::default();

    let half_g2 = grid.kinetic_spectrum();
    let v_ext = external_potential(&grid, &wells);
    memmon::track_alloc("scf.kinetic", Category::Global, 8 * n as u64);
    memmon::track_alloc("scf.v_ext", Category::Global, 8 * n as u64);
    memmon::track_alloc("scf.v_loc", Category::Global, 8 * n as u64);
    memmon::track_alloc("scf.rho", Category::Global, 8 * n as u64);

    let ctx = Ctx {
        grid: &grid,
        half_g2: &half_g2,
        shard: &shard,
        reducer: &reducer,
        window: solver.window,
        block,
    };

    // Deterministic start: every global column is seeded independently, so
    // the initial basis does not depend on the rank count.
    let seed = solver.seed;
    let raw = DistMatrix::from_columns(world, n, block, |global_col, column| {
        use rand::{Rng, SeedableRng};
        let stream = seed ^ (global_col as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(stream);
        for v in column.iter_mut() {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
    });
    memmon::track_alloc("scf.psi", Category::DftData, 16 * raw.local().len() as u64);
    let raw_row = timed(&mut timers.repartition, || col_to_row(world, raw))?;
    let ortho_row = timed(&mut timers.eigensolve, || {
        orthonormalize(world, &raw_row, dv, &reducer)
    })?;
    let mut psi_col = timed(&mut timers.repartition, || row_to_col(world, ortho_row))?;

    let mut rho = timed(&mut timers.density, || {
        compute_density(world, &psi_col, system.electrons)
    })?;
    let mut v_loc = add_potentials(&v_ext, &hartree_potential(&grid, &rho)?);

    let mut report = ScfReport {
        converged: false,
        iterations: 0,
        density_residuals: Vec::new(),
        potential_residuals: Vec::new(),
        electron_counts: Vec::new(),
        band_energies: Vec::new(),
        inner_energy_sums: Vec::new(),
        eigenvalues: Vec::new(),
        timings: PhaseTimings::default(),
        traffic: TrafficTotals::default(),
    };
    let occupied = system.electrons / 2;

    for _ in 0..solver.max_outer {
        let (next_psi, lambda, sums) =
            diagonalize(world, &ctx, &v_loc, psi_col, solver.inner_sweeps, &mut timers)?;
        psi_col = next_psi;
        report.inner_energy_sums.push(sums);
        report
            .band_energies
            .push(2.0 * lambda[..occupied].iter().sum::<f64>());

        let rho_out = timed(&mut timers.density, || {
            compute_density(world, &psi_col, system.electrons)
        })?;
        let electron_count = integrate(&rho_out, dv);
        report.electron_counts.push(electron_count);
        if (electron_count - system.electrons as f64).abs() > 1e-8 {
            return Err(Error::Numerics(format!(
                "density integrates to {electron_count}, expected {}",
                system.electrons
            )));
        }

        let residual = diff_norm(&rho_out, &rho) * dv;
        report.density_residuals.push(residual);
        report.iterations += 1;

        if residual < solver.tol {
            report.converged = true;
            rho = rho_out;
            let v_new = add_potentials(&v_ext, &hartree_potential(&grid, &rho)?);
            report.potential_residuals.push(diff_norm(&v_new, &v_loc) * dv);
            v_loc = v_new;
            break;
        }
        // Linear mixing, then rebuild the potential for the next round.
        for (mixed, &out) in rho.iter_mut().zip(&rho_out) {
            *mixed = (1.0 - solver.mix_beta) * *mixed + solver.mix_beta * out;
        }
        let v_new = add_potentials(&v_ext, &hartree_potential(&grid, &rho)?);
        report.potential_residuals.push(diff_norm(&v_new, &v_loc) * dv);
        v_loc = v_new;
    }

    // Polish: eigenpairs of the potential we are about to return.  The guard
    // columns have done their job shielding the top reported state; only the
    // first `nwf` pairs leave this function.
    let (final_psi, lambda, sums) =
        diagonalize(world, &ctx, &v_loc, psi_col, solver.inner_sweeps, &mut timers)?;
    let final_psi = if block > nwf {
        let global = final_psi.to_global(world)?;
        DistMatrix::from_replicated(world, Layout::ColumnBlock, n, nwf, &global[..n * nwf])?
    } else {
        final_psi
    };
    let lambda = lambda[..nwf].to_vec();
    report.inner_energy_sums.push(sums);
    report.eigenvalues = lambda.clone();
    report.timings = timers;
    let counters_after = world.counters();
    report.traffic = TrafficTotals {
        msgs_sent: counters_after.msgs_sent - counters_before.msgs_sent,
        bytes_sent: counters_after.bytes_sent - counters_before.bytes_sent,
        msgs_received: counters_after.msgs_received - counters_before.msgs_received,
        bytes_received: counters_after.bytes_received - counters_before.bytes_received,
    };

    for label in ["scf.psi", "scf.rho", "scf.v_loc", "scf.v_ext", "scf.kinetic"] {
        memmon::track_free(label);
    }

    let state = ScfState {
        grid,
        psi: final_psi,
        rho,
        v_loc,
        eigenvalues: lambda,
    };
    Ok((state, report))
}

fn add_potentials(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn diff_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::run_world;

    fn free_electron_config() -> SystemConfig {
        SystemConfig {
            cell: [6.0, 7.3, 8.9],
            ecut: 2.0,
            grid_dims: Some([6, 8, 8]),
            atoms: vec![],
            kinds: vec![],
            electrons: 2,
            wavefunctions: 5,
            solver: SolverConfig {
                // Tight on purpose: the residual Hartree ripple of a looser
                // density splits the degenerate kinetic pairs at ~1e-7.
                tol: 1e-12,
                max_outer: 60,
                inner_sweeps: 5,
                mix_beta: 0.5,
                seed: 11,
                ..SolverConfig::default()
            },
        }
    }

    /// Two unequal wells.  (Equal wells at four electrons put the gap
    /// between occupied and empty states near zero, and integer occupations
    /// then slosh charge forever — that is a property of the model, not a
    /// solver test.)
    fn two_well_config() -> SystemConfig {
        SystemConfig {
            cell: [4.0, 4.0, 4.0],
            ecut: 6.0,
            grid_dims: Some([8, 8, 8]),
            atoms: vec![
                AtomSpec { position: [1.0, 2.0, 2.0], kind: 14 },
                AtomSpec { position: [3.0, 2.0, 2.0], kind: 6 },
            ],
            kinds: vec![
                KindSpec {
                    atomic_number: 14,
                    l_channels: 2,
                    sigma: 0.45,
                    weights: vec![-0.35, 0.2],
                    well_depth: 2.6,
                    well_width: 0.7,
                },
                KindSpec {
                    atomic_number: 6,
                    l_channels: 1,
                    sigma: 0.4,
                    weights: vec![-0.3],
                    well_depth: 1.4,
                    well_width: 0.6,
                },
            ],
            electrons: 4,
            wavefunctions: 4,
            solver: SolverConfig {
                tol: 1e-8,
                max_outer: 60,
                inner_sweeps: 4,
                mix_beta: 0.5,
                seed: 42,
                ..SolverConfig::default()
            },
        }
    }

    #[test]
    fn free_electrons_recover_the_kinetic_spectrum() {
        let config = free_electron_config();
        let results = run_world(2, move |world| {
            let (state, report) = scf_loop(world, &config)?;
            Ok((state.eigenvalues, report.converged, state.grid))
        })
        .unwrap();
        let (lambda, converged, grid) = &results[0];
        assert!(*converged);
        let mut kinetic = grid.kinetic_spectrum();
        kinetic.sort_by(f64::total_cmp);
        for (got, want) in lambda.iter().zip(&kinetic) {
            assert!((got - want).abs() < 1e-10, "got {got}, want {want}");
        }
    }

    #[test]
    fn two_well_run_converges_and_reports_consistently() {
        let config = two_well_config();
        let results = run_world(2, move |world| {
            let (state, report) = scf_loop(world, &config)?;
            Ok((state.rho, state.eigenvalues.clone(), report))
        })
        .unwrap();
        let (rho, lambda, report) = &results[0];
        assert!(report.converged, "residuals: {:?}", report.density_residuals);
        // Density is everywhere nonnegative and integrates to N_e.
        assert!(rho.iter().all(|&v| v >= -1e-12));
        for count in &report.electron_counts {
            assert!((count - 4.0).abs() < 1e-8);
        }
        // Eigenvalues ascend and the report mirrors the state.
        for pair in lambda.windows(2) {
            assert!(pair[0] <= pair[1] + 1e-12);
        }
        assert_eq!(&report.eigenvalues, lambda);
        // Monotone Σλ within every inner solve.
        for sums in &report.inner_energy_sums {
            for pair in sums.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-10, "sweep raised Σλ: {sums:?}");
            }
        }
        // Density residuals end below the threshold.
        assert!(*report.density_residuals.last().unwrap() < 1e-8);
    }

    #[test]
    fn rank_counts_agree_on_physical_outputs() {
        let config = two_well_config();
        let mut all = Vec::new();
        for parts in [1usize, 2, 4] {
            let c = config.clone();
            let results = run_world(parts, move |world| {
                let (state, report) = scf_loop(world, &c)?;
                Ok((state.eigenvalues, state.rho, report.band_energies.clone()))
            })
            .unwrap();
            // Every rank reports identical values.
            for r in &results[1..] {
                assert_eq!(r.0, results[0].0);
            }
            all.push(results.into_iter().next().unwrap());
        }
        let (lambda_1, rho_1, bands_1) = &all[0];
        for (lambda, rho, bands) in &all[1..] {
            for (a, b) in lambda.iter().zip(lambda_1) {
                assert!((a - b).abs() < 1e-8, "{a} vs {b}");
            }
            for (a, b) in rho.iter().zip(rho_1) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!((bands.last().unwrap() - bands_1.last().unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn orthonormality_survives_the_whole_run() {
        let config = two_well_config();
        let results = run_world(4, move |world| {
            let (state, _) = scf_loop(world, &config)?;
            let reducer = MultistageAllreduce::new(world, 2)?;
            let psi_row = col_to_row(world, state.psi)?;
            let overlap = gram(&psi_row, &psi_row, state.grid.dv(), &reducer)?;
            let gap = (0..overlap.nrows())
                .flat_map(|i| (0..overlap.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| {
                    let want = if i == j { 1.0 } else { 0.0 };
                    (overlap[(i, j)] - Complex64::new(want, 0.0)).norm()
                })
                .fold(0.0f64, f64::max);
            Ok(gap)
        })
        .unwrap();
        for gap in results {
            assert!(gap <= 1e-10, "overlap gap {gap}");
        }
    }

    #[test]
    fn iteration_cap_reports_instead_of_failing() {
        let mut config = two_well_config();
        config.solver.max_outer = 1;
        config.solver.inner_sweeps = 1;
        config.solver.tol = 1e-30; // unreachable on purpose
        let results = run_world(2, move |world| {
            let (_, report) = scf_loop(world, &config)?;
            Ok(report)
        })
        .unwrap();
        for report in &results {
            assert!(!report.converged);
            assert_eq!(report.iterations, 1);
            assert_eq!(report.density_residuals.len(), 1);
            assert!(!report.eigenvalues.is_empty());
        }
    }

    #[test]
    fn solver_rejects_an_oversized_basis_request() {
        let mut config = free_electron_config();
        config.grid_dims = Some([2, 2, 2]);
        config.wavefunctions = 9;
        config.electrons = 2;
        let results = run_world(1, move |world| {
            Ok(matches!(scf_loop(world, &config), Err(Error::Config(_))))
        })
        .unwrap();
        assert!(results[0]);
    }
}
