//! `scf run`: the self-consistency loop as a command.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use pwmini::minidft::{scf_loop, SystemConfig};
use pwmini::transport::run_world_on;
use pwmini::{Error, Result};

use crate::report::{fmt_float, fmt_secs, Report};
use crate::Common;

#[derive(Args)]
pub struct RunArgs {
    /// JSON system description (cell, cutoff, atoms, kinds, solver knobs).
    #[arg(long)]
    pub config: PathBuf,
    /// Rank count.
    #[arg(long, default_value_t = 2)]
    pub procs: usize,
    #[command(flatten)]
    pub common: Common,
}

/// Runs the SCF loop described by `--config` on `--procs` ranks and writes
/// the run log: per-iteration residuals and electron counts, the final
/// eigenvalues, per-phase wall time, rank-0 traffic, and the convergence
/// summary. Exit status is success whether or not the loop converged (the
/// log is the result); bad configs fail before any rank starts.
pub fn run(args: &RunArgs) -> Result<()> {
    let text = fs::read_to_string(&args.config).map_err(|e| {
        Error::Config(format!("cannot read {}: {e}", args.config.display()))
    })?;
    let mut system = SystemConfig::from_json(&text)?;
    if let Some(seed) = args.common.seed {
        system.solver.seed = seed;
    }

    let mut results = run_world_on(args.common.transport, args.procs, |world| {
        let (_, report) = scf_loop(world, &system)?;
        Ok(report)
    })?;
    // Residuals, eigenvalues and counters are identical on every rank by
    // construction; rank 0 speaks for the run.
    let scf = results.swap_remove(0);

    let mut report = Report::new("scf-log", 1);
    report.comment("section iterations");
    report.header(&[
        "iter",
        "density_residual",
        "potential_residual",
        "electron_count",
        "band_energy",
    ]);
    for i in 0..scf.density_residuals.len() {
        report.row(vec![
            (i + 1).to_string(),
            fmt_float(scf.density_residuals[i]),
            fmt_float(scf.potential_residuals[i]),
            fmt_float(scf.electron_counts[i]),
            fmt_float(scf.band_energies[i]),
        ]);
    }

    report.comment("section eigenvalues");
    report.header(&["index", "eigenvalue"]);
    for (i, lambda) in scf.eigenvalues.iter().enumerate() {
        report.row(vec![i.to_string(), fmt_float(*lambda)]);
    }

    report.comment("section timings");
    report.header(&["phase", "seconds"]);
    let measure = args.common.measure;
    for (phase, secs) in [
        ("hamiltonian", scf.timings.hamiltonian),
        ("repartition", scf.timings.repartition),
        ("reduction", scf.timings.reduction),
        ("eigensolve", scf.timings.eigensolve),
        ("density", scf.timings.density),
    ] {
        report.row(vec![phase.to_string(), fmt_secs(measure, secs)]);
    }

    report.comment("section traffic rank0");
    report.header(&["msgs_sent", "bytes_sent", "msgs_received", "bytes_received"]);
    report.row(vec![
        scf.traffic.msgs_sent.to_string(),
        scf.traffic.bytes_sent.to_string(),
        scf.traffic.msgs_received.to_string(),
        scf.traffic.bytes_received.to_string(),
    ]);

    report.comment("section summary");
    report.header(&["converged", "iterations", "final_density_residual"]);
    report.row(vec![
        scf.converged.to_string(),
        scf.iterations.to_string(),
        scf.density_residuals
            .last()
            .map(|r| fmt_float(*r))
            .unwrap_or_else(|| "-".into()),
    ]);

    report.write(args.common.out.as_deref())
}
