//! Kernel microbenchmarks.
//!
//! Each bench synthesizes a seeded input, runs the optimized kernel and its
//! reference side by side across a rank world, and writes one CSV report.
//! Every row carries a correctness verdict against the oracle; timings are
//! suppressed (written as zero) for rows whose verdict failed, and a failed
//! verdict also fails the process after the report is written.

use std::time::Instant;

use clap::Args;
use pwmini::collectives::{
    baseline_allreduce, predicted_message_counts, MsgCount, MultistageAllreduce,
};
use pwmini::layout::{
    buffer_cost_model, col_to_row, col_to_row_reference, row_to_col, DistMatrix, Layout,
};
use pwmini::memmon::{self, Category, MemoryLedger};
use pwmini::pseudo::{
    apply_vnl_distributed, apply_vnl_reference, pseudo_memory_report, synthesize_entry, AtomShard,
    KindRecord, PseudoEntry,
};
use pwmini::transport::run_world_on;
use pwmini::{Complex64, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::{fmt_secs, verdict, Report};
use crate::Common;

/// Independent seeded stream `stream` of the run seed.
fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (stream + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn random_complex(rng: &mut ChaCha8Rng, len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect()
}

fn fail_on_bad_verdict(ok: bool) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Numerics(
            "bench correctness check failed; see the FAIL rows in the report".into(),
        ))
    }
}

#[derive(Args)]
pub struct RepartitionArgs {
    /// Global row count (grid points).
    #[arg(long)]
    pub r: usize,
    /// Global column count (wavefunctions).
    #[arg(long)]
    pub c: usize,
    /// Rank count.
    #[arg(long)]
    pub procs: usize,
    /// Repetitions, each on a fresh random matrix.
    #[arg(long, default_value_t = 3)]
    pub reps: usize,
    #[command(flatten)]
    pub common: Common,
}

/// `bench repartition`: times the in-place column->row repartition against
/// the buffered mapping-matrix reference on the same matrix, verifies the
/// results element-exactly plus a bitwise round trip, and reports the peak
/// temporary bytes the in-place path actually allocated next to the
/// `24·r·c`-byte staging cost the reference scheme would have needed.
pub fn repartition(args: &RepartitionArgs) -> Result<()> {
    let mut report = Report::new("repartition-bench", 1);
    report.header(&[
        "rep",
        "rows",
        "cols",
        "procs",
        "inplace_s",
        "reference_s",
        "inplace_peak_temp_bytes",
        "reference_buffer_bytes",
        "verdict",
    ]);

    let mut all_ok = true;
    for rep in 0..args.reps {
        let global = random_complex(&mut rng(args.common.seed(), rep as u64), args.r * args.c);
        let per_rank = run_world_on(args.common.transport, args.procs, |world| {
            memmon::install(MemoryLedger::new(world.rank()));
            let m = DistMatrix::from_replicated(
                world,
                Layout::ColumnBlock,
                args.r,
                args.c,
                &global,
            )?;
            let original = m.clone();

            world.barrier()?;
            let t0 = Instant::now();
            let row = col_to_row(world, m)?;
            let inplace_s = t0.elapsed().as_secs_f64();

            let copy = original.clone();
            world.barrier()?;
            let t1 = Instant::now();
            let reference = col_to_row_reference(world, copy)?;
            let reference_s = t1.elapsed().as_secs_f64();

            let back = row_to_col(world, row.clone())?;
            let ok = row.local() == reference.local() && back.local() == original.local();
            let peak = memmon::uninstall()
                .map(|l| l.snapshot().hwm_in(Category::Temporary))
                .unwrap_or(0);
            Ok((ok, peak, inplace_s, reference_s))
        })?;

        let ok = per_rank.iter().all(|r| r.0);
        let peak = per_rank.iter().map(|r| r.1).max().unwrap_or(0);
        let inplace_s = per_rank.iter().map(|r| r.2).fold(0.0, f64::max);
        let reference_s = per_rank.iter().map(|r| r.3).fold(0.0, f64::max);
        all_ok &= ok;
        let timed = args.common.measure && ok;
        report.row(vec![
            rep.to_string(),
            args.r.to_string(),
            args.c.to_string(),
            args.procs.to_string(),
            fmt_secs(timed, inplace_s),
            fmt_secs(timed, reference_s),
            peak.to_string(),
            buffer_cost_model(args.r as u64, args.c as u64).to_string(),
            verdict(ok).to_string(),
        ]);
    }

    report.write(args.common.out.as_deref())?;
    fail_on_bad_verdict(all_ok)
}

#[derive(Args)]
pub struct AllreduceArgs {
    /// Vector length per rank.
    #[arg(long)]
    pub elems: usize,
    /// Rank count.
    #[arg(long)]
    pub procs: usize,
    /// Column parameter of the multistage schedule.
    #[arg(long = "C")]
    pub c: usize,
    #[command(flatten)]
    pub common: Common,
}

/// Total messages of the recursive-doubling baseline: `e` pre-fold sends,
/// `log2(q)` exchange sends on each of the `q` folded ranks, `e` unfolds.
fn baseline_predicted_msgs(p: usize) -> u64 {
    if p == 1 {
        return 0;
    }
    let q = 1usize << (usize::BITS - 1 - p.leading_zeros());
    let e = (p - q) as u64;
    2 * e + (q as u64) * u64::from(q.trailing_zeros())
}

/// `bench allreduce`: one multistage reduction and one recursive-doubling
/// baseline over identical seeded data. Rows: one per multistage stage with
/// traffic measured against the closed-form prediction, one multistage
/// total, one baseline. The verdict compares both results to the serial
/// sum oracle at 1e-12 relative and requires measured == predicted traffic.
pub fn allreduce(args: &AllreduceArgs) -> Result<()> {
    let inputs: Vec<Vec<f64>> = (0..args.procs)
        .map(|rank| {
            let mut r = rng(args.common.seed(), rank as u64);
            (0..args.elems).map(|_| r.gen_range(-1.0..1.0)).collect()
        })
        .collect();
    let mut oracle = vec![0.0f64; args.elems];
    for input in &inputs {
        for (acc, v) in oracle.iter_mut().zip(input) {
            *acc += v;
        }
    }

    let close = |got: &[f64]| {
        got.iter()
            .zip(&oracle)
            .all(|(g, w)| (g - w).abs() <= 1e-12 * w.abs().max(1.0))
    };

    let per_rank = run_world_on(args.common.transport, args.procs, |world| {
        let reducer = MultistageAllreduce::new(world, args.c)?;
        let mut data = inputs[world.rank()].clone();
        world.barrier()?;
        let stats = reducer.apply(&mut data)?;
        let multistage_ok = close(&data);

        let mut base = inputs[world.rank()].clone();
        world.barrier()?;
        let t0 = Instant::now();
        baseline_allreduce(world, &mut base)?;
        let baseline_s = t0.elapsed().as_secs_f64();
        let baseline_ok = close(&base);

        let predicted = predicted_message_counts(world.size(), args.c, world.rank())?;
        let counts_ok = (0..3).all(|s| {
            predicted[s]
                == MsgCount {
                    sent: stats.msgs_sent[s],
                    received: stats.msgs_received[s],
                }
        });
        Ok((stats, multistage_ok && baseline_ok && counts_ok, baseline_s))
    })?;

    let ok = per_rank.iter().all(|r| r.1);
    let timed = args.common.measure && ok;
    let predicted_total: u64 = (0..args.procs)
        .map(|rank| {
            predicted_message_counts(args.procs, args.c, rank)
                .map(|stages| stages.iter().map(|m| m.sent).sum::<u64>())
        })
        .sum::<Result<u64>>()?;

    let mut report = Report::new("allreduce-bench", 1);
    report.header(&[
        "elems",
        "procs",
        "c",
        "phase",
        "msgs_sent",
        "bytes_sent",
        "predicted_msgs_sent",
        "secs",
        "verdict",
    ]);
    let prefix = |phase: &str| {
        vec![
            args.elems.to_string(),
            args.procs.to_string(),
            args.c.to_string(),
            phase.to_string(),
        ]
    };
    for stage in 0..3 {
        let msgs: u64 = per_rank.iter().map(|r| r.0.msgs_sent[stage]).sum();
        let bytes: u64 = per_rank.iter().map(|r| r.0.bytes_sent[stage]).sum();
        let predicted: u64 = (0..args.procs)
            .map(|rank| predicted_message_counts(args.procs, args.c, rank).map(|s| s[stage].sent))
            .sum::<Result<u64>>()?;
        let secs = per_rank.iter().map(|r| r.0.secs[stage]).fold(0.0, f64::max);
        let mut row = prefix(&format!("stage{}", stage + 1));
        row.extend([
            msgs.to_string(),
            bytes.to_string(),
            predicted.to_string(),
            fmt_secs(timed, secs),
            verdict(ok).to_string(),
        ]);
        report.row(row);
    }

    let total_msgs: u64 = per_rank.iter().map(|r| r.0.total_msgs_sent()).sum();
    let total_bytes: u64 = per_rank.iter().map(|r| r.0.total_bytes_sent()).sum();
    let total_secs = per_rank
        .iter()
        .map(|r| r.0.secs.iter().sum::<f64>())
        .fold(0.0, f64::max);
    let mut row = prefix("multistage_total");
    row.extend([
        total_msgs.to_string(),
        total_bytes.to_string(),
        predicted_total.to_string(),
        fmt_secs(timed, total_secs),
        verdict(ok).to_string(),
    ]);
    report.row(row);

    let baseline_secs = per_rank.iter().map(|r| r.2).fold(0.0, f64::max);
    let baseline_msgs = baseline_predicted_msgs(args.procs);
    let mut row = prefix("baseline");
    row.extend([
        baseline_msgs.to_string(),
        (baseline_msgs * 8 * args.elems as u64).to_string(),
        baseline_msgs.to_string(),
        fmt_secs(timed, baseline_secs),
        verdict(ok).to_string(),
    ]);
    report.row(row);

    report.write(args.common.out.as_deref())?;
    fail_on_bad_verdict(ok)
}

#[derive(Args)]
pub struct PseudoArgs {
    /// Atom count.
    #[arg(long)]
    pub atoms: usize,
    /// Wavefunction count.
    #[arg(long)]
    pub wfs: usize,
    /// Rank count.
    #[arg(long)]
    pub procs: usize,
    /// Ring prefetch window.
    #[arg(long, default_value_t = 2)]
    pub window: usize,
    #[command(flatten)]
    pub common: Common,
}

/// Fixed bench grid: big enough that projector work dominates, small
/// enough that the replicated oracle stays cheap.
const PSEUDO_DIMS: [usize; 3] = [6, 6, 6];
const PSEUDO_CELL: [f64; 3] = [6.0, 6.0, 6.0];

fn pseudo_entries(atoms: usize, seed: u64) -> Result<Vec<PseudoEntry>> {
    let record = KindRecord {
        atomic_number: 14,
        l_channels: 2,
        sigma: 0.6,
        weights: vec![-0.4, 0.25],
    };
    let mut r = rng(seed, 0xA70);
    (0..atoms)
        .map(|atom| {
            let center = [
                r.gen_range(0.0..PSEUDO_CELL[0]),
                r.gen_range(0.0..PSEUDO_CELL[1]),
                r.gen_range(0.0..PSEUDO_CELL[2]),
            ];
            synthesize_entry(atom as u64, &record, PSEUDO_DIMS, PSEUDO_CELL, center)
        })
        .collect()
}

/// `bench pseudo`: applies the nonlocal projectors of `--atoms` synthetic
/// atoms to `--wfs` random wavefunctions, ring-pipelined with the given
/// prefetch window, against the replicated-storage reference. The memory
/// columns report per-rank projector storage for both schemes; the verdict
/// checks agreement at 1e-12 and that each rank forwarded exactly `P-1`
/// shard messages.
pub fn pseudo(args: &PseudoArgs) -> Result<()> {
    if args.atoms == 0 || args.wfs == 0 {
        return Err(Error::InvalidArgument(
            "pseudo bench needs at least one atom and one wavefunction".into(),
        ));
    }
    let n = PSEUDO_DIMS[0] * PSEUDO_DIMS[1] * PSEUDO_DIMS[2];
    let dv = PSEUDO_CELL.iter().product::<f64>() / n as f64;
    let entries = pseudo_entries(args.atoms, args.common.seed())?;
    let entry_bytes = entries[0].encoded_len() as u64;
    let global_wf = random_complex(&mut rng(args.common.seed(), 0x3F), n * args.wfs);

    let per_rank = run_world_on(args.common.transport, args.procs, |world| {
        let wf =
            DistMatrix::from_replicated(world, Layout::ColumnBlock, n, args.wfs, &global_wf)?;
        let shard = AtomShard::for_rank(world, &entries)?;

        world.barrier()?;
        let before = world.counters();
        let t0 = Instant::now();
        let distributed = apply_vnl_distributed(world, &wf, &shard, args.window, dv)?;
        let distributed_s = t0.elapsed().as_secs_f64();
        let after = world.counters();

        world.barrier()?;
        let t1 = Instant::now();
        let replicated = apply_vnl_reference(world, &wf, &entries, dv)?;
        let replicated_s = t1.elapsed().as_secs_f64();

        let close = distributed
            .local()
            .iter()
            .zip(replicated.local())
            .all(|(d, r)| (d - r).norm() <= 1e-12);
        let shard_msgs = after.msgs_sent - before.msgs_sent;
        let ok = close && shard_msgs == (world.size() as u64 - 1);
        Ok((ok, shard_msgs, distributed_s, replicated_s))
    })?;

    let ok = per_rank.iter().all(|r| r.0);
    let timed = args.common.measure && ok;
    let shard_msgs: u64 = per_rank.iter().map(|r| r.1).sum();
    let distributed_s = per_rank.iter().map(|r| r.2).fold(0.0, f64::max);
    let replicated_s = per_rank.iter().map(|r| r.3).fold(0.0, f64::max);
    let (replicated_bytes, distributed_bytes) =
        pseudo_memory_report(args.atoms as u64, entry_bytes, args.procs as u64);

    let mut report = Report::new("pseudo-bench", 1);
    report.header(&[
        "atoms",
        "wfs",
        "procs",
        "window",
        "grid_points",
        "distributed_s",
        "replicated_s",
        "shard_msgs_sent",
        "predicted_shard_msgs",
        "replicated_bytes_per_rank",
        "distributed_bytes_per_rank",
        "verdict",
    ]);
    report.row(vec![
        args.atoms.to_string(),
        args.wfs.to_string(),
        args.procs.to_string(),
        args.window.to_string(),
        n.to_string(),
        fmt_secs(timed, distributed_s),
        fmt_secs(timed, replicated_s),
        shard_msgs.to_string(),
        (args.procs as u64 * (args.procs as u64 - 1)).to_string(),
        replicated_bytes.to_string(),
        distributed_bytes.to_string(),
        verdict(ok).to_string(),
    ]);

    report.write(args.common.out.as_deref())?;
    fail_on_bad_verdict(ok)
}
