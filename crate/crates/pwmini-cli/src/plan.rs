//! `plan`: process-count selection from a JSON cost description.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use pwmini::planner::{candidates, plan, PlanInput};
use pwmini::{Error, Result};

use crate::report::{fmt_float, Report};
use crate::Common;

#[derive(Args)]
pub struct PlanArgs {
    /// JSON plan input: atoms, p_min, p_avail, phase, cost model.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

/// Prints the candidate table (process count, modeled cost, chosen flag)
/// and then the selected `P_opt` on its own stdout line — the table goes to
/// `--out` when given, so scripts can read the bare number either way.
pub fn run(args: &PlanArgs) -> Result<()> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.input.display())))?;
    let input: PlanInput = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("plan input: {e}")))?;

    let p_opt = plan(&input)?;
    let mut report = Report::new("plan", 1);
    report.header(&["candidate_p", "cost_s", "chosen"]);
    for p in candidates(&input) {
        report.row(vec![
            p.to_string(),
            input
                .cost
                .seconds(p)
                .map(fmt_float)
                .unwrap_or_else(|| "-".into()),
            (if p == p_opt { "yes" } else { "no" }).to_string(),
        ]);
    }
    report.write(args.common.out.as_deref())?;
    println!("{p_opt}");
    Ok(())
}
