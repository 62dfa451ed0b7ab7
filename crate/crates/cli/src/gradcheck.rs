//! `avd gradcheck`: compare every differentiable op against central finite
//! differences over many random instances and print one verdict per op.

use avd_core::gradcheck::op_reports;
use avd_core::textfmt::format_g6;
use avd_core::Scalar;
use clap::Args;

use crate::{CmdResult, Failure};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Maximum allowed relative error (default: 1e-3 in f32, 1e-6 in f64)
    #[arg(long)]
    tol: Option<f64>,
    /// Check in f64 instead of f32
    #[arg(long = "f64")]
    double: bool,
    /// Random instances per op, one per seed
    #[arg(long, default_value_t = 20)]
    rounds: u64,
}

pub fn run(args: &GradcheckArgs) -> CmdResult {
    if args.double {
        suite::<f64>(args)
    } else {
        suite::<f32>(args)
    }
}

/// Runs every op `rounds` times, keeps the worst error per op, and prints
/// one PASS/FAIL line each.
fn suite<T: Scalar>(args: &GradcheckArgs) -> CmdResult {
    let tol = args.tol.unwrap_or_else(|| T::fd_tol().to_f64_lossy());
    let mut worst: Vec<(&'static str, f64)> = Vec::new();
    for seed in 0..args.rounds {
        let reports = op_reports::<T>(seed).map_err(Failure::runtime)?;
        if worst.is_empty() {
            worst = reports.iter().map(|r| (r.name, r.max_rel_err)).collect();
        } else {
            for (slot, report) in worst.iter_mut().zip(&reports) {
                assert_eq!(slot.0, report.name, "op order is fixed across seeds");
                slot.1 = slot.1.max(report.max_rel_err);
            }
        }
    }

    let mut failures = 0usize;
    for (name, err) in &worst {
        let verdict = if *err < tol { "PASS" } else { "FAIL" };
        println!("{name:<24} max rel err {err:>10.3e}  {verdict}");
        failures += (*err >= tol) as usize;
    }
    if failures == 0 {
        println!("all {} ops within {}", worst.len(), format_g6(tol));
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{failures} ops exceeded {}", format_g6(tol))))
    }
}
