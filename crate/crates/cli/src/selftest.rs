//! The acceptance suite, compiled from the same source as the core crate's acceptance target.

use crate::{CheckFailed, SelftestArgs};
use anyhow::{bail, Result};

#[allow(dead_code)]
#[path = "../../core/tests/acceptance/criteria.rs"]
mod criteria;

pub fn run(args: &SelftestArgs) -> Result<()> {
    let mut outcomes = Vec::new();
    let mut failed = Vec::new();
    for (id, criterion) in criteria::CRITERIA {
        if !args.criteria.is_empty() && !args.criteria.contains(&id) {
            continue;
        }
        let outcome = criterion();
        println!("{}", outcome.line());
        for note in &outcome.notes {
            println!("    {note}");
        }
        if !outcome.pass {
            failed.push(id);
        }
        outcomes.push(outcome);
    }
    if let Some(path) = &args.report {
        lattice_inverse::io::write_json(path, &outcomes)?;
    }
    if !failed.is_empty() {
        bail!(CheckFailed(format!("failed criteria {failed:?}")));
    }
    println!("selftest: all selected criteria passed");
    Ok(())
}
