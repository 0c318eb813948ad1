//! Acceptance suite: one line per criterion, non-zero exit if any fails.
//!
//! Pass criterion numbers as arguments to run a subset.

mod criteria;

fn main() {
    let wanted: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (id, run) in criteria::CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let outcome = run();
        println!("{}", outcome.line());
        for note in &outcome.notes {
            println!("    {note}");
        }
        if !outcome.pass {
            failed.push(id);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all selected criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
