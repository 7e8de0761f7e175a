//! The twelve acceptance criteria on the SIR reference scenario
//! (beta = 1.5, gamma = 1, g = Exp(0.5), I0 = 0.01, c = 1, T = 25).
//!
//! Criterion 12 asks the final size at T = 25 to match the fixed point under
//! the piecewise contact rate, but with c = 0.8 after t = 8 the second wave is
//! still growing at T = 25 (incidence about 6e-3), so B(25) + I0 = 0.155
//! against a final size of 0.265. That check is reported as failing; the test
//! asserts the failure is exactly this one and that the fixed point is reached
//! once the horizon is extended.

use epi_core::config::Scenario;
use epi_core::validation::{CriterionReport, Suite};

fn print(r: &CriterionReport) {
    println!("{}", r.summary_line());
    for n in &r.notes {
        println!("    {n}");
    }
}

#[test]
fn acceptance() {
    let suite = Suite::new(Scenario::reference().unwrap());
    let reports = suite.run_all();
    for r in &reports {
        print(r);
    }
    let mut unexpected = Vec::new();
    for r in &reports[..11] {
        if !r.pass {
            unexpected.push(r.id);
        }
    }
    let hetero = &reports[11];
    for c in &hetero.checks {
        let final_size = c.name.starts_with("final size");
        if !final_size && !c.pass {
            unexpected.push(12);
        }
    }
    assert!(unexpected.is_empty(), "failing criteria: {unexpected:?}");

    // criterion 12, final size: the only failure, explained by the unfinished epidemic
    assert!(!hetero.pass);
    assert!(hetero.notes.iter().any(|n| n.contains("has not finished")));
    let extended = hetero.notes.iter().find(|n| n.contains("extended horizon")).expect("extended-horizon diagnostic");
    let diff: f64 = extended.rsplit(' ').next().unwrap().parse().unwrap();
    assert!(diff <= 1e-3, "{extended}");
}
