//! Rate of the law of large numbers on the SIR reference scenario.

use epi_core::analysis::lln_convergence_report;
use epi_core::config::Scenario;

#[test]
fn deviation_scales_like_inverse_root_n() {
    let scn = Scenario::reference().unwrap();
    let i = scn.model.compartments().index("I").unwrap();
    let replicas = 10;
    let rep = lln_convergence_report(&scn, i, &[1_000, 10_000, 100_000], replicas, 0.02).unwrap();
    for r in &rep.per_n {
        println!("{}: {:.5} +- {:.5}", r.name, r.value, r.se);
    }
    println!("fitted exponent {:.3}", rep.exponent);
    assert!((-0.7..=-0.3).contains(&rep.exponent), "{}", rep.exponent);
    let smaller = rep.deviations[2].iter().zip(&rep.deviations[0]).filter(|(big_n, small_n)| big_n < small_n).count();
    assert!(smaller * 10 >= 9 * replicas, "{smaller} of {replicas}");
}
