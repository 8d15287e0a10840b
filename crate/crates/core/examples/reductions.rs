//! Special cases: the classical Itô-Wentzell formula, the generalized Itô
//! formula and the deterministic chain rule, as itemwise gaps and orders.

use itowentzell::experiments::{run_reduction_suite, Format, Report};
use itowentzell::scenario::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.toml"))?;
    cfg.n_paths = 300;
    let report = run_reduction_suite(&cfg, 0)?;
    for check in ["classical-iw", "generalized-ito", "chain-rule"] {
        let (pass, total) = report.tally(check);
        println!("{check:<16} {pass}/{total} cases, worst gap {:.1e}", report.worst(check));
    }
    for check in ["chain-rule-order", "ito-order"] {
        if let Some(r) = report.row(check) {
            println!("{check:<16} slope {:.3} ± {:.3} (need ≥ {})", r.measured, r.stderr, r.threshold);
        }
    }
    if std::env::args().any(|a| a == "--json") {
        println!("{}", report.render(Format::Json));
    }
    Ok(())
}
