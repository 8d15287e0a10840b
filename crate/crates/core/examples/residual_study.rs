//! Single-path residual of the formula with its term ledger, then the
//! Monte Carlo study across refinement levels.
//!
//!     cargo run --release --example residual_study -- scenarios/jump_only.toml 200

use itowentzell::experiments::{run_residual_study, Format, Report};
use itowentzell::field::evolve_field;
use itowentzell::itowentzell::{residual, LedgerItems};
use itowentzell::noise::{coarsen_wiener, path_noise};
use itowentzell::scenario::ScenarioConfig;
use itowentzell::state::evolve_state;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.toml").into());
    let mut cfg = ScenarioConfig::load(&path)?;
    cfg.n_paths = args.next().map(|s| s.parse()).transpose()?.unwrap_or(200);

    let (fine, jumps) = path_noise(&cfg, 0);
    for l in 0..cfg.refinement_levels {
        let w = coarsen_wiener(&fine, cfg.finest_steps() / cfg.steps_at(l))?;
        let traj = evolve_state(&cfg.state, &cfg.x0, &w, &jumps)?;
        let field = evolve_field(&cfg.field, &w, &jumps)?;
        let trace = residual(&cfg.state, &cfg.field, &traj, &field, &w, &jumps)?;
        println!(
            "level {l}: residual {:+.3e}, worst relative jump deviation {:.1e}",
            trace.terminal(),
            trace.max_relative_jump_deviation()
        );
        if l + 1 == cfg.refinement_levels {
            for (name, v) in LedgerItems::NAMES.iter().zip(trace.ledger.totals.values()) {
                println!("  {name:<16} {v:+.6}");
            }
        }
    }

    let report = run_residual_study(&cfg, 0)?;
    print!("{}", report.render(Format::Csv));
    Ok(())
}
