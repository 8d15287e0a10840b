//! Mean-square error of the mollified field at the terminal state as ε
//! shrinks.

use itowentzell::experiments::{run_feps_study, Format, Report};
use itowentzell::feps::FepsParams;
use itowentzell::scenario::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/smooth_field.toml"))?;
    let params = FepsParams::new(vec![0.4, 0.2, 0.1, 0.05, 0.025], 200);
    let report = run_feps_study(&cfg, &params, 0)?;
    for r in &report.rows {
        println!("eps {:<6} mse {:.3e} ± {:.1e}  bound ratio {:.3}", r.epsilon, r.mse, r.ci_halfwidth, r.max_bound_ratio);
    }
    if let Some(s) = report.slope {
        println!("slope {:.3} ± {:.3}", s.slope, s.stderr);
    }
    print!("{}", report.render(Format::Csv));
    Ok(())
}
