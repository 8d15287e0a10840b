//! Evolve the random field coefficients and evaluate F, ∇F and the Hessian
//! along the state path at a few checkpoints.

use itowentzell::field::{eval_field, eval_grad, eval_hess, evolve_field};
use itowentzell::noise::{coarsen_wiener, path_noise};
use itowentzell::scenario::ScenarioConfig;
use itowentzell::state::evolve_state;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/smooth_field.toml"))?;
    let (fine, jumps) = path_noise(&cfg, 3);
    let wiener = coarsen_wiener(&fine, cfg.finest_steps() / cfg.base_steps)?;
    let traj = evolve_state(&cfg.state, &cfg.x0, &wiener, &jumps)?;
    let field = evolve_field(&cfg.field, &wiener, &jumps)?;

    println!("{:>8} {:>12} {:>26} {:>12}", "t", "F", "grad F", "tr H");
    let n = cfg.state_dim;
    let stride = (traj.checkpoints.len() / 8).max(1);
    for k in (0..traj.checkpoints.len()).step_by(stride) {
        let (c, x) = (&field.checkpoints[k], &traj.checkpoints[k].value);
        let g = eval_grad(c, &cfg.field, x);
        let h = eval_hess(c, &cfg.field, x);
        let trace: f64 = (0..n).map(|i| h[i * n + i]).sum();
        println!(
            "{:8.4} {:12.6} {:>26} {:12.6}",
            c.time,
            eval_field(c, &cfg.field, x),
            format!("{:.4?}", g),
            trace
        );
    }
    Ok(())
}
