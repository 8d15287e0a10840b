//! Evolve the state process along one path and print the trajectory CSV,
//! including the pre/post jump checkpoints.

use itowentzell::noise::{coarsen_wiener, path_noise};
use itowentzell::scenario::ScenarioConfig;
use itowentzell::state::{evolve_state, write_trajectory_csv};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.toml"))?;
    let (fine, jumps) = path_noise(&cfg, 0);
    let wiener = coarsen_wiener(&fine, cfg.finest_steps() / cfg.base_steps)?;
    let traj = evolve_state(&cfg.state, &cfg.x0, &wiener, &jumps)?;

    for (_, pre, post) in traj.jump_pairs() {
        eprintln!("jump at t={:.4}: {:?} -> {:?}", pre.time, pre.value, post.value);
    }
    write_trajectory_csv(&mut std::io::stdout().lock(), &traj)?;
    Ok(())
}
