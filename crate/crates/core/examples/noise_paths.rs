//! Sample the noise of one path, coarsen it level by level and write the
//! plain-text dump to stdout.

use itowentzell::noise::{coarsen_wiener, noise_id, path_noise, write_noise_dump};
use itowentzell::scenario::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ScenarioConfig::load(concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.toml"))?;
    let index = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let (fine, jumps) = path_noise(&cfg, index);

    eprintln!("path {index}: {} jumps, noise id {:016x}", jumps.count(), noise_id(&fine, &jumps));
    for l in 0..cfg.refinement_levels {
        let w = coarsen_wiener(&fine, cfg.finest_steps() / cfg.steps_at(l))?;
        // W(T) agrees across levels up to rounding
        eprintln!("  level {l}: dt {:.5}  W(T) = {:?}", w.grid().dt(), w.total());
    }

    write_noise_dump(&mut std::io::stdout().lock(), &fine, &jumps)?;
    Ok(())
}
