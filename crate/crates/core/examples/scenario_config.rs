//! Load a scenario, print its derived quantities and round-trip it through TOML.
//!
//!     cargo run --example scenario_config -- scenarios/reference.toml

use itowentzell::scenario::ScenarioConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/reference.toml").into());
    let cfg = ScenarioConfig::load(&path)?;

    println!("{path}");
    println!("  dims        n={} m={} marks={}", cfg.state_dim, cfg.wiener_dim, cfg.mark_dim);
    println!("  horizon     {}", cfg.horizon);
    for l in 0..cfg.refinement_levels {
        println!("  level {l}     {} steps", cfg.steps_at(l));
    }
    println!("  intensity   {}", cfg.jump_law.intensity);
    println!("  basis       {} functions", cfg.field.len());
    println!("  fingerprint {}", cfg.fingerprint());

    let text = cfg.to_toml_string()?;
    assert_eq!(ScenarioConfig::from_toml_str(&text)?, cfg);
    println!("round trip ok ({} bytes)", text.len());

    let mut broken = cfg.clone();
    broken.horizon = -1.0;
    broken.x0.push(0.0);
    for v in broken.violations() {
        println!("  rejected: {v}");
    }
    Ok(())
}
