//! Drives a full comparison from a TOML configuration, as the CLI does.

use adp_track::experiment::{run_compare, ExperimentConfig};

const CONFIG: &str = r#"
seed = 5
n_p = 3
disturbance = -1.0
noise_sigma = 1e-5
repetitions = 3
"#;

fn main() -> adp_track::Result<()> {
    let cfg = ExperimentConfig::from_toml_str(CONFIG)?;
    let out = std::env::temp_dir().join("adp-track-compare");
    let report = run_compare(&cfg, &out)?;
    println!("converged in {} iterations", report.iterations);
    println!("learned {:.4?}", report.learned);
    println!("model   {:.4?}", report.model);
    println!("max relative difference {:.2e}", report.max_relative_difference);
    println!("final cost learned {:.2}, model {:.2}", report.final_cost_learned, report.final_cost_model);
    println!("full config:\n{}", cfg.to_toml_string()?);
    println!("outputs in {}", out.display());
    Ok(())
}
