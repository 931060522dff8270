//! Trajectory-aware (three parameters) against setpoint (one parameter)
//! controllers on the sine-step reference.

use adp_track::experiment::{train, validate, Axis, ExperimentConfig};

fn main() -> adp_track::Result<()> {
    let base = ExperimentConfig::default();
    let reference = base.validation_reference()?;
    let mut finals = Vec::new();
    for n_p in [3, 1] {
        let cfg = ExperimentConfig { n_p, ..base.clone() };
        let learned = train(&cfg, Axis::X)?;
        let v = validate(&cfg, Axis::X, &learned.gain, &reference)?;
        println!("n_p={n_p}: L = {:.3?}", learned.gain.to_vec());

        // Lag behind the reference at a few points of the first sine edge.
        let lag: Vec<String> = [30, 40, 50]
            .iter()
            .map(|&k| format!("{:+.4}", v.mean_position[k] - reference.samples[k]))
            .collect();
        println!("    tracking error at t=1.2/1.6/2.0 s: {}", lag.join(" "));
        println!("    final accumulated cost {:.2}", v.final_cost());
        finals.push(v.final_cost());
    }
    println!("cost ratio n_p=3 / n_p=1: {:.3}", finals[0] / finals[1]);
    Ok(())
}
