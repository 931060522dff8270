//! A constant imbalance on the plate: with the constant feature the learned
//! controller commands a static current that cancels it.

use adp_track::experiment::{plateau_errors, train, validate, Axis, ExperimentConfig};

fn main() -> adp_track::Result<()> {
    let base = ExperimentConfig {
        disturbance: -2.2,
        ..ExperimentConfig::default()
    };
    let reference = base.validation_reference()?;
    let step = base.sine_step();
    for offset_feature in [true, false] {
        let cfg = ExperimentConfig { offset_feature, ..base.clone() };
        let learned = train(&cfg, Axis::X)?;
        let v = validate(&cfg, Axis::X, &learned.gain, &reference)?;
        println!(
            "offset feature {offset_feature}: L_off = {:+.4}, static current {:+.4} A",
            learned.gain.offset, -learned.gain.offset
        );
        for (level, err) in plateau_errors(&v.rollouts[0], &step) {
            println!("    plateau {level:+.2} m: settled error {err:+.5} m");
        }
    }
    Ok(())
}
