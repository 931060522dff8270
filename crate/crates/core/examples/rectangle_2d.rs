//! Two independently trained axis controllers following a rectangle.

use adp_track::experiment::{run_rect2d, ExperimentConfig};

fn main() -> adp_track::Result<()> {
    let cfg = ExperimentConfig {
        disturbance: 0.3,
        disturbance_y: -0.2,
        ..ExperimentConfig::default()
    };
    let out = std::env::temp_dir().join("adp-track-rect2d");
    let report = run_rect2d(&cfg, &[], &out)?;
    println!("L_x axis = {:.3?}", report.gains[0].to_vec());
    println!("L_y axis = {:.3?}", report.gains[1].to_vec());
    let worst = |v: &adp_track::experiment::Validation, r: &[f64]| {
        v.mean_position.iter().zip(r).map(|(s, r)| (s - r).abs()).fold(0.0, f64::max)
    };
    let reference = cfg.rectangle_reference()?;
    println!("max |error| x {:.4} m, y {:.4} m", worst(&report.x, &reference.x.samples), worst(&report.y, &reference.y.samples));
    println!("files in {}", out.display());
    Ok(())
}
