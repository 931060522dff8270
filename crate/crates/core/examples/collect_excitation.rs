//! Records excitation data on the simulated ball-on-plate axis and smooths it.

use adp_track::plant::{collect_data, ExcitationConfig, Plant, PlantParams};

fn main() -> adp_track::Result<()> {
    let plant = Plant::new(PlantParams::default())?;
    let exc = ExcitationConfig {
        duration: 20.0,
        seed: 3,
        ..ExcitationConfig::default()
    };
    let rec = collect_data(&exc, &plant)?;
    let smoothed = rec.smoothed(5)?;

    let max_s = rec.states.iter().map(|x| x[0].abs()).fold(0.0, f64::max);
    let max_u = rec.controls.iter().map(|u| u.abs()).fold(0.0, f64::max);
    println!("{} transitions, max |s| = {max_s:.3} m, max |u| = {max_u:.2} A", rec.len());

    // Filtering states and currents alike keeps the data on the linear model.
    let worst = smoothed
        .transitions()
        .skip(4)
        .map(|(x, u, x1)| (plant.step(x, u) - x1).amax())
        .fold(0.0, f64::max);
    println!("smoothed model mismatch: {worst:.2e}");

    let mut csv = Vec::new();
    rec.write_csv(&mut csv)?;
    for line in String::from_utf8_lossy(&csv).lines().take(6) {
        println!("{line}");
    }
    Ok(())
}
