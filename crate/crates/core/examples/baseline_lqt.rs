//! Model-based tracking gain from the discounted Riccati recursion on the
//! reference-augmented plant.

use adp_track::baseline::{augment, solve_discounted_lqt, LinearModel, RiccatiConfig};
use adp_track::plant::{Plant, PlantParams};
use adp_track::reference::BasisSpec;
use nalgebra::{Matrix4, Vector4};

fn main() -> adp_track::Result<()> {
    let plant = Plant::new(PlantParams::default())?;
    let model = LinearModel::from_plant(&plant);
    println!("controllable: {}", model.is_controllable());

    let q = Matrix4::from_diagonal(&Vector4::new(800.0, 0.0, 400.0, 0.0));
    for n_p in [1, 3] {
        for d in [0.0, -2.2] {
            let aug = augment(&model, &BasisSpec::new(n_p, 0.04)?, d);
            let sol = solve_discounted_lqt(&aug, &q, 1.0, 0.9, &RiccatiConfig::default())?;
            println!(
                "n_p={n_p} d={d:+.1}: {} iterations, closed-loop radius {:.4}",
                sol.iterations,
                sol.closed_loop_radius(&model)
            );
            println!("    L = {:.4?}", sol.gain.to_vec());
        }
    }
    Ok(())
}
