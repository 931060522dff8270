//! Off-policy LSPI on a frozen batch: prints the convergence trace and the
//! learned gain in physical units.

use adp_track::experiment::{training_batch, Axis, ExperimentConfig};
use adp_track::lspi::{bellman_residual, policy_iterate, renormalize_gain};

fn main() -> adp_track::Result<()> {
    let cfg = ExperimentConfig::default();
    let (_, batch) = training_batch(&cfg, Axis::X)?;
    println!("{} tuples, normalised by {}", batch.len(), batch.scale());

    let layout = cfg.layout();
    let tc = cfg.train_config();
    let out = policy_iterate(&batch, &layout, &tc)?;
    for (l, d) in out.trace.deltas.iter().enumerate() {
        println!("iteration {:>2}: |dw| = {d:.3e}", l + 1);
    }
    println!("converged: {}", out.trace.converged);

    let (res, cost) = bellman_residual(&batch, &layout, &out.weights, &tc)?;
    println!("mean Bellman residual {res:.2e} (mean stage cost {cost:.3e})");

    let gain = renormalize_gain(&out.gain, cfg.v_n);
    println!("L = {:.4?}", gain.to_vec());
    Ok(())
}
