//! Quadratic Q-function bookkeeping: weights, the symmetric H matrix and the
//! greedy gain that minimises Q over the control.

use adp_track::qfunc::{greedy_gain, QLayout};
use adp_track::reference::RefParams;
use nalgebra::{DMatrix, Vector4};

fn main() -> adp_track::Result<()> {
    let layout = QLayout::new(3, true);
    println!("z has {} entries, w has {}", layout.n_z(), layout.n_w());

    let n = layout.n_z();
    let m = DMatrix::from_fn(n, n, |i, j| ((i * 7 + j * 3) % 5) as f64 * 0.1);
    let mut h = &m * m.transpose();
    h[(0, 0)] += 1.0;

    let w = layout.h_to_weights(&h)?;
    let sh = layout.weights_to_h(&w)?;
    let gain = greedy_gain(&sh)?;
    println!("L = {:.4?}", gain.to_vec());

    let x = Vector4::new(0.1, -0.05, 0.02, 0.0);
    let p = RefParams::from_slice(&[0.0, 0.1, 0.05]);
    let u_star = gain.apply(&x, &p);
    for du in [-0.1, 0.0, 0.1] {
        let u = u_star + du;
        println!("Q(x, {u:+.4}, p) = {:.6}", layout.q_value(&w, &x, u, &p)?);
    }
    Ok(())
}
