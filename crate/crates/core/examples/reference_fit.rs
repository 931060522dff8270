//! Fits local quadratics to a sine-step reference and shows how the
//! propagated parameters predict the reference a few steps later.

use adp_track::reference::{fit_params, make_sine_step, BasisSpec, FitConfig, SineStep};

fn main() -> adp_track::Result<()> {
    let dt = 0.04;
    let reference = make_sine_step(&SineStep::default(), dt)?;
    let spec = BasisSpec::trajectory(dt)?;
    let fit = FitConfig::default();

    println!("{:>6} {:>9} {:>9} {:>9} {:>9}", "t", "r", "fit r", "r(k+3)", "pred");
    for k in (0..reference.len() - 3).step_by(25) {
        let p = fit_params(&reference.window(k, fit.horizon), &fit, &spec)?;
        let ahead = p.propagate(&spec, 3)?;
        println!(
            "{:>6.2} {:>9.5} {:>9.5} {:>9.5} {:>9.5}",
            k as f64 * dt,
            reference.samples[k],
            p.eval(&spec, 0)?,
            reference.samples[k + 3],
            ahead.eval(&spec, 0)?,
        );
    }

    // With a single parameter the fit is a weighted mean of the window.
    let setpoint = BasisSpec::setpoint(dt)?;
    let p = fit_params(&reference.window(40, fit.horizon), &fit, &setpoint)?;
    println!("setpoint parameter at k=40: {:.5}", p.as_slice()[0]);
    Ok(())
}
