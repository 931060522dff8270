//! Simulated single axis of a ball-on-plate rig.
//!
//! Small-angle linearisation of the ball/plate chain
//! `ṡ = v, v̇ = k_ball·g·α, α̇ = ω, ω̇ = c_u·(u + d)`, discretised exactly with a
//! zero-order hold. The chain matrix is nilpotent, so the matrix exponential
//! is a cubic polynomial in `Δt`.

use std::io::{Read, Write};

use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::PLATE_HALF_WIDTH;

/// Rolling coefficient of a solid sphere.
pub const SOLID_SPHERE: f64 = 5.0 / 7.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Gravity (m/s²).
    pub g: f64,
    pub k_ball: f64,
    /// Plate angular acceleration per ampere (rad/s²/A).
    pub c_u: f64,
    /// Constant input-equivalent imbalance (A).
    pub disturbance: f64,
    pub dt: f64,
    /// Standard deviation of the additive measurement noise on every state.
    pub noise_sigma: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            g: 9.81,
            k_ball: SOLID_SPHERE,
            c_u: 4.0,
            disturbance: 0.0,
            dt: 0.04,
            noise_sigma: 0.0,
        }
    }
}

/// Named view of the state vector `[s, v, α, ω]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    pub s: f64,
    pub v: f64,
    pub alpha: f64,
    pub omega: f64,
}

impl From<Vector4<f64>> for PlantState {
    fn from(x: Vector4<f64>) -> Self {
        Self {
            s: x[0],
            v: x[1],
            alpha: x[2],
            omega: x[3],
        }
    }
}

impl From<PlantState> for Vector4<f64> {
    fn from(s: PlantState) -> Self {
        Vector4::new(s.s, s.v, s.alpha, s.omega)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    params: PlantParams,
    a: Matrix4<f64>,
    b: Vector4<f64>,
}

impl Plant {
    pub fn new(params: PlantParams) -> Result<Self> {
        let PlantParams { g, k_ball, c_u, dt, .. } = params;
        if !(dt > 0.0) || c_u == 0.0 || !(k_ball > 0.0 && k_ball <= 1.0) {
            return Err(Error::InvalidConfig(format!("invalid plant parameters {params:?}")));
        }
        let kg = k_ball * g;
        let (dt2, dt3, dt4) = (dt * dt, dt * dt * dt, dt * dt * dt * dt);
        #[rustfmt::skip]
        let a = Matrix4::new(
            1.0, dt,  kg * dt2 / 2.0, kg * dt3 / 6.0,
            0.0, 1.0, kg * dt,        kg * dt2 / 2.0,
            0.0, 0.0, 1.0,            dt,
            0.0, 0.0, 0.0,            1.0,
        );
        let b = Vector4::new(
            kg * c_u * dt4 / 24.0,
            kg * c_u * dt3 / 6.0,
            c_u * dt2 / 2.0,
            c_u * dt,
        );
        Ok(Self { params, a, b })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    /// Discrete state matrix `A_d`.
    pub fn a(&self) -> &Matrix4<f64> {
        &self.a
    }

    /// Discrete input column `B_d`.
    pub fn b(&self) -> &Vector4<f64> {
        &self.b
    }

    /// `x' = A_d x + B_d (u + d)`.
    pub fn step(&self, x: &Vector4<f64>, u: f64) -> Vector4<f64> {
        self.a * x + self.b * (u + self.params.disturbance)
    }

    pub fn on_plate(x: &Vector4<f64>) -> bool {
        x[0].abs() <= PLATE_HALF_WIDTH
    }

    /// State as seen by a sensor with additive Gaussian noise.
    pub fn measure<R: Rng>(&self, x: &Vector4<f64>, rng: &mut R) -> Vector4<f64> {
        if self.params.noise_sigma == 0.0 {
            return *x;
        }
        let sigma = self.params.noise_sigma;
        x.map(|v| v + sigma * rng.sample::<f64, _>(StandardNormal))
    }
}

/// One sine component of the excitation current.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationSine {
    /// Amplitude (A).
    pub amplitude: f64,
    /// Frequency (Hz).
    pub frequency: f64,
}

/// Synthetic stand-in for manual excitation of the rig.
///
/// An operator feedback keeps the ball on the plate while a sum of sines plus
/// uniform noise excites all modes. The commanded current is clipped to
/// `±amplitude_bound`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationConfig {
    /// Length of the recording (s).
    pub duration: f64,
    pub sines: Vec<ExcitationSine>,
    /// Half-width of the uniform current noise (A).
    pub noise: f64,
    pub amplitude_bound: f64,
    /// Stabilising state feedback of the operator, `u = −K x + excitation`.
    pub feedback: [f64; 4],
    pub seed: u64,
}

/// Operator feedback used by the default excitation.
pub const DEFAULT_OPERATOR_FEEDBACK: [f64; 4] = [10.0, 8.0, 25.0, 4.0];

impl Default for ExcitationConfig {
    fn default() -> Self {
        Self {
            duration: 50.0,
            sines: vec![
                ExcitationSine { amplitude: 0.8, frequency: 0.11 },
                ExcitationSine { amplitude: 0.6, frequency: 0.29 },
                ExcitationSine { amplitude: 0.5, frequency: 0.67 },
                ExcitationSine { amplitude: 0.4, frequency: 1.43 },
            ],
            noise: 0.6,
            amplitude_bound: 3.0,
            feedback: DEFAULT_OPERATOR_FEEDBACK,
            seed: 0,
        }
    }
}

/// Measured states `x_0..x_n` and applied currents `u_0..u_{n−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub dt: f64,
    pub states: Vec<Vector4<f64>>,
    pub controls: Vec<f64>,
}

impl Recording {
    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }

    /// `(x_k, u_k, x_{k+1})` triples.
    pub fn transitions(&self) -> impl Iterator<Item = (&Vector4<f64>, f64, &Vector4<f64>)> + '_ {
        self.controls
            .iter()
            .enumerate()
            .map(move |(k, &u)| (&self.states[k], u, &self.states[k + 1]))
    }

    /// Trailing moving average applied to every state channel and to the current.
    ///
    /// Filtering the current with the same kernel keeps smoothed transitions
    /// consistent with the linear dynamics once the window is full.
    pub fn smoothed(&self, window: usize) -> Result<Self> {
        let mut channels = [const { Vec::new() }; 4];
        for (c, channel) in channels.iter_mut().enumerate() {
            let raw: Vec<f64> = self.states.iter().map(|x| x[c]).collect();
            *channel = smooth(&raw, window)?;
        }
        let states = (0..self.states.len())
            .map(|k| Vector4::new(channels[0][k], channels[1][k], channels[2][k], channels[3][k]))
            .collect();
        Ok(Self {
            dt: self.dt,
            states,
            controls: smooth(&self.controls, window)?,
        })
    }

    /// Writes `k, s, v, alpha, omega, u`; the final row has an empty `u`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "s", "v", "alpha", "omega", "u"])?;
        for (k, x) in self.states.iter().enumerate() {
            let u = self.controls.get(k).map(f64::to_string).unwrap_or_default();
            out.write_record([
                k.to_string(),
                x[0].to_string(),
                x[1].to_string(),
                x[2].to_string(),
                x[3].to_string(),
                u,
            ])?;
        }
        out.flush().map_err(|e| Error::io("recording csv", e))?;
        Ok(())
    }

    /// Reads the schema written by [`Recording::write_csv`], e.g. data logged on a real rig.
    pub fn read_csv<R: Read>(r: R, dt: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut states = Vec::new();
        let mut controls = Vec::new();
        for rec in rdr.deserialize::<(usize, f64, f64, f64, f64, Option<f64>)>() {
            let (_, s, v, alpha, omega, u) = rec?;
            states.push(Vector4::new(s, v, alpha, omega));
            if let Some(u) = u {
                controls.push(u);
            }
        }
        if states.is_empty() || controls.len() + 1 != states.len() {
            return Err(Error::InvalidConfig(format!(
                "recording needs one more state than controls (got {} states, {} controls)",
                states.len(),
                controls.len()
            )));
        }
        Ok(Self { dt, states, controls })
    }
}

/// Runs the excitation on the plant starting from rest.
pub fn collect_data(exc: &ExcitationConfig, plant: &Plant) -> Result<Recording> {
    let dt = plant.params().dt;
    let steps = (exc.duration / dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(exc.seed);
    let phases: Vec<f64> = exc
        .sines
        .iter()
        .map(|_| rng.gen_range(0.0..std::f64::consts::TAU))
        .collect();
    let feedback = Vector4::from(exc.feedback);
    let bound = exc.amplitude_bound.abs();

    let mut x = Vector4::zeros();
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    for k in 0..steps {
        let measured = plant.measure(&x, &mut rng);
        let t = k as f64 * dt;
        let drive: f64 = exc
            .sines
            .iter()
            .zip(&phases)
            .map(|(s, ph)| s.amplitude * (std::f64::consts::TAU * s.frequency * t + ph).sin())
            .sum();
        let jitter = if exc.noise > 0.0 {
            rng.gen_range(-exc.noise..=exc.noise)
        } else {
            0.0
        };
        let u = (-feedback.dot(&measured) + drive + jitter).clamp(-bound, bound);
        states.push(measured);
        controls.push(u);
        x = plant.step(&x, u);
        if !Plant::on_plate(&x) {
            return Err(Error::PlateEdge {
                step: k + 1,
                position: x[0],
            });
        }
    }
    states.push(plant.measure(&x, &mut rng));
    Ok(Recording { dt, states, controls })
}

/// Trailing moving average; the first `window − 1` outputs average the available prefix.
pub fn smooth(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::InvalidConfig("cannot smooth an empty sequence".into()));
    }
    if window == 0 {
        return Err(Error::InvalidConfig("smoothing window must be at least 1".into()));
    }
    Ok((0..series.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(window);
            let slice = &series[lo..=k];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant() -> Plant {
        Plant::new(PlantParams::default()).unwrap()
    }

    #[test]
    fn equilibrium_at_rest() {
        assert_eq!(plant().step(&Vector4::zeros(), 0.0), Vector4::zeros());
    }

    #[test]
    fn constant_angle_accelerates_ball() {
        let p = plant();
        let alpha0 = 0.01;
        let x = Vector4::new(0.0, 0.0, alpha0, 0.0);
        let next = p.step(&x, 0.0);
        let kg = SOLID_SPHERE * 9.81;
        assert!((next[1] - kg * alpha0 * 0.04).abs() < 1e-15);
        assert!((next[1] / alpha0 - 0.28029).abs() < 1e-4);
        assert_eq!(next[2], alpha0);
        assert_eq!(next[3], 0.0);
    }

    #[test]
    fn input_cancels_disturbance() {
        let p = Plant::new(PlantParams {
            disturbance: -2.2,
            ..PlantParams::default()
        })
        .unwrap();
        let x = Vector4::new(0.1, 0.0, 0.0, 0.0);
        assert_eq!(p.step(&x, 2.2), x);
    }

    #[test]
    fn discretisation_matches_quartic_solution() {
        // constant angular acceleration a from rest: s(t) = k g a t⁴ / 24
        let p = plant();
        let u = 0.7;
        let acc = 4.0 * u;
        let kg = SOLID_SPHERE * 9.81;
        let mut x = Vector4::zeros();
        for k in 1..=25 {
            x = p.step(&x, u);
            let t = k as f64 * 0.04;
            let exact = Vector4::new(
                kg * acc * t.powi(4) / 24.0,
                kg * acc * t.powi(3) / 6.0,
                acc * t * t / 2.0,
                acc * t,
            );
            let err = (x - exact).amax() / exact.amax();
            assert!(err < 1e-12, "step {k}: relative error {err}");
        }
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = PlantParams {
            c_u: 0.0,
            ..PlantParams::default()
        };
        assert!(Plant::new(bad).is_err());
        let bad = PlantParams {
            dt: -1.0,
            ..PlantParams::default()
        };
        assert!(Plant::new(bad).is_err());
    }

    #[test]
    fn default_excitation_stays_on_plate() {
        let exc = ExcitationConfig::default();
        let rec = collect_data(&exc, &plant()).unwrap();
        assert_eq!(rec.len(), 1250);
        assert!(rec.controls.iter().all(|u| u.abs() <= 3.0));
        assert!(rec.states.iter().all(Plant::on_plate));
    }

    #[test]
    fn excitation_with_imbalance_stays_on_plate() {
        let p = Plant::new(PlantParams {
            disturbance: -2.2,
            ..PlantParams::default()
        })
        .unwrap();
        collect_data(&ExcitationConfig::default(), &p).unwrap();
    }

    #[test]
    fn zero_excitation_is_silent() {
        let exc = ExcitationConfig {
            amplitude_bound: 0.0,
            ..ExcitationConfig::default()
        };
        let rec = collect_data(&exc, &plant()).unwrap();
        assert!(rec.states.iter().all(|x| *x == Vector4::zeros()));
        assert!(rec.controls.iter().all(|&u| u == 0.0));
    }

    #[test]
    fn seeded_collection_is_reproducible() {
        let exc = ExcitationConfig {
            seed: 42,
            ..ExcitationConfig::default()
        };
        let noisy = Plant::new(PlantParams {
            noise_sigma: 1e-3,
            ..PlantParams::default()
        })
        .unwrap();
        let a = collect_data(&exc, &noisy).unwrap();
        let b = collect_data(&exc, &noisy).unwrap();
        assert_eq!(a, b);
        let c = collect_data(&ExcitationConfig { seed: 43, ..exc }, &noisy).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn runaway_excitation_hits_edge() {
        let exc = ExcitationConfig {
            feedback: [0.0; 4],
            ..ExcitationConfig::default()
        };
        assert!(matches!(
            collect_data(&exc, &plant()),
            Err(Error::PlateEdge { .. })
        ));
    }

    #[test]
    fn smooth_examples() {
        let s = [0.3, -1.0, 2.0, 5.0];
        assert_eq!(smooth(&s, 1).unwrap(), s.to_vec());
        assert_eq!(smooth(&[2.5; 7], 5).unwrap(), vec![2.5; 7]);
        assert!(smooth(&[], 3).is_err());
        assert!(smooth(&s, 0).is_err());
    }

    #[test]
    fn smoothed_ramp_lags() {
        let (slope, dt, w) = (0.3, 0.04, 5);
        let ramp: Vec<f64> = (0..50).map(|k| slope * k as f64 * dt).collect();
        let out = smooth(&ramp, w).unwrap();
        for k in w - 1..ramp.len() {
            let lag = ramp[k] - out[k];
            assert!((lag - (w - 1) as f64 / 2.0 * slope * dt).abs() < 1e-12);
        }
        assert_eq!(out[0], 0.0);
        assert!((out[1] - ramp[1] / 2.0).abs() < 1e-15);
    }

    #[test]
    fn smoothed_recording_obeys_dynamics() {
        let p = Plant::new(PlantParams {
            disturbance: 0.5,
            ..PlantParams::default()
        })
        .unwrap();
        let rec = collect_data(&ExcitationConfig::default(), &p).unwrap();
        let sm = rec.smoothed(5).unwrap();
        for (k, (x, u, x1)) in sm.transitions().enumerate().skip(4) {
            let err = (p.step(x, u) - x1).amax();
            assert!(err < 1e-12, "transition {k}: {err}");
        }
    }

    #[test]
    fn recording_csv_round_trip() {
        let exc = ExcitationConfig {
            duration: 1.0,
            ..ExcitationConfig::default()
        };
        let rec = collect_data(&exc, &plant()).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"k,s,v,alpha,omega,u\n"));
        let back = Recording::read_csv(buf.as_slice(), 0.04).unwrap();
        assert_eq!(back, rec);
    }
}
