//! Local polynomial approximation of a desired reference trajectory.
//!
//! At every step `k` the next `h_r` desired positions are approximated by
//! `r(p_k, i) = p_kᵀ ρ(i)`, where `ρ(i) = [(iΔt)², iΔt, 1]` for the quadratic
//! (trajectory) basis and `ρ(i) = [1]` for the constant (setpoint) basis.
//! Parameters are always ordered highest degree first, `[p2, p1, p0]`.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Half-width of the square plate in metres.
pub const PLATE_HALF_WIDTH: f64 = 0.5;

/// Basis dimension and sampling time of the reference approximation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    n_p: usize,
    dt: f64,
}

impl BasisSpec {
    pub fn new(n_p: usize, dt: f64) -> Result<Self> {
        if n_p != 1 && n_p != 3 {
            return Err(Error::InvalidConfig(format!(
                "basis dimension must be 1 or 3, got {n_p}"
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sampling time must be positive, got {dt}"
            )));
        }
        Ok(Self { n_p, dt })
    }

    /// Quadratic basis used by trajectory controllers.
    pub fn trajectory(dt: f64) -> Result<Self> {
        Self::new(3, dt)
    }

    /// Constant basis used by setpoint controllers.
    pub fn setpoint(dt: f64) -> Result<Self> {
        Self::new(1, dt)
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `ρ(i)`.
    pub fn basis(&self, i: usize) -> DVector<f64> {
        match self.n_p {
            1 => DVector::from_element(1, 1.0),
            _ => {
                let t = i as f64 * self.dt;
                DVector::from_vec(vec![t * t, t, 1.0])
            }
        }
    }

    /// `T(i)`, the matrix with `pᵀ T(i) ρ(j) = pᵀ ρ(i + j)`.
    pub fn shift_matrix(&self, i: usize) -> DMatrix<f64> {
        match self.n_p {
            1 => DMatrix::identity(1, 1),
            _ => {
                let t = i as f64 * self.dt;
                DMatrix::from_row_slice(3, 3, &[1.0, 2.0 * t, t * t, 0.0, 1.0, t, 0.0, 0.0, 1.0])
            }
        }
    }
}

/// Parameter vector of the local reference polynomial.
#[derive(Debug, Clone, PartialEq)]
pub struct RefParams(DVector<f64>);

impl RefParams {
    pub fn new(p: DVector<f64>) -> Self {
        Self(p)
    }

    pub fn from_slice(p: &[f64]) -> Self {
        Self(DVector::from_column_slice(p))
    }

    pub fn zeros(n_p: usize) -> Self {
        Self(DVector::zeros(n_p))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(&self.0 * factor)
    }

    fn check(&self, spec: &BasisSpec) -> Result<()> {
        if self.len() != spec.n_p {
            return Err(Error::DimensionMismatch {
                context: "reference parameters",
                expected: spec.n_p,
                actual: self.len(),
            });
        }
        Ok(())
    }

    /// Desired position `i` steps ahead, `pᵀ ρ(i)`.
    pub fn eval(&self, spec: &BasisSpec, i: usize) -> Result<f64> {
        self.check(spec)?;
        Ok(self.0.dot(&spec.basis(i)))
    }

    /// `p⁽ⁱ⁾` with `(p⁽ⁱ⁾)ᵀ = pᵀ T(i)`.
    pub fn propagate(&self, spec: &BasisSpec, i: usize) -> Result<Self> {
        self.check(spec)?;
        Ok(Self(spec.shift_matrix(i).transpose() * &self.0))
    }
}

/// Weighting and horizon of the reference fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub beta: f64,
    pub horizon: usize,
}

impl FitConfig {
    pub fn new(beta: f64, horizon: usize) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "fit discount must lie in (0, 1], got {beta}"
            )));
        }
        if horizon == 0 {
            return Err(Error::InvalidConfig("fit horizon must be positive".into()));
        }
        Ok(Self { beta, horizon })
    }
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            beta: 0.8,
            horizon: 10,
        }
    }
}

/// Weighted least-squares fit of a reference window.
///
/// Minimises `Σ βⁱ (r̄_i − pᵀρ(i))²` through a QR factorisation of the
/// row-scaled design matrix instead of forming the normal equations.
pub fn fit_params(window: &[f64], cfg: &FitConfig, spec: &BasisSpec) -> Result<RefParams> {
    let h = cfg.horizon;
    if window.len() != h {
        return Err(Error::DimensionMismatch {
            context: "reference window",
            expected: h,
            actual: window.len(),
        });
    }
    let n = spec.n_p();
    if h < n {
        return Err(Error::RankDeficient(format!(
            "horizon {h} is shorter than the basis dimension {n}"
        )));
    }
    let mut design = DMatrix::zeros(h, n);
    let mut rhs = DVector::zeros(h);
    let mut weight = 1.0_f64;
    for (i, &r) in window.iter().enumerate() {
        let sw = weight.sqrt();
        design.row_mut(i).copy_from(&(spec.basis(i) * sw).transpose());
        rhs[i] = r * sw;
        weight *= cfg.beta;
    }
    let qr = design.qr();
    let r = qr.r();
    let scale = r.diagonal().amax();
    if scale == 0.0 || r.diagonal().iter().any(|d| d.abs() <= scale * 1e-12) {
        return Err(Error::RankDeficient(
            "weighted regression matrix is singular".into(),
        ));
    }
    let rhs = qr.q().transpose() * rhs;
    let p = r
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| Error::RankDeficient("triangular solve failed".into()))?;
    Ok(RefParams(p))
}

/// A desired ball position sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal {
    pub dt: f64,
    pub samples: Vec<f64>,
}

impl ReferenceSignal {
    pub fn new(dt: f64, samples: Vec<f64>) -> Self {
        Self { dt, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `r̄_{k:k+h−1}`; past the end the last sample is held.
    pub fn window(&self, k: usize, h: usize) -> Vec<f64> {
        let last = self.samples.last().copied().unwrap_or(0.0);
        (k..k + h)
            .map(|j| self.samples.get(j).copied().unwrap_or(last))
            .collect()
    }

    /// Fitted parameters `p_k` for every sample index.
    pub fn fit_all(&self, cfg: &FitConfig, spec: &BasisSpec) -> Result<Vec<RefParams>> {
        (0..self.len())
            .map(|k| fit_params(&self.window(k, cfg.horizon), cfg, spec))
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, r| m.max(r.abs()))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "t", "r"])?;
        for (k, r) in self.samples.iter().enumerate() {
            out.write_record([k.to_string(), (k as f64 * self.dt).to_string(), r.to_string()])?;
        }
        out.flush().map_err(|e| Error::io("reference csv", e))?;
        Ok(())
    }

    /// Reads the `k, t, r` schema; the sampling time is taken from the `t` column.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut t = Vec::new();
        let mut samples = Vec::new();
        for rec in rdr.deserialize::<(usize, f64, f64)>() {
            let (_, ti, ri) = rec?;
            t.push(ti);
            samples.push(ri);
        }
        let dt = if t.len() >= 2 { t[1] - t[0] } else { 0.0 };
        Ok(Self { dt, samples })
    }
}

/// Two independent axis references sampled on the same clock.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSignal2d {
    pub x: ReferenceSignal,
    pub y: ReferenceSignal,
}

impl ReferenceSignal2d {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "t", "rx", "ry"])?;
        for (k, (rx, ry)) in self.x.samples.iter().zip(&self.y.samples).enumerate() {
            out.write_record([
                k.to_string(),
                (k as f64 * self.x.dt).to_string(),
                rx.to_string(),
                ry.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("reference csv", e))?;
        Ok(())
    }
}

fn check_bounds(signal: ReferenceSignal) -> Result<ReferenceSignal> {
    let amplitude = signal.max_abs();
    if !(amplitude <= PLATE_HALF_WIDTH) {
        return Err(Error::AmplitudeOutOfBounds { amplitude });
    }
    Ok(signal)
}

fn sample_count(duration: f64, dt: f64) -> Result<usize> {
    if !(duration > 0.0 && dt > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "duration and sampling time must be positive (duration {duration}, dt {dt})"
        )));
    }
    Ok((duration / dt).round() as usize + 1)
}

/// Smooth transition from `from` to `to` over `s ∈ [0, 1]`.
fn cosine_blend(from: f64, to: f64, s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    from + (to - from) * 0.5 * (1.0 - (PI * s).cos())
}

/// Square wave between `±amplitude` with half-cosine edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineStep {
    pub amplitude: f64,
    /// Time at rest on zero before the first edge (s).
    pub lead_in: f64,
    /// Plateau length (s).
    pub hold: f64,
    /// Edge length (s).
    pub transition: f64,
    pub duration: f64,
}

impl Default for SineStep {
    fn default() -> Self {
        Self {
            amplitude: 0.15,
            lead_in: 1.0,
            hold: 3.0,
            transition: 0.6,
            duration: 20.0,
        }
    }
}

pub fn make_sine_step(cfg: &SineStep, dt: f64) -> Result<ReferenceSignal> {
    let n = sample_count(cfg.duration, dt)?;
    if !(cfg.transition > 0.0 && cfg.hold >= 0.0 && cfg.lead_in >= 0.0) {
        return Err(Error::InvalidConfig("invalid sine-step timing".into()));
    }
    let a = cfg.amplitude;
    let period = cfg.transition + cfg.hold;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt - cfg.lead_in;
            if t < 0.0 {
                return 0.0;
            }
            let edge = (t / period).floor();
            let into = t - edge * period;
            // edge 0 rises from rest, odd edges fall, even edges rise
            let (from, to) = match edge as u64 {
                0 => (0.0, a),
                e if e % 2 == 1 => (a, -a),
                _ => (-a, a),
            };
            cosine_blend(from, to, into / cfg.transition)
        })
        .collect();
    check_bounds(ReferenceSignal::new(dt, samples))
}

/// Overlaid sines, steps and a ramp for validation runs.
pub fn make_validation_composite(duration: f64, dt: f64) -> Result<ReferenceSignal> {
    let n = sample_count(duration, dt)?;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            if t < 1.0 {
                return 0.0;
            }
            let sines = 0.06 * (2.0 * PI * 0.2 * (t - 1.0)).sin()
                + 0.03 * (2.0 * PI * 0.53 * (t - 1.0)).sin();
            let step = match t {
                t if (6.0..11.0).contains(&t) => 0.1,
                t if (14.0..18.0).contains(&t) => -0.1,
                _ => 0.0,
            };
            let ramp = match t {
                t if (20.0..25.0).contains(&t) => 0.12 * (t - 20.0) / 5.0,
                t if (25.0..28.0).contains(&t) => 0.12 * (28.0 - t) / 3.0,
                _ => 0.0,
            };
            sines + step + ramp
        })
        .collect();
    check_bounds(ReferenceSignal::new(dt, samples))
}

/// Amplitudes (m) of the sines in the training reference.
pub const TRAINING_AMPLITUDES: [f64; 3] = [0.10, 0.06, 0.04];
/// Frequencies (Hz) of the sines in the training reference.
pub const TRAINING_FREQUENCIES: [f64; 3] = [0.10, 0.23, 0.41];

/// Sum of incommensurate sines used to generate reference parameters for training.
pub fn make_training_reference(duration: f64, dt: f64) -> Result<ReferenceSignal> {
    let n = sample_count(duration, dt)?;
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            TRAINING_AMPLITUDES
                .iter()
                .zip(TRAINING_FREQUENCIES)
                .map(|(a, f)| a * (2.0 * PI * f * t).sin())
                .sum()
        })
        .collect();
    check_bounds(ReferenceSignal::new(dt, samples))
}

/// Rectangle traversed at constant speed, after a ramp from the origin to the first corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rectangle {
    pub half_x: f64,
    pub half_y: f64,
    /// Speed along the edges (m/s).
    pub speed: f64,
    pub laps: usize,
    pub lead_in: f64,
}

impl Default for Rectangle {
    fn default() -> Self {
        Self {
            half_x: 0.2,
            half_y: 0.15,
            speed: 0.1,
            laps: 2,
            lead_in: 1.0,
        }
    }
}

pub fn make_rectangle_2d(cfg: &Rectangle, dt: f64) -> Result<ReferenceSignal2d> {
    if !(cfg.speed > 0.0 && cfg.half_x > 0.0 && cfg.half_y > 0.0) {
        return Err(Error::InvalidConfig("invalid rectangle geometry".into()));
    }
    let (a, b) = (cfg.half_x, cfg.half_y);
    let mut corners = vec![(0.0, 0.0), (a, b)];
    for _ in 0..cfg.laps {
        corners.extend([(-a, b), (-a, -b), (a, -b), (a, b)]);
    }
    let mut knots = vec![(cfg.lead_in, 0.0, 0.0)];
    let mut time = cfg.lead_in;
    for w in corners.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        time += ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt() / cfg.speed;
        knots.push((time, x1, y1));
    }
    let duration = time + 2.0;
    let n = sample_count(duration, dt)?;
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for k in 0..n {
        let t = k as f64 * dt;
        let (x, y) = match knots.iter().position(|&(tk, _, _)| tk > t) {
            None => {
                let &(_, x, y) = knots.last().expect("non-empty knots");
                (x, y)
            }
            Some(0) => (0.0, 0.0),
            Some(j) => {
                let (t0, x0, y0) = knots[j - 1];
                let (t1, x1, y1) = knots[j];
                let s = (t - t0) / (t1 - t0);
                (x0 + s * (x1 - x0), y0 + s * (y1 - y0))
            }
        };
        xs.push(x);
        ys.push(y);
    }
    Ok(ReferenceSignal2d {
        x: check_bounds(ReferenceSignal::new(dt, xs))?,
        y: check_bounds(ReferenceSignal::new(dt, ys))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj() -> BasisSpec {
        BasisSpec::trajectory(0.04).unwrap()
    }

    #[test]
    fn basis_values() {
        assert_eq!(traj().basis(0).as_slice(), &[0.0, 0.0, 1.0]);
        let b = traj().basis(1);
        assert!((b[0] - 0.0016).abs() < 1e-15);
        assert!((b[1] - 0.04).abs() < 1e-15);
        assert_eq!(b[2], 1.0);
        let sp = BasisSpec::setpoint(0.04).unwrap();
        assert_eq!(sp.basis(7).as_slice(), &[1.0]);
    }

    #[test]
    fn rejects_unsupported_basis() {
        assert!(BasisSpec::new(2, 0.04).is_err());
        assert!(BasisSpec::new(3, 0.0).is_err());
    }

    #[test]
    fn eval_examples() {
        let s = traj();
        let c = RefParams::from_slice(&[0.0, 0.0, 0.3]);
        for i in [0, 3, 100] {
            assert!((c.eval(&s, i).unwrap() - 0.3).abs() < 1e-15);
        }
        let q = RefParams::from_slice(&[1.0, 0.0, 0.0]);
        assert!((q.eval(&s, 2).unwrap() - 0.0064).abs() < 1e-15);
        // 2·0.2² − 0.2 + 0.5
        let p = RefParams::from_slice(&[2.0, -1.0, 0.5]);
        assert!((p.eval(&s, 5).unwrap() - 0.38).abs() < 1e-14);
    }

    #[test]
    fn eval_dimension_mismatch() {
        let p = RefParams::from_slice(&[1.0, 2.0]);
        assert!(matches!(
            p.eval(&traj(), 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn shift_matrix_examples() {
        let s = traj();
        assert_eq!(s.shift_matrix(0), DMatrix::identity(3, 3));
        let t1 = s.shift_matrix(1);
        let expected = DMatrix::from_row_slice(3, 3, &[1.0, 0.08, 0.0016, 0.0, 1.0, 0.04, 0.0, 0.0, 1.0]);
        assert!((t1 - expected).amax() < 1e-15);
        let prod = s.shift_matrix(2) * s.shift_matrix(3);
        assert!((prod - s.shift_matrix(5)).amax() < 1e-14);
    }

    #[test]
    fn propagate_zero_is_identity() {
        let p = RefParams::from_slice(&[0.3, -0.2, 0.1]);
        assert_eq!(p.propagate(&traj(), 0).unwrap(), p);
    }

    #[test]
    fn fit_constant_window() {
        let cfg = FitConfig::default();
        let p = fit_params(&[0.12; 10], &cfg, &traj()).unwrap();
        assert!(p.as_slice()[0].abs() < 1e-12);
        assert!(p.as_slice()[1].abs() < 1e-12);
        assert!((p.as_slice()[2] - 0.12).abs() < 1e-12);
    }

    #[test]
    fn fit_recovers_quadratic() {
        let s = traj();
        let cfg = FitConfig::new(0.8, 10).unwrap();
        let window: Vec<f64> = (0..10)
            .map(|i| {
                let t = i as f64 * 0.04;
                3.0 * t * t - t + 0.1
            })
            .collect();
        let p = fit_params(&window, &cfg, &s).unwrap();
        let residual = (0..10)
            .map(|i| (p.eval(&s, i).unwrap() - window[i]).abs())
            .fold(0.0, f64::max);
        assert!(residual < 1e-10, "residual {residual}");
        let err = (p.as_vector() - DVector::from_vec(vec![3.0, -1.0, 0.1])).amax();
        assert!(err < 1e-9, "parameter error {err}");
    }

    #[test]
    fn fit_rank_deficient() {
        let cfg = FitConfig::new(0.8, 2).unwrap();
        assert!(matches!(
            fit_params(&[0.0, 1.0], &cfg, &traj()),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn fit_window_length_checked() {
        let cfg = FitConfig::default();
        assert!(fit_params(&[0.0; 9], &cfg, &traj()).is_err());
    }

    #[test]
    fn setpoint_fit_is_weighted_mean() {
        let spec = BasisSpec::setpoint(0.04).unwrap();
        let cfg = FitConfig::new(0.5, 3).unwrap();
        let p = fit_params(&[1.0, 2.0, 4.0], &cfg, &spec).unwrap();
        let mean = (1.0 + 0.5 * 2.0 + 0.25 * 4.0) / 1.75;
        assert!((p.as_slice()[0] - mean).abs() < 1e-14);
    }

    #[test]
    fn window_pads_with_last_sample() {
        let r = ReferenceSignal::new(0.04, vec![1.0, 2.0, 3.0]);
        assert_eq!(r.window(1, 4), vec![2.0, 3.0, 3.0, 3.0]);
    }

    #[test]
    fn sine_step_zero_amplitude() {
        let cfg = SineStep {
            amplitude: 0.0,
            ..SineStep::default()
        };
        let r = make_sine_step(&cfg, 0.04).unwrap();
        assert!(r.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_step_plateaus() {
        let cfg = SineStep::default();
        let r = make_sine_step(&cfg, 0.04).unwrap();
        let max = r.samples.iter().cloned().fold(f64::MIN, f64::max);
        let min = r.samples.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - 0.15).abs() < 1e-12);
        assert!((min + 0.15).abs() < 1e-12);
        // middle of the first plateau: lead-in + transition + hold/2
        let k = ((1.0 + 0.6 + 1.5) / 0.04) as usize;
        assert!((r.samples[k] - 0.15).abs() < 1e-12);
        // middle of the second plateau
        let k = ((1.0 + 2.0 * 0.6 + 3.0 + 1.5) / 0.04) as usize;
        assert!((r.samples[k] + 0.15).abs() < 1e-12);
        // edges are continuous
        let jump = r
            .samples
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max);
        assert!(jump < 0.3 * 0.04 / 0.6 * PI / 2.0 + 1e-9);
    }

    #[test]
    fn out_of_bounds_rejected() {
        let cfg = SineStep {
            amplitude: 0.6,
            ..SineStep::default()
        };
        assert!(matches!(
            make_sine_step(&cfg, 0.04),
            Err(Error::AmplitudeOutOfBounds { .. })
        ));
    }

    #[test]
    fn training_reference_bounded() {
        let r = make_training_reference(60.0, 0.04).unwrap();
        assert!(r.max_abs() <= 0.2);
        assert!(r.max_abs() > 0.1);
    }

    #[test]
    fn composite_and_rectangle_within_plate() {
        let c = make_validation_composite(30.0, 0.04).unwrap();
        assert!(c.max_abs() <= PLATE_HALF_WIDTH);
        let rect = make_rectangle_2d(&Rectangle::default(), 0.04).unwrap();
        assert_eq!(rect.x.len(), rect.y.len());
        assert!((rect.x.max_abs() - 0.2).abs() < 1e-9);
        assert!((rect.y.max_abs() - 0.15).abs() < 1e-9);
    }

    #[test]
    fn reference_csv_round_trip() {
        let r = make_training_reference(2.0, 0.04).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("k,t,r\n"));
        let back = ReferenceSignal::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.samples, r.samples);
        assert!((back.dt - 0.04).abs() < 1e-15);
    }
}
