//! Reproducible experiment runs: collect → smooth → fit → train → validate → compare.
//!
//! Every run is a pure function of an [`ExperimentConfig`] (including its
//! seed). Output files are written in a fixed order with shortest round-trip
//! float formatting, so equal configs give byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{augment, solve_discounted_lqt, AugModel, LinearModel, RiccatiConfig, RiccatiSolution};
use crate::error::{Error, Result, StageExt};
use crate::lspi::{
    accumulated_cost, assemble_tuples, normalize, policy_iterate, renormalize_gain, TrainConfig,
    TrainingOutcome, TupleBatch,
};
use crate::plant::{collect_data, ExcitationConfig, ExcitationSine, Plant, PlantParams, Recording};
use crate::qfunc::{GainDocument, GainMatrix, QLayout};
use crate::reference::{
    make_rectangle_2d, make_sine_step, make_training_reference, make_validation_composite, BasisSpec,
    FitConfig, RefParams, ReferenceSignal, ReferenceSignal2d, Rectangle, SineStep,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    SineStep,
    Composite,
    Rectangle2d,
}

/// Plate axis of a run. The Y axis uses its own imbalance and seed offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Flat key-value description of a run. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub reference: ReferenceKind,

    // reference approximation
    pub n_p: usize,
    pub dt: f64,
    pub beta: f64,
    pub horizon: usize,
    /// Fit horizon used for `n_p = 1` controllers.
    pub setpoint_horizon: usize,

    // training
    pub offset_feature: bool,
    pub gamma: f64,
    /// Diagonal of the state cost.
    pub q: [f64; 4],
    pub r: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub ridge: f64,
    pub v_n: f64,
    pub initial_weight: f64,
    pub n_tuples: usize,
    pub smoothing_window: usize,

    // plant
    pub gravity: f64,
    pub k_ball: f64,
    pub c_u: f64,
    /// Imbalance of the X axis (A); 1-D runs use the X axis.
    pub disturbance: f64,
    pub disturbance_y: f64,
    pub noise_sigma: f64,

    // excitation
    pub excitation_bound: f64,
    pub excitation_noise: f64,
    pub excitation_amplitudes: Vec<f64>,
    pub excitation_frequencies: Vec<f64>,
    pub operator_feedback: [f64; 4],

    // model-based baseline
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,

    // validation
    pub repetitions: usize,
    pub step_amplitude: f64,
    pub step_lead_in: f64,
    pub step_hold: f64,
    pub step_transition: f64,
    pub step_duration: f64,
    pub composite_duration: f64,
    pub rect_half_x: f64,
    pub rect_half_y: f64,
    pub rect_speed: f64,
    pub rect_laps: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let plant = PlantParams::default();
        let exc = ExcitationConfig::default();
        let step = SineStep::default();
        let rect = Rectangle::default();
        let riccati = RiccatiConfig::default();
        Self {
            seed: 1,
            reference: ReferenceKind::SineStep,
            n_p: 3,
            dt: plant.dt,
            beta: 0.8,
            horizon: 10,
            setpoint_horizon: 1,
            offset_feature: true,
            gamma: train.gamma,
            q: [800.0, 0.0, 400.0, 0.0],
            r: train.r,
            eps: train.eps,
            max_iter: train.max_iter,
            ridge: train.ridge,
            v_n: train.v_n,
            initial_weight: train.initial_weight,
            n_tuples: 1200,
            smoothing_window: 5,
            gravity: plant.g,
            k_ball: plant.k_ball,
            c_u: plant.c_u,
            disturbance: 0.0,
            disturbance_y: 0.0,
            noise_sigma: 0.0,
            excitation_bound: exc.amplitude_bound,
            excitation_noise: exc.noise,
            excitation_amplitudes: exc.sines.iter().map(|s| s.amplitude).collect(),
            excitation_frequencies: exc.sines.iter().map(|s| s.frequency).collect(),
            operator_feedback: exc.feedback,
            riccati_tol: riccati.tol,
            riccati_max_iter: riccati.max_iter,
            repetitions: 5,
            step_amplitude: step.amplitude,
            step_lead_in: step.lead_in,
            step_hold: step.hold,
            step_transition: step.transition,
            step_duration: step.duration,
            composite_duration: 30.0,
            rect_half_x: rect.half_x,
            rect_half_y: rect.half_y,
            rect_speed: rect.speed,
            rect_laps: rect.laps,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Consistency checks beyond what deserialisation enforces.
    pub fn check(&self) -> Result<()> {
        self.basis()?;
        self.fit_for(self.n_p)?;
        self.train_config().validate()?;
        Plant::new(self.plant_params(Axis::X))?;
        if self.excitation_amplitudes.len() != self.excitation_frequencies.len() {
            return Err(Error::InvalidConfig(
                "excitation_amplitudes and excitation_frequencies differ in length".into(),
            ));
        }
        if self.n_tuples == 0 || self.smoothing_window == 0 || self.repetitions == 0 {
            return Err(Error::InvalidConfig(
                "n_tuples, smoothing_window and repetitions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn basis(&self) -> Result<BasisSpec> {
        BasisSpec::new(self.n_p, self.dt)
    }

    pub fn fit_for(&self, n_p: usize) -> Result<FitConfig> {
        let horizon = if n_p == 1 { self.setpoint_horizon } else { self.horizon };
        FitConfig::new(self.beta, horizon)
    }

    pub fn layout(&self) -> QLayout {
        QLayout::new(self.n_p, self.offset_feature)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            gamma: self.gamma,
            q: Matrix4::from_diagonal(&Vector4::from(self.q)),
            r: self.r,
            eps: self.eps,
            max_iter: self.max_iter,
            ridge: self.ridge,
            v_n: self.v_n,
            initial_weight: self.initial_weight,
        }
    }

    pub fn riccati_config(&self) -> RiccatiConfig {
        RiccatiConfig {
            tol: self.riccati_tol,
            max_iter: self.riccati_max_iter,
        }
    }

    pub fn plant_params(&self, axis: Axis) -> PlantParams {
        PlantParams {
            g: self.gravity,
            k_ball: self.k_ball,
            c_u: self.c_u,
            disturbance: match axis {
                Axis::X => self.disturbance,
                Axis::Y => self.disturbance_y,
            },
            dt: self.dt,
            noise_sigma: self.noise_sigma,
        }
    }

    fn axis_seed(&self, axis: Axis) -> u64 {
        match axis {
            Axis::X => self.seed,
            Axis::Y => self.seed.wrapping_add(1),
        }
    }

    /// Excitation long enough for `n_tuples` transitions after the smoothing warm-up.
    pub fn excitation(&self, axis: Axis) -> ExcitationConfig {
        let steps = self.n_tuples + self.smoothing_window;
        ExcitationConfig {
            duration: steps as f64 * self.dt,
            sines: self
                .excitation_amplitudes
                .iter()
                .zip(&self.excitation_frequencies)
                .map(|(&amplitude, &frequency)| ExcitationSine { amplitude, frequency })
                .collect(),
            noise: self.excitation_noise,
            amplitude_bound: self.excitation_bound,
            feedback: self.operator_feedback,
            seed: self.axis_seed(axis),
        }
    }

    pub fn sine_step(&self) -> SineStep {
        SineStep {
            amplitude: self.step_amplitude,
            lead_in: self.step_lead_in,
            hold: self.step_hold,
            transition: self.step_transition,
            duration: self.step_duration,
        }
    }

    pub fn rectangle(&self) -> Rectangle {
        Rectangle {
            half_x: self.rect_half_x,
            half_y: self.rect_half_y,
            speed: self.rect_speed,
            laps: self.rect_laps,
            lead_in: 1.0,
        }
    }

    /// Validation reference for 1-D runs.
    pub fn validation_reference(&self) -> Result<ReferenceSignal> {
        match self.reference {
            ReferenceKind::SineStep => make_sine_step(&self.sine_step(), self.dt),
            ReferenceKind::Composite => make_validation_composite(self.composite_duration, self.dt),
            ReferenceKind::Rectangle2d => Err(Error::InvalidConfig(
                "rectangle-2d is a two-axis reference; use rect2d".into(),
            )),
        }
    }

    pub fn rectangle_reference(&self) -> Result<ReferenceSignal2d> {
        make_rectangle_2d(&self.rectangle(), self.dt)
    }
}

/// A controller learned for one axis, with everything that produced it.
#[derive(Debug, Clone)]
pub struct TrainedController {
    pub layout: QLayout,
    /// Gain in physical units.
    pub gain: GainMatrix,
    /// Outcome in normalised coordinates.
    pub outcome: TrainingOutcome,
    pub recording: Recording,
    pub batch: TupleBatch,
}

impl TrainedController {
    pub fn document(&self) -> GainDocument {
        GainDocument::new(&self.gain, &self.outcome.weights, true)
    }

    pub fn converged(&self) -> bool {
        self.outcome.trace.converged
    }
}

/// Raw excitation data of one axis.
pub fn collect(config: &ExperimentConfig, axis: Axis) -> Result<Recording> {
    let plant = Plant::new(config.plant_params(axis))?;
    collect_data(&config.excitation(axis), &plant).stage("collect")
}

/// Smoothed, normalised training tuples of one axis.
pub fn training_batch(config: &ExperimentConfig, axis: Axis) -> Result<(Recording, TupleBatch)> {
    let recording = collect(config, axis)?;
    let smoothed = recording.smoothed(config.smoothing_window).stage("smooth")?;
    let spec = config.basis()?;
    let fit = config.fit_for(config.n_p)?;
    let skip = config.smoothing_window - 1;
    let duration = (recording.len() + fit.horizon) as f64 * config.dt;
    let reference = make_training_reference(duration, config.dt).stage("training reference")?;
    let batch = assemble_tuples(&smoothed, &reference, &fit, &spec, skip, config.n_tuples).stage("fit")?;
    Ok((recording, normalize(&batch, config.v_n)))
}

/// Full training pipeline for one axis.
pub fn train(config: &ExperimentConfig, axis: Axis) -> Result<TrainedController> {
    config.check()?;
    let (recording, batch) = training_batch(config, axis)?;
    let layout = config.layout();
    let outcome = policy_iterate(&batch, &layout, &config.train_config()).stage("train")?;
    let gain = renormalize_gain(&outcome.gain, config.v_n);
    Ok(TrainedController {
        layout,
        gain,
        outcome,
        recording,
        batch,
    })
}

/// Model-based tracking gain for the same simulated axis.
pub fn model_controller(config: &ExperimentConfig, axis: Axis, n_p: usize) -> Result<(AugModel, RiccatiSolution)> {
    let params = config.plant_params(axis);
    let plant = Plant::new(params)?;
    let model = LinearModel::from_plant(&plant);
    if !model.is_controllable() {
        return Err(Error::InvalidConfig("plant model is not controllable".into()));
    }
    let aug = augment(&model, &BasisSpec::new(n_p, config.dt)?, params.disturbance);
    let sol = solve_discounted_lqt(&aug, &Matrix4::from_diagonal(&Vector4::from(config.q)), config.r, config.gamma, &config.riccati_config())
        .stage("baseline")?;
    Ok((aug, sol))
}

pub fn model_document(config: &ExperimentConfig, aug: &AugModel, sol: &RiccatiSolution) -> Result<GainDocument> {
    let q = Matrix4::from_diagonal(&Vector4::from(config.q));
    let w = sol.q_weights(aug, &q, config.r, config.gamma)?;
    Ok(GainDocument::new(&sol.gain, &w, false))
}

/// Closed-loop run of one controller on one reference.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub dt: f64,
    pub reference: Vec<f64>,
    pub states: Vec<Vector4<f64>>,
    pub controls: Vec<f64>,
    pub params: Vec<RefParams>,
    pub cost: Vec<f64>,
    /// Step at which the ball left the plate, if it did.
    pub edge_contact: Option<usize>,
}

impl Rollout {
    pub fn final_cost(&self) -> f64 {
        self.cost.last().copied().unwrap_or(0.0)
    }

    pub fn positions(&self) -> impl Iterator<Item = f64> + '_ {
        self.states.iter().map(|x| x[0])
    }
}

/// Simulates `gain` from rest on `reference`, refitting `p_k` at every step.
pub fn rollout(
    plant: &Plant,
    gain: &GainMatrix,
    reference: &ReferenceSignal,
    fit: &FitConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Rollout> {
    let spec = BasisSpec::new(gain.n_p(), plant.params().dt)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vector4::zeros();
    let n = reference.len();
    let mut states = Vec::with_capacity(n);
    let mut controls = Vec::with_capacity(n);
    let mut params = Vec::with_capacity(n);
    let mut edge_contact = None;
    for k in 0..n {
        let p = crate::reference::fit_params(&reference.window(k, fit.horizon), fit, &spec)?;
        let u = gain.apply(&plant.measure(&x, &mut rng), &p);
        states.push(x);
        controls.push(u);
        params.push(p);
        x = plant.step(&x, u);
        if !Plant::on_plate(&x) {
            edge_contact = Some(k + 1);
            break;
        }
    }
    let cost = accumulated_cost(&states, &controls, &params, &spec, cfg)?;
    let len = states.len();
    Ok(Rollout {
        dt: plant.params().dt,
        reference: reference.samples[..len].to_vec(),
        states,
        controls,
        params,
        cost,
        edge_contact,
    })
}

/// Repeated rollouts of one controller with per-step mean and standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Validation {
    pub rollouts: Vec<Rollout>,
    pub mean_position: Vec<f64>,
    pub std_position: Vec<f64>,
    pub mean_control: Vec<f64>,
    pub mean_cost: Vec<f64>,
    pub std_cost: Vec<f64>,
}

impl Validation {
    pub fn final_cost(&self) -> f64 {
        self.mean_cost.last().copied().unwrap_or(0.0)
    }

    pub fn edge_contact(&self) -> Option<usize> {
        self.rollouts.iter().filter_map(|r| r.edge_contact).min()
    }
}

fn mean_std(columns: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    (0..len)
        .map(|k| {
            let n = columns.len() as f64;
            let mean = columns.iter().map(|c| c[k]).sum::<f64>() / n;
            let var = columns.iter().map(|c| (c[k] - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .unzip()
}

/// `config.repetitions` rollouts, run concurrently and merged by index.
pub fn validate(config: &ExperimentConfig, axis: Axis, gain: &GainMatrix, reference: &ReferenceSignal) -> Result<Validation> {
    let plant = Plant::new(config.plant_params(axis))?;
    let fit = config.fit_for(gain.n_p())?;
    let cfg = config.train_config();
    let base = config.axis_seed(axis).wrapping_mul(1_000_003).wrapping_add(17);
    let rollouts = (0..config.repetitions)
        .into_par_iter()
        .map(|rep| rollout(&plant, gain, reference, &fit, &cfg, base.wrapping_add(rep as u64)))
        .collect::<Result<Vec<_>>>()
        .stage("validate")?;
    let len = rollouts.iter().map(|r| r.states.len()).min().unwrap_or(0);
    let positions: Vec<Vec<f64>> = rollouts.iter().map(|r| r.positions().collect()).collect();
    let controls: Vec<Vec<f64>> = rollouts.iter().map(|r| r.controls.clone()).collect();
    let costs: Vec<Vec<f64>> = rollouts.iter().map(|r| r.cost.clone()).collect();
    let (mean_position, std_position) = mean_std(&positions, len);
    let (mean_control, _) = mean_std(&controls, len);
    let (mean_cost, std_cost) = mean_std(&costs, len);
    Ok(Validation {
        rollouts,
        mean_position,
        std_position,
        mean_control,
        mean_cost,
        std_cost,
    })
}

/// Settled error on each plateau of a sine-step reference.
///
/// For every complete plateau, the mean ball position over the last quarter of
/// the hold is compared with the plateau level. Returns `(level, error)` pairs.
pub fn plateau_errors(rollout: &Rollout, step: &SineStep) -> Vec<(f64, f64)> {
    let dt = rollout.dt;
    let period = step.transition + step.hold;
    let mut out = Vec::new();
    let mut edge = 0usize;
    loop {
        let start = step.lead_in + edge as f64 * period + step.transition;
        let end = start + step.hold;
        if end > step.duration {
            break;
        }
        let from = ((start + 0.75 * step.hold) / dt).ceil() as usize;
        let to = ((end / dt).floor() as usize).min(rollout.states.len());
        if from >= to {
            break;
        }
        let level = if edge.is_multiple_of(2) { step.amplitude } else { -step.amplitude };
        let mean = rollout.states[from..to].iter().map(|x| x[0]).sum::<f64>() / (to - from) as f64;
        out.push((level, mean - level));
        edge += 1;
    }
    out
}

/// Mean absolute settled plateau error.
pub fn steady_state_error(rollout: &Rollout, step: &SineStep) -> f64 {
    let errs = plateau_errors(rollout, step);
    errs.iter().map(|(_, e)| e.abs()).sum::<f64>() / errs.len().max(1) as f64
}

/// Elementwise `|a − b| / max(|b|, 1e−6·‖b‖∞)`.
pub fn relative_difference(learned: &[f64], model: &[f64]) -> Vec<f64> {
    let scale = model.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    learned
        .iter()
        .zip(model)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1e-6 * scale).max(f64::MIN_POSITIVE))
        .collect()
}

// ---------------------------------------------------------------------------
// File output

fn write_file(path: &Path, body: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_file(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w).map_err(|e| Error::io(path, e))
    })
}

fn write_rollout(path: &Path, r: &Rollout) -> Result<()> {
    write_file(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "t", "r", "s", "v", "alpha", "omega", "u", "cost"])?;
        for (k, x) in r.states.iter().enumerate() {
            out.write_record([
                k.to_string(),
                (k as f64 * r.dt).to_string(),
                r.reference[k].to_string(),
                x[0].to_string(),
                x[1].to_string(),
                x[2].to_string(),
                x[3].to_string(),
                r.controls[k].to_string(),
                r.cost[k].to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    })
}

fn write_summary(path: &Path, v: &Validation) -> Result<()> {
    let Some(first) = v.rollouts.first() else {
        return Ok(());
    };
    write_file(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["k", "t", "r", "s_mean", "s_std", "u_mean", "cost_mean", "cost_std"])?;
        for k in 0..v.mean_position.len() {
            out.write_record([
                k.to_string(),
                (k as f64 * first.dt).to_string(),
                first.reference[k].to_string(),
                v.mean_position[k].to_string(),
                v.std_position[k].to_string(),
                v.mean_control[k].to_string(),
                v.mean_cost[k].to_string(),
                v.std_cost[k].to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    })
}

fn write_validation(dir: &Path, tag: &str, v: &Validation) -> Result<()> {
    for (rep, r) in v.rollouts.iter().enumerate() {
        write_rollout(&dir.join(format!("{tag}_rep{rep}.csv")), r)?;
    }
    write_summary(&dir.join(format!("{tag}_summary.csv")), v)
}

const PLOT_SCRIPT: &str = r#"# Plotting helper for the CSV files in this directory.
# Usage: python plot.py
import glob

import matplotlib.pyplot as plt
import pandas as pd

for path in sorted(glob.glob("*_summary.csv")):
    df = pd.read_csv(path)
    fig, (top, bottom) = plt.subplots(2, 1, sharex=True)
    top.plot(df.t, df.r, "k", label="reference")
    top.plot(df.t, df.s_mean, label="ball position")
    top.fill_between(df.t, df.s_mean - df.s_std, df.s_mean + df.s_std, alpha=0.3)
    top.set_ylabel("s [m]")
    top.legend()
    bottom.plot(df.t, df.cost_mean)
    bottom.set_ylabel("accumulated cost")
    bottom.set_xlabel("t [s]")
    fig.savefig(path.replace(".csv", ".png"))
"#;

fn write_plot_script(dir: &Path) -> Result<()> {
    write_file(&dir.join("plot.py"), |w| {
        w.write_all(PLOT_SCRIPT.as_bytes())
            .map_err(|e| Error::io(dir.join("plot.py"), e))
    })
}

/// Files written by [`run_train`].
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub controller: TrainedController,
    pub gain_path: PathBuf,
    pub trace_path: PathBuf,
}

/// `collect`: writes `data.csv` with the raw excitation recording.
pub fn run_collect(config: &ExperimentConfig, out: &Path) -> Result<Recording> {
    config.check()?;
    ensure_dir(out)?;
    let rec = collect(config, Axis::X)?;
    write_file(&out.join("data.csv"), |w| rec.write_csv(w))?;
    Ok(rec)
}

/// `train`: writes `gain.json`, `trace.csv` and `data.csv`.
pub fn run_train(config: &ExperimentConfig, out: &Path) -> Result<TrainArtifacts> {
    ensure_dir(out)?;
    let controller = train(config, Axis::X)?;
    let gain_path = out.join("gain.json");
    let trace_path = out.join("trace.csv");
    write_file(&gain_path, |w| controller.document().write_json(w))?;
    write_file(&trace_path, |w| controller.outcome.trace.write_csv(w))?;
    write_file(&out.join("data.csv"), |w| controller.recording.write_csv(w))?;
    Ok(TrainArtifacts {
        controller,
        gain_path,
        trace_path,
    })
}

/// `validate`: closed-loop runs of every gain on the configured reference.
///
/// Writes per-repetition and summary CSVs named `gain{i}_*`. If the ball leaves
/// the plate the partial files are still written and a [`Error::PlateEdge`] is returned.
pub fn run_validate(config: &ExperimentConfig, gains: &[GainDocument], out: &Path) -> Result<Vec<Validation>> {
    config.check()?;
    if config.reference == ReferenceKind::Rectangle2d {
        return run_rect2d(config, gains, out).map(|r| vec![r.x, r.y]);
    }
    ensure_dir(out)?;
    let reference = config.validation_reference()?;
    write_file(&out.join("reference.csv"), |w| reference.write_csv(w))?;
    let mut results = Vec::with_capacity(gains.len());
    for (i, doc) in gains.iter().enumerate() {
        let v = validate(config, Axis::X, &doc.gain()?, &reference)?;
        write_validation(out, &format!("gain{i}"), &v)?;
        results.push(v);
    }
    write_plot_script(out)?;
    if let Some(step) = results.iter().filter_map(Validation::edge_contact).min() {
        let position = results
            .iter()
            .flat_map(|v| &v.rollouts)
            .filter(|r| r.edge_contact.is_some())
            .map(|r| r.states.last().map_or(0.0, |x| x[0]))
            .next()
            .unwrap_or(0.0);
        return Err(Error::PlateEdge { step, position }.in_stage("validate"));
    }
    Ok(results)
}

/// Summary written by [`run_compare`] as `compare.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub n_p: usize,
    pub disturbance: f64,
    pub converged: bool,
    pub iterations: usize,
    pub learned: Vec<f64>,
    pub model: Vec<f64>,
    pub relative_difference: Vec<f64>,
    pub max_relative_difference: f64,
    /// Static current `−L_off` commanded by the learned controller at rest.
    pub learned_offset_current: f64,
    /// `|L_off − d| / |d|`, absent without imbalance.
    pub offset_cancellation_error: Option<f64>,
    pub final_cost_learned: f64,
    pub final_cost_model: f64,
}

/// `compare`: learned vs model-based gain on the same plant.
pub fn run_compare(config: &ExperimentConfig, out: &Path) -> Result<CompareReport> {
    ensure_dir(out)?;
    let learned = train(config, Axis::X)?;
    let (aug, sol) = model_controller(config, Axis::X, config.n_p)?;
    let reference = config.validation_reference()?;
    let v_learned = validate(config, Axis::X, &learned.gain, &reference)?;
    let v_model = validate(config, Axis::X, &sol.gain, &reference)?;

    let l = learned.gain.to_vec();
    let m = sol.gain.to_vec();
    let rel = relative_difference(&l, &m);
    let d = config.disturbance;
    let report = CompareReport {
        n_p: config.n_p,
        disturbance: d,
        converged: learned.converged(),
        iterations: learned.outcome.trace.iterations(),
        max_relative_difference: rel.iter().fold(0.0, |a, &b| a.max(b)),
        relative_difference: rel,
        learned: l,
        model: m,
        learned_offset_current: -learned.gain.offset,
        offset_cancellation_error: (d != 0.0).then(|| (learned.gain.offset - d).abs() / d.abs()),
        final_cost_learned: v_learned.final_cost(),
        final_cost_model: v_model.final_cost(),
    };

    write_json(&out.join("compare.json"), &report)?;
    write_file(&out.join("gain_learned.json"), |w| learned.document().write_json(w))?;
    write_file(&out.join("gain_model.json"), |w| model_document(config, &aug, &sol)?.write_json(w))?;
    write_file(&out.join("trace.csv"), |w| learned.outcome.trace.write_csv(w))?;
    write_file(&out.join("reference.csv"), |w| reference.write_csv(w))?;
    write_validation(out, "learned", &v_learned)?;
    write_validation(out, "model", &v_model)?;
    write_plot_script(out)?;
    Ok(report)
}

/// Per-axis results of a two-dimensional run.
#[derive(Debug, Clone)]
pub struct Rect2dReport {
    pub gains: [GainMatrix; 2],
    pub x: Validation,
    pub y: Validation,
}

/// `rect2d`: two independently trained axis controllers tracking a rectangle.
///
/// With two gain documents those are used for X and Y; with none both axes are
/// trained first (concurrently).
pub fn run_rect2d(config: &ExperimentConfig, gains: &[GainDocument], out: &Path) -> Result<Rect2dReport> {
    config.check()?;
    ensure_dir(out)?;
    let [gx, gy] = match gains {
        [] => {
            let (x, y) = rayon::join(|| train(config, Axis::X), || train(config, Axis::Y));
            let (x, y) = (x?, y?);
            write_file(&out.join("gain_x.json"), |w| x.document().write_json(w))?;
            write_file(&out.join("gain_y.json"), |w| y.document().write_json(w))?;
            [x.gain, y.gain]
        }
        [x, y] => [x.gain()?, y.gain()?],
        _ => {
            return Err(Error::InvalidConfig(format!(
                "rect2d takes zero or two gains, got {}",
                gains.len()
            )))
        }
    };
    let reference = config.rectangle_reference()?;
    write_file(&out.join("reference.csv"), |w| reference.write_csv(w))?;
    let (vx, vy) = rayon::join(
        || validate(config, Axis::X, &gx, &reference.x),
        || validate(config, Axis::Y, &gy, &reference.y),
    );
    let (vx, vy) = (vx?, vy?);
    write_validation(out, "x", &vx)?;
    write_validation(out, "y", &vy)?;
    write_file(&out.join("rect2d.csv"), |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["k", "t", "rx", "ry", "sx_mean", "sy_mean", "sx_std", "sy_std"])?;
        let n = vx.mean_position.len().min(vy.mean_position.len());
        for k in 0..n {
            csv.write_record([
                k.to_string(),
                (k as f64 * config.dt).to_string(),
                reference.x.samples[k].to_string(),
                reference.y.samples[k].to_string(),
                vx.mean_position[k].to_string(),
                vy.mean_position[k].to_string(),
                vx.std_position[k].to_string(),
                vy.std_position[k].to_string(),
            ])?;
        }
        csv.flush().map_err(|e| Error::io("rect2d.csv", e))
    })?;
    if let Some(step) = vx.edge_contact().or(vy.edge_contact()) {
        return Err(Error::PlateEdge { step, position: f64::NAN }.in_stage("rect2d"));
    }
    Ok(Rect2dReport {
        gains: [gx, gy],
        x: vx,
        y: vy,
    })
}
