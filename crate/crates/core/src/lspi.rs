//! Off-policy least-squares policy iteration on a frozen batch of tuples.
//!
//! Policy evaluation uses the LSTDQ fixed-point system
//! `(Σ φ_k (φ_k − γ φ'_k)ᵀ + λI) w = Σ φ_k c_k`, and policy improvement is the
//! closed-form greedy gain of the quadratic Q-function.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::plant::Recording;
use crate::qfunc::{greedy_gain, GainMatrix, QLayout};
use crate::reference::{fit_params, BasisSpec, FitConfig, RefParams, ReferenceSignal};

/// Tuples per work item of the parallel LSTDQ accumulation.
const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub gamma: f64,
    /// State cost on `[x₁ − r, x₂, x₃, x₄]`.
    pub q: Matrix4<f64>,
    pub r: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub ridge: f64,
    /// Normalising factor applied to states and reference parameters.
    pub v_n: f64,
    /// Value of every entry of the initial weight vector.
    pub initial_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            q: Matrix4::from_diagonal(&Vector4::new(800.0, 0.0, 400.0, 0.0)),
            r: 1.0,
            eps: 1e-6,
            max_iter: 100,
            ridge: 1e-8,
            v_n: 10.0,
            initial_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.r > 0.0) {
            return Err(Error::InvalidCost(format!("control cost must be positive, got {}", self.r)));
        }
        if !(self.eps > 0.0) || !(self.ridge >= 0.0) || !(self.v_n > 0.0) {
            return Err(Error::InvalidConfig("eps, v_n must be positive and ridge non-negative".into()));
        }
        check_psd(&self.q)
    }
}

pub(crate) fn check_psd(q: &Matrix4<f64>) -> Result<()> {
    if (q - q.transpose()).amax() > 0.0 {
        return Err(Error::InvalidCost("state cost matrix is not symmetric".into()));
    }
    let min = q.symmetric_eigenvalues().min();
    if min < -1e-12 * q.amax().max(1.0) {
        return Err(Error::InvalidCost(format!(
            "state cost matrix is indefinite (min eigenvalue {min:e})"
        )));
    }
    Ok(())
}

/// `c = eᵀ Q e + R u²` with `e = [x₁ − r, x₂, x₃, x₄]`.
pub fn stage_cost(x: &Vector4<f64>, u: f64, r: f64, cfg: &TrainConfig) -> f64 {
    let e = Vector4::new(x[0] - r, x[1], x[2], x[3]);
    e.dot(&(cfg.q * e)) + cfg.r * u * u
}

/// One off-policy sample `{x_k, u_k, x_{k+1}, p_k, p_k⁽¹⁾}`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTuple {
    pub x: Vector4<f64>,
    pub u: f64,
    pub x_next: Vector4<f64>,
    pub p: RefParams,
    pub p_next: RefParams,
}

/// Immutable training set.
///
/// `scale` records the normalisation applied to states and parameters; stage
/// costs are always evaluated in physical units.
#[derive(Debug, Clone, PartialEq)]
pub struct TupleBatch {
    spec: BasisSpec,
    scale: f64,
    tuples: Vec<DataTuple>,
}

impl TupleBatch {
    pub fn new(spec: BasisSpec, tuples: Vec<DataTuple>) -> Result<Self> {
        for t in &tuples {
            if t.p.len() != spec.n_p() || t.p_next.len() != spec.n_p() {
                return Err(Error::DimensionMismatch {
                    context: "tuple reference parameters",
                    expected: spec.n_p(),
                    actual: t.p.len(),
                });
            }
        }
        Ok(Self {
            spec,
            scale: 1.0,
            tuples,
        })
    }

    pub fn spec(&self) -> &BasisSpec {
        &self.spec
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn tuples(&self) -> &[DataTuple] {
        &self.tuples
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Stage cost of tuple `t`, undoing the normalisation first.
    pub fn cost(&self, t: &DataTuple, cfg: &TrainConfig) -> f64 {
        let r0 = t.p.as_vector().dot(&self.spec.basis(0));
        stage_cost(&(t.x / self.scale), t.u, r0 / self.scale, cfg)
    }
}

/// Pairs recorded transitions with reference parameters fitted on a training reference.
///
/// Transitions `skip..skip + n` are used; the reference is indexed by the same
/// step counter. `p_k⁽¹⁾` is the propagated `p_k`, never a refit.
pub fn assemble_tuples(
    recording: &Recording,
    reference: &ReferenceSignal,
    fit: &FitConfig,
    spec: &BasisSpec,
    skip: usize,
    n: usize,
) -> Result<TupleBatch> {
    if skip + n > recording.len() {
        return Err(Error::InvalidConfig(format!(
            "recording has {} transitions, {} requested",
            recording.len(),
            skip + n
        )));
    }
    let tuples = (skip..skip + n)
        .map(|k| {
            let p = fit_params(&reference.window(k, fit.horizon), fit, spec)?;
            let p_next = p.propagate(spec, 1)?;
            Ok(DataTuple {
                x: recording.states[k],
                u: recording.controls[k],
                x_next: recording.states[k + 1],
                p,
                p_next,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    TupleBatch::new(*spec, tuples)
}

/// Scales states and reference parameters by `v_n`; currents are untouched.
pub fn normalize(batch: &TupleBatch, v_n: f64) -> TupleBatch {
    TupleBatch {
        spec: batch.spec,
        scale: batch.scale * v_n,
        tuples: batch
            .tuples
            .iter()
            .map(|t| DataTuple {
                x: t.x * v_n,
                u: t.u,
                x_next: t.x_next * v_n,
                p: t.p.scaled(v_n),
                p_next: t.p_next.scaled(v_n),
            })
            .collect(),
    }
}

/// Maps a gain learned on normalised data back to physical units.
pub fn renormalize_gain(gain: &GainMatrix, v_n: f64) -> GainMatrix {
    GainMatrix {
        x: gain.x * v_n,
        reference: &gain.reference * v_n,
        offset: gain.offset,
    }
}

/// How the LSTDQ sums are accumulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Single pass in tuple order.
    Serial,
    /// Fixed-size chunks reduced in parallel, then summed in chunk order.
    Parallel,
}

fn accumulate(
    tuples: &[DataTuple],
    batch: &TupleBatch,
    layout: &QLayout,
    policy: &GainMatrix,
    cfg: &TrainConfig,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let n = layout.n_w();
    let mut a = DMatrix::zeros(n, n);
    let mut b = DVector::zeros(n);
    for t in tuples {
        let phi = layout.features(&t.x, t.u, &t.p)?;
        let u_next = policy.apply(&t.x_next, &t.p_next);
        let phi_next = layout.features(&t.x_next, u_next, &t.p_next)?;
        let diff = &phi - &phi_next * cfg.gamma;
        a.ger(1.0, &phi, &diff, 1.0);
        b.axpy(batch.cost(t, cfg), &phi, 1.0);
    }
    Ok((a, b))
}

/// LSTDQ evaluation of `policy` on `batch` (parallel reduction).
pub fn lstdq_evaluate(
    batch: &TupleBatch,
    layout: &QLayout,
    policy: &GainMatrix,
    cfg: &TrainConfig,
) -> Result<DVector<f64>> {
    lstdq_evaluate_with(batch, layout, policy, cfg, Reduction::Parallel)
}

pub fn lstdq_evaluate_with(
    batch: &TupleBatch,
    layout: &QLayout,
    policy: &GainMatrix,
    cfg: &TrainConfig,
    reduction: Reduction,
) -> Result<DVector<f64>> {
    if layout.n_p() != batch.spec.n_p() || policy.n_p() != batch.spec.n_p() {
        return Err(Error::DimensionMismatch {
            context: "LSTDQ layout",
            expected: batch.spec.n_p(),
            actual: layout.n_p(),
        });
    }
    let (mut a, b) = match reduction {
        Reduction::Serial => accumulate(&batch.tuples, batch, layout, policy, cfg)?,
        Reduction::Parallel => {
            let parts = batch
                .tuples
                .par_chunks(CHUNK)
                .map(|chunk| accumulate(chunk, batch, layout, policy, cfg))
                .collect::<Result<Vec<_>>>()?;
            let n = layout.n_w();
            parts.into_iter().fold(
                (DMatrix::zeros(n, n), DVector::zeros(n)),
                |(a, b), (pa, pb)| (a + pa, b + pb),
            )
        }
    };
    if !a.iter().chain(b.iter()).all(|v| v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite LSTDQ accumulation".into()));
    }
    for i in 0..a.nrows() {
        a[(i, i)] += cfg.ridge;
    }
    let w = a
        .lu()
        .solve(&b)
        .ok_or(Error::SingularEvaluation { iteration: 0 })?;
    if !w.iter().all(|v| v.is_finite()) {
        return Err(Error::SingularEvaluation { iteration: 0 });
    }
    Ok(w)
}

/// Weights per iteration and the stopping-criterion history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    /// `ŵ_0, ŵ_1, …` in the coordinates training ran in.
    pub weights: Vec<DVector<f64>>,
    /// `‖ŵ_l − ŵ_{l−1}‖₂` for `l ≥ 1`.
    pub deltas: Vec<f64>,
    pub converged: bool,
}

impl TrainingTrace {
    pub fn iterations(&self) -> usize {
        self.deltas.len()
    }

    /// Writes `iter, delta, w_0..w_{n_w−1}`; iteration 0 has an empty delta.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n_w = self.weights.first().map_or(0, |w| w.len());
        let mut header = vec!["iter".to_string(), "delta".to_string()];
        header.extend((0..n_w).map(|i| format!("w_{i}")));
        out.write_record(&header)?;
        for (l, weights) in self.weights.iter().enumerate() {
            let mut row = vec![
                l.to_string(),
                l.checked_sub(1)
                    .map(|i| self.deltas[i].to_string())
                    .unwrap_or_default(),
            ];
            row.extend(weights.iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("trace csv", e))?;
        Ok(())
    }
}

/// Result of policy iteration, expressed in the batch's coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub gain: GainMatrix,
    pub weights: DVector<f64>,
    pub trace: TrainingTrace,
}

/// Alternates LSTDQ evaluation and greedy improvement until
/// `‖ŵ_l − ŵ_{l−1}‖₂ ≤ eps` or `max_iter` evaluations have run.
///
/// Hitting the cap is not an error; the outcome's trace is flagged instead.
pub fn policy_iterate(batch: &TupleBatch, layout: &QLayout, cfg: &TrainConfig) -> Result<TrainingOutcome> {
    cfg.validate()?;
    let w0 = DVector::from_element(layout.n_w(), cfg.initial_weight);
    let mut policy = match greedy_gain(&layout.weights_to_h(&w0)?) {
        Ok(g) => g,
        Err(Error::NonConvexInControl { .. }) => GainMatrix::zeros(layout.n_p()),
        Err(e) => return Err(e),
    };
    let mut trace = TrainingTrace {
        weights: vec![w0],
        deltas: Vec::new(),
        converged: false,
    };
    for l in 1..=cfg.max_iter {
        let w = match lstdq_evaluate(batch, layout, &policy, cfg) {
            Ok(w) => w,
            Err(Error::SingularEvaluation { .. }) => {
                return Err(Error::SingularEvaluation { iteration: l })
            }
            Err(e) => return Err(e.in_iteration(l)),
        };
        let delta = (&w - trace.weights.last().expect("w0 present")).norm();
        policy = greedy_gain(&layout.weights_to_h(&w)?).map_err(|e| e.in_iteration(l))?;
        trace.weights.push(w);
        trace.deltas.push(delta);
        if delta <= cfg.eps {
            trace.converged = true;
            break;
        }
    }
    let weights = trace.weights.last().expect("non-empty trace").clone();
    Ok(TrainingOutcome {
        gain: policy,
        weights,
        trace,
    })
}

/// Mean absolute temporal-difference error of `w` under the greedy policy of `w`,
/// together with the mean absolute stage cost.
pub fn bellman_residual(
    batch: &TupleBatch,
    layout: &QLayout,
    w: &DVector<f64>,
    cfg: &TrainConfig,
) -> Result<(f64, f64)> {
    let policy = greedy_gain(&layout.weights_to_h(w)?)?;
    let mut residual = 0.0;
    let mut cost = 0.0;
    for t in &batch.tuples {
        let c = batch.cost(t, cfg);
        let q = layout.q_value(w, &t.x, t.u, &t.p)?;
        let u_next = policy.apply(&t.x_next, &t.p_next);
        let q_next = layout.q_value(w, &t.x_next, u_next, &t.p_next)?;
        residual += (q - c - cfg.gamma * q_next).abs();
        cost += c.abs();
    }
    let n = batch.len().max(1) as f64;
    Ok((residual / n, cost / n))
}

/// Running undiscounted cost `Σ_{κ≤k} c(x_κ, u_κ, r(p_κ, 0))`.
pub fn accumulated_cost(
    states: &[Vector4<f64>],
    controls: &[f64],
    refs: &[RefParams],
    spec: &BasisSpec,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if states.len() != controls.len() || refs.len() != controls.len() {
        return Err(Error::DimensionMismatch {
            context: "accumulated cost inputs",
            expected: controls.len(),
            actual: states.len().max(refs.len()),
        });
    }
    let mut total = 0.0;
    states
        .iter()
        .zip(controls)
        .zip(refs)
        .map(|((x, &u), p)| {
            total += stage_cost(x, u, p.eval(spec, 0)?, cfg);
            Ok(total)
        })
        .collect()
}
