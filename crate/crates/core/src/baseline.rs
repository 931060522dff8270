//! Model-based discounted LQ tracking controller.
//!
//! The reference parameters evolve autonomously as `p_{k+1} = T(1)ᵀ p_k`, so
//! the tracking problem becomes a discounted LQ problem on the augmented state
//! `ξ = [x; p; 1]`. The constant channel carries the plant imbalance. Solved by
//! value iteration on the discounted Riccati recursion.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};

use crate::error::{Error, Result};
use crate::lspi::check_psd;
use crate::plant::Plant;
use crate::qfunc::{GainMatrix, QLayout, N_X};
use crate::reference::BasisSpec;

/// Discrete single-input plant `x' = A x + B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Vector4<f64>,
}

impl LinearModel {
    pub fn from_plant(plant: &Plant) -> Self {
        Self {
            a: *plant.a(),
            b: *plant.b(),
        }
    }

    /// Rank test on `[B, AB, A²B, A³B]`.
    pub fn is_controllable(&self) -> bool {
        let mut c = Matrix4::zeros();
        let mut col = self.b;
        for i in 0..N_X {
            c.set_column(i, &col);
            col = self.a * col;
        }
        let sv = c.singular_values();
        sv.min() > 1e-12 * sv.max()
    }
}

/// Dynamics on `ξ = [x; p; 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugModel {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub spec: BasisSpec,
}

impl AugModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn step(&self, xi: &DVector<f64>, u: f64) -> DVector<f64> {
        &self.a * xi + &self.b * u
    }
}

pub fn augment(model: &LinearModel, spec: &BasisSpec, disturbance: f64) -> AugModel {
    let n_p = spec.n_p();
    let n = N_X + n_p + 1;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, 0), (N_X, N_X)).copy_from(&model.a);
    a.view_mut((0, n - 1), (N_X, 1)).copy_from(&(model.b * disturbance));
    a.view_mut((N_X, N_X), (n_p, n_p))
        .copy_from(&spec.shift_matrix(1).transpose());
    a[(n - 1, n - 1)] = 1.0;
    let mut b = DVector::zeros(n);
    b.rows_mut(0, N_X).copy_from(&model.b);
    AugModel { a, b, spec: *spec }
}

/// `Mᵀ Q M` with `M ξ = [x₁ − pᵀρ(0), x₂, x₃, x₄]`.
pub fn tracking_cost(q: &Matrix4<f64>, spec: &BasisSpec) -> DMatrix<f64> {
    let n_p = spec.n_p();
    let n = N_X + n_p + 1;
    let mut m = DMatrix::zeros(N_X, n);
    for i in 0..N_X {
        m[(i, i)] = 1.0;
    }
    let rho0 = spec.basis(0);
    for j in 0..n_p {
        m[(0, N_X + j)] = -rho0[j];
    }
    m.transpose() * q * m
}

#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    /// Cost-to-go matrix on `ξ`.
    pub p: DMatrix<f64>,
    pub gain: GainMatrix,
    pub iterations: usize,
}

/// Settings of the Riccati value iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RiccatiConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 100_000,
        }
    }
}

struct Recursion<'a> {
    aug: &'a AugModel,
    q_aug: DMatrix<f64>,
    r: f64,
    gamma: f64,
}

impl Recursion<'_> {
    /// `(R + γBᵀPB, γBᵀPA)`.
    fn gain_terms(&self, p: &DMatrix<f64>) -> (f64, DVector<f64>) {
        let pb = p * &self.aug.b;
        let h_uu = self.r + self.gamma * self.aug.b.dot(&pb);
        let h_ux = self.aug.a.tr_mul(&pb) * self.gamma;
        (h_uu, h_ux)
    }

    fn next(&self, p: &DMatrix<f64>) -> DMatrix<f64> {
        let (h_uu, h_ux) = self.gain_terms(p);
        let mut next = &self.q_aug + self.aug.a.tr_mul(&(p * &self.aug.a)) * self.gamma
            - &h_ux * h_ux.transpose() / h_uu;
        next = (&next + next.transpose()) * 0.5;
        next
    }

    fn gain(&self, p: &DMatrix<f64>) -> GainMatrix {
        let (h_uu, h_ux) = self.gain_terms(p);
        let l = h_ux / h_uu;
        let n_p = self.aug.spec.n_p();
        GainMatrix {
            x: Vector4::from_iterator(l.rows(0, N_X).iter().copied()),
            reference: l.rows(N_X, n_p).into_owned(),
            offset: l[N_X + n_p],
        }
    }
}

/// Value iteration `P ← Q + γAᵀPA − γ²AᵀPB(R + γBᵀPB)⁻¹BᵀPA` from `P = 0`
/// until `‖P_{t+1} − P_t‖_∞ ≤ tol`.
pub fn solve_discounted_lqt(
    aug: &AugModel,
    q: &Matrix4<f64>,
    r: f64,
    gamma: f64,
    cfg: &RiccatiConfig,
) -> Result<RiccatiSolution> {
    check_psd(q)?;
    if !(r > 0.0) {
        return Err(Error::InvalidCost(format!("control cost must be positive, got {r}")));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidConfig(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    let rec = Recursion {
        aug,
        q_aug: tracking_cost(q, &aug.spec),
        r,
        gamma,
    };
    let n = aug.dim();
    let mut p = DMatrix::zeros(n, n);
    let mut last_delta = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let next = rec.next(&p);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure("non-finite Riccati iterate".into()));
        }
        let min_eig = next.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 * next.amax().max(1.0) {
            return Err(Error::NumericalFailure(format!(
                "Riccati iterate lost positive semi-definiteness (min eigenvalue {min_eig:e})"
            )));
        }
        last_delta = (&next - &p).amax();
        p = next;
        if last_delta <= cfg.tol {
            let gain = rec.gain(&p);
            return Ok(RiccatiSolution {
                p,
                gain,
                iterations: it,
            });
        }
    }
    Err(Error::NotConverged {
        what: "Riccati recursion",
        iterations: cfg.max_iter,
        last_delta,
    })
}

impl RiccatiSolution {
    /// Weights of the model-based Q-function in the `[u; x; p; 1]` layout,
    /// for diffing against learned weights.
    pub fn q_weights(&self, aug: &AugModel, q: &Matrix4<f64>, r: f64, gamma: f64) -> Result<DVector<f64>> {
        let n = aug.dim();
        let pb = &self.p * &aug.b;
        let mut h = DMatrix::zeros(n + 1, n + 1);
        h[(0, 0)] = r + gamma * aug.b.dot(&pb);
        let h_ux = aug.a.tr_mul(&pb) * gamma;
        h.view_mut((0, 1), (1, n)).copy_from(&h_ux.transpose());
        h.view_mut((1, 0), (n, 1)).copy_from(&h_ux);
        let h_xx = tracking_cost(q, &aug.spec) + aug.a.tr_mul(&(&self.p * &aug.a)) * gamma;
        h.view_mut((1, 1), (n, n)).copy_from(&h_xx);
        QLayout::new(aug.spec.n_p(), true).h_to_weights(&h)
    }

    /// Closed-loop spectral radius of the plant block `A − B L_x`.
    pub fn closed_loop_radius(&self, model: &LinearModel) -> f64 {
        let acl = model.a - model.b * self.gain.x.transpose();
        acl.complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
    }
}
