//! Quadratic Q-function over the augmented vector `z = [u; x; p; 1]`.
//!
//! `Q(z) = zᵀ H z = wᵀ φ(z)` where `φ` holds the upper-triangular products
//! `z_i z_j` (row-major, `i ≤ j`). The weight vector absorbs the symmetry
//! factor: `w_ii = H_ii` and `w_ij = 2 H_ij` for `i < j`. This is the only
//! place the convention lives.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reference::RefParams;

/// Number of plant states per axis.
pub const N_X: usize = 4;

/// Smallest admissible `h_uu` before the greedy policy is formed.
pub const H_UU_MIN: f64 = 1e-10;

/// Shape of the augmented vector and of the matching feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QLayout {
    n_p: usize,
    offset: bool,
}

impl QLayout {
    /// `offset = false` drops the constant slot, so no static offset can be learned.
    pub fn new(n_p: usize, offset: bool) -> Self {
        Self { n_p, offset }
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn has_offset(&self) -> bool {
        self.offset
    }

    /// Length of `z`.
    pub fn n_z(&self) -> usize {
        1 + N_X + self.n_p + usize::from(self.offset)
    }

    /// Length of `φ` and `w`.
    pub fn n_w(&self) -> usize {
        let n = self.n_z();
        n * (n + 1) / 2
    }

    /// Slot of the product `z_i z_j` in `φ`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.n_z();
        i * n - i * i.saturating_sub(1) / 2 + (j - i)
    }

    /// Recovers the layout from a weight vector length.
    pub fn from_weight_len(n_w: usize) -> Option<Self> {
        [(3, true), (3, false), (1, true), (1, false)]
            .into_iter()
            .map(|(n_p, offset)| Self::new(n_p, offset))
            .find(|l| l.n_w() == n_w)
    }

    pub fn augment(&self, x: &Vector4<f64>, u: f64, p: &RefParams) -> Result<DVector<f64>> {
        if p.len() != self.n_p {
            return Err(Error::DimensionMismatch {
                context: "augmented vector",
                expected: self.n_p,
                actual: p.len(),
            });
        }
        let mut z = DVector::zeros(self.n_z());
        z[0] = u;
        z.rows_mut(1, N_X).copy_from(x);
        z.rows_mut(1 + N_X, self.n_p).copy_from(p.as_vector());
        if self.offset {
            z[self.n_z() - 1] = 1.0;
        }
        Ok(z)
    }

    /// `φ` of an already assembled `z`.
    pub fn features_of(&self, z: &DVector<f64>) -> DVector<f64> {
        let n = z.len();
        let mut phi = DVector::zeros(n * (n + 1) / 2);
        let mut idx = 0;
        for i in 0..n {
            for j in i..n {
                phi[idx] = z[i] * z[j];
                idx += 1;
            }
        }
        phi
    }

    pub fn features(&self, x: &Vector4<f64>, u: f64, p: &RefParams) -> Result<DVector<f64>> {
        Ok(self.features_of(&self.augment(x, u, p)?))
    }

    fn check_weights(&self, w: &DVector<f64>) -> Result<()> {
        if w.len() != self.n_w() {
            return Err(Error::DimensionMismatch {
                context: "weight vector",
                expected: self.n_w(),
                actual: w.len(),
            });
        }
        Ok(())
    }

    pub fn weights_to_h(&self, w: &DVector<f64>) -> Result<SymmetricH> {
        self.check_weights(w)?;
        let n = self.n_z();
        let mut h = DMatrix::zeros(n, n);
        let mut idx = 0;
        for i in 0..n {
            h[(i, i)] = w[idx];
            idx += 1;
            for j in i + 1..n {
                let v = w[idx] / 2.0;
                h[(i, j)] = v;
                h[(j, i)] = v;
                idx += 1;
            }
        }
        Ok(SymmetricH { layout: *self, h })
    }

    pub fn h_to_weights(&self, h: &DMatrix<f64>) -> Result<DVector<f64>> {
        let n = self.n_z();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "H matrix",
                expected: n,
                actual: h.nrows(),
            });
        }
        let mut w = DVector::zeros(self.n_w());
        let mut idx = 0;
        for i in 0..n {
            w[idx] = h[(i, i)];
            idx += 1;
            for j in i + 1..n {
                w[idx] = 2.0 * h[(i, j)];
                idx += 1;
            }
        }
        Ok(w)
    }

    /// `wᵀ φ(x, u, p)`.
    pub fn q_value(&self, w: &DVector<f64>, x: &Vector4<f64>, u: f64, p: &RefParams) -> Result<f64> {
        self.check_weights(w)?;
        Ok(w.dot(&self.features(x, u, p)?))
    }
}

/// Symmetric Q matrix `H` together with the layout naming its blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricH {
    layout: QLayout,
    h: DMatrix<f64>,
}

impl SymmetricH {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn layout(&self) -> QLayout {
        self.layout
    }

    pub fn h_uu(&self) -> f64 {
        self.h[(0, 0)]
    }

    pub fn h_ux(&self) -> Vector4<f64> {
        Vector4::new(self.h[(0, 1)], self.h[(0, 2)], self.h[(0, 3)], self.h[(0, 4)])
    }

    pub fn h_up(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.layout.n_p,
            (0..self.layout.n_p).map(|j| self.h[(0, 1 + N_X + j)]),
        )
    }

    /// Zero when the layout has no constant slot.
    pub fn h_u1(&self) -> f64 {
        if self.layout.offset {
            self.h[(0, self.layout.n_z() - 1)]
        } else {
            0.0
        }
    }

    pub fn quadratic_form(&self, z: &DVector<f64>) -> f64 {
        z.dot(&(&self.h * z))
    }
}

/// Affine control law `u = −(L_x x + L_ref p + L_off)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub x: Vector4<f64>,
    pub reference: DVector<f64>,
    pub offset: f64,
}

impl GainMatrix {
    pub fn zeros(n_p: usize) -> Self {
        Self {
            x: Vector4::zeros(),
            reference: DVector::zeros(n_p),
            offset: 0.0,
        }
    }

    pub fn n_p(&self) -> usize {
        self.reference.len()
    }

    /// `[L_x | L_ref | L_off]`.
    pub fn to_vec(&self) -> Vec<f64> {
        self.x
            .iter()
            .chain(self.reference.iter())
            .copied()
            .chain(std::iter::once(self.offset))
            .collect()
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 6 && values.len() != 8 {
            return Err(Error::DimensionMismatch {
                context: "gain row",
                expected: 8,
                actual: values.len(),
            });
        }
        let n_p = values.len() - N_X - 1;
        Ok(Self {
            x: Vector4::from_column_slice(&values[..N_X]),
            reference: DVector::from_column_slice(&values[N_X..N_X + n_p]),
            offset: values[N_X + n_p],
        })
    }

    /// `u = −(L_x x + L_ref p + L_off)`.
    pub fn apply(&self, x: &Vector4<f64>, p: &RefParams) -> f64 {
        -(self.x.dot(x) + self.reference.dot(p.as_vector()) + self.offset)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// Closed-form minimiser of `u ↦ Q(x, u, p)`: `L = h_uu⁻¹ [h_ux | h_up | h_u1]`.
pub fn greedy_gain(h: &SymmetricH) -> Result<GainMatrix> {
    let h_uu = h.h_uu();
    if !(h_uu > H_UU_MIN) {
        return Err(Error::NonConvexInControl { h_uu });
    }
    let gain = GainMatrix {
        x: h.h_ux() / h_uu,
        reference: h.h_up() / h_uu,
        offset: h.h_u1() / h_uu,
    };
    if !gain.is_finite() {
        return Err(Error::NumericalFailure("non-finite greedy gain".into()));
    }
    Ok(gain)
}

/// Trained or model-based controller as exchanged on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDocument {
    pub n_p: usize,
    /// Whether `w` is expressed in normalised coordinates.
    pub normalized: bool,
    pub w: Vec<f64>,
    #[serde(rename = "L")]
    pub l: Vec<f64>,
}

impl GainDocument {
    pub fn new(gain: &GainMatrix, w: &DVector<f64>, normalized: bool) -> Self {
        Self {
            n_p: gain.n_p(),
            normalized,
            w: w.iter().copied().collect(),
            l: gain.to_vec(),
        }
    }

    pub fn gain(&self) -> Result<GainMatrix> {
        let g = GainMatrix::from_slice(&self.l)?;
        if g.n_p() != self.n_p {
            return Err(Error::DimensionMismatch {
                context: "gain document",
                expected: self.n_p,
                actual: g.n_p(),
            });
        }
        Ok(g)
    }

    pub fn write_json<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w).map_err(|e| Error::io("gain json", e))?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout() -> QLayout {
        QLayout::new(3, true)
    }

    #[test]
    fn dimensions() {
        assert_eq!(layout().n_z(), 9);
        assert_eq!(layout().n_w(), 45);
        assert_eq!(QLayout::new(1, true).n_w(), 28);
        assert_eq!(QLayout::new(3, false).n_w(), 36);
        assert_eq!(QLayout::from_weight_len(28), Some(QLayout::new(1, true)));
    }

    #[test]
    fn pair_index_matches_feature_order() {
        let l = layout();
        let mut idx = 0;
        for i in 0..l.n_z() {
            for j in i..l.n_z() {
                assert_eq!(l.pair_index(i, j), idx);
                assert_eq!(l.pair_index(j, i), idx);
                idx += 1;
            }
        }
    }

    #[test]
    fn constant_only_feature() {
        let l = layout();
        let phi = l
            .features(&Vector4::zeros(), 0.0, &RefParams::zeros(3))
            .unwrap();
        assert_eq!(phi.len(), 45);
        let one = l.pair_index(8, 8);
        for (k, v) in phi.iter().enumerate() {
            assert_eq!(*v, if k == one { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn all_ones_weights() {
        let h = layout().weights_to_h(&DVector::from_element(45, 1.0)).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(h.matrix()[(i, j)], if i == j { 1.0 } else { 0.5 });
            }
        }
    }

    #[test]
    fn identity_h_weights() {
        let l = layout();
        let w = l.h_to_weights(&DMatrix::identity(9, 9)).unwrap();
        for i in 0..9 {
            for j in i..9 {
                assert_eq!(w[l.pair_index(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn q_value_examples() {
        let l = layout();
        let x = Vector4::new(0.1, -0.2, 0.03, 0.5);
        let p = RefParams::from_slice(&[0.4, -0.1, 0.2]);
        assert_eq!(l.q_value(&DVector::zeros(45), &x, 1.3, &p).unwrap(), 0.0);
        let w = l.h_to_weights(&DMatrix::identity(9, 9)).unwrap();
        let z = l.augment(&x, 1.3, &p).unwrap();
        let q = l.q_value(&w, &x, 1.3, &p).unwrap();
        assert!((q - z.norm_squared()).abs() < 1e-14);
    }

    #[test]
    fn wrong_lengths_rejected() {
        let l = layout();
        assert!(l.weights_to_h(&DVector::zeros(44)).is_err());
        assert!(l.h_to_weights(&DMatrix::zeros(8, 8)).is_err());
        assert!(l
            .features(&Vector4::zeros(), 0.0, &RefParams::zeros(1))
            .is_err());
    }

    #[test]
    fn greedy_gain_examples() {
        let l = layout();
        let mut h = DMatrix::zeros(9, 9);
        h[(0, 0)] = 1.0;
        h[(0, 1)] = 1.0;
        h[(1, 0)] = 1.0;
        let g = greedy_gain(&l.weights_to_h(&l.h_to_weights(&h).unwrap()).unwrap()).unwrap();
        assert_eq!(g.x, Vector4::new(1.0, 0.0, 0.0, 0.0));
        assert_eq!(g.reference, DVector::zeros(3));
        assert_eq!(g.offset, 0.0);

        let mut h = DMatrix::zeros(9, 9);
        h[(0, 0)] = 2.0;
        h[(0, 8)] = 3.0;
        h[(8, 0)] = 3.0;
        let g = greedy_gain(&l.weights_to_h(&l.h_to_weights(&h).unwrap()).unwrap()).unwrap();
        assert_eq!(g.offset, 1.5);
    }

    #[test]
    fn greedy_gain_rejects_nonconvex() {
        let l = layout();
        let mut w = DVector::from_element(45, 1.0);
        w[0] = 1e-12;
        assert!(matches!(
            greedy_gain(&l.weights_to_h(&w).unwrap()),
            Err(Error::NonConvexInControl { .. })
        ));
        w[0] = -1.0;
        assert!(greedy_gain(&l.weights_to_h(&w).unwrap()).is_err());
    }

    #[test]
    fn offsetless_layout_has_zero_offset_gain() {
        let l = QLayout::new(3, false);
        let w = DVector::from_element(l.n_w(), 1.0);
        let g = greedy_gain(&l.weights_to_h(&w).unwrap()).unwrap();
        assert_eq!(g.offset, 0.0);
        assert_eq!(g.to_vec().len(), 8);
    }

    #[test]
    fn policy_apply_examples() {
        let p = RefParams::zeros(3);
        assert_eq!(GainMatrix::zeros(3).apply(&Vector4::new(1.0, 2.0, 3.0, 4.0), &p), 0.0);
        let g = GainMatrix {
            offset: 2.2,
            ..GainMatrix::zeros(3)
        };
        assert_eq!(g.apply(&Vector4::zeros(), &p), -2.2);
    }

    #[test]
    fn gain_document_json_fields() {
        let g = GainMatrix::from_slice(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]).unwrap();
        let doc = GainDocument::new(&g, &DVector::from_element(45, 0.5), true);
        let mut buf = Vec::new();
        doc.write_json(&mut buf).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        let obj = value.as_object().unwrap();
        let mut keys: Vec<_> = obj.keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["L", "n_p", "normalized", "w"]);
        let back = GainDocument::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, doc);
        assert_eq!(back.gain().unwrap(), g);
    }
}
