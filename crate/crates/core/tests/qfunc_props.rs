use adp_track::qfunc::{greedy_gain, QLayout};
use adp_track::reference::RefParams;
use nalgebra::{DMatrix, DVector, Vector4};
use proptest::prelude::*;

fn layouts() -> impl Strategy<Value = QLayout> {
    (prop::sample::select(vec![1usize, 3]), any::<bool>()).prop_map(|(n_p, o)| QLayout::new(n_p, o))
}

fn weights(layout: QLayout) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-5.0..5.0f64, layout.n_w()).prop_map(DVector::from_vec)
}

fn point(n_p: usize) -> impl Strategy<Value = (Vector4<f64>, f64, RefParams)> {
    (
        prop::array::uniform4(-1.0..1.0f64),
        -3.0..3.0f64,
        prop::collection::vec(-1.0..1.0f64, n_p),
    )
        .prop_map(|(x, u, p)| (Vector4::from(x), u, RefParams::from_slice(&p)))
}

proptest! {
    #[test]
    fn weights_round_trip_through_h(
        (layout, w) in layouts().prop_flat_map(|l| (Just(l), weights(l)))
    ) {
        let h = layout.weights_to_h(&w).unwrap();
        prop_assert_eq!(h.matrix(), &h.matrix().transpose());
        let back = layout.h_to_weights(h.matrix()).unwrap();
        prop_assert!((back - &w).amax() < 1e-12);
    }

    #[test]
    fn linear_and_quadratic_forms_agree(
        (layout, w, (x, u, p)) in layouts().prop_flat_map(|l| (Just(l), weights(l), point(l.n_p())))
    ) {
        let q = layout.q_value(&w, &x, u, &p).unwrap();
        let z = layout.augment(&x, u, &p).unwrap();
        let zhz = layout.weights_to_h(&w).unwrap().quadratic_form(&z);
        prop_assert!((q - zhz).abs() <= 1e-10 * (1.0 + q.abs()));
    }

    #[test]
    fn pair_index_matches_feature_order(layout in layouts()) {
        let n = layout.n_z();
        let z = DVector::from_iterator(n, (0..n).map(|i| (i + 2) as f64));
        let phi = layout.features_of(&z);
        for i in 0..n {
            for j in i..n {
                prop_assert_eq!(phi[layout.pair_index(i, j)], z[i] * z[j]);
                prop_assert_eq!(layout.pair_index(i, j), layout.pair_index(j, i));
            }
        }
    }

    #[test]
    fn greedy_gain_minimises_over_a_grid(
        (layout, (x, _, p)) in layouts().prop_flat_map(|l| (Just(l), point(l.n_p()))),
        seed in prop::collection::vec(-1.0..1.0f64, 64),
        h_uu in 0.5..5.0f64,
    ) {
        // Random convex-in-u H: positive definite block plus a positive u diagonal.
        let n = layout.n_z();
        let m = DMatrix::from_iterator(n, n, seed.iter().cycle().copied().take(n * n));
        let mut h = &m * m.transpose();
        h[(0, 0)] += h_uu;
        let w = layout.h_to_weights(&h).unwrap();
        let sh = layout.weights_to_h(&w).unwrap();
        let gain = greedy_gain(&sh).unwrap();
        let u_star = gain.apply(&x, &p);
        let q_star = layout.q_value(&w, &x, u_star, &p).unwrap();
        for k in -200..=200 {
            let u = u_star + k as f64 * 0.05;
            prop_assert!(layout.q_value(&w, &x, u, &p).unwrap() >= q_star - 1e-9 * (1.0 + q_star.abs()));
        }
    }
}

#[test]
fn from_weight_len_recognises_all_layouts() {
    for (n_p, offset) in [(1, false), (1, true), (3, false), (3, true)] {
        let l = QLayout::new(n_p, offset);
        assert_eq!(QLayout::from_weight_len(l.n_w()), Some(l));
    }
    assert_eq!(QLayout::from_weight_len(7), None);
}
