use std::f64::consts::PI;

use excursion_core::field::{FieldModel, SpectralAtom, SpectralSumField};
use excursion_core::gauss::gauss_tail;
use excursion_core::geometry::{enumerate_faces, Face, RectDomain};
use excursion_core::mec::{
    condition_check, excursion_prob_mu, face_term_mean_ec, face_term_mu, mean_euler_characteristic, vertex_term,
};
use excursion_core::quad::QuadSpec;
use proptest::prelude::*;

fn rect(upper: [f64; 2]) -> RectDomain {
    RectDomain::new(vec![0.0, 0.0], upper.to_vec()).unwrap()
}

fn q() -> QuadSpec {
    QuadSpec::default()
}

fn sqrt5() -> f64 {
    5f64.sqrt()
}

#[test]
fn mu_edge_term_near_its_closed_form() {
    let m = SpectralSumField::cosine();
    let d = rect([1.5 * PI, 0.5 * PI]);
    let edge = Face::new(2, &[0], &[0, 1]).unwrap();
    let v = face_term_mu(&m, &d, &edge, 8.0, &q()).unwrap().value;
    let r = v / (2f64.sqrt() * gauss_tail(4.0));
    assert!((0.95..=1.05).contains(&r), "ratio {r}");
}

#[test]
fn mu_interior_term_near_its_closed_form() {
    let m = SpectralSumField::cosine();
    let d = rect([1.5 * PI, 1.5 * PI]);
    let v = face_term_mu(&m, &d, &Face::interior(2), 8.0, &q()).unwrap().value;
    let r = v / (2.0 * gauss_tail(8.0 / sqrt5()));
    assert!((0.95..=1.05).contains(&r), "ratio {r}");
}

#[test]
fn mu_terms_decay_in_u() {
    let m = SpectralSumField::cosine();
    let d = rect([1.5 * PI, PI]);
    for face in enumerate_faces(&d).into_iter().filter(|f| f.k() >= 1) {
        let a = face_term_mu(&m, &d, &face, 8.0, &q()).unwrap().value;
        let b = face_term_mu(&m, &d, &face, 12.0, &q()).unwrap().value;
        assert!(b < a, "{face}: {b} !< {a}");
    }
}

#[test]
fn vertex_at_the_maximum() {
    let m = SpectralSumField::cosine();
    let d = rect([PI, PI]);
    let t = vertex_term(&m, &d, &Face::vertex(&[1, 1]), 3.0, 0).unwrap();
    let want = 0.25 * gauss_tail(3.0 / sqrt5());
    assert!((t.value - want).abs() <= 3.0 * t.err_est.max(f64::EPSILON * want), "{} vs {want}", t.value);
}

#[test]
fn mean_ec_edge_terms_near_closed_forms() {
    let m = SpectralSumField::cosine();
    let psi = gauss_tail(8.0 / sqrt5());

    let d = rect([1.5 * PI, PI]);
    let edge = Face::new(2, &[0], &[0, 1]).unwrap();
    let v = face_term_mean_ec(&m, &d, &edge, 8.0, &q()).unwrap().value;
    let r = v / (2f64.sqrt() / 2.0 * psi);
    assert!((0.9..=1.1).contains(&r), "[0,3π/2]×[0,π] edge ratio {r}");

    let d = rect([PI, PI]);
    let v = face_term_mean_ec(&m, &d, &edge, 8.0, &q()).unwrap().value;
    let r = v / (2f64.sqrt() / 4.0 * psi);
    assert!((0.9..=1.1).contains(&r), "[0,π]² edge ratio {r}");
}

#[test]
fn interior_mean_ec_collapses_to_mu() {
    let m = SpectralSumField::cosine();
    for upper in [[PI, PI], [1.5 * PI, 1.5 * PI], [0.5 * PI, PI]] {
        let d = rect(upper);
        for u in [3.0, 5.0, 8.0] {
            let a = face_term_mean_ec(&m, &d, &Face::interior(2), u, &q()).unwrap().value;
            let b = face_term_mu(&m, &d, &Face::interior(2), u, &q()).unwrap().value;
            assert!((a / b - 1.0).abs() < 1e-6, "{upper:?} u={u}: {a} vs {b}");
        }
    }
}

#[test]
fn mean_ec_decays() {
    let m = SpectralSumField::cosine();
    let d = rect([PI, PI]);
    let a = mean_euler_characteristic(&m, &d, 6.0, &q(), 0).unwrap().total;
    let b = mean_euler_characteristic(&m, &d, 9.0, &q(), 0).unwrap().total;
    assert!(a > b && b > 0.0, "{a} {b}");
}

#[test]
fn one_dimensional_total_dominates_the_endpoint() {
    let m = SpectralSumField::new(vec![SpectralAtom { freq: vec![1.0], weight: 1.0 }], 0.5).unwrap();
    let d = RectDomain::new(vec![0.2], vec![2.5]).unwrap();
    for u in [2.0, 4.0, 6.0] {
        let total = excursion_prob_mu(&m, &d, u, &q()).unwrap().total;
        let end = gauss_tail(u / m.variance(&[2.5]).sqrt());
        assert!(total >= end, "u={u}: {total} < {end}");
    }
}

#[test]
fn boundary_condition_cases() {
    let m = SpectralSumField::cosine();
    assert!(condition_check(&m, &rect([0.5 * PI, 0.5 * PI])).unwrap().satisfied);
    let r = condition_check(&m, &rect([PI, PI])).unwrap();
    assert!(!r.satisfied);
    assert!(r.near_max.iter().any(|(f, dirs)| f.is_vertex() && !dirs.is_empty()));
    assert!(condition_check(&m, &rect([1.5 * PI, 1.5 * PI])).unwrap().satisfied);
}

#[test]
fn large_level_terms_are_non_negative() {
    let m = SpectralSumField::new(
        vec![
            SpectralAtom { freq: vec![1.0, 0.3], weight: 0.6 },
            SpectralAtom { freq: vec![-0.4, 1.2], weight: 0.5 },
            SpectralAtom { freq: vec![0.7, 0.7], weight: 0.2 },
        ],
        0.8,
    )
    .unwrap();
    let d = RectDomain::new(vec![0.1, 0.2], vec![2.0, 2.5]).unwrap();
    let r = excursion_prob_mu(&m, &d, 15.0, &q()).unwrap();
    assert!(r.per_face.iter().all(|c| c.value >= 0.0), "{:?}", r.per_face);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    // multiplying the field by s maps level u to level u/s
    #[test]
    fn scaling_covariance(s in 0.5f64..2.0, u in 3.0f64..8.0) {
        let m = SpectralSumField::new(
            vec![
                SpectralAtom { freq: vec![1.0, 0.2], weight: 0.5 },
                SpectralAtom { freq: vec![-0.3, 0.9], weight: 0.7 },
            ],
            0.4,
        )
        .unwrap();
        let d = RectDomain::new(vec![0.0, 0.0], vec![1.5, 2.0]).unwrap();
        let a = excursion_prob_mu(&m.scaled(s).unwrap(), &d, u, &q()).unwrap();
        let b = excursion_prob_mu(&m, &d, u / s, &q()).unwrap();
        for (x, y) in a.per_face.iter().zip(&b.per_face) {
            prop_assert_eq!(&x.face, &y.face);
            prop_assert!((x.value - y.value).abs() <= 1e-9 * y.value.abs().max(1e-300), "{}: {} vs {}", x.face, x.value, y.value);
        }
    }
}
