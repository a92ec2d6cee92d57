use ndarray::array;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::autodiff::jacobian;

fn random_matrix(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_shape_fn((n, n), |_| StandardNormal.sample(rng))
}

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let m = random_matrix(n, rng);
    (&m + &m.t()) * 0.5
}

fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let m = random_matrix(n, rng);
    m.t().dot(&m) + Tensor::eye(n) * 0.1
}

fn close(a: Complex64, re: f64, im: f64) -> bool {
    (a.re - re).abs() < 1e-12 && (a.im - im).abs() < 1e-12
}

fn sorted(a: &Tensor) -> Vec<Complex64> {
    let eig = eigenvalues(a).unwrap();
    sorted_order(&eig).into_iter().map(|k| eig[k]).collect()
}

#[test]
fn hamiltonian_constraint_examples() {
    let j = SymplecticJ::new(2).unwrap().matrix();
    assert_eq!(hamiltonian_constraint(&j).unwrap(), 0.0);
    assert_eq!(hamiltonian_constraint(&Tensor::eye(2)).unwrap(), 8.0);
    assert_eq!(hamiltonian_constraint(&array![[1.0, 0.0], [0.0, -1.0]]).unwrap(), 0.0);
    assert!(matches!(hamiltonian_constraint(&Tensor::eye(3)), Err(Error::OddDimension(3))));
    assert!(matches!(
        hamiltonian_constraint(&Tensor::zeros((2, 4))),
        Err(Error::NotSquare { .. })
    ));
}

#[test]
fn hamiltonian_constraint_vanishes_exactly_on_hamiltonian_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [2, 4, 6] {
        let j = SymplecticJ::new(n).unwrap().matrix();
        for _ in 0..20 {
            let sym = random_symmetric(n, &mut rng);
            assert!(hamiltonian_constraint(&j.dot(&sym)).unwrap() < 1e-12);
            let mut asym = sym.clone();
            asym[[0, 1]] += 0.5;
            assert!(hamiltonian_constraint(&j.dot(&asym)).unwrap() > 1e-12);
        }
    }
}

#[test]
fn hamiltonian_constraint_ignores_symmetric_additions() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let j = SymplecticJ::new(4).unwrap().matrix();
    for _ in 0..20 {
        let m = random_matrix(4, &mut rng);
        let s = random_symmetric(4, &mut rng);
        let a = hamiltonian_constraint(&j.dot(&m)).unwrap();
        let b = hamiltonian_constraint(&j.dot(&(&m + &s))).unwrap();
        assert!((a - b).abs() < 1e-12 * a.max(1.0));
    }
}

#[test]
fn tape_hamiltonian_penalty_matches_matrix_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = random_matrix(4, &mut rng);
    let states = Tensor::from_shape_fn((5, 4), |_| StandardNormal.sample(&mut rng));
    let mut tape = Tape::new();
    let wv = tape.leaf(w);
    let s = tape.leaf(states);
    let jac = jacobian(&mut tape, s, |t, s| {
        let lin = t.matmul(s, wv);
        Ok(t.sin(lin))
    })
    .unwrap();
    let pen = hamiltonian_penalty(&mut tape, &jac).unwrap();
    for b in 0..5 {
        let expected = hamiltonian_constraint(&jac.sample(&tape, b)).unwrap();
        let got = tape.value(pen)[[b, 0]];
        assert!((got - expected).abs() < 1e-12 * expected.max(1.0));
    }
}

#[test]
fn eigenvalue_examples() {
    let ev = sorted(&array![[-1.0, 0.0], [0.0, -2.0]]);
    assert!(close(ev[0], -1.0, 0.0) && close(ev[1], -2.0, 0.0));
    let ev = sorted(&array![[0.0, 1.0], [-1.0, 0.0]]);
    assert!(close(ev[0], 0.0, 1.0) && close(ev[1], 0.0, -1.0));
    let ev = sorted(&array![[0.0, 4.0], [-1.0, 0.0]]);
    assert!(close(ev[0], 0.0, 2.0) && close(ev[1], 0.0, -2.0));
}

#[test]
fn eigen_rejects_bad_input() {
    assert!(matches!(eigenvalues(&Tensor::zeros((2, 3))), Err(Error::NotSquare { .. })));
    assert!(matches!(
        eigenvalues(&array![[f64::NAN, 0.0], [0.0, 1.0]]),
        Err(Error::NonFinite(_))
    ));
    assert!(eigenvalues(&Tensor::zeros((0, 0))).unwrap().is_empty());
    assert_eq!(eigenvalues(&array![[3.5]]).unwrap(), vec![Complex64::new(3.5, 0.0)]);
}

fn residuals(a: &Tensor, eig: &EigenResult) -> (f64, f64) {
    let n = a.nrows();
    let ac = a.mapv(|x| Complex64::new(x, 0.0));
    let mut right: f64 = 0.0;
    let mut left: f64 = 0.0;
    for k in 0..n {
        let l = eig.eigenvalues[k];
        let v = eig.right.column(k);
        let w = eig.left.column(k);
        let av = ac.dot(&v);
        let wa = ac.t().dot(&w);
        for i in 0..n {
            right = right.max((av[i] - l * v[i]).norm());
            left = left.max((wa[i] - l * w[i]).norm());
        }
    }
    (right, left)
}

fn frobenius(a: &Tensor) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn eigen_reconstruction_residual_is_small() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 1..=16 {
        for _ in 0..10 {
            let a = random_matrix(n, &mut rng);
            let eig = eig_nonsymmetric(&a).unwrap();
            let (right, left) = residuals(&a, &eig);
            let tol = 1e-8 * frobenius(&a);
            assert!(right <= tol, "n={n} right residual {right}");
            assert!(left <= tol, "n={n} left residual {left}");
            // Complex eigenvalues come in conjugate pairs.
            for l in &eig.eigenvalues {
                assert!(eig.eigenvalues.iter().any(|m| (m - l.conj()).norm() < 1e-9));
            }
        }
    }
}

#[test]
fn eigen_handles_structured_matrices() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cases = vec![
        Tensor::zeros((3, 3)),
        Tensor::eye(4),
        random_symmetric(6, &mut rng),
        // Companion matrix of (x - 1)(x - 2)(x - 3).
        array![[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
        // Upper triangular.
        array![[1.0, 2.0, 3.0], [0.0, 4.0, 5.0], [0.0, 0.0, 6.0]],
        SymplecticJ::new(6).unwrap().matrix(),
    ];
    for a in cases {
        let eig = eig_nonsymmetric(&a).unwrap();
        let (right, _) = residuals(&a, &eig);
        assert!(right <= 1e-8 * frobenius(&a).max(1.0), "{a}");
    }
    let ev = sorted(&array![[6.0, -11.0, 6.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
    for (l, want) in ev.iter().zip([3.0, 2.0, 1.0]) {
        assert!((l.re - want).abs() < 1e-10 && l.im.abs() < 1e-10);
    }
}

#[test]
fn defective_eigenvalue_is_flagged() {
    let eig = eig_nonsymmetric(&array![[1.0, 1.0], [0.0, 1.0]]).unwrap();
    assert!(eig.ill_conditioned.iter().all(|&f| f));
    let eig = eig_nonsymmetric(&array![[1.0, 1.0], [0.0, 2.0]]).unwrap();
    assert!(eig.ill_conditioned.iter().all(|&f| !f));
}

#[test]
fn dissipative_examples() {
    let neg = -Tensor::eye(2);
    assert_eq!(dissipative_constraint(&neg, &[0.0, 0.0]).unwrap(), 0.0);
    let d = array![[1.0, 0.0], [0.0, 2.0]];
    assert!((dissipative_constraint(&d, &[0.0, 0.0]).unwrap() - 5.0).abs() < 1e-12);
    let rot = array![[0.0, 1.0], [-1.0, 0.0]];
    assert!((dissipative_constraint(&rot, &[-0.1, -0.1]).unwrap() - 0.02).abs() < 1e-12);
    assert!(dissipative_constraint(&d, &[0.0]).is_err());
}

#[test]
fn bounds_pair_with_sorted_eigenvalues() {
    // Eigenvalues 2 and 1; bound 1.5 applies to 2, bound 0 to 1.
    let d = array![[1.0, 0.0], [0.0, 2.0]];
    let v = dissipative_constraint(&d, &[1.5, 0.0]).unwrap();
    assert!((v - (0.25 + 1.0)).abs() < 1e-12);
}

fn separation(eig: &[Complex64]) -> f64 {
    let mut sep = f64::INFINITY;
    for i in 0..eig.len() {
        for j in i + 1..eig.len() {
            sep = sep.min((eig[i] - eig[j]).norm());
        }
    }
    sep
}

#[test]
fn dissipative_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let bounds = [0.0; 4];
    let h = 1e-6;
    let mut checked = 0;
    while checked < 50 {
        let a = random_matrix(4, &mut rng);
        let eig = eigenvalues(&a).unwrap();
        if separation(&eig) <= 1e-2 || eig.iter().all(|l| l.re < 0.0) {
            continue;
        }
        // Stay away from the kink of max(0, .).
        if eig.iter().any(|l| l.re.abs() < 1e-3) {
            continue;
        }
        let d = dissipative_with_grad(&a, &bounds).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[[i, j]] += h;
                am[[i, j]] -= h;
                let fd = (dissipative_constraint(&ap, &bounds).unwrap()
                    - dissipative_constraint(&am, &bounds).unwrap())
                    / (2.0 * h);
                let g = d.grad[[i, j]];
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                assert!(rel < 1e-3, "entry ({i},{j}): analytic {g}, fd {fd}");
            }
        }
        checked += 1;
    }
}

#[test]
fn dissipative_tape_penalty_backpropagates_analytic_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_matrix(3, &mut rng);
    let mut tape = Tape::new();
    let w = tape.leaf(m.clone());
    let s = tape.leaf(Tensor::zeros((2, 3)));
    // f(s) = s W, so the Jacobian is W^T at every sample.
    let jac = jacobian(&mut tape, s, |t, s| Ok(t.matmul(s, w))).unwrap();
    let pen = dissipative_penalty(&mut tape, &jac, &[0.0; 3]).unwrap();
    let total = tape.sum(pen);
    let grads = tape.backward(total).unwrap();
    let expected = dissipative_with_grad(&m.t().to_owned(), &[0.0; 3]).unwrap();
    let gw = grads.get(w).unwrap();
    assert!((tape.scalar(total) - 2.0 * expected.value).abs() < 1e-12);
    for i in 0..3 {
        for j in 0..3 {
            assert!((gw[[i, j]] - 2.0 * expected.grad[[j, i]]).abs() < 1e-12);
        }
    }
}

#[test]
fn spectrum_check_examples() {
    assert!(hamiltonian_spectrum_check(&Tensor::eye(2)).unwrap() < 1e-15);
    assert!(hamiltonian_spectrum_check(&array![[1.0, 0.0], [0.0, 4.0]]).unwrap() < 1e-15);
    let ev = sorted(&SymplecticJ::new(2).unwrap().matrix().dot(&array![[1.0, 0.0], [0.0, 4.0]]));
    assert!(close(ev[0], 0.0, 2.0));
    assert!(matches!(
        hamiltonian_spectrum_check(&array![[1.0, 0.0], [0.0, -1.0]]),
        Err(Error::NotPositiveDefinite)
    ));
    assert!(matches!(
        hamiltonian_spectrum_check(&array![[1.0, 0.5], [0.0, 1.0]]),
        Err(Error::NotPositiveDefinite)
    ));
}

#[test]
fn spectrum_of_symplectic_times_spd_is_imaginary() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for n in [2, 4, 10] {
        for _ in 0..100 {
            let b = random_spd(n, &mut rng);
            assert!(hamiltonian_spectrum_check(&b).unwrap() < 1e-8);
        }
    }
}

#[test]
fn cholesky_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = random_spd(5, &mut rng);
    let l = cholesky(&b).unwrap();
    let err = (&l.dot(&l.t()) - &b).iter().fold(0.0f64, |a, x| a.max(x.abs()));
    assert!(err < 1e-12);
}

#[test]
fn spec_validation() {
    let mut spec = ConstraintSpec::new(ConstraintKind::Dissipative, 1e2);
    assert!(spec.validate(4).is_ok());
    assert_eq!(spec.bounds_for(3), vec![0.0; 3]);
    spec.bounds = Some(vec![0.0; 3]);
    assert!(spec.validate(4).is_err());
    assert!(ConstraintSpec::new(ConstraintKind::Hamiltonian, -1.0).validate(2).is_err());
    assert!(ConstraintSpec::new(ConstraintKind::Hamiltonian, 1.0).validate(3).is_err());
    let json = r#"{"kind":"dissipative","weight":100.0,"bounds":[0,0,0,0]}"#;
    let parsed: ConstraintSpec = serde_json::from_str(json).unwrap();
    assert_eq!(parsed.kind, ConstraintKind::Dissipative);
    assert!(serde_json::from_str::<ConstraintSpec>(r#"{"kind":"none","extra":1}"#).is_err());
}

proptest! {
    #[test]
    fn hamiltonian_constraint_is_nonnegative_and_scales_quadratically(
        entries in proptest::collection::vec(-10.0f64..10.0, 16),
        c in -3.0f64..3.0,
    ) {
        let a = Tensor::from_shape_vec((4, 4), entries).unwrap();
        let v = hamiltonian_constraint(&a).unwrap();
        prop_assert!(v >= 0.0);
        let scaled = hamiltonian_constraint(&(&a * c)).unwrap();
        prop_assert!((scaled - c * c * v).abs() <= 1e-9 * v.max(1.0));
    }

    #[test]
    fn dissipative_penalty_is_monotone_in_bounds(
        entries in proptest::collection::vec(-3.0f64..3.0, 9),
        lo in -1.0f64..0.0,
        gap in 0.0f64..1.0,
    ) {
        let a = Tensor::from_shape_vec((3, 3), entries).unwrap();
        let tight = dissipative_constraint(&a, &[lo; 3]).unwrap();
        let loose = dissipative_constraint(&a, &[lo + gap; 3]).unwrap();
        prop_assert!(tight + 1e-12 >= loose);
        prop_assert!(loose >= 0.0);
    }
}
