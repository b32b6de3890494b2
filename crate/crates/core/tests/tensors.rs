mod common;

use proptest::prelude::*;
use tensornet::ensembles::{make_identity, make_simplex, EnsembleKind, WeightEnsemble};
use tensornet::error::Error;
use tensornet::io::{read_sidecar, read_tensor, write_tensor, TensorSidecar};
use tensornet::risk::gram_power_sums;
use tensornet::tensors::{
    build_moment_tensor, build_noisy_contraction, contract_pair, labels_from_tensor, network_output, noisy_contraction_from_weights,
    noisy_labels, tensor_apply, DenseTensor, ReductionMode, ReductionSpec,
};
use tensornet_oracles as oracle;

fn ens(d: usize, rows: Vec<Vec<f64>>) -> WeightEnsemble {
    WeightEnsemble::from_rows(d, rows, EnsembleKind::Custom, 0).unwrap()
}

#[test]
fn moment_tensor_examples() {
    let e1 = ens(2, vec![vec![1.0, 0.0]]);
    let t = build_moment_tensor(&e1, 3).unwrap();
    for idx in oracle::multi_indices(2, 3) {
        let want = if idx == [0, 0, 0] { 1.0 } else { 0.0 };
        assert_eq!(t.get(&idx), want);
    }
    let eye = build_moment_tensor(&make_identity(2).unwrap(), 2).unwrap();
    assert_eq!(eye.data(), &[1.0, 0.0, 0.0, 1.0]);
    let v = build_moment_tensor(&ens(2, vec![vec![0.6, 0.8]]), 2).unwrap();
    let want = [0.36, 0.48, 0.48, 0.64];
    assert!(v.data().iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn apply_examples() {
    let t = build_moment_tensor(&ens(2, vec![vec![1.0, 0.0]]), 3).unwrap();
    assert_eq!(tensor_apply(&t, &[2.0, 5.0]).unwrap(), 8.0);
    let eye = build_moment_tensor(&make_identity(2).unwrap(), 2).unwrap();
    assert_eq!(tensor_apply(&eye, &[3.0, 4.0]).unwrap(), 25.0);
    assert!(tensor_apply(&eye, &[1.0, 2.0, 3.0]).is_err());
}

#[test]
fn contraction_examples() {
    let w = make_simplex(4, 5, 11).unwrap();
    let t5 = build_moment_tensor(&w, 5).unwrap();
    let t3 = build_moment_tensor(&w, 3).unwrap();
    assert!(contract_pair(&t5).unwrap().max_abs_diff(&t3).unwrap() <= 1e-12);

    let e1 = ens(3, vec![vec![1.0, 0.0, 0.0]]);
    let c = contract_pair(&build_moment_tensor(&e1, 3).unwrap()).unwrap();
    assert_eq!((c.order(), c.data()), (1, &[1.0, 0.0, 0.0][..]));

    // Non-unit rows pick up ‖w‖² per contraction.
    let doubled = ens(2, vec![vec![2.0 * 0.6, 2.0 * 0.8]]);
    let c = contract_pair(&build_moment_tensor(&doubled, 3).unwrap()).unwrap();
    let t1 = build_moment_tensor(&doubled, 1).unwrap();
    assert!(c.data().iter().zip(t1.data()).all(|(a, b)| (a - 4.0 * b).abs() < 1e-12));

    assert!(contract_pair(&build_moment_tensor(&e1, 1).unwrap()).is_err());
}

#[test]
fn memory_guard_refuses_huge_tensors() {
    let w = common::unit_rows(50, 2, 0);
    assert!(matches!(build_moment_tensor(&w, 5), Err(Error::ResourceGuard(_))));
}

fn check_labels(spec: &ReductionSpec, w: &WeightEnsemble, xs: &[Vec<f64>]) {
    let t = build_moment_tensor(w, spec.ell).unwrap();
    let upper = match spec.mode {
        ReductionMode::TwoTensor => Some(build_moment_tensor(w, spec.ell + 1).unwrap()),
        _ => None,
    };
    let labels = labels_from_tensor(spec, &t, upper.as_ref(), xs).unwrap();
    for (x, y) in xs.iter().zip(labels) {
        let direct = oracle::network_output(&w.to_rows(), &|z| oracle::poly_eval(&spec.coeffs, z), x);
        assert!((y - direct).abs() <= 1e-9 * direct.abs().max(1.0), "{spec:?}: {y} vs {direct}");
        assert!((network_output(w, &spec.coeffs, x) - direct).abs() <= 1e-10 * direct.abs().max(1.0));
    }
}

#[test]
fn reduction_examples() {
    let w = make_simplex(6, 7, 2).unwrap();
    let xs = common::gaussian_inputs(6, 100, 3);
    let cubic = ReductionSpec { ell: 3, mode: ReductionMode::Parity, coeffs: vec![0.0, 0.0, 0.0, 1.0] };
    check_labels(&cubic, &common::unit_rows(6, 9, 4), &xs);
    check_labels(&ReductionSpec { ell: 3, mode: ReductionMode::Parity, coeffs: vec![0.0, 1.0, 0.0, 0.3] }, &w, &xs);
    check_labels(&ReductionSpec { ell: 3, mode: ReductionMode::TwoTensor, coeffs: vec![0.4, -1.0, 0.7, 0.3, -0.2] }, &w, &xs);
}

#[test]
fn reduction_matrix_up_to_degree_five() {
    let w = common::unit_rows(4, 6, 21);
    let xs = common::gaussian_inputs(4, 20, 22);
    for ell in 3..=5usize {
        let parity: Vec<f64> = (0..=ell).map(|j| if j % 2 == ell % 2 { 0.5 + 0.1 * j as f64 } else { 0.0 }).collect();
        check_labels(&ReductionSpec { ell, mode: ReductionMode::Parity, coeffs: parity }, &w, &xs);
        if ell + 1 <= 5 {
            for deg in 0..=ell + 1 {
                let coeffs: Vec<f64> = (0..=deg).map(|j| (1.3 * (j + ell) as f64).cos()).collect();
                check_labels(&ReductionSpec { ell, mode: ReductionMode::TwoTensor, coeffs }, &w, &xs);
            }
        }
    }
}

#[test]
fn reduction_rejects_bad_specs() {
    let w = common::unit_rows(3, 2, 1);
    let t3 = build_moment_tensor(&w, 3).unwrap();
    let xs = common::gaussian_inputs(3, 2, 1);
    let wrong_parity = ReductionSpec { ell: 3, mode: ReductionMode::Parity, coeffs: vec![0.0, 0.0, 1.0] };
    assert!(matches!(labels_from_tensor(&wrong_parity, &t3, None, &xs), Err(Error::InvalidSpec(_))));
    let too_high = ReductionSpec { ell: 3, mode: ReductionMode::Parity, coeffs: vec![0.0, 0.0, 0.0, 0.0, 0.0, 1.0] };
    assert!(labels_from_tensor(&too_high, &t3, None, &xs).is_err());
    let two = ReductionSpec { ell: 3, mode: ReductionMode::TwoTensor, coeffs: vec![1.0, 0.0, 1.0] };
    assert!(labels_from_tensor(&two, &t3, None, &xs).is_err());
    let small = ReductionSpec { ell: 2, mode: ReductionMode::Parity, coeffs: vec![0.0, 0.0, 1.0] };
    assert!(small.validate().is_err());
    let negative = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 2, m: 3 }, coeffs: vec![1.0, -1.0] };
    assert!(negative.validate().is_err());
    let odd_p = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 3, m: 1 }, coeffs: vec![1.0, 1.0] };
    assert!(odd_p.validate().is_err());
}

#[test]
fn noisy_contraction_examples() {
    let e1 = ens(2, vec![vec![1.0, 0.0]]);
    let t3 = build_moment_tensor(&e1, 3).unwrap();
    let t0 = build_noisy_contraction(&t3, 2, 1).unwrap();
    assert_eq!(t0.order(), 4);
    assert_eq!(t0.frobenius_norm(), 1.0);
    assert_eq!(t0.get(&[0, 0, 0, 0]), 1.0);

    // Orthonormal rows: cross terms vanish.
    let eye = make_identity(3).unwrap();
    let t4 = build_moment_tensor(&eye, 4).unwrap();
    for k in 1..=3 {
        let got = build_noisy_contraction(&t4, 2, k).unwrap();
        let want = build_moment_tensor(&eye, 2 * (4 - k)).unwrap();
        assert!(got.max_abs_diff(&want).unwrap() < 1e-14, "k={k}");
    }

    // k = ℓ leaves a scalar equal to P_ℓ(W, W).
    let w = common::unit_rows(3, 4, 6);
    let t = build_moment_tensor(&w, 3).unwrap();
    let scalar = build_noisy_contraction(&t, 2, 3).unwrap();
    let p3 = gram_power_sums(&w, &w, 3).unwrap().get(3);
    assert!(common::rel_err(scalar.value().unwrap(), p3) < 1e-12);
}

#[test]
fn noisy_contraction_paths_agree() {
    for (d, r, ell, p, k) in [(3, 4, 3, 2, 1), (3, 3, 4, 2, 2), (2, 3, 3, 4, 1), (2, 2, 5, 4, 1), (3, 5, 4, 2, 1)] {
        let w = common::unit_rows(d, r, (d * 100 + r * 10 + ell) as u64);
        let by_index = build_noisy_contraction(&build_moment_tensor(&w, ell).unwrap(), p, k).unwrap();
        let by_weights = noisy_contraction_from_weights(&w, ell, p, k).unwrap();
        assert_eq!(by_index.order(), p * (ell - (p - 1) * k));
        let scale = by_index.frobenius_norm().max(1.0);
        assert!(by_index.max_abs_diff(&by_weights).unwrap() <= 1e-12 * scale, "d={d} r={r} ell={ell} p={p} k={k}");
    }
    let t = build_moment_tensor(&common::unit_rows(2, 2, 0), 3).unwrap();
    assert!(build_noisy_contraction(&t, 2, 4).is_err());
    assert!(build_noisy_contraction(&t, 3, 1).is_err());
}

#[test]
fn noisy_labels_examples() {
    let spec = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 2, m: 3 }, coeffs: vec![1.0, 1.0] };
    assert_eq!(spec.activation_monomials(), vec![1.0, 0.0, 1.0]);

    let teacher = make_simplex(9, 10, 12).unwrap();
    let xs = common::gaussian_inputs(9, 100, 13);
    let out = noisy_labels(&spec, &build_moment_tensor(&teacher, 4).unwrap(), &xs, &teacher).unwrap();
    assert!(out.error_bound_ok);
    assert!((out.delta - 1.0 / 9.0).abs() < 1e-9);
    for j in 0..xs.len() {
        let direct = oracle::network_output(&teacher.to_rows(), &|z| z * z + 1.0, &xs[j]);
        assert!(common::rel_err(out.clean[j], direct) < 1e-12);
        let e = out.labels[j] - out.clean[j];
        assert!((e - out.explicit_error[j]).abs() <= 1e-9 * out.labels[j].abs().max(1.0));
        assert!(e.abs() <= out.bound[j] + 1e-9);
    }

    let eye = make_identity(5).unwrap();
    let xs = common::gaussian_inputs(5, 30, 14);
    let out = noisy_labels(&spec, &build_moment_tensor(&eye, 4).unwrap(), &xs, &eye).unwrap();
    assert_eq!(out.max_abs_error, 0.0);
    assert!(out.bound.iter().all(|b| *b == 0.0));

    let single = common::unit_rows(4, 1, 15);
    let xs = common::gaussian_inputs(4, 10, 16);
    let out = noisy_labels(&spec, &build_moment_tensor(&single, 4).unwrap(), &xs, &single).unwrap();
    assert!(out.labels.iter().zip(&out.clean).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0)));
}

#[test]
fn tensor_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t3.bin");
    let w = make_simplex(4, 5, 9).unwrap();
    let t = build_moment_tensor(&w, 3).unwrap();
    let side = TensorSidecar { order: 3, dim: 4, ensemble_kind: "simplex".into(), seed: 9, rows: 5 };
    write_tensor(&path, &t, &side).unwrap();
    assert_eq!(read_tensor(&path).unwrap(), t);
    assert_eq!(read_sidecar(&path).unwrap(), side);
    assert_eq!(std::fs::metadata(&path).unwrap().len(), 16 + 8 * 64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn apply_matches_power_sums(d in 1usize..=8, r in 1usize..6, k in 1usize..=5, seed in any::<u64>()) {
        prop_assume!(d.pow(k as u32) <= 40_000);
        let w = common::unit_rows(d, r, seed);
        let x = &common::gaussian_inputs(d, 1, seed ^ 1)[0];
        let t = build_moment_tensor(&w, k).unwrap();
        let want: f64 = w.rows().map(|row| oracle::dot(row, x).powi(k as i32)).sum();
        prop_assert!((tensor_apply(&t, x).unwrap() - want).abs() <= 1e-10 * want.abs().max(1.0));
        prop_assert!(t.symmetry_defect() <= 1e-12);
        for idx in oracle::multi_indices(d, k).into_iter().step_by(7).take(20) {
            prop_assert!((t.get(&idx) - oracle::moment_entry(&w.to_rows(), &idx)).abs() <= 1e-12);
        }
    }

    #[test]
    fn contraction_lowers_order_by_two(d in 2usize..=6, r in 1usize..6, k in 3usize..=5, seed in any::<u64>()) {
        let w = common::unit_rows(d, r, seed);
        let c = contract_pair(&build_moment_tensor(&w, k).unwrap()).unwrap();
        let want = build_moment_tensor(&w, k - 2).unwrap();
        prop_assert!(c.max_abs_diff(&want).unwrap() <= 1e-12);
    }

    #[test]
    fn frobenius_distance_matches_gram(d in 2usize..=5, r in 1usize..=6, big_r in 1usize..=6, k in 1usize..=4, seed in any::<u64>()) {
        let a = common::unit_rows(d, r, seed);
        let b = common::unit_rows(d, big_r, seed.wrapping_mul(3));
        let explicit = build_moment_tensor(&a, k).unwrap().frobenius_dist_sq(&build_moment_tensor(&b, k).unwrap()).unwrap();
        let pa = gram_power_sums(&a, &a, k).unwrap().get(k);
        let pab = gram_power_sums(&a, &b, k).unwrap().get(k);
        let pb = gram_power_sums(&b, &b, k).unwrap().get(k);
        prop_assert!(common::rel_err(pa - 2.0 * pab + pb, explicit) < 1e-10);
    }

    #[test]
    fn noisy_bound_never_violated(blocks in 1usize..3, seed in any::<u64>(), c3 in 0.1f64..3.0, c4 in 0.1f64..3.0) {
        let d = 5;
        let teacher = make_simplex(d, blocks * (d + 1), seed).unwrap();
        let spec = ReductionSpec { ell: 4, mode: ReductionMode::Noisy { p: 2, m: 3 }, coeffs: vec![c3, c4] };
        let xs = common::gaussian_inputs(d, 20, seed ^ 7);
        let out = noisy_labels(&spec, &build_moment_tensor(&teacher, 4).unwrap(), &xs, &teacher).unwrap();
        prop_assert!(out.error_bound_ok);
    }
}

#[test]
fn scalar_tensor_applies_to_its_value() {
    let t = DenseTensor::scalar(2.5, 3);
    assert_eq!(tensor_apply(&t, &[1.0, 2.0, 3.0]).unwrap(), 2.5);
}
