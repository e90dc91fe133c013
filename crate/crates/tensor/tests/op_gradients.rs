//! Every tape op checked against central finite differences on small
//! random inputs.

use proptest::prelude::*;
use quarts_tensor::{grad_check, ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;
const EPS: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::from_matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Loss that weights every output element differently so that no
/// gradient is accidentally symmetric.
fn weighted_sum(tape: &mut Tape, v: Var) -> quarts_tensor::Result<Var> {
    let (r, c) = tape.value(v).dims2()?;
    let w = Tensor::from_matrix(r, c, (0..r * c).map(|i| 0.3 + 0.17 * i as f64).collect());
    let w = tape.constant(w);
    let m = tape.mul(v, w)?;
    Ok(tape.sum_all(m))
}

fn check(
    seed: u64,
    shapes: &[(usize, usize)],
    f: impl Fn(&mut Tape, &[Var]) -> quarts_tensor::Result<Var>,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<_> = shapes
        .iter()
        .enumerate()
        .map(|(i, &(r, c))| store.add(format!("x{i}"), random(&mut rng, r, c)))
        .collect();
    let report = grad_check(&store, EPS, |tape, s| {
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
        let out = f(tape, &vars)?;
        weighted_sum(tape, out)
    })
    .unwrap();
    report.max_rel_error
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let err = check(1, &[(3, 4), (4, 2)], |t, v| {
        let m = t.matmul(v[0], v[1])?;
        Ok(t.sum_all(m))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn untracked_dependence_is_flagged() {
    // the cubic term reads the parameter behind the tape's back, so the
    // analytic gradient misses 3x² at every step size
    let mut store = ParamStore::new();
    let id = store.add("x", Tensor::row(&[0.4, -0.7, 0.2]));
    let report = grad_check(&store, EPS, |tape, s| {
        let x = tape.param(s, id);
        let hidden: f64 = s.get(id).data().iter().map(|v| v * v * v).sum();
        let c = tape.constant(Tensor::scalar(hidden));
        let lin = tape.sum_all(x);
        tape.add(lin, c)
    })
    .unwrap();
    assert!(report.max_rel_error > 0.1, "{}", report.max_rel_error);
}

#[test]
fn tanh_matmul_chain() {
    let err = check(2, &[(2, 3), (3, 3)], |t, v| {
        let m = t.matmul(v[0], v[1])?;
        Ok(t.tanh(m))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn tanh_at_zero() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(0.0));
    let r = grad_check(&store, EPS, |t, s| {
        let v = t.param(s, x);
        Ok(t.tanh(v))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-8, "{}", r.max_rel_error);
}

#[test]
fn broadcast_binary_ops() {
    for (seed, rhs) in [(3, (3, 4)), (4, (1, 4)), (5, (1, 1))] {
        let e = check(seed, &[(3, 4), rhs], |t, v| t.add(v[0], v[1]));
        assert!(e < TOL, "add {rhs:?}: {e}");
        let e = check(seed, &[(3, 4), rhs], |t, v| t.sub(v[0], v[1]));
        assert!(e < TOL, "sub {rhs:?}: {e}");
        let e = check(seed, &[(3, 4), rhs], |t, v| t.mul(v[0], v[1]));
        assert!(e < TOL, "mul {rhs:?}: {e}");
    }
}

#[test]
fn unary_ops() {
    assert!(check(6, &[(2, 5)], |t, v| Ok(t.sigmoid(v[0]))) < TOL);
    assert!(check(7, &[(2, 5)], |t, v| Ok(t.exp(v[0]))) < TOL);
    assert!(check(30, &[(2, 5)], |t, v| Ok(t.exp_m1(v[0]))) < TOL);
    assert!(check(8, &[(2, 5)], |t, v| Ok(t.abs(v[0]))) < TOL);
    assert!(check(9, &[(2, 5)], |t, v| Ok(t.affine(v[0], -2.5, 1.0))) < TOL);
    assert!(
        check(10, &[(2, 5)], |t, v| {
            let e = t.exp(v[0]);
            Ok(t.ln(e))
        }) < TOL
    );
    assert!(check(11, &[(2, 5)], |t, v| Ok(t.clamp(v[0], -0.9, 0.9))) < TOL);
}

#[test]
fn softmax_and_log_softmax() {
    assert!(check(12, &[(3, 5)], |t, v| t.softmax_rows(v[0])) < TOL);
    assert!(check(13, &[(3, 5)], |t, v| t.log_softmax_rows(v[0])) < TOL);
}

#[test]
fn structural_ops() {
    assert!(check(14, &[(2, 3), (2, 2)], |t, v| t.concat(&[v[0], v[1]], 1)) < TOL);
    assert!(check(15, &[(2, 3), (1, 3)], |t, v| t.concat(&[v[0], v[1]], 0)) < TOL);
    assert!(check(16, &[(4, 3)], |t, v| t.slice(v[0], 0, 1..3)) < TOL);
    assert!(check(17, &[(4, 3)], |t, v| t.slice(v[0], 1, 1..3)) < TOL);
    assert!(check(18, &[(4, 3)], |t, v| t.transpose(v[0])) < TOL);
    assert!(check(19, &[(4, 3)], |t, v| t.sum(v[0], 0)) < TOL);
    assert!(check(20, &[(4, 3)], |t, v| t.sum(v[0], 1)) < TOL);
    assert!(check(21, &[(4, 3)], |t, v| Ok(t.mean(v[0]))) < TOL);
    assert!(check(22, &[(4, 3)], |t, v| t.pick(v[0], 2, 1)) < TOL);
    assert!(check(23, &[(5, 3)], |t, v| t.lookup(v[0], &[4, 0, 4, 2])) < TOL);
}

#[test]
fn dropout_with_fixed_mask() {
    let err = check(24, &[(3, 4)], |t, v| {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        Ok(t.dropout(v[0], 0.3, Some(&mut rng)))
    });
    assert!(err < TOL, "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn softmax_rows_are_simplex(vals in prop::collection::vec(-30.0f64..30.0, 12)) {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_matrix(3, 4, vals));
        let s = tape.softmax_rows(x).unwrap();
        let out = tape.value(s);
        for r in 0..3 {
            let row = out.row_slice(r);
            prop_assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn random_small_chains_pass_gradcheck(seed in 0u64..1000, k in 1usize..=8) {
        let err = check(seed, &[(k, k), (k, 1)], |t, v| {
            let m = t.matmul(v[0], v[1])?;
            let h = t.tanh(m);
            let s = t.sigmoid(h);
            t.mul(s, v[1])
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn forward_is_independent_of_tape_state(vals in prop::collection::vec(-2.0f64..2.0, 6)) {
        let x = Tensor::from_matrix(2, 3, vals);
        let mut fresh = Tape::new();
        let a = fresh.constant(x.clone());
        let a = fresh.tanh(a);
        let mut busy = Tape::new();
        for _ in 0..5 {
            let junk = busy.constant(Tensor::scalar(1.0));
            busy.exp(junk);
        }
        let b = busy.constant(x);
        let b = busy.tanh(b);
        prop_assert_eq!(fresh.value(a), busy.value(b));
    }
}
