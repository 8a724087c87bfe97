use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap()
}

/// Central differences of `f` around each entry of `inputs[which]`.
fn numeric_grad(f: &dyn Fn(&[Tensor]) -> f64, inputs: &[Tensor], which: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 0..inputs[which].len() {
        let mut plus = inputs.to_vec();
        plus[which].data_mut()[i] += STEP;
        let mut minus = inputs.to_vec();
        minus[which].data_mut()[i] -= STEP;
        out.push((f(&plus) - f(&minus)) / (2.0 * STEP));
    }
    out
}

fn assert_close(analytic: &[f64], numeric: &[f64], tol: f64) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / n.abs().max(1.0);
        assert!(rel < tol, "entry {i}: analytic {a} numeric {n} (rel {rel})");
    }
}

/// Builds `sum(op(inputs) ⊙ weights)` on a tape and checks every input's
/// gradient against central differences.
fn check_op(shapes: &[&[usize]], seed: u64, op: impl Fn(&mut Tape, &[Var]) -> Var) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<Tensor> = shapes.iter().map(|s| random_tensor(&mut rng, s)).collect();
    let build = |tape: &mut Tape, xs: &[Tensor]| -> (Vec<Var>, Var) {
        let vars: Vec<Var> = xs.iter().map(|x| tape.constant(x.clone())).collect();
        let out = op(tape, &vars);
        let mut wrng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let w = random_tensor(&mut wrng, tape.value(out).shape());
        let w = tape.constant(w);
        let prod = tape.mul(out, w).unwrap();
        (vars, tape.sum(prod))
    };
    let f = |xs: &[Tensor]| {
        let mut tape = Tape::new();
        let (_, loss) = build(&mut tape, xs);
        tape.value(loss).item()
    };
    let mut tape = Tape::new();
    let (vars, loss) = build(&mut tape, &inputs);
    let grads = tape.gradients(loss).unwrap();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v).expect("input reaches loss").data().to_vec();
        assert_close(&analytic, &numeric_grad(&f, &inputs, k), TOL);
    }
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    for seed in 0..5 {
        check_op(&[&[3, 4], &[4, 2]], seed, |t, v| t.matmul(v[0], v[1]).unwrap());
    }
}

#[test]
fn sum_of_product_gradient_wrt_a() {
    // d/dA sum(A·B) = 1·Bᵀ: each row of the gradient is the row sums of B.
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(&mut rng, &[3, 4]);
    let b = random_tensor(&mut rng, &[4, 2]);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let c = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(c);
    let grads = tape.gradients(loss).unwrap();
    let f = |xs: &[Tensor]| matmul(&xs[0], &xs[1]).unwrap().sum();
    assert_close(grads.wrt(va).unwrap().data(), &numeric_grad(&f, &[a, b], 0), TOL);
}

#[test]
fn matmul_t_gradient() {
    check_op(&[&[3, 4], &[5, 4]], 1, |t, v| t.matmul_t(v[0], v[1]).unwrap());
}

#[test]
fn elementwise_gradients() {
    check_op(&[&[2, 3], &[2, 3]], 2, |t, v| t.add(v[0], v[1]).unwrap());
    check_op(&[&[2, 3], &[2, 3]], 3, |t, v| t.mul(v[0], v[1]).unwrap());
    check_op(&[&[2, 3], &[3]], 4, |t, v| t.add_bias(v[0], v[1]).unwrap());
    check_op(&[&[2, 3]], 5, |t, v| t.scale(v[0], -1.7));
}

#[test]
fn softmax_gradient_both_axes() {
    check_op(&[&[3, 4]], 6, |t, v| t.softmax(v[0], 1).unwrap());
    check_op(&[&[3, 4]], 7, |t, v| t.softmax(v[0], 0).unwrap());
}

#[test]
fn layer_norm_gradient() {
    for seed in 0..4 {
        check_op(&[&[3, 5], &[5], &[5]], 10 + seed, |t, v| {
            t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()
        });
    }
}

#[test]
fn gelu_gradient_at_listed_points() {
    for &x in &[-2.0, -0.1, 0.5, 3.0] {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::scalar(x));
        let y = tape.gelu(v);
        let g = tape.gradients(y).unwrap().wrt(v).unwrap().item();
        let numeric = (gelu_scalar(x + STEP) - gelu_scalar(x - STEP)) / (2.0 * STEP);
        assert!((g - numeric).abs() / numeric.abs().max(1.0) < TOL, "x={x}");
    }
    check_op(&[&[4, 3]], 20, |t, v| t.gelu(v[0]));
}

#[test]
fn structural_op_gradients() {
    check_op(&[&[3, 3]], 21, |t, v| {
        let m = t.causal_mask(v[0]).unwrap();
        t.softmax(m, 1).unwrap()
    });
    check_op(&[&[3, 5]], 22, |t, v| t.slice_cols(v[0], 1, 3).unwrap());
    check_op(&[&[4, 2]], 23, |t, v| t.slice_rows(v[0], 3, 1).unwrap());
    check_op(&[&[3, 2], &[3, 4]], 24, |t, v| {
        t.concat_cols(&[v[0], v[1], v[0]]).unwrap()
    });
    check_op(&[&[1, 3], &[2, 3]], 25, |t, v| t.concat_rows(&[v[0], v[1]]).unwrap());
    check_op(&[&[5, 3]], 26, |t, v| t.gather(v[0], &[4, 0, 4, 2]).unwrap());
}

#[test]
fn cross_entropy_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let logits = random_tensor(&mut rng, &[4, 6]);
    let targets = [1, IGNORE, 5, 0];
    let mut tape = Tape::new();
    let v = tape.constant(logits.clone());
    let loss = tape.cross_entropy(v, &targets).unwrap();
    let g = tape.gradients(loss).unwrap();
    let f = |xs: &[Tensor]| cross_entropy(&xs[0], &targets).unwrap();
    assert_close(g.wrt(v).unwrap().data(), &numeric_grad(&f, &[logits], 0), TOL);
    // the ignored row receives nothing
    assert!(g.wrt(v).unwrap().row(1).iter().all(|&x| x == 0.0));
}

#[test]
fn cross_entropy_examples() {
    let uniform = cross_entropy(&Tensor::from_rows(&[&[0.0, 0.0]]), &[0]).unwrap();
    assert!((uniform - 2f64.ln()).abs() < 1e-15);

    let peaked = cross_entropy(&Tensor::from_rows(&[&[50.0, 0.0, 0.0]]), &[0]).unwrap();
    assert!(peaked < 1e-20);

    let mut tape = Tape::new();
    let v = tape.constant(Tensor::from_rows(&[&[1.0, 2.0], &[0.5, 0.1]]));
    let loss = tape.cross_entropy(v, &[IGNORE, IGNORE]).unwrap();
    assert_eq!(tape.value(loss).item(), 0.0);
    let g = tape.gradients(loss).unwrap();
    assert!(g.wrt(v).unwrap().data().iter().all(|&x| x == 0.0));

    let err = cross_entropy(&Tensor::from_rows(&[&[0.0, 0.0]]), &[2]).unwrap_err();
    assert!(matches!(err, crate::Error::Index { .. }));
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(vec![1.0, 2.0]));

    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    let loss = tape.sum(v);
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(p).data(), &[1.0, 1.0]);

    store.zero_grads();
    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    let sq = tape.mul(v, v).unwrap();
    let loss = tape.sum(sq);
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(p).data(), &[2.0, 4.0]);

    // a second backward without zeroing accumulates
    tape.backward(loss, &mut store).unwrap();
    assert_eq!(store.grad(p).data(), &[4.0, 8.0]);
}

#[test]
fn parameter_used_twice_gets_summed_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let w = random_tensor(&mut rng, &[3, 3]);
    let x = random_tensor(&mut rng, &[2, 3]);

    // tied: y = (x·W)·Wᵀ
    let mut tied = ParamStore::new();
    let wid = tied.add("w", w.clone());
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w1 = tape.param(&tied, wid);
    let h = tape.matmul(xv, w1).unwrap();
    let w2 = tape.param(&tied, wid);
    let y = tape.matmul_t(h, w2).unwrap();
    let g = tape.gelu(y);
    let loss = tape.sum(g);
    tape.backward(loss, &mut tied).unwrap();

    // untied twin: two independent copies of the same values
    let mut twin = ParamStore::new();
    let a = twin.add("a", w.clone());
    let b = twin.add("b", w);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let av = tape.param(&twin, a);
    let h = tape.matmul(xv, av).unwrap();
    let bv = tape.param(&twin, b);
    let y = tape.matmul_t(h, bv).unwrap();
    let g = tape.gelu(y);
    let loss = tape.sum(g);
    tape.backward(loss, &mut twin).unwrap();

    for i in 0..9 {
        let sum = twin.grad(a).data()[i] + twin.grad(b).data()[i];
        assert!((tied.grad(wid).data()[i] - sum).abs() < 1e-12);
    }
}

#[test]
fn zero_grads_clears() {
    let mut store = ParamStore::new();
    let p = store.add("p", Tensor::vector(vec![3.0]));
    let mut tape = Tape::new();
    let v = tape.param(&store, p);
    let loss = tape.sum(v);
    tape.backward(loss, &mut store).unwrap();
    store.zero_grads();
    assert_eq!(store.grad(p).data(), &[0.0]);
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::vector((0..100).map(|i| i as f64).collect());
    assert_eq!(dropout(&x, 0.0, &mut rng, true).unwrap(), x);
    assert_eq!(dropout(&x, 0.0, &mut rng, false).unwrap(), x);
    assert_eq!(dropout(&x, 0.5, &mut rng, false).unwrap(), x);
    assert!(matches!(dropout(&x, 1.0, &mut rng, true), Err(crate::Error::Config(_))));
}

#[test]
fn dropout_survivor_statistics() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let n = 100_000;
    let x = Tensor::full(&[n], 1.0);
    let y = dropout(&x, 0.5, &mut rng, true).unwrap();
    let survivors = y.data().iter().filter(|&&v| v != 0.0).count() as f64 / n as f64;
    assert!((0.49..=0.51).contains(&survivors), "{survivors}");
    let mean = y.sum() / n as f64;
    assert!((mean - 1.0).abs() < 0.02, "{mean}");
}

#[test]
fn dropout_is_determined_by_rng_state() {
    let x = Tensor::full(&[64], 2.0);
    let a = dropout(&x, 0.3, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
    let b = dropout(&x, 0.3, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
    assert_eq!(a, b);
}

#[test]
fn dropout_gradient_uses_the_same_mask() {
    let x = Tensor::vector(vec![1.0, -2.0, 0.5, 4.0, 3.0, -1.0]);
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let d = tape.dropout(v, 0.5, &mut rng, true).unwrap();
    let loss = tape.sum(d);
    let g = tape.gradients(loss).unwrap();
    for (out, grad) in tape.value(d).data().iter().zip(g.wrt(v).unwrap().data()) {
        if *out == 0.0 {
            assert_eq!(*grad, 0.0);
        } else {
            assert_eq!(*grad, 2.0);
        }
    }
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let v = tape.constant(Tensor::zeros(&[2]));
    assert!(tape.gradients(v).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        rows in proptest::collection::vec(proptest::collection::vec(-50.0f64..50.0, 5), 1..6),
        shift in -100.0f64..100.0,
    ) {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let x = Tensor::from_rows(&refs);
        let s = softmax(&x, 1).unwrap();
        for r in 0..s.rows() {
            prop_assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.row(r).iter().all(|&p| p >= 0.0));
        }
        let shifted = softmax(&x.map(|v| v + shift), 1).unwrap();
        for (a, b) in s.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_matmul_gradients_agree(seed in 0u64..1000) {
        check_op(&[&[3, 4], &[4, 2]], seed, |t, v| t.matmul(v[0], v[1]).unwrap());
    }
}
