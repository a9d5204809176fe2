use std::sync::Arc;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn mat(r: usize, c: usize, v: &[f64]) -> DiffTensor {
    DiffTensor::matrix(r, c, v.to_vec()).unwrap()
}

fn rand_leaf(shape: Vec<usize>, seed: u64) -> DiffTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DiffTensor::randn(shape, 0.7, &mut rng)
}

fn positive_leaf(shape: Vec<usize>, seed: u64) -> DiffTensor {
    let mut t = rand_leaf(shape, seed);
    for v in t.values_mut() {
        *v = v.abs() + 0.3;
    }
    t
}

#[test]
fn matmul_identity() {
    let i2 = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let b = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(matmul(&i2, &b).unwrap().values(), b.values());
}

#[test]
fn matmul_zero() {
    let i2 = mat(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let z = DiffTensor::zeros(vec![2, 3]);
    let out = matmul(&i2, &z).unwrap();
    assert_eq!(out.shape(), &[2, 3]);
    assert!(out.values().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_hand_product() {
    let a = mat(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let b = mat(2, 1, &[5.0, 6.0]);
    let out = matmul(&a, &b).unwrap();
    // 1*5 + 2*6, 3*5 + 4*6
    assert_eq!(out.values(), &[17.0, 39.0]);
    assert_eq!(out.shape(), &[2, 1]);
}

#[test]
fn matmul_dimension_mismatch() {
    let a = mat(2, 3, &[0.0; 6]);
    let b = mat(2, 2, &[0.0; 4]);
    assert!(matches!(matmul(&a, &b), Err(crate::ScafdsError::Shape(_))));
}

#[test]
fn softmax_examples() {
    let out = softmax(&DiffTensor::vector(vec![0.0, 0.0])).unwrap();
    assert_eq!(out.values(), &[0.5, 0.5]);
    let out = softmax(&DiffTensor::vector(vec![-123.4])).unwrap();
    assert_eq!(out.values(), &[1.0]);

    let x = [1.0f64, 2.0, 3.0];
    let z: f64 = x.iter().map(|v| v.exp()).sum();
    let out = softmax(&DiffTensor::vector(x.to_vec())).unwrap();
    for (o, v) in out.values().iter().zip(x) {
        approx::assert_relative_eq!(*o, v.exp() / z, max_relative = 1e-14);
    }
}

#[test]
fn softmax_empty_axis() {
    let x = DiffTensor::vector(vec![]);
    assert!(softmax(&x).is_err());
}

#[test]
fn leaky_relu_examples() {
    let out = leaky_relu(&DiffTensor::vector(vec![5.0, 0.0, -2.0]), 0.2).unwrap();
    assert_eq!(out.values()[0], 5.0);
    assert_eq!(out.values()[1], 0.0);
    approx::assert_abs_diff_eq!(out.values()[2], -0.4, epsilon = 1e-15);
}

#[test]
fn sigmoid_examples() {
    let out = sigmoid(&DiffTensor::vector(vec![0.0, 50.0, 1.0, -800.0])).unwrap();
    assert_eq!(out.values()[0], 0.5);
    assert!((out.values()[1] - 1.0).abs() < 1e-12);
    approx::assert_abs_diff_eq!(out.values()[2], 1.0 / (1.0 + (-1.0f64).exp()), epsilon = 1e-15);
    approx::assert_abs_diff_eq!(out.values()[2], 0.7310585786, epsilon = 1e-10);
    assert!(out.values()[3] >= 0.0 && out.values()[3].is_finite());
}

#[test]
fn fd_quadratic() {
    let x = DiffTensor::scalar(3.0);
    let mut tape = Tape::new();
    let v = tape.leaf(&x.clone().with_requires_grad(true));
    let y = tape.square(v).unwrap();
    let g = tape.backward(y).unwrap();
    assert_eq!(g.get(v).unwrap(), &[6.0]);
    let rep = finite_diff_check(|t, v| t.square(v[0]), &[x], 1e-5, 1e-4).unwrap();
    assert!(rep.passed(), "{rep:?}");
}

#[test]
fn fd_constant() {
    let x = DiffTensor::vector(vec![1.0, -2.0]);
    let rep = finite_diff_check(
        |t, _| t.constant(vec![1], vec![4.2]),
        &[x],
        1e-5,
        1e-4,
    )
    .unwrap();
    assert_eq!(rep.max_rel_error, 0.0);
}

#[test]
fn fd_rejects_bad_epsilon() {
    let x = DiffTensor::scalar(1.0);
    assert!(finite_diff_check(|t, v| t.square(v[0]), &[x], 0.1, 1e-4).is_err());
}

#[test]
fn fd_rejects_non_finite() {
    let x = DiffTensor::scalar(0.0);
    let r = finite_diff_check(
        |t, v| {
            let e = t.scale(v[0], 1000.0)?;
            let e = t.add_scalar(e, 800.0)?;
            let e = t.exp(e)?;
            t.sum(e)
        },
        &[x],
        1e-5,
        1e-4,
    );
    assert!(matches!(r, Err(crate::ScafdsError::Numeric(_))));
}

type Builder = fn(&mut Tape, &[Var]) -> crate::Result<Var>;

fn check(name: &str, f: Builder, leaves: &[DiffTensor]) {
    let rep = finite_diff_check(f, leaves, 1e-5, 1e-4).unwrap();
    assert!(rep.passed(), "{name}: {rep:?}");
}

#[test]
fn primitive_gradients() {
    let a = rand_leaf(vec![3, 4], 1);
    let b = rand_leaf(vec![4, 2], 2);
    let c = rand_leaf(vec![3, 4], 3);
    let row = rand_leaf(vec![4], 4);
    let col = rand_leaf(vec![3, 1], 5);
    let pos = positive_leaf(vec![3, 4], 6);

    // weight the output so that sums of softmax-like quantities are not constant
    fn wsum(t: &mut Tape, x: Var) -> crate::Result<Var> {
        let n = t.value(x).len();
        let w: Vec<f64> = (0..n).map(|i| 0.3 + 0.17 * i as f64).collect();
        let y = t.mul_const(x, Arc::from(w))?;
        t.sum(y)
    }

    check("matmul", |t, v| { let y = t.matmul(v[0], v[1])?; wsum(t, y) }, &[a.clone(), b.clone()]);
    check("transpose", |t, v| { let y = t.transpose(v[0])?; wsum(t, y) }, &[a.clone()]);
    check("add", |t, v| { let y = t.add(v[0], v[1])?; let y = t.square(y)?; wsum(t, y) }, &[a.clone(), c.clone()]);
    check("sub", |t, v| { let y = t.sub(v[0], v[1])?; let y = t.square(y)?; wsum(t, y) }, &[a.clone(), c.clone()]);
    check("mul", |t, v| { let y = t.mul(v[0], v[1])?; wsum(t, y) }, &[a.clone(), c.clone()]);
    check("add_row", |t, v| { let y = t.add_row(v[0], v[1])?; let y = t.square(y)?; wsum(t, y) }, &[a.clone(), row.clone()]);
    check("mul_col", |t, v| { let y = t.mul_col(v[0], v[1])?; wsum(t, y) }, &[a.clone(), col.clone()]);
    check("scale", |t, v| { let y = t.scale(v[0], -1.7)?; wsum(t, y) }, &[a.clone()]);
    check("one_minus", |t, v| { let y = t.one_minus(v[0])?; let y = t.square(y)?; wsum(t, y) }, &[a.clone()]);
    check("sigmoid", |t, v| { let y = t.sigmoid(v[0])?; wsum(t, y) }, &[a.clone()]);
    check("tanh", |t, v| { let y = t.tanh(v[0])?; wsum(t, y) }, &[a.clone()]);
    check("leaky_relu", |t, v| { let y = t.leaky_relu(v[0], 0.2)?; wsum(t, y) }, &[a.clone()]);
    check("elu", |t, v| { let y = t.elu(v[0], 1.0)?; wsum(t, y) }, &[a.clone()]);
    check("relu", |t, v| { let y = t.relu(v[0])?; wsum(t, y) }, &[a.clone()]);
    check("exp", |t, v| { let y = t.exp(v[0])?; wsum(t, y) }, &[a.clone()]);
    check("ln", |t, v| { let y = t.ln(v[0])?; wsum(t, y) }, &[pos.clone()]);
    check("powf", |t, v| { let y = t.powf(v[0], 2.5)?; wsum(t, y) }, &[pos.clone()]);
    check("clamp", |t, v| { let y = t.clamp(v[0], -0.5, 0.5)?; wsum(t, y) }, &[a.clone()]);
    check("softmax", |t, v| { let y = t.softmax(v[0])?; wsum(t, y) }, &[a.clone()]);
    check("mean", |t, v| { let y = t.square(v[0])?; t.mean(y) }, &[a.clone()]);
    check("sum_cols", |t, v| { let y = t.sum_cols(v[0])?; let y = t.square(y)?; wsum(t, y) }, &[a.clone()]);
    check(
        "gather",
        |t, v| { let y = t.gather_rows(v[0], Arc::from(vec![2usize, 0, 2, 1]))?; wsum(t, y) },
        &[a.clone()],
    );
    check(
        "scatter",
        |t, v| { let y = t.scatter_add_rows(v[0], Arc::from(vec![1usize, 1, 0]), 3)?; let y = t.square(y)?; wsum(t, y) },
        &[a.clone()],
    );
    check(
        "segment_softmax",
        |t, v| { let y = t.segment_softmax(v[0], Arc::from(vec![0usize, 1, 0]), 2)?; wsum(t, y) },
        &[a.clone()],
    );
    check(
        "head_scale",
        |t, v| {
            let al = t.slice_cols(v[1], 0, 2)?;
            let y = t.head_scale(al, v[0])?;
            wsum(t, y)
        },
        &[a.clone(), c.clone()],
    );
    check(
        "head_dot",
        |t, v| {
            let w = t.reshape(v[1], vec![2, 2])?;
            let y = t.head_dot(v[0], w)?;
            wsum(t, y)
        },
        &[a.clone(), row.clone()],
    );
    check(
        "concat_slice",
        |t, v| {
            let y = t.concat_cols(&[v[0], v[1]])?;
            let y = t.slice_cols(y, 2, 6)?;
            let y = t.square(y)?;
            wsum(t, y)
        },
        &[a.clone(), c.clone()],
    );
    check(
        "select_rows",
        |t, v| { let y = t.select_rows(Arc::from(vec![true, false, true]), v[0], v[1])?; let y = t.square(y)?; wsum(t, y) },
        &[a.clone(), c.clone()],
    );
}

#[test]
fn backward_populates_every_reachable_param() {
    let w = rand_leaf(vec![3, 3], 11);
    let unused = rand_leaf(vec![2], 12);
    let x = DiffTensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let mut tape = Tape::new();
    let vars = bind(&mut tape, &[&w, &unused, &x]);
    let y = tape.matmul(vars[2], vars[0]).unwrap();
    let y = tape.tanh(y).unwrap();
    let loss = tape.mean(y).unwrap();
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(vars[0]).is_some());
    assert!(grads.get(vars[1]).is_none());
    assert!(grads.get(vars[2]).is_none(), "constants carry no gradient");

    let mut w2 = w.clone();
    let mut u2 = unused.clone();
    store_grads(vec![&mut w2, &mut u2], &vars[..2], &grads).unwrap();
    assert_eq!(w2.grad().unwrap().len(), 9);
    assert_eq!(u2.grad().unwrap(), &[0.0, 0.0]);
}

#[test]
fn replay_is_bit_exact() {
    let a = rand_leaf(vec![4, 5], 21);
    let b = rand_leaf(vec![5, 3], 22);
    let mut tape = Tape::new();
    let va = tape.leaf(&a);
    let vb = tape.leaf(&b);
    let y = tape.matmul(va, vb).unwrap();
    let y = tape.leaky_relu(y, 0.2).unwrap();
    let y = tape.softmax(y).unwrap();
    let r = tape.reshape(y, vec![12]).unwrap();
    let loss = tape.sum(r).unwrap();
    let before: Vec<Vec<f64>> = [y, r, loss].iter().map(|v| tape.value(*v).to_vec()).collect();
    tape.replay().unwrap();
    let after: Vec<Vec<f64>> = [y, r, loss].iter().map(|v| tape.value(*v).to_vec()).collect();
    for (p, q) in before.iter().zip(&after) {
        let pb: Vec<u64> = p.iter().map(|v| v.to_bits()).collect();
        let qb: Vec<u64> = q.iter().map(|v| v.to_bits()).collect();
        assert_eq!(pb, qb);
    }
    assert_eq!(tape.shape(r), &[12]);
}

#[test]
fn ln_of_nonpositive_is_numeric_error() {
    let mut tape = Tape::new();
    let v = tape.constant(vec![2], vec![1.0, 0.0]).unwrap();
    assert!(matches!(tape.ln(v), Err(crate::ScafdsError::Numeric(_))));
}

proptest! {
    #[test]
    fn softmax_on_simplex(xs in prop::collection::vec(-1e6f64..1e6, 1..20)) {
        let out = softmax(&DiffTensor::vector(xs)).unwrap();
        let s: f64 = out.values().iter().sum();
        prop_assert!(out.values().iter().all(|&p| p >= 0.0));
        prop_assert!((s - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn segment_softmax_on_simplex(
        xs in prop::collection::vec(-50f64..50.0, 1..30),
        nseg in 1usize..5,
    ) {
        let seg: Vec<usize> = (0..xs.len()).map(|i| (i * 7 + 3) % nseg).collect();
        let mut tape = Tape::new();
        let n = xs.len();
        let v = tape.constant(vec![n, 1], xs).unwrap();
        let y = tape.segment_softmax(v, Arc::from(seg.clone()), nseg).unwrap();
        let mut sums = vec![0.0; nseg];
        for (i, &s) in seg.iter().enumerate() {
            sums[s] += tape.value(y)[i];
        }
        for (s, total) in sums.iter().enumerate() {
            if seg.contains(&s) {
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
