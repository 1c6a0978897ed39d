use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, random_projection, random_tensor};
use super::*;

const FD_EPS: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

#[test]
fn matmul_identity_and_dot() {
    let mut tape = Tape::new();
    let eye = tape.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap());
    let m = tape.constant(Tensor::from_rows(&[vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap());
    let out = tape.matmul(eye, m).unwrap();
    assert_eq!(tape.value(out).data(), &[3.0, 4.0, 5.0, 6.0]);

    let a = tape.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap());
    let b = tape.constant(Tensor::matrix(2, 1, vec![3.0, 4.0]).unwrap());
    let out = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(out).data(), &[11.0]);
}

#[test]
fn matmul_shape_mismatch_reports_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match tape.matmul(a, b) {
        Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn matmul_sum_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(&[4, 5], &mut rng, 1.0);
    let b = random_tensor(&[5, 3], &mut rng, 1.0);
    let report = check_inputs(
        &[a, b],
        |t, v| {
            let p = t.matmul(v[0], v[1])?;
            Ok(t.sum(p))
        },
        FD_EPS,
    )
    .unwrap();
    assert!(report.passed(1e-6), "{report:?}");
}

#[test]
fn softmax_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![0.0, 0.0, 0.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    for v in tape.value(y).data() {
        assert!(close(*v, 1.0 / 3.0, 1e-15));
    }
    let x = tape.constant(Tensor::vector(vec![1e300, 1e300 - 1000.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!(d.iter().all(|v| v.is_finite()));
    // 1e300 - 1000 rounds to 1e300 in double precision, so use a range that
    // actually separates the two values.
    let x = tape.constant(Tensor::vector(vec![1e5, 1e5 - 1000.0]).unwrap());
    let y = tape.softmax(x, 0).unwrap();
    let d = tape.value(y).data();
    assert!(close(d[0], 1.0, 1e-12) && d[1] < 1e-300);
}

#[test]
fn softmax_sums_to_one_along_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_tensor(&[2, 3, 4], &mut rng, 5.0);
    for axis in 0..3 {
        let mut tape = Tape::new();
        let x = tape.constant(t.clone());
        let y = tape.softmax(x, axis).unwrap();
        let v = tape.value(y);
        let shape = v.shape().to_vec();
        let strides = [12, 4, 1];
        let mut sums = std::collections::HashMap::new();
        for (i, val) in v.data().iter().enumerate() {
            let key: Vec<usize> = (0..3).filter(|&a| a != axis).map(|a| (i / strides[a]) % shape[a]).collect();
            *sums.entry(key).or_insert(0.0) += val;
        }
        assert!(sums.values().all(|s| close(*s, 1.0, 1e-12)));
    }
}

#[test]
fn layer_norm_examples() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![2.5, 2.5, 2.5]).unwrap());
    let g = tape.constant(Tensor::vector(vec![1.3, -0.2, 0.7]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]).unwrap());
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert_eq!(tape.value(y).data(), &[0.1, 0.2, 0.3]);

    let x = tape.constant(Tensor::vector(vec![1.0, -1.0]).unwrap());
    let g = tape.constant(Tensor::vector(vec![1.0, 1.0]).unwrap());
    let b = tape.constant(Tensor::vector(vec![0.0, 0.0]).unwrap());
    let y = tape.layer_norm(x, g, b, 0.0).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, -1.0]);
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::vector(vec![0.3, 0.3]).unwrap());
    let ce = tape.cross_entropy(l, 0).unwrap();
    assert!(close(tape.value(ce).data()[0], std::f64::consts::LN_2, 1e-15));

    let l = tape.constant(Tensor::vector(vec![40.0, -40.0]).unwrap());
    let ce = tape.cross_entropy(l, 0).unwrap();
    assert!(tape.value(ce).data()[0] < 1e-30);

    // Hand softmax of [1,2,3]: z = e + e^2 + e^3.
    let e = std::f64::consts::E;
    let z = e + e * e + e * e * e;
    let p = [e / z, e * e / z, e * e * e / z];
    let mut tape = Tape::new();
    let l = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap().with_grad());
    let ce = tape.cross_entropy(l, 1).unwrap();
    assert!(close(tape.value(ce).data()[0], -(p[1].ln()), 1e-12));
    tape.backward(ce).unwrap();
    let g = tape.grad(l).unwrap();
    assert!(close(g[0], p[0], 1e-12) && close(g[1], p[1] - 1.0, 1e-12) && close(g[2], p[2], 1e-12));

    assert!(matches!(tape.cross_entropy(l, 3), Err(Error::IndexOutOfRange { .. })));
}

#[test]
fn backward_simple_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0]).unwrap().with_grad());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);

    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
    let sq = tape.mul(x, x).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);

    assert!(matches!(tape.backward(sq), Err(Error::NonScalarLoss(_))));
}

#[test]
fn backward_accumulates_until_zeroed() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]).unwrap().with_grad());
    let s = tape.sum(x);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
}

#[test]
fn backward_leaves_forward_values_untouched() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tape = Tape::new();
    let a = tape.leaf(random_tensor(&[3, 4], &mut rng, 1.0).with_grad());
    let b = tape.leaf(random_tensor(&[4, 2], &mut rng, 1.0).with_grad());
    let p = tape.matmul(a, b).unwrap();
    let s = tape.softmax(p, 1).unwrap();
    let l = random_projection(&mut tape, s, 1).unwrap();
    let before: Vec<Tensor> = (0..tape.len()).map(|i| tape.nodes[i].value.clone()).collect();
    tape.backward(l).unwrap();
    for (i, b) in before.iter().enumerate() {
        assert_eq!(tape.nodes[i].value.data(), b.data());
    }
}

fn random_shape(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..6))
}

/// Every differentiable op on ten random shapes and seeds.
#[test]
fn every_op_passes_gradient_check() {
    type Build = fn(&mut Tape, &[Var]) -> Result<Var>;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..10 {
        let (m, n) = random_shape(&mut rng);
        let k = rng.gen_range(1..5);
        let cases: Vec<(&str, Vec<Tensor>, Build)> = vec![
            ("matmul", vec![random_tensor(&[m, k], &mut rng, 1.0), random_tensor(&[k, n], &mut rng, 1.0)], |t, v| {
                t.matmul(v[0], v[1])
            }),
            ("add", vec![random_tensor(&[m, n], &mut rng, 1.0), random_tensor(&[m, n], &mut rng, 1.0)], |t, v| {
                t.add(v[0], v[1])
            }),
            ("sub", vec![random_tensor(&[m, n], &mut rng, 1.0), random_tensor(&[m, n], &mut rng, 1.0)], |t, v| {
                t.sub(v[0], v[1])
            }),
            ("mul", vec![random_tensor(&[m, n], &mut rng, 1.0), random_tensor(&[m, n], &mut rng, 1.0)], |t, v| {
                t.mul(v[0], v[1])
            }),
            ("scale", vec![random_tensor(&[m, n], &mut rng, 1.0)], |t, v| Ok(t.scale(v[0], -1.7))),
            ("add_row", vec![random_tensor(&[m, n], &mut rng, 1.0), random_tensor(&[n], &mut rng, 1.0)], |t, v| {
                t.add_row(v[0], v[1])
            }),
            ("gelu", vec![random_tensor(&[m, n], &mut rng, 2.0)], |t, v| Ok(t.gelu(v[0]))),
            ("tanh", vec![random_tensor(&[m, n], &mut rng, 2.0)], |t, v| Ok(t.tanh(v[0]))),
            ("softmax0", vec![random_tensor(&[m, n], &mut rng, 2.0)], |t, v| t.softmax(v[0], 0)),
            ("softmax1", vec![random_tensor(&[m, n], &mut rng, 2.0)], |t, v| t.softmax(v[0], 1)),
            (
                "layer_norm",
                vec![random_tensor(&[m, n + 1], &mut rng, 2.0), random_tensor(&[n + 1], &mut rng, 1.0), random_tensor(&[n + 1], &mut rng, 1.0)],
                |t, v| t.layer_norm(v[0], v[1], v[2], 1e-5),
            ),
            ("gather", vec![random_tensor(&[6, n], &mut rng, 1.0)], |t, v| t.gather_rows(v[0], &[3, 0, 3, 5])),
            ("concat", vec![random_tensor(&[m, n], &mut rng, 1.0), random_tensor(&[2, n], &mut rng, 1.0)], |t, v| {
                t.concat_rows(&[v[0], v[1], v[0]])
            }),
            ("select", vec![random_tensor(&[m + 1, n], &mut rng, 1.0)], |t, v| t.select_rows(v[0], &[0, 0, 1])),
            ("reshape", vec![random_tensor(&[m, n], &mut rng, 1.0)], |t, v| {
                let numel = t.value(v[0]).numel();
                let r = t.reshape(v[0], &[numel])?;
                t.reshape(r, &[1, numel])
            }),
        ];
        for (name, inputs, build) in cases {
            let report = check_inputs(
                &inputs,
                |t, v| {
                    let out = build(t, v)?;
                    random_projection(t, out, 99 + trial)
                },
                FD_EPS,
            )
            .unwrap();
            assert!(report.passed(FD_TOL), "{name} trial {trial}: {report:?}");
        }
        let target = rng.gen_range(0..n);
        let logits = random_tensor(&[n], &mut rng, 3.0);
        let report = check_inputs(&[logits], |t, v| t.cross_entropy(v[0], target), FD_EPS).unwrap();
        assert!(report.passed(FD_TOL), "cross_entropy trial {trial}: {report:?}");
    }
}

#[test]
fn relu_gradient_away_from_kink() {
    let x = Tensor::vector(vec![-1.5, -0.3, 0.4, 2.0]).unwrap();
    let report = check_inputs(
        &[x],
        |t, v| {
            let r = t.relu(v[0]);
            random_projection(t, r, 5)
        },
        FD_EPS,
    )
    .unwrap();
    assert!(report.passed(FD_TOL), "{report:?}");
}

fn store_with(value: Vec<f64>, grad: Option<Vec<f64>>) -> ParamStore {
    let mut store = ParamStore::new();
    let n = value.len();
    let id = store.add("w", Tensor::vector(value).unwrap()).unwrap();
    store.get_mut(id).grad = grad.inspect(|g| {
        assert_eq!(g.len(), n);
    });
    store
}

#[test]
fn adam_first_step_moves_by_learning_rate() {
    let lr = 0.05;
    let mut store = store_with(vec![1.0, -2.0, 0.5], Some(vec![1.0; 3]));
    let mut adam = AdamState::new(AdamConfig { learning_rate: lr, ..AdamConfig::default() }, &store);
    adam.update(&mut store).unwrap();
    // m_hat = 1, v_hat = 1, so the step is lr / (1 + eps).
    let expected_step = lr / (1.0 + 1e-8);
    let w = store.get(store.id("w").unwrap()).data();
    assert!(close(w[0], 1.0 - expected_step, 1e-15));
    assert!(close(w[1], -2.0 - expected_step, 1e-15));
    assert!(close(w[2], 0.5 - expected_step, 1e-15));
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_zero_grad_keeps_params_but_counts_step() {
    let mut store = store_with(vec![1.0, 2.0], Some(vec![0.0; 2]));
    let mut adam = AdamState::new(AdamConfig::default(), &store);
    adam.update(&mut store).unwrap();
    assert_eq!(store.get(store.id("w").unwrap()).data(), &[1.0, 2.0]);
    assert_eq!(adam.step_count(), 1);
}

#[test]
fn adam_missing_grad_is_rejected() {
    let mut store = store_with(vec![1.0], None);
    let mut adam = AdamState::new(AdamConfig::default(), &store);
    assert!(matches!(adam.update(&mut store), Err(Error::MissingGrad(_))));
    assert_eq!(adam.step_count(), 0);
}

#[test]
fn adam_is_bitwise_deterministic() {
    let run = || {
        let mut store = store_with(vec![0.3, -0.7, 1.1], Some(vec![0.2, -0.5, 0.9]));
        let mut adam = AdamState::new(AdamConfig::default(), &store);
        adam.update(&mut store).unwrap();
        adam.update(&mut store).unwrap();
        store.get(store.id("w").unwrap()).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn single_tensor_adam_matches_store_update() {
    let cfg = AdamConfig { learning_rate: 0.01, ..AdamConfig::default() };
    let mut t = Tensor::vector(vec![0.3, -0.7]).unwrap();
    t.grad = Some(vec![0.2, -0.5]);
    let (mut m, mut v, mut step) = (Tensor::zeros(&[2]), Tensor::zeros(&[2]), 0);
    adam_step(&mut t, &mut m, &mut v, &mut step, &cfg).unwrap();

    let mut store = store_with(vec![0.3, -0.7], Some(vec![0.2, -0.5]));
    let mut adam = AdamState::new(cfg, &store);
    adam.update(&mut store).unwrap();
    assert_eq!(t.data(), store.get(store.id("w").unwrap()).data());
    assert_eq!(step, 1);
}

#[test]
fn tensor_rejects_bad_shapes() {
    assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    assert!(Tensor::new(vec![0], vec![]).is_err());
}
