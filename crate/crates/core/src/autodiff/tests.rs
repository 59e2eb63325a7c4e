use super::*;
use crate::rng;
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, data.to_vec()).unwrap()
}

fn unary(f: fn(&mut Tape<f64>, Var) -> Result<Var>, x: f64) -> (f64, f64) {
    let mut tape = Tape::new();
    let v = tape.param(t(&[1], &[x])).unwrap();
    let y = f(&mut tape, v).unwrap();
    tape.backward(y).unwrap();
    (tape.value(y).data()[0], tape.grad_data(v).unwrap()[0])
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let eye = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).unwrap();
    let col = tape.constant(t(&[2, 1], &[3.0, 4.0])).unwrap();
    let y = tape.matmul(eye, col).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0]);
    let row = tape.constant(t(&[1, 2], &[1.0, 2.0])).unwrap();
    let y = tape.matmul(row, col).unwrap();
    assert_eq!(tape.value(y).data(), &[11.0]);
    assert_eq!(tape.shape(y), &[1, 1]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let b = tape.constant(Tensor::zeros(&[2, 3])).unwrap();
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        Error::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
}

#[test]
fn sigmoid_values() {
    let (y, g) = unary(Tape::sigmoid, 0.0);
    assert_eq!(y, 0.5);
    assert_eq!(g, 0.25);
    assert_eq!(unary(Tape::sigmoid, 1000.0).0, 1.0);
    assert_eq!(unary(Tape::sigmoid, -1000.0).0, 0.0);
    let y1 = unary(Tape::sigmoid, 1.0).0;
    assert!((y1 - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
    assert!((y1 - 0.731_058_578_6).abs() < 1e-10);
    let mut tape = Tape::<f32>::new();
    let x = tape
        .constant(Tensor::new(&[2], vec![1000.0, -1000.0]).unwrap())
        .unwrap();
    let y = tape.sigmoid(x).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 0.0]);
}

#[test]
fn tanh_values() {
    assert_eq!(unary(Tape::tanh, 0.0), (0.0, 1.0));
    let y = unary(Tape::tanh, 0.5).0;
    assert!((y - 0.462_117_157_3).abs() < 1e-10);
}

#[test]
fn gelu_values() {
    assert_eq!(unary(Tape::gelu, 0.0).0, 0.0);
    let y = unary(Tape::gelu, 1.0).0;
    let direct = 0.5 * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (1.0 + 0.044715)).tanh());
    assert!((y - direct).abs() < 1e-15);
    assert!((y - 0.841_191_990_6).abs() < 1e-10);
    assert!((unary(Tape::gelu, 10.0).0 - 10.0).abs() < 1e-9);
    assert!(unary(Tape::gelu, -10.0).0.abs() < 1e-9);
}

fn softmax_of(values: &[f64]) -> Vec<f64> {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, values.len()], values)).unwrap();
    let y = tape.softmax(x, 1).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn softmax_values() {
    for p in softmax_of(&[0.0, 0.0, 0.0]) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    assert_eq!(softmax_of(&[1000.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
    let p = softmax_of(&[1.0, 2.0, 3.0]);
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
    for (i, expect) in [0.0900306, 0.2447285, 0.6652410].into_iter().enumerate() {
        assert!((p[i] - expect).abs() < 5e-8);
        assert!((p[i] - ((i + 1) as f64).exp() / z).abs() < 1e-15);
    }
}

#[test]
fn softmax_along_first_axis() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[2, 3], &[0.0, 1.0, 2.0, 0.0, 1.0, 2.0])).unwrap();
    let y = tape.softmax(x, 0).unwrap();
    assert!(tape.value(y).data().iter().all(|&p| (p - 0.5).abs() < 1e-15));
    assert!(tape.softmax(x, 2).is_err());
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        row in proptest::collection::vec(-50.0f64..50.0, 1..40),
        shift in -100.0f64..100.0,
    ) {
        let p = softmax_of(&row);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let shifted: Vec<f64> = row.iter().map(|v| v + shift).collect();
        for (a, b) in p.iter().zip(softmax_of(&shifted)) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardised(row in proptest::collection::vec(-10.0f64..10.0, 2..32)) {
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
        prop_assume!(var > 1e-2);
        let out = layer_norm(&row, 1e-5);
        let n = out.len() as f64;
        let m = out.iter().sum::<f64>() / n;
        let v = out.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
        prop_assert!(m.abs() < 1e-6);
        prop_assert!((v - 1.0).abs() < 1e-5 / var + 1e-9);
    }
}

fn layer_norm(row: &[f64], eps: f64) -> Vec<f64> {
    let n = row.len();
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, n], row)).unwrap();
    let g = tape.constant(Tensor::full(&[n], 1.0)).unwrap();
    let b = tape.constant(Tensor::zeros(&[n])).unwrap();
    let y = tape.layer_norm(x, g, b, eps).unwrap();
    tape.value(y).data().to_vec()
}

#[test]
fn layer_norm_examples() {
    assert_eq!(layer_norm(&[5.0; 4], 1e-5), vec![0.0; 4]);
    assert_eq!(layer_norm(&[1.0, 3.0], 0.0), vec![-1.0, 1.0]);
    let y = layer_norm(&[1.0, 3.0], 1e-5);
    assert!((y[0] + 1.0).abs() < 1e-5 && (y[1] - 1.0).abs() < 1e-5);
}

#[test]
fn layer_norm_rejects_wrong_affine_width() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::zeros(&[2, 4])).unwrap();
    let g = tape.constant(Tensor::zeros(&[3])).unwrap();
    assert!(tape.layer_norm(x, g, g, 1e-5).is_err());
}

#[test]
fn dropout_identity_cases() {
    let mut rng = rng::stream(1, "test");
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::from_fn(&[3, 4], |i| i as f32)).unwrap();
    assert_eq!(tape.dropout(x, 0.2, Mode::Eval, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap(), x);
    assert!(matches!(
        tape.dropout(x, 1.0, Mode::Train, &mut rng),
        Err(Error::Config(_))
    ));
    assert!(tape.dropout(x, -0.1, Mode::Eval, &mut rng).is_err());
}

#[test]
fn dropout_preserves_expectation() {
    let mut rng = rng::stream(2, "dropout");
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(Tensor::full(&[1_000_000], 1.0)).unwrap();
    let y = tape.dropout(x, 0.2, Mode::Train, &mut rng).unwrap();
    let out = tape.value(y).data();
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    assert!((mean - 1.0).abs() < 0.01, "mean {mean}");
    let zeros = out.iter().filter(|&&v| v == 0.0).count() as f64 / out.len() as f64;
    assert!((zeros - 0.2).abs() < 0.005);
    assert!(out.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
}

#[test]
fn backward_of_sum_is_ones() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad_data(x).unwrap(), &[1.0; 6]);
}

#[test]
fn fan_out_accumulates() {
    let mut tape = Tape::<f64>::new();
    let x = tape.param(t(&[3], &[1.0, -2.0, 4.0])).unwrap();
    let y = tape.add(x, x).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad_data(x).unwrap(), &[2.0; 3]);
}

#[test]
fn shared_subexpression_matches_expanded_graph() {
    let x0 = t(&[2, 3], &[0.3, -0.7, 1.1, 0.2, 0.5, -1.3]);
    let w0 = t(&[3, 3], &[0.1, 0.2, -0.3, 0.4, -0.5, 0.6, 0.7, 0.8, -0.9]);
    // shared: h = tanh(x W); loss = sum(h * h + h)
    let mut shared = Tape::new();
    let (x, w) = (shared.param(x0.clone()).unwrap(), shared.param(w0.clone()).unwrap());
    let xw = shared.matmul(x, w).unwrap();
    let h = shared.tanh(xw).unwrap();
    let hh = shared.mul(h, h).unwrap();
    let s = shared.add(hh, h).unwrap();
    let loss = shared.sum(s).unwrap();
    shared.backward(loss).unwrap();
    // expanded: recompute h three times
    let mut expanded = Tape::new();
    let (x2, w2) = (expanded.param(x0).unwrap(), expanded.param(w0).unwrap());
    let mut hs = Vec::new();
    for _ in 0..3 {
        let xw = expanded.matmul(x2, w2).unwrap();
        hs.push(expanded.tanh(xw).unwrap());
    }
    let hh = expanded.mul(hs[0], hs[1]).unwrap();
    let s = expanded.add(hh, hs[2]).unwrap();
    let loss2 = expanded.sum(s).unwrap();
    expanded.backward(loss2).unwrap();
    assert_eq!(shared.value(loss).data(), expanded.value(loss2).data());
    for (a, b) in [(x, x2), (w, w2)] {
        for (g1, g2) in shared.grad_data(a).unwrap().iter().zip(expanded.grad_data(b).unwrap()) {
            assert!((g1 - g2).abs() < 1e-12);
        }
    }
}

#[test]
fn non_scalar_backward_is_usage_error() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::zeros(&[2])).unwrap();
    assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
}

#[test]
fn unreached_parameters_get_zero_gradient() {
    let mut tape = Tape::<f32>::new();
    let x = tape.param(Tensor::full(&[2], 1.0)).unwrap();
    let unused = tape.param(Tensor::full(&[3], 1.0)).unwrap();
    let s = tape.sum(x).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad_data(unused).unwrap(), &[0.0; 3]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::<f32>::new();
    let c = tape.constant(Tensor::full(&[2], 1.0)).unwrap();
    let x = tape.param(Tensor::full(&[2], 3.0)).unwrap();
    let y = tape.mul(c, x).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad_data(c).is_none());
    assert_eq!(tape.grad_data(x).unwrap(), &[1.0, 1.0]);
}

#[test]
fn non_finite_results_are_errors() {
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[1], 1e30)).unwrap();
    let y = tape.mul(x, x);
    assert!(matches!(y, Err(Error::NonFinite { op: "mul" })));
}

#[test]
fn cross_entropy_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.param(Tensor::zeros(&[1, 36])).unwrap();
    let l = tape.cross_entropy(z, &[7]).unwrap();
    assert!((tape.value(l).data()[0] - 36f64.ln()).abs() < 1e-12);
    assert!((tape.value(l).data()[0] - 3.5835).abs() < 1e-4);

    let mut logits = vec![0.0; 36];
    logits[3] = 30.0;
    let z = tape.param(t(&[1, 36], &logits)).unwrap();
    let l = tape.cross_entropy(z, &[3]).unwrap();
    assert!(tape.value(l).data()[0] < 1e-11);

    assert!(matches!(tape.cross_entropy(z, &[36]), Err(Error::Input(_))));
    assert!(tape.cross_entropy(z, &[0, 1]).is_err());
}

#[test]
fn cross_entropy_matches_naive_formula() {
    let logits = crate::gradcheck::random_tensor(&[3, 36], 3.0, 9, "ce");
    let labels = [4, 35, 0];
    let mut tape = Tape::new();
    let z = tape.constant(logits.clone()).unwrap();
    let l = tape.cross_entropy(z, &labels).unwrap();
    let mut naive = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = &logits.data()[r * 36..(r + 1) * 36];
        let total: f64 = row.iter().map(|v| v.exp()).sum();
        naive -= (row[label].exp() / total).ln();
    }
    naive /= 3.0;
    assert!((tape.value(l).data()[0] - naive).abs() < 1e-10);
}

#[test]
fn attention_rejects_bad_shapes() {
    let mut tape = Tape::<f64>::new();
    let q = tape.constant(Tensor::zeros(&[6, 8])).unwrap();
    assert!(tape.attention(q, q, q, &[true; 6], 4, 2).is_err());
    assert!(tape.attention(q, q, q, &[true; 6], 2, 3).is_err());
    assert!(tape
        .attention(q, q, q, &[true, true, true, false, false, false], 2, 2)
        .is_err());
}

#[test]
fn attention_rows_sum_to_one_over_valid_keys() {
    let mut tape = Tape::<f64>::new();
    let q = tape
        .constant(crate::gradcheck::random_tensor(&[8, 8], 1.0, 1, "q"))
        .unwrap();
    let k = tape
        .constant(crate::gradcheck::random_tensor(&[8, 8], 1.0, 1, "k"))
        .unwrap();
    let valid = [true, true, false, false, true, true, true, false];
    let a = tape.attention(q, k, k, &valid, 2, 2).unwrap();
    let w = tape.attention_weights(a).unwrap();
    for (r, row) in w.chunks_exact(4).enumerate() {
        let b = r / 8;
        let total: f64 = row.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        for (j, &p) in row.iter().enumerate() {
            if !valid[b * 4 + j] {
                assert_eq!(p, 0.0);
            }
        }
    }
}
