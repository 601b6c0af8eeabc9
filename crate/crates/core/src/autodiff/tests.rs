use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::{Error, Result};

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Checks d/dx sum(op(x) * r) against central differences.
fn check_unary(shape: &[usize], op: impl for<'t> Fn(Var<'t, f64>) -> Result<Var<'t, f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x0 = rand_tensor(&mut rng, shape);
    let out_shape = {
        let tape = Tape::new();
        op(tape.constant(x0.clone())).unwrap().shape()
    };
    let r = rand_tensor(&mut rng, &out_shape);
    let loss = |x: &Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let y = op(tape.constant(x.clone()))?;
        Ok(y.mul(&tape.constant(r.clone()))?.sum()?.item())
    };
    let tape = Tape::new();
    let x = tape.param(x0.clone());
    let l = op(x).unwrap().mul(&tape.constant(r.clone())).unwrap().sum().unwrap();
    let g = tape.backward(l).unwrap().wrt(x);
    let fd = finite_diff_grad(loss, &x0, 1e-6).unwrap();
    for (a, b) in g.data().iter().zip(fd.data()) {
        assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()), "backprop {a} vs fd {b}");
    }
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let tape = Tape::<f32>::new();
    let y = tape.constant(Tensor::zeros(&[1, 2])).softmax().unwrap();
    assert_eq!(y.value().data(), &[0.5, 0.5]);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tape = Tape::<f32>::new();
    let x = Tensor::from_fn(&[5, 7], |_| rng.random_range(-30.0..30.0));
    let y = tape.constant(x).softmax().unwrap();
    for row in y.value().data().chunks(7) {
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(row.iter().all(|&p| p >= 0.0));
    }
}

#[test]
fn layer_norm_of_constant_is_zero() {
    let tape = Tape::<f32>::new();
    let g = tape.param(Tensor::full(&[4], 1.0));
    let b = tape.param(Tensor::zeros(&[4]));
    let y = tape.constant(Tensor::full(&[2, 4], 3.7)).layer_norm(Some((&g, &b))).unwrap();
    assert!(y.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_matches_triple_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = rand_tensor(&mut rng, &[2, 3]);
    let b = rand_tensor(&mut rng, &[3, 2]);
    let tape = Tape::new();
    let c = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut acc = 0.0;
            for k in 0..3 {
                acc += a.data()[i * 3 + k] * b.data()[k * 2 + j];
            }
            assert!((c.value().data()[i * 2 + j] - acc).abs() < 1e-6);
        }
    }
}

#[test]
fn large_matmul_parallel_path_matches_serial() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_tensor(&mut rng, &[64, 48]);
    let b = rand_tensor(&mut rng, &[48, 40]);
    let tape = Tape::new();
    let c = tape.constant(a.clone()).matmul(&tape.constant(b.clone())).unwrap();
    let mut expected = vec![0.0; 64 * 40];
    for i in 0..64 {
        for k in 0..48 {
            for j in 0..40 {
                expected[i * 40 + j] += a.data()[i * 48 + k] * b.data()[k * 40 + j];
            }
        }
    }
    // identical accumulation order, so bitwise equal
    assert_eq!(c.value().data(), &expected[..]);
}

#[test]
fn gradient_of_sum_is_ones() {
    let tape = Tape::<f32>::new();
    let w = tape.param(Tensor::new(vec![3], vec![0.3, -2.0, 5.0]).unwrap());
    let g = tape.backward(w.sum().unwrap()).unwrap();
    assert_eq!(g.wrt(w).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn gradient_of_sum_of_squares() {
    let tape = Tape::<f32>::new();
    let w = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
    let g = tape.backward(w.mul(&w).unwrap().sum().unwrap()).unwrap();
    assert_eq!(g.wrt(w).data(), &[2.0, 4.0]);
}

#[test]
fn non_scalar_loss_is_rejected() {
    let tape = Tape::<f32>::new();
    let w = tape.param(Tensor::zeros(&[2]));
    assert!(matches!(tape.backward(w), Err(Error::InvalidArgument(_))));
}

#[test]
fn shape_errors_name_both_shapes() {
    let tape = Tape::<f32>::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    match a.matmul(&b) {
        Err(Error::ShapeMismatch { op, left, right }) => {
            assert_eq!(op, "matmul");
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(a.add(&tape.constant(Tensor::zeros(&[3, 2]))).is_err());
}

#[test]
fn unreachable_parameter_gets_zero_gradient() {
    let tape = Tape::<f32>::new();
    let used = tape.param(Tensor::full(&[2], 1.0));
    let unused = tape.param(Tensor::full(&[3], 1.0));
    let g = tape.backward(used.sum().unwrap()).unwrap();
    assert!(g.get(unused).is_none());
    assert_eq!(g.wrt(unused).data(), &[0.0; 3]);
}

#[test]
fn repeated_backward_accumulates() {
    let mut store = ParamStore::<f64>::new();
    store.insert("w", Tensor::new(vec![2], vec![1.0, -3.0]).unwrap());
    let tape = Tape::new();
    let bound = store.bind(&tape);
    let w = bound.get("w").unwrap();
    let loss = w.mul(&w).unwrap().sum().unwrap();
    let mut acc = store.zeros_like();
    acc.accumulate(&bound.grads(&tape.backward(loss).unwrap())).unwrap();
    let once = acc.clone();
    acc.accumulate(&bound.grads(&tape.backward(loss).unwrap())).unwrap();
    for (a, b) in acc.get("w").unwrap().data().iter().zip(once.get("w").unwrap().data()) {
        assert_eq!(*a, 2.0 * b);
    }
}

#[test]
fn gradient_is_linear_in_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x0 = rand_tensor(&mut rng, &[3, 4]);
    let grad_of = |which: u8| {
        let tape = Tape::new();
        let x = tape.param(x0.clone());
        let f = x.gelu().unwrap().sum().unwrap();
        let g = x.softmax().unwrap().mul(&x).unwrap().sum().unwrap();
        let loss = match which {
            0 => f,
            1 => g,
            _ => f.add(&g).unwrap(),
        };
        tape.backward(loss).unwrap().wrt(x)
    };
    let (gf, gg, gs) = (grad_of(0), grad_of(1), grad_of(2));
    for i in 0..12 {
        assert!((gf.data()[i] + gg.data()[i] - gs.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn checked_mode_trips_on_overflow() {
    let tape = Tape::<f32>::new();
    let x = tape.constant(Tensor::full(&[2], 1e30));
    assert!(matches!(x.scale(1e30), Err(Error::NonFinite("scale"))));
    let loose = Tape::<f32>::unchecked();
    let y = loose.constant(Tensor::full(&[2], 1e30)).scale(1e30).unwrap();
    assert!(y.value().data()[0].is_infinite());
}

#[test]
fn forward_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tape = Tape::<f32>::new();
        let a = tape.param(Tensor::from_fn(&[16, 32], |_| rng.random_range(-1.0..1.0)));
        let b = tape.param(Tensor::from_fn(&[32, 24], |_| rng.random_range(-1.0..1.0)));
        let l = a.matmul(&b).unwrap().gelu().unwrap().softmax().unwrap().mean().unwrap();
        let g = tape.backward(l).unwrap();
        (l.item(), g.wrt(a).into_data())
    };
    assert_eq!(run(), run());
}

#[test]
fn op_gradients_match_finite_differences() {
    check_unary(&[3, 4], |x| x.softmax());
    check_unary(&[3, 4], |x| x.log_softmax());
    check_unary(&[3, 5], |x| x.layer_norm(None));
    check_unary(&[3, 4], |x| x.gelu());
    check_unary(&[3, 4], |x| x.mean_rows());
    check_unary(&[3, 4], |x| x.transpose());
    check_unary(&[3, 4], |x| x.reshape(&[2, 6]));
    check_unary(&[3, 4], |x| x.slice_cols(1, 2));
    check_unary(&[4, 3], |x| x.gather_rows(&[2, 0, 2, 3]));
    check_unary(&[3, 4], |x| x.scale(-1.7));
    check_unary(&[3, 4], |x| x.mean());
    check_unary(&[3, 4], |x| concat_cols(&[x, x.slice_cols(0, 1)?]));
    check_unary(&[3, 4], |x| concat_rows(&[x, x.gather_rows(&[1])?]));
    check_unary(&[3, 4], |x| x.mul(&x)?.sub(&x));
    check_unary(&[3, 4], |x| x.matmul(&x.transpose()?));
    check_unary(&[3, 4], |x| {
        let g = x.tape().constant(Tensor::from_fn(&[4], |i| 0.5 + i as f64));
        let b = x.tape().constant(Tensor::from_fn(&[4], |i| i as f64 * 0.1));
        x.layer_norm(Some((&g, &b)))
    });
}

#[test]
fn affine_and_bias_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let gamma0 = rand_tensor(&mut rng, &[4]);
    let bias0 = rand_tensor(&mut rng, &[4]);
    let r = rand_tensor(&mut rng, &[3, 4]);
    let loss = |gamma: &Tensor<f64>, bias: &Tensor<f64>| -> Result<f64> {
        let tape = Tape::new();
        let g = tape.constant(gamma.clone());
        let b = tape.constant(bias.clone());
        let y = tape.constant(x.clone()).layer_norm(Some((&g, &b)))?.add_bias(&b)?;
        Ok(y.mul(&tape.constant(r.clone()))?.sum()?.item())
    };
    let tape = Tape::new();
    let g = tape.param(gamma0.clone());
    let b = tape.param(bias0.clone());
    let y = tape.constant(x.clone()).layer_norm(Some((&g, &b))).unwrap().add_bias(&b).unwrap();
    let l = y.mul(&tape.constant(r.clone())).unwrap().sum().unwrap();
    let grads = tape.backward(l).unwrap();
    let fd_g = finite_diff_grad(|t| loss(t, &bias0), &gamma0, 1e-6).unwrap();
    let fd_b = finite_diff_grad(|t| loss(&gamma0, t), &bias0, 1e-6).unwrap();
    for (a, e) in grads.wrt(g).data().iter().zip(fd_g.data()) {
        assert!((a - e).abs() < 1e-6);
    }
    for (a, e) in grads.wrt(b).data().iter().zip(fd_b.data()) {
        assert!((a - e).abs() < 1e-6);
    }
}
