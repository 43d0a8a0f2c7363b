use super::*;
use crate::rng::RngStream;
use alloc::vec::Vec;
use proptest::prelude::*;

fn rand_tensor(rows: usize, cols: usize, rng: &mut RngStream) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Tensor::new(rows, cols, data).unwrap()
}

#[test]
fn relu_example() {
    let mut t = Tape::new();
    let x = t.input(Tensor::row(&[-1.0, 0.0, 2.0]));
    let y = t.relu(x);
    assert_eq!(t.value(y).data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn cross_entropy_of_zero_logits() {
    for k in 1..6 {
        let classes = 1 << k;
        let mut t = Tape::new();
        let z = t.input(Tensor::zeros(1, classes));
        let ce = t.softmax_cross_entropy(z, &[classes - 1]).unwrap();
        let expect = k as f64 * core::f64::consts::LN_2;
        assert!((t.value(ce).item() - expect).abs() < 1e-12);
    }
}

#[test]
fn complex_identity_product() {
    let mut rng = RngStream::new(1, 0);
    let mut t = Tape::new();
    let mut eye = Tensor::zeros(3, 3);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let i_re = t.input(eye);
    let i_im = t.input(Tensor::zeros(3, 3));
    let b = complex::CVar::new(t.input(rand_tensor(3, 2, &mut rng)), t.input(rand_tensor(3, 2, &mut rng)));
    let p = t.complex_matmul(complex::CVar::new(i_re, i_im), b).unwrap();
    assert_eq!(t.value(p.re), t.value(b.re));
    assert_eq!(t.value(p.im), t.value(b.im));
}

#[test]
fn sum_gradient_is_ones() {
    let mut t = Tape::new();
    let x = t.param(Tensor::row(&[0.3, -1.0, 7.0]));
    let s = t.sum(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn sum_sq_gradient_is_two_x() {
    let mut rng = RngStream::new(2, 0);
    let mut t = Tape::new();
    let xv = rand_tensor(2, 3, &mut rng);
    let x = t.param(xv.clone());
    let s = t.sum_sq(x);
    t.backward(s).unwrap();
    for (g, v) in t.grad(x).unwrap().iter().zip(xv.data()) {
        assert_eq!(*g, 2.0 * v);
    }
}

#[test]
fn non_scalar_loss_rejected() {
    let mut t = Tape::new();
    let x = t.param(Tensor::zeros(2, 2));
    assert!(t.backward(x).is_err());
}

#[test]
fn shape_errors_at_build_time() {
    let mut t = Tape::new();
    let a = t.input(Tensor::zeros(2, 3));
    let b = t.input(Tensor::zeros(2, 2));
    assert!(matches!(t.add(a, b), Err(Error::Shape { .. })));
    assert!(t.matmul(a, a).is_err());
    let w = t.input(Tensor::zeros(4, 2));
    let bias = t.input(Tensor::zeros(1, 4));
    assert!(t.affine(a, w, bias).is_err());
}

#[test]
fn unused_parameter_gets_exact_zero() {
    let mut t = Tape::new();
    let x = t.param(Tensor::row(&[1.0, 2.0]));
    let unused = t.param(Tensor::row(&[3.0, 4.0, 5.0]));
    let s = t.sum_sq(x);
    t.backward(s).unwrap();
    assert_eq!(t.grad(unused).unwrap(), &[0.0, 0.0, 0.0]);
}

#[test]
fn linear_loss_gradcheck_exact() {
    let mut rng = RngStream::new(3, 0);
    let w = rand_tensor(1, 5, &mut rng);
    let x = rand_tensor(1, 5, &mut rng);
    let err = grad_check(
        |t, p| {
            let xi = t.input(x.clone());
            let prod = t.mul(p[0], xi)?;
            Ok(t.sum(prod))
        },
        &[w],
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn batchnorm_train_standardizes() {
    let mut rng = RngStream::new(4, 0);
    let mut t = Tape::new();
    let mut xv = rand_tensor(32, 5, &mut rng);
    for (k, v) in xv.data_mut().iter_mut().enumerate() {
        *v = 3.0 * *v + (k % 5) as f64;
    }
    let x = t.input(xv);
    let g = t.input(Tensor::filled(1, 5, 1.0));
    let b = t.input(Tensor::zeros(1, 5));
    let y = t.batchnorm(x, g, b, BnMode::Train).unwrap();
    let yv = t.value(y);
    for j in 0..5 {
        let col: Vec<f64> = (0..32).map(|i| yv.get(i, j)).collect();
        let mean = col.iter().sum::<f64>() / 32.0;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 32.0;
        assert!(mean.abs() < 1e-6);
        assert!((var - 1.0).abs() < 1e-4);
    }
    assert!(t.batch_stats(y).is_some());
}

#[test]
fn batchnorm_constant_batch_is_zero() {
    let mut t = Tape::new();
    let x = t.input(Tensor::filled(8, 3, 2.5));
    let g = t.input(Tensor::filled(1, 3, 1.0));
    let b = t.input(Tensor::row(&[0.1, 0.2, 0.3]));
    let y = t.batchnorm(x, g, b, BnMode::Train).unwrap();
    for i in 0..8 {
        assert_eq!(t.value(y).row_slice(i), &[0.1, 0.2, 0.3]);
    }
}

#[test]
fn reexecution_is_bit_identical() {
    let mut rng = RngStream::new(5, 0);
    let xv = rand_tensor(16, 4, &mut rng);
    let wv = rand_tensor(3, 4, &mut rng);
    let run = || {
        let mut t = Tape::new();
        let x = t.input(xv.clone());
        let w = t.param(wv.clone());
        let b = t.param(Tensor::zeros(1, 3));
        let g = t.param(Tensor::filled(1, 4, 1.0));
        let be = t.param(Tensor::zeros(1, 4));
        let n = t.batchnorm(x, g, be, BnMode::Train).unwrap();
        let h = t.affine(n, w, b).unwrap();
        let l = t.softmax_cross_entropy(h, &[0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2, 0]).unwrap();
        t.value(l).item().to_bits()
    };
    assert_eq!(run(), run());
}

/// Small two-layer MLP loss; used for finite-difference checks.
fn mlp_loss(t: &mut Tape, p: &[Var], x: &Tensor, labels: &[usize]) -> Result<Var> {
    let xi = t.input(x.clone());
    let h = t.affine(xi, p[0], p[1])?;
    let h = t.relu(h);
    let o = t.affine(h, p[2], p[3])?;
    t.softmax_cross_entropy(o, labels)
}

#[test]
fn random_mlp_matches_finite_differences() {
    let mut rng = RngStream::new(6, 0);
    let x = rand_tensor(8, 6, &mut rng);
    let labels: Vec<usize> = (0..8).map(|i| i % 4).collect();
    let params = [
        rand_tensor(10, 6, &mut rng),
        rand_tensor(1, 10, &mut rng),
        rand_tensor(4, 10, &mut rng),
        rand_tensor(1, 4, &mut rng),
    ];
    let err = grad_check(|t, p| mlp_loss(t, p, &x, &labels), &params, 1e-4).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn batchnorm_graph_matches_finite_differences() {
    let mut rng = RngStream::new(7, 0);
    let x = rand_tensor(16, 5, &mut rng);
    let labels: Vec<usize> = (0..16).map(|i| i % 3).collect();
    let params = [
        rand_tensor(1, 5, &mut rng),
        rand_tensor(1, 5, &mut rng),
        rand_tensor(3, 5, &mut rng),
        rand_tensor(1, 3, &mut rng),
        rand_tensor(5, 5, &mut rng),
    ];
    let err = grad_check(
        |t, p| {
            let xi = t.input(x.clone());
            let mixed = t.matmul_nt(xi, p[4])?;
            let n = t.batchnorm(mixed, p[0], p[1], BnMode::Train)?;
            let n = t.relu(n);
            let o = t.affine(n, p[2], p[3])?;
            t.softmax_cross_entropy(o, &labels)
        },
        &params,
        1e-4,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn batchnorm_eval_matches_finite_differences() {
    let mut rng = RngStream::new(8, 0);
    let x = rand_tensor(6, 4, &mut rng);
    let mean = [0.1, -0.2, 0.3, 0.0];
    let var = [1.5, 0.5, 2.0, 1.0];
    let params = [x, rand_tensor(1, 4, &mut rng), rand_tensor(1, 4, &mut rng)];
    let err = grad_check(
        |t, p| {
            let y = t.batchnorm(p[0], p[1], p[2], BnMode::Eval { mean: &mean, var: &var })?;
            let y = t.exp(y);
            Ok(t.sum(y))
        },
        &params,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err}");
}

/// Which primitive to exercise in the property test.
#[derive(Clone, Copy, Debug)]
enum Prim {
    Mul,
    SubRow,
    MulScalar,
    ExpLog,
    Powf,
    ColMean,
    MatMul,
    MatMulNt,
    Bmm,
    BmmT,
    BlockSum,
    Gather,
    Concat,
    Mean,
    ComplexNh,
}

const PRIMS: [Prim; 15] = [
    Prim::Mul,
    Prim::SubRow,
    Prim::MulScalar,
    Prim::ExpLog,
    Prim::Powf,
    Prim::ColMean,
    Prim::MatMul,
    Prim::MatMulNt,
    Prim::Bmm,
    Prim::BmmT,
    Prim::BlockSum,
    Prim::Gather,
    Prim::Concat,
    Prim::Mean,
    Prim::ComplexNh,
];

fn prim_graph(prim: Prim, t: &mut Tape, p: &[Var], r: usize, c: usize) -> Result<Var> {
    // p[0]: (r*2, c*2); p[1]: (r*2, c*2); p[2]: 1x1; p[3]: (1, c*2)
    let (a, b) = (p[0], p[1]);
    let y = match prim {
        Prim::Mul => t.mul(a, b)?,
        Prim::SubRow => t.sub_row(a, p[3])?,
        Prim::MulScalar => t.mul_scalar(a, p[2])?,
        Prim::ExpLog => {
            let e = t.exp(a);
            let e = t.add_scalar(e, 1.0);
            t.ln(e)
        }
        Prim::Powf => {
            let s = t.mul(a, a)?;
            let s = t.add_scalar(s, 0.5);
            t.powf(s, -0.5)
        }
        Prim::ColMean => t.col_mean(a)?,
        Prim::MatMul => {
            let bt = t.reshape(b, c * 2, r * 2)?;
            t.matmul(a, bt)?
        }
        Prim::MatMulNt => t.matmul_nt(a, b)?,
        Prim::Bmm => t.bmm(a, b, (2, c, 2), false)?,
        Prim::BmmT => t.bmm(a, b, (2, c, 2), true)?,
        Prim::BlockSum => t.block_sum(a, 2, 2)?,
        Prim::Gather => {
            let idx: Vec<usize> = (0..3 * r).map(|i| (i * 7) % (2 * r)).collect();
            t.gather_rows(a, &idx)?
        }
        Prim::Concat => t.concat_cols(a, b)?,
        Prim::Mean => t.mean(a),
        Prim::ComplexNh => {
            let z = t.complex_matmul_nh(complex::CVar::new(a, b), complex::CVar::new(b, a))?;
            t.complex_abs_sq(z)?
        }
    };
    // Contract with a fixed pseudo-random weighting so every output entry
    // contributes a distinct sensitivity.
    let (rr, cc) = t.shape(y);
    let w: Vec<f64> = (0..rr * cc).map(|k| libm::sin(1.0 + k as f64 * 0.7)).collect();
    let wv = t.input(Tensor::new(rr, cc, w)?);
    let prod = t.mul(y, wv)?;
    Ok(t.sum(prod))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn primitives_agree_with_finite_differences(
        which in 0usize..PRIMS.len(),
        r in 1usize..4,
        c in 1usize..4,
        seed in any::<u64>(),
    ) {
        let mut rng = RngStream::new(seed, 0);
        let params = [
            rand_tensor(2 * r, 2 * c, &mut rng),
            rand_tensor(2 * r, 2 * c, &mut rng),
            rand_tensor(1, 1, &mut rng),
            rand_tensor(1, 2 * c, &mut rng),
        ];
        let prim = PRIMS[which];
        let err = grad_check(|t, p| prim_graph(prim, t, p, r, c), &params, 1e-5).unwrap();
        prop_assert!(err < 1e-6, "{:?}: {}", prim, err);
    }
}
