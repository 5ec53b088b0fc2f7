use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{check_inputs, check_params};
use super::*;
use crate::error::Error;

const TOL64: f64 = 1e-5;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), data).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    t(shape, &data)
}

fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    out
}

/// Direct sliding-window cross-correlation with explicit zero padding.
fn naive_conv(
    x: &[f64],
    (ci, h, w): (usize, usize, usize),
    k: &[f64],
    (co, kh, kw): (usize, usize, usize),
    (pt, pl, oh, ow, stride): (usize, usize, usize, usize, usize),
) -> Vec<f64> {
    let mut out = vec![0.0; co * oh * ow];
    for o in 0..co {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..ci {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pt as isize;
                            let ix = (ox * stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += k[((o * ci + c) * kh + ky) * kw + kx]
                                * x[(c * h + iy as usize) * w + ix as usize];
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

fn eval<F>(inputs: &[Tensor<f64>], f: F) -> Tensor<f64>
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> crate::Result<Var>,
{
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone(), false)).collect();
    let out = f(&mut g, &vars).unwrap();
    g.value(out).clone()
}

#[test]
fn matmul_identity_and_product() {
    let id = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let b = t(&[2, 2], &[5.0, 6.0, 7.0, 8.0]);
    let out = eval(&[id, b.clone()], |g, v| g.matmul(v[0], v[1]));
    assert_eq!(out.data(), b.data());

    let a = [1.0, 2.0, 3.0, 4.0];
    let oracle = naive_matmul(&a, b.data(), 2, 2, 2);
    assert_eq!(oracle, vec![19.0, 22.0, 43.0, 50.0]);
    let out = eval(&[t(&[2, 2], &a), b.clone()], |g, v| g.matmul(v[0], v[1]));
    assert_eq!(out.data(), &oracle[..]);

    let zero = Tensor::zeros(vec![3, 2]);
    let out = eval(&[zero, b], |g, v| g.matmul(v[0], v[1]));
    assert!(out.data().iter().all(|&x| x == 0.0));
}

#[test]
fn matmul_nt_matches_naive() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[5, 4]);
    let mut bt = vec![0.0; 20];
    for j in 0..5 {
        for p in 0..4 {
            bt[p * 5 + j] = b.data()[j * 4 + p];
        }
    }
    let oracle = naive_matmul(a.data(), &bt, 3, 4, 5);
    let out = eval(&[a, b], |g, v| g.matmul_nt(v[0], v[1]));
    for (x, y) in out.data().iter().zip(&oracle) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let a = g.constant(Tensor::zeros(vec![2, 3]));
    let b = g.constant(Tensor::zeros(vec![2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn conv2d_examples() {
    let ones = Tensor::filled(vec![1, 3, 3], 1.0);
    let k = Tensor::filled(vec![1, 1, 3, 3], 1.0);
    let out = eval(&[ones.clone(), k], |g, v| g.conv2d(v[0], v[1], None, 1, Padding::Valid));
    assert_eq!(out.shape(), &[1, 1, 1]);
    assert_eq!(out.item(), 9.0);

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[1, 5, 5]);
    let zero_k = Tensor::zeros(vec![1, 1, 3, 3]);
    let out = eval(&[x.clone(), zero_k], |g, v| g.conv2d(v[0], v[1], None, 1, Padding::Same));
    assert!(out.data().iter().all(|&v| v == 0.0));

    let k = random(&mut rng, &[1, 1, 3, 3]);
    let oracle = naive_conv(x.data(), (1, 5, 5), k.data(), (1, 3, 3), (1, 1, 5, 5, 1));
    let out = eval(&[x, k], |g, v| g.conv2d(v[0], v[1], None, 1, Padding::Same));
    assert_eq!(out.shape(), &[1, 5, 5]);
    for (a, b) in out.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv2d_multichannel_strided_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = random(&mut rng, &[2, 7, 6]);
    let k = random(&mut rng, &[3, 2, 3, 2]);
    // same padding, stride 2: out = ceil(7/2)=4, ceil(6/2)=3
    // pads: rows (3*2+3-7)=2 -> top 1; cols (2*2+2-6)=0 -> left 0
    let oracle = naive_conv(x.data(), (2, 7, 6), k.data(), (3, 3, 2), (1, 0, 4, 3, 2));
    let out = eval(&[x.clone(), k.clone()], |g, v| g.conv2d(v[0], v[1], None, 2, Padding::Same));
    assert_eq!(out.shape(), &[3, 4, 3]);
    for (a, b) in out.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
    let oracle = naive_conv(x.data(), (2, 7, 6), k.data(), (3, 3, 2), (0, 0, 5, 5, 1));
    let out = eval(&[x, k], |g, v| g.conv2d(v[0], v[1], None, 1, Padding::Valid));
    assert_eq!(out.shape(), &[3, 5, 5]);
    for (a, b) in out.data().iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv2d_kernel_larger_than_input_is_rejected() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(vec![1, 2, 2]));
    let k = g.constant(Tensor::zeros(vec![1, 1, 3, 3]));
    assert!(matches!(
        g.conv2d(x, k, None, 1, Padding::Valid),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn max_pool_examples() {
    let x = t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let out = eval(&[x], |g, v| g.max_pool2d(v[0], 2, 2));
    assert_eq!(out.data(), &[4.0]);

    let c = Tensor::filled(vec![2, 4, 4], 0.7);
    let out = eval(&[c], |g, v| g.max_pool2d(v[0], 2, 1));
    assert_eq!(out.shape(), &[2, 3, 3]);
    assert!(out.data().iter().all(|&v| v == 0.7));

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[1, 4, 4]);
    let d = x.data().to_vec();
    let out = eval(&[x], |g, v| g.max_pool2d(v[0], 2, 2));
    for oy in 0..2 {
        for ox in 0..2 {
            let mut best = f64::NEG_INFINITY;
            for dy in 0..2 {
                for dx in 0..2 {
                    best = best.max(d[(oy * 2 + dy) * 4 + ox * 2 + dx]);
                }
            }
            assert_eq!(out.data()[oy * 2 + ox], best);
        }
    }
}

#[test]
fn max_pool_ties_route_to_first_position() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::filled(vec![1, 2, 2], 1.0), true);
    let p = g.max_pool2d(x, 2, 2).unwrap();
    let s = g.sum(p);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn max_pool_input_smaller_than_kernel_is_rejected() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(vec![1, 1, 3]));
    assert!(g.max_pool2d(x, 2, 2).is_err());
}

#[test]
fn softmax_examples() {
    let out = eval(&[t(&[2], &[0.0, 0.0])], |g, v| g.softmax(v[0], 0));
    assert_eq!(out.data(), &[0.5, 0.5]);
    let out = eval(&[t(&[2], &[1000.0, 1000.0])], |g, v| g.softmax(v[0], 0));
    assert_eq!(out.data(), &[0.5, 0.5]);

    let out = eval(&[t(&[3], &[1.0, 2.0, 3.0])], |g, v| g.softmax(v[0], 0));
    let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|x| x.exp()).sum();
    for (i, &y) in out.data().iter().enumerate() {
        assert!((y - ((i + 1) as f64).exp() / z).abs() < 1e-12);
    }
}

#[test]
fn masked_softmax_zeroes_dropped_columns() {
    let x = t(&[2, 3], &[0.3, 5.0, -1.0, 2.0, 2.0, 9.0]);
    let out = eval(&[x], |g, v| g.masked_softmax_rows(v[0], &[true, true, false]));
    assert_eq!(out.data()[2], 0.0);
    assert_eq!(out.data()[5], 0.0);
    assert!((out.data()[3] - 0.5).abs() < 1e-15);
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::zeros(vec![1, 2]));
    assert!(matches!(
        g.masked_softmax_rows(x, &[false, false]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn backward_examples() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]), true);
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap(), vec![1.0; 6]);

    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::scalar(3.0), true);
    let sq = g.mul(x, x).unwrap();
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap(), vec![6.0]);
    // a second call accumulates
    g.backward(sq).unwrap();
    assert_eq!(g.grad(x).unwrap(), vec![12.0]);
    g.zero_grad();
    assert!(g.grad(x).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.leaf(Tensor::zeros(vec![2]), true);
    let y = g.tanh(x);
    assert!(matches!(g.backward(y), Err(Error::Contract(_))));
}

#[test]
fn reused_tensor_sums_contributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[3, 3]);
    let report = check_inputs(&[x], 1e-4, |g, v| {
        let a = g.matmul(v[0], v[0])?;
        let b = g.tanh(v[0]);
        let c = g.mul(a, b)?;
        let d = g.add(c, v[0])?;
        Ok(g.sum(d))
    })
    .unwrap();
    assert!(report.passes(TOL64), "{report:?}");
}

fn assert_grad<F>(name: &str, inputs: &[Tensor<f64>], f: F)
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> crate::Result<Var>,
{
    let report = check_inputs(inputs, 1e-4, f).unwrap();
    assert!(report.passes(TOL64), "{name}: {report:?}");
    assert!(report.checked > 0);
}

/// Random weights for a weighted sum so each output element gets a distinct gradient.
fn weighted_sum(g: &mut Graph<'_, f64>, x: Var, seed: u64) -> crate::Result<Var> {
    let shape = g.shape(x).to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&mut rng, &shape);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

#[test]
fn every_op_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 2]);
    let c = random(&mut rng, &[5, 4]);
    let same = random(&mut rng, &[3, 4]);
    let row = random(&mut rng, &[4]);

    assert_grad("matmul", &[a.clone(), b.clone()], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        weighted_sum(g, y, 1)
    });
    assert_grad("matmul_nt", &[a.clone(), c.clone()], |g, v| {
        let y = g.matmul_nt(v[0], v[1])?;
        weighted_sum(g, y, 2)
    });
    assert_grad("transpose", std::slice::from_ref(&a), |g, v| {
        let y = g.transpose(v[0])?;
        weighted_sum(g, y, 3)
    });
    assert_grad("add/sub/mul", &[a.clone(), same.clone()], |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(v[0], v[1])?;
        let p = g.mul(s, d)?;
        weighted_sum(g, p, 4)
    });
    assert_grad("row broadcast", &[a.clone(), row.clone()], |g, v| {
        let s = g.add_row(v[0], v[1])?;
        let p = g.mul_row(s, v[1])?;
        weighted_sum(g, p, 5)
    });
    assert_grad("scale/add_scalar", std::slice::from_ref(&a), |g, v| {
        let s = g.scale(v[0], 2.5);
        let p = g.add_scalar(s, -0.3);
        let q = g.mul(p, p)?;
        weighted_sum(g, q, 6)
    });
    assert_grad("tanh/sigmoid/softplus", std::slice::from_ref(&a), |g, v| {
        let x = g.tanh(v[0]);
        let y = g.sigmoid(x);
        let z = g.softplus(v[0]);
        let w = g.add(y, z)?;
        weighted_sum(g, w, 7)
    });
    assert_grad("relu", std::slice::from_ref(&a), |g, v| {
        let y = g.relu(v[0]);
        weighted_sum(g, y, 8)
    });
    for axis in 0..2 {
        assert_grad("softmax", std::slice::from_ref(&a), move |g, v| {
            let y = g.softmax(v[0], axis)?;
            weighted_sum(g, y, 9)
        });
    }
    assert_grad("masked_softmax", std::slice::from_ref(&a), |g, v| {
        let y = g.masked_softmax_rows(v[0], &[true, false, true, true])?;
        weighted_sum(g, y, 10)
    });
    assert_grad("layer_norm", std::slice::from_ref(&a), |g, v| {
        let y = g.layer_norm(v[0], 1e-5);
        weighted_sum(g, y, 11)
    });
    for axis in 0..2 {
        assert_grad("concat", &[a.clone(), same.clone()], move |g, v| {
            let y = g.concat(&[v[0], v[1], v[0]], axis)?;
            weighted_sum(g, y, 12)
        });
    }
    assert_grad("reshape/rows", std::slice::from_ref(&a), |g, v| {
        let r = g.reshape(v[0], vec![2, 6])?;
        let y = g.rows(r, 1, 1)?;
        let z = g.rows(v[0], 0, 2)?;
        let s1 = weighted_sum(g, y, 13)?;
        let s2 = weighted_sum(g, z, 14)?;
        g.add(s1, s2)
    });
    assert_grad("mean", std::slice::from_ref(&a), |g, v| {
        let sq = g.mul(v[0], v[0])?;
        Ok(g.mean(sq))
    });
    assert_grad("embedding", std::slice::from_ref(&c), |g, v| {
        let y = g.embedding(v[0], &[0, 3, 3, 1], None)?;
        weighted_sum(g, y, 15)
    });
    let x = random(&mut rng, &[2, 5, 4]);
    let k = random(&mut rng, &[3, 2, 3, 3]);
    let bias = random(&mut rng, &[3]);
    for (stride, padding) in [(1, Padding::Same), (2, Padding::Same), (1, Padding::Valid)] {
        assert_grad("conv2d", &[x.clone(), k.clone(), bias.clone()], move |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), stride, padding)?;
            weighted_sum(g, y, 16)
        });
    }
    assert_grad("max_pool2d", std::slice::from_ref(&x), |g, v| {
        let y = g.max_pool2d(v[0], 2, 2)?;
        weighted_sum(g, y, 17)
    });
}

#[test]
fn embedding_padding_row_gets_no_gradient() {
    let mut store = ParamStore::<f64>::new();
    let id = store.add("emb", Tensor::filled(vec![4, 2], 0.5));
    let mut g = Graph::new(&store);
    let table = g.param(id);
    let e = g.embedding(table, &[0, 2, 2, 0], Some(0)).unwrap();
    let s = g.sum(e);
    g.backward(s).unwrap();
    let grads = g.param_gradients();
    match grads.get(id).unwrap() {
        GradBuf::Rows { rows, .. } => {
            assert_eq!(rows.keys().copied().collect::<Vec<_>>(), vec![2]);
            assert_eq!(rows[&2], vec![2.0, 2.0]);
        }
        other => panic!("expected row-sparse gradient, got {other:?}"),
    }
}

#[test]
fn parameter_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::new();
    let w = store.add("w", random(&mut rng, &[3, 2]));
    let e = store.add("e", random(&mut rng, &[5, 3]));
    let report = check_params(&store, 1e-4, None, |g| {
        let table = g.param(e);
        let x = g.embedding(table, &[1, 4, 1], Some(0))?;
        let wv = g.param(w);
        let h = g.matmul(x, wv)?;
        let y = g.tanh(h);
        let s = g.mul(y, y)?;
        Ok(g.sum(s))
    })
    .unwrap();
    assert!(report.passes(TOL64), "{report:?}");
}

#[test]
fn f32_gradients_agree_with_f64_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[4, 3]);
    let build = |g: &mut Graph<'_, f64>, v: &[Var]| -> crate::Result<Var> {
        let m = g.matmul(v[0], v[1])?;
        let s = g.softmax(m, 1)?;
        let t = g.tanh(s);
        Ok(g.sum(t))
    };
    let numeric = check_inputs(&[a.clone(), b.clone()], 1e-4, build).unwrap();
    assert!(numeric.passes(TOL64));

    let store = ParamStore::<f32>::new();
    let mut g = Graph::new(&store);
    let va = g.leaf(a.cast(), true);
    let vb = g.leaf(b.cast(), true);
    let m = g.matmul(va, vb).unwrap();
    let s = g.softmax(m, 1).unwrap();
    let tt = g.tanh(s);
    let loss = g.sum(tt);
    g.backward(loss).unwrap();

    let store64 = ParamStore::<f64>::new();
    let mut g64 = Graph::new(&store64);
    let va64 = g64.leaf(a, true);
    let vb64 = g64.leaf(b, true);
    let v = [va64, vb64];
    let loss64 = build(&mut g64, &v).unwrap();
    g64.backward(loss64).unwrap();

    for (v32, v64) in [(va, va64), (vb, vb64)] {
        for (x, y) in g.grad(v32).unwrap().iter().zip(g64.grad(v64).unwrap()) {
            let rel = (*x as f64 - y).abs() / y.abs().max(super::gradcheck::RELATIVE_FLOOR);
            assert!(rel < 1e-3, "{x} vs {y}");
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_normalised_and_shift_invariant(
        vals in prop::collection::vec(-50.0f64..50.0, 12),
        shift in -100.0f64..100.0,
    ) {
        let x = t(&[3, 4], &vals);
        let shifted = t(&[3, 4], &vals.iter().map(|v| v + shift).collect::<Vec<_>>());
        let y = eval(&[x], |g, v| g.softmax(v[0], 1));
        let z = eval(&[shifted], |g, v| g.softmax(v[0], 1));
        for row in y.data().chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|&p| p >= 0.0));
        }
        for (a, b) in y.data().iter().zip(z.data()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn matmul_is_associative(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 5]);
        let c = random(&mut rng, &[5, 2]);
        let left = eval(&[a.clone(), b.clone(), c.clone()], |g, v| {
            let ab = g.matmul(v[0], v[1])?;
            g.matmul(ab, v[2])
        });
        let right = eval(&[a, b, c], |g, v| {
            let bc = g.matmul(v[1], v[2])?;
            g.matmul(v[0], bc)
        });
        for (x, y) in left.data().iter().zip(right.data()) {
            prop_assert!((x - y).abs() <= 1e-8 * x.abs().max(y.abs()).max(1.0));
        }
    }
}
