use rand::{Rng as _, SeedableRng};
use rand_distr::StandardNormal;

use super::*;
use crate::rng::Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn randn(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::matrix(rows, cols, data).unwrap()
}

fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn probe(g: &mut Graph, y: Var, seed: u64) -> Var {
    let t = g.value(y).clone();
    let w = randn(t.rows(), t.cols(), &mut rng(seed ^ 0xabc));
    let w = g.constant(w);
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn check(inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> crate::Result<Var>) {
    let r = gradcheck(inputs, H, build).unwrap();
    assert!(r.checked > 0);
    assert!(r.max_rel_err < TOL, "max rel err {}", r.max_rel_err);
}

#[test]
fn sigmoid_at_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(0.0));
    let y = g.sigmoid(x);
    assert_eq!(g.value(y).item(), 0.5);
}

#[test]
fn sigmoid_times_v_gradient() {
    let mut g = Graph::new();
    let w = g.param(Tensor::row(vec![0.0, 0.0, 0.0]));
    let v = g.constant(Tensor::row(vec![1.0, -2.0, 4.0]));
    let s = g.sigmoid(w);
    let p = g.mul(s, v).unwrap();
    let root = g.sum(p);
    g.backward(root).unwrap();
    assert_eq!(g.grad(w).unwrap(), &[0.25, -0.5, 1.0]);
}

#[test]
fn sum_gradient_is_ones() {
    let mut g = Graph::new();
    let x = g.param(randn(3, 4, &mut rng(1)));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 1.0));
}

#[test]
fn backward_rejects_non_scalar_root() {
    let mut g = Graph::new();
    let x = g.param(randn(2, 2, &mut rng(1)));
    assert!(matches!(g.backward(x), Err(crate::Error::Shape { .. })));
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut g = Graph::new();
    let a = g.param(Tensor::zeros(&[2, 3]));
    let b = g.param(Tensor::zeros(&[2, 3]));
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
}

#[test]
fn layer_norm_of_constant_row_is_zero() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![3.5; 8]));
    let gm = g.constant(Tensor::full(&[1, 8], 1.0));
    let bt = g.constant(Tensor::zeros(&[1, 8]));
    let y = g.layer_norm(x, gm, bt).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv1d_hand_example() {
    // [1, 2, 3, 4] with kernel [1, 1], stride 2 -> [1+2, 3+4].
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(4, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let w = g.constant(Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap());
    let b = g.constant(Tensor::zeros(&[1, 1]));
    let y = g.conv1d(x, w, b, 2, 2).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 7.0]);
}

#[test]
fn conv1d_matches_direct_loops() {
    let mut r = rng(5);
    let (l, cin, cout, k, s) = (23, 3, 4, 5, 3);
    let x = randn(l, cin, &mut r);
    let w = randn(k * cin, cout, &mut r);
    let b = randn(1, cout, &mut r);
    let mut g = Graph::new();
    let (xv, wv, bv) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
    let y = g.conv1d(xv, wv, bv, k, s).unwrap();
    let lout = (l - k) / s + 1;
    assert_eq!(g.value(y).shape(), &[lout, cout]);
    for t in 0..lout {
        for o in 0..cout {
            let mut acc = b.at(0, o);
            for kk in 0..k {
                for c in 0..cin {
                    acc += x.at(t * s + kk, c) * w.at(kk * cin + c, o);
                }
            }
            assert!((g.value(y).at(t, o) - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn cosine_examples() {
    assert!((cosine(&[1.0, 0.0], &[1.0, 1.0]) - 0.5f64.sqrt()).abs() < 1e-12);
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    assert!((cosine(&[0.3, -2.0, 5.0], &[0.3, -2.0, 5.0]) - 1.0).abs() < 1e-15);
    // Zero vector: stabilized denominator, no NaN.
    assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
}

#[test]
fn bce_at_zero_logits_is_ln2() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.0; 7]));
    let l = g.bce_with_logits(x, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
    assert!((g.value(l).item() - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn bce_saturates_to_zero_and_stays_finite() {
    let t = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    let logits: Vec<f64> = t.iter().map(|&v| if v > 0.5 { 800.0 } else { -800.0 }).collect();
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(logits));
    let l = g.bce_with_logits(x, &t).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut g = Graph::new();
    let x = g.constant(randn(6, 9, &mut rng(3)).clone());
    let x = g.scale(x, 30.0);
    let y = g.softmax_rows(x);
    for r in 0..6 {
        let s: f64 = g.value(y).row_slice(r).iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gradcheck_elementwise_ops() {
    let mut r = rng(7);
    let a = randn(3, 4, &mut r);
    let b = randn(3, 4, &mut r);
    check(&[a.clone(), b.clone()], |g, v| {
        let s = g.add(v[0], v[1])?;
        let d = g.sub(s, v[1])?;
        let m = g.mul(d, v[1])?;
        let m = g.scale(m, 1.7);
        Ok(probe(g, m, 1))
    });
    for (i, f) in [
        (0, Graph::gelu as fn(&mut Graph, Var) -> Var),
        (1, Graph::sigmoid),
        (2, Graph::log_sigmoid),
        (3, Graph::relu),
        (4, Graph::abs),
    ] {
        check(std::slice::from_ref(&a), move |g, v| {
            let y = f(g, v[0]);
            Ok(probe(g, y, i))
        });
    }
}

#[test]
fn gradcheck_matmul_transpose_addrow() {
    let mut r = rng(8);
    let a = randn(3, 5, &mut r);
    let b = randn(5, 2, &mut r);
    let c = randn(1, 2, &mut r);
    check(&[a, b, c], |g, v| {
        let y = g.matmul(v[0], v[1])?;
        let y = g.add_row(y, v[2])?;
        let y = g.transpose(y);
        Ok(probe(g, y, 2))
    });
}

#[test]
fn gradcheck_conv1d() {
    let mut r = rng(9);
    let (cin, cout, k, s) = (2, 3, 4, 2);
    let x = randn(13, cin, &mut r);
    let w = randn(k * cin, cout, &mut r);
    let b = randn(1, cout, &mut r);
    check(&[x, w, b], |g, v| {
        let y = g.conv1d(v[0], v[1], v[2], k, s)?;
        Ok(probe(g, y, 3))
    });
}

#[test]
fn gradcheck_layer_norm_softmax_reductions() {
    let mut r = rng(10);
    let x = randn(4, 6, &mut r);
    let gm = randn(1, 6, &mut r);
    let bt = randn(1, 6, &mut r);
    check(&[x.clone(), gm, bt], |g, v| {
        let y = g.layer_norm(v[0], v[1], v[2])?;
        Ok(probe(g, y, 4))
    });
    check(std::slice::from_ref(&x), |g, v| {
        let y = g.softmax_rows(v[0]);
        Ok(probe(g, y, 5))
    });
    check(std::slice::from_ref(&x), |g, v| {
        let a = g.mean_rows(v[0]);
        let b = g.mean_cols(v[0]);
        let pa = probe(g, a, 6);
        let pb = probe(g, b, 7);
        let s = g.add(pa, pb)?;
        Ok(g.mean(s))
    });
    check(&[x], |g, v| {
        let a = g.slice_cols(v[0], 1, 4)?;
        let c = g.concat_cols(&[a, v[0], a])?;
        Ok(probe(g, c, 8))
    });
}

#[test]
fn gradcheck_cosine_rows() {
    let mut r = rng(11);
    let a = randn(5, 4, &mut r);
    let b = randn(5, 4, &mut r);
    check(&[a, b], |g, v| {
        let c = g.cosine_rows(v[0], v[1])?;
        let l = g.log_sigmoid(c);
        Ok(probe(g, l, 9))
    });
}

#[test]
fn gradcheck_attention() {
    let mut r = rng(12);
    let (t, d) = (5, 8);
    let q = randn(t, d, &mut r);
    let k = randn(t, d, &mut r);
    let v = randn(t, d, &mut r);
    check(&[q, k, v], |g, x| {
        let y = g.attention(x[0], x[1], x[2], 2)?;
        Ok(probe(g, y, 10))
    });
}

#[test]
fn attention_weights_are_distributions() {
    // With V = identity columns, each output row is that row's weight vector.
    let mut r = rng(13);
    let t = 6;
    let q = randn(t, t, &mut r);
    let k = randn(t, t, &mut r);
    let mut eye = vec![0.0; t * t];
    (0..t).for_each(|i| eye[i * t + i] = 1.0);
    let mut g = Graph::new();
    let (qv, kv) = (g.constant(q), g.constant(k));
    let vv = g.constant(Tensor::matrix(t, t, eye).unwrap());
    let y = g.attention(qv, kv, vv, 1).unwrap();
    for row in g.value(y).to_rows() {
        assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn gradcheck_mask_rows_and_losses() {
    let mut r = rng(14);
    let x = randn(4, 3, &mut r);
    let e = randn(1, 3, &mut r);
    check(&[x.clone(), e], |g, v| {
        let y = g.mask_rows(v[0], v[1], &[false, true, true, false])?;
        Ok(probe(g, y, 11))
    });
    let logits = randn(1, 7, &mut r);
    check(&[logits], |g, v| g.bce_with_logits(v[0], &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]));
    let logits = randn(4, 5, &mut r);
    check(&[logits], |g, v| g.cross_entropy(v[0], &[Some(1), None, Some(4), Some(0)]));
}

#[test]
fn cross_entropy_ignores_unselected_rows() {
    let mut g = Graph::new();
    let x = g.param(Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 9.0, -4.0, 2.0]).unwrap());
    let l = g.cross_entropy(x, &[Some(2), None]).unwrap();
    assert!((g.value(l).item() - 3f64.ln()).abs() < 1e-12);
    g.backward(l).unwrap();
    assert_eq!(&g.grad(x).unwrap()[3..], &[0.0, 0.0, 0.0]);
}

#[test]
fn diamond_graph_accumulates() {
    // y = a*b + sigmoid(a): `a` feeds two branches that rejoin.
    let mut r = rng(15);
    let a = randn(2, 3, &mut r);
    let b = randn(2, 3, &mut r);
    check(&[a.clone(), b.clone()], |g, v| {
        let p = g.mul(v[0], v[1])?;
        let s = g.sigmoid(v[0]);
        let y = g.add(p, s)?;
        let y = g.mul(y, y)?;
        Ok(g.sum(y))
    });
    let mut g = Graph::new();
    let x = g.param(a.clone());
    let y = g.add(x, x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(x).unwrap().iter().all(|&v| v == 2.0));
}

fn layer_inputs(ps: &ParamStore, x: Tensor) -> Vec<Tensor> {
    std::iter::once(x).chain(ps.iter().map(|p| p.value.clone())).collect()
}

#[test]
fn gradcheck_layers() {
    let mut r = rng(16);
    let (t, d) = (5, 8);

    let mut ps = ParamStore::new();
    let lin = Linear::new(&mut ps, "lin", d, 3, 1.0, &mut r).unwrap();
    check(&layer_inputs(&ps, randn(t, d, &mut r)), |g, v| {
        let b = Binding::from_vars(v[1..].to_vec());
        let y = lin.forward(g, &b, v[0])?;
        Ok(probe(g, y, 12))
    });

    let mut ps = ParamStore::new();
    let conv = Conv1d::new(&mut ps, "conv", 2, 3, 4, 2, &mut r).unwrap();
    check(&layer_inputs(&ps, randn(12, 2, &mut r)), |g, v| {
        let b = Binding::from_vars(v[1..].to_vec());
        let y = conv.forward(g, &b, v[0])?;
        let y = g.gelu(y);
        Ok(probe(g, y, 13))
    });

    let mut ps = ParamStore::new();
    let ln = LayerNorm::new(&mut ps, "ln", d).unwrap();
    check(&layer_inputs(&ps, randn(t, d, &mut r)), |g, v| {
        let b = Binding::from_vars(v[1..].to_vec());
        let y = ln.forward(g, &b, v[0])?;
        Ok(probe(g, y, 14))
    });

    let mut ps = ParamStore::new();
    let mha = MultiHeadAttention::new(&mut ps, "mha", d, 2, &mut r).unwrap();
    check(&layer_inputs(&ps, randn(t, d, &mut r)), |g, v| {
        let b = Binding::from_vars(v[1..].to_vec());
        let y = mha.forward(g, &b, v[0])?;
        Ok(probe(g, y, 15))
    });

    let mut ps = ParamStore::new();
    let block = TransformerBlock::new(&mut ps, "blk", d, 2, 12, &mut r).unwrap();
    check(&layer_inputs(&ps, randn(t, d, &mut r)), |g, v| {
        let b = Binding::from_vars(v[1..].to_vec());
        let y = block.forward(g, &b, v[0])?;
        Ok(probe(g, y, 16))
    });
}

#[test]
fn gradcheck_three_layer_mlp() {
    let mut r = rng(17);
    let mut ps = ParamStore::new();
    let l1 = Linear::new(&mut ps, "l1", 4, 6, 1.0, &mut r).unwrap();
    let l2 = Linear::new(&mut ps, "l2", 6, 5, 1.0, &mut r).unwrap();
    let l3 = Linear::new(&mut ps, "l3", 5, 3, 1.0, &mut r).unwrap();
    check(&layer_inputs(&ps, randn(3, 4, &mut r)), |g, v| {
        let b = Binding::from_vars(v[1..].to_vec());
        let h = l1.forward(g, &b, v[0])?;
        let h = g.gelu(h);
        let h = l2.forward(g, &b, h)?;
        let h = g.sigmoid(h);
        let y = l3.forward(g, &b, h)?;
        g.cross_entropy(y, &[Some(0), Some(2), Some(1)])
    });
}

#[test]
fn adam_first_step_is_minus_lr() {
    let mut ps = ParamStore::new();
    ps.add("w", Tensor::scalar(0.0)).unwrap();
    let mut opt = Adam::new(AdamConfig::with_lr(0.1), &ps);
    opt.step(&mut ps, &[vec![1.0]]).unwrap();
    assert!((ps.by_name("w").unwrap().value.item() + 0.1).abs() < 1e-6);
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let mut ps = ParamStore::new();
    ps.add_normal("w", 3, 3, 1.0, &mut rng(2)).unwrap();
    let before = ps.clone();
    let mut opt = Adam::new(AdamConfig::default(), &ps);
    opt.step(&mut ps, &[vec![0.0; 9]]).unwrap();
    assert_eq!(ps, before);
}

#[test]
fn adam_rejects_nan_with_parameter_name() {
    let mut ps = ParamStore::new();
    ps.add("a", Tensor::scalar(1.0)).unwrap();
    ps.add("b.w", Tensor::scalar(1.0)).unwrap();
    let before = ps.clone();
    let mut opt = Adam::new(AdamConfig::default(), &ps);
    let err = opt.step(&mut ps, &[vec![0.5], vec![f64::NAN]]).unwrap_err();
    match err {
        crate::Error::NonFinite { step, param } => {
            assert_eq!(step, 1);
            assert_eq!(param, "b.w");
        }
        other => panic!("unexpected {other}"),
    }
    assert_eq!(ps, before);
}

#[test]
fn training_trajectories_are_bit_identical() {
    let run = || {
        let mut r = rng(21);
        let mut ps = ParamStore::new();
        let lin = Linear::new(&mut ps, "lin", 4, 3, 1.0, &mut r).unwrap();
        let x = randn(6, 4, &mut r);
        let mut opt = Adam::new(AdamConfig::with_lr(0.05), &ps);
        for _ in 0..20 {
            let mut g = Graph::new();
            let b = ps.bind(&mut g, true);
            let xv = g.constant(x.clone());
            let y = lin.forward(&mut g, &b, xv).unwrap();
            let l = g.cross_entropy(y, &[Some(0), Some(1), Some(2), Some(0), Some(1), Some(2)]).unwrap();
            g.backward(l).unwrap();
            opt.step(&mut ps, &b.grads(&g)).unwrap();
        }
        Checkpoint::from_store("t", "", 0, serde_json::Value::Null, &ps).param_hash()
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let mut ps = ParamStore::new();
    ps.add_normal("a", 4, 5, 0.3, &mut rng(4)).unwrap();
    ps.add("b", Tensor::row(vec![1.0 / 3.0, -1e-300, 7e200])).unwrap();
    let ck = Checkpoint::from_store("student", "abc", 9, serde_json::json!({"k": 1}), &ps);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ck);
    assert_eq!(back.to_store().unwrap(), ps);
    assert_eq!(back.param_hash(), ck.param_hash());
}

#[test]
fn checkpoint_rejects_unknown_version() {
    let ps = ParamStore::new();
    let mut ck = Checkpoint::from_store("teacher", "", 0, serde_json::Value::Null, &ps);
    ck.version = 99;
    let err = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap_err();
    assert!(err.to_string().contains("version"));
}

#[test]
fn duplicate_parameter_names_are_rejected() {
    let mut ps = ParamStore::new();
    ps.add("x", Tensor::scalar(0.0)).unwrap();
    assert!(ps.add("x", Tensor::scalar(1.0)).is_err());
}

#[test]
fn frozen_binding_produces_no_gradients() {
    let mut ps = ParamStore::new();
    let lin = Linear::new(&mut ps, "lin", 3, 2, 1.0, &mut rng(3)).unwrap();
    let mut g = Graph::new();
    let b = ps.bind(&mut g, false);
    let x = g.param(randn(2, 3, &mut rng(4)));
    let y = lin.forward(&mut g, &b, x).unwrap();
    let s = g.sum(y);
    g.backward(s).unwrap();
    assert!(g.grad(b.var(lin.w)).is_none());
    assert!(g.grad(x).is_some());
}
