use proptest::prelude::*;
use rand::Rng as _;

use super::nn::{Conv1d, LayerNorm, Linear, Mlp, MultiHeadAttention};
use super::Rng;
use super::*;

fn rand_tensor(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..r * c).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::matrix(r, c, data).unwrap()
}

fn rand_weights(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[test]
fn softmax_examples() {
    assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    for p in softmax(&[1.0, 1.0, 1.0]).unwrap() {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
    let p = softmax(&[100.0, 0.0]).unwrap();
    assert!((p[0] - 1.0).abs() < 1e-15);
    assert!((p[1] - (-100.0f64).exp()).abs() < 1e-55);
    assert!(p[1] > 3.7e-44 && p[1] < 3.8e-44);
    assert!(matches!(softmax(&[]), Err(Error::Argument(_))));
}

proptest! {
    #[test]
    fn softmax_sums_to_one(v in prop::collection::vec(-1e4f64..1e4, 1..32)) {
        let p = softmax(&v).unwrap();
        let s: f64 = p.iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&x| x >= 0.0));
    }
}

/// Phi(1) by composite Simpson quadrature of the standard normal density.
fn phi_by_quadrature(x: f64) -> f64 {
    let n = 20_000;
    let h = x / n as f64;
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = pdf(0.0) + pdf(x);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

#[test]
fn gelu_examples() {
    let x = Tensor::row(&[0.0, 1.0, 30.0]);
    let y = gelu(&x).unwrap();
    assert_eq!(y.data()[0], 0.0);
    let oracle = phi_by_quadrature(1.0);
    assert!(
        (y.data()[1] - oracle).abs() < 1e-10,
        "{} vs {oracle}",
        y.data()[1]
    );
    assert!((y.data()[2] - 30.0).abs() < 1e-12);
}

#[test]
fn attention_identical_keys_average_values() {
    let mut rng = seeded_rng(3);
    let attn = MultiHeadAttention::new("a", 8, 2).unwrap();
    let mut ps = ParamStore::default();
    attn.init(&mut ps, &mut rng);
    let q = rand_tensor(&mut rng, 3, 8, -1.0, 1.0);
    let key_row = rand_tensor(&mut rng, 1, 8, -1.0, 1.0);
    let k = Tensor::from_rows(&vec![key_row.data().to_vec(); 5]).unwrap();
    let v = rand_tensor(&mut rng, 5, 8, -1.0, 1.0);
    let out = multi_head_attention(&attn, &ps, &q, &k, &v).unwrap();
    assert_eq!(out.dims(), (3, 8));

    // Expected: o(v_proj(mean of V rows)), since the projections are affine.
    let mut g = Graph::new(&ps);
    let mean = g.constant(v.mean_rows());
    let vp = attn.v.forward(&mut g, mean).unwrap();
    let expect = attn.o.forward(&mut g, vp).unwrap();
    let expect = g.value(expect).clone();
    for r in 0..3 {
        for c in 0..8 {
            assert!((out.get(r, c) - expect.get(0, c)).abs() < 1e-10);
        }
    }
}

#[test]
fn attention_single_key_and_shapes() {
    let mut rng = seeded_rng(4);
    let attn = MultiHeadAttention::new("a", 8, 2).unwrap();
    let mut ps = ParamStore::default();
    attn.init(&mut ps, &mut rng);
    let q = rand_tensor(&mut rng, 4, 8, -1.0, 1.0);
    let k = rand_tensor(&mut rng, 1, 8, -1.0, 1.0);
    let v = rand_tensor(&mut rng, 1, 8, -1.0, 1.0);
    let out = multi_head_attention(&attn, &ps, &q, &k, &v).unwrap();
    let mut g = Graph::new(&ps);
    let vv = g.constant(v.clone());
    let vp = attn.v.forward(&mut g, vv).unwrap();
    let expect = attn.o.forward(&mut g, vp).unwrap();
    let expect = g.value(expect).clone();
    for r in 0..4 {
        for c in 0..8 {
            assert!((out.get(r, c) - expect.get(0, c)).abs() < 1e-12);
        }
    }

    let q = rand_tensor(&mut rng, 3, 8, -1.0, 1.0);
    let kv = rand_tensor(&mut rng, 5, 8, -1.0, 1.0);
    let out = multi_head_attention(&attn, &ps, &q, &kv, &kv).unwrap();
    assert_eq!(out.dims(), (3, 8));

    assert!(matches!(
        MultiHeadAttention::new("x", 8, 3),
        Err(Error::Shape(_))
    ));
    let short_v = rand_tensor(&mut rng, 4, 8, -1.0, 1.0);
    assert!(matches!(
        multi_head_attention(&attn, &ps, &q, &kv, &short_v),
        Err(Error::Shape(_))
    ));
}

#[test]
fn conv_identity_and_shift_semantics() {
    let conv = Conv1d::new("c", 3, 3);
    let mut ps = ParamStore::default();
    conv.init_identity(&mut ps).unwrap();
    let mut rng = seeded_rng(1);
    let x = rand_tensor(&mut rng, 5, 3, -1.0, 1.0);
    let mut g = Graph::new(&ps);
    let xv = g.constant(x.clone());
    let y = conv.forward(&mut g, xv).unwrap();
    assert_eq!(g.value(y), &x);
}

/// Builds a scalar loss from the listed random parameters, then gradient-checks it.
fn check_op<F>(seed: u64, shapes: &[(&str, usize, usize, f64, f64)], f: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[Var], &mut Rng) -> Var,
{
    let mut rng = seeded_rng(seed);
    let mut ps = ParamStore::default();
    for &(name, r, c, lo, hi) in shapes {
        ps.insert(name, rand_tensor(&mut rng, r, c, lo, hi));
    }
    let weight_seed: u64 = rng.random();
    let names: Vec<String> = shapes.iter().map(|s| s.0.to_string()).collect();
    let report = grad_check(&mut ps, 1e-5, |g| {
        let vars: Vec<Var> = names.iter().map(|n| g.param(n).unwrap()).collect();
        let mut r = seeded_rng(weight_seed);
        let out = f(g, &vars, &mut r);
        let w = rand_weights(&mut r, g.value(out).len());
        g.weighted_sum(out, w)
    })
    .unwrap();
    report.max_rel_error()
}

#[test]
fn every_op_passes_grad_check_on_random_shapes() {
    for seed in 0..20u64 {
        let mut srng = seeded_rng(1000 + seed);
        let r = srng.random_range(1..5usize);
        let c = srng.random_range(1..5usize);
        let k = srng.random_range(1..5usize);
        let mut worst: Vec<(&str, f64)> = Vec::new();
        let sq = |n| (n, r, c, -2.0, 2.0);
        worst.push((
            "matmul",
            check_op(
                seed,
                &[("a", r, k, -1.0, 1.0), ("b", k, c, -1.0, 1.0)],
                |g, v, _| g.matmul(v[0], v[1]).unwrap(),
            ),
        ));
        worst.push((
            "transpose",
            check_op(seed, &[sq("a")], |g, v, _| g.transpose(v[0])),
        ));
        worst.push((
            "add",
            check_op(seed, &[sq("a"), sq("b")], |g, v, _| {
                g.add(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "sub",
            check_op(seed, &[sq("a"), sq("b")], |g, v, _| {
                g.sub(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "mul",
            check_op(seed, &[sq("a"), sq("b")], |g, v, _| {
                g.mul(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "add_row",
            check_op(seed, &[sq("a"), ("b", 1, c, -1.0, 1.0)], |g, v, _| {
                g.add_row(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "mul_row",
            check_op(seed, &[sq("a"), ("b", 1, c, -1.0, 1.0)], |g, v, _| {
                g.mul_row(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "add_scalar_var",
            check_op(seed, &[sq("a"), ("s", 1, 1, -1.0, 1.0)], |g, v, _| {
                g.add_scalar_var(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "mul_scalar_var",
            check_op(seed, &[sq("a"), ("s", 1, 1, -1.0, 1.0)], |g, v, _| {
                g.mul_scalar_var(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "scale",
            check_op(seed, &[sq("a")], |g, v, _| g.scale(v[0], -1.7)),
        ));
        worst.push((
            "offset",
            check_op(seed, &[sq("a")], |g, v, _| g.offset(v[0], 0.3)),
        ));
        worst.push((
            "recip",
            check_op(seed, &[("a", r, c, 0.5, 2.0)], |g, v, _| g.recip(v[0])),
        ));
        worst.push(("gelu", check_op(seed, &[sq("a")], |g, v, _| g.gelu(v[0]))));
        worst.push(("tanh", check_op(seed, &[sq("a")], |g, v, _| g.tanh(v[0]))));
        worst.push(("exp", check_op(seed, &[sq("a")], |g, v, _| g.exp(v[0]))));
        worst.push((
            "sigmoid",
            check_op(seed, &[sq("a")], |g, v, _| g.sigmoid(v[0])),
        ));
        worst.push((
            "softplus",
            check_op(seed, &[sq("a")], |g, v, _| g.softplus(v[0])),
        ));
        worst.push((
            "square",
            check_op(seed, &[sq("a")], |g, v, _| g.square(v[0])),
        ));
        worst.push(("sum", check_op(seed, &[sq("a")], |g, v, _| g.sum(v[0]))));
        worst.push(("mean", check_op(seed, &[sq("a")], |g, v, _| g.mean(v[0]))));
        worst.push((
            "mean_rows",
            check_op(seed, &[sq("a")], |g, v, _| g.mean_rows(v[0])),
        ));
        worst.push((
            "row_sums",
            check_op(seed, &[sq("a")], |g, v, _| g.row_sums(v[0])),
        ));
        worst.push((
            "softmax_rows",
            check_op(seed, &[sq("a")], |g, v, _| g.softmax_rows(v[0])),
        ));
        worst.push((
            "log_softmax_rows",
            check_op(seed, &[sq("a")], |g, v, _| {
                g.log_softmax_rows(v[0], None).unwrap()
            }),
        ));
        worst.push((
            "log_softmax_masked",
            check_op(seed, &[("a", r, c + 1, -2.0, 2.0)], |g, v, rng| {
                let (rr, cc) = g.value(v[0]).dims();
                let mask: Vec<bool> = (0..rr * cc)
                    .map(|k| k % cc == 0 || rng.random_bool(0.6))
                    .collect();
                g.log_softmax_rows(v[0], Some(mask)).unwrap()
            }),
        ));
        worst.push((
            "layer_norm_rows",
            check_op(seed, &[("a", r, c + 1, -2.0, 2.0)], |g, v, _| {
                g.layer_norm_rows(v[0], 1e-5)
            }),
        ));
        worst.push((
            "slice_cols",
            check_op(seed, &[("a", r, c + 2, -2.0, 2.0)], |g, v, _| {
                g.slice_cols(v[0], 1, c).unwrap()
            }),
        ));
        worst.push((
            "concat_cols",
            check_op(seed, &[sq("a"), ("b", r, k, -1.0, 1.0)], |g, v, _| {
                g.concat_cols(&[v[0], v[1], v[0]]).unwrap()
            }),
        ));
        worst.push((
            "concat_rows",
            check_op(seed, &[sq("a"), ("b", k, c, -1.0, 1.0)], |g, v, _| {
                g.concat_rows(&[v[0], v[1]]).unwrap()
            }),
        ));
        worst.push((
            "gather_cols",
            check_op(seed, &[sq("a")], |g, v, rng| {
                let cc = g.value(v[0]).cols();
                let idx: Vec<usize> = (0..cc + 2).map(|_| rng.random_range(0..cc)).collect();
                g.gather_cols(v[0], &idx).unwrap()
            }),
        ));
        worst.push((
            "shift_rows",
            check_op(seed, &[sq("a")], |g, v, _| {
                let a = g.shift_rows(v[0], 1);
                let b = g.shift_rows(v[0], -1);
                g.concat_cols(&[a, b]).unwrap()
            }),
        ));
        worst.push((
            "sq_dist",
            check_op(seed, &[sq("a"), ("b", k, c, -1.0, 1.0)], |g, v, _| {
                g.sq_dist(v[0], v[1]).unwrap()
            }),
        ));
        worst.push((
            "normalize_rows",
            check_op(seed, &[sq("a")], |g, v, _| g.normalize_rows(v[0])),
        ));
        worst.push((
            "pick",
            check_op(seed, &[sq("a")], |g, v, rng| {
                let (rr, cc) = g.value(v[0]).dims();
                let idx: Vec<usize> = (0..rr).map(|_| rng.random_range(0..cc)).collect();
                g.pick(v[0], &idx).unwrap()
            }),
        ));
        for (name, err) in worst {
            assert!(err < 1e-4, "seed {seed}: {name} rel error {err:e}");
        }
    }
}

#[test]
fn layers_pass_grad_check() {
    for seed in 0..20u64 {
        let mut rng = seeded_rng(seed);
        let mut ps = ParamStore::default();
        let lin = Linear::new("lin", 4, 3);
        let mlp = Mlp::new("mlp", 3, 5, 4);
        let ln = LayerNorm::new("ln", 4);
        let conv = Conv1d::new("conv", 4, 4);
        let attn = MultiHeadAttention::new("attn", 4, 2).unwrap();
        lin.init(&mut ps, &mut rng);
        mlp.init(&mut ps, &mut rng);
        ln.init(&mut ps);
        conv.init(&mut ps, &mut rng);
        attn.init(&mut ps, &mut rng);
        let t = rng.random_range(1..6usize);
        let x = rand_tensor(&mut rng, t, 4, -1.0, 1.0);
        let kv = rand_tensor(&mut rng, t + 1, 4, -1.0, 1.0);
        let w = rand_weights(&mut rng, t * 4);
        let report = grad_check(&mut ps, 1e-5, |g| {
            let xv = g.constant(x.clone());
            let h = lin.forward(g, xv)?;
            let h = mlp.forward(g, h)?;
            let h = ln.forward(g, h)?;
            let h = conv.forward(g, h)?;
            let kvv = g.constant(kv.clone());
            let h = attn.forward(g, h, kvv, kvv)?;
            g.weighted_sum(h, w.clone())
        })
        .unwrap();
        assert!(
            report.max_rel_error() < 1e-4,
            "seed {seed}: {:?}",
            report.worst()
        );
    }
}

#[test]
fn graph_ops_are_bitwise_deterministic() {
    let run = || {
        let mut rng = seeded_rng(9);
        let attn = MultiHeadAttention::new("a", 8, 4).unwrap();
        let mut ps = ParamStore::default();
        attn.init(&mut ps, &mut rng);
        let q = rand_tensor(&mut rng, 6, 8, -1.0, 1.0);
        let mut g = Graph::new(&ps);
        let qv = g.constant(q);
        let out = attn.forward(&mut g, qv, qv, qv).unwrap();
        let loss = g.sum(out);
        let grads = g.backward(loss).unwrap();
        let mut ps2 = ps.clone();
        ps2.accumulate(&grads).unwrap();
        (g.value(out).clone(), ps2)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    for name in pa.names() {
        assert_eq!(pa.grad(name).unwrap(), pb.grad(name).unwrap());
    }
}

#[test]
fn unknown_param_is_config_error() {
    let ps = ParamStore::default();
    let mut g = Graph::new(&ps);
    assert!(matches!(g.param("nope"), Err(Error::Config(_))));
}
