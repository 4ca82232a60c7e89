use super::*;
use crate::numcore::{grad_check, Rng};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

fn randomize(store: &mut ParamStore, rng: &mut Rng, mag: f64) {
    if mag == 0.0 {
        return;
    }
    for (_, v, _) in store.iter_with_grads_mut() {
        for x in v.data_mut() {
            *x += rng.random_range(-mag..mag);
        }
    }
}

fn random_mat(rng: &mut Rng, r: usize, c: usize, mag: f64) -> Tensor {
    Tensor::matrix(
        r,
        c,
        (0..r * c).map(|_| rng.random_range(-mag..mag)).collect(),
    )
    .unwrap()
}

fn flow(dim: usize, layers: usize, seed: u64, mag: f64) -> (FlowModel, ParamStore) {
    let f = FlowModel::new("flow.x", dim, layers, 8, 2.0).unwrap();
    let mut store = ParamStore::default();
    let mut rng = seeded_rng(seed);
    f.init(&mut store, &mut rng);
    randomize(&mut store, &mut rng, mag);
    (f, store)
}

/// `ln |det A|` by Gaussian elimination with partial pivoting.
fn log_abs_det(mut a: Vec<Vec<f64>>) -> f64 {
    let n = a.len();
    let mut acc = 0.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        acc += p.abs().ln();
        for r in col + 1..n {
            let f = a[r][col] / p;
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
        }
    }
    acc
}

fn numeric_jacobian(f: &FlowModel, store: &ParamStore, x: &[f64]) -> Vec<Vec<f64>> {
    numeric_jacobian_h(f, store, x, 1e-4)
}

fn numeric_jacobian_h(f: &FlowModel, store: &ParamStore, x: &[f64], h: f64) -> Vec<Vec<f64>> {
    // Five-point stencil.
    let d = x.len();
    let eval = |j: usize, step: f64| {
        let mut v = x.to_vec();
        v[j] += step;
        flow_forward(&Tensor::row(&v), f, store)
            .unwrap()
            .0
            .data()
            .to_vec()
    };
    let mut jac = vec![vec![0.0; d]; d];
    for j in 0..d {
        let (p2, p1, m1, m2) = (eval(j, 2.0 * h), eval(j, h), eval(j, -h), eval(j, -2.0 * h));
        for i in 0..d {
            jac[i][j] = (-p2[i] + 8.0 * p1[i] - 8.0 * m1[i] + m2[i]) / (12.0 * h);
        }
    }
    jac
}

#[test]
fn odd_width_is_a_config_error() {
    assert!(matches!(
        FlowModel::new("f", 5, 2, 4, 2.0),
        Err(Error::Config(_))
    ));
}

#[test]
fn fresh_flow_is_identity() {
    let (f, store) = flow(6, 4, 0, 0.0);
    let x = random_mat(&mut seeded_rng(1), 8, 6, 3.0);
    let (z, ld) = flow_forward(&x, &f, &store).unwrap();
    assert_eq!(z, x);
    assert!(ld.iter().all(|&v| v == 0.0));
    assert_eq!(flow_inverse(&x, &f, &store).unwrap(), x);
}

#[test]
fn two_sided_inverse_over_1000_frames() {
    for seed in 0..5 {
        let (f, store) = flow(16, 4, seed, 1.0);
        let mut rng = seeded_rng(seed + 50);
        let x = random_mat(&mut rng, 1000, 16, 3.0);
        let (z, _) = flow_forward(&x, &f, &store).unwrap();
        assert!(flow_inverse(&z, &f, &store).unwrap().max_abs_diff(&x) < 1e-6);
        let z2 = random_mat(&mut rng, 1000, 16, 3.0);
        let x2 = flow_inverse(&z2, &f, &store).unwrap();
        assert!(flow_forward(&x2, &f, &store).unwrap().0.max_abs_diff(&z2) < 1e-6);
    }
}

#[test]
fn logdet_matches_numeric_jacobian() {
    let mut worst = 0.0;
    for dim in [2, 4, 6] {
        for seed in 0..4 {
            let (f, store) = flow(dim, 4, seed, 1.0);
            let mut rng = seeded_rng(seed + 7);
            for _ in 0..5 {
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
                let (_, ld) = flow_forward(&Tensor::row(&x), &f, &store).unwrap();
                let oracle = log_abs_det(numeric_jacobian(&f, &store, &x));
                worst = f64::max(worst, (ld[0] - oracle).abs());
            }
        }
    }
    assert!(worst < 1e-5, "worst logdet gap {worst:e}");
}

#[test]
fn layers_compose() {
    let (f, store) = flow(4, 2, 3, 1.0);
    let x = random_mat(&mut seeded_rng(4), 5, 4, 2.0);
    let mut g = Graph::new(&store);
    let xv = g.constant(x.clone());
    let (z, ld) = f.forward(&mut g, xv).unwrap();
    let (y1, ld1) = f.layers[0].forward(&mut g, xv, f.s_max).unwrap();
    let y1 = g.gather_cols(y1, &f.perms[0]).unwrap();
    let (y2, ld2) = f.layers[1].forward(&mut g, y1, f.s_max).unwrap();
    let y2 = g.gather_cols(y2, &f.perms[1]).unwrap();
    assert_eq!(g.value(z), g.value(y2));
    let sum: Vec<f64> = g
        .value(ld1)
        .data()
        .iter()
        .zip(g.value(ld2).data())
        .map(|(a, b)| a + b)
        .collect();
    assert_eq!(g.value(ld).data(), &sum[..]);
}

#[test]
fn exploding_inverse_is_a_numeric_error() {
    let (f, store) = flow(4, 2, 0, 1.0);
    let z = Tensor::full(&[1, 4], 1e308);
    assert!(matches!(
        flow_inverse(&z, &f, &store),
        Err(Error::Numeric(_))
    ));
}

#[test]
fn transfer_examples() {
    let z = Tensor::row(&[0.5, -1.0]);
    let mut avail = BTreeMap::new();
    avail.insert(Modality::Speech, z.clone());
    avail.insert(Modality::Video, z.clone());
    assert_eq!(latent_transfer(&avail, Modality::Text).unwrap(), z);

    avail.insert(Modality::Speech, Tensor::row(&[2.0, 0.0]));
    avail.insert(Modality::Video, Tensor::row(&[0.0, 2.0]));
    assert_eq!(
        latent_transfer(&avail, Modality::Text).unwrap(),
        Tensor::row(&[1.0, 1.0])
    );

    let mut only_t = BTreeMap::new();
    only_t.insert(Modality::Text, z.clone());
    assert_eq!(latent_transfer(&only_t, Modality::Speech).unwrap(), z);
    assert!(matches!(
        latent_transfer(&only_t, Modality::Text),
        Err(Error::Argument(_))
    ));
    assert!(matches!(
        latent_transfer(&BTreeMap::new(), Modality::Text),
        Err(Error::Argument(_))
    ));
}

#[test]
fn refiner_identity_shape_and_gates() {
    let r = Refiner::new("refine.t", 6, 2);
    let mut store = ParamStore::default();
    let mut rng = seeded_rng(0);
    r.init(&mut store, &mut rng);
    let x = random_mat(&mut rng, 8, 6, 2.0);
    assert_eq!(refine_reconstruction(&x, &r, &store).unwrap(), x);

    // Every conv zeroed, everything else random: still the identity.
    randomize(&mut store, &mut rng, 1.0);
    for b in &r.blocks {
        b.conv1.init_zero(&mut store);
        b.conv2.init_zero(&mut store);
    }
    assert_eq!(refine_reconstruction(&x, &r, &store).unwrap(), x);

    randomize(&mut store, &mut rng, 1.0);
    for t in [1, 3, 11] {
        let x = random_mat(&mut rng, t, 6, 5.0);
        let y = refine_reconstruction(&x, &r, &store).unwrap();
        assert_eq!(y.dims(), (t, 6));
        let mut g = Graph::new(&store);
        let xv = g.constant(x);
        let gates = r.blocks[0].gates(&mut g, xv).unwrap();
        assert!(g.value(gates).data().iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn rec_loss_examples() {
    let x = random_mat(&mut seeded_rng(2), 2, 3, 1.0);
    assert_eq!(rec_loss(&x, &x).unwrap(), 0.0);
    assert_eq!(
        rec_loss(&Tensor::full(&[2, 3], 1.0), &Tensor::zeros(&[2, 3])).unwrap(),
        6.0
    );
    let y = random_mat(&mut seeded_rng(3), 2, 3, 1.0);
    let base = rec_loss(&x, &y).unwrap();
    let scaled: Vec<f64> = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| b + 3.0 * (a - b))
        .collect();
    let scaled = Tensor::matrix(2, 3, scaled).unwrap();
    assert!((rec_loss(&scaled, &y).unwrap() - 9.0 * base).abs() < 1e-12);
    assert!(matches!(
        rec_loss(&x, &Tensor::zeros(&[3, 2])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn nll_examples() {
    let l = flow_nll(&Tensor::zeros(&[1, 2]), &[0.0]).unwrap();
    assert!((l - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
    let z = random_mat(&mut seeded_rng(5), 4, 2, 1.0);
    let a = flow_nll(&z, &[0.1, 0.2, 0.3, 0.4]).unwrap();
    let b = flow_nll(&z, &[0.6, 0.7, 0.8, 0.9]).unwrap();
    assert!((a - b - 0.5).abs() < 1e-12);
}

#[test]
fn nll_of_standard_normal_matches_expectation() {
    let d = 4;
    let n = 100_000;
    let mut rng = seeded_rng(6);
    let data: Vec<f64> = (0..n * d)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let x = Tensor::matrix(n, d, data).unwrap();
    let (f, store) = flow(d, 2, 0, 0.0);
    let (z, ld) = flow_forward(&x, &f, &store).unwrap();
    let l = flow_nll(&z, &ld).unwrap();
    let expect = d as f64 / 2.0 * (1.0 + (2.0 * std::f64::consts::PI).ln());
    assert!((l - expect).abs() / expect < 0.02, "{l} vs {expect}");
}

#[test]
fn projection_contracts() {
    assert_eq!(resample_matrix(8, 8).unwrap(), Tensor::identity(8));
    let r = resample_matrix(3, 5).unwrap();
    let y: Vec<f64> = (0..5)
        .map(|i| {
            r.row_slice(i)
                .iter()
                .zip([0.0, 1.0, 2.0])
                .map(|(w, v)| w * v)
                .sum()
        })
        .collect();
    assert_eq!(y, [0.0, 0.5, 1.0, 1.5, 2.0]);

    let align = Alignment::new([5, 4, 6], 6, 4, 2).unwrap();
    let proj = Projection::new(6, 6, 8).unwrap();
    let mut store = ParamStore::default();
    let mut rng = seeded_rng(0);
    align.init(&mut store, &mut rng);
    proj.init(&mut store, &mut rng);
    for t in [8, 10, 12] {
        let x = random_mat(&mut rng, t, 5, 1.0);
        let p = project_modality(&x, Modality::Speech, &align, &proj, &store).unwrap();
        assert_eq!(p.dims(), (8, 6));
    }

    proj.convs[1].init_identity(&mut store).unwrap();
    let h = random_mat(&mut rng, 8, 6, 1.0);
    let mut g = Graph::new(&store);
    let hv = g.constant(h.clone());
    let out = proj.forward(&mut g, Modality::Video, hv).unwrap();
    for r in 0..8 {
        let row = h.row_slice(r);
        let mean = row.iter().sum::<f64>() / 6.0;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 6.0;
        for (c, v) in row.iter().enumerate() {
            let expect = (v - mean) / (var + 1e-5).sqrt();
            assert!((g.value(out).get(r, c) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn rec_loss_grad_check_through_inverse_and_refiner() {
    for seed in 0..3 {
        let f = FlowModel::new("flow.t", 4, 2, 6, 2.0).unwrap();
        let r = Refiner::new("refine.t", 4, 2);
        let mut store = ParamStore::default();
        let mut rng = seeded_rng(seed);
        f.init(&mut store, &mut rng);
        r.init(&mut store, &mut rng);
        randomize(&mut store, &mut rng, 0.5);
        let z = random_mat(&mut rng, 5, 4, 1.0);
        let target = random_mat(&mut rng, 5, 4, 1.0);
        let report = grad_check(&mut store, 1e-5, |g| {
            let zv = g.constant(z.clone());
            let x = f.inverse(g, zv)?;
            let x = r.forward(g, x)?;
            let t = g.constant(target.clone());
            sq_error_graph(g, x, t)
        })
        .unwrap();
        assert!(
            report.max_rel_error() < 1e-4,
            "seed {seed}: {:?}",
            report.worst()
        );

        let report = grad_check(&mut store, 1e-5, |g| {
            let xv = g.constant(target.clone());
            let (z, ld) = f.forward(g, xv)?;
            flow_nll_graph(g, z, ld)
        })
        .unwrap();
        assert!(
            report.max_rel_error() < 1e-4,
            "seed {seed}: {:?}",
            report.worst()
        );
    }
}
