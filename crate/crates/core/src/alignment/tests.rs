use super::*;
use crate::numcore::{grad_check, seeded_rng, Rng};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng as _;

fn emb(mu: &[f64], var: &[f64]) -> GaussianEmb {
    GaussianEmb::new(mu.to_vec(), var.to_vec()).unwrap()
}

fn random_emb(rng: &mut Rng, d: usize) -> GaussianEmb {
    let mu = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let var = (0..d).map(|_| rng.random_range(0.1..3.0)).collect();
    GaussianEmb::new(mu, var).unwrap()
}

fn random_seq(rng: &mut Rng, t: usize, d: usize) -> Tensor {
    Tensor::matrix(
        t,
        d,
        (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

fn setup(seed: u64) -> (Alignment, ParamStore) {
    let align = Alignment::new([5, 4, 6], 8, 4, 2).unwrap();
    let mut store = ParamStore::default();
    align.init(&mut store, &mut seeded_rng(seed));
    (align, store)
}

#[test]
fn distance_examples() {
    let z = emb(&[0.0, 0.0], &[1.0, 1.0]);
    assert_eq!(wasserstein2(&z, &z).unwrap(), 0.0);
    assert_eq!(
        wasserstein2(&emb(&[3.0, 4.0], &[1.0, 1.0]), &z).unwrap(),
        25.0
    );
    assert_eq!(
        wasserstein2(&emb(&[0.0, 0.0], &[2.0, 2.0]), &z).unwrap(),
        2.0
    );
    assert!(matches!(
        wasserstein2(&z, &emb(&[0.0], &[1.0])),
        Err(Error::Shape(_))
    ));
}

#[test]
fn similarity_examples() {
    let z = emb(&[0.0, 0.0], &[1.0, 1.0]);
    let far = emb(&[3.0, 4.0], &[1.0, 1.0]);
    let near = emb(&[1.0, 0.0], &[1.0, 1.0]);
    assert_eq!(similarity(&z, &z, -1.0, 0.5).unwrap(), 0.5);
    assert_eq!(similarity(&far, &z, -1.0, 0.0).unwrap(), -25.0);
    assert!(similarity(&near, &z, -0.3, 2.0).unwrap() > similarity(&far, &z, -0.3, 2.0).unwrap());
}

proptest! {
    #[test]
    fn distance_is_a_symmetric_discrepancy(seed in 0u64..10_000, d in 1usize..8) {
        let mut rng = seeded_rng(seed);
        let (x, y) = (random_emb(&mut rng, d), random_emb(&mut rng, d));
        let dxy = wasserstein2(&x, &y).unwrap();
        prop_assert_eq!(dxy, wasserstein2(&y, &x).unwrap());
        prop_assert!(dxy > 0.0);
        prop_assert_eq!(wasserstein2(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn shift_leaves_infonce_unchanged(seed in 0u64..10_000, n in 2usize..6, shift in -5.0f64..5.0) {
        let mut rng = seeded_rng(seed);
        let x: Vec<_> = (0..n).map(|_| random_emb(&mut rng, 3)).collect();
        let y: Vec<_> = (0..n).map(|_| random_emb(&mut rng, 3)).collect();
        let base = infonce_pair_loss(&x, &y, 0.3, -0.7, 0.0).unwrap();
        let moved = infonce_pair_loss(&x, &y, 0.3, -0.7, shift).unwrap();
        prop_assert!((base - moved).abs() < 1e-10, "{base} vs {moved}");
    }
}

#[test]
fn infonce_examples() {
    let x = [emb(&[1.0], &[1.0])];
    assert_eq!(infonce_pair_loss(&x, &x, 0.07, -1.0, 0.0).unwrap(), 0.0);

    // Identical embeddings: every similarity equal.
    let same = vec![emb(&[1.0, 2.0], &[1.0, 1.0]); 2];
    let l = infonce_pair_loss(&same, &same, 0.07, -1.0, 0.3).unwrap();
    assert!((l - 2.0 * 2f64.ln()).abs() < 1e-10);

    // Matched pairs at distance 0, mismatched at 10 with a = -1, tau = 1.
    let p = emb(&[0.0], &[1.0]);
    let q = emb(&[10f64.sqrt()], &[1.0]);
    let l = infonce_pair_loss(&[p.clone(), q.clone()], &[p, q], 1.0, -1.0, 0.0).unwrap();
    let per = (1.0 + (-10f64).exp()).ln();
    assert!((l - 2.0 * per).abs() < 1e-15);
    assert!((l - 9.08e-5).abs() < 1e-7);

    assert!(matches!(
        infonce_pair_loss(&same, &same[..1], 1.0, -1.0, 0.0),
        Err(Error::Argument(_))
    ));
}

#[test]
fn udcl_is_the_sum_of_pair_losses() {
    let mut rng = seeded_rng(9);
    let batch = |rng: &mut Rng| (0..4).map(|_| random_emb(rng, 3)).collect::<Vec<_>>();
    let (s, v, t) = (batch(&mut rng), batch(&mut rng), batch(&mut rng));
    let (tau, a, b) = (0.2, -0.5, 0.1);
    let total = udcl_loss(&s, &v, &t, tau, a, b).unwrap();
    let parts = infonce_pair_loss(&s, &t, tau, a, b).unwrap()
        + infonce_pair_loss(&t, &v, tau, a, b).unwrap()
        + infonce_pair_loss(&s, &v, tau, a, b).unwrap();
    assert!((total - parts).abs() < 1e-12);

    let one = [emb(&[0.0], &[1.0])];
    assert_eq!(udcl_loss(&one, &one, &one, tau, a, b).unwrap(), 0.0);
}

#[test]
fn umc_shapes_and_positive_variance() {
    let (align, mut store) = setup(1);
    let mut rng = seeded_rng(2);
    for v in store.iter_with_grads_mut().map(|(_, v, _)| v) {
        for x in v.data_mut() {
            *x += rng.random_range(-3.0..3.0);
        }
    }
    for t in [1, 4, 13] {
        let e = umc_forward(&random_seq(&mut rng, t, 4), Modality::Video, &align, &store).unwrap();
        assert_eq!((e.mu.len(), e.var.len()), (4, 4));
        assert!(e.var.iter().all(|&v| v > 0.0));
    }
    let empty = Tensor::zeros(&[0, 5]);
    assert!(matches!(
        umc_forward(&empty, Modality::Speech, &align, &store),
        Err(Error::Argument(_))
    ));
}

#[test]
fn umc_ignores_frame_order() {
    let (align, store) = setup(3);
    let mut rng = seeded_rng(4);
    for _ in 0..10 {
        let x = random_seq(&mut rng, 7, 6);
        let mut order: Vec<usize> = (0..7).collect();
        order.shuffle(&mut rng);
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| x.row_slice(i).to_vec()).collect();
        let xp = Tensor::from_rows(&rows).unwrap();
        let a = umc_forward(&x, Modality::Text, &align, &store).unwrap();
        let b = umc_forward(&xp, Modality::Text, &align, &store).unwrap();
        for (p, q) in a.mu.iter().chain(&a.var).zip(b.mu.iter().chain(&b.var)) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}

#[test]
fn init_values_and_clamp() {
    let (align, mut store) = setup(0);
    let mut g = Graph::new(&store);
    let (tau, a, b) = align.scalars(&mut g).unwrap();
    assert_eq!(g.scalar_value(tau), 0.07);
    assert!((g.scalar_value(a) + 1.0).abs() < 1e-15);
    assert_eq!(g.scalar_value(b), 0.0);
    drop(g);
    store.get_mut(TAU).unwrap().data_mut()[0] = 3.0;
    clamp_tau(&mut store);
    assert_eq!(store.get(TAU).unwrap().item(), TAU_MAX);
    store.get_mut(TAU).unwrap().data_mut()[0] = -1.0;
    clamp_tau(&mut store);
    assert_eq!(store.get(TAU).unwrap().item(), TAU_MIN);
}

#[test]
fn udcl_passes_grad_check() {
    for seed in 0..3 {
        let (align, mut store) = setup(seed);
        store.get_mut(TAU).unwrap().data_mut()[0] = 0.3;
        let mut rng = seeded_rng(100 + seed);
        let dims = [5, 4, 6];
        let batch: Vec<[Tensor; 3]> = (0..4)
            .map(|_| Modality::ALL.map(|m| random_seq(&mut rng, 3 + m.index(), dims[m.index()])))
            .collect();
        let report = grad_check(&mut store, 1e-5, |g| {
            let mut embs = Vec::new();
            for m in Modality::ALL {
                let mut mus = Vec::new();
                let mut vars = Vec::new();
                for inst in &batch {
                    let x = g.constant(inst[m.index()].clone());
                    let h = align.adapt(g, m, x)?;
                    let (mu, lv) = align.umc(g, h)?;
                    mus.push(mu);
                    vars.push(g.exp(lv));
                }
                embs.push(GaussianBatch {
                    mu: g.concat_rows(&mus)?,
                    var: g.concat_rows(&vars)?,
                });
            }
            let (tau, a, b) = align.scalars(g)?;
            udcl_graph(g, &[embs[0], embs[1], embs[2]], tau, a, b)
        })
        .unwrap();
        assert!(
            report.max_rel_error() < 1e-4,
            "seed {seed}: {:?}",
            report.worst()
        );
    }
}
