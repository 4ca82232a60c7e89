//! Finite-difference check of the full training objective on a tiny
//! model and a four-instance batch.

use cmarr::data::{generate_synthetic, ModalityMask};
use cmarr::numcore::Var;
use cmarr::numcore::{grad_check_many, seeded_rng, Stencil};
use cmarr::trainer::{BatchGraph, Config, Model};
use rand::Rng as _;

fn main() -> cmarr::Result<()> {
    let mut cfg = Config::default();
    for (k, v) in [
        ("width", "8"),
        ("emb_dim", "4"),
        ("latent_dim", "4"),
        ("frames", "4"),
        ("flow_layers", "2"),
        ("flow_hidden", "8"),
        ("refine_blocks", "1"),
        ("n_per_class", "2"),
        ("dim_s", "6"),
        ("dim_v", "6"),
        ("dim_t", "6"),
        ("len_s", "5"),
        ("len_v", "5"),
        ("len_t", "5"),
    ] {
        cfg.set(k, v)?;
    }
    let data = generate_synthetic(&cfg.synth, 0)?;
    let model = Model::new(&cfg.train, data.dims, data.num_classes())?;
    let mut params = model.init(0);
    // Move off the identity initialization, where zero output layers give
    // exactly-zero gradients upstream.
    let mut rng = seeded_rng(1);
    for (_, value, _) in params.iter_with_grads_mut() {
        for v in value.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let batch: Vec<_> = [0, 1, 4, 5].iter().map(|&i| &data.instances[i]).collect();
    let masks = [
        ModalityMask::FULL,
        ModalityMask::MISSING_CONDITIONS[0],
        ModalityMask::MISSING_CONDITIONS[3],
        ModalityMask::MISSING_CONDITIONS[5],
    ];
    let w = cfg.train.weights();
    let eps: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-3);
    let stencil = match std::env::args().nth(2).as_deref() {
        Some("3") => Stencil::ThreePoint,
        _ => Stencil::FivePoint,
    };
    let parts: [(&str, fn(&BatchGraph) -> Option<Var>); 6] = [
        ("udcl", |b| b.udcl),
        ("spcl", |b| b.spcl),
        ("rec", |b| b.rec),
        ("cls", |b| Some(b.cls)),
        ("nll", |b| b.nll),
        ("total", |b| Some(b.total)),
    ];
    let reports = grad_check_many(&mut params, eps, stencil, |g| {
        let bg = model.batch_graph(g, &batch, &masks, &w)?;
        Ok(parts
            .iter()
            .map(|(_, pick)| pick(&bg).expect("component not built"))
            .collect())
    })?;
    for ((name, _), report) in parts.iter().zip(&reports) {
        if let Some(worst) = report.worst() {
            println!(
                "{name}: worst {} [{}] relative error {:.2e} (analytic {:.6e}, numeric {:.6e})",
                worst.name, worst.index, worst.max_rel_error, worst.analytic, worst.numeric
            );
        }
    }
    Ok(())
}
