//! Pushes random frames through a randomly initialized flow and back, and
//! reports the round-trip error and the latent negative log-likelihood.

use cmarr::flow::{flow_forward, flow_inverse, flow_nll, FlowModel};
use cmarr::numcore::{seeded_rng, ParamStore, Tensor};
use rand::Rng as _;

fn main() -> cmarr::Result<()> {
    let flow = FlowModel::new("flow", 8, 4, 16, 2.0)?;
    let mut params = ParamStore::default();
    let mut rng = seeded_rng(0);
    flow.init(&mut params, &mut rng);
    // Fresh flows are the identity; perturb every weight so the demo is not.
    for (_, value, _) in params.iter_with_grads_mut() {
        for v in value.data_mut() {
            *v += rng.random_range(-0.3..0.3);
        }
    }
    let x = Tensor::matrix(
        100,
        8,
        (0..800).map(|_| rng.random_range(-2.0..2.0)).collect(),
    )?;
    let (z, logdet) = flow_forward(&x, &flow, &params)?;
    let back = flow_inverse(&z, &flow, &params)?;
    println!("max round-trip error {:.3e}", back.max_abs_diff(&x));
    println!(
        "mean log-det {:.4}",
        logdet.iter().sum::<f64>() / logdet.len() as f64
    );
    println!("nll per frame {:.4}", flow_nll(&z, &logdet)?);
    Ok(())
}
