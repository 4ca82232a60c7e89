//! Gaussian embeddings, their distance-based similarity and the contrastive
//! alignment loss on a toy batch.

use cmarr::alignment::{infonce_pair_loss, similarity, udcl_loss, wasserstein2, GaussianEmb};

fn emb(mu: &[f64], var: &[f64]) -> GaussianEmb {
    GaussianEmb::new(mu.to_vec(), var.to_vec()).unwrap()
}

fn main() -> cmarr::Result<()> {
    let a = emb(&[0.0, 0.0], &[1.0, 1.0]);
    let b = emb(&[3.0, 4.0], &[1.0, 1.0]);
    println!("distance {}", wasserstein2(&a, &b)?);
    println!("similarity at a = -1 {}", similarity(&a, &b, -1.0, 0.0)?);

    // Matched pairs sit close together; mismatched ones far apart.
    let s: Vec<_> = (0..4).map(|i| emb(&[i as f64, 0.0], &[1.0, 1.0])).collect();
    let v: Vec<_> = (0..4)
        .map(|i| emb(&[i as f64 + 0.1, 0.0], &[1.1, 1.0]))
        .collect();
    let t: Vec<_> = (0..4).map(|i| emb(&[i as f64, 0.1], &[1.0, 0.9])).collect();
    println!(
        "matched pair loss {:.6}",
        infonce_pair_loss(&s, &v, 0.07, -1.0, 0.0)?
    );
    let mut shuffled = v.clone();
    shuffled.rotate_left(1);
    println!(
        "shuffled pair loss {:.6}",
        infonce_pair_loss(&s, &shuffled, 0.07, -1.0, 0.0)?
    );
    println!(
        "three-modality loss {:.6}",
        udcl_loss(&s, &v, &t, 0.07, -1.0, 0.0)?
    );
    Ok(())
}
