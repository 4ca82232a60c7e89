use crate::error::{Error, Result};

fn check(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::arg(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::arg("no predictions to score"));
    }
    Ok(())
}

/// Overall accuracy.
pub fn war(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Mean per-class recall over the classes that occur in `labels`.
pub fn uar(preds: &[usize], labels: &[usize]) -> Result<f64> {
    check(preds, labels)?;
    let c = labels.iter().max().unwrap() + 1;
    let mut seen = vec![0usize; c];
    let mut hit = vec![0usize; c];
    for (&p, &l) in preds.iter().zip(labels) {
        seen[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    let (sum, n) = seen
        .iter()
        .zip(&hit)
        .filter(|(s, _)| **s > 0)
        .fold((0.0, 0usize), |(sum, n), (&s, &h)| {
            (sum + h as f64 / s as f64, n + 1)
        });
    Ok(sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::seeded_rng;
    use rand::Rng as _;

    #[test]
    fn hand_cases() {
        assert_eq!(war(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(uar(&[0, 1, 1, 1], &[0, 0, 1, 1]).unwrap(), 0.75);
        assert_eq!(war(&[0, 0, 0, 0], &[0, 0, 0, 1]).unwrap(), 0.75);
        assert_eq!(uar(&[0, 0, 0, 0], &[0, 0, 0, 1]).unwrap(), 0.5);
        assert_eq!(uar(&[2, 2], &[2, 2]).unwrap(), 1.0);
        assert_eq!(war(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(war(&[0], &[0, 1]), Err(Error::Argument(_))));
        assert!(matches!(uar(&[], &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn matches_confusion_matrix() {
        let mut rng = seeded_rng(9);
        for _ in 0..200 {
            let c = rng.random_range(2..6);
            let n = rng.random_range(1..40);
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            let mut cm = vec![vec![0usize; c]; c];
            for (&l, &p) in labels.iter().zip(&preds) {
                cm[l][p] += 1;
            }
            let diag: usize = (0..c).map(|k| cm[k][k]).sum();
            assert_eq!(war(&preds, &labels).unwrap(), diag as f64 / n as f64);
            let rows: Vec<f64> = (0..c)
                .filter(|&k| cm[k].iter().sum::<usize>() > 0)
                .map(|k| cm[k][k] as f64 / cm[k].iter().sum::<usize>() as f64)
                .collect();
            let expect = rows.iter().sum::<f64>() / rows.len() as f64;
            assert_eq!(uar(&preds, &labels).unwrap(), expect);
        }
    }
}
