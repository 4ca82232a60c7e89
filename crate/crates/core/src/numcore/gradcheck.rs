//! Central finite-difference check of analytic gradients.

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Worst element of one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Max relative error per parameter tensor.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_param
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval<F>(params: &ParamStore, frozen: &[Tensor], loss_fn: &F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph<'_>) -> Result<Vec<Var>>,
{
    let mut g = Graph::with_frozen(params, frozen.to_vec());
    let losses = loss_fn(&mut g)?;
    let vals: Vec<f64> = losses.iter().map(|&l| g.scalar_value(l)).collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("loss evaluated to a non-finite value"));
    }
    Ok(vals)
}

/// Central difference formula used for the numeric side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(θ+ε) - f(θ-ε)) / 2ε`, error O(ε²).
    ThreePoint,
    /// `(-f(θ+2ε) + 8f(θ+ε) - 8f(θ-ε) + f(θ-2ε)) / 12ε`, error O(ε⁴). Lets
    /// ε grow when the loss is large and some gradients are tiny, where
    /// roundoff would swamp the three-point formula.
    FivePoint,
}

/// Compares backprop gradients against `(f(θ+ε) - f(θ-ε)) / 2ε` for every
/// scalar of every parameter in `params`.
///
/// Values passed through `Graph::detach` are held at their unperturbed
/// values during the numeric evaluations.
pub fn grad_check<F>(params: &mut ParamStore, eps: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    grad_check_with(params, eps, Stencil::ThreePoint, loss_fn)
}

pub fn grad_check_with<F>(
    params: &mut ParamStore,
    eps: f64,
    stencil: Stencil,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    let mut reports = grad_check_many(params, eps, stencil, |g| Ok(vec![loss_fn(g)?]))?;
    Ok(reports.remove(0))
}

/// Checks several losses built by one graph at once, one report per loss.
/// Each perturbed graph is evaluated once for all of them.
pub fn grad_check_many<F>(
    params: &mut ParamStore,
    eps: f64,
    stencil: Stencil,
    loss_fn: F,
) -> Result<Vec<GradCheckReport>>
where
    F: Fn(&mut Graph<'_>) -> Result<Vec<Var>>,
{
    // analytic[loss][param] = flat gradient
    let (frozen, analytic): (Vec<Tensor>, Vec<Vec<Vec<f64>>>) = {
        let mut g = Graph::new(params);
        let losses = loss_fn(&mut g)?;
        if losses.iter().any(|&l| !g.scalar_value(l).is_finite()) {
            return Err(Error::numeric("loss evaluated to a non-finite value"));
        }
        let frozen = g.detached_values();
        let mut analytic = Vec::with_capacity(losses.len());
        for &loss in &losses {
            let grads = g.backward(loss)?;
            let touched: std::collections::BTreeMap<&str, Vec<f64>> = grads
                .params()
                .filter_map(|(k, t)| t.map(|t| (k, t.data().to_vec())))
                .collect();
            analytic.push(
                params
                    .iter()
                    .map(|(name, v)| {
                        touched
                            .get(name)
                            .cloned()
                            .unwrap_or_else(|| vec![0.0; v.len()])
                    })
                    .collect(),
            );
        }
        (frozen, analytic)
    };
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut per_loss: Vec<Vec<ParamCheck>> = vec![Vec::with_capacity(names.len()); analytic.len()];

    for (p, name) in names.iter().enumerate() {
        let mut worst: Vec<ParamCheck> = (0..analytic.len())
            .map(|_| ParamCheck {
                name: name.clone(),
                max_rel_error: 0.0,
                index: 0,
                analytic: 0.0,
                numeric: 0.0,
            })
            .collect();
        let size = params.get(name).unwrap().len();
        for i in 0..size {
            let orig = params.get(name).unwrap().data()[i];
            let mut at = |k: f64| {
                params.get_mut(name).unwrap().data_mut()[i] = orig + k * eps;
                eval(params, &frozen, &loss_fn)
            };
            let numeric = (|| {
                Ok::<Vec<f64>, Error>(match stencil {
                    Stencil::ThreePoint => {
                        let (p1, m1) = (at(1.0)?, at(-1.0)?);
                        p1.iter()
                            .zip(&m1)
                            .map(|(a, b)| (a - b) / (2.0 * eps))
                            .collect()
                    }
                    Stencil::FivePoint => {
                        let (m2, p2, p1, m1) = (at(-2.0)?, at(2.0)?, at(1.0)?, at(-1.0)?);
                        (0..p1.len())
                            .map(|j| ((m2[j] - p2[j]) + 8.0 * (p1[j] - m1[j])) / (12.0 * eps))
                            .collect()
                    }
                })
            })();
            params.get_mut(name).unwrap().data_mut()[i] = orig;
            let numeric = numeric?;
            for (l, w) in worst.iter_mut().enumerate() {
                let ai = analytic[l][p][i];
                let e = relative_error(ai, numeric[l]);
                if e > w.max_rel_error {
                    *w = ParamCheck {
                        name: name.clone(),
                        max_rel_error: e,
                        index: i,
                        analytic: ai,
                        numeric: numeric[l],
                    };
                }
            }
        }
        for (l, w) in worst.into_iter().enumerate() {
            per_loss[l].push(w);
        }
    }
    Ok(per_loss
        .into_iter()
        .map(|per_param| GradCheckReport { per_param })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;

    #[test]
    fn quadratic_is_exact() {
        let mut ps = ParamStore::default();
        ps.insert("theta", Tensor::scalar(3.0));
        let report = grad_check(&mut ps, 1e-4, |g| {
            let t = g.param("theta")?;
            Ok(g.square(t))
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-8, "{report:?}");
        assert_eq!(ps.get("theta").unwrap().item(), 3.0);
    }

    #[test]
    fn five_point_is_exact_on_quartics() {
        let mut ps = ParamStore::default();
        ps.insert("theta", Tensor::scalar(0.7));
        let quartic = |g: &mut Graph<'_>| {
            let t = g.param("theta")?;
            let t2 = g.square(t);
            Ok(g.square(t2))
        };
        let three = grad_check(&mut ps, 1e-2, quartic).unwrap();
        let five = grad_check_with(&mut ps, 1e-2, Stencil::FivePoint, quartic).unwrap();
        assert!(three.max_rel_error() > 1e-5);
        assert!(five.max_rel_error() < 1e-12, "{five:?}");
    }

    #[test]
    fn detached_values_stay_fixed() {
        // d/dθ [θ · sg(θ)] is sg(θ) = θ, not the 2θ of θ².
        let mut ps = ParamStore::default();
        ps.insert("theta", Tensor::row(&[1.5, -0.5]));
        let report = grad_check(&mut ps, 1e-5, |g| {
            let t = g.param("theta")?;
            let c = g.detach(t);
            let p = g.mul(t, c)?;
            Ok(g.sum(p))
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
    }

    #[test]
    fn many_matches_one_at_a_time() {
        let mut ps = ParamStore::default();
        ps.insert("a", Tensor::row(&[0.3, -1.2, 0.8]));
        ps.insert("b", Tensor::scalar(0.5));
        let build = |g: &mut Graph<'_>| {
            let a = g.param("a")?;
            let b = g.param("b")?;
            let sq = g.square(a);
            let s = g.sum(sq);
            let ab = g.mul_scalar_var(a, b)?;
            let e = g.exp(ab);
            let t = g.sum(e);
            Ok(vec![s, t])
        };
        let many = grad_check_many(&mut ps, 1e-4, Stencil::FivePoint, build).unwrap();
        for (k, report) in many.iter().enumerate() {
            let one =
                grad_check_with(&mut ps, 1e-4, Stencil::FivePoint, |g| Ok(build(g)?[k])).unwrap();
            assert_eq!(report.per_param, one.per_param);
        }
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut ps = ParamStore::default();
        ps.insert("theta", Tensor::row(&[1.0, -2.0]));
        let report = grad_check(&mut ps, 1e-5, |g| Ok(g.scalar(4.0))).unwrap();
        assert_eq!(report.max_rel_error(), 0.0);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        let mut ps = ParamStore::default();
        ps.insert("theta", Tensor::scalar(0.0));
        let err = grad_check(&mut ps, 1e-5, |g| {
            let t = g.param("theta")?;
            Ok(g.recip(t))
        });
        assert!(matches!(err, Err(Error::Numeric(_))));
    }
}
