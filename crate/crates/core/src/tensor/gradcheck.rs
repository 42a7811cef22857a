//! Central finite-difference checks of autodiff gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

/// Denominator floor of the relative error. Gradients that are exactly zero
/// (e.g. key biases under softmax) still show last-ulp noise of `f / 2h`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(REL_ERR_FLOOR)
}

fn scalar_value(g: &Graph, out: Var<'_>) -> Result<f64> {
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::invalid(format!("gradcheck needs a scalar function, got shape {:?}", v.shape())));
    }
    Ok(v.item())
}

/// Compares the autodiff gradient of scalar `f` at `x` against central
/// differences `(f(x+h) − f(x−h)) / 2h` and returns the largest
/// `|a − n| / max(REL_ERR_FLOOR, |a| + |n|)` over all elements.
pub fn finite_diff_gradcheck<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: for<'g> Fn(&'g Graph, Var<'g>) -> Result<Var<'g>>,
{
    let analytic = {
        let g = Graph::new();
        let xv = g.variable(x.clone());
        let out = f(&g, xv)?;
        scalar_value(&g, out)?;
        if !out.requires_grad() {
            // f ignores x entirely
            Tensor::zeros(x.shape())
        } else {
            g.backward(out)?;
            xv.grad().unwrap_or_else(|| Tensor::zeros(x.shape()))
        }
    };
    let eval = |t: Tensor| -> Result<f64> {
        let g = Graph::new();
        let xv = g.constant(t);
        let out = f(&g, xv)?;
        scalar_value(&g, out)
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(rel_err(analytic.data()[i], numeric));
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_err: f64,
    /// `name[index]` of the worst coordinate.
    pub worst: String,
    /// Analytic and numeric derivative at the worst coordinate.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

/// Finite-difference check of a scalar function of every trainable parameter
/// in `store`. With `coords_per_param = Some(k)`, at most `k` seeded-random
/// coordinates of each tensor are perturbed.
pub fn param_gradcheck<F>(
    f: F,
    store: &ParamStore,
    h: f64,
    coords_per_param: Option<usize>,
    seed: u64,
) -> Result<GradcheckReport>
where
    F: for<'g> Fn(&'g Graph, &ParamStore) -> Result<Var<'g>>,
{
    let grads = {
        let g = Graph::new();
        let out = f(&g, store)?;
        scalar_value(&g, out)?;
        g.backward(out)?;
        g.param_grads()
    };
    let eval = |s: &ParamStore| -> Result<f64> {
        let g = Graph::new();
        let out = f(&g, s)?;
        scalar_value(&g, out)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = store.clone();
    let mut report =
        GradcheckReport { max_rel_err: 0.0, worst: String::new(), worst_values: (0.0, 0.0), coords_checked: 0 };
    let names: Vec<String> = store.names().filter(|n| store.is_trainable(n)).map(str::to_string).collect();
    for name in names {
        let numel = store.get(&name).map(Tensor::numel).unwrap_or(0);
        let coords: Vec<usize> = match coords_per_param {
            Some(k) if k < numel => {
                let mut c = sample(&mut rng, numel, k).into_vec();
                c.sort_unstable();
                c
            }
            _ => (0..numel).collect(),
        };
        let analytic = grads.get(&name).cloned().unwrap_or_else(|| Tensor::zeros(store.get(&name).unwrap().shape()));
        for i in coords {
            let orig = store.get(&name).unwrap().data()[i];
            work.get_mut(&name).unwrap().data_mut()[i] = orig + h;
            let fp = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig - h;
            let fm = eval(&work)?;
            work.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (fp - fm) / (2.0 * h);
            let err = rel_err(analytic.data()[i], numeric);
            report.coords_checked += 1;
            if err > report.max_rel_err || report.worst.is_empty() {
                report.max_rel_err = err;
                report.worst = format!("{name}[{i}]");
                report.worst_values = (analytic.data()[i], numeric);
            }
        }
    }
    Ok(report)
}
