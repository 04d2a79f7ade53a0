//! Brute-force references that share no code path with training.
//!
//! - [`finite_diff_grad`]: central differences for any scalar function.
//! - [`gradcheck`]: every agent loss recomputed with plain forward passes and
//!   differentiated numerically.
//! - [`tabular`]: exact soft policy evaluation on small discrete MDPs and the
//!   sequential sub-policy improvement step.
//! - [`brute_force_policy_target`]: exhaustive grid argmin.
//! - [`suite`]: the checks behind `cepo verify`.

pub mod gradcheck;
pub mod suite;
pub mod tabular;

use crate::error::{Error, Result};

pub use tabular::{
    sequential_subpolicy_improve, soft_policy_eval, soft_policy_eval_from, DiscretizedGaussianPolicy,
    Improvement, SoftValues, SubpolicyCandidates, TabularSoftMdp,
};

/// Central differences `(f(p + h·e_i) − f(p − h·e_i)) / 2h` per coordinate.
pub fn finite_diff_grad<F>(mut loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step must be positive, got {h}")));
    }
    let mut p = params.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let plus = loss(&p);
        p[i] = orig - h;
        let minus = loss(&p);
        p[i] = orig;
        if !(plus.is_finite() && minus.is_finite()) {
            return Err(Error::NonFinite(format!("loss at coordinate {i} under finite differences")));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Trapezoid integral over `a ∈ [−1, 1]` of the squashed Gaussian density
/// `N(atanh a; μ, σ) / (1 − a² + 1e-6)` on `points` evenly spaced nodes. The
/// density vanishes at `±1`.
pub fn squashed_density_integral(mu: f64, log_std: f64, points: usize) -> f64 {
    let sigma = log_std.exp();
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let h = 2.0 / (points - 1) as f64;
    let density = |a: f64| {
        if a.abs() >= 1.0 {
            return 0.0;
        }
        let z = (a.atanh() - mu) / sigma;
        norm * (-0.5 * z * z).exp() / (1.0 - a * a + 1e-6)
    };
    let inner: f64 = (1..points - 1).map(|i| density(-1.0 + h * i as f64)).sum();
    h * (inner + 0.5 * (density(-1.0) + density(1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridArgmin {
    pub point: Vec<f64>,
    /// Per-dimension grid index.
    pub index: Vec<usize>,
    pub value: f64,
}

pub const DEFAULT_GRID_POINTS: usize = 401;

/// Exhaustive minimum over a uniform grid with `points` per dimension on
/// `[low, high]` (1 or 2 dimensions). Ties go to the lowest flat index, with
/// the first dimension varying slowest. Non-finite values are skipped.
pub fn brute_force_policy_target<F>(mut objective: F, low: &[f64], high: &[f64], points: usize) -> Result<GridArgmin>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = low.len();
    if dim != high.len() || !(1..=2).contains(&dim) {
        return Err(Error::InvalidConfig("grid search supports 1 or 2 dimensions".into()));
    }
    if points < 2 {
        return Err(Error::InvalidConfig("grid needs at least two points per dimension".into()));
    }
    let coord = |d: usize, i: usize| low[d] + (high[d] - low[d]) * i as f64 / (points - 1) as f64;
    let total = points.pow(dim as u32);
    let mut best: Option<GridArgmin> = None;
    let mut x = vec![0.0; dim];
    for flat in 0..total {
        let index: Vec<usize> = if dim == 1 {
            vec![flat]
        } else {
            vec![flat / points, flat % points]
        };
        for d in 0..dim {
            x[d] = coord(d, index[d]);
        }
        let v = objective(&x);
        if v.is_finite() && best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(GridArgmin {
                point: x.clone(),
                index,
                value: v,
            });
        }
    }
    best.ok_or_else(|| Error::NonFinite("grid objective at every point".into()))
}
