//! Finite-difference oracles: central-difference gradients and
//! Hessian-vector products from differences of gradients.

use alloc::vec::Vec;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::Mask;
use crate::model::{loss_and_gradient, Head, LayeredParams};

/// Vectors with a 2-norm below this are rejected as HVP directions.
pub const MIN_DIRECTION_NORM: f64 = 1e-12;

/// `(L(w + εe_j) − L(w − εe_j)) / 2ε` for every coordinate `j`.
pub fn finite_diff_gradient<F>(mut loss: F, point: &[f64], epsilon: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(alloc::format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut probe = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for j in 0..point.len() {
        probe[j] = point[j] + epsilon;
        let up = loss(&probe).map_err(|_| Error::OracleFailure { coordinate: j })?;
        probe[j] = point[j] - epsilon;
        let down = loss(&probe).map_err(|_| Error::OracleFailure { coordinate: j })?;
        probe[j] = point[j];
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::OracleFailure { coordinate: j });
        }
        grad.push((up - down) / (2.0 * epsilon));
    }
    Ok(grad)
}

/// Central-difference gradient of the masked network loss.
pub fn finite_diff_network_gradient(
    params: &LayeredParams,
    mask: &Mask,
    batch: &Dataset,
    head: Head,
    epsilon: f64,
) -> Result<Vec<f64>> {
    finite_diff_gradient(
        |flat| {
            let p = params.with_flat(flat)?;
            Ok(crate::model::forward_loss(&p, mask, batch, head)?.0)
        },
        &params.flatten(),
        epsilon,
    )
}

/// `(∇L(w + εv) − ∇L(w − εv)) / 2ε` for an arbitrary gradient function.
pub fn hvp_from_gradient<G>(
    mut gradient: G,
    point: &[f64],
    v: &[f64],
    epsilon: f64,
) -> Result<Vec<f64>>
where
    G: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    if point.len() != v.len() {
        return Err(Error::Alignment(alloc::format!(
            "direction has {} entries for {} parameters",
            v.len(),
            point.len()
        )));
    }
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Domain(alloc::format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if !(norm >= MIN_DIRECTION_NORM) {
        return Err(Error::Domain(alloc::format!(
            "direction norm {norm:e} is too small"
        )));
    }
    let plus: Vec<f64> = point.iter().zip(v).map(|(w, d)| w + epsilon * d).collect();
    let minus: Vec<f64> = point.iter().zip(v).map(|(w, d)| w - epsilon * d).collect();
    let moved = point
        .iter()
        .zip(v)
        .enumerate()
        .any(|(j, (w, d))| *d != 0.0 && (plus[j] != *w || minus[j] != *w));
    if !moved {
        return Err(Error::DegenerateStep { epsilon });
    }
    let g_plus = gradient(&plus)?;
    let g_minus = gradient(&minus)?;
    let out: Vec<f64> = g_plus
        .iter()
        .zip(&g_minus)
        .map(|(a, b)| (a - b) / (2.0 * epsilon))
        .collect();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("hessian-vector product"));
    }
    Ok(out)
}

/// Hessian of the masked batch loss applied to `v`, with `v` laid out like
/// the params.
pub fn hessian_vector_product(
    params: &LayeredParams,
    mask: &Mask,
    batch: &Dataset,
    v: &[Vec<f64>],
    epsilon: f64,
    head: Head,
) -> Result<Vec<Vec<f64>>> {
    let sizes = params.layer_sizes();
    if v.len() != sizes.len() || v.iter().zip(&sizes).any(|(a, &m)| a.len() != m) {
        return Err(Error::Alignment(
            "direction is not shaped like the params".into(),
        ));
    }
    let flat_v = v.concat();
    let hv = hvp_from_gradient(
        |flat| {
            let p = params.with_flat(flat)?;
            Ok(loss_and_gradient(&p, mask, batch, head)?.1.concat())
        },
        &params.flatten(),
        &flat_v,
        epsilon,
    )?;
    Ok(split_like(&hv, &sizes))
}

pub(crate) fn split_like(flat: &[f64], sizes: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut offset = 0;
    for &m in sizes {
        out.push(flat[offset..offset + m].to_vec());
        offset += m;
    }
    out
}

/// `max_j |a_j − b_j| / max(|a_j|, |b_j|, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
