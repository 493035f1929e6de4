//! Layerwise keep-ratio schedules.
//!
//! A schedule is built in two stages. First a real-valued retained count per
//! layer is planned: the output layer sits at 30%, hidden layers get
//! `α · raw(l) · m_l` with `α` chosen to spend the remaining budget, and any
//! hidden layer above ratio 1 is capped with its overflow pushed to the next
//! deeper layer. Overflow the output layer cannot hold goes back to the
//! deepest hidden layers with room. Then the plan is rounded by largest-remainder apportionment
//! so that the integer quotas sum to `round((1 − p) · Σ m_l)` exactly.

use alloc::format;
use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::{self, Mask};
use crate::model::{layer_sizes, ArchFamily, LayerSpec};

/// Keep-ratio of the output layer in every generated schedule.
pub const OUTPUT_KEEP_RATIO: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ScheduleKind {
    Smart,
    Balanced,
    Ascending,
    Linear,
    Cubic,
    Extracted,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 6] = [
        ScheduleKind::Smart,
        ScheduleKind::Balanced,
        ScheduleKind::Ascending,
        ScheduleKind::Linear,
        ScheduleKind::Cubic,
        ScheduleKind::Extracted,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Smart => "smart",
            ScheduleKind::Balanced => "balanced",
            ScheduleKind::Ascending => "ascending",
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cubic => "cubic",
            ScheduleKind::Extracted => "extracted",
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Schema(format!("unknown schedule kind {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KeepRatioSchedule {
    kind: ScheduleKind,
    sizes: Vec<usize>,
    planned: Vec<f64>,
    ratios: Vec<f64>,
    quotas: Vec<usize>,
    target_sparsity: f64,
}

impl KeepRatioSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Finalised ratios `quota_l / m_l`.
    pub fn ratios(&self) -> &[f64] {
        &self.ratios
    }

    /// Real-valued ratios before rounding to integer quotas.
    pub fn planned(&self) -> &[f64] {
        &self.planned
    }

    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    pub fn target_sparsity(&self) -> f64 {
        self.target_sparsity
    }

    pub fn retained(&self) -> usize {
        self.quotas.iter().sum()
    }

    fn finalize(
        kind: ScheduleKind,
        sizes: &[usize],
        retained: &[f64],
        total: usize,
        target_sparsity: f64,
    ) -> Result<Self> {
        let quotas = apportion(retained, sizes, total)?;
        let planned = retained
            .iter()
            .zip(sizes)
            .map(|(r, &m)| r / m as f64)
            .collect();
        let ratios = quotas
            .iter()
            .zip(sizes)
            .map(|(&q, &m)| q as f64 / m as f64)
            .collect();
        Ok(KeepRatioSchedule {
            kind,
            sizes: sizes.to_vec(),
            planned,
            ratios,
            quotas,
            target_sparsity,
        })
    }

    /// Schedule with the given per-layer ratios; the total is
    /// `round(Σ p_l · m_l)`.
    pub fn from_ratios(ratios: &[f64], sizes: &[usize]) -> Result<Self> {
        check_sizes(sizes)?;
        if ratios.len() != sizes.len() {
            return Err(Error::Alignment(format!(
                "{} ratios for {} layers",
                ratios.len(),
                sizes.len()
            )));
        }
        if let Some(bad) = ratios.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Domain(format!("keep ratio {bad} outside [0, 1]")));
        }
        let retained: Vec<f64> = ratios
            .iter()
            .zip(sizes)
            .map(|(r, &m)| r * m as f64)
            .collect();
        let n: usize = sizes.iter().sum();
        let total = (libm::round(retained.iter().sum::<f64>()) as usize).min(n);
        let sparsity = 1.0 - total as f64 / n as f64;
        KeepRatioSchedule::finalize(ScheduleKind::Extracted, sizes, &retained, total, sparsity)
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.is_empty() || sizes.contains(&0) {
        return Err(Error::Alignment(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

/// Largest-remainder rounding of `reals` to integers in `[0, caps[l]]`
/// summing to `total`. Remainder ties go to the lower layer index.
pub fn apportion(reals: &[f64], caps: &[usize], total: usize) -> Result<Vec<usize>> {
    if reals.len() != caps.len() {
        return Err(Error::Alignment(
            "apportion: reals and caps differ in length".to_string(),
        ));
    }
    if total > caps.iter().sum() {
        return Err(Error::Domain(format!(
            "cannot place {total} within caps {caps:?}"
        )));
    }
    let mut quotas: Vec<usize> = reals
        .iter()
        .zip(caps)
        .map(|(&r, &cap)| (libm::floor(r.max(0.0)) as usize).min(cap))
        .collect();
    let frac: Vec<f64> = reals
        .iter()
        .zip(&quotas)
        .map(|(&r, &q)| r - q as f64)
        .collect();
    let mut order: Vec<usize> = (0..reals.len()).collect();
    order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(a.cmp(&b)));
    let mut assigned: usize = quotas.iter().sum();
    while assigned < total {
        let before = assigned;
        for &l in &order {
            if assigned == total {
                break;
            }
            if quotas[l] < caps[l] {
                quotas[l] += 1;
                assigned += 1;
            }
        }
        debug_assert!(assigned > before);
    }
    while assigned > total {
        for &l in order.iter().rev() {
            if assigned == total {
                break;
            }
            if quotas[l] > 0 {
                quotas[l] -= 1;
                assigned -= 1;
            }
        }
    }
    Ok(quotas)
}

/// Unscaled hidden-layer weight for layer `l` (1-based) of `depth` layers.
pub fn raw_weight(kind: ScheduleKind, family: ArchFamily, l: usize, depth: usize) -> f64 {
    let r = (depth - l + 1) as f64;
    match kind {
        ScheduleKind::Smart | ScheduleKind::Ascending => {
            let base = r * r + r;
            match family {
                ArchFamily::PlainStack => base,
                ArchFamily::FastDecayStack => base / (l * l) as f64,
            }
        }
        ScheduleKind::Balanced | ScheduleKind::Extracted => 1.0,
        ScheduleKind::Linear => r,
        ScheduleKind::Cubic => r * r * r,
    }
}

/// Raw weights of the hidden layers of a `depth`-layer network.
pub fn raw_weights(kind: ScheduleKind, family: ArchFamily, depth: usize) -> Vec<f64> {
    (1..depth)
        .map(|l| raw_weight(kind, family, l, depth))
        .collect()
}

struct Plan {
    retained: Vec<f64>,
    total: usize,
}

fn check_inputs(sizes: &[usize], specs: &[LayerSpec], p: f64) -> Result<()> {
    check_sizes(sizes)?;
    if specs.len() != sizes.len() || layer_sizes(specs) != sizes {
        return Err(Error::Alignment(format!(
            "sizes {sizes:?} do not match the layer specs"
        )));
    }
    if sizes.len() < 2 {
        return Err(Error::Spec(
            "schedules need at least one hidden layer".into(),
        ));
    }
    if !specs[specs.len() - 1].is_output {
        return Err(Error::Spec("last layer must be the output layer".into()));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("target sparsity {p} outside (0, 1)")));
    }
    Ok(())
}

/// Scale hidden raws into the budget left after the output layer, then cap.
fn plan(sizes: &[usize], raw: &[f64], p: f64) -> Result<Plan> {
    let n: usize = sizes.iter().sum();
    let total = mask::budget(n, p);
    let out = sizes.len() - 1;
    let output_retained = OUTPUT_KEEP_RATIO * sizes[out] as f64;
    if (total as f64) < output_retained {
        return Err(Error::InfeasibleSparsity {
            sparsity: p,
            reason: format!(
                "budget of {total} weights is below the output layer's {output_retained}"
            ),
        });
    }
    let hidden_budget = total as f64 - output_retained;
    let mass: f64 = raw.iter().zip(sizes).map(|(r, &m)| r * m as f64).sum();
    if !(mass > 0.0) {
        return Err(Error::Domain("raw layer weights must be positive".into()));
    }
    let alpha = hidden_budget / mass;
    let mut retained: Vec<f64> = raw
        .iter()
        .zip(sizes)
        .map(|(r, &m)| alpha * r * m as f64)
        .collect();
    retained.push(output_retained);
    // Overflow above ratio 1 moves to the next deeper layer, possibly the
    // output layer, until absorbed.
    for l in 0..out {
        let cap = sizes[l] as f64;
        if retained[l] > cap {
            let overflow = retained[l] - cap;
            retained[l] = cap;
            retained[l + 1] += overflow;
        }
    }
    // What the output layer cannot hold goes back to the deepest hidden
    // layers with room left.
    let mut spill = retained[out] - sizes[out] as f64;
    for l in (0..out).rev() {
        if spill <= 0.0 {
            break;
        }
        let take = spill.min(sizes[l] as f64 - retained[l]);
        retained[l] += take;
        retained[out] -= take;
        spill -= take;
    }
    if retained[out] > sizes[out] as f64 + 1e-9 {
        return Err(Error::InfeasibleSparsity {
            sparsity: p,
            reason: "retained budget exceeds every layer's capacity".into(),
        });
    }
    retained[out] = retained[out].min(sizes[out] as f64);
    Ok(Plan { retained, total })
}

/// Smart ratios: hidden keep-ratios proportional to `(L−l+1)² + (L−l+1)`
/// (divided by `l²` for [`ArchFamily::FastDecayStack`]), output layer at 30%.
pub fn smart_ratio(
    sizes: &[usize],
    specs: &[LayerSpec],
    target_sparsity: f64,
    family: ArchFamily,
) -> Result<KeepRatioSchedule> {
    build(ScheduleKind::Smart, sizes, specs, target_sparsity, family)
}

/// Ablation schedules. `Ascending` reverses the planned smart ratios of the
/// hidden layers before rescaling them into the budget.
pub fn ablation_schedule(
    kind: ScheduleKind,
    sizes: &[usize],
    specs: &[LayerSpec],
    target_sparsity: f64,
) -> Result<KeepRatioSchedule> {
    build(kind, sizes, specs, target_sparsity, ArchFamily::PlainStack)
}

/// Any generated schedule kind. `Extracted` needs a mask and is rejected.
pub fn build(
    kind: ScheduleKind,
    sizes: &[usize],
    specs: &[LayerSpec],
    target_sparsity: f64,
    family: ArchFamily,
) -> Result<KeepRatioSchedule> {
    check_inputs(sizes, specs, target_sparsity)?;
    let depth = sizes.len();
    let hidden = &sizes[..depth - 1];
    let raw = match kind {
        ScheduleKind::Extracted => {
            return Err(Error::Domain("extracted schedules come from a mask".into()))
        }
        ScheduleKind::Ascending => {
            let smart = plan(
                sizes,
                &raw_weights(ScheduleKind::Smart, family, depth),
                target_sparsity,
            )?;
            let mut ratios: Vec<f64> = smart.retained[..depth - 1]
                .iter()
                .zip(hidden)
                .map(|(r, &m)| r / m as f64)
                .collect();
            ratios.reverse();
            ratios
        }
        other => raw_weights(other, family, depth),
    };
    let plan = plan(sizes, &raw, target_sparsity)?;
    KeepRatioSchedule::finalize(kind, sizes, &plan.retained, plan.total, target_sparsity)
}

/// Ratio signature of an existing mask.
pub fn extract_schedule(mask: &Mask) -> KeepRatioSchedule {
    let sizes = mask.sizes();
    let quotas = mask.kept_counts();
    let ratios = mask::keep_ratios(mask);
    KeepRatioSchedule {
        kind: ScheduleKind::Extracted,
        planned: ratios.clone(),
        ratios,
        quotas,
        target_sparsity: mask::sparsity(mask),
        sizes,
    }
}

/// Quotas on the straight line from the dense network to `target`, scaled to
/// keep `kept_total` weights, never exceeding `caps` per layer.
pub fn interpolated_quotas(
    target: &KeepRatioSchedule,
    kept_total: usize,
    caps: &[usize],
) -> Result<Vec<usize>> {
    let sizes = target.sizes();
    let n: usize = sizes.iter().sum();
    let q: usize = target.retained();
    if kept_total < q || kept_total > n {
        return Err(Error::Domain(format!(
            "interpolation total {kept_total} outside [{q}, {n}]"
        )));
    }
    if kept_total == q {
        return Ok(target.quotas().to_vec());
    }
    let t = (n - kept_total) as f64 / (n - q) as f64;
    let reals: Vec<f64> = sizes
        .iter()
        .zip(target.quotas())
        .map(|(&m, &ql)| m as f64 + t * (ql as f64 - m as f64))
        .collect();
    apportion(&reals, caps, kept_total)
}
