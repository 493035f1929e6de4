//! Ticket constructions.
//!
//! A ticket is a mask plus the weights retraining starts from. Initial
//! tickets (SNIP, GraSP, LT) start from the initialisation; partially-trained
//! tickets (weight rewinding, learning-rate rewinding, hybrid) start from
//! pretrained weights; random tickets never look at data.
//!
//! Seeds: the ticket seed drives initialisation, the scoring batch, the
//! pretraining shuffle and every sanity-check stream. Retraining uses a fresh
//! seed derived from it unless told to reuse it.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::criteria::{
    self, grasp_scores, magnitude_scores, random_mask_from_schedule, snip_scores, Criterion,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mask::{
    self, mask_from_scores_global, mask_from_scores_layerwise, top_k_global, top_k_layer, Mask,
    ScoreMap,
};
use crate::model::{build_network, layer_sizes, ArchFamily, LayerSpec, LayeredParams};
use crate::rng::{self, mix_seed, Stream};
use crate::sanity::{self, Check};
use crate::schedule::{self, interpolated_quotas, smart_ratio, ScheduleKind};
use crate::stats;
use crate::train::{train, train_from, Checkpoint, TrainConfig, TrainOutcome};

const RETRAIN_SALT: u64 = 0x5245_5452_4149_4e00;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum ImpMode {
    Reset,
    LrRewind,
    Hybrid,
}

impl ImpMode {
    pub fn name(&self) -> &'static str {
        match self {
            ImpMode::Reset => "reset",
            ImpMode::LrRewind => "lr-rewind",
            ImpMode::Hybrid => "hybrid",
        }
    }
}

/// Which pruning-at-initialisation criterion an initial ticket uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitCriterion {
    Snip,
    Grasp,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(
    feature = "serde",
    serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)
)]
pub enum Pipeline {
    /// Unpruned baseline.
    Dense,
    Snip,
    Grasp,
    Lt {
        #[cfg_attr(feature = "serde", serde(default))]
        preserve_output_layer: bool,
    },
    Random {
        #[cfg_attr(feature = "serde", serde(default = "default_schedule"))]
        schedule: ScheduleKind,
        #[cfg_attr(feature = "serde", serde(default))]
        family: ArchFamily,
    },
    LrRewind {
        #[cfg_attr(feature = "serde", serde(default))]
        preserve_output_layer: bool,
    },
    WeightRewind {
        rewind_epoch: usize,
    },
    Hybrid {
        #[cfg_attr(feature = "serde", serde(default))]
        family: ArchFamily,
    },
    Imp {
        mode: ImpMode,
        round_fraction: f64,
        #[cfg_attr(feature = "serde", serde(default))]
        family: ArchFamily,
    },
}

#[cfg(feature = "serde")]
fn default_schedule() -> ScheduleKind {
    ScheduleKind::Smart
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Dense => "dense",
            Pipeline::Snip => "snip",
            Pipeline::Grasp => "grasp",
            Pipeline::Lt { .. } => "lt",
            Pipeline::Random { .. } => "random",
            Pipeline::LrRewind { .. } => "lr-rewind",
            Pipeline::WeightRewind { .. } => "weight-rewind",
            Pipeline::Hybrid { .. } => "hybrid",
            Pipeline::Imp { .. } => "imp",
        }
    }

    pub fn criterion(&self) -> Option<Criterion> {
        match self {
            Pipeline::Dense => None,
            Pipeline::Snip => Some(Criterion::Snip),
            Pipeline::Grasp => Some(Criterion::Grasp),
            Pipeline::Random { .. } => Some(Criterion::Random),
            _ => Some(Criterion::Magnitude),
        }
    }

    fn schedule_kind(&self) -> Option<ScheduleKind> {
        match self {
            Pipeline::Random { schedule, .. } => Some(*schedule),
            Pipeline::Hybrid { .. }
            | Pipeline::Imp {
                mode: ImpMode::Hybrid,
                ..
            } => Some(ScheduleKind::Smart),
            _ => None,
        }
    }

    /// Whether building the ticket involves a pretraining run.
    pub fn pretrains(&self) -> bool {
        !matches!(
            self,
            Pipeline::Dense | Pipeline::Snip | Pipeline::Grasp | Pipeline::Random { .. }
        )
    }
}

/// Name with the parameters that distinguish variants, e.g. `random(balanced)`.
impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = |fam: &ArchFamily| match fam {
            ArchFamily::PlainStack => "",
            ArchFamily::FastDecayStack => ",fast",
        };
        match self {
            Pipeline::Lt {
                preserve_output_layer: true,
            } => f.write_str("lt(keep-output)"),
            Pipeline::LrRewind {
                preserve_output_layer: true,
            } => f.write_str("lr-rewind(keep-output)"),
            Pipeline::Random {
                schedule,
                family: fam,
            } => write!(f, "random({schedule}{})", family(fam)),
            Pipeline::WeightRewind { rewind_epoch } => write!(f, "weight-rewind({rewind_epoch})"),
            Pipeline::Hybrid {
                family: ArchFamily::FastDecayStack,
            } => f.write_str("hybrid(fast)"),
            Pipeline::Imp {
                mode,
                round_fraction,
                family: fam,
            } => {
                write!(f, "imp({},{round_fraction}{})", mode.name(), family(fam))
            }
            other => f.write_str(other.name()),
        }
    }
}

/// Everything needed to rebuild a ticket bit-for-bit from its pruning data.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Provenance {
    pub pipeline: Pipeline,
    pub criterion: Option<Criterion>,
    pub schedule: Option<ScheduleKind>,
    pub target_sparsity: f64,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub pretrain: Option<TrainConfig>,
    /// Indices of the scoring batch for SNIP and GraSP.
    pub score_batch: Vec<usize>,
    /// Pretraining checkpoints the ticket was derived from.
    pub checkpoints: Vec<Checkpoint>,
    /// Epoch of the pretraining schedule retraining resumes from.
    pub schedule_offset: usize,
    /// Sparsity after each pruning round (iterative pipelines).
    pub round_sparsities: Vec<f64>,
}

impl Provenance {
    fn new(pipeline: Pipeline, target_sparsity: f64, seed: u64) -> Self {
        Provenance {
            criterion: pipeline.criterion(),
            schedule: pipeline.schedule_kind(),
            pipeline,
            target_sparsity,
            seed,
            checks: Vec::new(),
            pretrain: None,
            score_batch: Vec::new(),
            checkpoints: Vec::new(),
            schedule_offset: 0,
            round_sparsities: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Ticket {
    pub mask: Mask,
    pub weights: LayeredParams,
    pub provenance: Provenance,
}

impl Ticket {
    pub fn new(mask: Mask, weights: LayeredParams, provenance: Provenance) -> Result<Self> {
        mask.check_aligned(&weights.layer_sizes())?;
        Ok(Ticket {
            mask,
            weights,
            provenance,
        })
    }

    pub fn sparsity(&self) -> f64 {
        mask::sparsity(&self.mask)
    }

    pub fn keep_ratios(&self) -> Vec<f64> {
        mask::keep_ratios(&self.mask)
    }
}

fn check_sparsity(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Domain(format!("target sparsity {p} outside [0, 1)")));
    }
    Ok(())
}

fn pretrain_config(cfg: &TrainConfig, seed: u64, round: usize) -> TrainConfig {
    cfg.with_seed(if round == 0 {
        seed
    } else {
        mix_seed(seed, round as u64)
    })
}

/// Global magnitude mask, optionally keeping the output layer dense.
fn magnitude_mask(params: &LayeredParams, p: f64, preserve_output_layer: bool) -> Result<Mask> {
    let scores = magnitude_scores(params);
    if !preserve_output_layer {
        return mask_from_scores_global(&scores, p);
    }
    let sizes = params.layer_sizes();
    let total: usize = sizes.iter().sum();
    let out = sizes.len() - 1;
    let k = mask::budget(total, p);
    if k < sizes[out] {
        return Err(Error::InfeasibleSparsity {
            sparsity: p,
            reason: format!(
                "{k} weights cannot cover a dense output layer of {}",
                sizes[out]
            ),
        });
    }
    let mut eligible = Mask::ones(&sizes);
    eligible = Mask::new(
        eligible
            .layers()
            .iter()
            .enumerate()
            .map(|(l, c)| {
                if l == out {
                    vec![false; c.len()]
                } else {
                    c.clone()
                }
            })
            .collect(),
    );
    let hidden = top_k_global(&scores, k - sizes[out], Some(&eligible))?;
    let mut layers = hidden.layers().to_vec();
    layers[out] = vec![true; sizes[out]];
    Ok(Mask::new(layers))
}

/// SNIP or GraSP mask on a fresh initialisation.
pub fn make_initial_ticket(
    kind: InitCriterion,
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    seed: u64,
) -> Result<Ticket> {
    check_sparsity(target_sparsity)?;
    let weights = build_network(specs, seed)?;
    let batch_idx =
        criteria::score_batch_indices(data.len(), &mut rng::stream(seed, Stream::ScoreBatch));
    let batch = data.subset(&batch_idx)?;
    let dense = Mask::ones(&weights.layer_sizes());
    let (scores, pipeline): (ScoreMap, Pipeline) = match kind {
        InitCriterion::Snip => (snip_scores(&weights, &dense, &batch)?, Pipeline::Snip),
        InitCriterion::Grasp => (grasp_scores(&weights, &dense, &batch)?, Pipeline::Grasp),
    };
    let mask = mask_from_scores_global(&scores, target_sparsity)?;
    let mut provenance = Provenance::new(pipeline, target_sparsity, seed);
    provenance.score_batch = batch_idx;
    Ticket::new(mask, weights, provenance)
}

struct Pretrained {
    init: LayeredParams,
    outcome: TrainOutcome,
    cfg: TrainConfig,
}

fn pretrain(
    specs: &[LayerSpec],
    data: &Dataset,
    cfg: &TrainConfig,
    seed: u64,
    extra: &[usize],
) -> Result<Pretrained> {
    let init = build_network(specs, seed)?;
    let cfg = pretrain_config(cfg, seed, 0);
    let mut epochs = vec![0, cfg.epochs];
    epochs.extend_from_slice(extra);
    let outcome = train(
        &init,
        &Mask::ones(&init.layer_sizes()),
        data,
        None,
        &cfg,
        &epochs,
    )?;
    Ok(Pretrained { init, outcome, cfg })
}

fn pretrained_provenance(
    pipeline: Pipeline,
    p: f64,
    seed: u64,
    pre: &Pretrained,
) -> Result<Provenance> {
    let mut provenance = Provenance::new(pipeline, p, seed);
    provenance.pretrain = Some(pre.cfg.clone());
    provenance.checkpoints = vec![
        pre.outcome.checkpoint(0)?.clone(),
        pre.outcome.checkpoint(pre.cfg.epochs)?.clone(),
    ];
    Ok(provenance)
}

/// Lottery ticket: pretrain, prune by global magnitude, reset to epoch 0.
pub fn make_lt_ticket(
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    pretrain_cfg: &TrainConfig,
    seed: u64,
) -> Result<Ticket> {
    make_lt_ticket_with(specs, data, target_sparsity, pretrain_cfg, seed, false)
}

pub fn make_lt_ticket_with(
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    pretrain_cfg: &TrainConfig,
    seed: u64,
    preserve_output_layer: bool,
) -> Result<Ticket> {
    check_sparsity(target_sparsity)?;
    let pre = pretrain(specs, data, pretrain_cfg, seed, &[])?;
    let mask = magnitude_mask(&pre.outcome.params, target_sparsity, preserve_output_layer)?;
    let provenance = pretrained_provenance(
        Pipeline::Lt {
            preserve_output_layer,
        },
        target_sparsity,
        seed,
        &pre,
    )?;
    let weights = pre.outcome.checkpoint(0)?.weights.clone();
    debug_assert_eq!(weights, pre.init);
    Ticket::new(mask, weights, provenance)
}

/// Random ticket with smart ratios; no data involved.
pub fn make_random_ticket(
    specs: &[LayerSpec],
    target_sparsity: f64,
    family: ArchFamily,
    seed: u64,
) -> Result<Ticket> {
    make_random_ticket_with(specs, target_sparsity, ScheduleKind::Smart, family, seed)
}

/// Random ticket over any generated schedule kind.
pub fn make_random_ticket_with(
    specs: &[LayerSpec],
    target_sparsity: f64,
    kind: ScheduleKind,
    family: ArchFamily,
    seed: u64,
) -> Result<Ticket> {
    let weights = build_network(specs, seed)?;
    let sizes = layer_sizes(specs);
    let sched = schedule::build(kind, &sizes, specs, target_sparsity, family)?;
    let mask =
        random_mask_from_schedule(&sched, &sizes, &mut rng::stream(seed, Stream::RandomMask))?;
    let provenance = Provenance::new(
        Pipeline::Random {
            schedule: kind,
            family,
        },
        target_sparsity,
        seed,
    );
    Ticket::new(mask, weights, provenance)
}

/// Replace a ticket's weights with a pretraining checkpoint; retraining
/// then resumes the schedule at that epoch.
pub fn rewind_weights(ticket: &Ticket, target: &Checkpoint) -> Result<Ticket> {
    let epochs = ticket
        .provenance
        .pretrain
        .as_ref()
        .map(|c| c.epochs)
        .ok_or_else(|| Error::Domain("ticket has no pretraining to rewind".into()))?;
    if target.epoch > epochs {
        return Err(Error::Domain(format!(
            "rewind epoch {} beyond {epochs} pretraining epochs",
            target.epoch
        )));
    }
    ticket.mask.check_aligned(&target.weights.layer_sizes())?;
    let mut provenance = ticket.provenance.clone();
    provenance.schedule_offset = target.epoch;
    if !provenance
        .checkpoints
        .iter()
        .any(|c| c.epoch == target.epoch)
    {
        provenance.checkpoints.push(target.clone());
    }
    Ticket::new(ticket.mask.clone(), target.weights.clone(), provenance)
}

/// Global magnitude mask of the trained network, weights rewound to
/// `rewind_epoch`.
pub fn make_weight_rewind_ticket(
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    pretrain_cfg: &TrainConfig,
    rewind_epoch: usize,
    seed: u64,
) -> Result<Ticket> {
    check_sparsity(target_sparsity)?;
    if rewind_epoch > pretrain_cfg.epochs {
        return Err(Error::MissingCheckpoint {
            epoch: rewind_epoch,
        });
    }
    let pre = pretrain(specs, data, pretrain_cfg, seed, &[rewind_epoch])?;
    let mask = magnitude_mask(&pre.outcome.params, target_sparsity, false)?;
    let provenance = pretrained_provenance(
        Pipeline::WeightRewind { rewind_epoch },
        target_sparsity,
        seed,
        &pre,
    )?;
    let trained = Ticket::new(mask, pre.outcome.params.clone(), provenance)?;
    rewind_weights(&trained, pre.outcome.checkpoint(rewind_epoch)?)
}

/// Global magnitude mask of the trained network, keeping the trained weights.
pub fn make_lr_rewind_ticket(
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    pretrain_cfg: &TrainConfig,
    seed: u64,
) -> Result<Ticket> {
    make_lr_rewind_ticket_with(specs, data, target_sparsity, pretrain_cfg, seed, false)
}

pub fn make_lr_rewind_ticket_with(
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    pretrain_cfg: &TrainConfig,
    seed: u64,
    preserve_output_layer: bool,
) -> Result<Ticket> {
    check_sparsity(target_sparsity)?;
    let pre = pretrain(specs, data, pretrain_cfg, seed, &[])?;
    let mask = magnitude_mask(&pre.outcome.params, target_sparsity, preserve_output_layer)?;
    let provenance = pretrained_provenance(
        Pipeline::LrRewind {
            preserve_output_layer,
        },
        target_sparsity,
        seed,
        &pre,
    )?;
    Ticket::new(mask, pre.outcome.params.clone(), provenance)
}

/// Layerwise magnitude pruning of the trained network to smart-ratio quotas.
pub fn make_hybrid_ticket(
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    family: ArchFamily,
    pretrain_cfg: &TrainConfig,
    seed: u64,
) -> Result<Ticket> {
    let sizes = layer_sizes(specs);
    let sched = smart_ratio(&sizes, specs, target_sparsity, family)?;
    let pre = pretrain(specs, data, pretrain_cfg, seed, &[])?;
    let mask = mask_from_scores_layerwise(&magnitude_scores(&pre.outcome.params), &sched)?;
    let provenance =
        pretrained_provenance(Pipeline::Hybrid { family }, target_sparsity, seed, &pre)?;
    Ticket::new(mask, pre.outcome.params.clone(), provenance)
}

/// Result of iterative pruning: the final ticket and the mask after each round.
#[derive(Debug, Clone, PartialEq)]
pub struct IterativeOutcome {
    pub ticket: Ticket,
    pub round_masks: Vec<Mask>,
}

/// Iterative magnitude pruning. Each round trains, removes `round_fraction`
/// of the surviving weights (never below the target count; round `r` keeps
/// `round(N·(1−q)^r)` of the `N` weights), and sets the
/// weights per `mode`: back to the initialisation for `Reset`, the trained
/// values otherwise. `Hybrid` prunes layerwise to quotas interpolated
/// between the dense counts and the final smart-ratio quotas.
#[allow(clippy::too_many_arguments)]
pub fn iterative_magnitude_prune(
    specs: &[LayerSpec],
    data: &Dataset,
    target_sparsity: f64,
    round_fraction: f64,
    pretrain_cfg: &TrainConfig,
    mode: ImpMode,
    family: ArchFamily,
    seed: u64,
) -> Result<IterativeOutcome> {
    check_sparsity(target_sparsity)?;
    if !(round_fraction > 0.0 && round_fraction < 1.0) {
        return Err(Error::Domain(format!(
            "round fraction {round_fraction} outside (0, 1)"
        )));
    }
    let init = build_network(specs, seed)?;
    let sizes = init.layer_sizes();
    let total: usize = sizes.iter().sum();
    let target_k = mask::budget(total, target_sparsity);
    if target_k == 0 {
        return Err(Error::EmptyNetwork { total });
    }
    let final_sched = match mode {
        ImpMode::Hybrid => Some(smart_ratio(&sizes, specs, target_sparsity, family)?),
        _ => None,
    };

    let mut mask = Mask::ones(&sizes);
    let mut weights = init.clone();
    let mut round_masks = Vec::new();
    let mut checkpoints = Vec::new();
    let mut round = 0;
    while mask.kept() > target_k {
        let cfg = pretrain_config(pretrain_cfg, seed, round);
        let outcome = train(&weights, &mask, data, None, &cfg, &[0, cfg.epochs])?;
        if round == 0 {
            checkpoints.push(outcome.checkpoint(0)?.clone());
        }
        let kept = mask.kept();
        // round r keeps round(N·(1−q)^r), so rounding never accumulates
        let shrunk = libm::round(total as f64 * libm::pow(1.0 - round_fraction, (round + 1) as f64))
            as usize;
        let next = shrunk.min(kept - 1).max(target_k);
        let scores = magnitude_scores(&outcome.params);
        let next_mask = match &final_sched {
            None => top_k_global(&scores, next, Some(&mask))?,
            Some(sched) => {
                let quotas = interpolated_quotas(sched, next, &mask.kept_counts())?;
                let layers = scores
                    .layers()
                    .iter()
                    .zip(&quotas)
                    .zip(mask.layers())
                    .map(|((s, &q), eligible)| top_k_layer(s, q, Some(eligible)))
                    .collect::<Result<Vec<_>>>()?;
                Mask::new(layers)
            }
        };
        assert!(next_mask.is_subset_of(&mask), "pruning round grew the mask");
        assert!(
            mask::sparsity(&next_mask) >= mask::sparsity(&mask),
            "sparsity decreased"
        );
        weights = match mode {
            ImpMode::Reset => init.clone(),
            ImpMode::LrRewind | ImpMode::Hybrid => outcome.params.clone(),
        };
        checkpoints.push(outcome.checkpoint(cfg.epochs)?.clone());
        mask = next_mask;
        round_masks.push(mask.clone());
        round += 1;
    }

    let mut provenance = Provenance::new(
        Pipeline::Imp {
            mode,
            round_fraction,
            family,
        },
        target_sparsity,
        seed,
    );
    provenance.pretrain = Some(pretrain_cfg.clone());
    provenance.checkpoints = checkpoints;
    provenance.round_sparsities = round_masks.iter().map(mask::sparsity).collect();
    let ticket = Ticket::new(mask, weights, provenance)?;
    Ok(IterativeOutcome {
        ticket,
        round_masks,
    })
}

/// Build a pipeline's ticket from `pruning_data`, applying any checks at
/// their documented points: data corruptions before pruning, structural
/// attacks on the finished ticket.
pub fn construct(
    pipeline: &Pipeline,
    specs: &[LayerSpec],
    pruning_data: &Dataset,
    target_sparsity: f64,
    pretrain_cfg: &TrainConfig,
    seed: u64,
    checks: &[Check],
) -> Result<Ticket> {
    let mut data = pruning_data.clone();
    for check in checks.iter().filter(|c| c.is_data_corruption()) {
        data = corrupt(*check, &data, seed)?;
    }
    let p = target_sparsity;
    let mut ticket = match pipeline {
        Pipeline::Dense => {
            let weights = build_network(specs, seed)?;
            let mask = Mask::ones(&weights.layer_sizes());
            Ticket::new(mask, weights, Provenance::new(Pipeline::Dense, 0.0, seed))?
        }
        Pipeline::Snip => make_initial_ticket(InitCriterion::Snip, specs, &data, p, seed)?,
        Pipeline::Grasp => make_initial_ticket(InitCriterion::Grasp, specs, &data, p, seed)?,
        Pipeline::Lt {
            preserve_output_layer,
        } => make_lt_ticket_with(specs, &data, p, pretrain_cfg, seed, *preserve_output_layer)?,
        Pipeline::Random { schedule, family } => {
            make_random_ticket_with(specs, p, *schedule, *family, seed)?
        }
        Pipeline::LrRewind {
            preserve_output_layer,
        } => {
            make_lr_rewind_ticket_with(specs, &data, p, pretrain_cfg, seed, *preserve_output_layer)?
        }
        Pipeline::WeightRewind { rewind_epoch } => {
            make_weight_rewind_ticket(specs, &data, p, pretrain_cfg, *rewind_epoch, seed)?
        }
        Pipeline::Hybrid { family } => {
            make_hybrid_ticket(specs, &data, p, *family, pretrain_cfg, seed)?
        }
        Pipeline::Imp {
            mode,
            round_fraction,
            family,
        } => {
            iterative_magnitude_prune(
                specs,
                &data,
                p,
                *round_fraction,
                pretrain_cfg,
                *mode,
                *family,
                seed,
            )?
            .ticket
        }
    };
    for check in checks.iter().filter(|c| !c.is_data_corruption()) {
        ticket = attack(*check, &ticket, seed)?;
    }
    ticket.provenance.checks = checks.to_vec();
    Ok(ticket)
}

/// Rebuild a ticket from its provenance and the original pruning data.
pub fn replay(
    provenance: &Provenance,
    specs: &[LayerSpec],
    pruning_data: &Dataset,
) -> Result<Ticket> {
    let cfg = provenance.pretrain.clone().unwrap_or_default();
    construct(
        &provenance.pipeline,
        specs,
        pruning_data,
        provenance.target_sparsity,
        &cfg,
        provenance.seed,
        &provenance.checks,
    )
}

fn corrupt(check: Check, data: &Dataset, seed: u64) -> Result<Dataset> {
    match check {
        Check::RandomLabels => sanity::corrupt_labels(data, &mut rng::stream(seed, Stream::Labels)),
        Check::RandomPixels => sanity::corrupt_pixels(data, &mut rng::stream(seed, Stream::Pixels)),
        Check::HalfData => sanity::half_dataset(data, &mut rng::stream(seed, Stream::HalfData)),
        Check::CorruptBoth => sanity::corrupt_both(
            data,
            &mut rng::stream(seed, Stream::Labels),
            &mut rng::stream(seed, Stream::Pixels),
        ),
        other => Err(Error::Domain(format!("{other} is not a data corruption"))),
    }
}

/// Apply a structural attack to a finished ticket.
pub fn attack(check: Check, ticket: &Ticket, seed: u64) -> Result<Ticket> {
    let mut out = ticket.clone();
    match check {
        Check::Rearrange => {
            out.mask = sanity::rearrange_mask_layerwise(
                &ticket.mask,
                &mut rng::stream(seed, Stream::Rearrange),
            );
        }
        Check::ShuffleWeights => {
            out.weights = sanity::shuffle_unmasked_weights(
                &ticket.weights,
                &ticket.mask,
                &mut rng::stream(seed, Stream::Shuffle),
            )?;
        }
        other => return Err(Error::Domain(format!("{other} is not a structural attack"))),
    }
    if !out.provenance.checks.contains(&check) {
        out.provenance.checks.push(check);
    }
    Ok(out)
}

/// Retrain a ticket on `data`, resuming the schedule where the ticket says.
pub fn retrain(
    ticket: &Ticket,
    data: &Dataset,
    eval: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_from(
        &ticket.weights,
        &ticket.mask,
        data,
        Some(eval),
        cfg,
        &[],
        ticket.provenance.schedule_offset,
    )
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SuiteConfig {
    pub sparsities: Vec<f64>,
    pub seeds: Vec<u64>,
    pub pretrain: TrainConfig,
    pub retrain: TrainConfig,
    /// Retrain with the ticket seed instead of a fresh derived one.
    pub reuse_ticket_seed: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            sparsities: vec![0.9],
            seeds: vec![0, 1, 2],
            pretrain: TrainConfig::default(),
            retrain: TrainConfig::default(),
            reuse_ticket_seed: false,
        }
    }
}

impl SuiteConfig {
    pub fn retrain_seed(&self, ticket_seed: u64) -> u64 {
        if self.reuse_ticket_seed {
            ticket_seed
        } else {
            mix_seed(ticket_seed, RETRAIN_SALT)
        }
    }
}

/// One retrained ticket.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub ticket: Ticket,
    pub best_accuracy: f64,
    pub final_weights: LayeredParams,
    pub keep_counts: Vec<usize>,
    pub keep_ratios: Vec<f64>,
    pub collapsed: bool,
}

/// Construct (with at most one check), retrain on the clean data, evaluate.
#[allow(clippy::too_many_arguments)]
pub fn run_cell(
    pipeline: &Pipeline,
    check: Option<Check>,
    specs: &[LayerSpec],
    train_data: &Dataset,
    test_data: &Dataset,
    target_sparsity: f64,
    seed: u64,
    cfg: &SuiteConfig,
) -> Result<CellOutcome> {
    let checks: Vec<Check> = check.into_iter().collect();
    let ticket = construct(
        pipeline,
        specs,
        train_data,
        target_sparsity,
        &cfg.pretrain,
        seed,
        &checks,
    )?;
    let retrain_cfg = cfg.retrain.with_seed(cfg.retrain_seed(seed));
    let outcome = retrain(&ticket, train_data, test_data, &retrain_cfg)?;
    let best_accuracy = outcome.best_accuracy().unwrap_or(0.0);
    Ok(CellOutcome {
        keep_counts: ticket.mask.kept_counts(),
        keep_ratios: ticket.keep_ratios(),
        collapsed: ticket.mask.has_collapsed_layer(),
        final_weights: outcome.params,
        best_accuracy,
        ticket,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub check: Option<Check>,
    pub sparsity: f64,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Keep counts of the first seed's ticket.
    pub keep_counts: Vec<usize>,
    pub collapsed: bool,
}

impl SuiteRow {
    pub fn label(&self) -> String {
        self.check
            .map_or_else(|| String::from("baseline"), |c| String::from(c.name()))
    }
}

/// Baseline plus one row per check, for every sparsity; accuracies are
/// best-epoch test accuracies per seed, summarised as mean and sample std.
pub fn run_sanity_suite(
    pipeline: &Pipeline,
    checks: &[Check],
    specs: &[LayerSpec],
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &SuiteConfig,
) -> Result<Vec<SuiteRow>> {
    if cfg.seeds.is_empty() || cfg.sparsities.is_empty() {
        return Err(Error::Domain(
            "sanity suite needs seeds and sparsities".into(),
        ));
    }
    let variants: Vec<Option<Check>> = core::iter::once(None)
        .chain(checks.iter().copied().map(Some))
        .collect();
    let mut rows = Vec::with_capacity(variants.len() * cfg.sparsities.len());
    for &p in &cfg.sparsities {
        for &check in &variants {
            let mut accuracies = Vec::with_capacity(cfg.seeds.len());
            let mut keep_counts = Vec::new();
            let mut collapsed = false;
            for &seed in &cfg.seeds {
                let cell = run_cell(pipeline, check, specs, train_data, test_data, p, seed, cfg)?;
                if keep_counts.is_empty() {
                    keep_counts = cell.keep_counts.clone();
                }
                collapsed |= cell.collapsed;
                accuracies.push(cell.best_accuracy);
            }
            rows.push(SuiteRow {
                check,
                sparsity: p,
                mean: stats::mean(&accuracies),
                std: stats::sample_std(&accuracies),
                accuracies,
                keep_counts,
                collapsed,
            });
        }
    }
    Ok(rows)
}
