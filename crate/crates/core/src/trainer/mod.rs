//! Training loop: rollout collection with dynamic sampling and
//! difficulty-aware truncation, advantage estimation, clipped-surrogate
//! updates, and per-step metrics.

mod config;
mod eval;

pub use config::{DifficultyTiers, TrainerConfig, Variant};
pub use eval::{evaluate, evaluate_with_rollouts, EvalReport, LevelReport};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::advantage::{compute_advantages, AdvantageSet, Batch, Group};
use crate::analysis::{clip_stats, ClipStats};
use crate::error::{Error, Result};
use crate::policy::{surrogate_gradient, PolicyParams};
use crate::rewards::{PenaltyRegistry, PenaltySpec};
use crate::rng::{self, purpose};
use crate::tasks::Prompt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: usize,
    pub mean_response_length: f64,
    pub mean_accuracy: f64,
    pub mean_token_entropy: f64,
    pub zero_reward_group_ratio: f64,
    pub all_one_group_ratio: f64,
    pub clip_high_token_fraction: f64,
    pub clip_low_token_fraction: f64,
    pub resample_rounds_used: usize,
}

/// A scored group plus the truncation length it was scored at.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledGroup {
    pub group: Group,
    pub truncation_length: usize,
    /// Fraction of rollouts correct at the sampling length.
    pub correctness_ratio: f64,
}

/// Statistics over every group sampled in a step, before filtering.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectStats {
    pub groups_sampled: usize,
    pub zero_reward_groups: usize,
    pub all_one_groups: usize,
    pub rollouts: usize,
    pub correct: usize,
    pub total_length: usize,
    pub entropy_sum: f64,
    pub rounds: usize,
    /// Truncation length of each accepted group, in batch order.
    pub truncation_lengths: Vec<usize>,
}

impl CollectStats {
    fn absorb(&mut self, sampled: &SampledGroup, correctness: &[f64]) {
        let g = &sampled.group;
        self.groups_sampled += 1;
        if g.all_zero() {
            self.zero_reward_groups += 1;
        }
        if g.all_positive() {
            self.all_one_groups += 1;
        }
        self.rollouts += g.rollouts.len();
        self.correct += correctness.iter().filter(|&&c| c > 0.0).count();
        for r in &g.rollouts {
            self.total_length += r.len();
            self.entropy_sum += r.old_entropies.iter().sum::<f64>();
        }
    }

    pub fn zero_reward_ratio(&self) -> f64 {
        ratio(self.zero_reward_groups, self.groups_sampled)
    }

    pub fn all_one_ratio(&self) -> f64 {
        ratio(self.all_one_groups, self.groups_sampled)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Clone, Debug)]
pub struct CollectedBatch {
    pub batch: Batch,
    pub stats: CollectStats,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub params: PolicyParams,
    pub metrics: MetricsRecord,
    pub batch: Batch,
    pub advantages: AdvantageSet,
    /// Token classes at the moment each minibatch gradient was taken.
    pub clip_stats: ClipStats,
    pub truncation_lengths: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub metrics: Vec<MetricsRecord>,
    pub final_params: PolicyParams,
}

pub struct Trainer {
    config: TrainerConfig,
    pool: Vec<Prompt>,
    reference: PolicyParams,
    registry: PenaltyRegistry,
}

impl Trainer {
    /// `reference` is the frozen policy for the KL penalty (normally the
    /// initial policy).
    pub fn new(config: TrainerConfig, pool: Vec<Prompt>, reference: PolicyParams) -> Result<Self> {
        config.validate()?;
        if pool.is_empty() {
            return Err(Error::Config("prompt pool is empty".into()));
        }
        for p in &pool {
            if p.difficulty == 0 || p.difficulty as usize > reference.num_classes() {
                return Err(Error::InvalidPrompt(format!(
                    "prompt {} has difficulty {} but the policy has {} classes",
                    p.id,
                    p.difficulty,
                    reference.num_classes()
                )));
            }
        }
        Ok(Self {
            config,
            pool,
            reference,
            registry: PenaltyRegistry::default(),
        })
    }

    pub fn with_registry(mut self, registry: PenaltyRegistry) -> Result<Self> {
        if !registry.contains(&self.config.penalty.kind) {
            return Err(Error::UnknownPenalty(self.config.penalty.kind.clone()));
        }
        self.registry = registry;
        Ok(self)
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn pool(&self) -> &[Prompt] {
        &self.pool
    }

    pub fn reference(&self) -> &PolicyParams {
        &self.reference
    }

    /// Sample and score one group. With tiers, the group is sampled at the
    /// longest tier length, its correctness ratio picks the tier, and the
    /// rollouts are cut to that tier's length before final scoring.
    pub fn sample_group(&self, params: &PolicyParams, prompt: &Prompt, rng: &mut rng::StreamRng) -> Result<(SampledGroup, Vec<f64>)> {
        let c = &self.config;
        let vocab = params.vocab();
        let sample_len = c.sampling_length();
        let sampling_spec = PenaltySpec {
            kind: c.penalty.kind.clone(),
            target_length: sample_len,
        };
        let mut rollouts = Vec::with_capacity(c.group_size);
        let mut records = Vec::with_capacity(c.group_size);
        for _ in 0..c.group_size {
            let r = params.sample_rollout(prompt, sample_len, rng)?;
            records.push(self.registry.score(vocab, prompt, &r, &sampling_spec)?);
            rollouts.push(r);
        }
        let correctness_ratio = records.iter().filter(|r| r.correctness > 0.0).count() as f64 / c.group_size as f64;

        let (truncation_length, records) = match &c.tiers {
            None => (sample_len, records),
            Some(tiers) => {
                let length = tiers.assign_truncation(correctness_ratio);
                let spec = PenaltySpec {
                    kind: c.penalty.kind.clone(),
                    target_length: length,
                };
                let mut rescored = Vec::with_capacity(rollouts.len());
                for r in rollouts.iter_mut() {
                    *r = r.truncate_to(length);
                    rescored.push(self.registry.score(vocab, prompt, r, &spec)?);
                }
                (length, rescored)
            }
        };
        let rewards = records.iter().map(|r| r.final_reward).collect();
        let correctness = records.iter().map(|r| r.correctness).collect();
        let group = Group::new(prompt.clone(), rollouts, rewards)?;
        Ok((
            SampledGroup {
                group,
                truncation_length,
                correctness_ratio,
            },
            correctness,
        ))
    }

    /// Draw prompts and sample groups until `batch_size` groups are accepted.
    ///
    /// With dynamic sampling, groups whose rewards are all zero or all
    /// positive are discarded and a fresh round of `batch_size` prompts is
    /// drawn, up to `max_resample_rounds` extra rounds.
    pub fn collect_batch(&self, params: &PolicyParams, step: usize) -> Result<CollectedBatch> {
        let c = &self.config;
        let rounds_allowed = if c.dynamic_sampling { 1 + c.max_resample_rounds } else { 1 };
        let mut stats = CollectStats::default();
        let mut accepted: Vec<Group> = Vec::with_capacity(c.batch_size);

        for round in 0..rounds_allowed {
            stats.rounds = round + 1;
            let mut draw = rng::stream(c.seed, &[purpose::DRAW, step as u64, round as u64]);
            let drawn: Vec<&Prompt> = (0..c.batch_size)
                .map(|_| &self.pool[rand::Rng::random_range(&mut draw, 0..self.pool.len())])
                .collect();
            let sampled: Vec<(SampledGroup, Vec<f64>)> = drawn
                .par_iter()
                .enumerate()
                .map(|(slot, prompt)| {
                    let mut r = rng::stream(c.seed, &[purpose::ROLLOUT, step as u64, round as u64, slot as u64]);
                    self.sample_group(params, prompt, &mut r)
                })
                .collect::<Result<_>>()?;

            for (s, correctness) in sampled {
                stats.absorb(&s, &correctness);
                let keep = !c.dynamic_sampling || !(s.group.all_zero() || s.group.all_positive());
                if keep && accepted.len() < c.batch_size {
                    stats.truncation_lengths.push(s.truncation_length);
                    accepted.push(s.group);
                }
            }
            if accepted.len() == c.batch_size {
                return Ok(CollectedBatch {
                    batch: Batch::new(accepted),
                    stats,
                });
            }
        }
        Err(Error::PartialBatch {
            accepted,
            needed: c.batch_size,
            rounds: stats.rounds,
        })
    }

    /// Advantage estimation plus one pass of minibatch updates over `batch`.
    pub fn update_on_batch(&self, params: &PolicyParams, batch: &Batch) -> Result<(PolicyParams, AdvantageSet, ClipStats)> {
        let c = &self.config;
        let clip = c.clip()?;
        let advantages = compute_advantages(batch, c.advantage_mode, c.eps_std)?;
        let mut current = params.clone();
        let mut stats = ClipStats::default();
        for range in minibatch_ranges(batch.groups.len(), c.minibatches) {
            let mini = Batch::new(batch.groups[range.clone()].to_vec());
            let mini_adv = advantages.slice_groups(range);
            stats.merge(&clip_stats(&mini, &current, &mini_adv, clip)?);
            let grad = surrogate_gradient(&current, &mini, &mini_adv, clip, c.kl_coef, &self.reference)?;
            current = current.apply_update(&grad, c.lr)?;
        }
        Ok((current, advantages, stats))
    }

    pub fn train_step(&self, params: &PolicyParams, step: usize) -> Result<StepOutcome> {
        let CollectedBatch { batch, stats } = self.collect_batch(params, step)?;
        let (updated, advantages, clip) = self.update_on_batch(params, &batch)?;
        let tokens = stats.total_length;
        let metrics = MetricsRecord {
            step,
            mean_response_length: ratio(stats.total_length, stats.rollouts),
            mean_accuracy: ratio(stats.correct, stats.rollouts),
            mean_token_entropy: if tokens == 0 { 0.0 } else { stats.entropy_sum / tokens as f64 },
            zero_reward_group_ratio: stats.zero_reward_ratio(),
            all_one_group_ratio: stats.all_one_ratio(),
            clip_high_token_fraction: ratio(clip.clipped_high.count, clip.total()),
            clip_low_token_fraction: ratio(clip.clipped_low.count, clip.total()),
            resample_rounds_used: stats.rounds - 1,
        };
        Ok(StepOutcome {
            params: updated,
            metrics,
            batch,
            advantages,
            clip_stats: clip,
            truncation_lengths: stats.truncation_lengths,
        })
    }

    /// Run `max_steps` steps from `init`. `on_step` sees every outcome in
    /// order (for persistence); its error aborts the run.
    pub fn run(
        &self,
        init: &PolicyParams,
        mut on_step: impl FnMut(&StepOutcome) -> Result<()>,
    ) -> Result<TrainingRun> {
        let mut params = init.clone();
        let mut metrics = Vec::with_capacity(self.config.max_steps);
        for step in 0..self.config.max_steps {
            let outcome = self.train_step(&params, step)?;
            on_step(&outcome)?;
            metrics.push(outcome.metrics);
            params = outcome.params;
        }
        Ok(TrainingRun {
            metrics,
            final_params: params,
        })
    }
}

/// Contiguous, near-equal group ranges; earlier chunks take the remainder.
pub fn minibatch_ranges(len: usize, parts: usize) -> Vec<std::ops::Range<usize>> {
    let parts = parts.clamp(1, len.max(1));
    let base = len / parts;
    let extra = len % parts;
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let size = base + usize::from(i < extra);
            let r = start..start + size;
            start += size;
            r
        })
        .filter(|r| !r.is_empty())
        .collect()
}

/// Apply `variant` to `config` and train from `init` with the frozen
/// reference set to `init`.
pub fn run_training(
    config: &TrainerConfig,
    variant: Variant,
    init: &PolicyParams,
    pool: Vec<Prompt>,
    on_step: impl FnMut(&StepOutcome) -> Result<()>,
) -> Result<TrainingRun> {
    let config = variant.apply(config)?;
    Trainer::new(config, pool, init.clone())?.run(init, on_step)
}
