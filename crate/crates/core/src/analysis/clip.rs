use serde::{Deserialize, Serialize};

use crate::advantage::{AdvantageSet, Batch};
use crate::error::Result;
use crate::policy::{check_alignment, classify_token, ClipClass, ClipRange, PolicyParams};

/// Running totals for one token class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub probability_sum: f64,
    pub entropy_sum: f64,
}

impl ClassStats {
    fn add(&mut self, probability: f64, entropy: f64) {
        self.count += 1;
        self.probability_sum += probability;
        self.entropy_sum += entropy;
    }

    pub fn mean_probability(&self) -> Option<f64> {
        (self.count > 0).then(|| self.probability_sum / self.count as f64)
    }

    pub fn mean_entropy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.entropy_sum / self.count as f64)
    }

    fn merge(&mut self, other: &ClassStats) {
        self.count += other.count;
        self.probability_sum += other.probability_sum;
        self.entropy_sum += other.entropy_sum;
    }
}

/// Old-policy probability and entropy of tokens by clip class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipStats {
    pub unclipped: ClassStats,
    pub clipped_high: ClassStats,
    pub clipped_low: ClassStats,
}

impl ClipStats {
    pub fn total(&self) -> usize {
        self.unclipped.count + self.clipped_high.count + self.clipped_low.count
    }

    pub fn class(&self, class: ClipClass) -> &ClassStats {
        match class {
            ClipClass::Unclipped => &self.unclipped,
            ClipClass::ClippedHigh => &self.clipped_high,
            ClipClass::ClippedLow => &self.clipped_low,
        }
    }

    pub fn merge(&mut self, other: &ClipStats) {
        self.unclipped.merge(&other.unclipped);
        self.clipped_high.merge(&other.clipped_high);
        self.clipped_low.merge(&other.clipped_low);
    }
}

/// Classify every token of `batch` by the clip branch it would take under
/// `new_params`, recording its probability and entropy under the sampling
/// policy.
pub fn clip_stats(batch: &Batch, new_params: &PolicyParams, advantages: &AdvantageSet, clip: ClipRange) -> Result<ClipStats> {
    check_alignment(batch, advantages)?;
    let mut stats = ClipStats::default();
    for (group, adv) in batch.groups.iter().zip(advantages.token_values()) {
        for (rollout, adv_tokens) in group.rollouts.iter().zip(adv) {
            let new_logprobs = new_params.log_prob(&group.prompt, &rollout.tokens)?;
            for t in 0..rollout.len() {
                let ratio = (new_logprobs[t] - rollout.old_logprobs[t]).exp();
                let class = match classify_token(ratio, adv_tokens[t], clip) {
                    ClipClass::Unclipped => &mut stats.unclipped,
                    ClipClass::ClippedHigh => &mut stats.clipped_high,
                    ClipClass::ClippedLow => &mut stats.clipped_low,
                };
                class.add(rollout.old_logprobs[t].exp(), rollout.old_entropies[t]);
            }
        }
    }
    Ok(stats)
}
