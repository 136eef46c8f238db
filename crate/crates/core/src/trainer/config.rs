use serde::{Deserialize, Serialize};

use crate::advantage::AdvantageMode;
use crate::error::{Error, Result};
use crate::policy::ClipRange;
use crate::rewards::PenaltySpec;

/// Correctness-ratio tiers for difficulty-aware truncation.
///
/// `lengths[i]` applies when the ratio lies in `[thresholds[i-1], thresholds[i])`;
/// a ratio equal to a threshold belongs to the easier (shorter) tier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyTiers {
    pub thresholds: Vec<f64>,
    pub lengths: Vec<usize>,
}

impl DifficultyTiers {
    pub fn new(thresholds: Vec<f64>, lengths: Vec<usize>) -> Result<Self> {
        let tiers = Self { thresholds, lengths };
        tiers.validate()?;
        Ok(tiers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.len() != self.thresholds.len() + 1 {
            return Err(Error::Config(format!(
                "trainer.tiers: {} lengths for {} thresholds; need exactly one more length than thresholds",
                self.lengths.len(),
                self.thresholds.len()
            )));
        }
        if let Some(t) = self.thresholds.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(Error::Config(format!(
                "trainer.tiers.thresholds: {t} is outside (0, 1)"
            )));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "trainer.tiers.thresholds must be strictly ascending".into(),
            ));
        }
        if self.lengths.contains(&0) {
            return Err(Error::Config("trainer.tiers.lengths must be positive".into()));
        }
        if self.lengths.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "trainer.tiers.lengths must be non-increasing (easier prompts get shorter budgets)".into(),
            ));
        }
        Ok(())
    }

    pub fn longest(&self) -> usize {
        self.lengths[0]
    }

    /// Truncation length for a prompt with the given correctness ratio.
    pub fn assign_truncation(&self, correctness_ratio: f64) -> usize {
        let tier = self.thresholds.iter().filter(|&&t| correctness_ratio >= t).count();
        self.lengths[tier]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub group_size: usize,
    pub eps_low: f64,
    pub eps_high: f64,
    pub lr: f64,
    pub kl_coef: f64,
    pub max_steps: usize,
    pub advantage_mode: AdvantageMode,
    /// Added to the std in the advantage denominators.
    pub eps_std: f64,
    pub penalty: PenaltySpec,
    pub dynamic_sampling: bool,
    pub tiers: Option<DifficultyTiers>,
    /// Extra sampling rounds allowed after the first when filtering.
    pub max_resample_rounds: usize,
    /// Sequential updates per batch (one pass over the data).
    pub minibatches: usize,
    /// Checkpoint period in steps; 0 keeps only the initial and final ones.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            group_size: 8,
            eps_low: 0.2,
            eps_high: 0.28,
            lr: 1.0,
            kl_coef: 0.0005,
            max_steps: 150,
            advantage_mode: AdvantageMode::BatchNorm,
            eps_std: 1e-8,
            penalty: PenaltySpec::truncation(24),
            dynamic_sampling: true,
            tiers: None,
            max_resample_rounds: 10,
            minibatches: 8,
            checkpoint_every: 50,
            seed: 7,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("trainer.batch_size must be at least 1".into()));
        }
        if self.group_size < 2 {
            return Err(Error::Config("trainer.group_size must be at least 2".into()));
        }
        if !(self.eps_low > 0.0) {
            return Err(Error::Config("trainer.eps_low must be positive".into()));
        }
        if self.eps_high < self.eps_low {
            return Err(Error::Config(format!(
                "trainer.eps_high ({}) must be >= trainer.eps_low ({})",
                self.eps_high, self.eps_low
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config("trainer.lr must be positive".into()));
        }
        if !(self.kl_coef >= 0.0 && self.kl_coef.is_finite()) {
            return Err(Error::Config("trainer.kl_coef must be >= 0".into()));
        }
        if !(self.eps_std >= 0.0 && self.eps_std.is_finite()) {
            return Err(Error::Config("trainer.eps_std must be >= 0".into()));
        }
        if self.max_resample_rounds < 1 {
            return Err(Error::Config("trainer.max_resample_rounds must be at least 1".into()));
        }
        if self.minibatches < 1 || self.minibatches > self.batch_size {
            return Err(Error::Config(format!(
                "trainer.minibatches must be in 1..={}",
                self.batch_size
            )));
        }
        self.penalty.validate()?;
        if let Some(tiers) = &self.tiers {
            tiers.validate()?;
        }
        Ok(())
    }

    pub fn clip(&self) -> Result<ClipRange> {
        ClipRange::new(self.eps_low, self.eps_high)
    }

    /// Length at which rollouts are sampled: the longest tier when tiers are
    /// set, the penalty target otherwise.
    pub fn sampling_length(&self) -> usize {
        self.tiers
            .as_ref()
            .map_or(self.penalty.target_length, DifficultyTiers::longest)
    }
}

/// Training recipe presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Group normalization, symmetric clip at `eps_low`, no filtering, fixed truncation.
    Grpo,
    /// Batch normalization, decoupled clip, dynamic sampling, fixed truncation.
    Dler,
    /// DLER plus difficulty-aware truncation tiers.
    DaDler,
    /// Use the config as written (ablations).
    Custom,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Grpo => "grpo",
            Variant::Dler => "dler",
            Variant::DaDler => "da_dler",
            Variant::Custom => "custom",
        }
    }

    pub fn apply(self, config: &TrainerConfig) -> Result<TrainerConfig> {
        let mut c = config.clone();
        match self {
            Variant::Grpo => {
                c.advantage_mode = AdvantageMode::Grpo;
                c.eps_high = c.eps_low;
                c.dynamic_sampling = false;
                c.tiers = None;
            }
            Variant::Dler => {
                c.advantage_mode = AdvantageMode::BatchNorm;
                c.dynamic_sampling = true;
                c.tiers = None;
            }
            Variant::DaDler => {
                c.advantage_mode = AdvantageMode::BatchNorm;
                c.dynamic_sampling = true;
                if c.tiers.is_none() {
                    return Err(Error::Config("variant da_dler requires trainer.tiers".into()));
                }
            }
            Variant::Custom => {}
        }
        c.validate()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assign_truncation_examples() {
        let tiers = DifficultyTiers::new(vec![0.5], vec![4000, 2000]).unwrap();
        assert_eq!(tiers.assign_truncation(0.75), 2000);
        assert_eq!(tiers.assign_truncation(0.0), 4000);
        assert_eq!(tiers.assign_truncation(1.0), 2000);
        assert_eq!(tiers.assign_truncation(0.5), 2000);
        assert_eq!(tiers.assign_truncation(0.4999), 4000);

        let three = DifficultyTiers::new(vec![0.25, 0.75], vec![24, 16, 12]).unwrap();
        assert_eq!(three.assign_truncation(0.1), 24);
        assert_eq!(three.assign_truncation(0.25), 16);
        assert_eq!(three.assign_truncation(0.8), 12);
    }

    #[test]
    fn tier_validation() {
        assert!(DifficultyTiers::new(vec![0.5], vec![24]).is_err());
        assert!(DifficultyTiers::new(vec![0.6, 0.5], vec![24, 16, 12]).is_err());
        assert!(DifficultyTiers::new(vec![0.0], vec![24, 12]).is_err());
        assert!(DifficultyTiers::new(vec![0.5], vec![12, 24]).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainerConfig::default().validate().is_ok());
        let bad = TrainerConfig {
            eps_high: 0.1,
            ..Default::default()
        };
        let msg = bad.validate().unwrap_err().to_string();
        assert!(msg.contains("eps_high"), "{msg}");
        let bad = TrainerConfig {
            group_size: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn variants() {
        let base = TrainerConfig::default();
        let g = Variant::Grpo.apply(&base).unwrap();
        assert_eq!(g.eps_high, g.eps_low);
        assert!(!g.dynamic_sampling);
        assert_eq!(g.advantage_mode, AdvantageMode::Grpo);
        assert!(Variant::DaDler.apply(&base).is_err());
        let with_tiers = TrainerConfig {
            tiers: Some(DifficultyTiers::new(vec![0.5], vec![24, 12]).unwrap()),
            ..Default::default()
        };
        let d = Variant::DaDler.apply(&with_tiers).unwrap();
        assert_eq!(d.sampling_length(), 24);
    }
}
