//! Reward composition `R' = R + L`: rule-based correctness plus a length
//! penalty. Only the truncation penalty ships; other penalties plug in through
//! [`PenaltyRegistry::register`].

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Rollout, Vocab};
use crate::tasks::{verify, Prompt};

pub const TRUNCATION: &str = "truncation";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    /// 0 or 1.
    pub correctness: f64,
    pub penalty_applied: bool,
    pub final_reward: f64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltySpec {
    pub kind: String,
    pub target_length: usize,
}

impl PenaltySpec {
    pub fn truncation(target_length: usize) -> Self {
        Self {
            kind: TRUNCATION.to_string(),
            target_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_length < 1 {
            return Err(Error::Config("penalty.target_length must be at least 1".into()));
        }
        Ok(())
    }
}

impl Default for PenaltySpec {
    fn default() -> Self {
        Self::truncation(24)
    }
}

/// Outcome of a length penalty applied on top of correctness.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shaped {
    pub final_reward: f64,
    pub penalty_applied: bool,
}

pub trait PenaltyRule: Send + Sync {
    fn shape(&self, rollout: &Rollout, correctness: f64, target_length: usize) -> Shaped;
}

impl<F> PenaltyRule for F
where
    F: Fn(&Rollout, f64, usize) -> Shaped + Send + Sync,
{
    fn shape(&self, rollout: &Rollout, correctness: f64, target_length: usize) -> Shaped {
        self(rollout, correctness, target_length)
    }
}

/// Zero reward for anything cut off at the target length.
#[derive(Clone, Copy, Debug, Default)]
pub struct Truncation;

impl PenaltyRule for Truncation {
    fn shape(&self, rollout: &Rollout, correctness: f64, _target_length: usize) -> Shaped {
        Shaped {
            final_reward: if rollout.truncated { 0.0 } else { correctness },
            penalty_applied: rollout.truncated,
        }
    }
}

#[derive(Clone)]
pub struct PenaltyRegistry {
    rules: BTreeMap<String, Arc<dyn PenaltyRule>>,
}

impl std::fmt::Debug for PenaltyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PenaltyRegistry")
            .field("kinds", &self.rules.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Default for PenaltyRegistry {
    fn default() -> Self {
        let mut rules: BTreeMap<String, Arc<dyn PenaltyRule>> = BTreeMap::new();
        rules.insert(TRUNCATION.to_string(), Arc::new(Truncation));
        Self { rules }
    }
}

impl PenaltyRegistry {
    pub fn empty() -> Self {
        Self { rules: BTreeMap::new() }
    }

    pub fn register(&mut self, kind: impl Into<String>, rule: impl PenaltyRule + 'static) -> Result<()> {
        let kind = kind.into();
        if self.rules.contains_key(&kind) {
            return Err(Error::Registration(format!("penalty kind `{kind}` is already registered")));
        }
        self.rules.insert(kind, Arc::new(rule));
        Ok(())
    }

    pub fn contains(&self, kind: &str) -> bool {
        self.rules.contains_key(kind)
    }

    pub fn kinds(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }

    pub fn score(&self, vocab: &Vocab, prompt: &Prompt, rollout: &Rollout, penalty: &PenaltySpec) -> Result<RewardRecord> {
        let rule = self
            .rules
            .get(&penalty.kind)
            .ok_or_else(|| Error::UnknownPenalty(penalty.kind.clone()))?;
        if rollout.len() > penalty.target_length {
            return Err(Error::ContractViolation(format!(
                "rollout of length {} exceeds target length {}; truncation is enforced at sampling time",
                rollout.len(),
                penalty.target_length
            )));
        }
        let correctness = if verify(vocab, prompt, rollout) { 1.0 } else { 0.0 };
        let shaped = rule.shape(rollout, correctness, penalty.target_length);
        Ok(RewardRecord {
            correctness,
            penalty_applied: shaped.penalty_applied,
            final_reward: shaped.final_reward,
        })
    }
}

/// Score with the built-in registry (truncation only).
pub fn score(vocab: &Vocab, prompt: &Prompt, rollout: &Rollout, penalty: &PenaltySpec) -> Result<RewardRecord> {
    PenaltyRegistry::default().score(vocab, prompt, rollout, penalty)
}
