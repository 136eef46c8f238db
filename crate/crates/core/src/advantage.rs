//! Response-level advantage estimators.
//!
//! * `Grpo`: `A_i = (R_i - mean(R)) / (std(R) + eps)` within each prompt group.
//! * `BatchNorm`: center within the group, then standardize the centered
//!   values over the whole batch.
//!
//! Standard deviations are population (divisor N). Advantages are scalars per
//! response, broadcast to every token of that response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Rollout;
use crate::tasks::Prompt;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub prompt: Prompt,
    pub rollouts: Vec<Rollout>,
    pub rewards: Vec<f64>,
}

impl Group {
    pub fn new(prompt: Prompt, rollouts: Vec<Rollout>, rewards: Vec<f64>) -> Result<Self> {
        let g = Self {
            prompt,
            rollouts,
            rewards,
        };
        g.check()?;
        Ok(g)
    }

    pub fn size(&self) -> usize {
        self.rewards.len()
    }

    fn check(&self) -> Result<()> {
        if self.rollouts.len() != self.rewards.len() {
            return Err(Error::Alignment(format!(
                "group for prompt {} has {} rollouts and {} rewards",
                self.prompt.id,
                self.rollouts.len(),
                self.rewards.len()
            )));
        }
        if self.rewards.len() < 2 {
            return Err(Error::ContractViolation(format!(
                "group for prompt {} has {} rollouts; at least 2 are required",
                self.prompt.id,
                self.rewards.len()
            )));
        }
        Ok(())
    }

    /// Every reward is zero.
    pub fn all_zero(&self) -> bool {
        self.rewards.iter().all(|&r| r == 0.0)
    }

    /// Every reward is strictly positive.
    pub fn all_positive(&self) -> bool {
        self.rewards.iter().all(|&r| r > 0.0)
    }

    pub fn is_constant(&self) -> bool {
        self.rewards.windows(2).all(|w| w[0] == w[1])
    }
}

/// The groups that take part in one policy update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub groups: Vec<Group>,
}

impl Batch {
    pub fn new(groups: Vec<Group>) -> Self {
        Self { groups }
    }

    pub fn rollout_count(&self) -> usize {
        self.groups.iter().map(|g| g.rollouts.len()).sum()
    }

    pub fn token_count(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| &g.rollouts)
            .map(Rollout::len)
            .sum()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvantageMode {
    Grpo,
    #[default]
    BatchNorm,
}

/// Per-token advantages indexed `[group][rollout][token]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageSet {
    mode: AdvantageMode,
    values: Vec<Vec<Vec<f64>>>,
}

impl AdvantageSet {
    /// Broadcast one scalar per rollout over that rollout's tokens.
    pub fn broadcast(batch: &Batch, mode: AdvantageMode, scalars: &[Vec<f64>]) -> Result<Self> {
        if scalars.len() != batch.groups.len() {
            return Err(Error::Alignment(format!(
                "{} scalar rows for {} groups",
                scalars.len(),
                batch.groups.len()
            )));
        }
        let mut values = Vec::with_capacity(scalars.len());
        for (group, row) in batch.groups.iter().zip(scalars) {
            if row.len() != group.rollouts.len() {
                return Err(Error::Alignment(format!(
                    "{} advantages for {} rollouts",
                    row.len(),
                    group.rollouts.len()
                )));
            }
            if row.iter().any(|a| !a.is_finite()) {
                return Err(Error::NumericalFailure("non-finite advantage".into()));
            }
            values.push(
                group
                    .rollouts
                    .iter()
                    .zip(row)
                    .map(|(r, &a)| vec![a; r.len()])
                    .collect(),
            );
        }
        Ok(Self { mode, values })
    }

    /// Arbitrary per-token values, for crafted analyses.
    pub fn from_token_values(mode: AdvantageMode, values: Vec<Vec<Vec<f64>>>) -> Self {
        Self { mode, values }
    }

    pub fn mode(&self) -> AdvantageMode {
        self.mode
    }

    pub fn token_values(&self) -> &[Vec<Vec<f64>>] {
        &self.values
    }

    /// The response-level value of each rollout (its first token's value).
    pub fn scalars(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|g| g.iter().map(|r| r.first().copied().unwrap_or(0.0)).collect())
            .collect()
    }

    /// Restrict to a contiguous range of groups.
    pub fn slice_groups(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            mode: self.mode,
            values: self.values[range].to_vec(),
        }
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64], mean: f64) -> f64 {
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

fn check_eps(eps_std: f64) -> Result<()> {
    if !(eps_std >= 0.0 && eps_std.is_finite()) {
        return Err(Error::Config(format!("eps_std must be finite and >= 0, got {eps_std}")));
    }
    Ok(())
}

/// Group-normalized scalars for one group's rewards.
pub fn grpo_scalars(rewards: &[f64], eps_std: f64) -> Vec<f64> {
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; rewards.len()];
    }
    let m = mean(rewards);
    let s = population_std(rewards, m);
    rewards.iter().map(|r| (r - m) / (s + eps_std)).collect()
}

/// Group-normalized advantages for a single group.
pub fn grpo_advantage(group: &Group, eps_std: f64) -> Result<AdvantageSet> {
    group.check()?;
    check_eps(eps_std)?;
    let batch = Batch::new(vec![group.clone()]);
    AdvantageSet::broadcast(&batch, AdvantageMode::Grpo, &[grpo_scalars(&group.rewards, eps_std)])
}

/// Batch-wise normalization of group-centered rewards.
pub fn batch_norm_advantage(batch: &Batch, eps_std: f64) -> Result<AdvantageSet> {
    check_eps(eps_std)?;
    if batch.groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut centered = Vec::with_capacity(batch.groups.len());
    for g in &batch.groups {
        g.check()?;
        if g.is_constant() {
            centered.push(vec![0.0; g.size()]);
        } else {
            let m = mean(&g.rewards);
            centered.push(g.rewards.iter().map(|r| r - m).collect::<Vec<_>>());
        }
    }
    let flat: Vec<f64> = centered.iter().flatten().copied().collect();
    let scalars = if flat.iter().all(|&c| c == 0.0) {
        centered
    } else {
        let m = mean(&flat);
        let s = population_std(&flat, m);
        centered
            .into_iter()
            .map(|row| row.into_iter().map(|c| (c - m) / (s + eps_std)).collect())
            .collect()
    };
    AdvantageSet::broadcast(batch, AdvantageMode::BatchNorm, &scalars)
}

pub fn compute_advantages(batch: &Batch, mode: AdvantageMode, eps_std: f64) -> Result<AdvantageSet> {
    match mode {
        AdvantageMode::BatchNorm => batch_norm_advantage(batch, eps_std),
        AdvantageMode::Grpo => {
            check_eps(eps_std)?;
            let mut scalars = Vec::with_capacity(batch.groups.len());
            for g in &batch.groups {
                g.check()?;
                scalars.push(grpo_scalars(&g.rewards, eps_std));
            }
            AdvantageSet::broadcast(batch, AdvantageMode::Grpo, &scalars)
        }
    }
}

/// Mean over groups of the within-group population variance of rewards.
pub fn reward_variance_probe(groups: &[Group]) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for g in groups {
        g.check()?;
        let m = mean(&g.rewards);
        total += g.rewards.iter().map(|r| (r - m).powi(2)).sum::<f64>() / g.size() as f64;
    }
    Ok(total / groups.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn group(rewards: &[f64]) -> Group {
        let rollouts = rewards
            .iter()
            .enumerate()
            .map(|(i, _)| Rollout {
                tokens: vec![15; 1 + i % 3],
                old_logprobs: vec![-1.0; 1 + i % 3],
                old_entropies: vec![1.0; 1 + i % 3],
                truncated: false,
            })
            .collect();
        Group::new(
            Prompt {
                id: 0,
                difficulty: 1,
                answer_token: 10,
            },
            rollouts,
            rewards.to_vec(),
        )
        .unwrap()
    }

    fn scalars_of(set: &AdvantageSet) -> Vec<f64> {
        set.scalars().into_iter().flatten().collect()
    }

    #[test]
    fn grpo_examples() {
        let a = scalars_of(&grpo_advantage(&group(&[1.0, 0.0, 0.0, 1.0]), 0.0).unwrap());
        assert_eq!(a, vec![1.0, -1.0, -1.0, 1.0]);

        let a = scalars_of(&grpo_advantage(&group(&[0.3; 5]), 1e-8).unwrap());
        assert!(a.iter().all(|&x| x == 0.0));

        let a = scalars_of(&grpo_advantage(&group(&[1., 1., 0., 0., 0., 0., 0., 0.]), 0.0).unwrap());
        for (i, x) in a.iter().enumerate() {
            let want = if i < 2 { 3f64.sqrt() } else { -1.0 / 3f64.sqrt() };
            assert!((x - want).abs() < 1e-9, "{i}: {x}");
        }
    }

    #[test]
    fn tokens_share_the_response_value() {
        let set = grpo_advantage(&group(&[1.0, 0.0, 0.0]), 1e-8).unwrap();
        for (row, scalar) in set.token_values()[0].iter().zip(&set.scalars()[0]) {
            assert!(row.iter().all(|a| a == scalar));
        }
    }

    #[test]
    fn batch_norm_examples() {
        let batch = Batch::new(vec![group(&[1.0, 0.0]), group(&[1.0, 1.0])]);
        let a = scalars_of(&batch_norm_advantage(&batch, 0.0).unwrap());
        let want = [std::f64::consts::SQRT_2, -std::f64::consts::SQRT_2, 0.0, 0.0];
        for (x, w) in a.iter().zip(want) {
            assert!((x - w).abs() < 1e-9);
        }
        assert!((a[0] - 1.4142136).abs() < 1e-7);

        let constant = Batch::new(vec![group(&[1.0, 1.0]), group(&[0.0, 0.0, 0.0])]);
        assert!(scalars_of(&batch_norm_advantage(&constant, 1e-8).unwrap()).iter().all(|&x| x == 0.0));

        let g = group(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let single = scalars_of(&batch_norm_advantage(&Batch::new(vec![g.clone()]), 1e-8).unwrap());
        let grpo = scalars_of(&grpo_advantage(&g, 1e-8).unwrap());
        for (x, y) in single.iter().zip(&grpo) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(matches!(batch_norm_advantage(&Batch::default(), 0.0), Err(Error::EmptyInput)));
    }

    #[test]
    fn variance_probe_examples() {
        assert_eq!(reward_variance_probe(&[group(&[1.0, 1.0]), group(&[0.0; 4])]).unwrap(), 0.0);
        assert_eq!(reward_variance_probe(&[group(&[1.0, 0.0])]).unwrap(), 0.25);
        let v = reward_variance_probe(&[group(&[1.0, 0.0, 0.0, 0.0]), group(&[1.0, 1.0, 0.0, 0.0])]).unwrap();
        assert!((v - 0.21875).abs() < 1e-15);
    }

    #[test]
    fn groups_need_two_rollouts() {
        let err = Group::new(
            Prompt {
                id: 0,
                difficulty: 1,
                answer_token: 10,
            },
            vec![],
            vec![],
        );
        assert!(err.is_err());
    }

    fn rewards_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![Just(0.0), Just(1.0), -2.0..2.0f64], 2..12)
    }

    proptest! {
        #[test]
        fn grpo_is_centered_and_shift_invariant(rewards in rewards_strategy(), shift in -5.0..5.0f64) {
            let g = group(&rewards);
            let a = scalars_of(&grpo_advantage(&g, 1e-8).unwrap());
            let m = a.iter().sum::<f64>() / a.len() as f64;
            prop_assert!(m.abs() <= 1e-12 * (1.0 + a.iter().map(|x| x.abs()).sum::<f64>()));

            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let b = scalars_of(&grpo_advantage(&group(&shifted), 1e-8).unwrap());
            if g.is_constant() {
                prop_assert!(b.iter().all(|&x| x.abs() < 1e-6));
            } else {
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() < 1e-6, "{} vs {}", x, y);
                }
            }
        }

        #[test]
        fn batch_norm_is_standardized(groups in prop::collection::vec(rewards_strategy(), 1..6)) {
            let batch = Batch::new(groups.iter().map(|r| group(r)).collect());
            let a = scalars_of(&batch_norm_advantage(&batch, 0.0).unwrap());
            if batch.groups.iter().any(|g| !g.is_constant()) {
                let m = a.iter().sum::<f64>() / a.len() as f64;
                let s = (a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
                prop_assert!(m.abs() < 1e-9);
                prop_assert!((s - 1.0).abs() < 1e-9);
            } else {
                prop_assert!(a.iter().all(|&x| x == 0.0));
            }
        }
    }
}
