use serde::{Deserialize, Serialize};

use super::params::{log_softmax_into, PolicyParams};
use crate::advantage::{AdvantageSet, Batch};
use crate::error::{Error, Result};

/// Dense gradient with the same layout as the policy's logit table.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    state_count: usize,
    vocab_size: usize,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(state_count: usize, vocab_size: usize) -> Self {
        Self {
            state_count,
            vocab_size,
            values: vec![0.0; state_count * vocab_size],
        }
    }

    pub fn from_values(state_count: usize, vocab_size: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != state_count * vocab_size {
            return Err(Error::Alignment(format!(
                "gradient has {} entries, expected {state_count}x{vocab_size}",
                values.len()
            )));
        }
        Ok(Self {
            state_count,
            vocab_size,
            values,
        })
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

/// Asymmetric clip range `[1 - low, 1 + high]` for the importance ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub low: f64,
    pub high: f64,
}

impl ClipRange {
    pub fn new(low: f64, high: f64) -> Result<Self> {
        if !(low > 0.0 && high > 0.0 && low.is_finite() && high.is_finite()) {
            return Err(Error::Config(format!(
                "clip thresholds must be positive, got low={low} high={high}"
            )));
        }
        Ok(Self { low, high })
    }

    pub fn symmetric(eps: f64) -> Result<Self> {
        Self::new(eps, eps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClipClass {
    Unclipped,
    ClippedHigh,
    ClippedLow,
}

/// Which branch of `min(s*A, clip(s)*A)` is active. A token whose min picks
/// the constant clipped value has no gradient.
pub fn classify_token(ratio: f64, advantage: f64, clip: ClipRange) -> ClipClass {
    if advantage > 0.0 && ratio > 1.0 + clip.high {
        ClipClass::ClippedHigh
    } else if advantage < 0.0 && ratio < 1.0 - clip.low {
        ClipClass::ClippedLow
    } else {
        ClipClass::Unclipped
    }
}

pub(crate) fn check_alignment(batch: &Batch, advantages: &AdvantageSet) -> Result<()> {
    let values = advantages.token_values();
    if values.len() != batch.groups.len() {
        return Err(Error::Alignment(format!(
            "{} advantage groups for {} batch groups",
            values.len(),
            batch.groups.len()
        )));
    }
    for (gi, (group, adv)) in batch.groups.iter().zip(values).enumerate() {
        if adv.len() != group.rollouts.len() {
            return Err(Error::Alignment(format!(
                "group {gi}: {} advantage rows for {} rollouts",
                adv.len(),
                group.rollouts.len()
            )));
        }
        for (ri, (rollout, a)) in group.rollouts.iter().zip(adv).enumerate() {
            if a.len() != rollout.len() || rollout.old_logprobs.len() != rollout.len() {
                return Err(Error::Alignment(format!(
                    "group {gi} rollout {ri}: {} tokens, {} advantages, {} old log-probs",
                    rollout.len(),
                    a.len(),
                    rollout.old_logprobs.len()
                )));
            }
        }
    }
    Ok(())
}

/// Exact gradient (ascent direction) of
///
/// ```text
/// J = 1/N sum_i 1/|o_i| sum_t [ min(s_t A_t, clip(s_t, 1-low, 1+high) A_t)
///                               - kl_coef * 0.5 (log pi - log pi_ref)^2 ]
/// ```
///
/// where `s_t = pi(o_t) / pi_old(o_t)` with `pi_old` taken from the rollouts'
/// recorded log-probabilities and `N` the number of rollouts in the batch.
pub fn surrogate_gradient(
    params: &PolicyParams,
    batch: &Batch,
    advantages: &AdvantageSet,
    clip: ClipRange,
    kl_coef: f64,
    ref_params: &PolicyParams,
) -> Result<Gradient> {
    check_alignment(batch, advantages)?;
    if ref_params.state_count() != params.state_count() || ref_params.vocab_size() != params.vocab_size() {
        return Err(Error::Alignment("reference policy shape differs from params".into()));
    }
    let v = params.vocab_size();
    let mut grad = Gradient::zeros(params.state_count(), v);
    let n_rollouts: usize = batch.groups.iter().map(|g| g.rollouts.len()).sum();
    if n_rollouts == 0 {
        return Ok(grad);
    }
    let mut log_probs = vec![0.0; v];
    let mut ref_log_probs = vec![0.0; v];

    for (group, adv) in batch.groups.iter().zip(advantages.token_values()) {
        for (rollout, adv_tokens) in group.rollouts.iter().zip(adv) {
            if rollout.is_empty() {
                continue;
            }
            let weight = 1.0 / (n_rollouts as f64 * rollout.len() as f64);
            let states = params.states_along(&group.prompt, &rollout.tokens)?;
            for (t, &state) in states.iter().enumerate() {
                let tok = rollout.tokens[t] as usize;
                let row = &params.logits()[state * v..(state + 1) * v];
                log_softmax_into(row, &mut log_probs);
                let a = adv_tokens[t];
                let ratio = (log_probs[tok] - rollout.old_logprobs[t]).exp();

                // d/dlogpi of the surrogate term: A * s on the active branch.
                let mut coef = match classify_token(ratio, a, clip) {
                    ClipClass::Unclipped => a * ratio,
                    ClipClass::ClippedHigh | ClipClass::ClippedLow => 0.0,
                };
                if kl_coef != 0.0 {
                    let ref_row = &ref_params.logits()[state * v..(state + 1) * v];
                    log_softmax_into(ref_row, &mut ref_log_probs);
                    coef -= kl_coef * (log_probs[tok] - ref_log_probs[tok]);
                }
                if coef == 0.0 {
                    continue;
                }
                let coef = coef * weight;
                // dlogpi(tok)/dz_j = 1[j = tok] - p_j
                let out = &mut grad.values[state * v..(state + 1) * v];
                for (j, g) in out.iter_mut().enumerate() {
                    let indicator = if j == tok { 1.0 } else { 0.0 };
                    *g += coef * (indicator - log_probs[j].exp());
                }
            }
        }
    }
    Ok(grad)
}
