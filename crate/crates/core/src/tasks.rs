//! Synthetic chain tasks. A prompt of difficulty `d` is solved by emitting at
//! least `d` step tokens, then the level-`d` answer token, then eos. Filler,
//! transition and delimiter tokens are free to appear anywhere; they cost
//! length but not correctness.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{position_bucket, PolicyParams, Rollout, TokenId, TokenRole, Vocab, POSITION_BUCKETS};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: u64,
    pub difficulty: u32,
    pub answer_token: TokenId,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSuiteConfig {
    /// Inclusive `[d_min, d_max]`.
    pub difficulty_range: [u32; 2],
    pub prompts_per_level: usize,
    /// Initial logit boost on filler tokens.
    pub init_verbosity_bias: f64,
}

impl Default for TaskSuiteConfig {
    fn default() -> Self {
        Self {
            difficulty_range: [1, 4],
            prompts_per_level: 16,
            init_verbosity_bias: 2.0,
        }
    }
}

impl TaskSuiteConfig {
    pub fn validate(&self, vocab: &Vocab) -> Result<()> {
        let [lo, hi] = self.difficulty_range;
        if lo < 1 {
            return Err(Error::Config("tasks.difficulty_range: d_min must be at least 1".into()));
        }
        if hi < lo {
            return Err(Error::Config(format!(
                "tasks.difficulty_range: empty range [{lo}, {hi}]"
            )));
        }
        if self.prompts_per_level < 1 {
            return Err(Error::Config("tasks.prompts_per_level must be at least 1".into()));
        }
        if !(self.init_verbosity_bias >= 0.0 && self.init_verbosity_bias.is_finite()) {
            return Err(Error::Config("tasks.init_verbosity_bias must be finite and >= 0".into()));
        }
        for d in lo..=hi {
            if vocab.answer_token(d).is_none() {
                return Err(Error::Config(format!(
                    "tasks.difficulty_range: vocabulary has no answer token for level {d}"
                )));
            }
        }
        Ok(())
    }
}

/// `prompts_per_level` prompts at every difficulty level, shuffled under `rng`.
pub fn make_prompt_pool<R: Rng + ?Sized>(config: &TaskSuiteConfig, vocab: &Vocab, rng: &mut R) -> Result<Vec<Prompt>> {
    config.validate(vocab)?;
    let [lo, hi] = config.difficulty_range;
    let mut pool = Vec::with_capacity((hi - lo + 1) as usize * config.prompts_per_level);
    for d in lo..=hi {
        let answer_token = vocab.answer_token(d).expect("validated");
        for _ in 0..config.prompts_per_level {
            pool.push(Prompt {
                id: pool.len() as u64,
                difficulty: d,
                answer_token,
            });
        }
    }
    pool.shuffle(rng);
    Ok(pool)
}

/// Rule-based correctness: not truncated, at least `d` steps before the first
/// answer token, and that answer is the prompt's.
pub fn verify(vocab: &Vocab, prompt: &Prompt, rollout: &Rollout) -> bool {
    if rollout.truncated {
        return false;
    }
    let mut steps = 0u32;
    for &tok in &rollout.tokens {
        match vocab.role(tok) {
            Ok(TokenRole::Step) => steps += 1,
            Ok(TokenRole::Answer(_)) => return steps >= prompt.difficulty && tok == prompt.answer_token,
            Ok(_) => {}
            Err(_) => return false,
        }
    }
    false
}

/// Shortest correct response for difficulty `d`: d steps, the answer, eos.
pub fn minimal_correct_tokens(vocab: &Vocab, difficulty: u32) -> Option<Vec<TokenId>> {
    let step = *vocab.tokens_with_role(|r| r == TokenRole::Step).first()?;
    let answer = vocab.answer_token(difficulty)?;
    let mut tokens = vec![step; difficulty as usize];
    tokens.push(answer);
    tokens.push(vocab.eos());
    Some(tokens)
}

// Logit prior of the untrained "reasoner". It front-loads its steps and
// rarely picks a wrong answer, but once past the first few positions its urge
// to answer is flat: it keeps emitting fillers and transitions long after the
// answer was reachable, so it is accurate given room and verbose under a
// tight cutoff.
const STEP_BY_BUCKET: [f64; POSITION_BUCKETS] = [4.0, 4.0, 4.0, 3.0, 2.0, 2.0];
const ANSWER_BY_BUCKET: [f64; POSITION_BUCKETS] = [-3.0, -3.0, -2.0, 0.5, 0.5, 0.5];
const TRANSITION_LOGIT: f64 = 0.0;
const DELIMITER_LOGIT: f64 = 0.0;
const WRONG_ANSWER_LOGIT: f64 = -6.0;
const EOS_LOGIT: f64 = -3.0;
const EOS_AFTER_ANSWER_LOGIT: f64 = 7.0;
// Fillers run in a fixed cycle: the successor of the previous filler takes
// almost all of the filler mass, so only the decision to stop is uncertain.
const FILLER_SUCCESSOR_LOGIT: f64 = 1.75;
const FILLER_OTHER_LOGIT: f64 = -3.0;

/// Initial policy for the task suite: the reasoner prior plus
/// `init_verbosity_bias` on every filler token.
pub fn initial_policy(vocab: &Vocab, config: &TaskSuiteConfig) -> Result<PolicyParams> {
    config.validate(vocab)?;
    let num_classes = vocab.max_answer_level() as usize;
    let base = PolicyParams::uniform(vocab.clone(), num_classes);
    let v = vocab.size();
    let mut logits = vec![0.0; base.state_count() * v];
    let fillers = vocab.tokens_with_role(|r| r == TokenRole::Filler);
    for d in 1..=num_classes as u32 {
        for prev in std::iter::once(None).chain((0..v as TokenId).map(Some)) {
            let after_answer = matches!(prev.map(|t| vocab.role(t)), Some(Ok(TokenRole::Answer(_))));
            let next_filler = prev
                .and_then(|t| fillers.iter().position(|&f| f == t))
                .map_or(fillers.first().copied(), |i| Some(fillers[(i + 1) % fillers.len()]));
            for bucket_pos in [0usize, 1, 2, 4, 8, 16] {
                let state = base.state_id(d, prev, bucket_pos)?;
                let bucket = position_bucket(bucket_pos);
                let row = &mut logits[state * v..(state + 1) * v];
                for (tok, z) in row.iter_mut().enumerate() {
                    *z = match vocab.roles()[tok] {
                        TokenRole::Filler if Some(tok as TokenId) == next_filler => {
                            config.init_verbosity_bias + FILLER_SUCCESSOR_LOGIT
                        }
                        TokenRole::Filler => config.init_verbosity_bias + FILLER_OTHER_LOGIT,
                        TokenRole::Step => STEP_BY_BUCKET[bucket],
                        TokenRole::Transition => TRANSITION_LOGIT,
                        TokenRole::StepDelimiter => DELIMITER_LOGIT,
                        TokenRole::Answer(k) if k == d => ANSWER_BY_BUCKET[bucket],
                        TokenRole::Answer(_) => WRONG_ANSWER_LOGIT,
                        TokenRole::Eos if after_answer => EOS_AFTER_ANSWER_LOGIT,
                        TokenRole::Eos => EOS_LOGIT,
                    };
                }
            }
        }
    }
    base.with_logits(logits)
}
