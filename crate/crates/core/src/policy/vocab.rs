use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

/// What a token means to the task verifier and the trace analyzer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenRole {
    Filler,
    Step,
    Transition,
    /// Final answer for prompts of the given difficulty level.
    Answer(u32),
    StepDelimiter,
    Eos,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    roles: Vec<TokenRole>,
    eos: TokenId,
}

impl Vocab {
    pub fn new(roles: Vec<TokenRole>) -> Result<Self> {
        if roles.is_empty() {
            return Err(Error::InvalidVocab("vocabulary is empty".into()));
        }
        let eos: Vec<usize> = roles
            .iter()
            .enumerate()
            .filter(|(_, r)| **r == TokenRole::Eos)
            .map(|(i, _)| i)
            .collect();
        if eos.len() != 1 {
            return Err(Error::InvalidVocab(format!(
                "expected exactly one eos token, found {}",
                eos.len()
            )));
        }
        if roles.iter().any(|r| matches!(r, TokenRole::Answer(0))) {
            return Err(Error::InvalidVocab("answer levels start at 1".into()));
        }
        Ok(Self {
            roles,
            eos: eos[0] as TokenId,
        })
    }

    /// 16 tokens: 6 fillers, 1 step, 3 transitions, answers for levels 1..=4,
    /// 1 step delimiter, 1 eos.
    pub fn desk_default() -> Self {
        let mut roles = vec![TokenRole::Filler; 6];
        roles.push(TokenRole::Step);
        roles.extend([TokenRole::Transition; 3]);
        roles.extend((1..=4).map(TokenRole::Answer));
        roles.push(TokenRole::StepDelimiter);
        roles.push(TokenRole::Eos);
        Self::new(roles).expect("default vocabulary is valid")
    }

    pub fn size(&self) -> usize {
        self.roles.len()
    }

    pub fn role(&self, token: TokenId) -> Result<TokenRole> {
        self.roles
            .get(token as usize)
            .copied()
            .ok_or(Error::InvalidToken {
                token,
                vocab_size: self.roles.len(),
            })
    }

    pub fn roles(&self) -> &[TokenRole] {
        &self.roles
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn answer_token(&self, level: u32) -> Option<TokenId> {
        self.roles
            .iter()
            .position(|r| *r == TokenRole::Answer(level))
            .map(|i| i as TokenId)
    }

    /// Highest difficulty level that has an answer token.
    pub fn max_answer_level(&self) -> u32 {
        self.roles
            .iter()
            .filter_map(|r| match r {
                TokenRole::Answer(k) => Some(*k),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn tokens_with_role(&self, pred: impl Fn(TokenRole) -> bool) -> Vec<TokenId> {
        self.roles
            .iter()
            .enumerate()
            .filter(|(_, r)| pred(**r))
            .map(|(i, _)| i as TokenId)
            .collect()
    }
}
