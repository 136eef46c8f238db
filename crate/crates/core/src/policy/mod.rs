//! Tabular autoregressive softmax policy: sampling, exact log-probabilities,
//! entropies, and the clipped-surrogate gradient.

pub mod checkpoint;
mod gradient;
mod params;
mod vocab;

pub use gradient::{classify_token, surrogate_gradient, ClipClass, ClipRange, Gradient};
pub(crate) use gradient::check_alignment;
pub use params::{position_bucket, PolicyParams, Rollout, POSITION_BUCKETS};
pub use vocab::{TokenId, TokenRole, Vocab};

use std::path::Path;

use crate::error::{Error, Result};

impl PolicyParams {
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(
            checkpoint::CheckpointHeader {
                version: checkpoint::FORMAT_VERSION,
                state_count: self.state_count() as u32,
                vocab_size: self.vocab_size() as u32,
            },
            self.logits(),
        )
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_checkpoint_bytes()?)
    }

    /// Load logits into this policy's layout. The file must match its shape.
    pub fn load_checkpoint(&self, path: &Path) -> Result<PolicyParams> {
        let (header, values) = checkpoint::decode(&std::fs::read(path)?)?;
        if header.state_count as usize != self.state_count() || header.vocab_size as usize != self.vocab_size() {
            return Err(Error::Incompatible(format!(
                "checkpoint is {}x{}, policy is {}x{}",
                header.state_count,
                header.vocab_size,
                self.state_count(),
                self.vocab_size()
            )));
        }
        self.with_logits(values)
    }
}
