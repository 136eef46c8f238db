//! Diagnostics: clip-class statistics, entropy distributions, reasoning-trace
//! statistics, and pass@k.

mod clip;
mod entropy;
mod passk;
mod trace;

pub use clip::{clip_stats, ClassStats, ClipStats};
pub use entropy::{entropy_histogram, EntropyHistogram};
pub use passk::pass_at_k;
pub use trace::{
    count_keywords, rollout_to_text, segment_steps, trace_stats, SplitStats, TraceRecord, TraceStats,
    DEFAULT_KEYWORDS, STEP_DELIMITER,
};
