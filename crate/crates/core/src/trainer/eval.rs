use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{PolicyParams, Rollout};
use crate::rng::{self, purpose};
use crate::tasks::{verify, Prompt};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub difficulty: u32,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_length: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub max_len: usize,
    pub samples: usize,
    pub accuracy: f64,
    pub mean_length: f64,
    pub levels: Vec<LevelReport>,
}

/// Sample `samples_per_prompt` responses for every prompt at cutoff `max_len`
/// and report accuracy (verified and not truncated) and mean length.
pub fn evaluate(
    params: &PolicyParams,
    prompts: &[Prompt],
    max_len: usize,
    samples_per_prompt: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_with_rollouts(params, prompts, max_len, samples_per_prompt, seed).map(|(r, _)| r)
}

/// Like [`evaluate`], also returning every rollout with its correctness.
pub fn evaluate_with_rollouts(
    params: &PolicyParams,
    prompts: &[Prompt],
    max_len: usize,
    samples_per_prompt: usize,
    seed: u64,
) -> Result<(EvalReport, Vec<(Prompt, Rollout, bool)>)> {
    if prompts.is_empty() || samples_per_prompt == 0 {
        return Err(Error::EmptyInput);
    }
    let per_prompt: Vec<Vec<(Rollout, bool)>> = prompts
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut r = rng::stream(seed, &[purpose::EVAL, i as u64]);
            (0..samples_per_prompt)
                .map(|_| {
                    let rollout = params.sample_rollout(p, max_len, &mut r)?;
                    let ok = verify(params.vocab(), p, &rollout);
                    Ok((rollout, ok))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let mut levels: Vec<LevelReport> = Vec::new();
    let (mut correct, mut length, mut count) = (0usize, 0usize, 0usize);
    let mut all = Vec::with_capacity(prompts.len() * samples_per_prompt);
    for (p, rows) in prompts.iter().zip(per_prompt) {
        let idx = match levels.iter().position(|l| l.difficulty == p.difficulty) {
            Some(i) => i,
            None => {
                levels.push(LevelReport {
                    difficulty: p.difficulty,
                    samples: 0,
                    accuracy: 0.0,
                    mean_length: 0.0,
                });
                levels.len() - 1
            }
        };
        for (rollout, ok) in rows {
            let lvl = &mut levels[idx];
            lvl.samples += 1;
            lvl.accuracy += f64::from(u8::from(ok));
            lvl.mean_length += rollout.len() as f64;
            correct += usize::from(ok);
            length += rollout.len();
            count += 1;
            all.push((p.clone(), rollout, ok));
        }
    }
    for l in &mut levels {
        l.accuracy /= l.samples as f64;
        l.mean_length /= l.samples as f64;
    }
    levels.sort_by_key(|l| l.difficulty);
    Ok((
        EvalReport {
            max_len,
            samples: count,
            accuracy: correct as f64 / count as f64,
            mean_length: length as f64 / count as f64,
            levels,
        },
        all,
    ))
}
