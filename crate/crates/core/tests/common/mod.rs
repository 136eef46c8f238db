//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use dler_core::advantage::{AdvantageMode, AdvantageSet, Batch, Group};
use dler_core::policy::{ClipRange, PolicyParams, Rollout, TokenId, TokenRole, Vocab};
use dler_core::tasks::Prompt;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Log-softmax written out directly, without the library's helpers.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row.iter().map(|x| (x - m).exp()).sum();
    row.iter().map(|x| x - m - z.ln()).collect()
}

/// State index for the tabular layout: (class, prev-or-start, bucket).
pub fn state_index(vocab_size: usize, difficulty: u32, prev: Option<TokenId>, pos: usize) -> usize {
    let bucket = match pos {
        0 => 0,
        1 => 1,
        2 | 3 => 2,
        4..=7 => 3,
        8..=15 => 4,
        _ => 5,
    };
    let prev_slot = prev.map_or(vocab_size, |t| t as usize);
    ((difficulty as usize - 1) * (vocab_size + 1) + prev_slot) * 6 + bucket
}

pub fn token_logprobs(logits: &[f64], v: usize, prompt: &Prompt, tokens: &[TokenId]) -> Vec<f64> {
    let mut prev = None;
    tokens
        .iter()
        .enumerate()
        .map(|(pos, &tok)| {
            let s = state_index(v, prompt.difficulty, prev, pos);
            prev = Some(tok);
            log_softmax(&logits[s * v..(s + 1) * v])[tok as usize]
        })
        .collect()
}

/// The clipped surrogate objective evaluated term by term.
pub fn objective(
    logits: &[f64],
    v: usize,
    batch: &Batch,
    advantages: &[Vec<Vec<f64>>],
    clip: ClipRange,
    kl_coef: f64,
    ref_logits: &[f64],
) -> f64 {
    let n: usize = batch.groups.iter().map(|g| g.rollouts.len()).sum();
    let mut total = 0.0;
    for (g, adv) in batch.groups.iter().zip(advantages) {
        for (r, a) in g.rollouts.iter().zip(adv) {
            let lp = token_logprobs(logits, v, &g.prompt, &r.tokens);
            let lp_ref = token_logprobs(ref_logits, v, &g.prompt, &r.tokens);
            let mut sum = 0.0;
            for t in 0..r.tokens.len() {
                let s = (lp[t] - r.old_logprobs[t]).exp();
                let clipped = s.clamp(1.0 - clip.low, 1.0 + clip.high);
                sum += (s * a[t]).min(clipped * a[t]);
                sum -= kl_coef * 0.5 * (lp[t] - lp_ref[t]).powi(2);
            }
            total += sum / r.tokens.len() as f64;
        }
    }
    total / n as f64
}

/// Five-token vocabulary with two answer levels.
pub fn tiny_vocab() -> Vocab {
    Vocab::new(vec![
        TokenRole::Filler,
        TokenRole::Step,
        TokenRole::Answer(1),
        TokenRole::Answer(2),
        TokenRole::Eos,
    ])
    .unwrap()
}

pub fn prompt(id: u64, difficulty: u32, vocab: &Vocab) -> Prompt {
    Prompt {
        id,
        difficulty,
        answer_token: vocab.answer_token(difficulty).unwrap(),
    }
}

pub fn random_params(vocab: &Vocab, classes: usize, scale: f64, rng: &mut ChaCha8Rng) -> PolicyParams {
    let p = PolicyParams::uniform(vocab.clone(), classes);
    let logits = (0..p.logits().len()).map(|_| rng.random_range(-scale..scale)).collect();
    p.with_logits(logits).unwrap()
}

pub struct Instance {
    pub params: PolicyParams,
    pub reference: PolicyParams,
    pub batch: Batch,
    pub advantages: AdvantageSet,
}

/// 2 prompts, G = 2, responses of 1..=4 tokens. Old log-probs come from a
/// perturbation of `params`, so importance ratios spread around 1.
pub fn random_instance(rng: &mut ChaCha8Rng, per_token_advantages: bool) -> Instance {
    let vocab = tiny_vocab();
    let v = vocab.size();
    let params = random_params(&vocab, 2, 1.5, rng);
    let reference = random_params(&vocab, 2, 1.5, rng);
    let old: Vec<f64> = params.logits().iter().map(|z| z + rng.random_range(-0.4..0.4)).collect();
    let mut groups = Vec::new();
    let mut adv = Vec::new();
    for (id, d) in [(0u64, 1u32), (1, 2)] {
        let p = prompt(id, d, &vocab);
        let mut rollouts = Vec::new();
        let mut adv_rows = Vec::new();
        for _ in 0..2 {
            let len = rng.random_range(1..=4);
            let tokens: Vec<TokenId> = (0..len).map(|_| rng.random_range(0..v as TokenId)).collect();
            let old_logprobs = token_logprobs(&old, v, &p, &tokens);
            let a = rng.random_range(-2.0..2.0);
            adv_rows.push(
                (0..len)
                    .map(|_| if per_token_advantages { rng.random_range(-2.0..2.0) } else { a })
                    .collect::<Vec<f64>>(),
            );
            rollouts.push(Rollout {
                old_entropies: vec![0.5; len],
                tokens,
                old_logprobs,
                truncated: false,
            });
        }
        groups.push(Group::new(p, rollouts, vec![0.0, 1.0]).unwrap());
        adv.push(adv_rows);
    }
    Instance {
        params,
        reference,
        batch: Batch::new(groups),
        advantages: AdvantageSet::from_token_values(AdvantageMode::Grpo, adv),
    }
}

/// Smallest distance from any token's importance ratio to a clip boundary.
pub fn boundary_distance(inst: &Instance, clip: ClipRange) -> f64 {
    let v = inst.params.vocab_size();
    let mut best = f64::INFINITY;
    for g in &inst.batch.groups {
        for r in &g.rollouts {
            let lp = token_logprobs(inst.params.logits(), v, &g.prompt, &r.tokens);
            for t in 0..r.tokens.len() {
                let s = (lp[t] - r.old_logprobs[t]).exp();
                best = best.min((s - (1.0 - clip.low)).abs()).min((s - (1.0 + clip.high)).abs());
            }
        }
    }
    best
}

/// Central finite differences of `objective` over every logit.
pub fn finite_difference(inst: &Instance, clip: ClipRange, kl_coef: f64, h: f64) -> Vec<f64> {
    let v = inst.params.vocab_size();
    let adv = inst.advantages.token_values();
    let mut z = inst.params.logits().to_vec();
    let mut out = vec![0.0; z.len()];
    for i in 0..z.len() {
        let orig = z[i];
        z[i] = orig + h;
        let up = objective(&z, v, &inst.batch, adv, clip, kl_coef, inst.reference.logits());
        z[i] = orig - h;
        let down = objective(&z, v, &inst.batch, adv, clip, kl_coef, inst.reference.logits());
        z[i] = orig;
        out[i] = (up - down) / (2.0 * h);
    }
    out
}

/// `||a - b|| / max(||a||, ||b||)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
