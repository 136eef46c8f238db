use serde::{Deserialize, Serialize};

use crate::policy::{TokenId, TokenRole, Vocab};

/// Transition keywords counted in reasoning traces.
pub const DEFAULT_KEYWORDS: [&str; 11] = [
    "But",
    "Wait",
    "Alternatively",
    "However",
    "Hmm",
    "Hmmm",
    "Not sure",
    "Going back",
    "Backtrack",
    "Trace back",
    "Another",
];

pub const STEP_DELIMITER: &str = "\n\n";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub id: String,
    pub text: String,
    pub correct: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub responses: usize,
    pub total_steps: usize,
    pub total_tokens: usize,
    pub total_keywords: usize,
    /// Mean steps per response.
    pub step_count: f64,
    pub mean_tokens_per_step: f64,
    /// Mean keyword occurrences per response.
    pub keyword_count: f64,
}

impl SplitStats {
    fn add(&mut self, steps: usize, tokens: usize, keywords: usize) {
        self.responses += 1;
        self.total_steps += steps;
        self.total_tokens += tokens;
        self.total_keywords += keywords;
    }

    fn finish(mut self) -> Self {
        if self.responses > 0 {
            self.step_count = self.total_steps as f64 / self.responses as f64;
            self.keyword_count = self.total_keywords as f64 / self.responses as f64;
        }
        if self.total_steps > 0 {
            self.mean_tokens_per_step = self.total_tokens as f64 / self.total_steps as f64;
        }
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TraceStats {
    pub overall: SplitStats,
    pub correct: SplitStats,
    pub incorrect: SplitStats,
}

/// Non-blank segments between double-newline delimiters.
pub fn segment_steps(text: &str) -> Vec<&str> {
    text.split(STEP_DELIMITER)
        .filter(|s| !s.trim().is_empty())
        .collect()
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Case-sensitive whole-word occurrences of any keyword. Multi-word keywords
/// match as literal substrings bounded by non-word characters.
pub fn count_keywords<S: AsRef<str>>(text: &str, keywords: &[S]) -> usize {
    keywords
        .iter()
        .map(|k| {
            let k = k.as_ref();
            if k.is_empty() {
                return 0;
            }
            text.match_indices(k)
                .filter(|(i, m)| {
                    let before = text[..*i].chars().next_back();
                    let after = text[i + m.len()..].chars().next();
                    !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
                })
                .count()
        })
        .sum()
}

pub fn trace_stats<S: AsRef<str>>(records: &[TraceRecord], keywords: &[S]) -> TraceStats {
    let mut stats = TraceStats::default();
    for r in records {
        let steps = segment_steps(&r.text);
        let tokens: usize = steps.iter().map(|s| s.split_whitespace().count()).sum();
        let kw = count_keywords(&r.text, keywords);
        stats.overall.add(steps.len(), tokens, kw);
        if r.correct {
            stats.correct.add(steps.len(), tokens, kw);
        } else {
            stats.incorrect.add(steps.len(), tokens, kw);
        }
    }
    TraceStats {
        overall: stats.overall.finish(),
        correct: stats.correct.finish(),
        incorrect: stats.incorrect.finish(),
    }
}

const TRANSITION_WORDS: [&str; 3] = ["Wait", "But", "Hmm"];

/// Render a synthetic rollout as text: step delimiters become the
/// double-newline delimiter and transition tokens become keywords, so the
/// text analyzer applies unchanged.
pub fn rollout_to_text(vocab: &Vocab, tokens: &[TokenId]) -> String {
    let transitions = vocab.tokens_with_role(|r| r == TokenRole::Transition);
    let mut segments: Vec<Vec<String>> = vec![Vec::new()];
    for &tok in tokens {
        let word = match vocab.role(tok) {
            Ok(TokenRole::StepDelimiter) => {
                segments.push(Vec::new());
                continue;
            }
            Ok(TokenRole::Eos) | Err(_) => continue,
            Ok(TokenRole::Filler) => "so".to_string(),
            Ok(TokenRole::Step) => "step".to_string(),
            Ok(TokenRole::Answer(k)) => format!("answer{k}"),
            Ok(TokenRole::Transition) => {
                let i = transitions.iter().position(|&t| t == tok).unwrap_or(0);
                TRANSITION_WORDS[i % TRANSITION_WORDS.len()].to_string()
            }
        };
        segments.last_mut().expect("non-empty").push(word);
    }
    segments
        .iter()
        .map(|s| s.join(" "))
        .collect::<Vec<_>>()
        .join(STEP_DELIMITER)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(text: &str, correct: bool) -> TraceRecord {
        TraceRecord {
            id: "r".into(),
            text: text.into(),
            correct,
        }
    }

    #[test]
    fn hand_counted_example() {
        let s = trace_stats(&[record("Wait\n\nBut then\n\nDone", true)], &DEFAULT_KEYWORDS);
        assert_eq!(s.overall.total_steps, 3);
        assert_eq!(s.overall.total_keywords, 2);
        assert_eq!(s.overall.step_count, 3.0);
        assert_eq!(s.overall.keyword_count, 2.0);
        assert_eq!(s.overall.total_tokens, 4);
        assert_eq!(s.correct, s.overall);
        assert_eq!(s.incorrect.responses, 0);
    }

    #[test]
    fn empty_text() {
        let s = trace_stats(&[record("", false)], &DEFAULT_KEYWORDS);
        assert_eq!(s.overall.total_steps, 0);
        assert_eq!(s.overall.total_keywords, 0);
        assert_eq!(s.overall.mean_tokens_per_step, 0.0);
    }

    #[test]
    fn whole_word_case_sensitive() {
        let kw = DEFAULT_KEYWORDS;
        assert_eq!(count_keywords("Hmmm, Hmm.", &kw), 2);
        assert_eq!(count_keywords("wait Waiting Wait", &kw), 1);
        assert_eq!(count_keywords("I'm Not sure. Not surely", &kw), 1);
        assert_eq!(count_keywords("Butter But_x (But)", &kw), 1);
        assert_eq!(count_keywords("Going back and Trace back", &kw), 2);
    }

    #[test]
    fn keyword_list() {
        let want = [
            "But", "Wait", "Alternatively", "However", "Hmm", "Hmmm", "Not sure", "Going back", "Backtrack",
            "Trace back", "Another",
        ];
        assert_eq!(DEFAULT_KEYWORDS, want);
    }

    #[test]
    fn splits_by_correctness() {
        let s = trace_stats(
            &[record("a b\n\nc", true), record("Wait x\n\nBut\n\nHmm y z", false)],
            &DEFAULT_KEYWORDS,
        );
        assert_eq!(s.correct.total_steps, 2);
        assert_eq!(s.incorrect.total_steps, 3);
        assert_eq!(s.overall.total_steps, 5);
        assert_eq!(s.overall.total_keywords, s.correct.total_keywords + s.incorrect.total_keywords);
        assert_eq!(s.incorrect.total_keywords, 3);
        assert_eq!(s.overall.step_count, 2.5);
        assert_eq!(s.overall.mean_tokens_per_step, 9.0 / 5.0);
    }

    #[test]
    fn synthetic_rollout_text() {
        let v = Vocab::desk_default();
        // filler, transition#0, delimiter, step, transition#1, answer(1), eos
        let text = rollout_to_text(&v, &[0, 7, 14, 6, 8, 10, 15]);
        assert_eq!(text, "so Wait\n\nstep But answer1");
        let s = trace_stats(&[record(&text, true)], &DEFAULT_KEYWORDS);
        assert_eq!(s.overall.total_steps, 2);
        assert_eq!(s.overall.total_keywords, 2);
    }
}
