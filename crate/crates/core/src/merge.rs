//! Update-selective merging: keep only the largest-magnitude parameter deltas
//! of a fine-tuned snapshot, scale them, and add them back onto the base.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::checkpoint::{self, CheckpointHeader, FORMAT_VERSION};
use crate::policy::PolicyParams;

pub const DEFAULT_TOP_FRACTION: f64 = 0.25;
pub const DEFAULT_SCALE: f64 = 0.7;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSnapshot {
    pub version: u32,
    pub state_count: u32,
    pub vocab_size: u32,
    pub values: Vec<f64>,
}

impl ParamSnapshot {
    pub fn new(state_count: u32, vocab_size: u32, values: Vec<f64>) -> Result<Self> {
        let s = Self {
            version: FORMAT_VERSION,
            state_count,
            vocab_size,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    /// A snapshot with no real shape, for plain vectors.
    pub fn from_vec(values: Vec<f64>) -> Result<Self> {
        Self::new(1, values.len() as u32, values)
    }

    pub fn from_params(params: &PolicyParams) -> Self {
        Self {
            version: FORMAT_VERSION,
            state_count: params.state_count() as u32,
            vocab_size: params.vocab_size() as u32,
            values: params.logits().to_vec(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.values.len() != self.state_count as usize * self.vocab_size as usize {
            return Err(Error::Alignment(format!(
                "snapshot shape {}x{} does not match {} values",
                self.state_count,
                self.vocab_size,
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericalFailure("snapshot contains non-finite values".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            version: self.version,
            state_count: self.state_count,
            vocab_size: self.vocab_size,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        checkpoint::encode(self.header(), &self.values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (h, values) = checkpoint::decode(bytes)?;
        let s = Self {
            version: h.version,
            state_count: h.state_count,
            vocab_size: h.vocab_size,
            values,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        checkpoint::write_atomic(path, &self.to_bytes()?)
    }

    fn check_compatible(&self, other: &ParamSnapshot) -> Result<()> {
        if self.version != other.version {
            return Err(Error::Incompatible(format!(
                "format versions differ: {} vs {}",
                self.version, other.version
            )));
        }
        if (self.state_count, self.vocab_size) != (other.state_count, other.vocab_size) {
            return Err(Error::Incompatible(format!(
                "shapes differ: {}x{} vs {}x{}",
                self.state_count, self.vocab_size, other.state_count, other.vocab_size
            )));
        }
        Ok(())
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }
}

/// `ceil(fraction * len)`, treating values within 1e-9 of an integer as that
/// integer so that e.g. 0.1 * 30 keeps 3 entries.
pub fn kept_count(fraction: f64, len: usize) -> usize {
    let raw = fraction * len as f64;
    let k = if (raw - raw.round()).abs() < 1e-9 { raw.round() } else { raw.ceil() };
    (k as usize).min(len)
}

/// Indices of the `kept_count(fraction, len)` largest `|tuned - base|`
/// entries, ties broken by lower index, in ascending index order.
pub fn selected_indices(base: &ParamSnapshot, tuned: &ParamSnapshot, fraction: f64) -> Result<Vec<usize>> {
    base.check_compatible(tuned)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Domain(format!("top fraction {fraction} must be in (0, 1]")));
    }
    let magnitudes: Vec<f64> = base
        .values
        .iter()
        .zip(&tuned.values)
        .map(|(b, t)| (t - b).abs())
        .collect();
    let mut order: Vec<usize> = (0..magnitudes.len()).collect();
    order.sort_by(|&i, &j| magnitudes[j].total_cmp(&magnitudes[i]).then(i.cmp(&j)));
    order.truncate(kept_count(fraction, magnitudes.len()));
    order.sort_unstable();
    Ok(order)
}

/// `base + scale * mask(tuned - base)` with the mask keeping the top
/// `top_fraction` of deltas by magnitude across all parameters.
pub fn select_merge(base: &ParamSnapshot, tuned: &ParamSnapshot, top_fraction: f64, scale: f64) -> Result<ParamSnapshot> {
    if !scale.is_finite() {
        return Err(Error::Domain(format!("scale {scale} must be finite")));
    }
    let keep = selected_indices(base, tuned, top_fraction)?;
    let mut values = base.values.clone();
    for i in keep {
        values[i] = base.values[i] + scale * (tuned.values[i] - base.values[i]);
    }
    Ok(base.with_values(values))
}

/// `(1 - alpha) * base + alpha * tuned`, exact at both endpoints.
pub fn linear_merge(base: &ParamSnapshot, tuned: &ParamSnapshot, alpha: f64) -> Result<ParamSnapshot> {
    base.check_compatible(tuned)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!("alpha {alpha} must be in [0, 1]")));
    }
    let values = if alpha == 0.0 {
        base.values.clone()
    } else if alpha == 1.0 {
        tuned.values.clone()
    } else {
        base.values
            .iter()
            .zip(&tuned.values)
            .map(|(b, t)| (1.0 - alpha) * b + alpha * t)
            .collect()
    };
    Ok(base.with_values(values))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "strategy")]
pub enum MergeStrategy {
    Select { top_fraction: f64, scale: f64 },
    Linear { alpha: f64 },
}

impl Default for MergeStrategy {
    fn default() -> Self {
        MergeStrategy::Select {
            top_fraction: DEFAULT_TOP_FRACTION,
            scale: DEFAULT_SCALE,
        }
    }
}

pub fn merge(base: &ParamSnapshot, tuned: &ParamSnapshot, strategy: MergeStrategy) -> Result<ParamSnapshot> {
    match strategy {
        MergeStrategy::Select { top_fraction, scale } => select_merge(base, tuned, top_fraction, scale),
        MergeStrategy::Linear { alpha } => linear_merge(base, tuned, alpha),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn snap(v: &[f64]) -> ParamSnapshot {
        ParamSnapshot::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_example() {
        let merged = select_merge(&snap(&[1., 2., 3., 4.]), &snap(&[1.1, 2.0, 3.5, 3.0]), 0.25, 0.7).unwrap();
        assert_eq!(merged.values[..3], [1.0, 2.0, 3.0]);
        assert!((merged.values[3] - 3.3).abs() < 1e-15);
        assert_eq!(merged.values[3], 4.0 + 0.7 * (3.0 - 4.0));
    }

    #[test]
    fn defaults() {
        assert_eq!(
            MergeStrategy::default(),
            MergeStrategy::Select {
                top_fraction: 0.25,
                scale: 0.7
            }
        );
    }

    #[test]
    fn ties_prefer_lower_index() {
        let keep = selected_indices(&snap(&[0.; 4]), &snap(&[1., -1., 1., 0.5]), 0.5).unwrap();
        assert_eq!(keep, vec![0, 1]);
    }

    #[test]
    fn kept_count_rounding() {
        assert_eq!(kept_count(0.25, 4), 1);
        assert_eq!(kept_count(0.1, 30), 3);
        assert_eq!(kept_count(0.26, 4), 2);
        assert_eq!(kept_count(1.0, 7), 7);
        assert_eq!(kept_count(0.01, 7), 1);
    }

    #[test]
    fn linear_endpoints() {
        let b = snap(&[0.0, 2.0]);
        let t = snap(&[2.0, 0.0]);
        assert_eq!(linear_merge(&b, &t, 0.0).unwrap(), b);
        assert_eq!(linear_merge(&b, &t, 1.0).unwrap(), t);
        assert_eq!(linear_merge(&b, &t, 0.5).unwrap().values, vec![1.0, 1.0]);
        assert!(linear_merge(&b, &t, 1.5).is_err());
    }

    #[test]
    fn incompatible_inputs() {
        let a = snap(&[1.0, 2.0]);
        let b = snap(&[1.0, 2.0, 3.0]);
        assert!(matches!(select_merge(&a, &b, 0.5, 1.0), Err(Error::Incompatible(_))));
        let mut c = a.clone();
        c.version = 2;
        assert!(matches!(linear_merge(&a, &c, 0.5), Err(Error::Incompatible(_))));
        assert!(select_merge(&a, &a, 0.0, 1.0).is_err());
    }

    fn pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (1usize..40).prop_flat_map(|n| {
            (
                prop::collection::vec(-5.0..5.0f64, n),
                prop::collection::vec(prop_oneof![Just(0.0), -3.0..3.0f64], n),
            )
        })
    }

    proptest! {
        #[test]
        fn full_merge_returns_tuned((base, delta) in pair()) {
            let tuned: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
            let merged = select_merge(&snap(&base), &snap(&tuned), 1.0, 1.0).unwrap();
            prop_assert_eq!(merged.values, tuned);
        }

        #[test]
        fn identical_inputs_are_fixed_points((base, _) in pair(), frac in 0.01..1.0f64, scale in -2.0..2.0f64) {
            let merged = select_merge(&snap(&base), &snap(&base), frac, scale).unwrap();
            prop_assert_eq!(merged.values, base);
        }

        #[test]
        fn changed_coordinates_are_the_kept_ones((base, delta) in pair(), frac in 0.01..1.0f64) {
            let tuned: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
            let (bs, ts) = (snap(&base), snap(&tuned));
            let keep = selected_indices(&bs, &ts, frac).unwrap();
            prop_assert_eq!(keep.len(), kept_count(frac, base.len()));
            let merged = select_merge(&bs, &ts, frac, 0.7).unwrap();
            let changed: Vec<usize> = (0..base.len()).filter(|&i| merged.values[i] != base[i]).collect();
            let expected: Vec<usize> = keep.iter().copied().filter(|&i| 0.7 * (tuned[i] - base[i]) + base[i] != base[i]).collect();
            prop_assert_eq!(changed, expected);
        }

        #[test]
        fn selection_depends_only_on_delta_magnitude((base, delta) in pair(), frac in 0.01..1.0f64) {
            let tuned: Vec<f64> = base.iter().zip(&delta).map(|(b, d)| b + d).collect();
            let a = selected_indices(&snap(&base), &snap(&tuned), frac).unwrap();
            let magnitudes: Vec<f64> = base.iter().zip(&tuned).map(|(b, t)| (t - b).abs()).collect();
            let b = selected_indices(&snap(&vec![0.0; base.len()]), &snap(&magnitudes), frac).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn snapshot_bytes_round_trip(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 0..64)) {
            let s = snap(&values);
            let back = ParamSnapshot::from_bytes(&s.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(back.values.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                            values.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
}
