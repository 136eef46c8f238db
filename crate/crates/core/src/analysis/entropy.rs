use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyHistogram {
    /// Bins are `[i * width, (i + 1) * width)`, the last one closed at `max`.
    pub bin_width: f64,
    pub counts: Vec<usize>,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
    /// Standardized third central moment; 0 when the values are constant.
    pub skewness: f64,
}

impl EntropyHistogram {
    pub fn is_right_skewed(&self) -> bool {
        self.skewness > 0.0 && self.median < self.mean
    }
}

pub fn entropy_histogram(entropies: &[f64], bins: usize) -> Result<EntropyHistogram> {
    if entropies.is_empty() {
        return Err(Error::EmptyInput);
    }
    if bins == 0 {
        return Err(Error::Domain("histogram needs at least one bin".into()));
    }
    if let Some(e) = entropies.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(Error::Domain(format!("entropy {e} is negative or not finite")));
    }
    let n = entropies.len() as f64;
    let max = entropies.iter().copied().fold(0.0, f64::max);
    let bin_width = max / bins as f64;
    let mut counts = vec![0; bins];
    for &e in entropies {
        let i = if bin_width > 0.0 {
            ((e / bin_width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[i] += 1;
    }

    let mean = entropies.iter().sum::<f64>() / n;
    let m2 = entropies.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n;
    let m3 = entropies.iter().map(|e| (e - mean).powi(3)).sum::<f64>() / n;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };

    let mut sorted = entropies.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    let median = if sorted.len() % 2 == 0 {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    };

    Ok(EntropyHistogram {
        bin_width,
        counts,
        max,
        mean,
        median,
        skewness,
    })
}
