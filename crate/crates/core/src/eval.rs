//! Performance indicators and flood-severity categories.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

fn check_pair(test: &[f64], predicted: &[f64]) -> Result<()> {
    if test.len() != predicted.len() {
        return shape_err(format!(
            "{} test values against {} predictions",
            test.len(),
            predicted.len()
        ));
    }
    if test.is_empty() {
        return shape_err("no test values");
    }
    Ok(())
}

fn sse(test: &[f64], predicted: &[f64]) -> f64 {
    test.iter()
        .zip(predicted)
        .map(|(y, p)| (y - p) * (y - p))
        .sum()
}

/// Root mean square error.
pub fn rmse(test: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(test, predicted)?;
    Ok((sse(test, predicted) / test.len() as f64).sqrt())
}

/// `Q² = 1 − Σ(y − ŷ)² / Σ(y − ȳ)²`.
pub fn q2(test: &[f64], predicted: &[f64]) -> Result<f64> {
    check_pair(test, predicted)?;
    if test.len() < 2 {
        return shape_err("Q² needs at least two test values");
    }
    let mean = test.iter().sum::<f64>() / test.len() as f64;
    let sstot: f64 = test.iter().map(|y| (y - mean) * (y - mean)).sum();
    if !(sstot > 0.0) {
        return Err(Error::DegenerateVariance);
    }
    Ok(1.0 - sse(test, predicted) / sstot)
}

/// `1 − MSE / pooled_variance`, for test sets whose own variance may vanish.
pub fn q2_pooled(test: &[f64], predicted: &[f64], pooled_variance: f64) -> Result<f64> {
    check_pair(test, predicted)?;
    if !(pooled_variance > 0.0 && pooled_variance.is_finite()) {
        return Err(Error::Parameter(format!(
            "pooled variance must be positive, got {pooled_variance}"
        )));
    }
    Ok(1.0 - sse(test, predicted) / test.len() as f64 / pooled_variance)
}

/// Population variance of all observations at locations that are wet
/// (nonzero) in at least one scenario. `observations` is `R × S`.
pub fn pooled_variance(observations: &DMatrix<f64>) -> Option<f64> {
    let values: Vec<f64> = observations
        .column_iter()
        .filter(|c| c.iter().any(|v| *v != 0.0))
        .flat_map(|c| c.iter().copied().collect::<Vec<_>>())
        .collect();
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (var > 0.0).then_some(var)
}

/// Coverage accuracy: the fraction of test values inside `mean ± c·sd`.
pub fn ca(test: &[f64], mean: &[f64], sd: &[f64], c: f64) -> Result<f64> {
    check_pair(test, mean)?;
    check_pair(test, sd)?;
    if !(c >= 0.0) {
        return Err(Error::Parameter(format!(
            "interval multiplier must be nonnegative, got {c}"
        )));
    }
    if let Some(s) = sd.iter().find(|s| !(**s >= 0.0)) {
        return Err(Error::Data(format!("negative standard deviation {s}")));
    }
    let inside = test
        .iter()
        .zip(mean)
        .zip(sd)
        .filter(|((y, m), s)| {
            let half = if **s == 0.0 { 0.0 } else { c * **s };
            (*y - *m).abs() <= half
        })
        .count();
    Ok(inside as f64 / test.len() as f64)
}

/// Summary indicators for one predicted map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse: f64,
    /// `None` when the test values have zero variance.
    pub q2: Option<f64>,
    pub q2_pooled: Option<f64>,
    /// `(c, CA±cσ)` pairs in increasing `c`.
    pub ca: Vec<(f64, f64)>,
    pub n_test: usize,
}

impl MetricReport {
    pub fn compute(
        test: &[f64],
        mean: &[f64],
        sd: &[f64],
        multipliers: &[f64],
        pooled_variance: Option<f64>,
    ) -> Result<Self> {
        let mut cs = multipliers.to_vec();
        cs.sort_by(f64::total_cmp);
        let q2 = match q2(test, mean) {
            Ok(v) => Some(v),
            Err(Error::DegenerateVariance) => None,
            Err(e) => return Err(e),
        };
        let q2_pooled = pooled_variance
            .map(|v| q2_pooled(test, mean, v))
            .transpose()?;
        Ok(Self {
            rmse: rmse(test, mean)?,
            q2,
            q2_pooled,
            ca: cs
                .iter()
                .map(|&c| ca(test, mean, sd, c).map(|v| (c, v)))
                .collect::<Result<_>>()?,
            n_test: test.len(),
        })
    }

    pub fn ca_at(&self, c: f64) -> Option<f64> {
        self.ca.iter().find(|(k, _)| *k == c).map(|(_, v)| *v)
    }
}

/// Flood severity of a maximal water height (meters).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FloodCategory {
    Minor,
    Moderate,
    Serious,
    Severe,
}

impl FloodCategory {
    pub const ALL: [FloodCategory; 4] = [
        FloodCategory::Minor,
        FloodCategory::Moderate,
        FloodCategory::Serious,
        FloodCategory::Severe,
    ];
}

/// `h ≤ 0.5` minor, `≤ 1` moderate, `≤ 1.5` serious, else severe.
pub fn classify_flood(h: f64) -> Result<FloodCategory> {
    if !(h >= 0.0) {
        return Err(Error::Data(format!("water height must be nonnegative, got {h}")));
    }
    Ok(if h <= 0.5 {
        FloodCategory::Minor
    } else if h <= 1.0 {
        FloodCategory::Moderate
    } else if h <= 1.5 {
        FloodCategory::Serious
    } else {
        FloodCategory::Severe
    })
}

/// Normalized histogram over the four categories, in severity order.
pub fn category_proportions(values: &[f64]) -> Result<[f64; 4]> {
    if values.is_empty() {
        return shape_err("no values to classify");
    }
    let mut counts = [0usize; 4];
    for &h in values {
        counts[classify_flood(h)? as usize] += 1;
    }
    let n = values.len() as f64;
    Ok(counts.map(|c| c as f64 / n))
}

/// Median of a nonempty slice (mean of the two central values for even length).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}
