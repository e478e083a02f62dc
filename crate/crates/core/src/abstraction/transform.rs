use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-dimension standard deviations below this are treated as constant.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum,
)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Raw,
    /// `(ln(1 + x) - mean) / std`, statistics pooled over the corpus.
    #[default]
    #[value(name = "log1p_zscore", alias = "log1p-zscore")]
    Log1pZscore,
}

/// Feature map applied to spectral embeddings before clustering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub mode: FeatureMode,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl FeatureTransform {
    pub fn raw() -> Self {
        Self {
            mode: FeatureMode::Raw,
            means: Vec::new(),
            stds: Vec::new(),
        }
    }

    pub fn apply(&self, row: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            FeatureMode::Raw => Ok(row.to_vec()),
            FeatureMode::Log1pZscore => {
                if row.len() != self.means.len() {
                    return Err(Error::Dimension(format!(
                        "row of width {} for transform of width {}",
                        row.len(),
                        self.means.len()
                    )));
                }
                Ok(row
                    .iter()
                    .zip(self.means.iter().zip(&self.stds))
                    .map(|(&x, (&m, &s))| (x.ln_1p() - m) / s)
                    .collect())
            }
        }
    }
}

/// Fits the transform on pooled embedding rows.
///
/// Uses the population standard deviation; dimensions whose std falls below
/// [`STD_FLOOR`] get a std of 1.
pub fn fit_transform_params<R: AsRef<[f64]>>(rows: &[R], mode: FeatureMode) -> Result<FeatureTransform> {
    let first = rows
        .first()
        .ok_or_else(|| Error::Config("cannot fit a feature transform on zero rows".into()))?;
    let width = first.as_ref().len();
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != width {
            return Err(Error::Dimension(format!(
                "row {i} has width {}, expected {width}",
                r.len()
            )));
        }
        if let Some(v) = r.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Domain(format!(
                "row {i} contains {v}; spectral features must be finite and non-negative"
            )));
        }
    }
    if mode == FeatureMode::Raw {
        return Ok(FeatureTransform::raw());
    }
    let n = rows.len() as f64;
    let mut means = vec![0.0; width];
    for r in rows {
        for (m, x) in means.iter_mut().zip(r.as_ref()) {
            *m += x.ln_1p();
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut vars = vec![0.0; width];
    for r in rows {
        for ((v, x), m) in vars.iter_mut().zip(r.as_ref()).zip(&means) {
            let d = x.ln_1p() - m;
            *v += d * d;
        }
    }
    let stds = vars
        .into_iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s < STD_FLOOR {
                1.0
            } else {
                s
            }
        })
        .collect();
    Ok(FeatureTransform {
        mode,
        means,
        stds,
    })
}
