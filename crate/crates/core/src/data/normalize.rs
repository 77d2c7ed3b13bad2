//! Input normalization fitted on a training split.

use serde::{Deserialize, Serialize};

use crate::nn::Dataset;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Leave inputs as they are.
    None,
    /// Divide by 255 (byte pixels to `[0, 1]`).
    #[default]
    UnitScale,
    /// Per-feature zero mean and unit variance; constant features are only centered.
    Standardize,
}

/// Per-feature affine map `x -> (x - shift) / scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn fit<F: Real>(train: &Dataset<F>, scheme: Normalization) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let dim = train.input_dim();
        Ok(match scheme {
            Normalization::None => Normalizer {
                shift: vec![0.0; dim],
                scale: vec![1.0; dim],
            },
            Normalization::UnitScale => Normalizer {
                shift: vec![0.0; dim],
                scale: vec![255.0; dim],
            },
            Normalization::Standardize => {
                let n = train.len() as f64;
                let x = train.inputs();
                let mut shift = vec![0.0; dim];
                let mut scale = vec![0.0; dim];
                for j in 0..dim {
                    let col = x.column(j);
                    let mean = col.iter().map(|v| v.as_f64()).sum::<f64>() / n;
                    let var = col.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / n;
                    shift[j] = mean;
                    scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
                }
                Normalizer { shift, scale }
            }
        })
    }

    pub fn apply<F: Real>(&self, data: &Dataset<F>) -> Result<Dataset<F>> {
        if data.input_dim() != self.shift.len() {
            return Err(Error::dimension(format!(
                "normalizer fitted on {} features, data has {}",
                self.shift.len(),
                data.input_dim()
            )));
        }
        let mut out = data.clone();
        for mut row in out.inputs_mut().rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = F::of((v.as_f64() - self.shift[j]) / self.scale[j]);
            }
        }
        Ok(out)
    }
}

/// Fits on `train` and applies the same map to both splits.
pub fn normalize<F: Real>(
    train: &Dataset<F>,
    test: &Dataset<F>,
    scheme: Normalization,
) -> Result<(Dataset<F>, Dataset<F>)> {
    let norm = Normalizer::fit(train, scheme)?;
    Ok((norm.apply(train)?, norm.apply(test)?))
}
