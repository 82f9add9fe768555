use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An aligned response/predictor panel.
///
/// Row `t` holds the response `y_t` and the covariates `x_t` used to forecast
/// it; covariates never include the intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub time_index: Vec<String>,
    pub y: Vec<f64>,
    /// `T` rows of `D` predictors.
    pub x: Vec<Vec<f64>>,
    pub predictor_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        time_index: Vec<String>,
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
        predictor_names: Vec<String>,
    ) -> Result<Self> {
        let ds = Self {
            time_index,
            y,
            x,
            predictor_names,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Builds a dataset labelled `1..=T`.
    pub fn from_columns(
        y: Vec<f64>,
        x: Vec<Vec<f64>>,
        predictor_names: Vec<String>,
    ) -> Result<Self> {
        let time_index = (1..=y.len()).map(|t| t.to_string()).collect();
        Self::new(time_index, y, x, predictor_names)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Number of predictors `D`.
    pub fn n_predictors(&self) -> usize {
        self.predictor_names.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.y.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        let t = self.y.len();
        if self.time_index.len() != t {
            return Err(Error::Dimension {
                expected: t,
                got: self.time_index.len(),
            });
        }
        if self.x.len() != t {
            return Err(Error::Dimension {
                expected: t,
                got: self.x.len(),
            });
        }
        let d = self.predictor_names.len();
        for (row, (y, xs)) in self.y.iter().zip(&self.x).enumerate() {
            if xs.len() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: xs.len(),
                });
            }
            if !y.is_finite() {
                return Err(Error::NonFinite(format!("response at row {row}")));
            }
            if let Some(col) = xs.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "predictor '{}' at row {row}",
                    self.predictor_names[col]
                )));
            }
        }
        Ok(())
    }

    /// The first `len` rows.
    pub fn prefix(&self, len: usize) -> Self {
        let len = len.min(self.len());
        Self {
            time_index: self.time_index[..len].to_vec(),
            y: self.y[..len].to_vec(),
            x: self.x[..len].to_vec(),
            predictor_names: self.predictor_names.clone(),
        }
    }
}
