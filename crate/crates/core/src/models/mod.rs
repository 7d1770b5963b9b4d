//! Predictors: ridge regression on signatures, inverse distance weighting and
//! hierarchical medians.

mod idw;
mod median;
mod ridge;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use idw::{idw_predict, IdwModel, IdwParams, Site};
pub use median::{median_fit, median_predict, MedianModel, MedianSource};
pub use ridge::{default_lambda_grid, ridge_fit, ridge_tune, RidgeCv, RidgeModel, TuneResult};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    TopsearchRidge,
    Idw,
    HierMedian,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::TopsearchRidge, ModelKind::Idw, ModelKind::HierMedian];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::TopsearchRidge => "topsearch_ridge",
            ModelKind::Idw => "idw",
            ModelKind::HierMedian => "hier_median",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::BadParameter(format!("unknown model `{s}`")))
    }
}
