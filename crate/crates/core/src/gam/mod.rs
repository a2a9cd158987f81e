//! Gaussian additive model for `ln R_t`: one intercept per province plus a
//! penalized smooth per covariate, smoothing parameters chosen by GCV.

mod design;
mod gcv;
mod model;
mod solve;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::ObservationRow;
use crate::smooth::DEFAULT_BASIS_DIM;

pub use design::{assemble_design, assemble_from_columns, Design};
pub use gcv::{gcv_score, select_lambdas_gcv, GcvSelection, LambdaGrid};
pub use model::{fit_design, fit_gam, FittedGam, FittedTerm, P_VALUE_FLOOR};
pub use solve::{PenalizedFit, PenalizedProblem};

/// Model covariates, named as they appear in model files and outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Mobility,
    Temperature,
    Humidity,
    Pm25,
}

impl Covariate {
    pub const ALL: [Covariate; 4] = [
        Covariate::Mobility,
        Covariate::Temperature,
        Covariate::Humidity,
        Covariate::Pm25,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Covariate::Mobility => "mobility",
            Covariate::Temperature => "temperature",
            Covariate::Humidity => "humidity",
            Covariate::Pm25 => "pm25",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == name)
            .ok_or_else(|| Error::UnknownTerm(name.to_string()))
    }

    pub fn value(self, row: &ObservationRow) -> f64 {
        match self {
            Covariate::Mobility => row.mobility_decrease_pct,
            Covariate::Temperature => row.temperature_c,
            Covariate::Humidity => row.humidity_pct,
            Covariate::Pm25 => row.pm25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothDef {
    pub covariate: Covariate,
    pub basis_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub smooths: Vec<SmoothDef>,
    pub grid: LambdaGrid,
    pub sweeps: usize,
}

impl ModelSpec {
    /// All four covariates with the same basis dimension.
    pub fn with_basis_dim(basis_dim: usize) -> Self {
        Self {
            smooths: Covariate::ALL
                .into_iter()
                .map(|covariate| SmoothDef {
                    covariate,
                    basis_dim,
                })
                .collect(),
            grid: LambdaGrid::default(),
            sweeps: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.smooths.is_empty() {
            return Err(Error::InvalidParameter(
                "model needs at least one smooth".into(),
            ));
        }
        let mut seen = std::collections::HashSet::new();
        if !self.smooths.iter().all(|s| seen.insert(s.covariate)) {
            return Err(Error::InvalidParameter("duplicate smooth covariate".into()));
        }
        if self.sweeps == 0 {
            return Err(Error::InvalidParameter("sweeps must be at least 1".into()));
        }
        self.grid.validate()
    }
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self::with_basis_dim(DEFAULT_BASIS_DIM)
    }
}
