//! Regression engines for the missing-value model: an L1-penalized weighted
//! least-squares path (mean target) and pinball-loss quantile regression.

mod design;
mod lasso;
mod quantile;

use serde::{Deserialize, Serialize};

pub use design::DesignMatrix;
pub use lasso::{
    default_lambda_grid, fit_weighted_lasso, lambda_max, lasso_bic, lasso_kkt_residual, select_lambda,
    LambdaRule,
};
pub use quantile::{fit_quantile, pinball_loss};

/// What a fit estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Mean,
    Quantile(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// KKT violation (lasso) or remaining duality gap (quantile).
    pub optimality_residual: f64,
    pub note: Option<String>,
}

/// Fitted linear model on the original column scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    pub target: Target,
    pub lambda: Option<f64>,
    pub objective: f64,
    /// Weighted residual sum of squares (weights rescaled to sum to `n_obs`).
    pub rss: f64,
    pub n_obs: usize,
    pub diagnostics: Diagnostics,
}

impl FitResult {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(row)
                .map(|(b, x)| b * x)
                .sum::<f64>()
    }

    /// Number of nonzero slope coefficients.
    pub fn df(&self) -> usize {
        self.coefficients.iter().filter(|b| **b != 0.0).count()
    }
}
