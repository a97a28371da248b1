//! Gaussian map belief: Matérn-3/2 prior construction, sequential Kalman
//! fusion of footprint measurements, confidence-based interest regions, the
//! A-optimal information criterion, and the per-step reward.
//!
//! Beliefs are immutable snapshots: fusion returns a new belief, so parallel
//! tree-search branches can hold copies without coordination.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::env::{travel_time, KinematicsModel, MeasurementPose, TerrainSpec};
use crate::error::{CoreError, Result};

/// Matérn 3/2 covariance between points at distance `d`.
pub fn matern32(d: f64, length_scale: f64, signal_variance: f64) -> f64 {
    let s = 3f64.sqrt() * d / length_scale;
    signal_variance * (1.0 + s) * (-s).exp()
}

/// Gaussian-process prior hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    /// Matérn 3/2 length scale in meters.
    pub length_scale: f64,
    /// Signal variance (prior cell variance).
    pub signal_variance: f64,
    /// Kernel noise variance; used only by the ground-truth generator's GP
    /// draw, not added to the prior covariance.
    pub noise_variance: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            length_scale: 3.67,
            signal_variance: 1.82,
            noise_variance: 1.42,
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.length_scale > 0.0) {
            return Err(CoreError::config("kernel.length_scale", "must be > 0"));
        }
        if !(self.signal_variance > 0.0) {
            return Err(CoreError::config("kernel.signal_variance", "must be > 0"));
        }
        if !(self.noise_variance > 0.0) {
            return Err(CoreError::config("kernel.noise_variance", "must be > 0"));
        }
        Ok(())
    }
}

/// Confidence-based level-set parameters for regions of interest.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterestRegionSpec {
    /// Confidence width multiplying the cell variance.
    pub beta: f64,
    /// Interest threshold on the upper confidence bound.
    pub mu_th: f64,
}

impl Default for InterestRegionSpec {
    fn default() -> Self {
        Self {
            beta: 1.0,
            mu_th: 0.4,
        }
    }
}

impl InterestRegionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.beta < 0.0 {
            return Err(CoreError::config("interest.beta", "must be >= 0"));
        }
        if !(self.mu_th > 0.0 && self.mu_th < 1.0) {
            return Err(CoreError::config("interest.mu_th", "must be in (0, 1)"));
        }
        Ok(())
    }
}

/// Gaussian map state: mean vector and full covariance over grid cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMapBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GridMapBelief {
    pub fn cell_count(&self) -> usize {
        self.mean.len()
    }

    /// Total variance (trace of the covariance).
    pub fn trace(&self) -> f64 {
        self.cov.trace()
    }

    /// Trace restricted to a cell subset.
    pub fn trace_over(&self, cells: &[usize]) -> f64 {
        cells.iter().map(|&i| self.cov[(i, i)]).sum()
    }

    /// Writes mean and variance-diagonal as two `g x g` CSV matrices.
    pub fn write_csv<W: std::io::Write>(&self, grid_dim: usize, mut writer: W) -> Result<()> {
        for source in ["mean", "variance"] {
            writeln!(writer, "# {source}")?;
            for row in 0..grid_dim {
                let line: Vec<String> = (0..grid_dim)
                    .map(|col| {
                        let i = row * grid_dim + col;
                        let v = if source == "mean" {
                            self.mean[i]
                        } else {
                            self.cov[(i, i)]
                        };
                        format!("{v}")
                    })
                    .collect();
                writeln!(writer, "{}", line.join(","))?;
            }
        }
        Ok(())
    }
}

/// Builds the GP prior belief: uniform mean, Matérn-3/2 covariance over
/// cell-center distances.
pub fn build_prior(spec: &TerrainSpec, kernel: &KernelSpec, prior_mean: f64) -> GridMapBelief {
    let n = spec.cell_count();
    let mut cov = DMatrix::zeros(n, n);
    for i in 0..n {
        let (xi, yi) = spec.cell_center(i);
        for j in i..n {
            let (xj, yj) = spec.cell_center(j);
            let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
            let v = matern32(d, kernel.length_scale, kernel.signal_variance);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    GridMapBelief {
        mean: DVector::from_element(n, prior_mean),
        cov,
    }
}

/// Kalman update fusing measurements `z` observed at `cells` with i.i.d.
/// noise `noise_var`. The observation matrix selects one row per observed
/// cell; the covariance update uses the Joseph form and is symmetrized.
pub fn kalman_fuse(
    belief: &GridMapBelief,
    cells: &[usize],
    z: &[f64],
    noise_var: f64,
) -> Result<GridMapBelief> {
    assert!(!cells.is_empty(), "kalman_fuse requires at least one cell");
    assert_eq!(cells.len(), z.len(), "one value per observed cell");
    assert!(noise_var > 0.0, "noise variance must be positive");

    let n = belief.cell_count();
    let m = cells.len();
    let p = &belief.cov;

    // S = H P H^T + R, with H a selection matrix.
    let mut s = DMatrix::zeros(m, m);
    for (a, &ca) in cells.iter().enumerate() {
        for (b, &cb) in cells.iter().enumerate() {
            s[(a, b)] = p[(ca, cb)];
        }
        s[(a, a)] += noise_var;
    }
    let chol = s.cholesky().ok_or_else(|| {
        CoreError::Numerical("innovation covariance is not invertible".to_string())
    })?;

    // P H^T, one column per observed cell.
    let mut p_ht = DMatrix::zeros(n, m);
    for (a, &ca) in cells.iter().enumerate() {
        p_ht.column_mut(a).copy_from(&p.column(ca));
    }

    // K = P H^T S^-1 via K^T = S^-1 (P H^T)^T.
    let k = chol.solve(&p_ht.transpose()).transpose();

    let innovation = DVector::from_iterator(m, cells.iter().zip(z).map(|(&c, &v)| v - belief.mean[c]));
    let mean = &belief.mean + &k * &innovation;

    // Joseph form: (I - KH) P (I - KH)^T + K R K^T, exploiting H's sparsity.
    let ap = p - &k * p_ht.transpose(); // (I - KH) P
    let mut ap_ht = DMatrix::zeros(n, m);
    for (a, &ca) in cells.iter().enumerate() {
        ap_ht.column_mut(a).copy_from(&ap.column(ca));
    }
    let mut cov = ap - ap_ht * k.transpose() + noise_var * &k * k.transpose();
    // Symmetrize round-off.
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (cov[(i, j)] + cov[(j, i)]);
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    Ok(GridMapBelief { mean, cov })
}

/// Cells whose upper confidence bound `mu_i + beta * P_ii` reaches the
/// interest threshold. May be empty.
pub fn interest_set(belief: &GridMapBelief, spec: &InterestRegionSpec) -> Vec<usize> {
    (0..belief.cell_count())
        .filter(|&i| belief.mean[i] + spec.beta * belief.cov[(i, i)] >= spec.mu_th)
        .collect()
}

/// A-optimal information value: reduction of the covariance trace restricted
/// to the interest cells.
pub fn information_value(
    p_before: &DMatrix<f64>,
    p_after: &DMatrix<f64>,
    interest: &[usize],
) -> f64 {
    interest
        .iter()
        .map(|&i| p_before[(i, i)] - p_after[(i, i)])
        .sum()
}

/// Information gained per second of flight: the per-step reward.
pub fn reward(
    p_before: &DMatrix<f64>,
    p_after: &DMatrix<f64>,
    interest: &[usize],
    a_prev: &MeasurementPose,
    a: &MeasurementPose,
    kin: &KinematicsModel,
) -> Result<f64> {
    let cost = travel_time(a_prev, a, kin);
    if cost <= 0.0 {
        return Err(CoreError::Contract(
            "reward requires a != a_prev (zero travel cost)".to_string(),
        ));
    }
    Ok(information_value(p_before, p_after, interest) / cost)
}
