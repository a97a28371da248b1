//! Terrain environment: ground-truth fields, the discrete 3D measurement
//! lattice, the altitude-dependent camera model, and flight-time costs.
//!
//! Geometry convention: the terrain is a square of `side_length` meters,
//! discretized into `g x g` cells of `resolution` meters. Cell `i` has
//! `row = i / g` (y axis) and `col = i % g` (x axis); its center is at
//! `((col + 0.5) * r, (row + 0.5) * r)`. Measurement poses mirror the cell
//! centers at each configured altitude, so the action space has `2 * g^2`
//! entries indexed by `alt_idx * g^2 + cell`.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::mapping::{matern32, KernelSpec};
use crate::rng::{rng_for, stream};

/// Square terrain and the measurement lattice above it.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainSpec {
    /// Terrain side length in meters.
    pub side_length: f64,
    /// Cell edge length in meters.
    pub resolution: f64,
    /// Flight altitudes in meters, strictly increasing.
    pub altitudes: Vec<f64>,
}

impl Default for TerrainSpec {
    fn default() -> Self {
        Self {
            side_length: 40.0,
            resolution: 4.0,
            altitudes: vec![8.0, 14.0],
        }
    }
}

impl TerrainSpec {
    /// Cells per side (`g`).
    pub fn grid_dim(&self) -> usize {
        (self.side_length / self.resolution).round() as usize
    }

    /// Number of grid cells (`g^2`).
    pub fn cell_count(&self) -> usize {
        let g = self.grid_dim();
        g * g
    }

    /// Size of the discrete action space: one pose per cell per altitude.
    pub fn action_count(&self) -> usize {
        self.altitudes.len() * self.cell_count()
    }

    /// Center coordinates of cell `i`.
    pub fn cell_center(&self, cell: usize) -> (f64, f64) {
        let g = self.grid_dim();
        let row = cell / g;
        let col = cell % g;
        (
            (col as f64 + 0.5) * self.resolution,
            (row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell index at grid coordinates, if in bounds.
    pub fn cell_at(&self, row: isize, col: isize) -> Option<usize> {
        let g = self.grid_dim() as isize;
        if row < 0 || col < 0 || row >= g || col >= g {
            None
        } else {
            Some((row * g + col) as usize)
        }
    }

    /// Pose for a lattice action index.
    pub fn pose_for_action(&self, action_index: usize) -> MeasurementPose {
        let cells = self.cell_count();
        let alt_idx = action_index / cells;
        let cell = action_index % cells;
        let (x, y) = self.cell_center(cell);
        MeasurementPose {
            x,
            y,
            z: self.altitudes[alt_idx],
            action_index,
        }
    }

    /// All lattice poses in action-index order.
    pub fn all_poses(&self) -> Vec<MeasurementPose> {
        (0..self.action_count())
            .map(|a| self.pose_for_action(a))
            .collect()
    }

    /// The lattice pose closest (Euclidean) to an arbitrary 3D point.
    pub fn nearest_pose(&self, x: f64, y: f64, z: f64) -> MeasurementPose {
        let mut best = self.pose_for_action(0);
        let mut best_d2 = f64::INFINITY;
        for a in 0..self.action_count() {
            let p = self.pose_for_action(a);
            let d2 = (p.x - x).powi(2) + (p.y - y).powi(2) + (p.z - z).powi(2);
            if d2 < best_d2 {
                best_d2 = d2;
                best = p;
            }
        }
        best
    }

    /// Inclusive coordinate bounds of the lattice, per axis.
    pub fn action_bounds(&self) -> ([f64; 2], [f64; 2], [f64; 2]) {
        let g = self.grid_dim() as f64;
        let r = self.resolution;
        let lo = 0.5 * r;
        let hi = (g - 0.5) * r;
        (
            [lo, hi],
            [lo, hi],
            [
                self.altitudes[0],
                *self.altitudes.last().expect("validated non-empty"),
            ],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0) {
            return Err(CoreError::config("env.resolution", "must be > 0"));
        }
        if !(self.side_length > 0.0) {
            return Err(CoreError::config("env.side_length", "must be > 0"));
        }
        let ratio = self.side_length / self.resolution;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(CoreError::config(
                "env.resolution",
                format!("side_length/resolution = {ratio} is not an integer"),
            ));
        }
        if self.grid_dim() < 2 {
            return Err(CoreError::config("env.resolution", "grid_dim must be >= 2"));
        }
        if self.altitudes.is_empty() {
            return Err(CoreError::config("env.altitudes", "must be non-empty"));
        }
        for w in self.altitudes.windows(2) {
            if w[1] <= w[0] {
                return Err(CoreError::config(
                    "env.altitudes",
                    "must be strictly increasing",
                ));
            }
        }
        if self.altitudes[0] <= 0.0 {
            return Err(CoreError::config("env.altitudes", "must be positive"));
        }
        Ok(())
    }
}

/// A 3D measurement position on the action lattice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementPose {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub action_index: usize,
}

impl MeasurementPose {
    pub fn coords(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

/// Constant acceleration-deceleration flight model with speed cap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicsModel {
    /// Acceleration/deceleration magnitude in m/s^2.
    pub accel: f64,
    /// Maximum speed in m/s.
    pub max_speed: f64,
}

impl Default for KinematicsModel {
    fn default() -> Self {
        Self {
            accel: 2.0,
            max_speed: 2.0,
        }
    }
}

impl KinematicsModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.accel > 0.0) {
            return Err(CoreError::config("kinematics.accel", "must be > 0"));
        }
        if !(self.max_speed > 0.0) {
            return Err(CoreError::config("kinematics.max_speed", "must be > 0"));
        }
        Ok(())
    }
}

/// Downward-facing square camera with altitude-dependent noise.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorModel {
    /// Field of view in degrees.
    pub fov_degrees: f64,
    /// Noise variance at zero altitude.
    pub base_noise_var: f64,
    /// Quadratic altitude coefficient (1/m^2) of the noise law.
    pub altitude_noise_coeff: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            fov_degrees: 60.0,
            base_noise_var: 0.05,
            altitude_noise_coeff: 0.05,
        }
    }
}

impl SensorModel {
    /// Footprint half-width at altitude `z`: `z * tan(fov/2)`.
    pub fn half_width(&self, z: f64) -> f64 {
        z * (self.fov_degrees.to_radians() / 2.0).tan()
    }

    /// Measurement noise variance at altitude `z`:
    /// `base * (1 + coeff * z^2)`, monotone increasing in altitude.
    pub fn noise_variance(&self, z: f64) -> f64 {
        self.base_noise_var * (1.0 + self.altitude_noise_coeff * z * z)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fov_degrees > 0.0 && self.fov_degrees < 180.0) {
            return Err(CoreError::config("sensor.fov_degrees", "must be in (0, 180)"));
        }
        if !(self.base_noise_var > 0.0) {
            return Err(CoreError::config("sensor.base_noise_var", "must be > 0"));
        }
        if self.altitude_noise_coeff < 0.0 {
            return Err(CoreError::config(
                "sensor.altitude_noise_coeff",
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

/// Ground-truth scalar field over the grid, values in [0, 1].
#[derive(Debug, Clone)]
pub struct GroundTruthField {
    values: Vec<f64>,
    grid_dim: usize,
}

impl GroundTruthField {
    pub fn value(&self, cell: usize) -> f64 {
        self.values[cell]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid_dim(&self) -> usize {
        self.grid_dim
    }

    /// Fraction of cells at or above the threshold.
    pub fn fraction_above(&self, threshold: f64) -> f64 {
        let n = self.values.len();
        self.values.iter().filter(|&&v| v >= threshold).count() as f64 / n as f64
    }

    /// Writes the field as a `g x g` CSV matrix.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let g = self.grid_dim;
        for row in 0..g {
            let record: Vec<String> = (0..g)
                .map(|col| format!("{}", self.values[row * g + col]))
                .collect();
            w.write_record(&record).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> CoreError {
    CoreError::Numerical(format!("csv write failed: {e}"))
}

/// Draws a random terrain: a Gaussian-process sample (Matérn 3/2 with the
/// default kernel) plus one to three hotspot blobs, min-max normalized to
/// [0, 1]. Deterministic per seed. The returned field always has between 5%
/// and 95% of cells at or above `mu_th`; draws violating that are retried
/// with a derived seed and, as a last resort, rank-equalized.
pub fn generate_ground_truth(seed: u64, spec: &TerrainSpec, mu_th: f64) -> GroundTruthField {
    let g = spec.grid_dim();
    let n = g * g;
    let kernel = KernelSpec::default();

    // Cholesky factor of the kernel matrix is seed-independent.
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        let (xi, yi) = spec.cell_center(i);
        for j in i..n {
            let (xj, yj) = spec.cell_center(j);
            let d = ((xi - xj).powi(2) + (yi - yj).powi(2)).sqrt();
            let mut v = matern32(d, kernel.length_scale, kernel.signal_variance);
            if i == j {
                v += kernel.noise_variance;
            }
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    let chol = k
        .cholesky()
        .expect("default kernel with nugget is positive definite");

    for attempt in 0..32u64 {
        let mut rng = rng_for(seed, stream::GROUND_TRUTH, attempt);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let white = nalgebra::DVector::from_iterator(n, (0..n).map(|_| normal.sample(&mut rng)));
        let mut field: Vec<f64> = (chol.l() * white).iter().copied().collect();

        // Standardize before adding hotspots so blob amplitudes are comparable.
        let mean = field.iter().sum::<f64>() / n as f64;
        let var = field.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-12);
        for v in &mut field {
            *v = (*v - mean) / std;
        }

        let blobs = rng.random_range(1..=3);
        for _ in 0..blobs {
            let cx = rng.random_range(0.0..spec.side_length);
            let cy = rng.random_range(0.0..spec.side_length);
            let sigma = rng.random_range(0.10..0.20) * spec.side_length;
            let amp = rng.random_range(1.0..2.5);
            for (cell, v) in field.iter_mut().enumerate() {
                let (x, y) = spec.cell_center(cell);
                let d2 = (x - cx).powi(2) + (y - cy).powi(2);
                *v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }

        let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = (hi - lo).max(1e-12);
        for v in &mut field {
            *v = ((*v - lo) / span).clamp(0.0, 1.0);
        }

        let out = GroundTruthField {
            values: field,
            grid_dim: g,
        };
        let frac = out.fraction_above(mu_th);
        if (0.05..=0.95).contains(&frac) {
            return out;
        }
    }

    // Fallback: rank-equalize the last draw so the interest fraction is
    // ~(1 - mu_th) by construction.
    let mut rng = rng_for(seed, stream::GROUND_TRUTH, 31);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let white = nalgebra::DVector::from_iterator(n, (0..n).map(|_| normal.sample(&mut rng)));
    let field: Vec<f64> = (chol.l() * white).iter().copied().collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[a].partial_cmp(&field[b]).unwrap().then(a.cmp(&b)));
    let mut values = vec![0.0; n];
    for (rank, &cell) in order.iter().enumerate() {
        values[cell] = rank as f64 / (n - 1) as f64;
    }
    GroundTruthField {
        values,
        grid_dim: g,
    }
}

/// Flight time between two 3D points under the accel-decel profile.
///
/// For Euclidean distance `d`: trapezoidal profile `d/u_v + u_v/u_a` when
/// the cruise speed is reached (`d >= u_v^2/u_a`), triangular profile
/// `2 sqrt(d/u_a)` otherwise.
pub fn travel_time_between(a: [f64; 3], b: [f64; 3], kin: &KinematicsModel) -> f64 {
    let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
    if d == 0.0 {
        return 0.0;
    }
    let u_a = kin.accel;
    let u_v = kin.max_speed;
    if d >= u_v * u_v / u_a {
        d / u_v + u_v / u_a
    } else {
        2.0 * (d / u_a).sqrt()
    }
}

/// Flight time between two lattice poses.
pub fn travel_time(from: &MeasurementPose, to: &MeasurementPose, kin: &KinematicsModel) -> f64 {
    travel_time_between(from.coords(), to.coords(), kin)
}

/// Cells whose centers lie within the square footprint of a camera at
/// `(x, y, z)`, clipped to the terrain. Never empty: the cell under the
/// camera is always included.
pub fn footprint_cells_at(
    x: f64,
    y: f64,
    z: f64,
    spec: &TerrainSpec,
    sensor: &SensorModel,
) -> Vec<usize> {
    let g = spec.grid_dim() as isize;
    let r = spec.resolution;
    let hw = sensor.half_width(z);
    let col_lo = (((x - hw) / r - 0.5).ceil() as isize).max(0);
    let col_hi = (((x + hw) / r - 0.5).floor() as isize).min(g - 1);
    let row_lo = (((y - hw) / r - 0.5).ceil() as isize).max(0);
    let row_hi = (((y + hw) / r - 0.5).floor() as isize).min(g - 1);

    let mut cells = Vec::new();
    for row in row_lo..=row_hi {
        for col in col_lo..=col_hi {
            if let Some(c) = spec.cell_at(row, col) {
                cells.push(c);
            }
        }
    }
    if cells.is_empty() {
        // Pose outside all centers' reach (tiny footprint): keep the nearest cell.
        let col = ((x / r - 0.5).round() as isize).clamp(0, g - 1);
        let row = ((y / r - 0.5).round() as isize).clamp(0, g - 1);
        cells.push(spec.cell_at(row, col).unwrap());
    }
    cells
}

/// Footprint of a lattice pose.
pub fn footprint_cells(
    pose: &MeasurementPose,
    spec: &TerrainSpec,
    sensor: &SensorModel,
) -> Vec<usize> {
    footprint_cells_at(pose.x, pose.y, pose.z, spec, sensor)
}

/// One noisy camera measurement.
#[derive(Debug, Clone)]
pub struct Measurement {
    pub cells: Vec<usize>,
    pub values: Vec<f64>,
    pub noise_var: f64,
}

/// Samples a noisy measurement of the ground truth at `pose`: i.i.d.
/// Gaussian noise with the altitude-dependent variance. Deterministic per
/// seed.
pub fn measure(
    field: &GroundTruthField,
    pose: &MeasurementPose,
    spec: &TerrainSpec,
    sensor: &SensorModel,
    seed: u64,
) -> Measurement {
    let cells = footprint_cells(pose, spec, sensor);
    let noise_var = sensor.noise_variance(pose.z);
    let mut rng = rng_for(seed, stream::MEASUREMENT, pose.action_index as u64);
    let normal = Normal::new(0.0, noise_var.sqrt()).unwrap();
    let values = cells
        .iter()
        .map(|&c| field.value(c) + normal.sample(&mut rng))
        .collect();
    Measurement {
        cells,
        values,
        noise_var,
    }
}

/// Actions reachable from `current` within the remaining budget, optionally
/// restricted to a Euclidean ball, excluding the current pose. Sorted by
/// action index. An empty result signals episode termination.
pub fn reachable_actions(
    current: &MeasurementPose,
    remaining_budget: f64,
    radius: Option<f64>,
    spec: &TerrainSpec,
    kin: &KinematicsModel,
) -> Vec<MeasurementPose> {
    let mut out = Vec::new();
    for a in 0..spec.action_count() {
        if a == current.action_index {
            continue;
        }
        let pose = spec.pose_for_action(a);
        if travel_time(current, &pose, kin) > remaining_budget {
            continue;
        }
        if let Some(rad) = radius {
            let d2 = (pose.x - current.x).powi(2)
                + (pose.y - current.y).powi(2)
                + (pose.z - current.z).powi(2);
            if d2 > rad * rad {
                continue;
            }
        }
        out.push(pose);
    }
    out
}
