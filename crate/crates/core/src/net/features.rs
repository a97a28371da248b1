//! State featurization: packing the belief, budget, pose, travel costs, and
//! a two-frame history into normalized input planes.
//!
//! Plane layout (version 1, with `A` altitudes and `h` history frames,
//! `5 + A + 5h` planes total; defaults A = 2, h = 2 give 17):
//!
//! 0. interest-masked covariance diagonal, min-max normalized
//! 1. remaining budget fraction `b / B` (constant)
//! 2-4. current pose x, y, z normalized to the action-space bounds (constant)
//! 5..5+A. travel time from every lattice pose at each altitude to the
//!         current pose, jointly min-max normalized
//! then `h` history frames of 5 planes each (variance, budget, x, y, z),
//! newest first. At episode start history frames are copies of the current
//! frame.

use ndarray::Array3;
use std::collections::VecDeque;

use crate::env::{travel_time_between, KinematicsModel, MeasurementPose, TerrainSpec};
use crate::mapping::{interest_set, GridMapBelief, InterestRegionSpec};

/// Identifies the plane packing; stored in checkpoints and run manifests.
pub const PLANE_LAYOUT_VERSION: u32 = 1;

/// Shape parameters of the feature stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeatureLayout {
    pub n_altitudes: usize,
    pub history_frames: usize,
}

impl FeatureLayout {
    pub fn plane_count(&self) -> usize {
        5 + self.n_altitudes + 5 * self.history_frames
    }
}

/// One snapshot of the per-step input planes that participate in history.
#[derive(Debug, Clone)]
pub struct FeatureFrame {
    /// Normalized interest-masked variance plane, length `g^2`.
    pub variance: Vec<f64>,
    /// Remaining budget fraction at the time of the snapshot.
    pub budget_frac: f64,
    /// Pose normalized to the action-space bounds.
    pub pos: [f64; 3],
}

/// Fixed-capacity history of past feature frames, newest first.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    frames: VecDeque<FeatureFrame>,
    capacity: usize,
}

impl HistoryBuffer {
    /// Buffer filled with copies of the initial frame.
    pub fn seeded(frame: FeatureFrame) -> Self {
        Self::seeded_with_capacity(frame, 2)
    }

    pub fn seeded_with_capacity(frame: FeatureFrame, capacity: usize) -> Self {
        let mut frames = VecDeque::with_capacity(capacity);
        for _ in 0..capacity {
            frames.push_back(frame.clone());
        }
        Self { frames, capacity }
    }

    /// Records the frame of the state being left; the oldest frame drops out.
    pub fn push(&mut self, frame: FeatureFrame) {
        if self.capacity == 0 {
            return;
        }
        self.frames.push_front(frame);
        self.frames.truncate(self.capacity);
    }

    pub fn frames(&self) -> impl Iterator<Item = &FeatureFrame> {
        self.frames.iter()
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

fn min_max_normalize(values: &mut [f64]) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span > 0.0 {
        for v in values.iter_mut() {
            *v = (*v - lo) / span;
        }
    } else {
        // Tie convention: a constant plane maps to zero.
        for v in values.iter_mut() {
            *v = 0.0;
        }
    }
}

fn normalized_pos(pose: &MeasurementPose, terrain: &TerrainSpec) -> [f64; 3] {
    let (bx, by, bz) = terrain.action_bounds();
    let norm = |v: f64, b: [f64; 2]| {
        let span = b[1] - b[0];
        if span > 0.0 {
            ((v - b[0]) / span).clamp(0.0, 1.0)
        } else {
            0.0
        }
    };
    [
        norm(pose.x, bx),
        norm(pose.y, by),
        norm(pose.z, bz),
    ]
}

/// Builds the history-participating frame of the current state: the
/// normalized interest-masked variance plane plus budget and pose scalars.
pub fn compute_frame(
    belief: &GridMapBelief,
    pose: &MeasurementPose,
    remaining_budget: f64,
    total_budget: f64,
    interest: &InterestRegionSpec,
    terrain: &TerrainSpec,
) -> FeatureFrame {
    let n = belief.cell_count();
    let cells = interest_set(belief, interest);
    let mut variance = vec![0.0; n];
    for &c in &cells {
        variance[c] = belief.cov[(c, c)];
    }
    min_max_normalize(&mut variance);
    FeatureFrame {
        variance,
        budget_frac: (remaining_budget / total_budget).clamp(0.0, 1.0),
        pos: normalized_pos(pose, terrain),
    }
}

/// Assembles the full input stack for the current state. All entries are in
/// [0, 1] and the constant planes are exactly constant.
#[allow(clippy::too_many_arguments)]
pub fn featurize(
    belief: &GridMapBelief,
    pose: &MeasurementPose,
    remaining_budget: f64,
    total_budget: f64,
    history: &HistoryBuffer,
    terrain: &TerrainSpec,
    kinematics: &KinematicsModel,
    interest: &InterestRegionSpec,
    layout: &FeatureLayout,
) -> Array3<f64> {
    assert_eq!(
        layout.n_altitudes,
        terrain.altitudes.len(),
        "layout altitude count must match the terrain"
    );
    let g = terrain.grid_dim();
    let cells = terrain.cell_count();
    let mut planes = Array3::zeros((layout.plane_count(), g, g));

    let current = compute_frame(belief, pose, remaining_budget, total_budget, interest, terrain);
    write_frame(&mut planes, 0, &current, g);

    // Travel-cost planes, one per altitude, jointly normalized so the
    // current pose's own lattice point is the zero minimum.
    let mut costs = vec![0.0; layout.n_altitudes * cells];
    for (alt_idx, &alt) in terrain.altitudes.iter().enumerate() {
        for cell in 0..cells {
            let (x, y) = terrain.cell_center(cell);
            costs[alt_idx * cells + cell] =
                travel_time_between([x, y, alt], pose.coords(), kinematics);
        }
    }
    min_max_normalize(&mut costs);
    for alt_idx in 0..layout.n_altitudes {
        for cell in 0..cells {
            planes[[5 + alt_idx, cell / g, cell % g]] = costs[alt_idx * cells + cell];
        }
    }

    let mut plane = 5 + layout.n_altitudes;
    for frame in history.frames().take(layout.history_frames) {
        write_frame(&mut planes, plane, frame, g);
        plane += 5;
    }
    // Short histories (capacity smaller than the layout) leave zero planes;
    // seeded buffers always fill the layout.
    planes
}

fn write_frame(planes: &mut Array3<f64>, base: usize, frame: &FeatureFrame, g: usize) {
    for cell in 0..g * g {
        planes[[base, cell / g, cell % g]] = frame.variance[cell];
    }
    for row in 0..g {
        for col in 0..g {
            planes[[base + 1, row, col]] = frame.budget_frac;
            planes[[base + 2, row, col]] = frame.pos[0];
            planes[[base + 3, row, col]] = frame.pos[1];
            planes[[base + 4, row, col]] = frame.pos[2];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{build_prior, KernelSpec};

    fn setup() -> (TerrainSpec, GridMapBelief, KinematicsModel, InterestRegionSpec) {
        let terrain = TerrainSpec::default();
        let belief = build_prior(&terrain, &KernelSpec::default(), 0.5);
        (
            terrain,
            belief,
            KinematicsModel::default(),
            InterestRegionSpec::default(),
        )
    }

    #[test]
    fn plane_count_matches_layout() {
        let layout = FeatureLayout {
            n_altitudes: 2,
            history_frames: 2,
        };
        assert_eq!(layout.plane_count(), 17);
        let no_history = FeatureLayout {
            n_altitudes: 2,
            history_frames: 0,
        };
        assert_eq!(no_history.plane_count(), 7);
    }

    #[test]
    fn featurize_ranges_and_constant_planes() {
        let (terrain, belief, kin, interest) = setup();
        let pose = terrain.nearest_pose(2.0, 2.0, 14.0);
        let layout = FeatureLayout {
            n_altitudes: 2,
            history_frames: 2,
        };
        let frame = compute_frame(&belief, &pose, 150.0, 150.0, &interest, &terrain);
        let history = HistoryBuffer::seeded(frame);
        let planes = featurize(
            &belief, &pose, 150.0, 150.0, &history, &terrain, &kin, &interest, &layout,
        );
        assert_eq!(planes.shape(), &[17, 10, 10]);
        assert!(planes.iter().all(|&v| (0.0..=1.0).contains(&v)));

        // Full budget: budget plane is exactly 1 everywhere.
        assert!(planes.index_axis(ndarray::Axis(0), 1).iter().all(|&v| v == 1.0));

        // Uniform prior variance with every cell interesting: the constant
        // variance plane normalizes to zero.
        assert!(planes.index_axis(ndarray::Axis(0), 0).iter().all(|&v| v == 0.0));

        // Constant planes are exactly constant.
        for p in 2..5 {
            let plane = planes.index_axis(ndarray::Axis(0), p);
            let first = plane[[0, 0]];
            assert!(plane.iter().all(|&v| v == first));
        }

        // The current pose's own lattice point has the minimum (zero) cost.
        let g = terrain.grid_dim();
        let cell = pose.action_index % terrain.cell_count();
        let alt_idx = pose.action_index / terrain.cell_count();
        assert_eq!(planes[[5 + alt_idx, cell / g, cell % g]], 0.0);
    }

    #[test]
    fn featurize_is_deterministic() {
        let (terrain, belief, kin, interest) = setup();
        let pose = terrain.nearest_pose(18.0, 22.0, 8.0);
        let layout = FeatureLayout {
            n_altitudes: 2,
            history_frames: 2,
        };
        let frame = compute_frame(&belief, &pose, 90.0, 150.0, &interest, &terrain);
        let history = HistoryBuffer::seeded(frame);
        let a = featurize(&belief, &pose, 90.0, 150.0, &history, &terrain, &kin, &interest, &layout);
        let b = featurize(&belief, &pose, 90.0, 150.0, &history, &terrain, &kin, &interest, &layout);
        assert_eq!(a, b);
    }

    #[test]
    fn history_starts_as_copies_and_shifts() {
        let (terrain, belief, _, interest) = setup();
        let pose = terrain.nearest_pose(2.0, 2.0, 14.0);
        let f0 = compute_frame(&belief, &pose, 150.0, 150.0, &interest, &terrain);
        let mut history = HistoryBuffer::seeded(f0.clone());
        assert_eq!(history.len(), 2);
        for frame in history.frames() {
            assert_eq!(frame.budget_frac, f0.budget_frac);
        }

        let f1 = FeatureFrame {
            budget_frac: 0.5,
            ..f0.clone()
        };
        history.push(f1);
        let fracs: Vec<f64> = history.frames().map(|f| f.budget_frac).collect();
        assert_eq!(fracs, vec![0.5, 1.0]);
    }
}
