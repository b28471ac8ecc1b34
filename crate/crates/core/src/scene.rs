//! Observations and keyframe actions.

use serde::{Deserialize, Serialize};

use crate::error::contract;
use crate::so3::{add, mat_vec, sub, RigidTransform, Rotation, Vec3};
use crate::Result;

/// Oriented cubic work volume. Candidate lattices are laid out in this frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub center: Vec3,
    pub rotation: Rotation,
    pub half_extent: f64,
}

impl Default for Workspace {
    fn default() -> Self {
        Self { center: [0.0; 3], rotation: Rotation::identity(), half_extent: 0.3 }
    }
}

impl Workspace {
    pub fn to_world(&self, local: Vec3) -> Vec3 {
        add(self.center, self.rotation.apply(local))
    }

    pub fn to_local(&self, world: Vec3) -> Vec3 {
        self.rotation.inverse().apply(sub(world, self.center))
    }

    pub fn contains(&self, world: Vec3, margin: f64) -> bool {
        self.to_local(world).iter().all(|c| c.abs() <= self.half_extent + margin)
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self { center: g.apply(self.center), rotation: g.rotation.compose(&self.rotation), half_extent: self.half_extent }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gripper {
    pub pose: RigidTransform,
    pub open: bool,
}

/// Colored point cloud plus gripper state.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub points: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub gripper: Gripper,
    pub workspace: Workspace,
}

impl Observation {
    pub fn validate(&self) -> Result<()> {
        contract!(!self.points.is_empty(), "observation has no points");
        contract!(self.colors.len() == self.points.len(), "observation has {} points but {} color attributes", self.points.len(), self.colors.len());
        contract!(
            self.points.iter().chain(self.colors.iter()).flatten().all(|v| v.is_finite()),
            "observation contains non-finite values"
        );
        contract!(self.workspace.half_extent > 0.0, "workspace half extent must be positive");
        Ok(())
    }

    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self {
            points: self.points.iter().map(|p| g.apply(*p)).collect(),
            colors: self.colors.clone(),
            gripper: Gripper { pose: g.compose(&self.gripper.pose), open: self.gripper.open },
            workspace: self.workspace.transformed(g),
        }
    }
}

/// Target gripper pose and aperture.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeAction {
    pub position: Vec3,
    pub rotation: Rotation,
    pub open: bool,
}

impl KeyframeAction {
    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self { position: g.apply(self.position), rotation: g.rotation.compose(&self.rotation), open: self.open }
    }

    /// Position error in meters and rotation error in radians.
    pub fn error_to(&self, other: &KeyframeAction) -> (f64, f64) {
        let d = sub(self.position, other.position);
        let pos = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        (pos, Rotation::geodesic_distance(&self.rotation, &other.rotation))
    }
}

/// Columns of a rotation matrix as vectors.
pub fn rotation_columns(r: &Rotation) -> [Vec3; 3] {
    let e = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let m = r.matrix();
    [mat_vec(&m, e[0]), mat_vec(&m, e[1]), mat_vec(&m, e[2])]
}
