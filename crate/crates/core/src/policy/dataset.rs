//! Line-delimited JSON scene records.
//!
//! Each line is one object:
//!
//! ```text
//! {"version":1,
//!  "instruction":"touch-red",
//!  "points":[[x,y,z,r,g,b],...],
//!  "gripper":{"quat":[w,x,y,z],"pos":[x,y,z],"open":true},
//!  "workspace":{"center":[x,y,z],"quat":[w,x,y,z],"half_extent":0.3},
//!  "expert":{"pos":[x,y,z],"quat":[w,x,y,z],"open":false}}
//! ```
//!
//! `workspace` is optional and defaults to the axis-aligned 0.6 m cube at
//! the origin. Quaternions must be unit length to within 1e-6.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Demonstration;
use crate::scene::{Gripper, KeyframeAction, Observation, Workspace};
use crate::so3::{RigidTransform, Rotation, Vec3};
use crate::{Error, Result};

pub const DATASET_VERSION: u32 = 1;
const QUAT_TOL: f64 = 1e-6;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    version: u32,
    instruction: String,
    points: Vec<[f64; 6]>,
    gripper: GripperRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    workspace: Option<WorkspaceRecord>,
    expert: ActionRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GripperRecord {
    quat: [f64; 4],
    pos: Vec3,
    open: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkspaceRecord {
    center: Vec3,
    quat: [f64; 4],
    half_extent: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ActionRecord {
    pos: Vec3,
    quat: [f64; 4],
    open: bool,
}

impl Record {
    fn from_demo(d: &Demonstration) -> Self {
        let o = &d.observation;
        Record {
            version: DATASET_VERSION,
            instruction: d.instruction.clone(),
            points: o.points.iter().zip(&o.colors).map(|(p, c)| [p[0], p[1], p[2], c[0], c[1], c[2]]).collect(),
            gripper: GripperRecord { quat: o.gripper.pose.rotation.quaternion(), pos: o.gripper.pose.translation, open: o.gripper.open },
            workspace: Some(WorkspaceRecord { center: o.workspace.center, quat: o.workspace.rotation.quaternion(), half_extent: o.workspace.half_extent }),
            expert: ActionRecord { pos: d.expert.position, quat: d.expert.rotation.quaternion(), open: d.expert.open },
        }
    }

    fn into_demo(self, record: usize) -> Result<Demonstration> {
        let schema = |message: String| Error::Schema { record, message };
        if self.version != DATASET_VERSION {
            return Err(schema(format!("version {} (expected {DATASET_VERSION})", self.version)));
        }
        let rot = |q: [f64; 4], field: &str| {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > QUAT_TOL || !n.is_finite() {
                return Err(schema(format!("{field}.quat has norm {n}, expected 1")));
            }
            Ok(Rotation::from_quaternion(q))
        };
        let workspace = match self.workspace {
            None => Workspace::default(),
            Some(w) => {
                if !(w.half_extent > 0.0) {
                    return Err(schema("workspace.half_extent must be positive".into()));
                }
                Workspace { center: w.center, rotation: rot(w.quat, "workspace")?, half_extent: w.half_extent }
            }
        };
        let observation = Observation {
            points: self.points.iter().map(|p| [p[0], p[1], p[2]]).collect(),
            colors: self.points.iter().map(|p| [p[3], p[4], p[5]]).collect(),
            gripper: Gripper { pose: RigidTransform::new(rot(self.gripper.quat, "gripper")?, self.gripper.pos), open: self.gripper.open },
            workspace,
        };
        observation.validate().map_err(|e| schema(e.to_string()))?;
        let expert = KeyframeAction { position: self.expert.pos, rotation: rot(self.expert.quat, "expert")?, open: self.expert.open };
        Ok(Demonstration { observation, instruction: self.instruction, expert })
    }
}

pub fn write_dataset<W: Write>(w: &mut W, demos: &[Demonstration]) -> Result<()> {
    for d in demos {
        serde_json::to_writer(&mut *w, &Record::from_demo(d))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parses records; `Schema` errors carry the 1-based line number.
pub fn read_dataset<R: Read>(r: R) -> Result<Vec<Demonstration>> {
    let mut out = Vec::new();
    for (i, line) in BufReader::new(r).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Schema { record: i + 1, message: e.to_string() })?;
        out.push(rec.into_demo(i + 1)?);
    }
    Ok(out)
}

pub fn save_dataset(path: &Path, demos: &[Demonstration]) -> Result<()> {
    let mut buf = Vec::new();
    write_dataset(&mut buf, demos)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Vec<Demonstration>> {
    read_dataset(std::fs::File::open(path)?)
}
