//! Synthetic tabletop tasks over colored cuboids.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Demonstration;
use crate::scene::{Gripper, KeyframeAction, Observation, Workspace};
use crate::so3::{RigidTransform, Rotation, Vec3};
use crate::{Error, Result};

/// Position tolerance of the success predicate in meters.
pub const SUCCESS_POSITION: f64 = 0.02;
/// Rotation tolerance of the success predicate in radians (20°).
pub const SUCCESS_ROTATION: f64 = 20.0 * PI / 180.0;

const TABLE_Z: f64 = -0.08;
const LAYOUT_RADIUS: f64 = 0.15;
const MIN_SEPARATION: f64 = 0.11;
const POINTS_PER_OBJECT: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    /// Reach the center of the object's marked (+x) face, open.
    Touch,
    /// Hover 5 cm above the top face, gripper flipped, closed.
    PlaceAbove,
    /// Stand 4 cm off the marked face, rotated a quarter turn about x, open.
    OrientToFace,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 3] = [TaskFamily::Touch, TaskFamily::PlaceAbove, TaskFamily::OrientToFace];

    pub fn name(self) -> &'static str {
        match self {
            TaskFamily::Touch => "touch",
            TaskFamily::PlaceAbove => "place-above",
            TaskFamily::OrientToFace => "orient-to-face",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectColor {
    Red,
    Green,
    Blue,
}

impl ObjectColor {
    pub const ALL: [ObjectColor; 3] = [ObjectColor::Red, ObjectColor::Green, ObjectColor::Blue];

    pub fn name(self) -> &'static str {
        match self {
            ObjectColor::Red => "red",
            ObjectColor::Green => "green",
            ObjectColor::Blue => "blue",
        }
    }

    pub fn rgb(self) -> [f64; 3] {
        match self {
            ObjectColor::Red => [0.9, 0.15, 0.1],
            ObjectColor::Green => [0.1, 0.8, 0.25],
            ObjectColor::Blue => [0.15, 0.25, 0.9],
        }
    }

    /// Nominal half extents; all distinct so every object is chiral up to its markers.
    fn half_extents(self) -> Vec3 {
        match self {
            ObjectColor::Red => [0.045, 0.03, 0.02],
            ObjectColor::Green => [0.04, 0.025, 0.03],
            ObjectColor::Blue => [0.035, 0.03, 0.025],
        }
    }
}

const YELLOW: [f64; 3] = [0.95, 0.9, 0.1];
const WHITE: [f64; 3] = [1.0, 1.0, 1.0];

/// An instruction: task family applied to one colored object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Task {
    pub family: TaskFamily,
    pub color: ObjectColor,
}

impl Task {
    /// The nine family × color combinations in a fixed order.
    pub fn all() -> Vec<Task> {
        TaskFamily::ALL.iter().flat_map(|&family| ObjectColor::ALL.iter().map(move |&color| Task { family, color })).collect()
    }

    pub fn instruction(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.family.name(), self.color.name())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::all().into_iter().find(|t| t.to_string() == s).ok_or_else(|| Error::Vocabulary(s.to_string()))
    }
}

/// Scene randomization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneMode {
    /// Objects rest on the table with random planar position and yaw.
    Se2,
    /// An `Se2` layout followed by a uniformly random rotation of the whole
    /// scene, gripper and workspace about the workspace center.
    Se3,
}

impl FromStr for SceneMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se2" => Ok(SceneMode::Se2),
            "se3" => Ok(SceneMode::Se3),
            _ => Err(Error::Contract(format!("unknown scene mode {s:?}; expected se2 or se3"))),
        }
    }
}

/// A cuboid with its pose.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ToyObject {
    pub color: ObjectColor,
    pub half: Vec3,
    pub pose: RigidTransform,
}

impl ToyObject {
    fn transformed(&self, g: &RigidTransform) -> Self {
        Self { pose: g.compose(&self.pose), ..*self }
    }
}

/// Expert keyframe for `family` on `obj`, a function of the object pose only.
pub fn expert_action(family: TaskFamily, obj: &ToyObject) -> KeyframeAction {
    let [a, _, c] = obj.half;
    let r = obj.pose.rotation;
    let (local, rot, open) = match family {
        TaskFamily::Touch => ([a, 0.0, 0.0], r, true),
        TaskFamily::PlaceAbove => ([0.0, 0.0, c + 0.05], r.compose(&Rotation::rot_x(PI)), false),
        TaskFamily::OrientToFace => ([a + 0.04, 0.0, 0.0], r.compose(&Rotation::rot_x(0.5 * PI)), true),
    };
    KeyframeAction { position: obj.pose.apply(local), rotation: rot, open }
}

/// Whether `pred` is within the success tolerances of `expert`.
pub fn is_success(pred: &KeyframeAction, expert: &KeyframeAction) -> bool {
    let (dp, dr) = pred.error_to(expert);
    dp <= SUCCESS_POSITION && dr <= SUCCESS_ROTATION && pred.open == expert.open
}

/// A generated scene with its ground truth.
#[derive(Clone, Debug)]
pub struct ToyScene {
    pub task: Task,
    pub objects: Vec<ToyObject>,
    pub demo: Demonstration,
}

impl ToyScene {
    pub fn transformed(&self, g: &RigidTransform) -> Self {
        Self { task: self.task, objects: self.objects.iter().map(|o| o.transformed(g)).collect(), demo: self.demo.transformed(g) }
    }
}

/// Samples one scene for `task`.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, task: Task, mode: SceneMode) -> ToyScene {
    let ws = Workspace::default();
    let mut objects: Vec<ToyObject> = Vec::with_capacity(3);
    for color in ObjectColor::ALL {
        let nominal = color.half_extents();
        let half = nominal.map(|h| h * rng.gen_range(0.9..1.1));
        let xy = loop {
            let p = [rng.gen_range(-LAYOUT_RADIUS..LAYOUT_RADIUS), rng.gen_range(-LAYOUT_RADIUS..LAYOUT_RADIUS)];
            if objects.iter().all(|o| ((o.pose.translation[0] - p[0]).powi(2) + (o.pose.translation[1] - p[1]).powi(2)).sqrt() >= MIN_SEPARATION) {
                break p;
            }
        };
        let yaw = rng.gen_range(0.0..2.0 * PI);
        let pose = RigidTransform::new(Rotation::rot_z(yaw), [xy[0], xy[1], TABLE_Z + half[2]]);
        objects.push(ToyObject { color, half, pose });
    }
    let mut points = Vec::new();
    let mut colors = Vec::new();
    for o in &objects {
        sample_surface(rng, o, POINTS_PER_OBJECT, &mut points, &mut colors);
    }
    let gripper = Gripper { pose: RigidTransform::new(Rotation::identity(), ws.to_world([0.0, 0.0, 0.2])), open: rng.gen_bool(0.5) };
    let target = objects.iter().find(|o| o.color == task.color).expect("every color is present");
    let expert = expert_action(task.family, target);
    let observation = Observation { points, colors, gripper, workspace: ws };
    let scene = ToyScene { task, objects, demo: Demonstration { observation, instruction: task.instruction(), expert } };
    match mode {
        SceneMode::Se2 => scene,
        SceneMode::Se3 => scene.transformed(&RigidTransform::about_point(Rotation::random(rng), ws.center)),
    }
}

/// `n` points on the cuboid surface, area-weighted, with marker patches
/// on the +x (yellow) and +z (white) faces.
fn sample_surface<R: Rng + ?Sized>(rng: &mut R, o: &ToyObject, n: usize, points: &mut Vec<Vec3>, colors: &mut Vec<[f64; 3]>) {
    let h = o.half;
    let areas = [h[1] * h[2], h[1] * h[2], h[0] * h[2], h[0] * h[2], h[0] * h[1], h[0] * h[1]];
    let total: f64 = areas.iter().sum();
    for _ in 0..n {
        let mut u = rng.gen_range(0.0..total);
        let mut face = 0;
        while face < 5 && u >= areas[face] {
            u -= areas[face];
            face += 1;
        }
        let axis = face / 2;
        let sign = if face % 2 == 0 { 1.0 } else { -1.0 };
        let mut local = [0.0; 3];
        for (i, l) in local.iter_mut().enumerate() {
            *l = if i == axis { sign * h[i] } else { rng.gen_range(-h[i]..h[i]) };
        }
        let color = if face == 0 {
            YELLOW
        } else if face == 4 && local[0] > 0.0 {
            WHITE
        } else {
            o.color.rgb()
        };
        points.push(o.pose.apply(local));
        colors.push(color);
    }
}

/// `per_task` scenes for each task in `tasks`, generated in task order.
pub fn generate_suite<R: Rng + ?Sized>(rng: &mut R, tasks: &[Task], per_task: usize, mode: SceneMode) -> Vec<ToyScene> {
    tasks.iter().flat_map(|&t| (0..per_task).map(move |_| t)).collect::<Vec<_>>().into_iter().map(|t| generate_scene(rng, t, mode)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn expert_covaries_with_rigid_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for task in Task::all() {
            let s = generate_scene(&mut rng, task, SceneMode::Se2);
            let g = RigidTransform::random(&mut rng, 0.3);
            let moved = s.transformed(&g);
            let obj = moved.objects.iter().find(|o| o.color == task.color).unwrap();
            let (dp, dr) = expert_action(task.family, obj).error_to(&moved.demo.expert);
            assert!(dp < 1e-12 && dr < 1e-7);
        }
    }

    #[test]
    fn scenes_are_reproducible_and_sized() {
        let a = generate_scene(&mut ChaCha8Rng::seed_from_u64(2), Task::all()[4], SceneMode::Se3);
        let b = generate_scene(&mut ChaCha8Rng::seed_from_u64(2), Task::all()[4], SceneMode::Se3);
        assert_eq!(a.demo, b.demo);
        let n = a.demo.observation.points.len();
        assert!((200..=600).contains(&n));
        a.demo.observation.validate().unwrap();
    }

    #[test]
    fn targets_lie_inside_the_workspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in generate_suite(&mut rng, &Task::all(), 20, SceneMode::Se3) {
            let ws = s.demo.observation.workspace;
            assert!(ws.contains(s.demo.expert.position, 0.0));
            assert!(s.demo.observation.points.iter().all(|p| ws.contains(*p, 0.0)));
        }
    }

    #[test]
    fn instruction_names_round_trip() {
        for t in Task::all() {
            assert_eq!(t.instruction().parse::<Task>().unwrap(), t);
        }
        assert!(matches!("juggle-red".parse::<Task>(), Err(Error::Vocabulary(_))));
    }

    #[test]
    fn success_predicate_uses_all_three_components() {
        let e = KeyframeAction { position: [0.0; 3], rotation: Rotation::identity(), open: true };
        assert!(is_success(&e, &e));
        assert!(!is_success(&KeyframeAction { position: [0.03, 0.0, 0.0], ..e }, &e));
        assert!(!is_success(&KeyframeAction { rotation: Rotation::rot_y(0.4), ..e }, &e));
        assert!(!is_success(&KeyframeAction { open: false, ..e }, &e));
    }
}
