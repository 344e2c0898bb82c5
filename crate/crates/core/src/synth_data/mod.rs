//! Scripted manipulation sequences over procedural objects, with template captions.
//!
//! A sequence starts with the hand already in contact. The palm anchor vertex is
//! pinned to the (articulated) contact point and the wrist turns with the movable
//! part, so the hand rotation relative to its rest grasp equals the joint rotation.

pub mod captions;
pub mod dataset;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use captions::caption_for;
pub use dataset::{
    read_dataset, read_split, split_dataset, write_dataset, write_splits, DatasetManifest, ManifestMeta,
    SplitManifests,
};

use crate::articulated_object::{
    generate_object_with_points, grasp_direction, sample_contact_points, ArticulatedObject, CanonicalTransform,
    Category, JointState,
};
use crate::error::{HaoiError, Result};
use crate::hand_model::{rodrigues, GraspParams, HandModelSpec, Mat3, Vec3, POSE_DIM};
use crate::rng::{derive_seed, seeded};

pub const MIN_FRAMES: usize = 8;
pub const MAX_FRAMES: usize = 64;
/// Largest allowed anchor-to-contact distance in a scripted frame, meters.
pub const TRACKING_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Open,
    Close,
}

impl Direction {
    pub fn verb(self) -> &'static str {
        match self {
            Direction::Open => "open",
            Direction::Close => "close",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb())
    }
}

impl FromStr for Direction {
    type Err = HaoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "open" => Ok(Direction::Open),
            "close" => Ok(Direction::Close),
            _ => Err(HaoiError::validation(format!("unknown direction '{s}' (expected open or close)"))),
        }
    }
}

/// Coarse contact region from the dominant component of the grasp direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContactRegion {
    Front,
    Back,
    Left,
    Right,
    Top,
    Bottom,
}

impl ContactRegion {
    pub const ALL: [ContactRegion; 6] = [
        ContactRegion::Front,
        ContactRegion::Back,
        ContactRegion::Left,
        ContactRegion::Right,
        ContactRegion::Top,
        ContactRegion::Bottom,
    ];

    /// +x right, +y back, +z top.
    pub fn from_direction(d: &Vec3) -> Self {
        let axis = d.iamax();
        let positive = d[axis] >= 0.0;
        match (axis, positive) {
            (0, true) => ContactRegion::Right,
            (0, false) => ContactRegion::Left,
            (1, true) => ContactRegion::Back,
            (1, false) => ContactRegion::Front,
            (_, true) => ContactRegion::Top,
            (_, false) => ContactRegion::Bottom,
        }
    }

    pub fn word(self) -> &'static str {
        match self {
            ContactRegion::Front => "front",
            ContactRegion::Back => "back",
            ContactRegion::Left => "left",
            ContactRegion::Right => "right",
            ContactRegion::Top => "top",
            ContactRegion::Bottom => "bottom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub category: Category,
    pub direction: Direction,
    pub angle_range: (f64, f64),
    pub region: ContactRegion,
}

/// Enough to regenerate the object deterministically.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectRef {
    pub id: String,
    pub category: Category,
    pub seed: u64,
    pub point_count: usize,
}

impl ObjectRef {
    pub fn of(obj: &ArticulatedObject) -> Self {
        Self {
            id: obj.id.clone(),
            category: obj.category,
            seed: obj.seed,
            point_count: obj.point_count(),
        }
    }

    pub fn build(&self) -> Result<ArticulatedObject> {
        let obj = generate_object_with_points(self.category, self.seed, self.point_count)?;
        if obj.id != self.id {
            return Err(HaoiError::validation(format!(
                "object reference {} regenerates as {}",
                self.id, obj.id
            )));
        }
        Ok(obj)
    }
}

/// Marks sequences produced by a model rather than by the scripted generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub task: String,
    pub source_sequence: String,
    pub sample_index: usize,
    pub checkpoint: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HAOIFrame {
    pub beta: GraspParams,
    pub joint_state: JointState,
    pub contact_point: Vec3,
    pub canonical_t: CanonicalTransform,
}

impl HAOIFrame {
    /// Grasp parameters expressed in the frame's canonical space.
    pub fn canonical_beta(&self) -> GraspParams {
        let rot = self.canonical_t.rotation();
        let rot_t = rot.transpose();
        let r = crate::hand_model::rotation_to_axis_angle(&(rot_t * rodrigues(&self.beta.rot)));
        GraspParams {
            rot: r,
            pose: self.beta.pose,
            trans: self.canonical_t.apply_inverse(&self.beta.trans),
        }
    }

    /// Joint state with its axis expressed in canonical space.
    pub fn canonical_joint(&self) -> Vec3 {
        self.canonical_t.rotation().transpose() * self.joint_state.0
    }

    pub fn canonical_contact(&self) -> Vec3 {
        self.canonical_t.apply_inverse(&self.contact_point)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HAOISequence {
    pub id: String,
    pub object: ObjectRef,
    pub frames: Vec<HAOIFrame>,
    pub caption: String,
    pub task_meta: TaskMeta,
    pub provenance: Option<Provenance>,
}

impl HAOISequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn is_generated(&self) -> bool {
        self.provenance.is_some()
    }

    /// Joint position along the object axis per frame.
    pub fn joint_magnitudes(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.joint_state.magnitude()).collect()
    }

    /// Checks that need no object: counts, finiteness, transforms and, for
    /// scripted sequences, the direction/monotonicity contract.
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(HaoiError::validation(format!("sequence {} has no frames", self.id)));
        }
        for (k, f) in self.frames.iter().enumerate() {
            f.beta
                .validate()
                .map_err(|e| HaoiError::validation(format!("sequence {} frame {k}: {e}", self.id)))?;
            if f.joint_state.0.iter().chain(f.contact_point.iter()).any(|x| !x.is_finite()) {
                return Err(HaoiError::validation(format!(
                    "sequence {} frame {k}: non-finite joint state or contact",
                    self.id
                )));
            }
            f.canonical_t
                .validate()
                .map_err(|e| HaoiError::validation(format!("sequence {} frame {k}: {e}", self.id)))?;
        }
        if self.is_generated() {
            return Ok(());
        }
        let t = self.frames.len();
        if !(MIN_FRAMES..=MAX_FRAMES).contains(&t) {
            return Err(HaoiError::validation(format!(
                "sequence {} has {t} frames, expected {MIN_FRAMES}..={MAX_FRAMES}",
                self.id
            )));
        }
        let m = self.joint_magnitudes();
        let monotone = match self.task_meta.direction {
            Direction::Open => m.windows(2).all(|w| w[1] >= w[0]),
            Direction::Close => m.windows(2).all(|w| w[1] <= w[0]),
        };
        if !monotone {
            return Err(HaoiError::validation(format!(
                "sequence {}: joint magnitudes are not monotone for direction {}",
                self.id, self.task_meta.direction
            )));
        }
        Ok(())
    }

    /// Object-dependent checks: joint limits and contact on the graspable set.
    pub fn validate_against(&self, obj: &ArticulatedObject) -> Result<()> {
        self.validate()?;
        for (k, f) in self.frames.iter().enumerate() {
            f.joint_state.validate(&obj.joint)?;
            if !self.is_generated() {
                let rest = obj.movable_to_rest(&f.contact_point, &f.joint_state)?;
                if !obj.is_graspable(&rest) {
                    return Err(HaoiError::validation(format!(
                        "sequence {} frame {k}: contact point is not on the graspable set",
                        self.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Rotation taking local +z to `dir` (unit), with a fixed choice of the remaining axes.
fn align_z(dir: &Vec3) -> Mat3 {
    let reference = if dir.z.abs() < 0.9 { Vec3::z() } else { Vec3::x() };
    let x = reference.cross(dir).normalize();
    let y = dir.cross(&x);
    Mat3::from_columns(&[x, y, *dir])
}

pub fn generate_sequence(
    obj: &ArticulatedObject,
    hand: &HandModelSpec,
    contact: &Vec3,
    direction: Direction,
    t: usize,
    seed: u64,
) -> Result<HAOISequence> {
    if !(MIN_FRAMES..=MAX_FRAMES).contains(&t) {
        return Err(HaoiError::validation(format!(
            "frame count {t} outside {MIN_FRAMES}..={MAX_FRAMES}"
        )));
    }
    if !obj.is_graspable(contact) {
        return Err(HaoiError::validation("contact point is not on the object's graspable set"));
    }
    let mut rng = seeded(seed);

    let d = grasp_direction(contact, &obj.mass_center);
    let d_hat = if d.norm() > 1e-9 { d.normalize() } else { Vec3::z() };
    let roll = rng.random_range(-0.4..0.4);
    let r_base = rodrigues(&(d_hat * roll)) * align_z(&d_hat);

    let sigma = Normal::new(0.0, 0.25).map_err(|e| HaoiError::Invariant(e.to_string()))?;
    let drift = Normal::new(0.0, 0.1).map_err(|e| HaoiError::Invariant(e.to_string()))?;
    let base_pose: [f64; POSE_DIM] = std::array::from_fn(|_| sigma.sample(&mut rng));
    let closing: [f64; POSE_DIM] = std::array::from_fn(|_| drift.sample(&mut rng));

    let anchor_at_rest = hand.posed_vertex(hand.anchor_vertex, &base_pose);
    let t_base = contact - r_base * anchor_at_rest;
    let canonical_t = CanonicalTransform::from_parts(&r_base, &t_base);

    let (lo, hi) = obj.joint.limits;
    let mut frames = Vec::with_capacity(t);
    for k in 0..t {
        let u = k as f64 / (t - 1) as f64;
        let s = match direction {
            Direction::Open => lo + (hi - lo) * u,
            Direction::Close => hi - (hi - lo) * u,
        };
        let state = JointState::along(&obj.joint, s);
        let (r_part, t_part) = obj.part_motion(&state)?;
        let pose: [f64; POSE_DIM] = std::array::from_fn(|i| base_pose[i] + u * closing[i]);
        let rot = r_part * r_base;
        let contact_k = r_part * contact + t_part;
        let trans = contact_k - rot * hand.posed_vertex(hand.anchor_vertex, &pose);
        frames.push(HAOIFrame {
            beta: GraspParams::new(crate::hand_model::rotation_to_axis_angle(&rot), pose, trans),
            joint_state: state,
            contact_point: contact_k,
            canonical_t,
        });
    }

    let region = ContactRegion::from_direction(&d);
    let task_meta = TaskMeta {
        category: obj.category,
        direction,
        angle_range: obj.joint.limits,
        region,
    };
    let caption = generate_caption_from_meta(&task_meta, derive_seed(seed, &[0x636170]));
    Ok(HAOISequence {
        id: format!("{}-{}", obj.id, seed),
        object: ObjectRef::of(obj),
        frames,
        caption,
        task_meta,
        provenance: None,
    })
}

pub fn generate_caption(seq: &HAOISequence, seed: u64) -> String {
    generate_caption_from_meta(&seq.task_meta, seed)
}

fn generate_caption_from_meta(meta: &TaskMeta, seed: u64) -> String {
    caption_for(meta.category, meta.direction, meta.region, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub categories: Vec<Category>,
    pub objects_per_category: usize,
    pub contacts_per_object: usize,
    pub directions: Vec<Direction>,
    pub frames_min: usize,
    pub frames_max: usize,
    pub object_points: usize,
    pub split: [f64; 3],
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            categories: Category::ALL.to_vec(),
            objects_per_category: 4,
            contacts_per_object: 20,
            directions: vec![Direction::Open, Direction::Close],
            frames_min: 8,
            frames_max: 32,
            object_points: crate::articulated_object::DEFAULT_POINT_COUNT,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl DatasetConfig {
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.categories.is_empty() {
            out.push("dataset.categories: must not be empty".into());
        }
        if self.objects_per_category == 0 {
            out.push("dataset.objects_per_category: must be at least 1".into());
        }
        if self.contacts_per_object == 0 {
            out.push("dataset.contacts_per_object: must be at least 1".into());
        }
        if self.directions.is_empty() {
            out.push("dataset.directions: must not be empty".into());
        }
        if self.frames_min < MIN_FRAMES || self.frames_max > MAX_FRAMES || self.frames_min > self.frames_max {
            out.push(format!(
                "dataset.frames_min/frames_max: need {MIN_FRAMES} <= min <= max <= {MAX_FRAMES}"
            ));
        }
        if self.object_points < 64 {
            out.push("dataset.object_points: must be at least 64".into());
        }
        if self.split.iter().any(|r| !(*r >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            out.push("dataset.split: ratios must be nonnegative and sum to 1".into());
        }
        out
    }
}

/// Every (object, contact, direction) sequence for a master seed, in a fixed order.
pub fn generate_dataset(config: &DatasetConfig, hand: &HandModelSpec, master_seed: u64) -> Result<Vec<HAOISequence>> {
    if let Some(p) = config.problems().into_iter().next() {
        return Err(HaoiError::validation(p));
    }
    let mut out = Vec::new();
    for &category in &config.categories {
        for i in 0..config.objects_per_category {
            let obj_seed = derive_seed(master_seed, &[category as u64, i as u64]);
            let obj = generate_object_with_points(category, obj_seed, config.object_points)?;
            let contacts = sample_contact_points(&obj, config.contacts_per_object, derive_seed(obj_seed, &[1]))?;
            for (c, contact) in contacts.iter().enumerate() {
                for &direction in &config.directions {
                    let seq_seed = derive_seed(obj_seed, &[2, c as u64, direction as u64]);
                    let t = seeded(seq_seed).random_range(config.frames_min..=config.frames_max);
                    let mut seq = generate_sequence(&obj, hand, contact, direction, t, seq_seed)?;
                    seq.id = format!("{}-c{c}-{}", obj.id, direction.verb());
                    out.push(seq);
                }
            }
        }
    }
    Ok(out)
}
