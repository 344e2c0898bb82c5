//! Per-frame network inputs in the sequence's canonical space.

use std::collections::HashMap;
use std::ops::Range;

use super::losses::FrameTarget;
use crate::articulated_object::{articulate, ArticulatedObject, CanonicalTransform, JointState};
use crate::error::{HaoiError, Result};
use crate::hand_model::{GraspParams, Vec3};
use crate::synth_data::HAOISequence;

/// xyz, xyz relative to the contact point, movable-part flag.
pub const POINT_FEATURES: usize = 7;

/// Per-point features of `n` points drawn at a fixed stride from `points`.
pub fn point_features(points: &[Vec3], movable: &[bool], contact: &Vec3, n: usize) -> Result<Vec<f32>> {
    if points.is_empty() || n == 0 {
        return Err(HaoiError::validation("point cloud is empty"));
    }
    if points.len() != movable.len() {
        return Err(HaoiError::validation("point flags do not match the cloud"));
    }
    if points.iter().chain(std::iter::once(contact)).any(|p| p.iter().any(|x| !x.is_finite())) {
        return Err(HaoiError::validation("point cloud has non-finite coordinates"));
    }
    if points.iter().all(|p| (p - points[0]).norm() == 0.0) {
        return Err(HaoiError::validation("point cloud is degenerate: all points coincide"));
    }
    let mut out = Vec::with_capacity(n * POINT_FEATURES);
    for i in 0..n {
        let k = i * points.len() / n;
        let p = points[k];
        let rel = p - contact;
        out.extend([p.x, p.y, p.z, rel.x, rel.y, rel.z].map(|x| x as f32));
        out.push(if movable[k] { 1.0 } else { 0.0 });
    }
    Ok(out)
}

/// Rest-state object cloud of one sequence, used for the object condition.
#[derive(Debug, Clone)]
pub struct ObjectContext {
    pub cloud: Vec<f32>,
    pub n_points: usize,
    pub transform: CanonicalTransform,
}

impl ObjectContext {
    pub fn new(obj: &ArticulatedObject, transform: &CanonicalTransform, rest_contact: &Vec3, n: usize) -> Result<Self> {
        let pts: Vec<Vec3> = obj.rest_points().iter().map(|p| transform.apply_inverse(p)).collect();
        let contact = transform.apply_inverse(rest_contact);
        Ok(Self {
            cloud: point_features(&pts, &obj.movable_flags(), &contact, n)?,
            n_points: n,
            transform: *transform,
        })
    }

    /// Context of a sequence: its canonical frame and its first contact moved to rest.
    pub fn of_sequence(seq: &HAOISequence, obj: &ArticulatedObject, n: usize) -> Result<Self> {
        let first = seq
            .frames
            .first()
            .ok_or_else(|| HaoiError::validation(format!("sequence {} has no frames", seq.id)))?;
        let rest_contact = obj.movable_to_rest(&first.contact_point, &first.joint_state)?;
        Self::new(obj, &first.canonical_t, &rest_contact, n)
    }
}

/// Object cloud of one frame at its joint state, in canonical space.
pub fn frame_cloud(
    obj: &ArticulatedObject,
    state: &JointState,
    contact: &Vec3,
    transform: &CanonicalTransform,
    n: usize,
) -> Result<Vec<f32>> {
    let pts: Vec<Vec3> = articulate(obj, state)?
        .iter()
        .map(|p| transform.apply_inverse(p))
        .collect();
    point_features(&pts, &obj.movable_flags(), &transform.apply_inverse(contact), n)
}

#[derive(Debug, Clone)]
pub struct FrameSample {
    pub cloud: Vec<f32>,
    pub contact: Vec3,
    pub context: usize,
    pub target: FrameTarget,
}

impl FrameSample {
    pub fn beta(&self) -> &GraspParams {
        &self.target.beta
    }
}

#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    pub contexts: Vec<ObjectContext>,
    pub frames: Vec<FrameSample>,
    /// Frame ranges per sequence id, in input order.
    pub sequences: Vec<(String, Range<usize>)>,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames_of(&self, index: usize) -> Range<usize> {
        self.sequences[index].1.clone()
    }
}

/// Builds the objects referenced by `sequences`, once per id.
pub fn build_objects(sequences: &[HAOISequence]) -> Result<HashMap<String, ArticulatedObject>> {
    let mut objects = HashMap::new();
    for seq in sequences {
        if !objects.contains_key(&seq.object.id) {
            objects.insert(seq.object.id.clone(), seq.object.build()?);
        }
    }
    Ok(objects)
}

pub fn prepare_sequences(
    sequences: &[HAOISequence],
    objects: &HashMap<String, ArticulatedObject>,
    n_points: usize,
) -> Result<SampleSet> {
    let mut set = SampleSet::default();
    for seq in sequences {
        let obj = objects
            .get(&seq.object.id)
            .ok_or_else(|| HaoiError::validation(format!("object {} not available", seq.object.id)))?;
        let context = ObjectContext::of_sequence(seq, obj, n_points)?;
        let ctx_index = set.contexts.len();
        set.contexts.push(context);
        let start = set.frames.len();
        for frame in &seq.frames {
            let t = &frame.canonical_t;
            let (r_inv, t_inv) = (t.rotation().transpose(), -(t.rotation().transpose() * t.translation()));
            let hulls = obj
                .hulls_at(&frame.joint_state)?
                .iter()
                .map(|h| h.transformed(&r_inv, &t_inv))
                .collect();
            set.frames.push(FrameSample {
                cloud: frame_cloud(obj, &frame.joint_state, &frame.contact_point, t, n_points)?,
                contact: frame.canonical_contact(),
                context: ctx_index,
                target: FrameTarget {
                    beta: frame.canonical_beta(),
                    joint: frame.canonical_joint(),
                    kind: obj.joint.kind,
                    hulls,
                },
            });
        }
        set.sequences.push((seq.id.clone(), start..set.frames.len()));
    }
    Ok(set)
}
