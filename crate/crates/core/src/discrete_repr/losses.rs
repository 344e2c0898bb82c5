//! Loss terms over decoded stage outputs, each with an analytic gradient.
//!
//! The networks run in single precision; these terms are evaluated in f64 on
//! the decoder outputs and their gradients are fed back as constants.

use serde::{Deserialize, Serialize};

use super::codebook::Codebook;
use crate::articulated_object::{JointKind, SurfaceHull, TriMesh};
use crate::error::{HaoiError, Result};
use crate::hand_model::rotation::geodesic_angle_deg_grad;
use crate::hand_model::{
    geodesic_angle_deg, rodrigues, rodrigues_vjp, rotation_to_axis_angle, GraspParams, HandMesh, HandModelSpec,
    Mat3, Vec3, POSE_DIM,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub lambda_j: f64,
    pub lambda_1: f64,
    pub lambda_2: f64,
    pub lambda_3: f64,
    /// Listed with the other weights but not attached to any term.
    pub lambda_4: f64,
    pub beta_commit: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_c: 1.0,
            lambda_j: 1.0,
            lambda_1: 1.0,
            lambda_2: 1.0,
            lambda_3: 1.0,
            lambda_4: 1.0,
            beta_commit: 0.25,
        }
    }
}

impl LossWeights {
    pub fn problems(&self) -> Vec<String> {
        let named = [
            ("lambda_p", self.lambda_p),
            ("lambda_c", self.lambda_c),
            ("lambda_j", self.lambda_j),
            ("lambda_1", self.lambda_1),
            ("lambda_2", self.lambda_2),
            ("lambda_3", self.lambda_3),
            ("lambda_4", self.lambda_4),
            ("beta_commit", self.beta_commit),
        ];
        named
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(n, v)| format!("vqvae.weights.{n}: must be a nonnegative number, got {v}"))
            .collect()
    }
}

/// Raw decoder outputs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutputs {
    /// `R̂, T̂` from the global stage.
    pub rot: Vec3,
    pub trans: Vec3,
    /// `P̂` from the local stage.
    pub pose: [f64; POSE_DIM],
    /// Refinement residuals `ΔR̂, ΔP̂, ΔT̂`.
    pub delta_rot: Vec3,
    pub delta_pose: [f64; POSE_DIM],
    pub delta_trans: Vec3,
    /// Joint estimate `Ĵ`.
    pub joint: Vec3,
}

impl StageOutputs {
    pub fn identity_residuals(rot: Vec3, pose: [f64; POSE_DIM], trans: Vec3, joint: Vec3) -> Self {
        Self {
            rot,
            trans,
            pose,
            delta_rot: Vec3::zeros(),
            delta_pose: [1.0; POSE_DIM],
            delta_trans: Vec3::zeros(),
            joint,
        }
    }

    pub fn zeros() -> Self {
        Self::identity_residuals(Vec3::zeros(), [0.0; POSE_DIM], Vec3::zeros(), Vec3::zeros())
    }

    pub fn final_rotation(&self) -> Mat3 {
        rodrigues(&self.delta_rot) * rodrigues(&self.rot)
    }

    pub fn final_pose(&self) -> [f64; POSE_DIM] {
        std::array::from_fn(|i| self.delta_pose[i] * self.pose[i])
    }

    pub fn final_trans(&self) -> Vec3 {
        self.delta_trans + self.trans
    }

    /// `β̂ = (ΔR̂·R̂, ΔP̂ ⊙ P̂, ΔT̂ + T̂)` with the rotation as a canonical axis-angle.
    pub fn final_beta(&self) -> GraspParams {
        GraspParams::new(
            rotation_to_axis_angle(&self.final_rotation()),
            self.final_pose(),
            self.final_trans(),
        )
    }

    /// Flattened `[R̂, T̂, P̂, ΔR̂, ΔP̂, ΔT̂, Ĵ]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::LEN);
        v.extend(self.rot.iter());
        v.extend(self.trans.iter());
        v.extend(self.pose.iter());
        v.extend(self.delta_rot.iter());
        v.extend(self.delta_pose.iter());
        v.extend(self.delta_trans.iter());
        v.extend(self.joint.iter());
        v
    }

    pub const LEN: usize = 3 + 3 + POSE_DIM + 3 + POSE_DIM + 3 + 3;

    pub fn from_slice(v: &[f64]) -> Self {
        assert_eq!(v.len(), Self::LEN);
        let v3 = |o: usize| Vec3::new(v[o], v[o + 1], v[o + 2]);
        let p = |o: usize| -> [f64; POSE_DIM] { std::array::from_fn(|i| v[o + i]) };
        Self {
            rot: v3(0),
            trans: v3(3),
            pose: p(6),
            delta_rot: v3(6 + POSE_DIM),
            delta_pose: p(9 + POSE_DIM),
            delta_trans: v3(9 + 2 * POSE_DIM),
            joint: v3(12 + 2 * POSE_DIM),
        }
    }
}

/// Ground truth a frame's stage outputs are scored against.
#[derive(Debug, Clone)]
pub struct FrameTarget {
    pub beta: GraspParams,
    pub joint: Vec3,
    pub kind: JointKind,
    /// Object part hulls at the ground-truth joint state.
    pub hulls: Vec<SurfaceHull>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub penetration: f64,
    pub consistency: f64,
    pub joint: f64,
    pub recon_global: f64,
    pub recon_pose: f64,
    pub recon_refined: f64,
    pub commitment: f64,
}

impl LossBreakdown {
    pub fn articulation(&self, w: &LossWeights) -> f64 {
        loss_articulation([self.penetration, self.consistency, self.joint], w)
    }

    pub fn reconstruction(&self, w: &LossWeights) -> f64 {
        w.lambda_1 * self.recon_global + w.lambda_2 * self.recon_pose + w.lambda_3 * self.recon_refined
    }

    pub fn total(&self, w: &LossWeights) -> f64 {
        self.articulation(w) + self.reconstruction(w) + self.commitment
    }

    pub fn terms(&self) -> [(&'static str, f64); 7] {
        [
            ("penetration", self.penetration),
            ("pose_consistency", self.consistency),
            ("joint", self.joint),
            ("reconstruction_global", self.recon_global),
            ("reconstruction_pose", self.recon_pose),
            ("reconstruction_refined", self.recon_refined),
            ("commitment", self.commitment),
        ]
    }

    /// Name of the first non-finite term, in the order of [`Self::terms`].
    pub fn first_non_finite(&self) -> Option<&'static str> {
        self.terms().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }

    pub fn accumulate(&mut self, other: &LossBreakdown, scale: f64) {
        self.penetration += scale * other.penetration;
        self.consistency += scale * other.consistency;
        self.joint += scale * other.joint;
        self.recon_global += scale * other.recon_global;
        self.recon_pose += scale * other.recon_pose;
        self.recon_refined += scale * other.recon_refined;
        self.commitment += scale * other.commitment;
    }
}

/// `λ_P·L_P + λ_C·L_C + λ_J·L_J` for components `[L_P, L_C, L_J]`.
pub fn loss_articulation(components: [f64; 3], w: &LossWeights) -> f64 {
    w.lambda_p * components[0] + w.lambda_c * components[1] + w.lambda_j * components[2]
}

/// Mean squared distance from each interior vertex to its closest surface point.
pub fn loss_penetration(hand: &HandMesh, surface: &[TriMesh]) -> Result<f64> {
    let hulls = surface
        .iter()
        .map(|m| SurfaceHull::new(m.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(penetration_with_grad(&hand.vertices, &hulls).0)
}

/// Value and per-vertex gradient of the penetration term. A vertex inside several
/// part hulls is scored against the nearest of their surfaces.
pub fn penetration_with_grad(vertices: &[Vec3], hulls: &[SurfaceHull]) -> (f64, Vec<Vec3>) {
    let mut offsets: Vec<(usize, Vec3)> = Vec::new();
    for (i, v) in vertices.iter().enumerate() {
        let mut best: Option<Vec3> = None;
        for hull in hulls {
            if let Some(p) = hull.penetration(v) {
                let off = v - p.surface_point;
                if best.is_none_or(|b| off.norm_squared() < b.norm_squared()) {
                    best = Some(off);
                }
            }
        }
        if let Some(off) = best {
            offsets.push((i, off));
        }
    }
    let mut grad = vec![Vec3::zeros(); vertices.len()];
    if offsets.is_empty() {
        return (0.0, grad);
    }
    let n = offsets.len() as f64;
    let mut value = 0.0;
    for (i, off) in offsets {
        value += off.norm_squared();
        grad[i] = off * (2.0 / n);
    }
    (value / n, grad)
}

/// Rotational joints: geodesic angle in degrees between `J` and `R` as rotations.
/// Prismatic joints: `‖J − T‖₂`.
pub fn loss_pose_consistency(joint: &Vec3, r_or_t: &Vec3, kind: JointKind) -> Result<f64> {
    match kind {
        JointKind::Revolute => geodesic_angle_deg(&rodrigues(joint), &rodrigues(r_or_t)),
        JointKind::Prismatic => Ok((joint - r_or_t).norm()),
    }
}

/// Joint-kind-checked form used where the caller states which branch it expects.
pub fn loss_pose_consistency_checked(
    joint: &Vec3,
    r_or_t: &Vec3,
    kind: JointKind,
    joint_kind: JointKind,
) -> Result<f64> {
    if kind != joint_kind {
        return Err(HaoiError::validation(format!(
            "pose consistency requested as {kind:?} for a {joint_kind:?} joint"
        )));
    }
    loss_pose_consistency(joint, r_or_t, kind)
}

/// `‖Ĵ − J‖²`.
pub fn loss_joint(predicted: &Vec3, target: &Vec3) -> f64 {
    (predicted - target).norm_squared()
}

fn squared_distance_sum(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_squared()).sum()
}

/// The three mesh-space reconstruction terms `[global, pose, refined]`, unweighted.
pub fn loss_reconstruction(gt: &GraspParams, out: &StageOutputs, hand: &HandModelSpec) -> [f64; 3] {
    let gt_rot = rodrigues(&gt.rot);
    let zero = [0.0; POSE_DIM];
    let gt_rigid = hand.mesh_from_matrix(&gt_rot, &zero, &gt.trans).vertices;
    let gt_full = hand.mesh_from_matrix(&gt_rot, &gt.pose, &gt.trans).vertices;
    let rot = rodrigues(&out.rot);
    let global = hand.mesh_from_matrix(&rot, &zero, &out.trans).vertices;
    let pose = hand.mesh_from_matrix(&rot, &out.pose, &out.trans).vertices;
    let refined = hand
        .mesh_from_matrix(&out.final_rotation(), &out.final_pose(), &out.final_trans())
        .vertices;
    [
        squared_distance_sum(&global, &gt_rigid),
        squared_distance_sum(&pose, &gt_full),
        squared_distance_sum(&refined, &gt_full),
    ]
}

/// Per-stage `‖sg[q] − N(q)‖² + β‖q − sg[N(q)]‖²`, summed over stages.
///
/// Returns `(codebook_term, encoder_term)`; the loss value is their sum, the
/// first term carries gradient only to codebook entries and the second, already
/// scaled by `beta`, only to the features.
pub fn loss_commitment(features: &[(&[f64], &Codebook)], beta: f64) -> Result<(f64, f64)> {
    let mut codebook_term = 0.0;
    let mut encoder_term = 0.0;
    for (q, book) in features {
        let (_, d2) = book.nearest(q)?;
        codebook_term += d2;
        encoder_term += beta * d2;
    }
    Ok((codebook_term, encoder_term))
}

/// Gradient of a frame's loss with respect to every raw stage output.
pub fn frame_loss(
    out: &StageOutputs,
    target: &FrameTarget,
    hand: &HandModelSpec,
    w: &LossWeights,
) -> (LossBreakdown, StageOutputs) {
    let zero = [0.0; POSE_DIM];
    let gt_rot = rodrigues(&target.beta.rot);
    let rot = rodrigues(&out.rot);
    let d_rot = rodrigues(&out.delta_rot);
    let final_rot = d_rot * rot;
    let final_pose = out.final_pose();
    let final_trans = out.final_trans();

    let mut g_rot_m = Mat3::zeros();
    let mut g_trans = Vec3::zeros();
    let mut g_pose = [0.0; POSE_DIM];
    let mut losses = LossBreakdown::default();

    // Global stage: rigid template only.
    let gt_rigid = hand.mesh_from_matrix(&gt_rot, &zero, &target.beta.trans).vertices;
    let global = hand.mesh_from_matrix(&rot, &zero, &out.trans).vertices;
    losses.recon_global = squared_distance_sum(&global, &gt_rigid);
    let grad_v: Vec<Vec3> = global.iter().zip(&gt_rigid).map(|(a, b)| (a - b) * (2.0 * w.lambda_1)).collect();
    let g = hand.mesh_vjp(&rot, &zero, &grad_v);
    g_rot_m += g.rot_matrix;
    g_trans += g.trans;

    // Local stage.
    let gt_full = hand.mesh_from_matrix(&gt_rot, &target.beta.pose, &target.beta.trans).vertices;
    let posed = hand.mesh_from_matrix(&rot, &out.pose, &out.trans).vertices;
    losses.recon_pose = squared_distance_sum(&posed, &gt_full);
    let grad_v: Vec<Vec3> = posed.iter().zip(&gt_full).map(|(a, b)| (a - b) * (2.0 * w.lambda_2)).collect();
    let g = hand.mesh_vjp(&rot, &out.pose, &grad_v);
    g_rot_m += g.rot_matrix;
    g_trans += g.trans;
    for (a, b) in g_pose.iter_mut().zip(g.pose) {
        *a += b;
    }

    // Refined prediction: reconstruction plus penetration on the final mesh.
    let refined = hand.mesh_from_matrix(&final_rot, &final_pose, &final_trans).vertices;
    losses.recon_refined = squared_distance_sum(&refined, &gt_full);
    let (pen, pen_grad) = penetration_with_grad(&refined, &target.hulls);
    losses.penetration = pen;
    let grad_v: Vec<Vec3> = refined
        .iter()
        .zip(&gt_full)
        .zip(&pen_grad)
        .map(|((a, b), p)| (a - b) * (2.0 * w.lambda_3) + p * w.lambda_p)
        .collect();
    let gf = hand.mesh_vjp(&final_rot, &final_pose, &grad_v);
    let mut g_final_rot = gf.rot_matrix;
    let mut g_final_trans = gf.trans;

    match target.kind {
        JointKind::Revolute => {
            let (value, _, d_final) = geodesic_angle_deg_grad(&rodrigues(&target.joint), &final_rot);
            losses.consistency = value;
            g_final_rot += d_final * w.lambda_c;
        }
        JointKind::Prismatic => {
            let diff = final_trans - target.joint;
            let n = diff.norm();
            losses.consistency = n;
            if n > 0.0 {
                g_final_trans += diff * (w.lambda_c / n);
            }
        }
    }

    losses.joint = loss_joint(&out.joint, &target.joint);

    let grad = StageOutputs {
        rot: rodrigues_vjp(&out.rot, &(rot_grad_base(&d_rot, &g_final_rot) + g_rot_m)),
        trans: g_trans + g_final_trans,
        pose: std::array::from_fn(|i| g_pose[i] + gf.pose[i] * out.delta_pose[i]),
        delta_rot: rodrigues_vjp(&out.delta_rot, &(g_final_rot * rot.transpose())),
        delta_pose: std::array::from_fn(|i| gf.pose[i] * out.pose[i]),
        delta_trans: g_final_trans,
        joint: (out.joint - target.joint) * (2.0 * w.lambda_j),
    };
    (losses, grad)
}

/// Gradient reaching `R̂` through `ΔR̂·R̂`.
fn rot_grad_base(d_rot: &Mat3, g_final: &Mat3) -> Mat3 {
    d_rot.transpose() * g_final
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn articulation_examples() {
        let w = LossWeights::default();
        assert_eq!(loss_articulation([0.0, 0.0, 0.0], &w), 0.0);
        assert_eq!(loss_articulation([1.0, 2.0, 3.0], &w), 6.0);
        let w2 = LossWeights {
            lambda_p: 2.0,
            lambda_c: 0.0,
            lambda_j: 1.0,
            ..LossWeights::default()
        };
        assert_eq!(loss_articulation([1.0, 5.0, 3.0], &w2), 5.0);
    }

    #[test]
    fn pose_consistency_examples() {
        let j = Vec3::new(0.3, -0.2, 0.5);
        assert_eq!(loss_pose_consistency(&j, &j, JointKind::Revolute).unwrap(), 0.0);
        assert_eq!(loss_pose_consistency(&j, &j, JointKind::Prismatic).unwrap(), 0.0);
        let axis = Vec3::new(1.0, 2.0, -0.5).normalize();
        let v = loss_pose_consistency(&(axis * 0.2), &(axis * 0.7), JointKind::Revolute).unwrap();
        assert!((v - 28.647_889_756_541_16).abs() < 1e-9, "{v}");
        assert!(loss_pose_consistency_checked(&j, &j, JointKind::Prismatic, JointKind::Revolute).is_err());
    }

    #[test]
    fn joint_loss_zero_target() {
        let p = Vec3::new(0.1, -0.2, 0.3);
        assert_eq!(loss_joint(&p, &Vec3::zeros()), p.norm_squared());
    }

    #[test]
    fn commitment_examples() {
        let book = Codebook::new(crate::discrete_repr::Stage::G, 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let (a, b) = loss_commitment(&[(&[1.0, 1.0], &book)], 0.25).unwrap();
        assert_eq!(a + b, 0.0);
        let delta = 0.125;
        let (a, b) = loss_commitment(&[(&[delta, 0.0], &book)], 0.25).unwrap();
        assert_eq!(a + b, delta * delta + 0.25 * delta * delta);
    }

    #[test]
    fn output_vector_round_trip() {
        let mut o = StageOutputs::zeros();
        o.rot = Vec3::new(0.1, 0.2, 0.3);
        o.pose[4] = 0.7;
        o.delta_pose[89] = 1.5;
        o.joint = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(StageOutputs::from_slice(&o.to_vec()), o);
    }
}
