//! Parametric hand: grasp parameters `(R, P, T)` to a vertex mesh.
//!
//! The default backend is a synthetic linear model with MANO-compatible shapes
//! (778 vertices, 90 pose coefficients). A template and pose basis can also be
//! loaded from a JSON file with the same layout.

pub mod rotation;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use rotation::{
    compose_rotation, geodesic_angle_deg, rodrigues, rodrigues_derivatives, rodrigues_vjp,
    rotation_to_axis_angle, skew, Mat3, Vec3,
};

use crate::error::{HaoiError, Result};
use crate::records::Array2;

pub const POSE_DIM: usize = 90;
pub const DEFAULT_VERTEX_COUNT: usize = 778;
/// Rank of the synthetic pose basis.
const SYNTHETIC_BASIS_RANK: usize = 16;

/// β = (R, P, T): axis-angle global rotation, pose coefficients, translation in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspParams {
    pub rot: Vec3,
    pub pose: [f64; POSE_DIM],
    pub trans: Vec3,
}

impl Default for GraspParams {
    fn default() -> Self {
        Self {
            rot: Vec3::zeros(),
            pose: [0.0; POSE_DIM],
            trans: Vec3::zeros(),
        }
    }
}

impl GraspParams {
    pub fn new(rot: Vec3, pose: [f64; POSE_DIM], trans: Vec3) -> Self {
        Self { rot, pose, trans }
    }

    /// Flattened as `[R(3), P(90), T(3)]`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(POSE_DIM + 6);
        out.extend(self.rot.iter());
        out.extend(self.pose.iter());
        out.extend(self.trans.iter());
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != POSE_DIM + 6 {
            return Err(HaoiError::validation(format!(
                "grasp parameter vector has length {}, expected {}",
                v.len(),
                POSE_DIM + 6
            )));
        }
        let mut pose = [0.0; POSE_DIM];
        pose.copy_from_slice(&v[3..3 + POSE_DIM]);
        Ok(Self {
            rot: Vec3::new(v[0], v[1], v[2]),
            pose,
            trans: Vec3::new(v[93], v[94], v[95]),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.to_vec().iter().any(|x| !x.is_finite()) {
            return Err(HaoiError::validation("grasp parameters contain non-finite values"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandMesh {
    pub vertices: Vec<Vec3>,
}

impl HandMesh {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

/// Gradients with respect to a hand mesh evaluated from a rotation matrix.
#[derive(Debug, Clone)]
pub struct MeshGrad {
    pub rot_matrix: Mat3,
    pub pose: [f64; POSE_DIM],
    pub trans: Vec3,
}

/// Human-readable config block for the hand backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HandModelConfig {
    pub vertex_count: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub basis_path: Option<PathBuf>,
}

impl Default for HandModelConfig {
    fn default() -> Self {
        Self {
            vertex_count: DEFAULT_VERTEX_COUNT,
            seed: 0,
            basis_path: None,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisFile {
    template: Array2,
    pose_basis: Array2,
    anchor_vertex: usize,
}

#[derive(Debug, Clone)]
pub struct HandModelSpec {
    pub vertex_count: usize,
    pub template: Vec<Vec3>,
    /// Row-major `(3V) × 90`; row `3i + c` is coordinate `c` of vertex `i`.
    pub pose_basis: Vec<f64>,
    pub seed: u64,
    /// Palm-center vertex used to anchor the hand on a contact point.
    pub anchor_vertex: usize,
}

impl HandModelSpec {
    pub fn from_config(config: &HandModelConfig) -> Result<Self> {
        match &config.basis_path {
            Some(path) => {
                let spec = Self::load(path)?;
                if spec.vertex_count != config.vertex_count {
                    return Err(HaoiError::validation(format!(
                        "basis file has {} vertices, config says {}",
                        spec.vertex_count, config.vertex_count
                    )));
                }
                Ok(spec)
            }
            None => Self::synthetic(config.vertex_count, config.seed),
        }
    }

    /// Deterministic hand-shaped template (palm slab plus five finger rods) and a
    /// random low-rank pose basis that leaves the palm rigid.
    pub fn synthetic(vertex_count: usize, seed: u64) -> Result<Self> {
        if vertex_count < 16 {
            return Err(HaoiError::validation("hand model needs at least 16 vertices"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x68616e64);

        // Local frame: wrist at the origin, fingers along +y, palm faces -z.
        const PALM_HALF: [f64; 3] = [0.045, 0.045, 0.012];
        const PALM_CENTER_Y: f64 = 0.045;
        let fingers: [(Vec3, Vec3, f64); 5] = [
            (Vec3::new(-0.05, 0.03, -0.005), Vec3::new(-0.8, 0.6, -0.2), 0.06),
            (Vec3::new(-0.032, 0.09, 0.0), Vec3::y(), 0.075),
            (Vec3::new(-0.011, 0.09, 0.0), Vec3::y(), 0.085),
            (Vec3::new(0.011, 0.09, 0.0), Vec3::y(), 0.08),
            (Vec3::new(0.032, 0.09, 0.0), Vec3::y(), 0.065),
        ];

        let palm_count = (vertex_count * 2) / 5;
        let mut template = Vec::with_capacity(vertex_count);
        // Per-vertex (finger index, distance along finger); palm vertices have no finger.
        let mut finger_of: Vec<Option<(usize, f64)>> = Vec::with_capacity(vertex_count);

        template.push(Vec3::new(0.0, PALM_CENTER_Y, -PALM_HALF[2]));
        finger_of.push(None);
        while template.len() < palm_count {
            let face = rng.random_range(0..6);
            let mut p = Vec3::new(
                rng.random_range(-PALM_HALF[0]..PALM_HALF[0]),
                rng.random_range(-PALM_HALF[1]..PALM_HALF[1]),
                rng.random_range(-PALM_HALF[2]..PALM_HALF[2]),
            );
            let axis = face / 2;
            p[axis] = if face % 2 == 0 { -PALM_HALF[axis] } else { PALM_HALF[axis] };
            p.y += PALM_CENTER_Y;
            template.push(p);
            finger_of.push(None);
        }
        let finger_count = vertex_count - palm_count;
        for k in 0..finger_count {
            let f = k % fingers.len();
            let (base, dir, len) = fingers[f];
            let dir = dir.normalize();
            let along = rng.random_range(0.0..len);
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            let radius = 0.008;
            let u = dir.cross(&Vec3::z()).normalize();
            let w = dir.cross(&u);
            let p = base + dir * along + (u * angle.cos() + w * angle.sin()) * radius;
            template.push(p);
            finger_of.push(Some((f, along)));
        }

        // Latent finger deformations: each rank component moves every finger along a
        // random direction, proportionally to the distance from the finger base.
        let mut dirs = vec![[Vec3::zeros(); 5]; SYNTHETIC_BASIS_RANK];
        for comp in dirs.iter_mut() {
            for d in comp.iter_mut() {
                let v: Vec3 = Vec3::new(
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                );
                *d = v.normalize() * 0.12;
            }
        }
        let mixing: Vec<f64> = (0..SYNTHETIC_BASIS_RANK * POSE_DIM)
            .map(|_| {
                let x: f64 = StandardNormal.sample(&mut rng);
                x / (POSE_DIM as f64).sqrt()
            })
            .collect();
        let mut pose_basis = vec![0.0; 3 * vertex_count * POSE_DIM];
        for (i, finger) in finger_of.iter().enumerate() {
            let Some((f, along)) = *finger else { continue };
            for (comp, comp_dirs) in dirs.iter().enumerate() {
                let offset = comp_dirs[f] * along;
                for c in 0..3 {
                    let row = &mut pose_basis[(3 * i + c) * POSE_DIM..(3 * i + c + 1) * POSE_DIM];
                    let mix = &mixing[comp * POSE_DIM..(comp + 1) * POSE_DIM];
                    for (r, m) in row.iter_mut().zip(mix) {
                        *r += offset[c] * m;
                    }
                }
            }
        }

        Ok(Self {
            vertex_count,
            template,
            pose_basis,
            seed,
            anchor_vertex: 0,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HaoiError::io(path, e))?;
        let file: BasisFile = serde_json::from_str(&text)?;
        let template = file.template.to_vec3s()?;
        let v = template.len();
        if file.pose_basis.shape != [3 * v, POSE_DIM] {
            return Err(HaoiError::validation(format!(
                "pose basis shape {:?} does not match {} vertices",
                file.pose_basis.shape, v
            )));
        }
        if file.anchor_vertex >= v {
            return Err(HaoiError::validation("anchor vertex out of range"));
        }
        Ok(Self {
            vertex_count: v,
            template,
            pose_basis: file.pose_basis.data,
            seed: 0,
            anchor_vertex: file.anchor_vertex,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = BasisFile {
            template: Array2::from_vec3s(&self.template),
            pose_basis: Array2::new([3 * self.vertex_count, POSE_DIM], self.pose_basis.clone())?,
            anchor_vertex: self.anchor_vertex,
        };
        let text = serde_json::to_string(&file)?;
        std::fs::write(path, text).map_err(|e| HaoiError::io(path, e))
    }

    /// Content hash over template, basis and anchor.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.vertex_count as u64).to_le_bytes());
        h.update((self.anchor_vertex as u64).to_le_bytes());
        for v in &self.template {
            for c in v.iter() {
                h.update(c.to_le_bytes());
            }
        }
        for b in &self.pose_basis {
            h.update(b.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    fn basis_row(&self, vertex: usize, coord: usize) -> &[f64] {
        let r = 3 * vertex + coord;
        &self.pose_basis[r * POSE_DIM..(r + 1) * POSE_DIM]
    }

    /// Template vertex plus pose offset, before global rotation.
    pub fn posed_vertex(&self, vertex: usize, pose: &[f64; POSE_DIM]) -> Vec3 {
        let mut p = self.template[vertex];
        for c in 0..3 {
            p[c] += dot(self.basis_row(vertex, c), pose);
        }
        p
    }

    pub fn posed_vertices(&self, pose: &[f64; POSE_DIM]) -> Vec<Vec3> {
        (0..self.vertex_count).map(|i| self.posed_vertex(i, pose)).collect()
    }

    /// Mesh from an explicit rotation matrix; used where rotations are composed.
    pub fn mesh_from_matrix(&self, rot: &Mat3, pose: &[f64; POSE_DIM], trans: &Vec3) -> HandMesh {
        HandMesh {
            vertices: (0..self.vertex_count)
                .map(|i| rot * self.posed_vertex(i, pose) + trans)
                .collect(),
        }
    }

    /// Pulls per-vertex gradients back onto `(rotation matrix, pose, translation)`.
    pub fn mesh_vjp(&self, rot: &Mat3, pose: &[f64; POSE_DIM], grad_vertices: &[Vec3]) -> MeshGrad {
        let mut rot_matrix = Mat3::zeros();
        let mut grad_pose = [0.0; POSE_DIM];
        let mut trans = Vec3::zeros();
        for (i, g) in grad_vertices.iter().enumerate() {
            if g.iter().all(|x| *x == 0.0) {
                continue;
            }
            trans += g;
            let local = self.posed_vertex(i, pose);
            rot_matrix += g * local.transpose();
            let g_local = rot.transpose() * g;
            for c in 0..3 {
                if g_local[c] != 0.0 {
                    for (gp, b) in grad_pose.iter_mut().zip(self.basis_row(i, c)) {
                        *gp += g_local[c] * b;
                    }
                }
            }
        }
        MeshGrad {
            rot_matrix,
            pose: grad_pose,
            trans,
        }
    }

    /// Gradient of a vertex-space objective with respect to all 96 grasp parameters.
    pub fn grasp_vjp(&self, beta: &GraspParams, grad_vertices: &[Vec3]) -> GraspParams {
        let rot = rodrigues(&beta.rot);
        let g = self.mesh_vjp(&rot, &beta.pose, grad_vertices);
        GraspParams {
            rot: rodrigues_vjp(&beta.rot, &g.rot_matrix),
            pose: g.pose,
            trans: g.trans,
        }
    }

    /// Directional derivative of the mesh along `tangent` (one Jacobian-vector product).
    pub fn grasp_jvp(&self, beta: &GraspParams, tangent: &GraspParams) -> Vec<Vec3> {
        let rot = rodrigues(&beta.rot);
        let d = rodrigues_derivatives(&beta.rot);
        let d_rot = d[0] * tangent.rot.x + d[1] * tangent.rot.y + d[2] * tangent.rot.z;
        (0..self.vertex_count)
            .map(|i| {
                let local = self.posed_vertex(i, &beta.pose);
                let mut d_local = Vec3::zeros();
                for c in 0..3 {
                    d_local[c] = dot(self.basis_row(i, c), &tangent.pose);
                }
                d_rot * local + rot * d_local + tangent.trans
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `vertices = rotate(template + basis·P, R) + T`.
pub fn hand_mesh(spec: &HandModelSpec, beta: &GraspParams) -> Result<HandMesh> {
    beta.validate()?;
    Ok(spec.mesh_from_matrix(&rodrigues(&beta.rot), &beta.pose, &beta.trans))
}

#[cfg(test)]
mod tests {
    use rand_distr::Normal;

    use super::*;

    fn spec() -> HandModelSpec {
        HandModelSpec::synthetic(DEFAULT_VERTEX_COUNT, 11).unwrap()
    }

    fn random_beta(rng: &mut ChaCha8Rng) -> GraspParams {
        let n = Normal::new(0.0, 0.5).unwrap();
        let mut pose = [0.0; POSE_DIM];
        pose.iter_mut().for_each(|p| *p = n.sample(rng));
        GraspParams::new(
            Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)),
            pose,
            Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng)) * 0.2,
        )
    }

    #[test]
    fn synthetic_shapes() {
        let s = spec();
        assert_eq!(s.template.len(), 778);
        assert_eq!(s.pose_basis.len(), 778 * 3 * 90);
        assert_eq!(s.posed_vertices(&[0.0; POSE_DIM]), s.template);
        // Anchor is on the rigid palm.
        assert!(s.basis_row(s.anchor_vertex, 0).iter().all(|b| *b == 0.0));
    }

    #[test]
    fn synthetic_is_deterministic() {
        assert_eq!(spec().hash(), spec().hash());
        assert_ne!(spec().hash(), HandModelSpec::synthetic(778, 12).unwrap().hash());
    }

    #[test]
    fn identity_and_translation() {
        let s = spec();
        let mesh = hand_mesh(&s, &GraspParams::default()).unwrap();
        assert_eq!(mesh.vertices, s.template);
        let t = Vec3::new(0.3, -1.25, 0.0625);
        let moved = hand_mesh(&s, &GraspParams::new(Vec3::zeros(), [0.0; POSE_DIM], t)).unwrap();
        for (a, b) in moved.vertices.iter().zip(&s.template) {
            assert_eq!(*a, b + t);
        }
    }

    #[test]
    fn linear_in_translation() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let beta = random_beta(&mut rng);
        let mut zero_t = beta.clone();
        zero_t.trans = Vec3::zeros();
        let a = hand_mesh(&s, &beta).unwrap();
        let b = hand_mesh(&s, &zero_t).unwrap();
        for (x, y) in a.vertices.iter().zip(&b.vertices) {
            assert!((x - y - beta.trans).norm() < 1e-15);
        }
    }

    #[test]
    fn rotation_equivariance() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let beta = random_beta(&mut rng);
        let unrotated = hand_mesh(&s, &GraspParams::new(Vec3::zeros(), beta.pose, Vec3::zeros())).unwrap();
        let rotated = hand_mesh(&s, &GraspParams::new(beta.rot, beta.pose, Vec3::zeros())).unwrap();
        let r = rodrigues(&beta.rot);
        for (a, b) in rotated.vertices.iter().zip(&unrotated.vertices) {
            assert!((a - r * b).norm() < 1e-14);
        }
    }

    #[test]
    fn rejects_non_finite() {
        let mut beta = GraspParams::default();
        beta.pose[7] = f64::NAN;
        assert!(matches!(hand_mesh(&spec(), &beta), Err(HaoiError::Validation(_))));
    }

    fn unit(i: usize) -> GraspParams {
        let mut v = vec![0.0; POSE_DIM + 6];
        v[i] = 1.0;
        GraspParams::from_slice(&v).unwrap()
    }

    fn perturbed(beta: &GraspParams, i: usize, h: f64) -> GraspParams {
        let mut v = beta.to_vec();
        v[i] += h;
        GraspParams::from_slice(&v).unwrap()
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for _ in 0..3 {
            let beta = random_beta(&mut rng);
            for i in 0..POSE_DIM + 6 {
                let analytic = s.grasp_jvp(&beta, &unit(i));
                let plus = hand_mesh(&s, &perturbed(&beta, i, h)).unwrap();
                let minus = hand_mesh(&s, &perturbed(&beta, i, -h)).unwrap();
                let mut diff = 0.0;
                let mut norm = 0.0;
                for ((a, p), m) in analytic.iter().zip(&plus.vertices).zip(&minus.vertices) {
                    let fd = (p - m) / (2.0 * h);
                    diff += (fd - a).norm_squared();
                    norm += a.norm_squared().max(fd.norm_squared());
                }
                if norm == 0.0 {
                    assert_eq!(diff, 0.0);
                    continue;
                }
                let rel = (diff / norm).sqrt();
                assert!(rel <= 1e-4, "param {i}: relative error {rel:e}");
            }
        }
    }

    #[test]
    fn vjp_is_adjoint_of_jvp() {
        let s = spec();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let beta = random_beta(&mut rng);
        let tangent = random_beta(&mut rng);
        let n = Normal::new(0.0, 1.0).unwrap();
        let cotangent: Vec<Vec3> = (0..s.vertex_count)
            .map(|_| Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)))
            .collect();
        let jv = s.grasp_jvp(&beta, &tangent);
        let lhs: f64 = jv.iter().zip(&cotangent).map(|(a, b)| a.dot(b)).sum();
        let vj = s.grasp_vjp(&beta, &cotangent);
        let rhs: f64 = vj.to_vec().iter().zip(tangent.to_vec()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn basis_file_round_trip() {
        let s = HandModelSpec::synthetic(64, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("basis.json");
        s.save(&path).unwrap();
        let cfg = HandModelConfig {
            vertex_count: 64,
            seed: 0,
            basis_path: Some(path),
        };
        let loaded = HandModelSpec::from_config(&cfg).unwrap();
        assert_eq!(loaded.hash(), s.hash());
    }
}
