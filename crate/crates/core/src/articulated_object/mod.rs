//! Procedural two-part articulated objects with a single joint.

pub mod geometry;

use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix4;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use geometry::{closest_point_on_triangle, Penetration, SurfaceHull, TriMesh};

use crate::error::{HaoiError, Result};
use crate::hand_model::{rodrigues, Mat3, Vec3};
use crate::rng::{derive_seed, seeded};

pub const DEFAULT_POINT_COUNT: usize = 2048;
const AXIS_TOL: f64 = 1e-9;
const PARALLEL_TOL: f64 = 1e-6;
const LIMIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Laptop,
    Scissors,
    Box,
    Drawer,
    Stapler,
    Eyeglasses,
    Dishwasher,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Laptop,
        Category::Scissors,
        Category::Box,
        Category::Drawer,
        Category::Stapler,
        Category::Eyeglasses,
        Category::Dishwasher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Laptop => "laptop",
            Category::Scissors => "scissors",
            Category::Box => "box",
            Category::Drawer => "drawer",
            Category::Stapler => "stapler",
            Category::Eyeglasses => "eyeglasses",
            Category::Dishwasher => "dishwasher",
        }
    }

    /// Configured manipulation range of the category's joint.
    pub fn joint_limits(self) -> (f64, f64) {
        self.template().joint.limits
    }

    fn template(self) -> CategoryTemplate {
        let x = Vec3::x();
        let y = Vec3::y();
        let z = Vec3::z();
        match self {
            Category::Laptop => CategoryTemplate {
                base: (Vec3::new(0.0, 0.0, 0.01), Vec3::new(0.15, 0.11, 0.01)),
                movable: (Vec3::new(0.0, 0.0, 0.026), Vec3::new(0.15, 0.11, 0.005)),
                joint: JointSpec::revolute(-x, Vec3::new(0.0, 0.11, 0.021), (0.0, 2.0)),
                graspable: |p, c, h| p.y < c.y - 0.5 * h.y,
            },
            Category::Scissors => CategoryTemplate {
                base: (Vec3::new(0.0, 0.0, 0.004), Vec3::new(0.09, 0.008, 0.003)),
                movable: (Vec3::new(0.0, 0.0, 0.0115), Vec3::new(0.09, 0.008, 0.003)),
                joint: JointSpec::revolute(z, Vec3::new(0.0, 0.0, 0.0075), (0.0, 0.8)),
                graspable: |p, c, h| p.x < c.x - 0.5 * h.x,
            },
            Category::Box => CategoryTemplate {
                base: (Vec3::new(0.0, 0.0, 0.06), Vec3::new(0.1, 0.1, 0.06)),
                movable: (Vec3::new(0.0, 0.0, 0.126), Vec3::new(0.1, 0.1, 0.005)),
                joint: JointSpec::revolute(-x, Vec3::new(0.0, 0.1, 0.121), (0.0, 1.8)),
                graspable: |p, c, h| p.y < c.y - 0.5 * h.y,
            },
            Category::Drawer => CategoryTemplate {
                base: (Vec3::new(0.0, 0.0, 0.2), Vec3::new(0.2, 0.2, 0.2)),
                movable: (Vec3::new(0.0, -0.211, 0.25), Vec3::new(0.15, 0.01, 0.06)),
                joint: JointSpec::prismatic(-y, (0.0, 0.3)),
                graspable: |p, c, h| p.y < c.y - 0.5 * h.y,
            },
            Category::Stapler => CategoryTemplate {
                base: (Vec3::new(0.0, 0.0, 0.01), Vec3::new(0.07, 0.02, 0.01)),
                movable: (Vec3::new(0.0, 0.0, 0.031), Vec3::new(0.07, 0.018, 0.01)),
                joint: JointSpec::revolute(y, Vec3::new(0.07, 0.0, 0.021), (0.0, 0.6)),
                graspable: |p, c, h| p.x < c.x - 0.4 * h.x,
            },
            Category::Eyeglasses => CategoryTemplate {
                base: (Vec3::new(0.0, 0.0, 0.02), Vec3::new(0.07, 0.004, 0.02)),
                movable: (Vec3::new(0.0, 0.012, 0.03), Vec3::new(0.065, 0.003, 0.004)),
                joint: JointSpec::revolute(-z, Vec3::new(0.07, 0.012, 0.03), (0.0, 1.6)),
                graspable: |p, c, h| p.x < c.x - 0.3 * h.x,
            },
            Category::Dishwasher => CategoryTemplate {
                base: (Vec3::new(0.0, 0.0, 0.4), Vec3::new(0.3, 0.3, 0.4)),
                movable: (Vec3::new(0.0, -0.321, 0.42), Vec3::new(0.3, 0.02, 0.36)),
                joint: JointSpec::revolute(x, Vec3::new(0.0, -0.321, 0.06), (0.0, 1.5)),
                graspable: |p, c, h| p.z > c.z + 0.6 * h.z,
            },
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = HaoiError;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                HaoiError::validation(format!(
                    "unknown object category '{s}' (expected one of laptop, scissors, box, drawer, stapler, eyeglasses, dishwasher)"
                ))
            })
    }
}

/// Rest-pose layout of one category: two boxes `(center, half extents)`, the
/// joint, and a predicate over movable-part points marking the graspable region.
struct CategoryTemplate {
    base: (Vec3, Vec3),
    movable: (Vec3, Vec3),
    joint: JointSpec,
    graspable: fn(&Vec3, &Vec3, &Vec3) -> bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub kind: JointKind,
    pub axis: Vec3,
    /// Unused for prismatic joints.
    pub pivot: Vec3,
    /// Radians for revolute joints, meters for prismatic joints.
    pub limits: (f64, f64),
}

impl JointSpec {
    pub fn revolute(axis: Vec3, pivot: Vec3, limits: (f64, f64)) -> Self {
        Self {
            kind: JointKind::Revolute,
            axis: axis.normalize(),
            pivot,
            limits,
        }
    }

    pub fn prismatic(axis: Vec3, limits: (f64, f64)) -> Self {
        Self {
            kind: JointKind::Prismatic,
            axis: axis.normalize(),
            pivot: Vec3::zeros(),
            limits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if ((self.axis.norm() - 1.0).abs()) > AXIS_TOL {
            return Err(HaoiError::validation("joint axis is not unit length"));
        }
        if !(self.limits.0 < self.limits.1) {
            return Err(HaoiError::validation(format!(
                "joint limits [{}, {}] are not increasing",
                self.limits.0, self.limits.1
            )));
        }
        if self.pivot.iter().any(|x| !x.is_finite()) {
            return Err(HaoiError::validation("joint pivot is not finite"));
        }
        Ok(())
    }

    /// Rigid motion of the movable part at scalar position `s`.
    pub fn motion(&self, s: f64) -> (Mat3, Vec3) {
        match self.kind {
            JointKind::Revolute => {
                let r = rodrigues(&(self.axis * s));
                (r, self.pivot - r * self.pivot)
            }
            JointKind::Prismatic => (Mat3::identity(), self.axis * s),
        }
    }
}

/// Axis-angle (revolute) or displacement (prismatic) of the joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState(pub Vec3);

impl JointState {
    pub fn rest() -> Self {
        Self(Vec3::zeros())
    }

    pub fn along(joint: &JointSpec, s: f64) -> Self {
        Self(joint.axis * s)
    }

    /// Signed position along the joint axis.
    pub fn scalar(&self, joint: &JointSpec) -> f64 {
        self.0.dot(&joint.axis)
    }

    pub fn magnitude(&self) -> f64 {
        self.0.norm()
    }

    pub fn validate(&self, joint: &JointSpec) -> Result<()> {
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(HaoiError::validation("joint state is not finite"));
        }
        let s = self.scalar(joint);
        if (self.0 - joint.axis * s).norm() > PARALLEL_TOL {
            return Err(HaoiError::validation("joint state is not parallel to the joint axis"));
        }
        let (lo, hi) = joint.limits;
        if s < lo - LIMIT_TOL || s > hi + LIMIT_TOL {
            return Err(HaoiError::Range(format!(
                "joint position {s} outside limits [{lo}, {hi}]"
            )));
        }
        Ok(())
    }
}

/// Homogeneous rigid transform `T`; canonical coordinates are `T⁻¹x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalTransform(pub Matrix4<f64>);

impl CanonicalTransform {
    pub fn identity() -> Self {
        Self(Matrix4::identity())
    }

    pub fn from_parts(rot: &Mat3, trans: &Vec3) -> Self {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(rot);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(trans);
        Self(m)
    }

    pub fn rotation(&self) -> Mat3 {
        self.0.fixed_view::<3, 3>(0, 0).into_owned()
    }

    pub fn translation(&self) -> Vec3 {
        self.0.fixed_view::<3, 1>(0, 3).into_owned()
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|x| !x.is_finite()) {
            return Err(HaoiError::validation("canonical transform is not finite"));
        }
        let last = self.0.row(3);
        if last[0] != 0.0 || last[1] != 0.0 || last[2] != 0.0 || last[3] != 1.0 {
            return Err(HaoiError::validation("canonical transform last row is not (0,0,0,1)"));
        }
        crate::hand_model::rotation::check_rotation(&self.rotation())
            .map_err(|e| HaoiError::validation(format!("canonical transform: {e}")))
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + self.translation()
    }

    /// `T⁻¹x` for a rigid `T`.
    pub fn apply_inverse(&self, p: &Vec3) -> Vec3 {
        self.rotation().transpose() * (p - self.translation())
    }

    pub fn to_row_major(&self) -> [f64; 16] {
        std::array::from_fn(|k| self.0[(k / 4, k % 4)])
    }

    pub fn from_row_major(v: &[f64]) -> Result<Self> {
        if v.len() != 16 {
            return Err(HaoiError::validation("canonical transform needs 16 values"));
        }
        let t = Self(Matrix4::from_row_slice(v));
        t.validate()?;
        Ok(t)
    }
}

/// Maps points into canonical space by applying `T⁻¹`.
pub fn canonicalize(points: &[Vec3], transform: &CanonicalTransform) -> Result<Vec<Vec3>> {
    transform.validate()?;
    Ok(points.iter().map(|p| transform.apply_inverse(p)).collect())
}

/// `D = p − g_O`.
pub fn grasp_direction(p: &Vec3, mass_center: &Vec3) -> Vec3 {
    p - mass_center
}

#[derive(Debug, Clone)]
pub struct ArticulatedObject {
    pub id: String,
    pub category: Category,
    pub seed: u64,
    pub base_points: Vec<Vec3>,
    pub movable_points: Vec<Vec3>,
    pub joint: JointSpec,
    pub mass_center: Vec3,
    /// One flag per point, base points first.
    pub graspable_mask: Vec<bool>,
    pub base_hull: SurfaceHull,
    pub movable_hull: SurfaceHull,
}

impl ArticulatedObject {
    pub fn point_count(&self) -> usize {
        self.base_points.len() + self.movable_points.len()
    }

    pub fn rest_points(&self) -> Vec<Vec3> {
        self.base_points.iter().chain(&self.movable_points).copied().collect()
    }

    /// Per-point movable-part flags, in the same order as [`Self::rest_points`].
    pub fn movable_flags(&self) -> Vec<bool> {
        let mut flags = vec![false; self.base_points.len()];
        flags.resize(self.point_count(), true);
        flags
    }

    pub fn graspable_points(&self) -> Vec<Vec3> {
        self.rest_points()
            .into_iter()
            .zip(&self.graspable_mask)
            .filter_map(|(p, g)| g.then_some(p))
            .collect()
    }

    pub fn is_graspable(&self, p: &Vec3) -> bool {
        self.rest_points()
            .iter()
            .zip(&self.graspable_mask)
            .any(|(q, g)| *g && (q - p).norm() <= 1e-9)
    }

    pub fn validate(&self) -> Result<()> {
        self.joint.validate()?;
        if self.point_count() < 64 {
            return Err(HaoiError::validation("object needs at least 64 points"));
        }
        if self.graspable_mask.len() != self.point_count() {
            return Err(HaoiError::validation("graspable mask length does not match point count"));
        }
        if !self.graspable_mask.iter().any(|g| *g) {
            return Err(HaoiError::validation("object has no graspable point"));
        }
        if self.mass_center.iter().any(|x| !x.is_finite()) {
            return Err(HaoiError::validation("mass center is not finite"));
        }
        if self.rest_points().iter().any(|p| p.iter().any(|x| !x.is_finite())) {
            return Err(HaoiError::validation("object points are not finite"));
        }
        Ok(())
    }

    /// Rigid motion of the movable part for a validated state.
    pub fn part_motion(&self, state: &JointState) -> Result<(Mat3, Vec3)> {
        state.validate(&self.joint)?;
        Ok(self.joint.motion(state.scalar(&self.joint)))
    }

    /// Surface hulls `[base, movable]` at the given state.
    pub fn hulls_at(&self, state: &JointState) -> Result<[SurfaceHull; 2]> {
        let (r, t) = self.part_motion(state)?;
        Ok([self.base_hull.clone(), self.movable_hull.transformed(&r, &t)])
    }

    /// Moves a point attached to the movable part from the articulated state back to rest.
    pub fn movable_to_rest(&self, p: &Vec3, state: &JointState) -> Result<Vec3> {
        let (r, t) = self.part_motion(state)?;
        Ok(r.transpose() * (p - t))
    }
}

pub fn object_id(category: Category, seed: u64) -> String {
    format!("{}-{seed}", category.name())
}

/// Deterministic object for `(category, seed)` with the default point count.
pub fn generate_object(category: &str, seed: u64) -> Result<ArticulatedObject> {
    generate_object_with_points(category.parse()?, seed, DEFAULT_POINT_COUNT)
}

pub fn generate_object_with_points(
    category: Category,
    seed: u64,
    point_count: usize,
) -> Result<ArticulatedObject> {
    if point_count < 64 {
        return Err(HaoiError::validation("object needs at least 64 points"));
    }
    let tpl = category.template();
    let mut rng = seeded(derive_seed(seed, &[category as u64, 0x6f626a]));
    let scale = rng.random_range(0.85..1.15);
    let (base_c, base_h) = (tpl.base.0 * scale, tpl.base.1 * scale);
    let (mov_c, mov_h) = (tpl.movable.0 * scale, tpl.movable.1 * scale);
    let mut joint = tpl.joint.clone();
    joint.pivot *= scale;
    if joint.kind == JointKind::Prismatic {
        joint.limits = (joint.limits.0 * scale, joint.limits.1 * scale);
    }

    let base_count = point_count / 2;
    let base_points = sample_box_surface(&mut rng, &base_c, &base_h, base_count);
    let movable_points = sample_box_surface(&mut rng, &mov_c, &mov_h, point_count - base_count);

    let mut graspable_mask = vec![false; base_points.len()];
    graspable_mask.extend(movable_points.iter().map(|p| (tpl.graspable)(p, &mov_c, &mov_h)));

    let n = (base_points.len() + movable_points.len()) as f64;
    let mass_center = base_points.iter().chain(&movable_points).sum::<Vec3>() / n;

    let obj = ArticulatedObject {
        id: object_id(category, seed),
        category,
        seed,
        base_points,
        movable_points,
        joint,
        mass_center,
        graspable_mask,
        base_hull: SurfaceHull::new(TriMesh::cuboid(base_c, base_h))?,
        movable_hull: SurfaceHull::new(TriMesh::cuboid(mov_c, mov_h))?,
    };
    obj.validate()?;
    Ok(obj)
}

/// Area-weighted uniform samples on the surface of an axis-aligned box.
fn sample_box_surface(rng: &mut impl Rng, center: &Vec3, half: &Vec3, n: usize) -> Vec<Vec3> {
    let areas = [
        half.y * half.z,
        half.y * half.z,
        half.x * half.z,
        half.x * half.z,
        half.x * half.y,
        half.x * half.y,
    ];
    let total: f64 = areas.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut face = 0;
            while face < 5 && pick >= areas[face] {
                pick -= areas[face];
                face += 1;
            }
            let mut p = Vec3::new(
                rng.random_range(-1.0..1.0) * half.x,
                rng.random_range(-1.0..1.0) * half.y,
                rng.random_range(-1.0..1.0) * half.z,
            );
            let axis = face / 2;
            p[axis] = if face % 2 == 0 { -half[axis] } else { half[axis] };
            center + p
        })
        .collect()
}

/// Point cloud (base points first) at the given joint state.
pub fn articulate(obj: &ArticulatedObject, state: &JointState) -> Result<Vec<Vec3>> {
    let (r, t) = obj.part_motion(state)?;
    Ok(obj
        .base_points
        .iter()
        .copied()
        .chain(obj.movable_points.iter().map(|p| r * p + t))
        .collect())
}

/// Uniform draws (with replacement) from the graspable points.
pub fn sample_contact_points(obj: &ArticulatedObject, n: usize, seed: u64) -> Result<Vec<Vec3>> {
    if n == 0 {
        return Err(HaoiError::validation("contact sample count must be at least 1"));
    }
    let candidates = obj.graspable_points();
    if candidates.is_empty() {
        return Err(HaoiError::validation("object has no graspable points"));
    }
    let mut rng = seeded(seed);
    Ok((0..n)
        .map(|_| candidates[rng.random_range(0..candidates.len())])
        .collect())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_rigid(rng: &mut ChaCha8Rng) -> CanonicalTransform {
        let v = Vec3::new(
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
        );
        let t = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        CanonicalTransform::from_parts(&rodrigues(&v), &t)
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_object("laptop", 7).unwrap();
        let b = generate_object("laptop", 7).unwrap();
        assert_eq!(a.rest_points(), b.rest_points());
        assert_eq!(a.graspable_mask, b.graspable_mask);
        assert_eq!(a.joint, b.joint);
        assert_eq!(a.mass_center, b.mass_center);
    }

    #[test]
    fn category_templates() {
        assert_eq!(generate_object("drawer", 3).unwrap().joint.kind, JointKind::Prismatic);
        let laptop = generate_object("laptop", 0).unwrap();
        assert_eq!(laptop.joint.kind, JointKind::Revolute);
        assert_eq!(laptop.joint.limits, (0.0, 2.0));
        assert_eq!(laptop.joint.limits, Category::Laptop.joint_limits());
        assert!(matches!(generate_object("teapot", 0), Err(HaoiError::Validation(_))));
    }

    #[test]
    fn every_category_satisfies_invariants() {
        for c in Category::ALL {
            for seed in 0..3 {
                let obj = generate_object(c.name(), seed).unwrap();
                obj.validate().unwrap();
                assert_eq!(obj.point_count(), DEFAULT_POINT_COUNT);
                let mean = obj.rest_points().iter().sum::<Vec3>() / obj.point_count() as f64;
                assert!((mean - obj.mass_center).norm() < 1e-12);
                // Every graspable point sits on the movable part.
                let n_base = obj.base_points.len();
                assert!(obj.graspable_mask[..n_base].iter().all(|g| !g));
            }
        }
    }

    #[test]
    fn rest_state_is_identity() {
        let obj = generate_object("box", 1).unwrap();
        assert_eq!(articulate(&obj, &JointState::rest()).unwrap(), obj.rest_points());
    }

    #[test]
    fn prismatic_shift_is_exact() {
        let obj = generate_object("drawer", 2).unwrap();
        let d = 0.125;
        let out = articulate(&obj, &JointState::along(&obj.joint, d)).unwrap();
        let n = obj.base_points.len();
        assert_eq!(&out[..n], &obj.base_points[..]);
        for (a, b) in out[n..].iter().zip(&obj.movable_points) {
            assert_eq!(*a, b + obj.joint.axis * d);
        }
    }

    #[test]
    fn revolute_preserves_distances_and_composes() {
        let obj = generate_object("laptop", 4).unwrap();
        let n = obj.base_points.len();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let a = rng.random_range(0.0..1.0);
            let b = rng.random_range(0.0..1.0);
            let moved = articulate(&obj, &JointState::along(&obj.joint, a + b)).unwrap();
            let mov = &moved[n..];
            for i in (0..mov.len()).step_by(37) {
                for j in (0..mov.len()).step_by(53) {
                    let d0 = (obj.movable_points[i] - obj.movable_points[j]).norm();
                    let d1 = (mov[i] - mov[j]).norm();
                    assert!((d0 - d1).abs() < 1e-9);
                }
            }
            // Applying angle b on top of the state at angle a equals a single rotation by a + b.
            let at_a = articulate(&obj, &JointState::along(&obj.joint, a)).unwrap();
            let (rb, tb) = obj.joint.motion(b);
            for (p, q) in at_a[n..].iter().zip(mov) {
                assert!((rb * p + tb - q).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_range_state_rejected() {
        let obj = generate_object("laptop", 0).unwrap();
        let err = articulate(&obj, &JointState::along(&obj.joint, 2.5)).unwrap_err();
        assert!(matches!(err, HaoiError::Range(_)));
        let skew = JointState(Vec3::new(0.1, 0.3, 0.0));
        assert!(articulate(&obj, &skew).is_err());
    }

    #[test]
    fn canonicalize_examples() {
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-0.5, 0.0, 0.25)];
        assert_eq!(canonicalize(&pts, &CanonicalTransform::identity()).unwrap(), pts);
        let t = Vec3::new(0.5, -1.0, 2.0);
        let shifted = canonicalize(&pts, &CanonicalTransform::from_parts(&Mat3::identity(), &t)).unwrap();
        for (a, b) in shifted.iter().zip(&pts) {
            assert_eq!(*a, b - t);
        }
    }

    #[test]
    fn canonicalize_round_trip_and_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..50 {
            let tf = random_rigid(&mut rng);
            let pts: Vec<Vec3> = (0..20)
                .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
                .collect();
            let c = canonicalize(&pts, &tf).unwrap();
            for (a, b) in c.iter().zip(&pts) {
                assert!((tf.apply(a) - b).norm() < 1e-9);
            }
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    assert!(((pts[i] - pts[j]).norm() - (c[i] - c[j]).norm()).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn canonicalize_rejects_singular_transform() {
        let mut bad = CanonicalTransform::identity();
        bad.0[(0, 0)] = 0.0;
        assert!(canonicalize(&[Vec3::zeros()], &bad).is_err());
    }

    #[test]
    fn grasp_direction_examples() {
        assert_eq!(grasp_direction(&Vec3::x(), &Vec3::zeros()), Vec3::x());
        let g = Vec3::new(0.3, 0.2, 0.1);
        assert_eq!(grasp_direction(&g, &g), Vec3::zeros());
        assert_eq!(
            grasp_direction(&Vec3::new(2.0, -1.0, 3.0), &Vec3::new(1.0, 1.0, 1.0)),
            Vec3::new(1.0, -2.0, 2.0)
        );
    }

    #[test]
    fn contact_sampling() {
        let mut obj = generate_object("stapler", 5).unwrap();
        let a = sample_contact_points(&obj, 25, 3).unwrap();
        assert_eq!(a, sample_contact_points(&obj, 25, 3).unwrap());
        assert!(a.iter().all(|p| obj.is_graspable(p)));

        let only = obj.movable_points[10];
        obj.graspable_mask.iter_mut().for_each(|g| *g = false);
        let n = obj.base_points.len();
        obj.graspable_mask[n + 10] = true;
        assert_eq!(sample_contact_points(&obj, 1, 0).unwrap(), vec![only]);

        obj.graspable_mask[n + 10] = false;
        assert!(matches!(sample_contact_points(&obj, 1, 0), Err(HaoiError::Validation(_))));
    }

    #[test]
    fn contact_sampling_is_uniform() {
        let mut obj = generate_object("stapler", 6).unwrap();
        let n = obj.base_points.len();
        obj.graspable_mask.iter_mut().for_each(|g| *g = false);
        obj.graspable_mask[n + 1] = true;
        obj.graspable_mask[n + 2] = true;
        let first = obj.movable_points[1];
        let draws = sample_contact_points(&obj, 10_000, 42).unwrap();
        let frac = draws.iter().filter(|p| **p == first).count() as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    #[test]
    fn hull_follows_the_movable_part() {
        let obj = generate_object("laptop", 1).unwrap();
        let state = JointState::along(&obj.joint, 1.2);
        let [_, lid] = obj.hulls_at(&state).unwrap();
        let (r, t) = obj.part_motion(&state).unwrap();
        for (a, b) in lid.mesh().vertices.iter().zip(&obj.movable_hull.mesh().vertices) {
            assert!((a - (r * b + t)).norm() < 1e-15);
        }
    }
}
