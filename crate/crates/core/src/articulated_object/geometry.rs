//! Closed triangle hulls used for interior tests and closest-surface queries.

use std::collections::HashMap;


use crate::error::{HaoiError, Result};
use crate::hand_model::{Mat3, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vec3>,
    /// Counter-clockwise when seen from outside.
    pub triangles: Vec<[u32; 3]>,
}

impl TriMesh {
    /// Axis-aligned box with outward-facing triangles.
    pub fn cuboid(center: Vec3, half: Vec3) -> Self {
        let vertices = (0..8)
            .map(|i| {
                let s = |bit: usize| if i & (1 << bit) != 0 { 1.0 } else { -1.0 };
                center + Vec3::new(s(0) * half.x, s(1) * half.y, s(2) * half.z)
            })
            .collect();
        let triangles = vec![
            [0, 2, 1], [1, 2, 3], // -z
            [4, 5, 6], [5, 7, 6], // +z
            [0, 1, 4], [1, 5, 4], // -y
            [2, 6, 3], [3, 6, 7], // +y
            [0, 4, 2], [2, 4, 6], // -x
            [1, 3, 5], [3, 7, 5], // +x
        ];
        Self { vertices, triangles }
    }

    pub fn transformed(&self, rot: &Mat3, trans: &Vec3) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| rot * v + trans).collect(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// Closed means every undirected edge is shared by exactly two triangles
    /// with opposite orientation.
    pub fn check_closed(&self) -> Result<()> {
        if self.triangles.is_empty() {
            return Err(HaoiError::validation("hull has no triangles"));
        }
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                if a as usize >= self.vertices.len() || b as usize >= self.vertices.len() {
                    return Err(HaoiError::validation("hull triangle references a missing vertex"));
                }
                *directed.entry((a, b)).or_default() += 1;
            }
        }
        for (&(a, b), &n) in &directed {
            if n != 1 {
                return Err(HaoiError::validation(format!(
                    "edge ({a}, {b}) appears {n} times with the same orientation"
                )));
            }
            if directed.get(&(b, a)) != Some(&1) {
                return Err(HaoiError::validation(format!(
                    "open hull: edge ({a}, {b}) has no opposite half-edge"
                )));
            }
        }
        Ok(())
    }

    /// Even-odd ray parity along a fixed skewed direction.
    pub fn contains_by_parity(&self, p: &Vec3) -> bool {
        let dir = Vec3::new(0.577_215_66, 0.693_147_18, 0.434_294_48).normalize();
        let mut crossings = 0;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            if ray_hits_triangle(p, &dir, &a, &b, &c) {
                crossings += 1;
            }
        }
        crossings % 2 == 1
    }

    /// Closest surface point by scanning every triangle.
    pub fn closest_point(&self, p: &Vec3) -> Vec3 {
        let mut best = Vec3::zeros();
        let mut best_d = f64::INFINITY;
        for t in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(t);
            let q = closest_point_on_triangle(p, &a, &b, &c);
            let d = (q - p).norm_squared();
            if d < best_d {
                best_d = d;
                best = q;
            }
        }
        best
    }
}

/// Möller–Trumbore, counting hits at strictly positive ray parameter.
fn ray_hits_triangle(origin: &Vec3, dir: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> bool {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return false;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return false;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return false;
    }
    e2.dot(&q) * inv > 1e-12
}

/// Closest point on a triangle (Voronoi-region walk).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

#[derive(Debug, Clone, Copy)]
struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// A validated closed hull. Convex hulls answer interior queries from face
/// planes; other closed meshes fall back to ray parity and a triangle scan.
#[derive(Debug, Clone)]
pub struct SurfaceHull {
    mesh: TriMesh,
    planes: Option<Vec<Plane>>,
}

/// Interior query result: the closest surface point of a vertex inside the hull.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Penetration {
    pub surface_point: Vec3,
}

impl SurfaceHull {
    pub fn new(mesh: TriMesh) -> Result<Self> {
        mesh.check_closed()?;
        let mut planes = Vec::with_capacity(mesh.triangles.len());
        let mut convex = true;
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(t);
            let n = (b - a).cross(&(c - a));
            let len = n.norm();
            if len < 1e-15 {
                return Err(HaoiError::validation("hull has a degenerate triangle"));
            }
            let normal = n / len;
            let plane = Plane {
                normal,
                offset: normal.dot(&a),
            };
            if mesh.vertices.iter().any(|v| plane.signed_distance(v) > 1e-9) {
                convex = false;
            }
            planes.push(plane);
        }
        Ok(Self {
            mesh,
            planes: convex.then_some(planes),
        })
    }

    pub fn mesh(&self) -> &TriMesh {
        &self.mesh
    }

    pub fn is_convex(&self) -> bool {
        self.planes.is_some()
    }

    pub fn transformed(&self, rot: &Mat3, trans: &Vec3) -> Self {
        let mesh = self.mesh.transformed(rot, trans);
        let planes = self.planes.as_ref().map(|ps| {
            ps.iter()
                .map(|p| {
                    let normal = rot * p.normal;
                    Plane {
                        normal,
                        offset: p.offset + normal.dot(trans),
                    }
                })
                .collect()
        });
        Self { mesh, planes }
    }

    /// `Some` when `p` is strictly inside the hull.
    pub fn penetration(&self, p: &Vec3) -> Option<Penetration> {
        match &self.planes {
            Some(planes) => {
                let mut best = f64::NEG_INFINITY;
                let mut best_plane = &planes[0];
                for plane in planes {
                    let d = plane.signed_distance(p);
                    if d >= 0.0 {
                        return None;
                    }
                    if d > best {
                        best = d;
                        best_plane = plane;
                    }
                }
                Some(Penetration {
                    surface_point: p - best_plane.normal * best,
                })
            }
            None => self.mesh.contains_by_parity(p).then(|| Penetration {
                surface_point: self.mesh.closest_point(p),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cuboid_is_closed_and_convex() {
        let hull = SurfaceHull::new(TriMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 2.0, 3.0))).unwrap();
        assert!(hull.is_convex());
    }

    #[test]
    fn open_mesh_rejected() {
        let mut mesh = TriMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0));
        mesh.triangles.pop();
        assert!(matches!(SurfaceHull::new(mesh), Err(HaoiError::Validation(_))));
    }

    #[test]
    fn inside_point_projects_to_nearest_face() {
        let hull = SurfaceHull::new(TriMesh::cuboid(Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0))).unwrap();
        let p = hull.penetration(&Vec3::new(0.2, 0.9, -0.1)).unwrap();
        assert!((p.surface_point - Vec3::new(0.2, 1.0, -0.1)).norm() < 1e-15);
        assert!(hull.penetration(&Vec3::new(0.2, 1.1, -0.1)).is_none());
        assert!(hull.penetration(&Vec3::new(0.2, 1.0, -0.1)).is_none());
    }

    #[test]
    fn parity_agrees_with_planes_on_a_box() {
        let mesh = TriMesh::cuboid(Vec3::new(0.1, 0.0, 0.2), Vec3::new(0.3, 0.5, 0.2));
        let hull = SurfaceHull::new(mesh.clone()).unwrap();
        let mut x = 0.123_f64;
        for _ in 0..2000 {
            x = (x * 9301.0 + 49297.0) % 233280.0;
            let a = x / 233280.0;
            x = (x * 9301.0 + 49297.0) % 233280.0;
            let b = x / 233280.0;
            x = (x * 9301.0 + 49297.0) % 233280.0;
            let c = x / 233280.0;
            let p = Vec3::new(a - 0.4, b * 1.4 - 0.7, c * 0.8 - 0.2);
            assert_eq!(hull.penetration(&p).is_some(), mesh.contains_by_parity(&p), "{p:?}");
        }
    }

    #[test]
    fn transform_keeps_planes_consistent() {
        let hull = SurfaceHull::new(TriMesh::cuboid(Vec3::zeros(), Vec3::new(0.5, 0.2, 0.1))).unwrap();
        let rot = crate::hand_model::rodrigues(&Vec3::new(0.3, -0.7, 1.1));
        let t = Vec3::new(1.0, 2.0, -0.5);
        let moved = hull.transformed(&rot, &t);
        let p = rot * Vec3::new(0.1, 0.15, 0.0) + t;
        let pen = moved.penetration(&p).unwrap();
        let expected = rot * Vec3::new(0.1, 0.2, 0.0) + t;
        assert!((pen.surface_point - expected).norm() < 1e-12);
    }
}
