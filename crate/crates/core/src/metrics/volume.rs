//! Interaction volume: object voxels within a distance of any hand vertex.

use std::collections::{BTreeSet, HashMap};

use crate::error::{HaoiError, Result};
use crate::hand_model::Vec3;

/// Occupied cells of a cubic grid anchored at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelSet {
    pub size: f64,
    pub cells: BTreeSet<[i64; 3]>,
}

impl VoxelSet {
    pub fn new(size: f64) -> Result<Self> {
        if !(size.is_finite() && size > 0.0) {
            return Err(HaoiError::validation(format!("voxel size must be positive, got {size}")));
        }
        Ok(Self {
            size,
            cells: BTreeSet::new(),
        })
    }

    pub fn from_points(points: &[Vec3], size: f64) -> Result<Self> {
        let mut v = Self::new(size)?;
        v.insert_points(points);
        Ok(v)
    }

    pub fn cell_of(&self, p: &Vec3) -> [i64; 3] {
        [0, 1, 2].map(|k| (p[k] / self.size).floor() as i64)
    }

    pub fn insert_points(&mut self, points: &[Vec3]) {
        for p in points {
            self.cells.insert(self.cell_of(p));
        }
    }

    pub fn center(&self, cell: &[i64; 3]) -> Vec3 {
        Vec3::new(
            (cell[0] as f64 + 0.5) * self.size,
            (cell[1] as f64 + 0.5) * self.size,
            (cell[2] as f64 + 0.5) * self.size,
        )
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Volume of one cell in cm³.
    pub fn cell_volume_cm3(&self) -> f64 {
        (self.size * 100.0).powi(3)
    }
}

/// Voxels whose centers lie closer than `epsilon` to some hand vertex, times the
/// voxel volume, in cm³. Hand vertices are bucketed on an `epsilon` grid.
pub fn interaction_volume(hand_vertices: &[Vec3], voxels: &VoxelSet, epsilon: f64) -> Result<f64> {
    if hand_vertices.is_empty() {
        return Err(HaoiError::validation("interaction volume: empty hand trajectory"));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(HaoiError::validation(format!("interaction volume: epsilon must be positive, got {epsilon}")));
    }
    let key = |p: &Vec3| [0, 1, 2].map(|k| (p[k] / epsilon).floor() as i64);
    let mut buckets: HashMap<[i64; 3], Vec<Vec3>> = HashMap::new();
    for v in hand_vertices {
        buckets.entry(key(v)).or_default().push(*v);
    }
    let eps2 = epsilon * epsilon;
    let mut count = 0usize;
    for cell in &voxels.cells {
        let c = voxels.center(cell);
        let k = key(&c);
        let mut hit = false;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(vs) = buckets.get(&[k[0] + dx, k[1] + dy, k[2] + dz]) {
                        if vs.iter().any(|v| (v - c).norm_squared() < eps2) {
                            hit = true;
                            break 'search;
                        }
                    }
                }
            }
        }
        count += usize::from(hit);
    }
    Ok(count as f64 * voxels.cell_volume_cm3())
}
