//! Flat numeric arrays with declared shapes, as stored in record files.

use serde::{Deserialize, Serialize};

use crate::error::{HaoiError, Result};
use crate::hand_model::Vec3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Array2 {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Array2 {
    pub fn new(shape: [usize; 2], data: Vec<f64>) -> Result<Self> {
        let a = Self { shape, data };
        a.check()?;
        Ok(a)
    }

    pub fn check(&self) -> Result<()> {
        if self.shape[0] * self.shape[1] != self.data.len() {
            return Err(HaoiError::validation(format!(
                "array declares shape {:?} but holds {} values",
                self.shape,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn from_vec3s(points: &[Vec3]) -> Self {
        Self {
            shape: [points.len(), 3],
            data: points.iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], width: usize) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            let r = r.as_ref();
            if r.len() != width {
                return Err(HaoiError::validation("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: [rows.len(), width],
            data,
        })
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.shape[1].max(1)).take(self.shape[0])
    }

    pub fn to_vec3s(&self) -> Result<Vec<Vec3>> {
        self.check()?;
        if self.shape[1] != 3 {
            return Err(HaoiError::validation(format!(
                "expected an N×3 array, got {:?}",
                self.shape
            )));
        }
        Ok(self.rows().map(|r| Vec3::new(r[0], r[1], r[2])).collect())
    }
}
