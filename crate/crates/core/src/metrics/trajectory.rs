//! Hand-translation trajectories: resampling and displacement errors.

use crate::error::{HaoiError, Result};
use crate::hand_model::Vec3;
use crate::synth_data::HAOISequence;

/// Length every trajectory is resampled to before comparison.
pub const RESAMPLE_LENGTH: usize = 32;

/// Linear resampling of `points` to `n` evenly spaced samples over the same span.
pub fn resample(points: &[Vec3], n: usize) -> Result<Vec<Vec3>> {
    if points.is_empty() || n == 0 {
        return Err(HaoiError::validation("resample: empty trajectory or target length"));
    }
    if points.len() == 1 || n == 1 {
        return Ok(vec![points[0]; n]);
    }
    let last = (points.len() - 1) as f64;
    Ok((0..n)
        .map(|i| {
            let u = i as f64 * last / (n - 1) as f64;
            let k = (u.floor() as usize).min(points.len() - 2);
            let a = u - k as f64;
            points[k] * (1.0 - a) + points[k + 1] * a
        })
        .collect())
}

/// Hand translations of every frame.
pub fn translations(seq: &HAOISequence) -> Vec<Vec3> {
    seq.frames.iter().map(|f| f.beta.trans).collect()
}

/// Flattened resampled translation trajectory.
pub fn trajectory_vector(seq: &HAOISequence, n: usize) -> Result<Vec<f64>> {
    Ok(resample(&translations(seq), n)?.iter().flat_map(|p| [p.x, p.y, p.z]).collect())
}

/// Average and final displacement between two equal-length trajectories.
pub fn displacement_errors(predicted: &[Vec3], truth: &[Vec3]) -> Result<(f64, f64)> {
    if predicted.is_empty() || predicted.len() != truth.len() {
        return Err(HaoiError::validation(format!(
            "displacement: trajectory lengths {} and {} differ or are zero",
            predicted.len(),
            truth.len()
        )));
    }
    let d: Vec<f64> = predicted.iter().zip(truth).map(|(a, b)| (a - b).norm()).collect();
    Ok((d.iter().sum::<f64>() / d.len() as f64, d[d.len() - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_keeps_endpoints_and_lines() {
        let pts = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 2.0, 0.0), Vec3::new(2.0, 4.0, 0.0)];
        let r = resample(&pts, 5).unwrap();
        assert_eq!(r[0], pts[0]);
        assert_eq!(r[4], pts[2]);
        assert!((r[1] - Vec3::new(0.5, 1.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn displacement_example() {
        let a = [Vec3::zeros(), Vec3::zeros()];
        let b = [Vec3::new(0.0, 0.0, 1.0), Vec3::new(0.0, 3.0, 4.0)];
        assert_eq!(displacement_errors(&a, &b).unwrap(), (3.0, 5.0));
        assert!(displacement_errors(&a, &b[..1]).is_err());
    }
}
