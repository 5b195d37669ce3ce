//! Efficiency and dataset variability measures.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angular_distance, Pose, UnitQuaternion};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Relative change between the first and last trial times,
/// `(t_last - t_first) / t_first`. Negative means the last trial was faster.
pub fn id_rate<T: Real>(trial_times: &[T]) -> Result<T, MetricsError> {
    if trial_times.len() < 2 {
        return Err(MetricsError::InvalidArgument("need at least two trials".into()));
    }
    if trial_times.iter().any(|t| !(t.is_finite() && *t > T::zero())) {
        return Err(MetricsError::InvalidArgument("trial times must be positive".into()));
    }
    let first = trial_times[0];
    let last = trial_times[trial_times.len() - 1];
    Ok((last - first) / first)
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for one sample).
pub fn mean_std<T: Real>(values: &[T]) -> (T, T) {
    if values.is_empty() {
        return (T::nan(), T::nan());
    }
    let n = T::from_usize(values.len()).unwrap_or_else(T::max_value);
    let mean = values.iter().fold(T::zero(), |a, &v| a + v) / n;
    if values.len() < 2 {
        return (mean, T::zero());
    }
    let ss = values.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean));
    (mean, (ss / (n - T::one())).sqrt())
}

/// Viewpoint spread of one captured dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport<T> {
    pub distance_mean: T,
    pub distance_std: T,
    /// Volume of the axis-aligned box holding every camera position, m³.
    pub volume: T,
    pub angular_mean: T,
    pub angular_std: T,
    pub n_frames: usize,
}

/// Variability of camera viewpoints given each frame's `camera_from_layout`
/// pose. The object sits at the layout origin; `marker_orientation` is the
/// marker's rotation in the layout frame.
pub fn variability_report<T: Real>(
    cam_from_layout: &[Pose<T>],
    marker_orientation: &UnitQuaternion<T>,
) -> Result<VariabilityReport<T>, MetricsError> {
    if cam_from_layout.is_empty() {
        return Err(MetricsError::InvalidArgument("no frames".into()));
    }
    let layout_from_cam: Vec<Pose<T>> = cam_from_layout.iter().map(Pose::inverse).collect();
    let distances: Vec<T> = layout_from_cam.iter().map(|p| p.translation.norm()).collect();
    let angles: Vec<T> = layout_from_cam
        .iter()
        .map(|p| angular_distance(&p.rotation, marker_orientation))
        .collect();

    let first = layout_from_cam[0].translation;
    let (lo, hi) = layout_from_cam.iter().fold((first, first), |(lo, hi), p| {
        let t = p.translation;
        (
            crate::geometry::Vector3::new(lo.x.min(t.x), lo.y.min(t.y), lo.z.min(t.z)),
            crate::geometry::Vector3::new(hi.x.max(t.x), hi.y.max(t.y), hi.z.max(t.z)),
        )
    });
    let volume = (hi.x - lo.x) * (hi.y - lo.y) * (hi.z - lo.z);

    let (distance_mean, distance_std) = mean_std(&distances);
    let (angular_mean, angular_std) = mean_std(&angles);
    Ok(VariabilityReport {
        distance_mean,
        distance_std,
        volume,
        angular_mean,
        angular_std,
        n_frames: cam_from_layout.len(),
    })
}

/// One row of the variability table.
pub struct VariabilityRow<'a, T> {
    pub label: &'a str,
    pub report: &'a VariabilityReport<T>,
}

/// Fixed-width text rendering: distance, volume and angular distance blocks.
pub fn format_variability_table<T: Real>(rows: &[VariabilityRow<'_, T>]) -> String {
    let mut out = String::new();
    let header = |out: &mut String, title: &str| {
        let _ = writeln!(out, "{:<24}{:>20}", "", title);
        let _ = writeln!(out, "{:<24}{:>20}{:>8}", "Session", "value", "frames");
    };
    header(&mut out, "Distance [m]");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<24}{:>20}{:>8}",
            r.label,
            format!("{:.3}±{:.3}", r.report.distance_mean.to_f64_lossy(), r.report.distance_std.to_f64_lossy()),
            r.report.n_frames
        );
    }
    header(&mut out, "Volume [m^3]");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<24}{:>20}{:>8}",
            r.label,
            format!("{:.3}", r.report.volume.to_f64_lossy()),
            r.report.n_frames
        );
    }
    header(&mut out, "Angular distance [deg]");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<24}{:>20}{:>8}",
            r.label,
            format!("{:.1}±{:.1}", r.report.angular_mean.to_f64_lossy(), r.report.angular_std.to_f64_lossy()),
            r.report.n_frames
        );
    }
    out
}

/// Fixed-width collection-time table: one row per group, trials then ID rate.
pub fn format_trial_table(rows: &[(String, Vec<f64>)]) -> String {
    let max_trials = rows.iter().map(|(_, t)| t.len()).max().unwrap_or(0).max(1);
    let mut out = String::new();
    let _ = write!(out, "{:<24}", "Method");
    for i in 1..=max_trials {
        let _ = write!(out, "{:>10}", ordinal(i));
    }
    let _ = writeln!(out, "{:>10}", "ID rate");
    for (label, times) in rows {
        let _ = write!(out, "{:<24}", label);
        for i in 0..max_trials {
            match times.get(i) {
                Some(t) => {
                    let _ = write!(out, "{:>10.1}", t);
                }
                None => {
                    let _ = write!(out, "{:>10}", "-");
                }
            }
        }
        match id_rate(times) {
            Ok(r) => {
                let _ = writeln!(out, "{:>10.4}", r);
            }
            Err(_) => {
                let _ = writeln!(out, "{:>10}", "-");
            }
        }
    }
    out
}

fn ordinal(i: usize) -> String {
    let suffix = match (i % 10, i % 100) {
        (1, r) if r != 11 => "st",
        (2, r) if r != 12 => "nd",
        (3, r) if r != 13 => "rd",
        _ => "th",
    };
    format!("{i}{suffix}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vector3;

    #[test]
    fn id_rate_examples() {
        assert!((id_rate(&[159.0f64, 176.0, 213.0]).unwrap() - 54.0 / 159.0).abs() < 1e-15);
        assert!((id_rate(&[100.0f64, 90.0, 80.0]).unwrap() + 0.2).abs() < 1e-15);
        assert_eq!(id_rate(&[100.0, 250.0, 100.0]).unwrap(), 0.0);
        assert!(id_rate(&[100.0]).is_err());
        assert!(id_rate(&[100.0, 0.0]).is_err());
    }

    #[test]
    fn single_frame() {
        // camera at (0, 0, 0.7) in the layout frame with identity rotation
        let layout_from_cam = Pose::<f64>::from_translation(Vector3::new(0.0, 0.0, 0.7));
        let r = variability_report(&[layout_from_cam.inverse()], &UnitQuaternion::identity())
            .unwrap();
        assert!((r.distance_mean - 0.7).abs() < 1e-15);
        assert_eq!(r.distance_std, 0.0);
        assert_eq!(r.volume, 0.0);
        assert_eq!(r.angular_mean, 0.0);
        assert_eq!(r.angular_std, 0.0);
    }

    #[test]
    fn empty_is_error() {
        assert!(variability_report::<f64>(&[], &UnitQuaternion::identity()).is_err());
    }

    #[test]
    fn sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn ordinals() {
        assert_eq!(ordinal(1), "1st");
        assert_eq!(ordinal(2), "2nd");
        assert_eq!(ordinal(3), "3rd");
        assert_eq!(ordinal(11), "11th");
    }

    #[test]
    fn trial_table_layout() {
        let t = format_trial_table(&[("full".into(), vec![159.0, 176.0, 213.0])]);
        assert!(t.contains("0.3396"));
        assert!(t.lines().next().unwrap().contains("3rd"));
    }
}
