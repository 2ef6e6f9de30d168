//! Per-step feasibility of demonstrated motion and its color-coded rendering.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dynamics::DynModel;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::sim::Pose;
use crate::trajectory::Trajectory;

pub const DEFAULT_SIGMA_W: f64 = 0.15;

/// `exp(-error / (2 sigma_w^2))`, kept strictly positive.
pub fn feasibility_weight(error: f64, sigma_w: f64) -> f64 {
    (-error / (2.0 * sigma_w * sigma_w)).exp().max(f64::MIN_POSITIVE)
}

fn check_sigma(sigma_w: f64) -> Result<()> {
    if !(sigma_w > 0.0 && sigma_w.is_finite()) {
        return Err(Error::InvalidConfig(format!("sigma_w must be positive, got {sigma_w}")));
    }
    Ok(())
}

/// Round-trip error of one transition: the L1 distance between `next` and
/// the pose the forward model predicts under the action the inverse model
/// infers.
pub fn roundtrip_error<T: Scalar>(
    fdm: &DynModel<T>,
    idm: &DynModel<T>,
    prev: Pose<T>,
    pose: Pose<T>,
    next: Pose<T>,
) -> Result<f64> {
    let a = idm.predict_action_from(prev, pose, next)?;
    let predicted = fdm.predict_pose(pose, a)?;
    Ok(predicted.l1_distance(&next).to_f64_lossy())
}

/// Returns `(w_t, roundtrip_error)`.
pub fn feasibility_step<T: Scalar>(
    fdm: &DynModel<T>,
    idm: &DynModel<T>,
    pose: Pose<T>,
    next: Pose<T>,
    sigma_w: f64,
) -> Result<(f64, f64)> {
    check_sigma(sigma_w)?;
    let e = roundtrip_error(fdm, idm, pose, pose, next)?;
    Ok((feasibility_weight(e, sigma_w), e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityProfile {
    pub traj_id: String,
    pub sigma_w: f64,
    /// One weight per transition.
    pub weights: Vec<f64>,
    pub errors: Vec<f64>,
    /// Arithmetic mean of `weights`.
    pub mean: f64,
    pub min: f64,
}

impl FeasibilityProfile {
    pub fn from_errors(traj_id: impl Into<String>, errors: Vec<f64>, sigma_w: f64) -> Result<Self> {
        check_sigma(sigma_w)?;
        if errors.is_empty() {
            return Err(Error::Empty("feasibility errors"));
        }
        let weights: Vec<f64> = errors.iter().map(|e| feasibility_weight(*e, sigma_w)).collect();
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        let min = weights.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(Self {
            traj_id: traj_id.into(),
            sigma_w,
            weights,
            errors,
            mean,
            min,
        })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Round-trip errors of every transition of `traj`.
pub fn trajectory_errors<T: Scalar>(
    fdm: &DynModel<T>,
    idm: &DynModel<T>,
    traj: &Trajectory<T>,
) -> Result<Vec<f64>> {
    traj.require_len(2)?;
    let p = traj.poses();
    (0..p.len() - 1)
        .map(|i| roundtrip_error(fdm, idm, p[i.saturating_sub(1)], p[i], p[i + 1]))
        .collect()
}

pub fn feasibility_profile<T: Scalar>(
    fdm: &DynModel<T>,
    idm: &DynModel<T>,
    traj: &Trajectory<T>,
    sigma_w: f64,
) -> Result<FeasibilityProfile> {
    check_sigma(sigma_w)?;
    FeasibilityProfile::from_errors(traj.id(), trajectory_errors(fdm, idm, traj)?, sigma_w)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub sigma_w: f64,
    /// Mean over trajectories of the per-trajectory mean weight.
    pub mean_feasibility: f64,
}

/// Mean feasibility of `trajs` for each value in `sigmas`.
pub fn sigma_sweep<T: Scalar>(
    fdm: &DynModel<T>,
    idm: &DynModel<T>,
    trajs: &[Trajectory<T>],
    sigmas: &[f64],
) -> Result<Vec<SweepPoint>> {
    if trajs.is_empty() {
        return Err(Error::Empty("trajectories"));
    }
    let errors: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| trajectory_errors(fdm, idm, t))
        .collect::<Result<_>>()?;
    sigmas
        .iter()
        .map(|&s| {
            let means: Vec<f64> = errors
                .iter()
                .map(|e| FeasibilityProfile::from_errors("", e.clone(), s).map(|p| p.mean))
                .collect::<Result<_>>()?;
            Ok(SweepPoint {
                sigma_w: s,
                mean_feasibility: means.iter().sum::<f64>() / means.len() as f64,
            })
        })
        .collect()
}

/// Color of the lowest feasibility, `w = 0`.
pub const LOW_COLOR: [u8; 3] = [215, 48, 39];
/// Color of full feasibility, `w = 1`.
pub const HIGH_COLOR: [u8; 3] = [26, 152, 80];

/// Linear RGB interpolation between [`LOW_COLOR`] and [`HIGH_COLOR`], as
/// `#rrggbb`. `w` is clamped to `[0, 1]`.
pub fn color_for(w: f64) -> String {
    let w = if w.is_nan() { 0.0 } else { w.clamp(0.0, 1.0) };
    let c: [u8; 3] = std::array::from_fn(|i| {
        let lo = LOW_COLOR[i] as f64;
        let hi = HIGH_COLOR[i] as f64;
        (lo + (hi - lo) * w).round() as u8
    });
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorMapPayload {
    pub traj_id: String,
    /// One color per segment.
    pub colors: Vec<String>,
    pub weights: Vec<f64>,
    /// `[x, y, theta]` per state.
    pub polyline: Vec<[f64; 3]>,
    pub low_color: String,
    pub high_color: String,
}

pub fn colorize<T: Scalar>(profile: &FeasibilityProfile, traj: &Trajectory<T>) -> Result<ColorMapPayload> {
    if profile.len() + 1 != traj.len() {
        return Err(Error::DimensionMismatch {
            context: "profile segments",
            expected: traj.len().saturating_sub(1),
            got: profile.len(),
        });
    }
    Ok(ColorMapPayload {
        traj_id: traj.id().to_string(),
        colors: profile.weights.iter().map(|w| color_for(*w)).collect(),
        weights: profile.weights.clone(),
        polyline: traj
            .poses()
            .iter()
            .map(|p| p.to_array().map(|v| v.to_f64_lossy()))
            .collect(),
        low_color: color_for(0.0),
        high_color: color_for(1.0),
    })
}

/// Standalone SVG of the colored path in the unit workspace, `y` up.
pub fn render_svg(payload: &ColorMapPayload, size_px: u32) -> String {
    let s = size_px as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size_px}" height="{size_px}" viewBox="0 0 {size_px} {size_px}">"#
    );
    let _ = writeln!(
        out,
        r##"<rect width="{size_px}" height="{size_px}" fill="#ffffff" stroke="#888888"/>"##
    );
    for (i, c) in payload.colors.iter().enumerate() {
        let a = payload.polyline[i];
        let b = payload.polyline[i + 1];
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="3" stroke-linecap="round"/>"#,
            a[0] * s,
            (1.0 - a[1]) * s,
            b[0] * s,
            (1.0 - b[1]) * s,
        );
    }
    out.push_str("</svg>\n");
    out
}
