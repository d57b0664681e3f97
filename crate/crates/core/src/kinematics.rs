//! Serial chains described with modified Denavit-Hartenberg parameters.
//!
//! Every frame is obtained from its parent by the Khalil-Kleinfinger
//! composition
//!
//! ```text
//! T(j-1, j) = Rot_x(alpha_j) * Trans_x(d_j) * Rot_z(theta_j) * Trans_z(r_j)
//! ```
//!
//! where `theta_j = q_j + theta_offset_j` for actuated rows. A chain holds one
//! row per revolute joint plus a fixed terminal `tool` row whose angle is its
//! constant offset; the origin of the tool frame is the end effector.
//!
//! Link `i` is the body carried by joint `i`: it spans from the origin of
//! frame `i` to the origin of frame `i + 1` (the tool frame for the last
//! joint). The pedestal between the base and frame 1 is fixed and is not a
//! collision link.

use std::f64::consts::PI;

use nalgebra::{Isometry3, Point3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const PLANAR_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("posture has {got} joint values but the chain has {expected} joints")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid chain field `{field}`: {reason}")]
    InvalidChain { field: String, reason: String },
    #[error("scale factor for link {link} must be positive and finite, got {factor}")]
    InvalidScale { link: usize, factor: f64 },
}

/// One row of a modified DH table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DhRow {
    /// Joint kind; only `0` (revolute) is supported.
    #[serde(default)]
    pub sigma: u8,
    pub alpha: f64,
    pub d: f64,
    #[serde(default)]
    pub theta_offset: f64,
    #[serde(default)]
    pub r: f64,
}

impl DhRow {
    pub fn revolute(alpha: f64, d: f64, theta_offset: f64, r: f64) -> Self {
        Self {
            sigma: 0,
            alpha,
            d,
            theta_offset,
            r,
        }
    }

    /// Planar row: a link of length `d` along the previous x axis.
    pub fn planar(d: f64) -> Self {
        Self::revolute(0.0, d, 0.0, 0.0)
    }

    pub fn transform(&self, theta: f64) -> Isometry3<f64> {
        Isometry3::rotation(Vector3::x() * self.alpha)
            * Translation3::new(self.d, 0.0, 0.0)
            * Isometry3::rotation(Vector3::z() * theta)
            * Translation3::new(0.0, 0.0, self.r)
    }

    fn length(&self) -> f64 {
        self.d.hypot(self.r)
    }

    fn validate(&self, field: &str) -> Result<(), KinematicsError> {
        let bad = |reason: &str| KinematicsError::InvalidChain {
            field: field.to_string(),
            reason: reason.to_string(),
        };
        if self.sigma != 0 {
            return Err(bad("only revolute joints (sigma = 0) are supported"));
        }
        if !(self.alpha.is_finite() && self.theta_offset.is_finite()) {
            return Err(bad("alpha and theta_offset must be finite"));
        }
        if !(self.d.is_finite() && self.r.is_finite()) {
            return Err(bad("d and r must be finite"));
        }
        if self.d < 0.0 {
            return Err(bad("d must be non-negative"));
        }
        Ok(())
    }

    fn is_planar(&self) -> bool {
        self.alpha.abs() <= PLANAR_EPS && self.r.abs() <= PLANAR_EPS
    }
}

/// Vector of joint angles in radians, one per actuated row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Posture(pub Vec<f64>);

impl Posture {
    pub fn new(q: impl Into<Vec<f64>>) -> Self {
        Self(q.into())
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Largest per-joint absolute difference.
    pub fn max_abs_diff(&self, other: &Posture) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Linear interpolation `self + t * (other - self)`.
    pub fn lerp(&self, other: &Posture, t: f64) -> Posture {
        Posture(self.0.iter().zip(&other.0).map(|(a, b)| a + t * (b - a)).collect())
    }
}

impl From<Vec<f64>> for Posture {
    fn from(q: Vec<f64>) -> Self {
        Self(q)
    }
}

/// Inclusive joint range in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct JointLimit {
    pub min: f64,
    pub max: f64,
}

impl JointLimit {
    pub const FULL_TURN: JointLimit = JointLimit { min: -PI, max: PI };

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.min && angle <= self.max
    }
}

impl Default for JointLimit {
    fn default() -> Self {
        Self::FULL_TURN
    }
}

impl From<[f64; 2]> for JointLimit {
    fn from([min, max]: [f64; 2]) -> Self {
        Self { min, max }
    }
}

impl From<JointLimit> for [f64; 2] {
    fn from(l: JointLimit) -> Self {
        [l.min, l.max]
    }
}

/// Straight piece of a link between two frame origins, thickened by `radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSegment {
    pub start: Point3<f64>,
    pub end: Point3<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<DhRow>,
    tool: DhRow,
    joint_limits: Vec<JointLimit>,
    link_radius: Vec<f64>,
    base: Isometry3<f64>,
    planar: bool,
}

impl KinematicChain {
    pub fn new(
        joints: Vec<DhRow>,
        tool: DhRow,
        joint_limits: Vec<JointLimit>,
        link_radius: Vec<f64>,
        base: Isometry3<f64>,
        planar: bool,
    ) -> Result<Self, KinematicsError> {
        let bad = |field: &str, reason: String| KinematicsError::InvalidChain {
            field: field.to_string(),
            reason,
        };
        if joints.is_empty() {
            return Err(bad("joints", "a chain needs at least one joint".into()));
        }
        for (i, row) in joints.iter().enumerate() {
            row.validate(&format!("joints[{i}]"))?;
        }
        tool.validate("tool")?;
        if joint_limits.len() != joints.len() {
            return Err(bad(
                "joint_limits",
                format!("{} entries for {} joints", joint_limits.len(), joints.len()),
            ));
        }
        for (i, lim) in joint_limits.iter().enumerate() {
            if !(lim.min.is_finite() && lim.max.is_finite()) || lim.min > lim.max {
                return Err(bad(
                    &format!("joint_limits[{i}]"),
                    format!("expected finite min <= max, got [{}, {}]", lim.min, lim.max),
                ));
            }
        }
        if link_radius.len() != joints.len() {
            return Err(bad(
                "link_radius",
                format!("{} entries for {} links", link_radius.len(), joints.len()),
            ));
        }
        if let Some(i) = link_radius.iter().position(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(bad(
                &format!("link_radius[{i}]"),
                "radius must be finite and non-negative".into(),
            ));
        }
        if planar {
            if let Some(i) = joints.iter().position(|r| !r.is_planar()) {
                return Err(bad(
                    &format!("joints[{i}]"),
                    "planar chains require alpha = 0 and r = 0".into(),
                ));
            }
            if !tool.is_planar() {
                return Err(bad("tool", "planar chains require alpha = 0 and r = 0".into()));
            }
            let z_axis = base.rotation * Vector3::z();
            if base.translation.vector.z.abs() > PLANAR_EPS || (z_axis.z - 1.0).abs() > PLANAR_EPS {
                return Err(bad(
                    "base",
                    "planar chains need a base in the z = 0 plane rotated about z only".into(),
                ));
            }
        }
        Ok(Self {
            joints,
            tool,
            joint_limits,
            link_radius,
            base,
            planar,
        })
    }

    /// Planar nR chain with the given link lengths, base at the origin,
    /// default limits and zero thickness.
    pub fn planar_links(lengths: &[f64]) -> Result<Self, KinematicsError> {
        let n = lengths.len();
        if n == 0 {
            return Err(KinematicsError::InvalidChain {
                field: "joints".into(),
                reason: "a chain needs at least one joint".into(),
            });
        }
        let mut joints = vec![DhRow::planar(0.0)];
        joints.extend(lengths[..n - 1].iter().map(|&l| DhRow::planar(l)));
        Self::new(
            joints,
            DhRow::planar(lengths[n - 1]),
            vec![JointLimit::default(); n],
            vec![0.0; n],
            Isometry3::identity(),
            true,
        )
    }

    /// Shoulder (two axes) plus elbow arm with upper arm `upper` and forearm
    /// `fore`:
    ///
    /// | j | alpha | d     | theta   | r |
    /// |---|-------|-------|---------|---|
    /// | 1 | 0     | 0     | q1      | 0 |
    /// | 2 | pi/2  | 0     | q2      | 0 |
    /// | 3 | 0     | upper | q3      | 0 |
    /// | 4 | 0     | fore  | 0 (tool)| 0 |
    pub fn spatial_arm(upper: f64, fore: f64, radius: f64) -> Result<Self, KinematicsError> {
        Self::new(
            vec![
                DhRow::revolute(0.0, 0.0, 0.0, 0.0),
                DhRow::revolute(PI / 2.0, 0.0, 0.0, 0.0),
                DhRow::revolute(0.0, upper, 0.0, 0.0),
            ],
            DhRow::revolute(0.0, fore, 0.0, 0.0),
            vec![JointLimit::default(); 3],
            vec![radius; 3],
            Isometry3::identity(),
            false,
        )
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[DhRow] {
        &self.joints
    }

    pub fn tool(&self) -> &DhRow {
        &self.tool
    }

    pub fn joint_limits(&self) -> &[JointLimit] {
        &self.joint_limits
    }

    pub fn link_radius(&self) -> &[f64] {
        &self.link_radius
    }

    pub fn base(&self) -> &Isometry3<f64> {
        &self.base
    }

    pub fn is_planar(&self) -> bool {
        self.planar
    }

    pub fn with_base(mut self, base: Isometry3<f64>) -> Result<Self, KinematicsError> {
        self.base = base;
        Self::new(
            self.joints,
            self.tool,
            self.joint_limits,
            self.link_radius,
            self.base,
            self.planar,
        )
    }

    pub fn within_limits(&self, q: &Posture) -> bool {
        q.len() == self.dof() && q.0.iter().zip(&self.joint_limits).all(|(a, lim)| lim.contains(*a))
    }

    /// Upper bound on the distance from the base origin to any frame origin.
    pub fn total_reach(&self) -> f64 {
        self.joints.iter().map(DhRow::length).sum::<f64>() + self.tool.length()
    }

    /// Length of each collision link (distance between consecutive frame
    /// origins it spans, which is fixed by the next row's `d` and `r`).
    pub fn link_lengths(&self) -> Vec<f64> {
        self.joints[1..]
            .iter()
            .chain(std::iter::once(&self.tool))
            .map(DhRow::length)
            .collect()
    }

    fn check_dim(&self, q: &Posture) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    /// Base frame, one frame per joint, then the tool frame.
    pub fn forward_kinematics(&self, q: &Posture) -> Result<Vec<Isometry3<f64>>, KinematicsError> {
        self.check_dim(q)?;
        let mut frames = Vec::with_capacity(self.dof() + 2);
        let mut current = self.base;
        frames.push(current);
        for (row, angle) in self.joints.iter().zip(&q.0) {
            current *= row.transform(angle + row.theta_offset);
            frames.push(current);
        }
        current *= self.tool.transform(self.tool.theta_offset);
        frames.push(current);
        if self.planar {
            for f in &mut frames {
                f.translation.vector.z = 0.0;
            }
        }
        Ok(frames)
    }

    pub fn end_effector(&self, q: &Posture) -> Result<Point3<f64>, KinematicsError> {
        let frames = self.forward_kinematics(q)?;
        let last = frames.last().expect("frames are never empty");
        Ok(Point3::from(last.translation.vector))
    }

    pub fn link_segments(&self, q: &Posture) -> Result<Vec<LinkSegment>, KinematicsError> {
        let frames = self.forward_kinematics(q)?;
        Ok(frames[1..]
            .windows(2)
            .zip(&self.link_radius)
            .map(|(pair, &radius)| LinkSegment {
                start: Point3::from(pair[0].translation.vector),
                end: Point3::from(pair[1].translation.vector),
                radius,
            })
            .collect())
    }

    /// Copy of the chain with link `i`'s row (`d` and `r`) multiplied by
    /// `factors[i]`. Joint limits and radii are kept.
    pub fn scale_chain(&self, factors: &[f64]) -> Result<Self, KinematicsError> {
        if factors.len() != self.dof() {
            return Err(KinematicsError::InvalidChain {
                field: "scale_factors".into(),
                reason: format!("{} factors for {} links", factors.len(), self.dof()),
            });
        }
        if let Some((link, &factor)) = factors.iter().enumerate().find(|(_, f)| !(f.is_finite() && **f > 0.0)) {
            return Err(KinematicsError::InvalidScale { link, factor });
        }
        let mut scaled = self.clone();
        let n = self.dof();
        for (i, &s) in factors.iter().enumerate() {
            let row = if i + 1 < n {
                &mut scaled.joints[i + 1]
            } else {
                &mut scaled.tool
            };
            row.d *= s;
            row.r *= s;
        }
        Ok(scaled)
    }

    /// Copy of the chain whose links have the given lengths. A link of zero
    /// length (such as the shoulder offset of the arm) must stay zero.
    pub fn with_link_lengths(&self, lengths: &[f64]) -> Result<Self, KinematicsError> {
        let current = self.link_lengths();
        if lengths.len() != current.len() {
            return Err(KinematicsError::InvalidChain {
                field: "link_lengths".into(),
                reason: format!("{} lengths for {} links", lengths.len(), current.len()),
            });
        }
        let factors = current
            .iter()
            .zip(lengths)
            .enumerate()
            .map(|(link, (&old, &new))| match (old == 0.0, new == 0.0) {
                (true, true) => Ok(1.0),
                (false, _) => Ok(new / old),
                (true, false) => Err(KinematicsError::InvalidChain {
                    field: "link_lengths".into(),
                    reason: format!("link {link} has no length to scale"),
                }),
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.scale_chain(&factors)
    }
}

/// Rigid pose from a translation and roll/pitch/yaw angles (radians).
pub fn pose_from_xyz_rpy(xyz: [f64; 3], rpy: [f64; 3]) -> Isometry3<f64> {
    Isometry3::from_parts(
        Translation3::new(xyz[0], xyz[1], xyz[2]),
        UnitQuaternion::from_euler_angles(rpy[0], rpy[1], rpy[2]),
    )
}
