//! Coordinate-space algebra for 2D poses.
//!
//! A [`Pose`] is a fixed list of [`NUM_KEYPOINTS`] points. The frame a pose lives in is
//! declared by the caller: the pixel frame has y growing downward, the normalized crop frame
//! has y growing upward with `(-0.5, -0.5)` at the bottom-left corner of the target-centered
//! crop. Nothing in this module depends on which frame is used.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of keypoints per pose.
pub const NUM_KEYPOINTS: usize = 16;
/// Length of the flat `(x0, y0, ..., x15, y15)` representation.
pub const POSE_DIM: usize = 2 * NUM_KEYPOINTS;

/// Minimum box extent used in place of a degenerate width or height.
pub const BOX_EPS: f64 = 1e-6;

/// Keypoint indices. The skeleton topology is the MPII 16-joint one; only the left hip and
/// right shoulder positions matter for the torso-based metrics.
pub mod joint {
    pub const R_ANKLE: usize = 0;
    pub const R_KNEE: usize = 1;
    pub const L_HIP: usize = 2;
    pub const R_HIP: usize = 3;
    pub const L_KNEE: usize = 4;
    pub const L_ANKLE: usize = 5;
    pub const PELVIS: usize = 6;
    pub const THORAX: usize = 7;
    pub const NECK: usize = 8;
    pub const HEAD_TOP: usize = 9;
    pub const R_WRIST: usize = 10;
    pub const R_SHOULDER: usize = 11;
    pub const R_ELBOW: usize = 12;
    pub const L_SHOULDER: usize = 13;
    pub const L_ELBOW: usize = 14;
    pub const L_WRIST: usize = 15;

    pub const NAMES: [&str; super::NUM_KEYPOINTS] = [
        "r_ankle",
        "r_knee",
        "l_hip",
        "r_hip",
        "l_knee",
        "l_ankle",
        "pelvis",
        "thorax",
        "neck",
        "head_top",
        "r_wrist",
        "r_shoulder",
        "r_elbow",
        "l_shoulder",
        "l_elbow",
        "l_wrist",
    ];
}

/// Bones of the skeleton, as pairs of keypoint indices.
pub const SKELETON: [(usize, usize); 15] = {
    use joint::*;
    [
        (R_ANKLE, R_KNEE),
        (R_KNEE, R_HIP),
        (R_HIP, PELVIS),
        (L_HIP, PELVIS),
        (L_HIP, L_KNEE),
        (L_KNEE, L_ANKLE),
        (PELVIS, THORAX),
        (THORAX, NECK),
        (NECK, HEAD_TOP),
        (R_WRIST, R_ELBOW),
        (R_ELBOW, R_SHOULDER),
        (R_SHOULDER, THORAX),
        (L_SHOULDER, THORAX),
        (L_SHOULDER, L_ELBOW),
        (L_ELBOW, L_WRIST),
    ]
};

/// Axis-aligned box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    /// The unit box: centered at the origin with side length 1.
    pub const UNIT: BBox = BBox {
        x_min: -0.5,
        y_min: -0.5,
        x_max: 0.5,
        y_max: 0.5,
    };

    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let b = BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        };
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::Argument(format!("non-finite box {b:?}")));
        }
        if x_max < x_min || y_max < y_min {
            return Err(Error::Argument(format!("inverted box {b:?}")));
        }
        Ok(b)
    }

    /// Box centered at `(cx, cy)` with the given extents.
    pub fn centered(cx: f64, cy: f64, width: f64, height: f64) -> Self {
        BBox {
            x_min: cx - width / 2.0,
            y_min: cy - height / 2.0,
            x_max: cx + width / 2.0,
            y_max: cy + height / 2.0,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        ]
    }

    /// Expand any extent below [`BOX_EPS`] symmetrically about the box center.
    pub fn clamped(&self) -> BBox {
        let [cx, cy] = self.center();
        BBox::centered(cx, cy, self.width().max(BOX_EPS), self.height().max(BOX_EPS))
    }

    pub fn is_degenerate(&self) -> bool {
        self.width() < BOX_EPS || self.height() < BOX_EPS
    }

    /// Largest absolute coordinate difference between the two boxes.
    pub fn max_abs_diff(&self, other: &BBox) -> f64 {
        [
            self.x_min - other.x_min,
            self.y_min - other.y_min,
            self.x_max - other.x_max,
            self.y_max - other.y_max,
        ]
        .iter()
        .fold(0.0, |m, d| m.max(d.abs()))
    }
}

/// An ordered set of [`NUM_KEYPOINTS`] 2D keypoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Pose {
    keypoints: [[f64; 2]; NUM_KEYPOINTS],
}

impl Pose {
    pub fn new(keypoints: [[f64; 2]; NUM_KEYPOINTS]) -> Result<Self> {
        let pose = Pose { keypoints };
        pose.validate()?;
        Ok(pose)
    }

    /// Build from the flat `(x0, y0, ..., x15, y15)` layout.
    pub fn from_flat(values: &[f64]) -> Result<Self> {
        if values.len() != POSE_DIM {
            return Err(Error::InvalidPose(format!(
                "expected {POSE_DIM} numbers, got {}",
                values.len()
            )));
        }
        let mut keypoints = [[0.0; 2]; NUM_KEYPOINTS];
        for (kp, xy) in keypoints.iter_mut().zip(values.chunks_exact(2)) {
            *kp = [xy[0], xy[1]];
        }
        Pose::new(keypoints)
    }

    /// Every keypoint at the same location.
    pub fn constant(x: f64, y: f64) -> Self {
        Pose {
            keypoints: [[x, y]; NUM_KEYPOINTS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, [x, y]) in self.keypoints.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::InvalidPose(format!(
                    "keypoint {i} is not finite: ({x}, {y})"
                )));
            }
        }
        Ok(())
    }

    pub fn keypoints(&self) -> &[[f64; 2]; NUM_KEYPOINTS] {
        &self.keypoints
    }

    pub fn keypoint(&self, index: usize) -> [f64; 2] {
        self.keypoints[index]
    }

    pub fn to_flat(&self) -> [f64; POSE_DIM] {
        let mut out = [0.0; POSE_DIM];
        for (i, [x, y]) in self.keypoints.iter().enumerate() {
            out[2 * i] = *x;
            out[2 * i + 1] = *y;
        }
        out
    }

    /// Apply `f` to every keypoint. The result is revalidated.
    pub fn map(&self, mut f: impl FnMut([f64; 2]) -> [f64; 2]) -> Result<Pose> {
        let mut keypoints = self.keypoints;
        for kp in keypoints.iter_mut() {
            *kp = f(*kp);
        }
        Pose::new(keypoints)
    }

    /// Squared Euclidean distance between the two poses as `2M`-vectors.
    pub fn squared_distance(&self, other: &Pose) -> f64 {
        self.keypoints
            .iter()
            .zip(other.keypoints.iter())
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum()
    }

    pub fn max_abs_coord(&self) -> f64 {
        self.keypoints
            .iter()
            .flat_map(|kp| kp.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        self.to_flat()
            .iter()
            .zip(other.to_flat().iter())
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

impl TryFrom<Vec<f64>> for Pose {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Pose::from_flat(&values)
    }
}

impl From<Pose> for Vec<f64> {
    fn from(pose: Pose) -> Self {
        pose.to_flat().to_vec()
    }
}

/// Offsets added to a normalized template, one `(dx, dy)` per keypoint, each in `[-0.5, 0.5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Offsets {
    values: [f64; POSE_DIM],
}

impl Offsets {
    pub const LIMIT: f64 = 0.5;

    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() != POSE_DIM {
            return Err(Error::Range(format!(
                "offsets need {POSE_DIM} values, got {}",
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.abs() <= Self::LIMIT))
        {
            return Err(Error::Range(format!("offset {i} = {v} outside [-0.5, 0.5]")));
        }
        let mut out = [0.0; POSE_DIM];
        out.copy_from_slice(values);
        Ok(Offsets { values: out })
    }

    pub fn zero() -> Self {
        Offsets {
            values: [0.0; POSE_DIM],
        }
    }

    pub fn values(&self) -> &[f64; POSE_DIM] {
        &self.values
    }
}

/// Pose box width and height as fractions of the full image height, each in `[0, 2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub sx: f64,
    pub sy: f64,
}

impl Scale {
    pub const MAX: f64 = 2.0;

    pub fn new(sx: f64, sy: f64) -> Result<Self> {
        for v in [sx, sy] {
            if !(0.0..=Self::MAX).contains(&v) {
                return Err(Error::Range(format!("scale component {v} outside [0, 2]")));
            }
        }
        Ok(Scale { sx, sy })
    }

    /// Clamp each component into `[0, 2]`; returns the scale and whether clamping happened.
    pub fn clamped(sx: f64, sy: f64) -> (Self, bool) {
        let cx = sx.clamp(0.0, Self::MAX);
        let cy = sy.clamp(0.0, Self::MAX);
        (Scale { sx: cx, sy: cy }, cx != sx || cy != sy)
    }

    /// The pose box implied by this scale in the crop frame, centered at the target point.
    /// The crop side equals the full image height, so extents are the scale values.
    pub fn crop_box(&self) -> BBox {
        BBox::centered(0.0, 0.0, self.sx, self.sy)
    }
}

/// Tightest axis-aligned box around the keypoints.
pub fn enclosing_box(pose: &Pose) -> Result<BBox> {
    pose.validate()?;
    let mut b = BBox {
        x_min: f64::INFINITY,
        y_min: f64::INFINITY,
        x_max: f64::NEG_INFINITY,
        y_max: f64::NEG_INFINITY,
    };
    for [x, y] in pose.keypoints() {
        b.x_min = b.x_min.min(*x);
        b.y_min = b.y_min.min(*y);
        b.x_max = b.x_max.max(*x);
        b.y_max = b.y_max.max(*y);
    }
    Ok(b)
}

/// Affine map of every keypoint that carries `from` onto `to`.
///
/// Extents of `from` smaller than [`BOX_EPS`] are widened about their center first, so a
/// degenerate axis lands on the center of `to`.
pub fn deform(pose: &Pose, from: &BBox, to: &BBox) -> Result<Pose> {
    if from == to {
        return Ok(pose.clone());
    }
    let src = from.clamped();
    let sx = to.width() / src.width();
    let sy = to.height() / src.height();
    pose.map(|[x, y]| {
        [
            to.x_min + (x - src.x_min) * sx,
            to.y_min + (y - src.y_min) * sy,
        ]
    })
}

/// Map a pose onto the unit box through its own enclosing box.
pub fn normalize(pose: &Pose) -> Result<Pose> {
    let b = enclosing_box(pose)?;
    deform(pose, &b, &BBox::UNIT)
}

/// Turn a normalized template into a concrete pose: `N(T + offsets)` scaled per axis.
/// The result is centered at the origin and lies in `[-1, 1]` on both axes.
pub fn refine(template: &Pose, offsets: &Offsets, scale: &Scale) -> Result<Pose> {
    let scale = Scale::new(scale.sx, scale.sy)?;
    let d = offsets.values();
    let mut i = 0;
    let raw = template.map(|[x, y]| {
        let out = [x + d[2 * i], y + d[2 * i + 1]];
        i += 1;
        out
    })?;
    normalize(&raw)?.map(|[x, y]| [x * scale.sx, y * scale.sy])
}

/// Distance between the left hip and the right shoulder.
pub fn torso_diameter(pose: &Pose) -> f64 {
    let [hx, hy] = pose.keypoint(joint::L_HIP);
    let [sx, sy] = pose.keypoint(joint::R_SHOULDER);
    (hx - sx).hypot(hy - sy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pose(rng: &mut impl Rng, spread: f64) -> Pose {
        let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
        for kp in kps.iter_mut() {
            *kp = [
                rng.random_range(-spread..spread),
                rng.random_range(-spread..spread),
            ];
        }
        Pose::new(kps).unwrap()
    }

    fn random_box(rng: &mut impl Rng) -> BBox {
        let x = rng.random_range(-10.0..10.0);
        let y = rng.random_range(-10.0..10.0);
        BBox::new(
            x,
            y,
            x + rng.random_range(0.1..5.0),
            y + rng.random_range(0.1..5.0),
        )
        .unwrap()
    }

    #[test]
    fn enclosing_box_of_unit_corners() {
        let mut kps = [[0.5, 0.5]; NUM_KEYPOINTS];
        kps[0] = [0.0, 0.0];
        kps[1] = [1.0, 0.0];
        kps[2] = [0.0, 1.0];
        kps[3] = [1.0, 1.0];
        let b = enclosing_box(&Pose::new(kps).unwrap()).unwrap();
        assert_eq!(b, BBox::new(0.0, 0.0, 1.0, 1.0).unwrap());
    }

    #[test]
    fn enclosing_box_of_point_pose_is_degenerate() {
        let b = enclosing_box(&Pose::constant(3.0, 8.0)).unwrap();
        assert_eq!(b, BBox::new(3.0, 8.0, 3.0, 8.0).unwrap());
        assert!(b.is_degenerate());
    }

    #[test]
    fn enclosing_box_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let p = random_pose(&mut rng, 100.0);
            let flat = p.to_flat();
            let (mut x0, mut y0, mut x1, mut y1) = (flat[0], flat[1], flat[0], flat[1]);
            for k in 1..NUM_KEYPOINTS {
                let (x, y) = (flat[2 * k], flat[2 * k + 1]);
                if x < x0 {
                    x0 = x;
                }
                if x > x1 {
                    x1 = x;
                }
                if y < y0 {
                    y0 = y;
                }
                if y > y1 {
                    y1 = y;
                }
            }
            assert_eq!(enclosing_box(&p).unwrap(), BBox::new(x0, y0, x1, y1).unwrap());
        }
    }

    #[test]
    fn non_finite_pose_rejected() {
        let mut flat = [0.0; POSE_DIM];
        flat[7] = f64::NAN;
        assert!(matches!(Pose::from_flat(&flat), Err(Error::InvalidPose(_))));
        assert!(Pose::from_flat(&flat[..30]).is_err());
    }

    #[test]
    fn deform_center_to_center() {
        let p = Pose::constant(3.0, 8.0);
        let from = BBox::new(2.0, 6.0, 4.0, 10.0).unwrap();
        let out = deform(&p, &from, &BBox::UNIT).unwrap();
        for kp in out.keypoints() {
            assert_eq!(*kp, [0.0, 0.0]);
        }
    }

    #[test]
    fn deform_identity_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = random_pose(&mut rng, 3.0);
        let b = random_box(&mut rng);
        assert_eq!(deform(&p, &b, &b).unwrap(), p);
    }

    #[test]
    fn deform_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = random_pose(&mut rng, 10.0);
            let (a, b) = (random_box(&mut rng), random_box(&mut rng));
            let back = deform(&deform(&p, &a, &b).unwrap(), &b, &a).unwrap();
            assert!(back.max_abs_diff(&p) < 1e-9);
        }
    }

    #[test]
    fn deform_is_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (p, q) = (random_pose(&mut rng, 5.0), random_pose(&mut rng, 5.0));
            let (a, b) = (random_box(&mut rng), random_box(&mut rng));
            let (alpha, beta) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let combo = |u: &Pose, v: &Pose, s: f64, t: f64| {
                let (fu, fv) = (u.to_flat(), v.to_flat());
                let c: Vec<f64> = fu.iter().zip(fv.iter()).map(|(x, y)| s * x + t * y).collect();
                Pose::from_flat(&c).unwrap()
            };
            let zero = Pose::constant(0.0, 0.0);
            let lhs = deform(&combo(&p, &q, alpha, beta), &a, &b).unwrap();
            let dp = deform(&p, &a, &b).unwrap();
            let dq = deform(&q, &a, &b).unwrap();
            let d0 = deform(&zero, &a, &b).unwrap();
            // affine: D(ap + bq) = a D(p) + b D(q) + (1 - a - b) D(0)
            let rhs = combo(&combo(&dp, &dq, alpha, beta), &d0, 1.0, 1.0 - alpha - beta);
            assert!(lhs.max_abs_diff(&rhs) < 1e-9);
        }
    }

    #[test]
    fn normalize_maps_corner_to_corner() {
        let mut kps = [[3.0, 8.0]; NUM_KEYPOINTS];
        kps[0] = [2.0, 6.0];
        kps[1] = [4.0, 10.0];
        let n = normalize(&Pose::new(kps).unwrap()).unwrap();
        assert_eq!(n.keypoint(0), [-0.5, -0.5]);
        assert_eq!(n.keypoint(1), [0.5, 0.5]);
        assert_eq!(n.keypoint(2), [0.0, 0.0]);
    }

    #[test]
    fn normalize_of_normalized_is_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = normalize(&random_pose(&mut rng, 4.0)).unwrap();
        assert!(normalize(&n).unwrap().max_abs_diff(&n) < 1e-9);
    }

    #[test]
    fn normalize_degenerate_axis_lands_on_center() {
        let mut kps = [[1.0, 0.0]; NUM_KEYPOINTS];
        for (i, kp) in kps.iter_mut().enumerate() {
            kp[1] = i as f64;
        }
        let n = normalize(&Pose::new(kps).unwrap()).unwrap();
        let b = enclosing_box(&n).unwrap();
        assert!(b.x_min.abs() < 1e-9 && b.x_max.abs() < 1e-9);
        assert!((b.y_min + 0.5).abs() < 1e-12 && (b.y_max - 0.5).abs() < 1e-12);
    }

    #[test]
    fn refine_identity_and_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = normalize(&random_pose(&mut rng, 1.0)).unwrap();
        let same = refine(&t, &Offsets::zero(), &Scale::new(1.0, 1.0).unwrap()).unwrap();
        assert!(same.max_abs_diff(&t) < 1e-12);
        let half = refine(&t, &Offsets::zero(), &Scale::new(0.5, 0.5).unwrap()).unwrap();
        let expect = t.map(|[x, y]| [0.5 * x, 0.5 * y]).unwrap();
        assert!(half.max_abs_diff(&expect) < 1e-12);
    }

    #[test]
    fn refine_rejects_out_of_range() {
        assert!(matches!(Offsets::new(&[0.6; POSE_DIM]), Err(Error::Range(_))));
        assert!(matches!(Scale::new(2.1, 1.0), Err(Error::Range(_))));
        assert!(matches!(Scale::new(-0.1, 1.0), Err(Error::Range(_))));
        let t = normalize(&Pose::constant(0.0, 0.0)).unwrap();
        let bad = Scale { sx: 3.0, sy: 1.0 };
        assert!(refine(&t, &Offsets::zero(), &bad).is_err());
    }

    #[test]
    fn refine_matches_stepwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let t = normalize(&random_pose(&mut rng, 1.0)).unwrap();
            let d: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(-0.5..=0.5)).collect();
            let (sx, sy) = (rng.random_range(0.0..=2.0), rng.random_range(0.0..=2.0));
            let out = refine(&t, &Offsets::new(&d).unwrap(), &Scale::new(sx, sy).unwrap())
                .unwrap()
                .to_flat();

            // add, then normalize by explicit min/max, then multiply
            let mut raw = t.to_flat();
            for (r, dv) in raw.iter_mut().zip(d.iter()) {
                *r += dv;
            }
            let xs: Vec<f64> = raw.iter().step_by(2).copied().collect();
            let ys: Vec<f64> = raw.iter().skip(1).step_by(2).copied().collect();
            let (x0, x1) = (
                xs.iter().cloned().fold(f64::MAX, f64::min),
                xs.iter().cloned().fold(f64::MIN, f64::max),
            );
            let (y0, y1) = (
                ys.iter().cloned().fold(f64::MAX, f64::min),
                ys.iter().cloned().fold(f64::MIN, f64::max),
            );
            for k in 0..NUM_KEYPOINTS {
                let ex = ((xs[k] - x0) / (x1 - x0) - 0.5) * sx;
                let ey = ((ys[k] - y0) / (y1 - y0) - 0.5) * sy;
                assert!((out[2 * k] - ex).abs() < 1e-9);
                assert!((out[2 * k + 1] - ey).abs() < 1e-9);
            }
            assert!(out.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn torso_examples() {
        let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
        kps[joint::R_SHOULDER] = [3.0, 4.0];
        assert_eq!(torso_diameter(&Pose::new(kps).unwrap()), 5.0);
        assert_eq!(torso_diameter(&Pose::constant(1.0, 1.0)), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = random_pose(&mut rng, 10.0);
        let (h, s) = (p.keypoint(2), p.keypoint(11));
        let expect = ((h[0] - s[0]).powi(2) + (h[1] - s[1]).powi(2)).sqrt();
        assert!((torso_diameter(&p) - expect).abs() < 1e-12);
    }

    #[test]
    fn flat_serialization_layout() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = random_pose(&mut rng, 10.0);
        let json = serde_json::to_string(&p).unwrap();
        let values: Vec<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(values.len(), POSE_DIM);
        assert_eq!(values[2], p.keypoint(1)[0]);
        assert_eq!(serde_json::from_str::<Pose>(&json).unwrap(), p);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pose_strategy() -> impl Strategy<Value = Pose> {
            proptest::collection::vec(-50.0f64..50.0, POSE_DIM)
                .prop_map(|v| Pose::from_flat(&v).unwrap())
                .prop_filter("non-degenerate", |p| {
                    !enclosing_box(p).unwrap().is_degenerate()
                })
        }

        proptest! {
            #[test]
            fn normalize_idempotent(p in pose_strategy()) {
                let n = normalize(&p).unwrap();
                prop_assert!(normalize(&n).unwrap().max_abs_diff(&n) <= 1e-9);
                prop_assert!(enclosing_box(&n).unwrap().max_abs_diff(&BBox::UNIT) <= 1e-6);
            }
        }
    }
}
