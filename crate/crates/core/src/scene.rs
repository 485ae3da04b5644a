//! Scene preparation: the three target-aware crops fed to the model, ground-truth labels,
//! and conversion between the pixel frame and the normalized crop frame.
//!
//! Pixel frame: continuous coordinates, pixel `(row, col)` covers `[col, col+1) x [row, row+1)`,
//! y grows downward. Crop frame: the target-centered square of side `H` maps to
//! `[-0.5, 0.5]^2` with y growing upward.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{enclosing_box, normalize, Pose, Scale};
use crate::templates::{nearest_template, TemplateLibrary};

/// Smallest accepted image side.
pub const MIN_IMAGE_SIDE: usize = 8;

/// Default side of each prepared crop.
pub const DEFAULT_CROP_SIZE: usize = 224;

/// RGB image with values in `[0, 1]`, stored row-major as `H x W x 3`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl SceneImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Argument(format!(
                "image buffer has {} values, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(SceneImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        SceneImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at a continuous pixel-frame location. Locations outside the image
    /// rectangle read as zero; inside, neighbors are clamped to the border.
    pub fn sample(&self, x: f64, y: f64) -> [f32; 3] {
        let (w, h) = (self.width as f64, self.height as f64);
        if !(0.0..=w).contains(&x) || !(0.0..=h).contains(&y) {
            return [0.0; 3];
        }
        let fx = (x - 0.5).clamp(0.0, w - 1.0);
        let fy = (y - 0.5).clamp(0.0, h - 1.0);
        let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
        let (x1, y1) = ((x0 + 1).min(self.width - 1), (y0 + 1).min(self.height - 1));
        let (ax, ay) = ((fx - x0 as f64) as f32, (fy - y0 as f64) as f32);
        let (p00, p01, p10, p11) = (
            self.pixel(y0, x0),
            self.pixel(y0, x1),
            self.pixel(y1, x0),
            self.pixel(y1, x1),
        );
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = p00[c] + (p01[c] - p00[c]) * ax;
            let bot = p10[c] + (p11[c] - p10[c]) * ax;
            out[c] = top + (bot - top) * ay;
        }
        out
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)?.to_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        SceneImage::new(w, h, data)
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches dimensions")
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_rgb8().save(path.as_ref())?;
        Ok(())
    }
}

/// Full scene image, target point and ground-truth pose (pixel frame).
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub id: String,
    pub image: Arc<SceneImage>,
    pub target: [f64; 2],
    pub gt_pose: Pose,
}

impl SceneSample {
    pub fn new(id: impl Into<String>, image: Arc<SceneImage>, target: [f64; 2], gt_pose: Pose) -> Result<Self> {
        let s = SceneSample {
            id: id.into(),
            image,
            target,
            gt_pose,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.image.width(), self.image.height());
        if w < MIN_IMAGE_SIDE || h < MIN_IMAGE_SIDE {
            return Err(Error::Argument(format!(
                "sample {}: image {w}x{h} smaller than {MIN_IMAGE_SIDE}",
                self.id
            )));
        }
        let [x, y] = self.target;
        if !(0.0..=w as f64).contains(&x) || !(0.0..=h as f64).contains(&y) {
            return Err(Error::Argument(format!(
                "sample {}: target ({x}, {y}) outside the {w}x{h} image",
                self.id
            )));
        }
        self.gt_pose.validate()
    }

    pub fn image_height(&self) -> f64 {
        self.image.height() as f64
    }
}

/// Pixel-frame rectangle a crop was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropWindow {
    pub x0: f64,
    pub y0: f64,
    pub width: f64,
    pub height: f64,
    pub size: usize,
}

impl CropWindow {
    /// Source location of the center of crop pixel `(u, v)` (column, row).
    pub fn to_source(&self, u: f64, v: f64) -> [f64; 2] {
        [
            self.x0 + (u + 0.5) * self.width / self.size as f64,
            self.y0 + (v + 0.5) * self.height / self.size as f64,
        ]
    }

    /// Continuous crop pixel coordinates `(u, v)` of a source location, pixel-center aligned.
    pub fn from_source(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x - self.x0) * self.size as f64 / self.width - 0.5,
            (y - self.y0) * self.size as f64 / self.height - 0.5,
        ]
    }
}

/// A resized crop stored channel-major (`3 x S x S`).
#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Crop {
    pub fn value(&self, channel: usize, row: usize, col: usize) -> f32 {
        self.data[(channel * self.size + row) * self.size + col]
    }
}

/// Whole image, `H x H` and `H/2 x H/2` target-centered crops, all resized to `S x S`.
#[derive(Debug, Clone)]
pub struct PreparedInput {
    pub crops: [Crop; 3],
    pub windows: [CropWindow; 3],
}

fn resample(image: &SceneImage, window: CropWindow) -> Crop {
    let s = window.size;
    let mut data = vec![0.0f32; 3 * s * s];
    for v in 0..s {
        for u in 0..s {
            let [x, y] = window.to_source(u as f64, v as f64);
            let rgb = image.sample(x, y);
            for (c, val) in rgb.iter().enumerate() {
                data[(c * s + v) * s + u] = *val;
            }
        }
    }
    Crop { size: s, data }
}

/// Crop windows for a sample: whole image, side `H` square, side `H/2` square.
pub fn crop_windows(width: usize, height: usize, target: [f64; 2], size: usize) -> [CropWindow; 3] {
    let h = height as f64;
    let [tx, ty] = target;
    let square = |side: f64| CropWindow {
        x0: tx - side / 2.0,
        y0: ty - side / 2.0,
        width: side,
        height: side,
        size,
    };
    [
        CropWindow {
            x0: 0.0,
            y0: 0.0,
            width: width as f64,
            height: h,
            size,
        },
        square(h),
        square(h / 2.0),
    ]
}

/// Build the three resized crops; regions outside the image are zero.
pub fn make_crops(sample: &SceneSample, size: usize) -> Result<PreparedInput> {
    sample.validate()?;
    Ok(crops_at(&sample.image, sample.target, size))
}

/// The three crops around `target` for an image without annotation.
pub fn crops_at(image: &SceneImage, target: [f64; 2], size: usize) -> PreparedInput {
    let windows = crop_windows(image.width(), image.height(), target, size);
    let crops = [
        resample(image, windows[0]),
        resample(image, windows[1]),
        resample(image, windows[2]),
    ];
    PreparedInput { crops, windows }
}

/// Ground-truth class, scale and normalized pose for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthLabel {
    pub class_index: usize,
    pub scale: Scale,
    pub norm_pose: Pose,
    /// The pose box had a zero extent and was widened before normalization.
    pub degenerate: bool,
    /// The scale exceeded `[0, 2]` and was clamped.
    pub scale_clamped: bool,
}

pub fn make_labels(sample: &SceneSample, library: &TemplateLibrary) -> Result<GroundTruthLabel> {
    sample.validate()?;
    let b = enclosing_box(&sample.gt_pose)?;
    let h = sample.image_height();
    let (scale, scale_clamped) = Scale::clamped(b.width() / h, b.height() / h);
    // templates live in the y-up crop frame, so classify and normalize there
    let crop = sample.to_crop_frame(&sample.gt_pose)?;
    Ok(GroundTruthLabel {
        class_index: nearest_template(&crop, library)?,
        scale,
        norm_pose: normalize(&crop)?,
        degenerate: b.is_degenerate(),
        scale_clamped,
    })
}

/// Pixel frame to the crop frame of the `H x H` target-centered crop (y up).
pub fn pose_to_crop_frame(pose: &Pose, target: [f64; 2], image_height: f64) -> Result<Pose> {
    let [tx, ty] = target;
    pose.map(|[x, y]| [(x - tx) / image_height, (ty - y) / image_height])
}

/// Inverse of [`pose_to_crop_frame`].
pub fn crop_frame_to_pixels(pose: &Pose, target: [f64; 2], image_height: f64) -> Result<Pose> {
    let [tx, ty] = target;
    pose.map(|[x, y]| [tx + x * image_height, ty - y * image_height])
}

impl SceneSample {
    pub fn to_crop_frame(&self, pose: &Pose) -> Result<Pose> {
        pose_to_crop_frame(pose, self.target, self.image_height())
    }

    pub fn to_pixels(&self, pose: &Pose) -> Result<Pose> {
        crop_frame_to_pixels(pose, self.target, self.image_height())
    }
}

/// Crop-frame point to continuous pixel coordinates `(u, v)` of an `S x S` rendering of the
/// `H x H` crop (pixel centers at half-integers).
pub fn crop_frame_to_crop_pixels(point: [f64; 2], size: usize) -> [f64; 2] {
    let s = size as f64;
    [(point[0] + 0.5) * s, (0.5 - point[1]) * s]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pose::{Pose, NUM_KEYPOINTS, POSE_DIM};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut impl Rng, w: usize, h: usize) -> SceneImage {
        let data = (0..w * h * 3).map(|_| rng.random::<f32>()).collect();
        SceneImage::new(w, h, data).unwrap()
    }

    fn sample_with(image: SceneImage, target: [f64; 2], pose: Pose) -> SceneSample {
        SceneSample::new("s", Arc::new(image), target, pose).unwrap()
    }

    #[test]
    fn centered_square_gives_identical_first_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let img = random_image(&mut rng, 40, 40);
        let s = sample_with(img, [20.0, 20.0], Pose::constant(20.0, 20.0));
        let p = make_crops(&s, 32).unwrap();
        assert_eq!(p.crops[0], p.crops[1]);
    }

    #[test]
    fn corner_target_pads_three_quadrants() {
        let img = SceneImage::filled(30, 20, [0.2, 0.6, 0.9]);
        let s = sample_with(img, [0.0, 0.0], Pose::constant(1.0, 1.0));
        let p = make_crops(&s, 16).unwrap();
        let crop = &p.crops[1];
        for v in 0..16 {
            for u in 0..16 {
                let inside = u >= 8 && v >= 8;
                for c in 0..3 {
                    let val = crop.value(c, v, u);
                    if inside {
                        assert!(val > 0.0, "({u},{v}) should be image");
                    } else {
                        assert_eq!(val, 0.0, "({u},{v}) should be padding");
                    }
                }
            }
        }
    }

    #[test]
    fn crop_pixels_map_back_to_source() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let (w, h) = (rng.random_range(16..90), rng.random_range(16..70));
            let target = [rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)];
            let windows = crop_windows(w, h, target, 24);
            for (i, win) in windows.iter().enumerate() {
                let side = [w as f64, h as f64, h as f64 / 2.0][i.min(2)];
                let (u, v) = (rng.random_range(0..24), rng.random_range(0..24));
                let [x, y] = win.to_source(u as f64, v as f64);
                // analytic: crop pixel centers are evenly spread over the window
                let (ex, ey) = if i == 0 {
                    ((u as f64 + 0.5) * w as f64 / 24.0, (v as f64 + 0.5) * h as f64 / 24.0)
                } else {
                    (
                        target[0] - side / 2.0 + (u as f64 + 0.5) * side / 24.0,
                        target[1] - side / 2.0 + (v as f64 + 0.5) * side / 24.0,
                    )
                };
                assert!((x - ex).abs() < 0.5 && (y - ey).abs() < 0.5);
                let [bu, bv] = win.from_source(x, y);
                assert!((bu - u as f64).abs() < 1e-9 && (bv - v as f64).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bilinear_sampling_reproduces_pixel_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 10, 12);
        assert_eq!(img.sample(3.5, 4.5), img.pixel(4, 3));
        assert_eq!(img.sample(-0.1, 4.0), [0.0; 3]);
        let mid = img.sample(4.0, 4.5);
        let (a, b) = (img.pixel(4, 3), img.pixel(4, 4));
        assert!((mid[0] - 0.5 * (a[0] + b[0])).abs() < 1e-6);
    }

    fn pose_with_box(x0: f64, y0: f64, w: f64, h: f64) -> Pose {
        let mut kps = [[x0 + w / 2.0, y0 + h / 2.0]; NUM_KEYPOINTS];
        kps[0] = [x0, y0];
        kps[1] = [x0 + w, y0 + h];
        Pose::new(kps).unwrap()
    }

    #[test]
    fn scale_labels() {
        let lib = crate::templates::TemplateLibrary::from_templates(vec![normalize(
            &pose_with_box(0.0, 0.0, 1.0, 1.0),
        )
        .unwrap()])
        .unwrap();
        let img = Arc::new(SceneImage::filled(80, 40, [0.5; 3]));
        let s = SceneSample::new("a", img.clone(), [40.0, 20.0], pose_with_box(20.0, 0.0, 40.0, 40.0)).unwrap();
        let l = make_labels(&s, &lib).unwrap();
        assert_eq!(l.scale, Scale::new(1.0, 1.0).unwrap());
        let s = SceneSample::new("b", img.clone(), [40.0, 20.0], pose_with_box(30.0, 15.0, 20.0, 10.0)).unwrap();
        assert_eq!(make_labels(&s, &lib).unwrap().scale, Scale::new(0.5, 0.25).unwrap());
        let s = SceneSample::new("c", img, [40.0, 20.0], pose_with_box(0.0, 0.0, 100.0, 10.0)).unwrap();
        let l = make_labels(&s, &lib).unwrap();
        assert!(l.scale_clamped);
        assert_eq!(l.scale.sx, 2.0);
    }

    #[test]
    fn labels_match_dual_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let temps: Vec<Pose> = (0..6)
            .map(|_| {
                let v: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
                normalize(&Pose::from_flat(&v).unwrap()).unwrap()
            })
            .collect();
        let lib = crate::templates::TemplateLibrary::from_templates(temps.clone()).unwrap();
        let img = Arc::new(SceneImage::filled(64, 48, [0.1; 3]));
        for _ in 0..20 {
            let v: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(5.0..40.0)).collect();
            let gt = Pose::from_flat(&v).unwrap();
            let s = SceneSample::new("r", img.clone(), [32.0, 24.0], gt.clone()).unwrap();
            let l = make_labels(&s, &lib).unwrap();
            let xs: Vec<f64> = v.iter().step_by(2).copied().collect();
            let ys: Vec<f64> = v.iter().skip(1).step_by(2).copied().collect();
            let span = |a: &[f64]| {
                a.iter().cloned().fold(f64::MIN, f64::max) - a.iter().cloned().fold(f64::MAX, f64::min)
            };
            assert!((l.scale.sx - span(&xs) / 48.0).abs() < 1e-12);
            assert!((l.scale.sy - span(&ys) / 48.0).abs() < 1e-12);
            let n = normalize(&gt.map(|[x, y]| [x, -y]).unwrap()).unwrap();
            let best = (0..temps.len())
                .min_by(|&a, &b| {
                    n.squared_distance(&temps[a])
                        .partial_cmp(&n.squared_distance(&temps[b]))
                        .unwrap()
                })
                .unwrap();
            assert_eq!(l.class_index, best);
            // translation leaves the class unchanged
            let moved = gt.map(|[x, y]| [x + 3.0, y - 2.0]).unwrap();
            let s2 = SceneSample::new("r", img.clone(), [32.0, 24.0], moved).unwrap();
            assert_eq!(make_labels(&s2, &lib).unwrap().class_index, l.class_index);
        }
    }

    #[test]
    fn crop_frame_anchors_and_round_trip() {
        let target = [50.0, 30.0];
        let h = 40.0;
        let t = pose_to_crop_frame(&Pose::constant(50.0, 30.0), target, h).unwrap();
        assert_eq!(t.keypoint(0), [0.0, 0.0]);
        let left = pose_to_crop_frame(&Pose::constant(30.0, 30.0), target, h).unwrap();
        assert_eq!(left.keypoint(0), [-0.5, 0.0]);
        // upper boundary of the crop is +0.5 (y up)
        let top = pose_to_crop_frame(&Pose::constant(50.0, 10.0), target, h).unwrap();
        assert_eq!(top.keypoint(0), [0.0, 0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let v: Vec<f64> = (0..POSE_DIM).map(|_| rng.random_range(-100.0..100.0)).collect();
            let p = Pose::from_flat(&v).unwrap();
            let back = crop_frame_to_pixels(&pose_to_crop_frame(&p, target, h).unwrap(), target, h).unwrap();
            assert!(back.max_abs_diff(&p) < 1e-9);
        }
    }

    #[test]
    fn invalid_samples_rejected() {
        let img = Arc::new(SceneImage::filled(6, 20, [0.0; 3]));
        assert!(SceneSample::new("x", img, [1.0, 1.0], Pose::constant(0.0, 0.0)).is_err());
        let img = Arc::new(SceneImage::filled(20, 20, [0.0; 3]));
        assert!(SceneSample::new("x", img, [25.0, 1.0], Pose::constant(0.0, 0.0)).is_err());
    }
}
