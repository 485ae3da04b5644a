//! Procedural scene/pose generator standing in for a real affordance dataset.
//!
//! Every scene is a flat-color composition: wall, floor band, a few distractor patches and a
//! zone under the target point. The zone's kind fixes which pose families fit there, its
//! brightness encodes a continuous pose variant, and the target's height in the image sets the
//! pose size through a simple perspective rule. Ambiguous zones are striped with the color of
//! a second kind and admit both families.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{normalize, Pose, Scale, NUM_KEYPOINTS, POSE_DIM};
use crate::scene::{SceneImage, SceneSample};

/// A pose family with its canonical shape and the zone color that affords it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Family {
    pub name: String,
    /// Canonical pose, y up, arbitrary units.
    pub canonical: Pose,
    /// Per-coordinate deformation scaled by the sample variant.
    pub variant_direction: Vec<f64>,
    /// Pose height as a fraction of image height at unit depth.
    pub base_height: f64,
    pub zone_color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub width: usize,
    pub height: usize,
    pub families: Vec<Family>,
    /// Gaussian keypoint jitter in normalized pose units.
    pub keypoint_jitter: f64,
    /// Relative uniform jitter applied to the pose scale.
    pub scale_jitter: f64,
    /// Amplitude of the scene-driven pose variant in normalized units.
    pub variant_amplitude: f64,
    /// Fraction of scenes whose target zone admits two families.
    pub ambiguity_rate: f64,
    pub distractors: usize,
    pub pixel_noise: f32,
    pub seed: u64,
}

fn pose_from(points: [[f64; 2]; NUM_KEYPOINTS]) -> Pose {
    Pose::new(points).expect("canonical poses are finite")
}

/// The four default families: stand, sit, reach, walk.
pub fn default_families() -> Vec<Family> {
    // order: r_ankle r_knee l_hip r_hip l_knee l_ankle pelvis thorax neck head_top
    //        r_wrist r_shoulder r_elbow l_shoulder l_elbow l_wrist
    let stand = pose_from([
        [-0.12, 0.0],
        [-0.11, 0.25],
        [0.10, 0.5],
        [-0.10, 0.5],
        [0.11, 0.25],
        [0.12, 0.0],
        [0.0, 0.5],
        [0.0, 0.8],
        [0.0, 0.85],
        [0.0, 1.0],
        [-0.22, 0.45],
        [-0.15, 0.8],
        [-0.20, 0.62],
        [0.15, 0.8],
        [0.20, 0.62],
        [0.22, 0.45],
    ]);
    let sit = pose_from([
        [0.42, 0.0],
        [0.40, 0.30],
        [-0.02, 0.34],
        [0.02, 0.34],
        [0.36, 0.30],
        [0.38, 0.0],
        [0.0, 0.34],
        [-0.02, 0.66],
        [-0.01, 0.71],
        [0.02, 0.88],
        [0.30, 0.42],
        [0.0, 0.66],
        [0.12, 0.50],
        [-0.04, 0.66],
        [0.08, 0.50],
        [0.26, 0.42],
    ]);
    let reach = pose_from([
        [-0.12, 0.0],
        [-0.11, 0.25],
        [0.10, 0.5],
        [-0.10, 0.5],
        [0.11, 0.25],
        [0.12, 0.0],
        [0.0, 0.5],
        [0.0, 0.8],
        [0.0, 0.85],
        [0.0, 1.0],
        [-0.24, 1.22],
        [-0.15, 0.8],
        [-0.21, 1.02],
        [0.15, 0.8],
        [0.21, 1.02],
        [0.24, 1.22],
    ]);
    let walk = pose_from([
        [0.30, 0.0],
        [0.17, 0.26],
        [-0.02, 0.5],
        [0.02, 0.5],
        [-0.08, 0.26],
        [-0.28, 0.02],
        [0.0, 0.5],
        [0.03, 0.8],
        [0.04, 0.85],
        [0.06, 1.0],
        [-0.14, 0.48],
        [0.04, 0.8],
        [-0.08, 0.64],
        [0.02, 0.8],
        [0.13, 0.65],
        [0.22, 0.52],
    ]);

    // variant directions: stand leans its arms out, sit reclines, reach spreads, walk strides
    let mut stand_dir = vec![0.0; POSE_DIM];
    for (k, dx) in [(10, -1.0), (12, -0.6), (14, 0.6), (15, 1.0)] {
        stand_dir[2 * k] = dx;
        stand_dir[2 * k + 1] = 0.8;
    }
    let mut sit_dir = vec![0.0; POSE_DIM];
    for k in [7, 8, 9, 11, 13] {
        sit_dir[2 * k] = -1.0;
    }
    sit_dir[2 * 9 + 1] = -0.5;
    let mut reach_dir = vec![0.0; POSE_DIM];
    for (k, dx) in [(10, -1.0), (12, -0.5), (14, 0.5), (15, 1.0)] {
        reach_dir[2 * k] = dx;
        reach_dir[2 * k + 1] = -0.6;
    }
    let mut walk_dir = vec![0.0; POSE_DIM];
    for (k, dx) in [(0, 1.0), (1, 0.5), (4, -0.5), (5, -1.0), (10, -0.6), (15, 0.6)] {
        walk_dir[2 * k] = dx;
    }

    vec![
        Family {
            name: "stand".into(),
            canonical: stand,
            variant_direction: stand_dir,
            base_height: 0.62,
            zone_color: [0.62, 0.45, 0.22],
        },
        Family {
            name: "sit".into(),
            canonical: sit,
            variant_direction: sit_dir,
            base_height: 0.44,
            zone_color: [0.80, 0.16, 0.18],
        },
        Family {
            name: "reach".into(),
            canonical: reach,
            variant_direction: reach_dir,
            base_height: 0.74,
            zone_color: [0.18, 0.30, 0.85],
        },
        Family {
            name: "walk".into(),
            canonical: walk,
            variant_direction: walk_dir,
            base_height: 0.60,
            zone_color: [0.12, 0.62, 0.30],
        },
    ]
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            width: 128,
            height: 96,
            families: default_families(),
            keypoint_jitter: 0.02,
            scale_jitter: 0.05,
            variant_amplitude: 0.06,
            ambiguity_rate: 0.0,
            distractors: 2,
            pixel_noise: 0.02,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.families.len() < 2 {
            return Err(Error::Config("a world needs at least two pose families".into()));
        }
        if self.width < 16 || self.height < 16 {
            return Err(Error::Config("world images must be at least 16x16".into()));
        }
        if !(0.0..=1.0).contains(&self.ambiguity_rate) {
            return Err(Error::Config("ambiguity rate must lie in [0, 1]".into()));
        }
        for f in &self.families {
            f.canonical.validate()?;
            if f.variant_direction.len() != POSE_DIM {
                return Err(Error::Config(format!(
                    "family {} variant direction needs {POSE_DIM} values",
                    f.name
                )));
            }
        }
        Ok(())
    }

    pub fn family_names(&self) -> Vec<String> {
        self.families.iter().map(|f| f.name.clone()).collect()
    }
}

/// Diagnostic truth for one generated sample; never used for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleTruth {
    pub id: String,
    pub family: usize,
    pub admissible: Vec<usize>,
    pub variant: f64,
    pub scale: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub sample: SceneSample,
    pub truth: SampleTruth,
}

/// Seed for sample `index`, mixed so neighboring indices get unrelated streams.
fn sample_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xBF58_476D_1CE4_E5B9))
        .wrapping_add(0x94D0_49BB_1331_11EB);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl Rect {
    fn overlaps(&self, o: &Rect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }
}

fn fill_rect(img: &mut SceneImage, r: Rect, mut color: impl FnMut(usize, usize) -> [f32; 3]) {
    let (w, h) = (img.width(), img.height());
    let c0 = r.x0.max(0.0).floor() as usize;
    let c1 = (r.x1.min(w as f64).ceil() as usize).min(w);
    let r0 = r.y0.max(0.0).floor() as usize;
    let r1 = (r.y1.min(h as f64).ceil() as usize).min(h);
    for row in r0..r1 {
        for col in c0..c1 {
            img.set_pixel(row, col, color(row, col));
        }
    }
}

fn shade(c: [f32; 3], f: f32) -> [f32; 3] {
    [
        (c[0] * f).clamp(0.0, 1.0),
        (c[1] * f).clamp(0.0, 1.0),
        (c[2] * f).clamp(0.0, 1.0),
    ]
}

/// Generate sample `index` of the world. Pure in `(config, index)`.
pub fn generate_sample(config: &WorldConfig, index: usize) -> Result<SyntheticSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed(config.seed, index as u64));
    let nf = config.families.len();
    let (w, h) = (config.width as f64, config.height as f64);

    let primary = rng.random_range(0..nf);
    let ambiguous = rng.random::<f64>() < config.ambiguity_rate;
    let admissible = if ambiguous {
        let mut other = rng.random_range(0..nf - 1);
        if other >= primary {
            other += 1;
        }
        let mut a = vec![primary, other];
        a.sort_unstable();
        a
    } else {
        vec![primary]
    };
    let family_idx = admissible[rng.random_range(0..admissible.len())];
    let family = &config.families[family_idx];
    let variant = rng.random_range(-1.0..1.0);

    let target = [
        rng.random_range(0.25 * w..0.75 * w),
        rng.random_range(0.38 * h..0.72 * h),
    ];

    // shape: canonical + variant + jitter, normalized
    let canon = normalize(&family.canonical)?.to_flat();
    let jitter = Normal::new(0.0, config.keypoint_jitter.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut shape = [0.0; POSE_DIM];
    for i in 0..POSE_DIM {
        let noise = if config.keypoint_jitter > 0.0 {
            jitter.sample(&mut rng)
        } else {
            0.0
        };
        shape[i] = canon[i] + config.variant_amplitude * variant * family.variant_direction[i] + noise;
    }
    let shape = normalize(&Pose::from_flat(&shape)?)?;

    // size: perspective from target height, aspect from the canonical shape
    let depth = 0.55 + 0.9 * (target[1] / h - 0.38);
    let jit = 1.0 + config.scale_jitter * rng.random_range(-1.0..1.0);
    let extent = |f: &Family| -> Result<(f64, f64)> {
        let cb = crate::pose::enclosing_box(&f.canonical)?;
        let sy = (f.base_height * depth * jit).clamp(0.05, Scale::MAX);
        let sx = (sy * cb.width() / cb.height() * (1.0 + 0.3 * config.variant_amplitude * variant)).clamp(0.02, Scale::MAX);
        Ok((sx, sy))
    };
    let (sx, sy) = extent(family)?;
    // the zone belongs to the scene, so an ambiguous zone must not reveal which family was drawn
    let (zx, zy) = extent(&config.families[primary])?;
    let crop_pose = shape.map(|[x, y]| [x * sx, y * sy])?;
    let gt_pose = crop_pose.map(|[x, y]| [target[0] + x * h, target[1] - y * h])?;

    // scene
    let wall = [
        rng.random_range(0.70..0.85),
        rng.random_range(0.70..0.85),
        rng.random_range(0.65..0.80),
    ];
    let floor_top = rng.random_range(0.78 * h..0.86 * h);
    let mut img = SceneImage::filled(config.width, config.height, wall);
    fill_rect(
        &mut img,
        Rect { x0: 0.0, y0: floor_top, x1: w, y1: h },
        |_, _| [0.42, 0.40, 0.38],
    );

    let zw = (zx * h * rng.random_range(0.9..1.3)).max(10.0);
    let zh = (zy * h * rng.random_range(0.9..1.2)).max(10.0);
    let zone = Rect {
        x0: target[0] - zw / 2.0,
        y0: target[1] - zh / 2.0,
        x1: target[0] + zw / 2.0,
        y1: target[1] + zh / 2.0,
    };

    for _ in 0..config.distractors {
        let kind = rng.random_range(0..nf);
        let dw = rng.random_range(0.12 * w..0.25 * w);
        let dh = rng.random_range(0.15 * h..0.35 * h);
        let mut placed = None;
        for _ in 0..20 {
            let x0 = rng.random_range(0.0..(w - dw));
            let y0 = rng.random_range(0.0..(h - dh));
            let r = Rect { x0, y0, x1: x0 + dw, y1: y0 + dh };
            // keep distractors clear of the zone and its surroundings
            let halo = Rect {
                x0: zone.x0 - 6.0,
                y0: zone.y0 - 6.0,
                x1: zone.x1 + 6.0,
                y1: zone.y1 + 6.0,
            };
            if !r.overlaps(&halo) {
                placed = Some(r);
                break;
            }
        }
        if let Some(r) = placed {
            let c = shade(config.families[kind].zone_color, rng.random_range(0.75..1.25));
            fill_rect(&mut img, r, |_, _| c);
        }
    }

    let brightness = 1.0 + 0.3 * variant as f32;
    let base = shade(config.families[primary].zone_color, brightness);
    let stripe = admissible
        .iter()
        .find(|&&a| a != primary)
        .map(|&a| shade(config.families[a].zone_color, brightness));
    fill_rect(&mut img, zone, |row, _| match stripe {
        Some(s) if (row / 3) % 2 == 1 => s,
        _ => base,
    });

    if config.pixel_noise > 0.0 {
        let noise = Normal::new(0.0f32, config.pixel_noise).map_err(|e| Error::Config(e.to_string()))?;
        let (iw, ih) = (img.width(), img.height());
        for row in 0..ih {
            for col in 0..iw {
                let p = img.pixel(row, col);
                let q = [
                    (p[0] + noise.sample(&mut rng)).clamp(0.0, 1.0),
                    (p[1] + noise.sample(&mut rng)).clamp(0.0, 1.0),
                    (p[2] + noise.sample(&mut rng)).clamp(0.0, 1.0),
                ];
                img.set_pixel(row, col, q);
            }
        }
    }

    let id = format!("s{index:06}");
    let sample = SceneSample::new(id.clone(), Arc::new(img), target, gt_pose)?;
    Ok(SyntheticSample {
        sample,
        truth: SampleTruth {
            id,
            family: family_idx,
            admissible,
            variant,
            scale: [sx, sy],
        },
    })
}

/// Generate samples `0..n`.
pub fn generate_dataset(config: &WorldConfig, n: usize) -> Result<Vec<SyntheticSample>> {
    generate_range(config, 0, n)
}

/// Generate samples `start..start+n`; disjoint ranges give disjoint splits of one world.
pub fn generate_range(config: &WorldConfig, start: usize, n: usize) -> Result<Vec<SyntheticSample>> {
    (start..start + n).map(|i| generate_sample(config, i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::templates::{build_library, nearest_template, Selection};

    #[test]
    fn generation_is_deterministic() {
        let cfg = WorldConfig {
            ambiguity_rate: 0.3,
            ..Default::default()
        };
        let a = generate_dataset(&cfg, 12).unwrap();
        let b = generate_dataset(&cfg, 12).unwrap();
        for (x, y) in a.iter().zip(b.iter()) {
            assert_eq!(x.sample.image.data(), y.sample.image.data());
            assert_eq!(x.sample.gt_pose, y.sample.gt_pose);
            assert_eq!(x.truth, y.truth);
        }
        let other = generate_dataset(&WorldConfig { seed: 1, ..cfg }, 1).unwrap();
        assert_ne!(other[0].sample.gt_pose, a[0].sample.gt_pose);
    }

    #[test]
    fn noiseless_world_is_separable_by_templates() {
        let cfg = WorldConfig {
            keypoint_jitter: 0.0,
            ..Default::default()
        };
        let data = generate_dataset(&cfg, 200).unwrap();
        let poses: Vec<Pose> = data
            .iter()
            .map(|s| s.sample.to_crop_frame(&s.sample.gt_pose).unwrap())
            .collect();
        let lib = build_library(&poses, 4, 4, &Selection::MaxMin, 0, 100).unwrap();
        let mut map = [usize::MAX; 4];
        for (s, p) in data.iter().zip(&poses) {
            let t = nearest_template(p, &lib).unwrap();
            if map[s.truth.family] == usize::MAX {
                map[s.truth.family] = t;
            }
            assert_eq!(map[s.truth.family], t, "family {} split", s.truth.family);
        }
        let mut seen = map.to_vec();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn poses_stay_centered_and_in_range() {
        let data = generate_dataset(&WorldConfig::default(), 50).unwrap();
        for s in &data {
            let c = s.sample.to_crop_frame(&s.sample.gt_pose).unwrap();
            let b = crate::pose::enclosing_box(&c).unwrap();
            let [cx, cy] = b.center();
            assert!(cx.abs() < 1e-9 && cy.abs() < 1e-9);
            assert!(c.max_abs_coord() <= 1.0);
        }
    }

    #[test]
    fn rejects_single_family_world() {
        let mut cfg = WorldConfig::default();
        cfg.families.truncate(1);
        assert!(generate_sample(&cfg, 0).is_err());
    }
}
