//! Keypoint Gaussian heatmaps in the frame of the target-centered `H x H` crop.

use crate::error::Result;
use crate::pose::{refine, Offsets, Pose, Scale, NUM_KEYPOINTS};
use crate::scene::crop_frame_to_crop_pixels;

/// Pixel `(col, row)` of an `size x size` grid containing a crop-frame point, if inside.
pub fn rasterize(point: [f64; 2], size: usize) -> Option<(usize, usize)> {
    let [u, v] = crop_frame_to_crop_pixels(point, size);
    let s = size as f64;
    if !(0.0..s).contains(&u) || !(0.0..s).contains(&v) {
        return None;
    }
    Some((u.floor() as usize, v.floor() as usize))
}

/// One channel per keypoint, `M x size x size`, Gaussian of width `sigma` pixels peaking at 1
/// on the keypoint's pixel; keypoints outside the crop give all-zero channels.
pub fn keypoint_heatmaps(pose: &Pose, size: usize, sigma: f64) -> Vec<f32> {
    let plane = size * size;
    let mut out = vec![0.0f32; NUM_KEYPOINTS * plane];
    let inv = 1.0 / (2.0 * sigma * sigma);
    // beyond 4 sigma the values are below 4e-4 and dropped
    let reach = (4.0 * sigma).ceil() as i64;
    for (k, &p) in pose.keypoints().iter().enumerate() {
        let Some((cu, cv)) = rasterize(p, size) else {
            continue;
        };
        let ch = &mut out[k * plane..(k + 1) * plane];
        let (cu, cv) = (cu as i64, cv as i64);
        for r in (cv - reach).max(0)..(cv + reach + 1).min(size as i64) {
            for c in (cu - reach).max(0)..(cu + reach + 1).min(size as i64) {
                let d2 = ((r - cv) * (r - cv) + (c - cu) * (c - cu)) as f64;
                ch[r as usize * size + c as usize] = (-d2 * inv).exp() as f32;
            }
        }
    }
    out
}

/// Heatmaps of `template` fitted into the box given by `scale` around the target.
pub fn render_heatmaps(template: &Pose, scale: &Scale, size: usize, sigma: f64) -> Result<Vec<f32>> {
    let placed = refine(template, &Offsets::zero(), scale)?;
    Ok(keypoint_heatmaps(&placed, size, sigma))
}

/// Per-channel argmax of `M x size x size` maps, returned as crop-frame pixel centers.
pub fn decode_argmax(maps: &[f32], size: usize) -> Result<Pose> {
    let plane = size * size;
    let mut pts = [[0.0; 2]; NUM_KEYPOINTS];
    for (k, p) in pts.iter_mut().enumerate() {
        let ch = &maps[k * plane..(k + 1) * plane];
        let mut best = 0;
        for (i, &v) in ch.iter().enumerate() {
            if v > ch[best] {
                best = i;
            }
        }
        let (r, c) = (best / size, best % size);
        let s = size as f64;
        *p = [(c as f64 + 0.5) / s - 0.5, 0.5 - (r as f64 + 0.5) / s];
    }
    Pose::new(pts)
}
