//! Skeleton overlays in the style of qualitative result panels.

use std::path::Path;

use image::{imageops, Rgb, RgbImage};
use imageproc::drawing::{draw_filled_circle_mut, draw_filled_rect_mut, draw_line_segment_mut};
use imageproc::rect::Rect;

use crate::error::Result;
use crate::pose::{Pose, SKELETON};
use crate::scene::SceneImage;

const PALETTE: [[u8; 3]; 6] = [
    [255, 64, 64],
    [64, 200, 255],
    [255, 220, 40],
    [120, 255, 120],
    [255, 120, 255],
    [255, 160, 60],
];

// 3x5 bitmap digits, rows top to bottom, bit 2 = left column
const DIGITS: [[u8; 5]; 10] = [
    [7, 5, 5, 5, 7],
    [2, 6, 2, 2, 7],
    [7, 1, 7, 4, 7],
    [7, 1, 7, 1, 7],
    [5, 5, 7, 1, 1],
    [7, 4, 7, 1, 7],
    [7, 4, 7, 5, 7],
    [7, 1, 1, 1, 1],
    [7, 5, 7, 5, 7],
    [7, 5, 7, 1, 7],
];
const DOT: [u8; 5] = [0, 0, 0, 0, 2];

fn draw_glyph(img: &mut RgbImage, glyph: &[u8; 5], x: i32, y: i32, px: u32, color: Rgb<u8>) {
    for (r, bits) in glyph.iter().enumerate() {
        for c in 0..3 {
            if bits & (4 >> c) != 0 {
                let rect = Rect::at(x + c * px as i32, y + r as i32 * px as i32).of_size(px, px);
                draw_filled_rect_mut(img, rect, color);
            }
        }
    }
}

/// Draw a score as `d.dd` with a dark backing box.
fn draw_score(img: &mut RgbImage, score: f64, x: i32, y: i32, px: u32, color: Rgb<u8>) {
    let hundredths = (score.clamp(0.0, 9.99) * 100.0).round() as usize;
    let glyphs = [
        &DIGITS[hundredths / 100],
        &DOT,
        &DIGITS[(hundredths / 10) % 10],
        &DIGITS[hundredths % 10],
    ];
    let adv = 4 * px as i32;
    let backing = Rect::at(x - px as i32, y - px as i32).of_size(adv as u32 * 4 + px, 7 * px);
    draw_filled_rect_mut(img, backing, Rgb([0, 0, 0]));
    for (i, g) in glyphs.iter().enumerate() {
        draw_glyph(img, g, x + i as i32 * adv, y, px, color);
    }
}

/// Draw poses (pixel frame of `image`) with their scores, upscaled by `zoom`.
///
/// Pose `i` uses palette color `i`; its score is printed in the top-left corner, one row per pose.
pub fn render_pose_overlay(image: &SceneImage, poses: &[(Pose, f64)], zoom: u32) -> RgbImage {
    let zoom = zoom.max(1);
    let base = image.to_rgb8();
    let mut img = if zoom == 1 {
        base
    } else {
        imageops::resize(
            &base,
            base.width() * zoom,
            base.height() * zoom,
            imageops::FilterType::Nearest,
        )
    };
    let z = zoom as f32;
    for (i, (pose, score)) in poses.iter().enumerate() {
        let color = Rgb(PALETTE[i % PALETTE.len()]);
        let pt = |k: usize| {
            let [x, y] = pose.keypoint(k);
            // pixel-frame coordinates are continuous; pixel (c, r) covers [c, c+1)
            ((x as f32) * z - 0.5, (y as f32) * z - 0.5)
        };
        for &(a, b) in SKELETON.iter() {
            draw_line_segment_mut(&mut img, pt(a), pt(b), color);
        }
        for k in 0..crate::pose::NUM_KEYPOINTS {
            let (x, y) = pt(k);
            draw_filled_circle_mut(&mut img, (x.round() as i32, y.round() as i32), zoom as i32 / 2, color);
        }
        let px = zoom.max(1);
        draw_score(&mut img, *score, 2 * px as i32, 2 * px as i32 + i as i32 * 7 * px as i32, px, color);
    }
    img
}

/// Render an overlay into a new PNG file.
pub fn save_overlay(image: &SceneImage, poses: &[(Pose, f64)], zoom: u32, path: impl AsRef<Path>) -> Result<()> {
    render_pose_overlay(image, poses, zoom).save(path.as_ref())?;
    Ok(())
}
