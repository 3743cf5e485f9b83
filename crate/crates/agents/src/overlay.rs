use std::path::{Path, PathBuf};

use crafter_core::Observation;
use image::{imageops, Rgb, RgbImage};

use crate::attention::AttentionMap;
use crate::error::Result;

const HEAT: [u8; 3] = [255, 40, 0];

/// Frame with attention blended in: intensity is scaled to the frame's
/// maximum and mixed toward a warm tint.
pub fn overlay(obs: &Observation, map: &AttentionMap) -> RgbImage {
    let frame = obs.to_image();
    let side = map.geometry.image as u32;
    let intensity = map.pixel_intensity();
    let max = intensity.iter().cloned().fold(0.0, f64::max);
    let mut out = RgbImage::new(frame.width(), frame.height());
    for (x, y, px) in frame.enumerate_pixels() {
        let a = if max > 0.0 && x < side && y < side {
            0.75 * intensity[(y * side + x) as usize] / max
        } else {
            0.0
        };
        let dim = 0.35 + 0.65 * a;
        let mix = |c: u8, h: u8| ((c as f64 * dim) * (1.0 - a) + h as f64 * a).round().clamp(0.0, 255.0) as u8;
        out.put_pixel(x, y, Rgb([mix(px[0], HEAT[0]), mix(px[1], HEAT[1]), mix(px[2], HEAT[2])]));
    }
    out
}

/// Two-row strip: inputs on top, overlays below, one column per step.
pub fn montage(frames: &[RgbImage], overlays: &[RgbImage], scale: u32, gap: u32) -> RgbImage {
    let cols = frames.len().max(overlays.len()) as u32;
    let (w, h) = frames
        .first()
        .or(overlays.first())
        .map(|f| (f.width() * scale, f.height() * scale))
        .unwrap_or((0, 0));
    let width = if cols == 0 { 0 } else { cols * w + (cols - 1) * gap };
    let mut out = RgbImage::from_pixel(width, 2 * h + gap, Rgb([255, 255, 255]));
    for (row, images) in [frames, overlays].into_iter().enumerate() {
        for (i, img) in images.iter().enumerate() {
            let big = imageops::resize(img, w, h, imageops::FilterType::Nearest);
            imageops::replace(&mut out, &big, (i as u32 * (w + gap)) as i64, (row as u32 * (h + gap)) as i64);
        }
    }
    out
}

/// Writes `step_XXX_input.png`, `step_XXX_attention.png` and `montage.png`
/// into `dir`. Returns the montage path.
pub fn export(dir: &Path, observations: &[Observation], maps: &[AttentionMap], scale: u32) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut frames = Vec::new();
    let mut overlays = Vec::new();
    for (i, (obs, map)) in observations.iter().zip(maps).enumerate() {
        let frame = obs.to_image();
        let over = overlay(obs, map);
        frame.save(dir.join(format!("step_{i:03}_input.png")))?;
        over.save(dir.join(format!("step_{i:03}_attention.png")))?;
        frames.push(frame);
        overlays.push(over);
    }
    let path = dir.join("montage.png");
    montage(&frames, &overlays, scale, 2).save(&path)?;
    Ok(path)
}
