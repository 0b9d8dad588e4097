use image::{Rgba, RgbaImage};
use tilscope_core::helm::Detection;

pub const STROKE_WIDTH: i64 = 2;

pub const PALETTE: [[u8; 3]; 12] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
    [188, 189, 34],
    [23, 190, 207],
    [255, 215, 0],
    [0, 0, 128],
];

/// 32-bit FNV-1a.
fn fnv1a(s: &str) -> u32 {
    s.bytes()
        .fold(0x811c_9dc5u32, |h, b| (h ^ b as u32).wrapping_mul(0x0100_0193))
}

pub fn class_color(class: &str) -> [u8; 3] {
    PALETTE[fnv1a(class) as usize % PALETTE.len()]
}

fn stamp(img: &mut RgbaImage, x: i64, y: i64, rgba: Rgba<u8>) {
    for dy in 0..STROKE_WIDTH {
        for dx in 0..STROKE_WIDTH {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && px < img.width() as i64 && py < img.height() as i64 {
                img.put_pixel(px as u32, py as u32, rgba);
            }
        }
    }
}

fn line(img: &mut RgbaImage, a: (i64, i64), b: (i64, i64), rgba: Rgba<u8>) {
    let (dx, dy) = ((b.0 - a.0).abs(), -(b.1 - a.1).abs());
    let (sx, sy) = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
    let (mut x, mut y, mut err) = (a.0, a.1, dx + dy);
    loop {
        stamp(img, x, y, rgba);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Transparent `w`×`h` image with each contour stroked in its class colour.
/// Contours are in full-resolution pixels; `origin` is the region's
/// top-left corner and `scale` the full-resolution pixels per overlay pixel.
pub fn contours_to_overlay(detections: &[Detection], origin: [u32; 2], scale: u32, w: u32, h: u32) -> RgbaImage {
    let mut img = RgbaImage::new(w, h);
    let s = scale.max(1) as i64;
    for d in detections {
        let [r, g, b] = class_color(&d.class_label);
        let rgba = Rgba([r, g, b, 255]);
        let local: Vec<(i64, i64)> = d
            .contour
            .iter()
            .map(|p| ((p[0] as i64 - origin[0] as i64).div_euclid(s), (p[1] as i64 - origin[1] as i64).div_euclid(s)))
            .collect();
        if local.len() == 1 {
            stamp(&mut img, local[0].0, local[0].1, rgba);
        }
        for i in 0..local.len() {
            line(&mut img, local[i], local[(i + 1) % local.len()], rgba);
        }
    }
    img
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, image::ImageError> {
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}
