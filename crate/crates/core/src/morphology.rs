//! Binary morphology with arbitrary flat structuring elements.
//!
//! Pixels outside the image never influence the result: erosion treats them
//! as foreground and dilation as background.

use crate::raster::BinaryMask;

/// Flat structuring element centred at `(width / 2, height / 2)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Kernel {
    width: u32,
    height: u32,
    offsets: Vec<(i32, i32)>,
}

impl Kernel {
    /// Elliptical element inscribed in a `diameter`×`diameter` box, built the
    /// same way as OpenCV's `MORPH_ELLIPSE`.
    pub fn ellipse(diameter: u32) -> Self {
        assert!(diameter >= 1, "kernel diameter must be >= 1");
        let r = (diameter / 2) as i32;
        let c = r;
        let mut offsets = Vec::new();
        let inv_r2 = if r > 0 { 1.0 / (r * r) as f64 } else { 0.0 };
        for i in 0..diameter as i32 {
            let dy = i - r;
            let (j1, j2) = if dy.abs() <= r {
                let dx = (c as f64 * (((r * r - dy * dy) as f64) * inv_r2).sqrt()).round() as i32;
                ((c - dx).max(0), (c + dx + 1).min(diameter as i32))
            } else {
                (0, 0)
            };
            for j in j1..j2 {
                offsets.push((j - c, dy));
            }
        }
        Self {
            width: diameter,
            height: diameter,
            offsets,
        }
    }

    pub fn square(side: u32) -> Self {
        assert!(side >= 1, "kernel side must be >= 1");
        let c = (side / 2) as i32;
        let offsets = (0..side as i32)
            .flat_map(|y| (0..side as i32).map(move |x| (x - c, y - c)))
            .collect();
        Self {
            width: side,
            height: side,
            offsets,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn offsets(&self) -> &[(i32, i32)] {
        &self.offsets
    }
}

pub fn erode(mask: &BinaryMask, k: &Kernel) -> BinaryMask {
    apply(mask, k, true)
}

pub fn dilate(mask: &BinaryMask, k: &Kernel) -> BinaryMask {
    apply(mask, k, false)
}

pub fn open(mask: &BinaryMask, k: &Kernel) -> BinaryMask {
    dilate(&erode(mask, k), k)
}

pub fn close(mask: &BinaryMask, k: &Kernel) -> BinaryMask {
    erode(&dilate(mask, k), k)
}

fn apply(mask: &BinaryMask, k: &Kernel, erosion: bool) -> BinaryMask {
    let (w, h) = (mask.width() as i32, mask.height() as i32);
    let src = mask.bits();
    let mut out = vec![false; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut hit = erosion;
            for &(dx, dy) in k.offsets() {
                // dilation uses the reflected element
                let (sx, sy) = if erosion { (x + dx, y + dy) } else { (x - dx, y - dy) };
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let v = src[(sy * w + sx) as usize];
                if erosion && !v {
                    hit = false;
                    break;
                }
                if !erosion && v {
                    hit = true;
                    break;
                }
            }
            out[(y * w + x) as usize] = hit;
        }
    }
    BinaryMask::from_bits(mask.width(), mask.height(), out).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(rows: &[&str]) -> BinaryMask {
        let h = rows.len() as u32;
        let w = rows[0].len() as u32;
        let bits = rows.iter().flat_map(|r| r.chars().map(|c| c == '#')).collect();
        BinaryMask::from_bits(w, h, bits).unwrap()
    }

    #[test]
    fn ellipse_matches_opencv_layout() {
        let k = Kernel::ellipse(5);
        let mut grid = [[false; 5]; 5];
        for &(dx, dy) in k.offsets() {
            grid[(dy + 2) as usize][(dx + 2) as usize] = true;
        }
        let expected = [
            [false, false, true, false, false],
            [true, true, true, true, true],
            [true, true, true, true, true],
            [true, true, true, true, true],
            [false, false, true, false, false],
        ];
        assert_eq!(grid, expected);
        assert_eq!(Kernel::ellipse(1).offsets(), &[(0, 0)]);
        assert_eq!(Kernel::square(3).offsets().len(), 9);
    }

    #[test]
    fn opening_erases_isolated_pixel() {
        let m = mask_from(&[".....", ".....", "..#..", ".....", "....."]);
        assert!(open(&m, &Kernel::square(3)).is_empty());
        assert!(open(&m, &Kernel::ellipse(5)).is_empty());
    }

    #[test]
    fn opening_keeps_blocks_larger_than_kernel() {
        let m = mask_from(&["......", ".####.", ".####.", ".####.", "......"]);
        assert_eq!(open(&m, &Kernel::square(3)), m);
    }

    #[test]
    fn closing_fills_single_pixel_gap() {
        let m = mask_from(&["#####", "##.##", "#####"]);
        assert_eq!(close(&m, &Kernel::square(3)).count(), 15);
    }

    #[test]
    fn opening_is_idempotent_and_anti_extensive() {
        let m = mask_from(&[
            "#..####...",
            "..######..",
            ".#######..",
            "..#####..#",
            "...###...#",
        ]);
        let k = Kernel::ellipse(3);
        let o = open(&m, &k);
        assert_eq!(open(&o, &k), o);
        for (a, b) in o.bits().iter().zip(m.bits()) {
            assert!(!a || *b);
        }
    }
}
