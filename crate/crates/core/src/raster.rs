//! Raster containers shared by every pipeline stage.

use std::path::Path;

use image::{ImageBuffer, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("invalid dimensions {width}x{height}")]
    InvalidDimensions { width: u32, height: u32 },
    #[error("buffer length {actual} does not match {width}x{height} (expected {expected})")]
    BufferLength {
        width: u32,
        height: u32,
        expected: usize,
        actual: usize,
    },
    #[error("region {x},{y} {w}x{h} lies outside {width}x{height}")]
    OutOfBounds {
        x: u32,
        y: u32,
        w: u32,
        h: u32,
        width: u32,
        height: u32,
    },
    #[error("image i/o: {0}")]
    Image(#[from] image::ImageError),
}

/// 8-bit RGB raster, row-major, three samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RasterError> {
        if width == 0 || height == 0 {
            return Err(RasterError::InvalidDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(RasterError::BufferLength {
                width,
                height,
                expected,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Uniformly colored image.
    ///
    /// # Panics
    /// If either dimension is zero.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        assert!(width > 0 && height > 0, "zero-sized raster");
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    /// Copies out the `w`×`h` window at `(x, y)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<RasterImage, RasterError> {
        let fits = w > 0
            && h > 0
            && x.checked_add(w).is_some_and(|r| r <= self.width)
            && y.checked_add(h).is_some_and(|b| b <= self.height);
        if !fits {
            return Err(RasterError::OutOfBounds {
                x,
                y,
                w,
                h,
                width: self.width,
                height: self.height,
            });
        }
        let row_len = w as usize * 3;
        let mut pixels = Vec::with_capacity(row_len * h as usize);
        for row in y..y + h {
            let o = self.offset(x, row);
            pixels.extend_from_slice(&self.pixels[o..o + row_len]);
        }
        Ok(RasterImage {
            width: w,
            height: h,
            pixels,
        })
    }

    /// Pastes `src` with its top-left corner at `(x, y)`, clipping at the border.
    pub fn blit(&mut self, src: &RasterImage, x: u32, y: u32) {
        if x >= self.width || y >= self.height {
            return;
        }
        let w = src.width.min(self.width - x) as usize;
        let h = src.height.min(self.height - y);
        for row in 0..h {
            let dst = self.offset(x, y + row);
            let s = src.offset(0, row);
            self.pixels[dst..dst + w * 3].copy_from_slice(&src.pixels[s..s + w * 3]);
        }
    }

    /// Box-filter reduction by an integer `factor`. Output dimensions round
    /// up; partial blocks at the right and bottom edges average only the
    /// pixels they contain.
    pub fn downsample(&self, factor: u32) -> RasterImage {
        assert!(factor >= 1, "downsample factor must be >= 1");
        if factor == 1 {
            return self.clone();
        }
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        let mut pixels = Vec::with_capacity(w as usize * h as usize * 3);
        for by in 0..h {
            let y0 = by * factor;
            let y1 = (y0 + factor).min(self.height);
            for bx in 0..w {
                let x0 = bx * factor;
                let x1 = (x0 + factor).min(self.width);
                let mut sum = [0u64; 3];
                for y in y0..y1 {
                    let o = self.offset(x0, y);
                    for px in self.pixels[o..o + (x1 - x0) as usize * 3].chunks_exact(3) {
                        sum[0] += px[0] as u64;
                        sum[1] += px[1] as u64;
                        sum[2] += px[2] as u64;
                    }
                }
                let n = ((x1 - x0) * (y1 - y0)) as u64;
                // round half up
                pixels.extend(sum.iter().map(|&s| ((2 * s + n) / (2 * n)) as u8));
            }
        }
        RasterImage {
            width: w,
            height: h,
            pixels,
        }
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        ImageBuffer::from_raw(self.width, self.height, self.pixels.clone())
            .expect("buffer length checked at construction")
    }

    pub fn from_rgb_image(img: RgbImage) -> Result<Self, RasterError> {
        let (w, h) = img.dimensions();
        Self::new(w, h, img.into_raw())
    }

    /// Decodes PNG, JPEG or TIFF, dropping any alpha channel.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RasterError> {
        let img = image::open(path)?.into_rgb8();
        Self::from_rgb_image(img)
    }

    /// Encodes by file extension.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RasterError> {
        self.to_rgb_image().save(path)?;
        Ok(())
    }

    /// Encodes to PNG in memory.
    pub fn encode_png(&self) -> Result<Vec<u8>, RasterError> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb_image()
            .write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, RasterError> {
        let img = image::load_from_memory(bytes)?.into_rgb8();
        Self::from_rgb_image(img)
    }
}

/// Row-major boolean raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![false; width as usize * height as usize],
        }
    }

    pub fn from_bits(width: u32, height: u32, bits: Vec<bool>) -> Result<Self, RasterError> {
        let expected = width as usize * height as usize;
        if bits.len() != expected {
            return Err(RasterError::BufferLength {
                width,
                height,
                expected,
                actual: bits.len(),
            });
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        let w = self.width as usize;
        self.bits[y as usize * w + x as usize] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn fraction(&self) -> f64 {
        if self.bits.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.bits.len() as f64
    }
}
