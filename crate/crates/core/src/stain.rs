//! Color deconvolution into hematoxylin / eosin / DAB concentrations.
//!
//! Intensities are mapped to optical density with a Beer–Lambert step,
//! `od = -log10((v + 1) / 256)`, which is exactly invertible on the 8-bit
//! grid. A stain matrix `M` holds one unit stain vector per row and relates
//! concentrations `c` to optical density as the row vector product
//! `od = c · M`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::interval::Interval;
use crate::raster::RasterImage;

/// Additive offset applied to intensities before taking the logarithm.
pub const OD_EPSILON: f64 = 1.0;
/// Intensity divisor; `(255 + OD_EPSILON) / OD_SCALE == 1`.
pub const OD_SCALE: f64 = 256.0;

/// Largest optical density produced by [`rgb_to_od`] (a black sample).
pub fn od_max() -> f64 {
    (OD_SCALE / OD_EPSILON).log10()
}

#[derive(Debug, Error, PartialEq)]
pub enum StainError {
    #[error("stain matrix is singular (determinant {det:e})")]
    SingularMatrix { det: f64 },
    #[error("stain vector {row} must be finite, non-negative and non-zero")]
    InvalidStainVector { row: usize },
    #[error("invalid augmentation interval for channel {channel}: {interval}")]
    InvalidInterval { channel: usize, interval: Interval },
    #[error("multiplicative interval for channel {channel} contains zero: {interval}")]
    AlphaContainsZero { channel: usize, interval: Interval },
    #[error("{len} values cannot fill a {width}x{height} raster")]
    BufferLength { width: u32, height: u32, len: usize },
}

/// Three-channel real raster; the same layout is used for optical densities
/// and for stain concentrations (ordered H, E, D).
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelImage {
    width: u32,
    height: u32,
    values: Vec<[f64; 3]>,
}

/// Per-pixel optical densities; every value is finite and `>= 0`.
pub type OdImage = ChannelImage;
/// Per-pixel stain concentrations in H, E, D order.
pub type StainImage = ChannelImage;

impl ChannelImage {
    pub fn from_values(width: u32, height: u32, values: Vec<[f64; 3]>) -> Result<Self, StainError> {
        if values.len() != width as usize * height as usize || width == 0 || height == 0 {
            return Err(StainError::BufferLength {
                width,
                height,
                len: values.len(),
            });
        }
        Ok(Self {
            width,
            height,
            values,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn values(&self) -> &[[f64; 3]] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.values
    }

    pub fn get(&self, x: u32, y: u32) -> [f64; 3] {
        self.values[y as usize * self.width as usize + x as usize]
    }

    /// Mean of one channel over all pixels.
    pub fn channel_mean(&self, channel: usize) -> f64 {
        self.values.iter().map(|v| v[channel]).sum::<f64>() / self.values.len() as f64
    }
}

/// Stain basis: one unit-norm absorbance vector per row (H, E, D).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainMatrix {
    rows: [[f64; 3]; 3],
}

impl StainMatrix {
    /// Normalizes each row to unit Euclidean norm.
    pub fn from_rows(rows: [[f64; 3]; 3]) -> Result<Self, StainError> {
        let mut out = rows;
        for (i, row) in out.iter_mut().enumerate() {
            let valid = row.iter().all(|v| v.is_finite() && *v >= 0.0);
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !valid || norm == 0.0 {
                return Err(StainError::InvalidStainVector { row: i });
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Self { rows: out })
    }

    pub fn rows(&self) -> &[[f64; 3]; 3] {
        &self.rows
    }

    pub fn determinant(&self) -> f64 {
        let m = &self.rows;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse via the adjugate; rejects near-singular bases.
    pub fn inverse(&self) -> Result<[[f64; 3]; 3], StainError> {
        let det = self.determinant();
        // Rows are unit vectors, so |det| is at most 1 and a tiny value
        // means the stain vectors are (nearly) coplanar.
        if !det.is_finite() || det.abs() < 1e-10 {
            return Err(StainError::SingularMatrix { det });
        }
        let m = &self.rows;
        let mut inv = [[0.0; 3]; 3];
        for (i, row) in inv.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                // cofactor of m[j][i]
                let (r0, r1) = others(j);
                let (c0, c1) = others(i);
                let minor = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                *v = sign * minor / det;
            }
        }
        Ok(inv)
    }

    pub fn is_invertible(&self) -> bool {
        self.inverse().is_ok()
    }
}

fn others(k: usize) -> (usize, usize) {
    match k {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

impl Default for StainMatrix {
    fn default() -> Self {
        default_he_matrix()
    }
}

/// Ruifrok–Johnston hematoxylin / eosin / DAB basis.
pub fn default_he_matrix() -> StainMatrix {
    StainMatrix::from_rows([
        [0.650, 0.704, 0.286],
        [0.072, 0.990, 0.105],
        [0.268, 0.570, 0.776],
    ])
    .expect("constant basis is valid")
}

#[inline]
pub fn intensity_to_od(v: u8) -> f64 {
    -((v as f64 + OD_EPSILON) / OD_SCALE).log10()
}

#[inline]
pub fn od_to_intensity(od: f64) -> u8 {
    let v = (OD_SCALE * 10f64.powf(-od) - OD_EPSILON).round();
    if v.is_nan() {
        return 0;
    }
    v.clamp(0.0, 255.0) as u8
}

pub fn rgb_to_od(img: &RasterImage) -> OdImage {
    // 256-entry lookup keeps this exact and cheap.
    let lut: Vec<f64> = (0..=255u8).map(intensity_to_od).collect();
    let values = img
        .pixels()
        .chunks_exact(3)
        .map(|p| [lut[p[0] as usize], lut[p[1] as usize], lut[p[2] as usize]])
        .collect();
    ChannelImage {
        width: img.width(),
        height: img.height(),
        values,
    }
}

/// Concentrations for a single optical-density vector: `c = od · M⁻¹`.
#[inline]
pub fn deconvolve_od(od: [f64; 3], inv: &[[f64; 3]; 3]) -> [f64; 3] {
    let mut c = [0.0; 3];
    for (j, cj) in c.iter_mut().enumerate() {
        *cj = od[0] * inv[0][j] + od[1] * inv[1][j] + od[2] * inv[2][j];
    }
    c
}

/// Optical density for a concentration vector: `od = c · M`.
#[inline]
pub fn reconvolve(c: [f64; 3], m: &StainMatrix) -> [f64; 3] {
    let r = m.rows();
    let mut od = [0.0; 3];
    for (j, o) in od.iter_mut().enumerate() {
        *o = c[0] * r[0][j] + c[1] * r[1][j] + c[2] * r[2][j];
    }
    od
}

pub fn od_to_hed(od: &OdImage, m: &StainMatrix) -> Result<StainImage, StainError> {
    let inv = m.inverse()?;
    Ok(ChannelImage {
        width: od.width,
        height: od.height,
        values: od.values.iter().map(|&v| deconvolve_od(v, &inv)).collect(),
    })
}

pub fn rgb_to_hed(img: &RasterImage, m: &StainMatrix) -> Result<StainImage, StainError> {
    od_to_hed(&rgb_to_od(img), m)
}

pub fn hed_to_rgb(s: &StainImage, m: &StainMatrix) -> RasterImage {
    let mut pixels = Vec::with_capacity(s.values.len() * 3);
    for &c in &s.values {
        let od = reconvolve(c, m);
        pixels.extend(od.iter().map(|&o| od_to_intensity(o)));
    }
    RasterImage::new(s.width, s.height, pixels).expect("dimensions carried from stain image")
}

/// Ranges for the per-image linear stain transform `c' = alpha * c + beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentParams {
    alpha: [Interval; 3],
    beta: [Interval; 3],
    seed: u64,
    matrix: StainMatrix,
}

impl AugmentParams {
    pub fn new(alpha: [Interval; 3], beta: [Interval; 3], seed: u64) -> Result<Self, StainError> {
        for (channel, iv) in alpha.iter().enumerate() {
            if !iv.is_valid() {
                return Err(StainError::InvalidInterval {
                    channel,
                    interval: *iv,
                });
            }
            if iv.contains_zero() {
                return Err(StainError::AlphaContainsZero {
                    channel,
                    interval: *iv,
                });
            }
        }
        for (channel, iv) in beta.iter().enumerate() {
            if !iv.is_valid() {
                return Err(StainError::InvalidInterval {
                    channel,
                    interval: *iv,
                });
            }
        }
        Ok(Self {
            alpha,
            beta,
            seed,
            matrix: default_he_matrix(),
        })
    }

    /// Same ranges on all three channels.
    pub fn uniform(alpha: Interval, beta: Interval, seed: u64) -> Result<Self, StainError> {
        Self::new([alpha; 3], [beta; 3], seed)
    }

    pub fn with_matrix(mut self, matrix: StainMatrix) -> Self {
        self.matrix = matrix;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn alpha(&self) -> &[Interval; 3] {
        &self.alpha
    }

    pub fn beta(&self) -> &[Interval; 3] {
        &self.beta
    }

    /// Draws `(alpha, beta)` for each channel from the seeded stream.
    pub fn draw_coefficients(&self) -> [(f64, f64); 3] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut draw = |iv: &Interval| {
            // always consume one sample so the stream layout is fixed
            let u: f64 = rng.random();
            iv.lo + (iv.hi - iv.lo) * u
        };
        let mut out = [(0.0, 0.0); 3];
        for (i, o) in out.iter_mut().enumerate() {
            let a = draw(&self.alpha[i]);
            let b = draw(&self.beta[i]);
            *o = (a, b);
        }
        out
    }
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self::uniform(Interval::new(0.95, 1.05), Interval::new(-0.05, 0.05), 0)
            .expect("default ranges are valid")
    }
}

/// Stochastic linear augmentation in HED space; coefficients are drawn once
/// per image.
pub fn hed_linear_augment(img: &RasterImage, p: &AugmentParams) -> RasterImage {
    let coeffs = p.draw_coefficients();
    let mut hed = rgb_to_hed(img, &p.matrix).expect("augment matrix validated as invertible");
    for c in hed.values_mut() {
        for (i, v) in c.iter_mut().enumerate() {
            *v = coeffs[i].0 * *v + coeffs[i].1;
        }
    }
    hed_to_rgb(&hed, &p.matrix)
}
