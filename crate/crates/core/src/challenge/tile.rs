use std::io::{self, Write};

use super::{ChallengeError, TileCategory, TileSpec};
use crate::rng::SplitMix64;

pub const TILE_SIZES: [u32; 3] = [32, 64, 128];
pub const DEFAULT_TILE_SIZE: u32 = 64;

const GEOMETRY_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;
const OCCLUSION_STREAM: u64 = 3;
const WARP_STREAM: u64 = 4;

/// 8-bit grayscale image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitmap {
    pub width: u32,
    pub height: u32,
    pub pixels: Vec<u8>,
}

impl Bitmap {
    fn filled(size: u32, value: u8) -> Self {
        Self {
            width: size,
            height: size,
            pixels: vec![value; (size * size) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.pixels[(y * self.width + x) as usize]
    }

    /// Binary PGM (P5, maxval 255).
    pub fn write_pgm<W: Write>(&self, mut out: W) -> io::Result<()> {
        write!(out, "P5\n{} {}\n255\n", self.width, self.height)?;
        out.write_all(&self.pixels)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(self.pixels.len() + 16);
        self.write_pgm(&mut buf)
            .expect("writing to a Vec cannot fail");
        buf
    }
}

/// Seed-dependent layout of the base pattern.
struct Geometry {
    cx: f64,
    cy: f64,
    radius: f64,
    period: f64,
    phase: f64,
    foreground: u8,
    background: u8,
}

impl Geometry {
    fn sample(seed: u64, size: u32) -> Self {
        let mut rng = SplitMix64::stream(seed, GEOMETRY_STREAM);
        let s = size as f64;
        Geometry {
            cx: s * (0.5 + rng.uniform(-0.08, 0.08)),
            cy: s * (0.5 + rng.uniform(-0.08, 0.08)),
            radius: s * rng.uniform(0.24, 0.32),
            period: s / rng.uniform(3.0, 6.0),
            phase: rng.uniform(0.0, 1.0),
            foreground: 16 + rng.below(64) as u8,
            background: 192 + rng.below(56) as u8,
        }
    }
}

fn base_pattern(category: TileCategory, g: &Geometry, size: u32) -> Bitmap {
    let mut bmp = Bitmap::filled(size, g.background);
    let s = size as i64;
    let r = g.radius;
    // Integer box for the square so it is exactly axis-aligned.
    let side = (2.0 * r).round() as i64;
    let x0 = (g.cx - r).round() as i64;
    let y0 = (g.cy - r).round() as i64;
    let arm = (0.35 * r).max(1.0);
    let half_period = (g.period / 2.0).max(2.0);

    for y in 0..s {
        for x in 0..s {
            // Pixel centers.
            let px = x as f64 + 0.5;
            let py = y as f64 + 0.5;
            let dx = px - g.cx;
            let dy = py - g.cy;
            let inside = match category {
                TileCategory::Circle => dx * dx + dy * dy <= r * r,
                TileCategory::Square => x >= x0 && x < x0 + side && y >= y0 && y < y0 + side,
                TileCategory::Triangle => {
                    let depth = py - (g.cy - r);
                    (0.0..=2.0 * r).contains(&depth) && dx.abs() <= depth / 2.0
                }
                TileCategory::Stripes => {
                    ((px / half_period + g.phase * 2.0).floor() as i64).rem_euclid(2) == 0
                }
                TileCategory::Checker => {
                    let cx = (px / g.period + g.phase).floor() as i64;
                    let cy = (py / g.period + g.phase).floor() as i64;
                    (cx + cy).rem_euclid(2) == 0
                }
                TileCategory::Cross => {
                    (dx.abs() <= arm && dy.abs() <= r) || (dy.abs() <= arm && dx.abs() <= r)
                }
            };
            if inside {
                bmp.pixels[(y * s + x) as usize] = g.foreground;
            }
        }
    }
    bmp
}

/// Renders a tile: base pattern, additive Gaussian noise, occlusion mask,
/// then a sinusoidal horizontal warp. Deterministic in `spec`.
pub fn render_tile(spec: &TileSpec, size: u32) -> Result<Bitmap, ChallengeError> {
    if !TILE_SIZES.contains(&size) {
        return Err(ChallengeError::InvalidTileSize(size));
    }
    let geometry = Geometry::sample(spec.seed, size);
    let mut bmp = base_pattern(spec.category, &geometry, size);
    let d = spec.distortion;

    if d.noise_sigma > 0.0 {
        let mut rng = SplitMix64::stream(spec.seed, NOISE_STREAM);
        let sigma = d.noise_sigma * 255.0;
        for p in bmp.pixels.iter_mut() {
            let v = *p as f64 + sigma * rng.normal();
            *p = v.round().clamp(0.0, 255.0) as u8;
        }
    }

    if d.occlusion_fraction > 0.0 {
        let n = bmp.pixels.len();
        let blanked = ((d.occlusion_fraction * n as f64).round() as usize).min(n);
        let mut rng = SplitMix64::stream(spec.seed, OCCLUSION_STREAM);
        let mut order: Vec<u32> = (0..n as u32).collect();
        // Partial Fisher-Yates: the first `blanked` slots are a uniform sample.
        for i in 0..blanked {
            let j = i + rng.index(n - i);
            order.swap(i, j);
            bmp.pixels[order[i] as usize] = geometry.background;
        }
    }

    if d.warp_amplitude > 0.0 {
        let mut rng = SplitMix64::stream(spec.seed, WARP_STREAM);
        let wavelength = size as f64 * rng.uniform(0.4, 0.8);
        let phase = rng.uniform(0.0, std::f64::consts::TAU);
        let w = size as usize;
        let src = bmp.pixels.clone();
        for y in 0..w {
            let shift =
                d.warp_amplitude * (std::f64::consts::TAU * y as f64 / wavelength + phase).sin();
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let sx = (x as f64 - shift).clamp(0.0, (w - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let frac = sx - x0 as f64;
                let v = row[x0] as f64 * (1.0 - frac) + row[x1] as f64 * frac;
                bmp.pixels[y * w + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    Ok(bmp)
}
