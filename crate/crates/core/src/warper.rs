//! Backward lookup tables and image resampling.
//!
//! Rectified images are built backwards: for every output pixel the LUT
//! stores where to sample the source image, and warping is a bilinear lookup.
//! Unmapped output pixels carry a NaN sentinel and come out black.

use crate::camera::Pixel;
use crate::rectmodel::{CamSide, RectificationModel};
use rayon::prelude::*;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WarpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },
    #[error("unsupported channel count {0} (must be 1 or 3)")]
    BadChannels(u8),
    #[error("image file error: {0}")]
    ImageFile(String),
    #[error("lut file error: {0}")]
    LutFile(String),
}

/// 8-bit raster image, 1 or 3 channels, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    pub width: u32,
    pub height: u32,
    pub channels: u8,
    pub data: Vec<u8>,
}

impl RasterImage {
    pub fn new(width: u32, height: u32, channels: u8) -> Result<Self, WarpError> {
        if channels != 1 && channels != 3 {
            return Err(WarpError::BadChannels(channels));
        }
        Ok(Self {
            width,
            height,
            channels,
            data: vec![0; (width as usize) * (height as usize) * channels as usize],
        })
    }

    #[inline]
    pub fn sample(&self, x: u32, y: u32, ch: u8) -> u8 {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels as usize
            + ch as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, ch: u8, value: u8) {
        self.data[(y as usize * self.width as usize + x as usize) * self.channels as usize
            + ch as usize] = value;
    }

    /// Collapse to single channel by integer luma average.
    pub fn to_gray(&self) -> RasterImage {
        if self.channels == 1 {
            return self.clone();
        }
        let mut out = RasterImage::new(self.width, self.height, 1).expect("valid channels");
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            out.data[i] = ((px[0] as u32 + px[1] as u32 + px[2] as u32) / 3) as u8;
        }
        out
    }

    /// Bilinear sample at continuous coordinates; `x`, `y` must lie within
    /// `[0, width-1] x [0, height-1]`.
    pub fn bilinear(&self, x: f64, y: f64, ch: u8) -> f64 {
        let x0 = (x.floor() as u32).min(self.width - 1);
        let y0 = (y.floor() as u32).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let s00 = self.sample(x0, y0, ch) as f64;
        let s10 = self.sample(x1, y0, ch) as f64;
        let s01 = self.sample(x0, y1, ch) as f64;
        let s11 = self.sample(x1, y1, ch) as f64;
        (s00 * (1.0 - fx) + s10 * fx) * (1.0 - fy) + (s01 * (1.0 - fx) + s11 * fx) * fy
    }

    /// Read PNG/PGM/PPM by file extension.
    pub fn load(path: &Path) -> Result<Self, WarpError> {
        match extension(path) {
            Some("pgm") | Some("ppm") => load_pnm(path),
            _ => {
                let img = image::open(path)
                    .map_err(|e| WarpError::ImageFile(format!("{}: {e}", path.display())))?;
                Ok(match img {
                    image::DynamicImage::ImageLuma8(g) => RasterImage {
                        width: g.width(),
                        height: g.height(),
                        channels: 1,
                        data: g.into_raw(),
                    },
                    other => {
                        let rgb = other.to_rgb8();
                        RasterImage {
                            width: rgb.width(),
                            height: rgb.height(),
                            channels: 3,
                            data: rgb.into_raw(),
                        }
                    }
                })
            }
        }
    }

    /// Write PNG/PGM/PPM by file extension.
    pub fn save(&self, path: &Path) -> Result<(), WarpError> {
        match extension(path) {
            Some("pgm") => {
                let gray = self.to_gray();
                save_pnm(path, &gray)
            }
            Some("ppm") => {
                if self.channels == 1 {
                    return Err(WarpError::ImageFile(
                        "ppm requires a 3-channel image".into(),
                    ));
                }
                save_pnm(path, self)
            }
            _ => {
                let color = if self.channels == 1 {
                    image::ColorType::L8
                } else {
                    image::ColorType::Rgb8
                };
                image::save_buffer(path, &self.data, self.width, self.height, color)
                    .map_err(|e| WarpError::ImageFile(format!("{}: {e}", path.display())))
            }
        }
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn save_pnm(path: &Path, img: &RasterImage) -> Result<(), WarpError> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = Vec::with_capacity(img.data.len() + 32);
    out.extend_from_slice(format!("{magic}\n{} {}\n255\n", img.width, img.height).as_bytes());
    out.extend_from_slice(&img.data);
    fs::write(path, out).map_err(|e| WarpError::ImageFile(e.to_string()))
}

fn load_pnm(path: &Path) -> Result<RasterImage, WarpError> {
    let bytes =
        fs::read(path).map_err(|e| WarpError::ImageFile(format!("{}: {e}", path.display())))?;
    let bad = |m: &str| WarpError::ImageFile(format!("{}: {m}", path.display()));
    let mut fields = Vec::new();
    let mut pos = 0usize;
    // magic, width, height, maxval are whitespace-separated tokens with
    // optional # comments; a single whitespace byte then separates the raster.
    while fields.len() < 4 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(
            std::str::from_utf8(&bytes[start..pos])
                .map_err(|_| bad("invalid header"))?
                .to_string(),
        );
    }
    if fields.len() != 4 {
        return Err(bad("truncated header"));
    }
    pos += 1; // single whitespace after maxval
    let channels = match fields[0].as_str() {
        "P5" => 1u8,
        "P6" => 3u8,
        m => return Err(bad(&format!("unsupported magic {m}"))),
    };
    let width: u32 = fields[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = fields[2].parse().map_err(|_| bad("bad height"))?;
    if fields[3] != "255" {
        return Err(bad("only maxval 255 supported"));
    }
    let expected = width as usize * height as usize * channels as usize;
    if bytes.len() < pos + expected {
        return Err(bad("truncated raster"));
    }
    Ok(RasterImage {
        width,
        height,
        channels,
        data: bytes[pos..pos + expected].to_vec(),
    })
}

/// Dense per-output-pixel map to source coordinates; NaN pairs mark unmapped
/// pixels. Stored single precision.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardLut {
    pub width: u32,
    pub height: u32,
    /// Source image dimensions the entries refer to.
    pub src_width: u32,
    pub src_height: u32,
    /// `(u, v)` per output pixel, row-major.
    pub entries: Vec<[f32; 2]>,
}

const LUT_MAGIC: &[u8; 4] = b"RLUT";
const LUT_VERSION: u16 = 1;

impl BackwardLut {
    pub const SENTINEL: [f32; 2] = [f32::NAN, f32::NAN];

    #[inline]
    pub fn entry(&self, x: u32, y: u32) -> Option<(f64, f64)> {
        let e = self.entries[y as usize * self.width as usize + x as usize];
        if e[0].is_nan() {
            None
        } else {
            Some((e[0] as f64, e[1] as f64))
        }
    }

    pub fn mapped_fraction(&self) -> f64 {
        let mapped = self.entries.iter().filter(|e| !e[0].is_nan()).count();
        mapped as f64 / self.entries.len() as f64
    }

    /// Binary format: magic `RLUT`, version u16, width u32, height u32
    /// (little-endian), then width·height `(f32 u, f32 v)` pairs with quiet
    /// NaN sentinels.
    pub fn save(&self, path: &Path) -> Result<(), WarpError> {
        let mut out = Vec::with_capacity(14 + self.entries.len() * 8);
        out.extend_from_slice(LUT_MAGIC);
        out.extend_from_slice(&LUT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        for e in &self.entries {
            for v in e {
                // canonical quiet NaN for reproducible files
                let bits = if v.is_nan() { 0x7fc0_0000 } else { v.to_bits() };
                out.extend_from_slice(&bits.to_le_bytes());
            }
        }
        let mut file = fs::File::create(path).map_err(|e| WarpError::LutFile(e.to_string()))?;
        file.write_all(&out).map_err(|e| WarpError::LutFile(e.to_string()))
    }

    pub fn load(path: &Path, src_width: u32, src_height: u32) -> Result<Self, WarpError> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| WarpError::LutFile(format!("{}: {e}", path.display())))?;
        if bytes.len() < 14 || &bytes[0..4] != LUT_MAGIC {
            return Err(WarpError::LutFile("bad magic".into()));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != LUT_VERSION {
            return Err(WarpError::LutFile(format!("unsupported version {version}")));
        }
        let width = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
        let n = width as usize * height as usize;
        if bytes.len() != 14 + n * 8 {
            return Err(WarpError::LutFile("truncated entries".into()));
        }
        let mut entries = Vec::with_capacity(n);
        for chunk in bytes[14..].chunks_exact(8) {
            entries.push([
                f32::from_le_bytes(chunk[0..4].try_into().unwrap()),
                f32::from_le_bytes(chunk[4..8].try_into().unwrap()),
            ]);
        }
        Ok(Self {
            width,
            height,
            src_width,
            src_height,
            entries,
        })
    }
}

/// Evaluate `H⁻¹` at every output pixel of the given camera side. Pixels
/// outside the mapped region (or whose source location leaves the image
/// rectangle) become sentinels.
pub fn build_lut(model: &RectificationModel, side: CamSide) -> BackwardLut {
    let cam = model.camera(side);
    let (w, h) = (model.out_width, model.out_height);
    let (sw, sh) = (cam.width(), cam.height());
    let max_u = (sw - 1) as f64;
    let max_v = (sh - 1) as f64;
    let entries: Vec<[f32; 2]> = (0..h as usize)
        .into_par_iter()
        .flat_map_iter(|y| {
            (0..w as usize).map(move |x| {
                let q = Pixel::new(x as f64, y as f64);
                match model.inverse_map(side, &q) {
                    Ok(p) if p.u >= 0.0 && p.u <= max_u && p.v >= 0.0 && p.v <= max_v => {
                        [p.u as f32, p.v as f32]
                    }
                    _ => BackwardLut::SENTINEL,
                }
            })
        })
        .collect();
    BackwardLut {
        width: w,
        height: h,
        src_width: sw,
        src_height: sh,
        entries,
    }
}

/// Resample `src` through the LUT with bilinear interpolation; sentinel
/// pixels come out zero.
pub fn warp_image(src: &RasterImage, lut: &BackwardLut) -> Result<RasterImage, WarpError> {
    if src.width != lut.src_width || src.height != lut.src_height {
        return Err(WarpError::DimensionMismatch {
            expected: format!("{}x{}", lut.src_width, lut.src_height),
            got: format!("{}x{}", src.width, src.height),
        });
    }
    let channels = src.channels;
    let w = lut.width as usize;
    let mut out = RasterImage::new(lut.width, lut.height, channels)?;
    out.data
        .par_chunks_mut(w * channels as usize)
        .enumerate()
        .for_each(|(y, row)| {
            for x in 0..w {
                if let Some((u, v)) = lut.entry(x as u32, y as u32) {
                    for ch in 0..channels {
                        let val = src.bilinear(u, v, ch).round().clamp(0.0, 255.0) as u8;
                        row[x * channels as usize + ch as usize] = val;
                    }
                }
            }
        });
    Ok(out)
}

/// Optional alpha mask of a LUT: 255 where mapped, 0 where sentinel.
pub fn lut_mask(lut: &BackwardLut) -> RasterImage {
    let mut mask = RasterImage::new(lut.width, lut.height, 1).expect("1 channel");
    for (i, e) in lut.entries.iter().enumerate() {
        mask.data[i] = if e[0].is_nan() { 0 } else { 255 };
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_lut(w: u32, h: u32) -> BackwardLut {
        let mut entries = Vec::new();
        for y in 0..h {
            for x in 0..w {
                entries.push([x as f32, y as f32]);
            }
        }
        BackwardLut {
            width: w,
            height: h,
            src_width: w,
            src_height: h,
            entries,
        }
    }

    fn noise_image(w: u32, h: u32, channels: u8, seed: u64) -> RasterImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut img = RasterImage::new(w, h, channels).unwrap();
        rng.fill(img.data.as_mut_slice());
        img
    }

    #[test]
    fn identity_lut_reproduces_input() {
        let src = noise_image(64, 48, 1, 1);
        let lut = identity_lut(64, 48);
        let out = warp_image(&src, &lut).unwrap();
        assert_eq!(out, src);
    }

    #[test]
    fn constant_image_stays_constant() {
        let mut src = RasterImage::new(64, 48, 3).unwrap();
        src.data.fill(137);
        let mut lut = identity_lut(64, 48);
        // scatter some fractional coordinates
        lut.entries[100] = [10.3, 20.7];
        lut.entries[200] = [1.5, 1.5];
        let out = warp_image(&src, &lut).unwrap();
        for (i, e) in lut.entries.iter().enumerate() {
            if !e[0].is_nan() {
                assert_eq!(out.data[i * 3], 137);
            }
        }
    }

    #[test]
    fn sentinel_pixels_black() {
        let src = noise_image(32, 32, 1, 2);
        let mut lut = identity_lut(32, 32);
        lut.entries[5] = BackwardLut::SENTINEL;
        let out = warp_image(&src, &lut).unwrap();
        assert_eq!(out.data[5], 0);
        let mask = lut_mask(&lut);
        assert_eq!(mask.data[5], 0);
        assert_eq!(mask.data[6], 255);
    }

    #[test]
    fn intensity_bounds_respected() {
        let src = noise_image(64, 64, 1, 3);
        let (lo, hi) = src
            .data
            .iter()
            .fold((255u8, 0u8), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut lut = identity_lut(64, 64);
        for e in lut.entries.iter_mut() {
            *e = [rng.random_range(0.0..63.0), rng.random_range(0.0..63.0)];
        }
        let out = warp_image(&src, &lut).unwrap();
        for &v in &out.data {
            assert!(v >= lo && v <= hi);
        }
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let src = noise_image(10, 10, 1, 5);
        let lut = identity_lut(9, 9);
        assert!(matches!(
            warp_image(&src, &lut),
            Err(WarpError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn warp_deterministic() {
        let src = noise_image(128, 96, 3, 6);
        let mut lut = identity_lut(128, 96);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for e in lut.entries.iter_mut() {
            *e = [rng.random_range(0.0..127.0), rng.random_range(0.0..95.0)];
        }
        let a = warp_image(&src, &lut).unwrap();
        let b = warp_image(&src, &lut).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn lut_build_roundtrip_against_forward() {
        let model = crate::rectmodel::tests::test_model();
        let lut = build_lut(&model, CamSide::Left);
        assert!(lut.mapped_fraction() > 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut checked = 0;
        let mut worst = 0.0f64;
        while checked < 10_000 {
            let x = rng.random_range(0..lut.width);
            let y = rng.random_range(0..lut.height);
            let Some((u, v)) = lut.entry(x, y) else {
                continue;
            };
            let q = model
                .forward_map(CamSide::Left, &Pixel::new(u, v))
                .expect("lut entries map forward");
            worst = worst
                .max((q.u - x as f64).abs())
                .max((q.v - y as f64).abs());
            checked += 1;
        }
        assert!(worst < 5e-2, "lut/forward inconsistency {worst}");
    }

    #[test]
    fn lut_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("test.lut");
        let mut lut = identity_lut(16, 8);
        lut.entries[3] = BackwardLut::SENTINEL;
        lut.save(&path).unwrap();
        let loaded = BackwardLut::load(&path, 16, 8).unwrap();
        assert_eq!(loaded.width, 16);
        assert_eq!(loaded.height, 8);
        assert!(loaded.entries[3][0].is_nan());
        assert_eq!(loaded.entries[4], lut.entries[4]);
    }

    #[test]
    fn pnm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let gray = noise_image(20, 10, 1, 9);
        let path = dir.path().join("img.pgm");
        gray.save(&path).unwrap();
        assert_eq!(RasterImage::load(&path).unwrap(), gray);

        let rgb = noise_image(20, 10, 3, 10);
        let path = dir.path().join("img.ppm");
        rgb.save(&path).unwrap();
        assert_eq!(RasterImage::load(&path).unwrap(), rgb);
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb = noise_image(20, 10, 3, 11);
        let path = dir.path().join("img.png");
        rgb.save(&path).unwrap();
        assert_eq!(RasterImage::load(&path).unwrap(), rgb);
    }
}
