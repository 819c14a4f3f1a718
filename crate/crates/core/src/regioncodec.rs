//! Lossy codec for one rectangular region.
//!
//! Pipeline per region: BT.601 YCbCr (4:4:4), optional mean-fill outside
//! the mask, edge-replicated padding to 8×8 blocks, orthonormal 2-D DCT-II,
//! uniform quantizer with frequency-weighted steps, then per block a
//! DC difference as `se` and zigzag AC `(run ue, level se)` pairs closed by
//! an end-of-block `ue(63)`. Planes follow each other (Y, Cb, Cr) in one
//! bitstream and the final byte is zero-padded.
//!
//! Every float operation runs in a fixed order on `f64`, so payloads are
//! byte-identical across platforms.

use std::f64::consts::PI;
use std::fmt;
use std::sync::OnceLock;

use thiserror::Error;

use crate::bits::{BitError, BitReader, BitWriter};
use crate::image::{rgb_to_ycbcr, round_half_away, ycbcr_to_rgb, Image, ImageError, Plane, YCbCrPlanes};
use crate::priors::Mask;

const EOB: u64 = 63;
const MAX_RUN: u64 = 62;

/// Standard JPEG zigzag: `ZIGZAG[k]` is the row-major index `u * 8 + v`
/// of the k-th coefficient in scan order.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20, 13, 6, 7, 14, 21,
    28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59, 52, 45, 38, 31, 39, 46, 53, 60, 61, 54,
    47, 55, 62, 63,
];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("quality index {0} outside 1..=8")]
    BadQuality(u8),
    #[error("region payload truncated: {0}")]
    Truncated(#[from] BitError),
    #[error("block grammar violation at bit {bit}: {what}")]
    Grammar { bit: usize, what: &'static str },
    #[error("coefficient magnitude out of range at bit {0}")]
    Overflow(usize),
    #[error("mask is {mask_w}x{mask_h}, region is {region_w}x{region_h}")]
    MaskSize { mask_w: u32, mask_h: u32, region_w: u32, region_h: u32 },
    #[error("mask runs do not sum to {expected} pixels")]
    MaskRuns { expected: u64 },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Quantizer coarseness, 1 (finest) to 8 (coarsest).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualityIndex(u8);

impl QualityIndex {
    pub const MIN: QualityIndex = QualityIndex(1);
    pub const MAX: QualityIndex = QualityIndex(8);

    pub fn new(q: u8) -> Result<Self, CodecError> {
        if (1..=8).contains(&q) {
            Ok(QualityIndex(q))
        } else {
            Err(CodecError::BadQuality(q))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = QualityIndex> {
        (1..=8).map(QualityIndex)
    }
}

impl fmt::Display for QualityIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Quantizer step for frequency `(u, v)`: `2^(q-1) * (4 + u + v) / 4`.
pub fn quant_step(q: QualityIndex, u: usize, v: usize) -> f64 {
    debug_assert!(u < 8 && v < 8);
    (1u32 << (q.0 - 1)) as f64 * (4 + u + v) as f64 / 4.0
}

/// Entropy-coded region bytes plus the 8-aligned coded size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPayload {
    pub bytes: Vec<u8>,
    pub coded_w: u32,
    pub coded_h: u32,
}

pub fn coded_dim(n: u32) -> u32 {
    n.div_ceil(8) * 8
}

/// `BASIS[k][n] = c(k)/2 * cos((2n+1) k pi / 16)`, `c(0) = 1/sqrt(2)`, else 1.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (k, row) in b.iter_mut().enumerate() {
            let c = if k == 0 { std::f64::consts::FRAC_1_SQRT_2 } else { 1.0 };
            for (n, val) in row.iter_mut().enumerate() {
                *val = c / 2.0 * (((2 * n + 1) * k) as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

/// Forward orthonormal DCT-II of a level-shifted 8×8 block, row-major in and out.
/// `u` is the vertical frequency (pairs with row `x`), `v` horizontal (column `y`).
/// Summation order is u, v, x, y.
pub fn fdct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut sum = 0.0;
            for x in 0..8 {
                for y in 0..8 {
                    sum += b[u][x] * b[v][y] * block[x * 8 + y];
                }
            }
            out[u * 8 + v] = sum;
        }
    }
    out
}

/// Inverse of [`fdct8x8`]; summation order is x, y, u, v.
pub fn idct8x8(coefs: &[f64; 64]) -> [f64; 64] {
    let b = basis();
    let mut out = [0.0; 64];
    for x in 0..8 {
        for y in 0..8 {
            let mut sum = 0.0;
            for u in 0..8 {
                for v in 0..8 {
                    sum += b[u][x] * b[v][y] * coefs[u * 8 + v];
                }
            }
            out[x * 8 + y] = sum;
        }
    }
    out
}

pub fn quantize_block(coefs: &[f64; 64], q: QualityIndex) -> [i32; 64] {
    let mut out = [0i32; 64];
    for (i, o) in out.iter_mut().enumerate() {
        *o = round_half_away(coefs[i] / quant_step(q, i / 8, i % 8)) as i32;
    }
    out
}

pub fn dequantize_block(indices: &[i32; 64], q: QualityIndex) -> [f64; 64] {
    let mut out = [0.0; 64];
    for (i, o) in out.iter_mut().enumerate() {
        *o = indices[i] as f64 * quant_step(q, i / 8, i % 8);
    }
    out
}

/// Replaces out-of-mask samples by the rounded in-mask mean. An empty mask
/// leaves the plane untouched.
fn mean_fill(plane: &mut Plane, mask: &Mask) {
    let (mut sum, mut count) = (0u64, 0u64);
    for (s, &m) in plane.samples.iter().zip(mask.bits()) {
        if m {
            sum += *s as u64;
            count += 1;
        }
    }
    if count == 0 {
        return;
    }
    let mean = round_half_away(sum as f64 / count as f64) as u8;
    for (s, &m) in plane.samples.iter_mut().zip(mask.bits()) {
        if !m {
            *s = mean;
        }
    }
}

fn encode_plane(plane: &Plane, q: QualityIndex, w: &mut BitWriter) {
    let (cw, ch) = (coded_dim(plane.width), coded_dim(plane.height));
    let mut prev_dc = 0i64;
    for by in (0..ch).step_by(8) {
        for bx in (0..cw).step_by(8) {
            let mut block = [0.0; 64];
            for x in 0..8u32 {
                let row = (by + x).min(plane.height - 1);
                for y in 0..8u32 {
                    let col = (bx + y).min(plane.width - 1);
                    block[(x * 8 + y) as usize] = plane.get(col, row) as f64 - 128.0;
                }
            }
            let idx = quantize_block(&fdct8x8(&block), q);
            let dc = idx[0] as i64;
            w.put_se(dc - prev_dc);
            prev_dc = dc;
            let mut run = 0u64;
            for &zz in &ZIGZAG[1..] {
                let level = idx[zz];
                if level == 0 {
                    run += 1;
                } else {
                    w.put_ue(run);
                    w.put_se(level as i64);
                    run = 0;
                }
            }
            w.put_ue(EOB);
        }
    }
}

/// Encodes a region crop. `mask`, when present, must match the crop size.
pub fn encode_region(pixels: &Image, mask: Option<&Mask>, q: QualityIndex) -> Result<RegionPayload, CodecError> {
    let mut planes = rgb_to_ycbcr(pixels);
    if let Some(m) = mask {
        if (m.width(), m.height()) != (pixels.width(), pixels.height()) {
            return Err(CodecError::MaskSize {
                mask_w: m.width(),
                mask_h: m.height(),
                region_w: pixels.width(),
                region_h: pixels.height(),
            });
        }
        for p in [&mut planes.y, &mut planes.cb, &mut planes.cr] {
            mean_fill(p, m);
        }
    }
    let mut w = BitWriter::new();
    for p in planes.planes() {
        encode_plane(p, q, &mut w);
    }
    Ok(RegionPayload { bytes: w.finish(), coded_w: coded_dim(pixels.width()), coded_h: coded_dim(pixels.height()) })
}

/// Largest index magnitude accepted by the decoder. Level-shifted samples
/// bound every DCT coefficient by 1024, so legitimate indices stay far below.
const MAX_INDEX: i64 = 1 << 20;

fn read_index(r: &mut BitReader<'_>) -> Result<i64, CodecError> {
    let bit = r.position();
    let v = r.read_se()?;
    if v.abs() > MAX_INDEX {
        return Err(CodecError::Overflow(bit));
    }
    Ok(v)
}

fn decode_plane(r: &mut BitReader<'_>, width: u32, height: u32, q: QualityIndex) -> Result<Plane, CodecError> {
    let (cw, ch) = (coded_dim(width), coded_dim(height));
    let mut samples = vec![0u8; width as usize * height as usize];
    let mut prev_dc = 0i64;
    for by in (0..ch).step_by(8) {
        for bx in (0..cw).step_by(8) {
            let mut idx = [0i32; 64];
            let dc = prev_dc + read_index(r)?;
            if dc.abs() > MAX_INDEX {
                return Err(CodecError::Overflow(r.position()));
            }
            idx[0] = dc as i32;
            prev_dc = dc;
            let mut pos = 1usize;
            loop {
                let bit = r.position();
                let run = r.read_ue()?;
                if run == EOB {
                    break;
                }
                if run > MAX_RUN || pos + run as usize > 63 {
                    return Err(CodecError::Grammar { bit, what: "run past end of block" });
                }
                pos += run as usize;
                let level = read_index(r)?;
                if level == 0 {
                    return Err(CodecError::Grammar { bit, what: "zero level in run/level pair" });
                }
                idx[ZIGZAG[pos]] = level as i32;
                pos += 1;
            }
            let rec = idct8x8(&dequantize_block(&idx, q));
            for x in 0..8u32 {
                let row = by + x;
                if row >= height {
                    break;
                }
                for y in 0..8u32 {
                    let col = bx + y;
                    if col >= width {
                        break;
                    }
                    let v = round_half_away(rec[(x * 8 + y) as usize] + 128.0).clamp(0.0, 255.0);
                    samples[row as usize * width as usize + col as usize] = v as u8;
                }
            }
        }
    }
    Ok(Plane { width, height, samples })
}

/// Decodes a payload produced by [`encode_region`] for an `orig_w`×`orig_h` crop.
pub fn decode_region(payload: &[u8], orig_w: u32, orig_h: u32, q: QualityIndex) -> Result<Image, CodecError> {
    if orig_w == 0 || orig_h == 0 {
        return Err(ImageError::EmptyDimensions { width: orig_w, height: orig_h }.into());
    }
    let mut r = BitReader::new(payload);
    let y = decode_plane(&mut r, orig_w, orig_h, q)?;
    let cb = decode_plane(&mut r, orig_w, orig_h, q)?;
    let cr = decode_plane(&mut r, orig_w, orig_h, q)?;
    Ok(ycbcr_to_rgb(&YCbCrPlanes { y, cb, cr })?)
}

/// Codes a mask as `(zero run, one run)` pairs, each `ue`, MSB-first and
/// zero-padded to a byte. The last pair's one-run may be 0.
pub fn mask_rle_encode(mask: &Mask) -> Vec<u8> {
    let mut runs = mask.to_runs();
    if runs.len() % 2 == 1 {
        runs.push(0);
    }
    let mut w = BitWriter::new();
    for r in runs {
        w.put_ue(r);
    }
    w.finish()
}

pub fn mask_rle_decode(bytes: &[u8], width: u32, height: u32) -> Result<Mask, CodecError> {
    let total = width as u64 * height as u64;
    let err = CodecError::MaskRuns { expected: total };
    let mut r = BitReader::new(bytes);
    let mut runs = Vec::new();
    let mut sum = 0u64;
    loop {
        let zeros = r.read_ue().map_err(|_| CodecError::MaskRuns { expected: total })?;
        let ones = r.read_ue().map_err(|_| CodecError::MaskRuns { expected: total })?;
        sum =
            sum.checked_add(zeros).and_then(|s| s.checked_add(ones)).ok_or(CodecError::MaskRuns { expected: total })?;
        if sum > total {
            return Err(err);
        }
        runs.push(zeros);
        runs.push(ones);
        if sum == total {
            break;
        }
    }
    Mask::from_runs(width, height, &runs).ok_or(err)
}
