//! Pixel buffers, BT.601 full-range color transforms, cropping and binary PPM I/O.

use std::fmt;

use thiserror::Error;

/// Rounds half away from zero. `f64::round` already has these semantics; the
/// helper exists so every quantization site names the rule it relies on.
#[inline]
pub fn round_half_away(v: f64) -> f64 {
    v.round()
}

#[inline]
fn to_u8_clamped(v: f64) -> u8 {
    round_half_away(v).clamp(0.0, 255.0) as u8
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ImageError {
    #[error("image dimensions must be at least 1x1 (got {width}x{height})")]
    EmptyDimensions { width: u32, height: u32 },
    #[error("pixel buffer holds {actual} bytes, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
    #[error("rect {rect} does not fit inside a {width}x{height} image")]
    RectOutOfBounds { rect: Rect, width: u32, height: u32 },
    #[error("rect must have non-zero width and height (got {0})")]
    EmptyRect(Rect),
    #[error("plane sizes differ or do not match {width}x{height}")]
    PlaneMismatch { width: u32, height: u32 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PpmError {
    #[error("not a binary PPM: expected magic \"P6\"")]
    BadMagic,
    #[error("malformed PPM header: {0}")]
    Header(&'static str),
    #[error("unsupported PPM maxval {0}, only 255 is accepted")]
    MaxVal(u32),
    #[error("PPM pixel data truncated: need {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// An axis-aligned rectangle in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl Rect {
    pub const fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Rect { x, y, w, h }
    }

    pub const fn full(width: u32, height: u32) -> Self {
        Rect { x: 0, y: 0, w: width, h: height }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// Checks the rect is non-empty and lies within a `width`×`height` frame.
    pub fn validate_within(&self, width: u32, height: u32) -> Result<(), ImageError> {
        if self.w == 0 || self.h == 0 {
            return Err(ImageError::EmptyRect(*self));
        }
        let fits = self.x as u64 + self.w as u64 <= width as u64 && self.y as u64 + self.h as u64 <= height as u64;
        if !fits {
            return Err(ImageError::RectOutOfBounds { rect: *self, width, height });
        }
        Ok(())
    }

    pub fn contains(&self, px: u32, py: u32) -> bool {
        px >= self.x && py >= self.y && px - self.x < self.w && py - self.y < self.h
    }
}

impl fmt::Display for Rect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{},{},{}]", self.x, self.y, self.w, self.h)
    }
}

/// Row-major interleaved 8-bit RGB raster.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image").field("width", &self.width).field("height", &self.height).finish_non_exhaustive()
    }
}

impl Image {
    pub fn from_raw(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::EmptyDimensions { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(ImageError::BufferSize { expected, actual: pixels.len() });
        }
        Ok(Image { width, height, pixels })
    }

    /// A `width`×`height` image filled with one color.
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, ImageError> {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Image::from_raw(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn full_rect(&self) -> Rect {
        Rect::full(self.width, self.height)
    }

    /// Copies the pixels under `r` into a new image.
    pub fn crop(&self, r: Rect) -> Result<Image, ImageError> {
        r.validate_within(self.width, self.height)?;
        let mut pixels = Vec::with_capacity(r.area() as usize * 3);
        for row in r.y..r.y + r.h {
            let start = self.offset(r.x, row);
            pixels.extend_from_slice(&self.pixels[start..start + r.w as usize * 3]);
        }
        Image::from_raw(r.w, r.h, pixels)
    }

    /// Per-channel mean over all pixels, rounded half away from zero.
    pub fn mean_color(&self) -> [u8; 3] {
        let mut sums = [0u64; 3];
        for px in self.pixels.chunks_exact(3) {
            for c in 0..3 {
                sums[c] += px[c] as u64;
            }
        }
        let n = self.pixel_count() as f64;
        sums.map(|s| to_u8_clamped(s as f64 / n))
    }
}

/// One 8-bit sample plane.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Plane {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<u8>,
}

impl Plane {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        self.samples[y as usize * self.width as usize + x as usize]
    }
}

/// Y, Cb and Cr planes of equal size (4:4:4).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct YCbCrPlanes {
    pub y: Plane,
    pub cb: Plane,
    pub cr: Plane,
}

impl YCbCrPlanes {
    pub fn planes(&self) -> [&Plane; 3] {
        [&self.y, &self.cb, &self.cr]
    }
}

#[inline]
pub fn rgb_to_ycbcr_pixel([r, g, b]: [u8; 3]) -> [u8; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    [
        to_u8_clamped(0.299 * r + 0.587 * g + 0.114 * b),
        to_u8_clamped(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b),
        to_u8_clamped(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b),
    ]
}

#[inline]
pub fn ycbcr_to_rgb_pixel([y, cb, cr]: [u8; 3]) -> [u8; 3] {
    let (y, cb, cr) = (y as f64, cb as f64 - 128.0, cr as f64 - 128.0);
    [to_u8_clamped(y + 1.402 * cr), to_u8_clamped(y - 0.344136 * cb - 0.714136 * cr), to_u8_clamped(y + 1.772 * cb)]
}

pub fn rgb_to_ycbcr(img: &Image) -> YCbCrPlanes {
    let n = img.pixel_count();
    let (mut y, mut cb, mut cr) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for px in img.pixels.chunks_exact(3) {
        let [a, b, c] = rgb_to_ycbcr_pixel([px[0], px[1], px[2]]);
        y.push(a);
        cb.push(b);
        cr.push(c);
    }
    let plane = |samples| Plane { width: img.width, height: img.height, samples };
    YCbCrPlanes { y: plane(y), cb: plane(cb), cr: plane(cr) }
}

pub fn ycbcr_to_rgb(planes: &YCbCrPlanes) -> Result<Image, ImageError> {
    let (width, height) = (planes.y.width, planes.y.height);
    let n = width as usize * height as usize;
    let same = planes.planes().iter().all(|p| p.width == width && p.height == height && p.samples.len() == n);
    if !same {
        return Err(ImageError::PlaneMismatch { width, height });
    }
    let mut pixels = Vec::with_capacity(n * 3);
    for i in 0..n {
        let rgb = ycbcr_to_rgb_pixel([planes.y.samples[i], planes.cb.samples[i], planes.cr.samples[i]]);
        pixels.extend_from_slice(&rgb);
    }
    Image::from_raw(width, height, pixels)
}

fn is_ppm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space(&mut self) -> Result<(), PpmError> {
        let start = self.pos;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b if is_ppm_space(b) => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
        if self.pos == start {
            return Err(PpmError::Header("expected whitespace"));
        }
        Ok(())
    }

    fn number(&mut self) -> Result<u32, PpmError> {
        let start = self.pos;
        let mut value: u32 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as u32))
                .ok_or(PpmError::Header("number overflows u32"))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PpmError::Header("expected decimal number"));
        }
        Ok(value)
    }
}

/// Parses a binary PPM (`P6`, maxval 255). Header comments are tolerated.
pub fn load_ppm(bytes: &[u8]) -> Result<Image, PpmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(PpmError::BadMagic);
    }
    let mut cur = HeaderCursor { bytes, pos: 2 };
    cur.skip_space()?;
    let width = cur.number()?;
    cur.skip_space()?;
    let height = cur.number()?;
    cur.skip_space()?;
    let maxval = cur.number()?;
    if maxval != 255 {
        return Err(PpmError::MaxVal(maxval));
    }
    match bytes.get(cur.pos) {
        Some(&b) if is_ppm_space(b) => cur.pos += 1,
        _ => return Err(PpmError::Header("expected single whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(ImageError::EmptyDimensions { width, height }.into());
    }
    let expected = (width as usize)
        .checked_mul(height as usize)
        .and_then(|n| n.checked_mul(3))
        .ok_or(PpmError::Header("dimensions overflow"))?;
    let data = &bytes[cur.pos..];
    if data.len() < expected {
        return Err(PpmError::Truncated { expected, actual: data.len() });
    }
    Ok(Image::from_raw(width, height, data[..expected].to_vec())?)
}

pub fn save_ppm(img: &Image) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", img.width, img.height);
    let mut out = Vec::with_capacity(header.len() + img.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&img.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ppm(header: &str, data: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(data);
        v
    }

    #[test]
    fn load_single_red_pixel() {
        let img = load_ppm(&ppm("P6\n1 1\n255\n", &[255, 0, 0])).unwrap();
        assert_eq!((img.width(), img.height()), (1, 1));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
    }

    #[test]
    fn load_rejects_wrong_magic() {
        assert_eq!(load_ppm(&ppm("P5\n1 1\n255\n", &[0])), Err(PpmError::BadMagic));
    }

    #[test]
    fn load_rejects_truncated_data() {
        let err = load_ppm(&ppm("P6\n2 1\n255\n", &[1, 2, 3])).unwrap_err();
        assert_eq!(err, PpmError::Truncated { expected: 6, actual: 3 });
    }

    #[test]
    fn load_rejects_other_maxval_and_zero_dims() {
        assert_eq!(load_ppm(&ppm("P6\n1 1\n65535\n", &[0; 6])), Err(PpmError::MaxVal(65535)));
        assert!(matches!(load_ppm(&ppm("P6\n0 1\n255\n", &[])), Err(PpmError::Image(_))));
        assert!(matches!(load_ppm(b"P6\n1"), Err(PpmError::Header(_))));
    }

    #[test]
    fn load_skips_header_comments() {
        let img = load_ppm(&ppm("P6\n# made by hand\n1 1\n255\n", &[1, 2, 3])).unwrap();
        assert_eq!(img.pixel(0, 0), [1, 2, 3]);
    }

    #[test]
    fn save_black_pixel_is_exact() {
        let img = Image::filled(1, 1, [0, 0, 0]).unwrap();
        assert_eq!(save_ppm(&img), ppm("P6\n1 1\n255\n", &[0, 0, 0]));
    }

    #[test]
    fn save_declares_dimensions() {
        let img = Image::filled(2, 2, [9, 9, 9]).unwrap();
        assert!(save_ppm(&img).starts_with(b"P6\n2 2\n255\n"));
    }

    #[test]
    fn color_known_values() {
        assert_eq!(rgb_to_ycbcr_pixel([0, 0, 0]), [0, 128, 128]);
        assert_eq!(rgb_to_ycbcr_pixel([255, 255, 255]), [255, 128, 128]);
        assert_eq!(rgb_to_ycbcr_pixel([255, 0, 0]), [76, 85, 255]);
        assert_eq!(ycbcr_to_rgb_pixel([0, 128, 128]), [0, 0, 0]);
        assert_eq!(ycbcr_to_rgb_pixel([255, 128, 128]), [255, 255, 255]);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(round_half_away(0.5), 1.0);
        assert_eq!(round_half_away(-0.5), -1.0);
        assert_eq!(round_half_away(2.5), 3.0);
        assert_eq!(round_half_away(-2.4999), -2.0);
    }

    #[test]
    fn color_round_trip_exhaustive() {
        // Exhaustive scan over all 2^24 colors: observed max error is 1.
        let mut max_err = 0u8;
        for v in 0u32..1 << 24 {
            let rgb = [(v >> 16) as u8, (v >> 8) as u8, v as u8];
            let back = ycbcr_to_rgb_pixel(rgb_to_ycbcr_pixel(rgb));
            for c in 0..3 {
                max_err = max_err.max(rgb[c].abs_diff(back[c]));
            }
        }
        assert_eq!(max_err, 1);
    }

    #[test]
    fn crop_cases() {
        let mut img = Image::filled(4, 3, [0, 0, 0]).unwrap();
        img.set_pixel(0, 0, [7, 8, 9]);
        img.set_pixel(3, 2, [1, 1, 1]);
        assert_eq!(img.crop(img.full_rect()).unwrap(), img);
        let tl = img.crop(Rect::new(0, 0, 1, 1)).unwrap();
        assert_eq!(tl.pixel(0, 0), [7, 8, 9]);
        let br = img.crop(Rect::new(2, 1, 2, 2)).unwrap();
        assert_eq!(br.pixel(1, 1), [1, 1, 1]);
        assert!(matches!(img.crop(Rect::new(3, 0, 2, 1)), Err(ImageError::RectOutOfBounds { .. })));
        assert!(matches!(img.crop(Rect::new(0, 0, 0, 1)), Err(ImageError::EmptyRect(_))));
    }

    #[test]
    fn planes_round_trip_through_image() {
        let img = Image::from_raw(2, 1, vec![10, 200, 30, 0, 0, 0]).unwrap();
        let planes = rgb_to_ycbcr(&img);
        let back = ycbcr_to_rgb(&planes).unwrap();
        for (a, b) in img.as_bytes().iter().zip(back.as_bytes()) {
            assert!(a.abs_diff(*b) <= 1);
        }
    }
}
