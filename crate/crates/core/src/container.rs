//! The structured bitstream: a 16-byte header followed by self-delimiting
//! region units ordered by importance.
//!
//! All integers are little-endian.
//!
//! | field        | bytes |
//! |--------------|-------|
//! | magic "SDC1" | 4     |
//! | version (1)  | 1     |
//! | width        | 4     |
//! | height       | 4     |
//! | mean r, g, b | 3     |
//!
//! Each unit:
//!
//! | field       | bytes |
//! |-------------|-------|
//! | level       | 1     |
//! | object id   | 2     |
//! | bbox x, y   | 2 + 2 |
//! | bbox w, h   | 2 + 2 |
//! | quality     | 1     |
//! | mask_len    | 4     |
//! | payload_len | 4     |
//! | mask bytes  | mask_len |
//! | payload     | payload_len |
//!
//! There is no unit count; units run to the end of input, so any prefix
//! that ends on a unit boundary is itself a valid stream.

use std::collections::HashSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::image::Rect;
use crate::regioncodec::QualityIndex;

pub const MAGIC: &[u8; 4] = b"SDC1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
pub const UNIT_HEADER_LEN: usize = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ContainerError {
    #[error("bad magic, not an SDC1 stream")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("stream header truncated ({0} of {HEADER_LEN} bytes)")]
    HeaderTruncated(usize),
    #[error("frame dimensions must be non-zero")]
    EmptyFrame,
    #[error("unit header truncated at offset {0}")]
    UnitTruncated(usize),
    #[error("unit at offset {offset} declares {declared} bytes but only {available} remain")]
    Overrun { offset: usize, declared: u64, available: usize },
    #[error("invalid level code {0}")]
    BadLevel(u8),
    #[error("invalid quality index {0}")]
    BadQuality(u8),
    #[error("unit {index}: {what}")]
    BadUnit { index: usize, what: &'static str },
    #[error("unit {0} is out of (level, id) order")]
    OutOfOrder(usize),
    #[error("object id {0} appears twice")]
    DuplicateId(u16),
    #[error("more than one background unit")]
    DuplicateBackground,
    #[error("field does not fit the container ({0})")]
    FieldOverflow(&'static str),
}

/// Unit category: 1–3 importance levels, 4 other objects, 5 background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(into = "u8")]
pub struct LevelCode(u8);

impl LevelCode {
    pub const L1: LevelCode = LevelCode(1);
    pub const L2: LevelCode = LevelCode(2);
    pub const L3: LevelCode = LevelCode(3);
    pub const OTHER: LevelCode = LevelCode(4);
    pub const BACKGROUND: LevelCode = LevelCode(5);

    pub fn new(code: u8) -> Result<Self, ContainerError> {
        if (1..=5).contains(&code) {
            Ok(LevelCode(code))
        } else {
            Err(ContainerError::BadLevel(code))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn all() -> impl Iterator<Item = LevelCode> {
        (1..=5).map(LevelCode)
    }
}

impl From<LevelCode> for u8 {
    fn from(l: LevelCode) -> u8 {
        l.0
    }
}

impl fmt::Display for LevelCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            1..=3 => write!(f, "L{}", self.0),
            4 => f.write_str("other"),
            _ => f.write_str("background"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionUnit {
    pub level: LevelCode,
    /// 0 for the background unit.
    pub object_id: u16,
    pub bbox: Rect,
    pub quality: QualityIndex,
    pub mask_bytes: Option<Vec<u8>>,
    pub payload: Vec<u8>,
}

impl RegionUnit {
    pub fn is_background(&self) -> bool {
        self.level == LevelCode::BACKGROUND
    }

    pub fn encoded_len(&self) -> usize {
        UNIT_HEADER_LEN + self.mask_bytes.as_ref().map_or(0, Vec::len) + self.payload.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StructuredBitstream {
    pub width: u32,
    pub height: u32,
    pub mean_color: [u8; 3],
    pub units: Vec<RegionUnit>,
}

fn check_unit(index: usize, u: &RegionUnit, width: u32, height: u32) -> Result<(), ContainerError> {
    let bad = |what| Err(ContainerError::BadUnit { index, what });
    if u.bbox.validate_within(width, height).is_err() {
        return bad("bbox outside frame or empty");
    }
    if u.is_background() {
        if u.object_id != 0 {
            return bad("background unit must have object id 0");
        }
        if u.bbox != Rect::full(width, height) {
            return bad("background unit must cover the full frame");
        }
        if u.mask_bytes.is_some() {
            return bad("background unit cannot carry a mask");
        }
    } else if u.object_id == 0 {
        return bad("object unit needs a non-zero id");
    }
    if u.mask_bytes.as_ref().is_some_and(Vec::is_empty) {
        return bad("mask present but empty");
    }
    Ok(())
}

impl StructuredBitstream {
    /// Checks ordering, id uniqueness and per-unit invariants.
    pub fn validate(&self) -> Result<(), ContainerError> {
        if self.width == 0 || self.height == 0 {
            return Err(ContainerError::EmptyFrame);
        }
        let mut ids = HashSet::new();
        let mut prev: Option<(LevelCode, u16)> = None;
        for (i, u) in self.units.iter().enumerate() {
            check_unit(i, u, self.width, self.height)?;
            let key = (u.level, u.object_id);
            if prev.is_some_and(|p| p >= key) {
                if u.is_background() && prev.is_some_and(|p| p.0 == LevelCode::BACKGROUND) {
                    return Err(ContainerError::DuplicateBackground);
                }
                return Err(ContainerError::OutOfOrder(i));
            }
            if !u.is_background() && !ids.insert(u.object_id) {
                return Err(ContainerError::DuplicateId(u.object_id));
            }
            prev = Some(key);
        }
        Ok(())
    }

    pub fn serialize(&self) -> Result<Vec<u8>, ContainerError> {
        self.validate()?;
        let body: usize = self.units.iter().map(RegionUnit::encoded_len).sum();
        let mut out = Vec::with_capacity(HEADER_LEN + body);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.mean_color);
        for u in &self.units {
            let narrow = |v: u32, what| u16::try_from(v).map_err(|_| ContainerError::FieldOverflow(what));
            let mask = u.mask_bytes.as_deref().unwrap_or(&[]);
            let mask_len = u32::try_from(mask.len()).map_err(|_| ContainerError::FieldOverflow("mask_len"))?;
            let payload_len =
                u32::try_from(u.payload.len()).map_err(|_| ContainerError::FieldOverflow("payload_len"))?;
            out.push(u.level.0);
            out.extend_from_slice(&u.object_id.to_le_bytes());
            for (v, what) in [(u.bbox.x, "bbox x"), (u.bbox.y, "bbox y"), (u.bbox.w, "bbox w"), (u.bbox.h, "bbox h")] {
                out.extend_from_slice(&narrow(v, what)?.to_le_bytes());
            }
            out.push(u.quality.get());
            out.extend_from_slice(&mask_len.to_le_bytes());
            out.extend_from_slice(&payload_len.to_le_bytes());
            out.extend_from_slice(mask);
            out.extend_from_slice(&u.payload);
        }
        Ok(out)
    }
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes([b[0], b[1], b[2], b[3]])
}

/// Parses a stream and records the byte offset just past each unit.
fn parse_with_offsets(bytes: &[u8]) -> Result<(StructuredBitstream, Vec<usize>), ContainerError> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC || bytes.len() < 4 && !MAGIC.starts_with(bytes) {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(ContainerError::HeaderTruncated(bytes.len()));
    }
    if bytes[4] != VERSION {
        return Err(ContainerError::UnsupportedVersion(bytes[4]));
    }
    let width = le_u32(&bytes[5..9]);
    let height = le_u32(&bytes[9..13]);
    if width == 0 || height == 0 {
        return Err(ContainerError::EmptyFrame);
    }
    let mean_color = [bytes[13], bytes[14], bytes[15]];
    let mut pos = HEADER_LEN;
    let mut units = Vec::new();
    let mut ends = Vec::new();
    while pos < bytes.len() {
        let start = pos;
        let rest = &bytes[pos..];
        if rest.len() < UNIT_HEADER_LEN {
            return Err(ContainerError::UnitTruncated(start));
        }
        let level = LevelCode::new(rest[0])?;
        let object_id = le_u16(&rest[1..3]);
        let bbox = Rect::new(
            le_u16(&rest[3..5]) as u32,
            le_u16(&rest[5..7]) as u32,
            le_u16(&rest[7..9]) as u32,
            le_u16(&rest[9..11]) as u32,
        );
        let quality = QualityIndex::new(rest[11]).map_err(|_| ContainerError::BadQuality(rest[11]))?;
        let mask_len = le_u32(&rest[12..16]) as u64;
        let payload_len = le_u32(&rest[16..20]) as u64;
        let available = rest.len() - UNIT_HEADER_LEN;
        let declared = mask_len + payload_len;
        if declared > available as u64 {
            return Err(ContainerError::Overrun { offset: start, declared, available });
        }
        let body = &rest[UNIT_HEADER_LEN..];
        let (mask, payload) = body.split_at(mask_len as usize);
        let payload = &payload[..payload_len as usize];
        units.push(RegionUnit {
            level,
            object_id,
            bbox,
            quality,
            mask_bytes: (mask_len > 0).then(|| mask.to_vec()),
            payload: payload.to_vec(),
        });
        pos += UNIT_HEADER_LEN + declared as usize;
        ends.push(pos);
    }
    let stream = StructuredBitstream { width, height, mean_color, units };
    stream.validate()?;
    Ok((stream, ends))
}

pub fn parse(bytes: &[u8]) -> Result<StructuredBitstream, ContainerError> {
    parse_with_offsets(bytes).map(|(s, _)| s)
}

/// Returns the byte prefix of `bytes` holding every unit with level ≤ `max_level`.
/// The header is always kept.
pub fn truncate(bytes: &[u8], max_level: LevelCode) -> Result<Vec<u8>, ContainerError> {
    let (stream, ends) = parse_with_offsets(bytes)?;
    let end =
        stream.units.iter().zip(&ends).take_while(|(u, _)| u.level <= max_level).last().map_or(HEADER_LEN, |(_, &e)| e);
    Ok(bytes[..end].to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnitSummary {
    pub level: LevelCode,
    pub object_id: u16,
    pub bbox: [u32; 4],
    pub quality: u8,
    pub mask_bytes: usize,
    pub payload_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub width: u32,
    pub height: u32,
    pub mean_color: [u8; 3],
    pub units: Vec<UnitSummary>,
    pub total_bytes: usize,
    pub bpp: f64,
}

pub fn inspect(bytes: &[u8]) -> Result<Manifest, ContainerError> {
    let s = parse(bytes)?;
    let units = s
        .units
        .iter()
        .map(|u| UnitSummary {
            level: u.level,
            object_id: u.object_id,
            bbox: [u.bbox.x, u.bbox.y, u.bbox.w, u.bbox.h],
            quality: u.quality.get(),
            mask_bytes: u.mask_bytes.as_ref().map_or(0, Vec::len),
            payload_bytes: u.payload.len(),
        })
        .collect();
    Ok(Manifest {
        width: s.width,
        height: s.height,
        mean_color: s.mean_color,
        units,
        total_bytes: bytes.len(),
        bpp: crate::eval::bpp(bytes.len(), s.width, s.height),
    })
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "SDC1 {}x{}  mean=({},{},{})  units={}  bytes={}  bpp={:.6}",
            self.width,
            self.height,
            self.mean_color[0],
            self.mean_color[1],
            self.mean_color[2],
            self.units.len(),
            self.total_bytes,
            self.bpp
        )?;
        writeln!(f, "{:<10} {:>5} {:>22} {:>2} {:>8} {:>10}", "level", "id", "bbox", "q", "mask", "payload")?;
        for u in &self.units {
            let bbox = format!("[{},{},{},{}]", u.bbox[0], u.bbox[1], u.bbox[2], u.bbox[3]);
            writeln!(
                f,
                "{:<10} {:>5} {:>22} {:>2} {:>8} {:>10}",
                u.level.to_string(),
                u.object_id,
                bbox,
                u.quality,
                u.mask_bytes,
                u.payload_bytes
            )?;
        }
        Ok(())
    }
}
