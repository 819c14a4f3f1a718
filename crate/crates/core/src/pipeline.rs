//! Whole-image encode and (possibly partial) decode.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::container::{self, ContainerError, LevelCode, RegionUnit, StructuredBitstream};
use crate::image::{Image, ImageError};
use crate::priors::{group_by_level, GroundedObject, Mask, PriorsError, Ranking, SemanticPriors};
use crate::regioncodec::{
    self, decode_region, encode_region, mask_rle_decode, mask_rle_encode, CodecError, QualityIndex,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Priors(#[from] PriorsError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Container(#[from] ContainerError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("invalid quality profile: {0}")]
    Profile(String),
}

/// Quality index per unit category, finest for L1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct QualityProfile {
    qualities: [QualityIndex; 5],
}

impl QualityProfile {
    /// `[q_L1, q_L2, q_L3, q_other, q_background]`, which must be non-decreasing.
    pub fn new(qualities: [u8; 5]) -> Result<Self, PipelineError> {
        let mut qs = [QualityIndex::MIN; 5];
        for (slot, &q) in qs.iter_mut().zip(&qualities) {
            *slot = QualityIndex::new(q).map_err(|e| PipelineError::Profile(e.to_string()))?;
        }
        if qs.windows(2).any(|w| w[0] > w[1]) {
            return Err(PipelineError::Profile(format!("{qualities:?} is not non-decreasing from L1 to background")));
        }
        Ok(QualityProfile { qualities: qs })
    }

    pub fn quality_for(&self, level: LevelCode) -> QualityIndex {
        self.qualities[level.get() as usize - 1]
    }

    pub fn qualities(&self) -> [u8; 5] {
        self.qualities.map(QualityIndex::get)
    }

    /// Dash-joined form, safe inside a CSV field.
    pub fn label(&self) -> String {
        self.qualities().map(|q| q.to_string()).join("-")
    }
}

impl Default for QualityProfile {
    fn default() -> Self {
        QualityProfile::new([2, 3, 4, 5, 6]).expect("default profile is valid")
    }
}

impl fmt::Display for QualityProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.qualities().map(|q| q.to_string()).join(","))
    }
}

impl FromStr for QualityProfile {
    type Err = PipelineError;

    /// Accepts five comma- or dash-separated indices, e.g. `2,3,4,5,6`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split([',', '-']).map(str::trim).collect();
        let bad = || PipelineError::Profile(format!("expected five quality indices, got {s:?}"));
        if parts.len() != 5 {
            return Err(bad());
        }
        let mut qs = [0u8; 5];
        for (slot, p) in qs.iter_mut().zip(parts) {
            *slot = p.parse().map_err(|_| bad())?;
        }
        QualityProfile::new(qs)
    }
}

/// Keep units with level ≤ `max_level`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LevelFilter {
    pub max_level: LevelCode,
}

impl LevelFilter {
    pub const ALL: LevelFilter = LevelFilter { max_level: LevelCode::BACKGROUND };

    pub fn new(max_level: u8) -> Result<Self, ContainerError> {
        Ok(LevelFilter { max_level: LevelCode::new(max_level)? })
    }

    pub fn keeps(&self, level: LevelCode) -> bool {
        level <= self.max_level
    }
}

fn encode_object(
    img: &Image,
    obj: &GroundedObject,
    level: LevelCode,
    q: QualityIndex,
) -> Result<RegionUnit, PipelineError> {
    let crop = img.crop(obj.bbox)?;
    let payload = encode_region(&crop, obj.mask.as_ref(), q)?;
    Ok(RegionUnit {
        level,
        object_id: obj.id,
        bbox: obj.bbox,
        quality: q,
        mask_bytes: obj.mask.as_ref().map(mask_rle_encode),
        payload: payload.bytes,
    })
}

/// Encodes every object at its level's quality plus a full-frame background
/// unit, and serializes them in importance order.
pub fn encode_image(
    img: &Image,
    priors: &SemanticPriors,
    ranking: &Ranking,
    profile: &QualityProfile,
) -> Result<Vec<u8>, PipelineError> {
    priors.check_dimensions(img.width(), img.height())?;
    priors.validate()?;
    let groups = group_by_level(priors, ranking)?;
    let mut jobs: Vec<(&GroundedObject, LevelCode)> = Vec::with_capacity(priors.objects.len());
    for (i, group) in groups.levels.iter().enumerate() {
        let level = LevelCode::new(i as u8 + 1)?;
        jobs.extend(group.iter().map(|&o| (o, level)));
    }
    jobs.extend(groups.other.iter().map(|&o| (o, LevelCode::OTHER)));

    let mut units = jobs
        .par_iter()
        .map(|&(o, level)| encode_object(img, o, level, profile.quality_for(level)))
        .collect::<Result<Vec<_>, _>>()?;

    let bg_q = profile.quality_for(LevelCode::BACKGROUND);
    units.push(RegionUnit {
        level: LevelCode::BACKGROUND,
        object_id: 0,
        bbox: img.full_rect(),
        quality: bg_q,
        mask_bytes: None,
        payload: encode_region(img, None, bg_q)?.bytes,
    });

    let stream = StructuredBitstream { width: img.width(), height: img.height(), mean_color: img.mean_color(), units };
    Ok(stream.serialize()?)
}

/// Draw order: background first, L1 last, ascending id within a level.
pub fn composite_order(units: &[RegionUnit]) -> Vec<&RegionUnit> {
    let mut order: Vec<&RegionUnit> = units.iter().collect();
    order.sort_by(|a, b| b.level.cmp(&a.level).then(a.object_id.cmp(&b.object_id)));
    order
}

struct DecodedUnit {
    x: u32,
    y: u32,
    pixels: Image,
    mask: Option<Mask>,
}

fn decode_unit(u: &RegionUnit) -> Result<DecodedUnit, CodecError> {
    let pixels = decode_region(&u.payload, u.bbox.w, u.bbox.h, u.quality)?;
    let mask = u.mask_bytes.as_deref().map(|m| mask_rle_decode(m, u.bbox.w, u.bbox.h)).transpose()?;
    Ok(DecodedUnit { x: u.bbox.x, y: u.bbox.y, pixels, mask })
}

/// Reconstructs the frame from the units `filter` keeps. Areas no unit
/// covers show the header's mean color.
pub fn decode_image(bytes: &[u8], filter: LevelFilter) -> Result<Image, PipelineError> {
    let stream = container::parse(bytes)?;
    let kept: Vec<RegionUnit> = stream.units.into_iter().filter(|u| filter.keeps(u.level)).collect();
    let order = composite_order(&kept);
    let decoded = order.par_iter().map(|u| decode_unit(u)).collect::<Result<Vec<_>, _>>()?;
    let mut canvas = Image::filled(stream.width, stream.height, stream.mean_color)?;
    for d in &decoded {
        for y in 0..d.pixels.height() {
            for x in 0..d.pixels.width() {
                if d.mask.as_ref().is_none_or(|m| m.get(x, y)) {
                    canvas.set_pixel(d.x + x, d.y + y, d.pixels.pixel(x, y));
                }
            }
        }
    }
    Ok(canvas)
}

/// Decodes a single unit's pixels at bbox resolution.
pub fn decode_unit_pixels(unit: &RegionUnit) -> Result<Image, CodecError> {
    regioncodec::decode_region(&unit.payload, unit.bbox.w, unit.bbox.h, unit.quality)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Rect;
    use crate::priors::ImportanceLevel;

    fn gradient(w: u32, h: u32) -> Image {
        let mut px = Vec::with_capacity((w * h * 3) as usize);
        for y in 0..h {
            for x in 0..w {
                px.extend_from_slice(&[(x * 7 % 256) as u8, (y * 5 % 256) as u8, ((x + y) * 3 % 256) as u8]);
            }
        }
        Image::from_raw(w, h, px).unwrap()
    }

    fn obj(id: u16, r: Rect) -> GroundedObject {
        GroundedObject { id, label: "thing".into(), bbox: r, score: 1.0, mask: None }
    }

    fn priors(img: &Image, objects: Vec<GroundedObject>) -> SemanticPriors {
        SemanticPriors { image_width: img.width(), image_height: img.height(), objects, captions: None, ranking: None }
    }

    #[test]
    fn profile_parsing() {
        assert_eq!("2,3,4,5,6".parse::<QualityProfile>().unwrap(), QualityProfile::default());
        assert_eq!(QualityProfile::default().label(), "2-3-4-5-6");
        assert!("3,2,4,5,6".parse::<QualityProfile>().is_err());
        assert!("2,3,4,5".parse::<QualityProfile>().is_err());
        assert!("0,3,4,5,6".parse::<QualityProfile>().is_err());
    }

    #[test]
    fn zero_objects_yield_background_only() {
        let img = gradient(24, 16);
        let bytes = encode_image(&img, &priors(&img, vec![]), &Ranking::new(), &QualityProfile::default()).unwrap();
        let s = container::parse(&bytes).unwrap();
        assert_eq!(s.units.len(), 1);
        assert_eq!(s.units[0].level, LevelCode::BACKGROUND);
    }

    #[test]
    fn two_ranked_objects_are_ordered() {
        let img = gradient(32, 32);
        let p = priors(&img, vec![obj(2, Rect::new(16, 16, 8, 8)), obj(1, Rect::new(0, 0, 8, 8))]);
        let mut r = Ranking::new();
        r.assign(2, ImportanceLevel::L1).unwrap();
        r.assign(1, ImportanceLevel::L2).unwrap();
        let bytes = encode_image(&img, &p, &r, &QualityProfile::default()).unwrap();
        let s = container::parse(&bytes).unwrap();
        let levels: Vec<(u8, u16)> = s.units.iter().map(|u| (u.level.get(), u.object_id)).collect();
        assert_eq!(levels, vec![(1, 2), (2, 1), (5, 0)]);
        let again = encode_image(&img, &p, &r, &QualityProfile::default()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn mismatched_priors_rejected() {
        let img = gradient(16, 16);
        let mut p = priors(&img, vec![]);
        p.image_width = 17;
        assert!(matches!(
            encode_image(&img, &p, &Ranking::new(), &QualityProfile::default()),
            Err(PipelineError::Priors(PriorsError::DimensionMismatch { .. }))
        ));
    }

    #[test]
    fn filter_without_l1_units_gives_mean_color() {
        let s = StructuredBitstream { width: 9, height: 5, mean_color: [90, 120, 30], units: vec![] };
        let bytes = s.serialize().unwrap();
        let img = decode_image(&bytes, LevelFilter::new(1).unwrap()).unwrap();
        assert_eq!(img, Image::filled(9, 5, [90, 120, 30]).unwrap());
    }

    #[test]
    fn composite_order_examples() {
        let u = |level: u8, id: u16| RegionUnit {
            level: LevelCode::new(level).unwrap(),
            object_id: id,
            bbox: Rect::new(0, 0, 1, 1),
            quality: QualityIndex::MIN,
            mask_bytes: None,
            payload: vec![],
        };
        let key = |v: Vec<&RegionUnit>| v.iter().map(|u| (u.level.get(), u.object_id)).collect::<Vec<_>>();
        assert_eq!(key(composite_order(&[u(1, 1), u(5, 0)])), vec![(5, 0), (1, 1)]);
        assert_eq!(key(composite_order(&[u(2, 4), u(2, 2)])), vec![(2, 2), (2, 4)]);
        assert_eq!(key(composite_order(&[u(3, 9)])), vec![(3, 9)]);
    }

    #[test]
    fn masked_unit_only_writes_inside_mask() {
        let img = gradient(16, 16);
        let mut m = Mask::filled(8, 8, false);
        m.set(2, 3, true);
        let mut o = obj(1, Rect::new(4, 4, 8, 8));
        o.mask = Some(m);
        let p = priors(&img, vec![o]);
        let r = Ranking::from_levels([&[1], &[], &[]]).unwrap();
        let bytes = encode_image(&img, &p, &r, &QualityProfile::default()).unwrap();
        let s = container::parse(&bytes).unwrap();
        let l1 = decode_image(&bytes, LevelFilter::new(1).unwrap()).unwrap();
        let unit_px = decode_unit_pixels(&s.units[0]).unwrap();
        let mean = s.mean_color;
        for y in 0..16 {
            for x in 0..16 {
                let expected = if (x, y) == (6, 7) { unit_px.pixel(2, 3) } else { mean };
                assert_eq!(l1.pixel(x, y), expected, "({x},{y})");
            }
        }
    }
}
