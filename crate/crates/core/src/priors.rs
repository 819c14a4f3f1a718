//! Semantic priors: grounded objects, captions, importance ranking.
//!
//! The sidecar is JSON:
//!
//! ```json
//! {
//!   "image": {"width": 64, "height": 48},
//!   "objects": [{"id": 1, "label": "dog", "bbox": [4, 4, 16, 12], "score": 0.9, "mask_rle": [0, 192]}],
//!   "captions": {"short": "a dog", "long": "a dog lying on grass"},
//!   "ranking": {"L1": [1], "L2": [], "L3": []}
//! }
//! ```
//!
//! `mask_rle` lists alternating run lengths over the bbox in row-major
//! order, starting with a run of zeros, and must sum to `w * h`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{ImageError, Rect};

#[derive(Debug, Error)]
pub enum PriorsError {
    #[error("sidecar syntax: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("object id must be positive")]
    ZeroId,
    #[error("duplicate object id {0}")]
    DuplicateId(u16),
    #[error("object {id}: {source}")]
    BadBbox { id: u16, source: ImageError },
    #[error("object {id}: score {score} outside [0,1]")]
    BadScore { id: u16, score: f64 },
    #[error("object {id}: mask runs cover {actual} pixels, bbox has {expected}")]
    MaskLength { id: u16, expected: u64, actual: u64 },
    #[error("ranking references unknown object id {0}")]
    UnknownRankedId(u16),
    #[error("object id {0} ranked in more than one level")]
    RankedTwice(u16),
    #[error("captions must be non-empty")]
    EmptyCaption,
    #[error("ranking requires at least one object")]
    NoObjects,
    #[error("priors are for a {priors_w}x{priors_h} image but the image is {image_w}x{image_h}")]
    DimensionMismatch { priors_w: u32, priors_h: u32, image_w: u32, image_h: u32 },
}

/// Binary bitmap, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: u32,
    height: u32,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Option<Self> {
        (bits.len() as u64 == width as u64 * height as u64).then_some(Mask { width, height, bits })
    }

    pub fn filled(width: u32, height: u32, value: bool) -> Self {
        Mask { width, height, bits: vec![value; width as usize * height as usize] }
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

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        self.bits[y as usize * self.width as usize + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: bool) {
        self.bits[y as usize * self.width as usize + x as usize] = v;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Alternating runs starting with a zero run (possibly of length 0).
    pub fn to_runs(&self) -> Vec<u64> {
        let mut runs = Vec::new();
        let mut current = false;
        let mut len = 0u64;
        for &b in &self.bits {
            if b == current {
                len += 1;
            } else {
                runs.push(len);
                current = b;
                len = 1;
            }
        }
        runs.push(len);
        runs
    }

    /// Inverse of [`Mask::to_runs`]; `None` if the runs do not sum to `width * height`.
    pub fn from_runs(width: u32, height: u32, runs: &[u64]) -> Option<Self> {
        let total = width as u64 * height as u64;
        let mut sum = 0u64;
        for &r in runs {
            sum = sum.checked_add(r)?;
        }
        if sum != total {
            return None;
        }
        let mut bits = Vec::with_capacity(total as usize);
        let mut value = false;
        for &r in runs {
            bits.extend(std::iter::repeat_n(value, r as usize));
            value = !value;
        }
        Some(Mask { width, height, bits })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundedObject {
    pub id: u16,
    pub label: String,
    pub bbox: Rect,
    pub score: f64,
    /// At bbox resolution.
    pub mask: Option<Mask>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captions {
    pub short: String,
    pub long: String,
}

impl Captions {
    pub fn new(short: impl Into<String>, long: impl Into<String>) -> Result<Self, PriorsError> {
        let (short, long) = (short.into(), long.into());
        if short.trim().is_empty() || long.trim().is_empty() {
            return Err(PriorsError::EmptyCaption);
        }
        Ok(Captions { short, long })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ImportanceLevel {
    L1,
    L2,
    L3,
}

impl ImportanceLevel {
    pub const ALL: [ImportanceLevel; 3] = [ImportanceLevel::L1, ImportanceLevel::L2, ImportanceLevel::L3];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Object id → importance level. Ids not present are "other".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ranking {
    level_of: BTreeMap<u16, ImportanceLevel>,
}

impl Ranking {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a ranking from per-level id lists, rejecting ids listed twice.
    pub fn from_levels(levels: [&[u16]; 3]) -> Result<Self, PriorsError> {
        let mut r = Ranking::new();
        for (level, ids) in ImportanceLevel::ALL.into_iter().zip(levels) {
            for &id in ids {
                r.assign(id, level)?;
            }
        }
        Ok(r)
    }

    pub fn assign(&mut self, id: u16, level: ImportanceLevel) -> Result<(), PriorsError> {
        if self.level_of.insert(id, level).is_some() {
            return Err(PriorsError::RankedTwice(id));
        }
        Ok(())
    }

    pub fn level_of(&self, id: u16) -> Option<ImportanceLevel> {
        self.level_of.get(&id).copied()
    }

    pub fn is_empty(&self) -> bool {
        self.level_of.is_empty()
    }

    pub fn len(&self) -> usize {
        self.level_of.len()
    }

    /// Ids at `level`, ascending.
    pub fn ids_at(&self, level: ImportanceLevel) -> Vec<u16> {
        self.level_of.iter().filter(|(_, &l)| l == level).map(|(&id, _)| id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u16, ImportanceLevel)> + '_ {
        self.level_of.iter().map(|(&id, &l)| (id, l))
    }

    /// Every ranked id must name an object in `priors`.
    pub fn check_against(&self, priors: &SemanticPriors) -> Result<(), PriorsError> {
        let known: BTreeSet<u16> = priors.objects.iter().map(|o| o.id).collect();
        match self.level_of.keys().find(|id| !known.contains(id)) {
            Some(&id) => Err(PriorsError::UnknownRankedId(id)),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPriors {
    pub image_width: u32,
    pub image_height: u32,
    pub objects: Vec<GroundedObject>,
    pub captions: Option<Captions>,
    pub ranking: Option<Ranking>,
}

impl SemanticPriors {
    /// Enforces every object and ranking invariant against the image frame.
    pub fn validate(&self) -> Result<(), PriorsError> {
        let mut seen = BTreeSet::new();
        for o in &self.objects {
            if o.id == 0 {
                return Err(PriorsError::ZeroId);
            }
            if !seen.insert(o.id) {
                return Err(PriorsError::DuplicateId(o.id));
            }
            o.bbox
                .validate_within(self.image_width, self.image_height)
                .map_err(|source| PriorsError::BadBbox { id: o.id, source })?;
            if !(0.0..=1.0).contains(&o.score) {
                return Err(PriorsError::BadScore { id: o.id, score: o.score });
            }
            if let Some(m) = &o.mask {
                if (m.width, m.height) != (o.bbox.w, o.bbox.h) {
                    return Err(PriorsError::MaskLength {
                        id: o.id,
                        expected: o.bbox.area(),
                        actual: m.bits.len() as u64,
                    });
                }
            }
        }
        if let Some(c) = &self.captions {
            if c.short.trim().is_empty() || c.long.trim().is_empty() {
                return Err(PriorsError::EmptyCaption);
            }
        }
        if let Some(r) = &self.ranking {
            r.check_against(self)?;
        }
        Ok(())
    }

    pub fn check_dimensions(&self, width: u32, height: u32) -> Result<(), PriorsError> {
        if (self.image_width, self.image_height) != (width, height) {
            return Err(PriorsError::DimensionMismatch {
                priors_w: self.image_width,
                priors_h: self.image_height,
                image_w: width,
                image_h: height,
            });
        }
        Ok(())
    }

    pub fn object(&self, id: u16) -> Option<&GroundedObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn to_json(&self) -> String {
        let doc = SidecarDoc::from(self);
        serde_json::to_string_pretty(&doc).expect("sidecar serializes")
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarImage {
    width: u32,
    height: u32,
}

#[derive(Serialize, Deserialize)]
struct SidecarObject {
    id: u16,
    label: String,
    bbox: [u32; 4],
    score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask_rle: Option<Vec<u64>>,
}

#[derive(Serialize, Deserialize)]
struct SidecarCaptions {
    short: String,
    long: String,
}

#[derive(Serialize, Deserialize, Default)]
struct SidecarRanking {
    #[serde(rename = "L1", default)]
    l1: Vec<u16>,
    #[serde(rename = "L2", default)]
    l2: Vec<u16>,
    #[serde(rename = "L3", default)]
    l3: Vec<u16>,
}

#[derive(Serialize, Deserialize)]
struct SidecarDoc {
    image: SidecarImage,
    objects: Vec<SidecarObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    captions: Option<SidecarCaptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ranking: Option<SidecarRanking>,
}

impl From<&SemanticPriors> for SidecarDoc {
    fn from(p: &SemanticPriors) -> Self {
        SidecarDoc {
            image: SidecarImage { width: p.image_width, height: p.image_height },
            objects: p
                .objects
                .iter()
                .map(|o| SidecarObject {
                    id: o.id,
                    label: o.label.clone(),
                    bbox: [o.bbox.x, o.bbox.y, o.bbox.w, o.bbox.h],
                    score: o.score,
                    mask_rle: o.mask.as_ref().map(Mask::to_runs),
                })
                .collect(),
            captions: p.captions.as_ref().map(|c| SidecarCaptions { short: c.short.clone(), long: c.long.clone() }),
            ranking: p.ranking.as_ref().map(|r| SidecarRanking {
                l1: r.ids_at(ImportanceLevel::L1),
                l2: r.ids_at(ImportanceLevel::L2),
                l3: r.ids_at(ImportanceLevel::L3),
            }),
        }
    }
}

/// Parses and fully validates a sidecar document.
pub fn parse_priors(text: &str) -> Result<SemanticPriors, PriorsError> {
    let doc: SidecarDoc = serde_json::from_str(text)?;
    let mut objects = Vec::with_capacity(doc.objects.len());
    for o in doc.objects {
        let [x, y, w, h] = o.bbox;
        let bbox = Rect::new(x, y, w, h);
        let mask = match o.mask_rle {
            None => None,
            Some(runs) => Some(Mask::from_runs(w, h, &runs).ok_or_else(|| PriorsError::MaskLength {
                id: o.id,
                expected: bbox.area(),
                actual: runs.iter().fold(0u64, |a, &r| a.saturating_add(r)),
            })?),
        };
        objects.push(GroundedObject { id: o.id, label: o.label, bbox, score: o.score, mask });
    }
    let captions = doc.captions.map(|c| Captions::new(c.short, c.long)).transpose()?;
    let ranking = doc.ranking.map(|r| Ranking::from_levels([&r.l1, &r.l2, &r.l3])).transpose()?;
    let priors =
        SemanticPriors { image_width: doc.image.width, image_height: doc.image.height, objects, captions, ranking };
    priors.validate()?;
    Ok(priors)
}

/// Salience used by [`heuristic_rank`]: half relative size, half centrality.
///
/// `0.5 * sqrt(area / (W*H)) + 0.5 * (1 - dist(center, frame center) / half_diagonal)`
pub fn salience_score(bbox: Rect, width: u32, height: u32) -> f64 {
    let (fw, fh) = (width as f64, height as f64);
    let area_term = (bbox.area() as f64 / (fw * fh)).sqrt();
    let cx = bbox.x as f64 + bbox.w as f64 / 2.0;
    let cy = bbox.y as f64 + bbox.h as f64 / 2.0;
    let half_diag = fw.hypot(fh) / 2.0;
    let dist = (cx - fw / 2.0).hypot(cy - fh / 2.0);
    0.5 * area_term + 0.5 * (1.0 - dist / half_diag)
}

/// Deterministic offline ranker. Objects are sorted by [`salience_score`]
/// (ties by ascending id); the first `ceil(n/3)` become L1, the next
/// `ceil(n/3)` L2, the rest L3.
pub fn heuristic_rank(priors: &SemanticPriors) -> Result<Ranking, PriorsError> {
    let n = priors.objects.len();
    if n == 0 {
        return Err(PriorsError::NoObjects);
    }
    let mut scored: Vec<(f64, u16)> = priors
        .objects
        .iter()
        .map(|o| (salience_score(o.bbox, priors.image_width, priors.image_height), o.id))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let third = n.div_ceil(3);
    let mut ranking = Ranking::new();
    for (i, &(_, id)) in scored.iter().enumerate() {
        let level = match i / third {
            0 => ImportanceLevel::L1,
            1 => ImportanceLevel::L2,
            _ => ImportanceLevel::L3,
        };
        ranking.assign(id, level)?;
    }
    Ok(ranking)
}

/// Objects partitioned by importance, each group in ascending id order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LevelGroups<'a> {
    pub levels: [Vec<&'a GroundedObject>; 3],
    pub other: Vec<&'a GroundedObject>,
}

impl LevelGroups<'_> {
    pub fn ids(&self) -> [Vec<u16>; 4] {
        let ids = |g: &Vec<&GroundedObject>| g.iter().map(|o| o.id).collect::<Vec<_>>();
        [ids(&self.levels[0]), ids(&self.levels[1]), ids(&self.levels[2]), ids(&self.other)]
    }
}

pub fn group_by_level<'a>(priors: &'a SemanticPriors, ranking: &Ranking) -> Result<LevelGroups<'a>, PriorsError> {
    ranking.check_against(priors)?;
    let mut sorted: Vec<&GroundedObject> = priors.objects.iter().collect();
    sorted.sort_by_key(|o| o.id);
    let mut groups = LevelGroups::default();
    for o in sorted {
        match ranking.level_of(o.id) {
            Some(l) => groups.levels[l.index()].push(o),
            None => groups.other.push(o),
        }
    }
    Ok(groups)
}
