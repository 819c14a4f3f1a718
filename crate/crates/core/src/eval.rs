//! Rate-distortion instrumentation: bpp, PSNR, RD sweeps and BD-rate.

use thiserror::Error;

use crate::container::{self, LevelCode};
use crate::image::Image;
use crate::pipeline::{decode_image, encode_image, LevelFilter, PipelineError, QualityProfile};
use crate::priors::{Mask, Ranking, SemanticPriors};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("images differ in size: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("mask is {0}x{1}, images are {2}x{3}")]
    MaskMismatch(u32, u32, u32, u32),
    #[error("mask selects no pixels")]
    EmptyMask,
    #[error("rate-distortion curve needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("invalid rate-distortion curve: {0}")]
    InvalidCurve(&'static str),
    #[error("curves share no quality interval")]
    NoOverlap,
    #[error("polynomial fit is degenerate (singular normal equations)")]
    DegenerateFit,
    #[error("rd table: {0}")]
    Table(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Bits per pixel of a stream of `len` bytes.
pub fn bpp(len: usize, width: u32, height: u32) -> f64 {
    8.0 * len as f64 / (width as f64 * height as f64)
}

/// PSNR in dB over RGB samples, optionally restricted to a full-frame mask.
/// Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&Mask>) -> Result<f64, EvalError> {
    if (a.width(), a.height()) != (b.width(), b.height()) {
        return Err(EvalError::DimensionMismatch(a.width(), a.height(), b.width(), b.height()));
    }
    if let Some(m) = mask {
        if (m.width(), m.height()) != (a.width(), a.height()) {
            return Err(EvalError::MaskMismatch(m.width(), m.height(), a.width(), a.height()));
        }
    }
    let mut sse = 0u64;
    let mut n = 0u64;
    for (i, (pa, pb)) in a.as_bytes().chunks_exact(3).zip(b.as_bytes().chunks_exact(3)).enumerate() {
        if mask.is_some_and(|m| !m.bits()[i]) {
            continue;
        }
        for c in 0..3 {
            let d = pa[c] as i64 - pb[c] as i64;
            sse += (d * d) as u64;
        }
        n += 3;
    }
    if n == 0 {
        return Err(EvalError::EmptyMask);
    }
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / n as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdPoint {
    /// Bits per pixel, > 0.
    pub rate: f64,
    pub quality: f64,
}

/// At least four points with strictly increasing rate and non-decreasing quality.
#[derive(Debug, Clone, PartialEq)]
pub struct RdCurve {
    points: Vec<RdPoint>,
}

impl RdCurve {
    pub fn new(points: Vec<RdPoint>) -> Result<Self, EvalError> {
        if points.len() < 4 {
            return Err(EvalError::TooFewPoints(points.len()));
        }
        if points.iter().any(|p| !(p.rate.is_finite() && p.rate > 0.0)) {
            return Err(EvalError::InvalidCurve("rates must be finite and positive"));
        }
        if points.iter().any(|p| !p.quality.is_finite()) {
            return Err(EvalError::InvalidCurve("qualities must be finite"));
        }
        for w in points.windows(2) {
            if w[1].rate <= w[0].rate {
                return Err(EvalError::InvalidCurve("rates must be strictly increasing"));
            }
            if w[1].quality < w[0].quality {
                return Err(EvalError::InvalidCurve("quality must be non-decreasing"));
            }
        }
        Ok(RdCurve { points })
    }

    /// Sorts `points` by rate before validating.
    pub fn from_unsorted(mut points: Vec<RdPoint>) -> Result<Self, EvalError> {
        points.sort_by(|a, b| a.rate.total_cmp(&b.rate));
        RdCurve::new(points)
    }

    pub fn points(&self) -> &[RdPoint] {
        &self.points
    }

    fn quality_range(&self) -> (f64, f64) {
        // Quality is non-decreasing along the curve.
        (self.points[0].quality, self.points[self.points.len() - 1].quality)
    }
}

/// Cubic `c0 + c1 t + c2 t^2 + c3 t^3` in the normalized variable
/// `t = (quality - center) / scale`.
#[derive(Debug, Clone, Copy)]
struct LogRateFit {
    coef: [f64; 4],
    center: f64,
    scale: f64,
}

impl LogRateFit {
    /// Least-squares fit of log10(rate) against quality via normal equations.
    fn fit(curve: &RdCurve) -> Result<Self, EvalError> {
        let pts = curve.points();
        let n = pts.len() as f64;
        let center = pts.iter().map(|p| p.quality).sum::<f64>() / n;
        let scale = pts.iter().map(|p| (p.quality - center).abs()).fold(0.0, f64::max);
        if scale == 0.0 {
            return Err(EvalError::DegenerateFit);
        }
        let mut ata = [[0.0f64; 4]; 4];
        let mut atb = [0.0f64; 4];
        for p in pts {
            let t = (p.quality - center) / scale;
            let row = [1.0, t, t * t, t * t * t];
            let y = p.rate.log10();
            for i in 0..4 {
                atb[i] += row[i] * y;
                for j in 0..4 {
                    ata[i][j] += row[i] * row[j];
                }
            }
        }
        let coef = solve4(ata, atb).ok_or(EvalError::DegenerateFit)?;
        Ok(LogRateFit { coef, center, scale })
    }

    /// Exact integral of the fitted polynomial over `[lo, hi]` in quality units.
    fn integral(&self, lo: f64, hi: f64) -> f64 {
        let anti = |q: f64| {
            let t = (q - self.center) / self.scale;
            let [c0, c1, c2, c3] = self.coef;
            t * (c0 + t * (c1 / 2.0 + t * (c2 / 3.0 + t * c3 / 4.0)))
        };
        (anti(hi) - anti(lo)) * self.scale
    }
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve4(mut a: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let norm = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = norm * 1e-12;
    for col in 0..4 {
        let pivot = (col..4).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= tol {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..4 {
            let f = a[row][col] / a[col][col];
            let pivot_row = a[col];
            for (dst, src) in a[row].iter_mut().zip(pivot_row).skip(col) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    Some(x)
}

/// Bjøntegaard delta rate of `test` against `anchor`, in percent.
/// Negative values mean `test` needs fewer bits for the same quality.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64, EvalError> {
    let (a_lo, a_hi) = anchor.quality_range();
    let (t_lo, t_hi) = test.quality_range();
    let lo = a_lo.max(t_lo);
    let hi = a_hi.min(t_hi);
    if hi <= lo {
        return Err(EvalError::NoOverlap);
    }
    let fa = LogRateFit::fit(anchor)?;
    let ft = LogRateFit::fit(test)?;
    let delta = (ft.integral(lo, hi) - fa.integral(lo, hi)) / (hi - lo);
    Ok((10f64.powf(delta) - 1.0) * 100.0)
}

/// One rate-distortion measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct RdRow {
    pub filter: LevelFilter,
    pub profile: QualityProfile,
    pub bpp: f64,
    pub psnr_full: f64,
    /// NaN when no object is ranked.
    pub psnr_objects: f64,
}

/// Union of ranked objects' masks (or boxes, when maskless) at frame resolution.
pub fn ranked_object_mask(priors: &SemanticPriors, ranking: &Ranking) -> Mask {
    let mut m = Mask::filled(priors.image_width, priors.image_height, false);
    for o in priors.objects.iter().filter(|o| ranking.level_of(o.id).is_some()) {
        for y in 0..o.bbox.h {
            for x in 0..o.bbox.w {
                if o.mask.as_ref().is_none_or(|mk| mk.get(x, y)) {
                    m.set(o.bbox.x + x, o.bbox.y + y, true);
                }
            }
        }
    }
    m
}

/// Encodes once per profile, then truncates, decodes and measures per filter.
/// Rows come out in (filter, profile) order.
pub fn rd_sweep(
    img: &Image,
    priors: &SemanticPriors,
    ranking: &Ranking,
    filters: &[LevelFilter],
    profiles: &[QualityProfile],
) -> Result<Vec<RdRow>, EvalError> {
    let streams = profiles.iter().map(|p| encode_image(img, priors, ranking, p)).collect::<Result<Vec<_>, _>>()?;
    let objects = ranked_object_mask(priors, ranking);
    let has_objects = objects.count_ones() > 0;
    let mut rows = Vec::with_capacity(filters.len() * profiles.len());
    for &filter in filters {
        for (profile, stream) in profiles.iter().zip(&streams) {
            let truncated = container::truncate(stream, filter.max_level).map_err(PipelineError::from)?;
            let rec = decode_image(&truncated, LevelFilter::ALL)?;
            let psnr_objects = if has_objects { psnr(img, &rec, Some(&objects))? } else { f64::NAN };
            rows.push(RdRow {
                filter,
                profile: *profile,
                bpp: bpp(truncated.len(), img.width(), img.height()),
                psnr_full: psnr(img, &rec, None)?,
                psnr_objects,
            });
        }
    }
    Ok(rows)
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed.
pub fn fmt_sig6(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        strip_zeros(&format!("{v:.*}", (5 - exp) as usize)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const CSV_HEADER: &str = "filter,profile,bpp,psnr_full,psnr_objects";

pub fn rows_to_csv(rows: &[RdRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.filter.max_level.get(),
            r.profile.label(),
            fmt_sig6(r.bpp),
            fmt_sig6(r.psnr_full),
            fmt_sig6(r.psnr_objects)
        ));
    }
    out
}

/// Which quality column of an RD table feeds a curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QualityColumn {
    Full,
    Objects,
}

/// Reads an RD table written by [`rows_to_csv`] into a curve, optionally
/// keeping only rows of one filter level.
pub fn curve_from_csv(text: &str, column: QualityColumn, filter: Option<LevelCode>) -> Result<RdCurve, EvalError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(EvalError::Table(format!("expected header {CSV_HEADER:?}"))),
    }
    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |what: &str| EvalError::Table(format!("row {}: {what}", i + 1));
        if fields.len() != 5 {
            return Err(bad("expected 5 fields"));
        }
        let level: u8 = fields[0].parse().map_err(|_| bad("bad filter"))?;
        if filter.is_some_and(|f| f.get() != level) {
            continue;
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let rate = num(fields[2])?;
        let quality = match column {
            QualityColumn::Full => num(fields[3])?,
            QualityColumn::Objects => num(fields[4])?,
        };
        points.push(RdPoint { rate, quality });
    }
    RdCurve::from_unsorted(points)
}
