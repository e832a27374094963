//! Context-change detection by normalized cross-correlation.

use serde::{Deserialize, Serialize};

use crate::catalog::{iou, BoundingBox, GrayscaleImage};
use crate::error::{Error, Result};

/// Side length of the square grid both box crops are resampled to.
pub const CROP_SIZE: u32 = 64;

/// Correlation in `[-1, 1]`. Never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityScore(f64);

impl SimilarityScore {
    pub const ZERO: SimilarityScore = SimilarityScore(0.0);
    pub const ONE: SimilarityScore = SimilarityScore(1.0);

    /// Clamps into `[-1, 1]`; NaN maps to 0.
    pub fn new(value: f64) -> Self {
        if value.is_nan() {
            Self(0.0)
        } else {
            Self(value.clamp(-1.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn min(self, other: SimilarityScore) -> SimilarityScore {
        if other.0 < self.0 {
            other
        } else {
            self
        }
    }
}

/// Normalized cross-correlation of two equally sized frames.
///
/// Sums are accumulated exactly in integers, so the result is bit-for-bit
/// symmetric in its arguments. If either frame is constant the correlation is
/// undefined: two constant frames with the same value score 1, anything else
/// scores 0.
pub fn ncc(p: &GrayscaleImage, c: &GrayscaleImage) -> Result<SimilarityScore> {
    if (p.width(), p.height()) != (c.width(), c.height()) {
        return Err(Error::DimensionMismatch(
            p.width(),
            p.height(),
            c.width(),
            c.height(),
        ));
    }
    Ok(ncc_u8(p.pixels(), c.pixels()))
}

fn ncc_u8(p: &[u8], c: &[u8]) -> SimilarityScore {
    debug_assert_eq!(p.len(), c.len());
    let (mut sp, mut sc, mut spp, mut scc, mut spc) = (0u64, 0u64, 0u64, 0u64, 0u64);
    for (&a, &b) in p.iter().zip(c) {
        let (a, b) = (a as u64, b as u64);
        sp += a;
        sc += b;
        spp += a * a;
        scc += b * b;
        spc += a * b;
    }
    let n = p.len() as i128;
    let (sp, sc) = (sp as i128, sc as i128);
    let cov = n * spc as i128 - sp * sc;
    let var_p = n * spp as i128 - sp * sp;
    let var_c = n * scc as i128 - sc * sc;
    if var_p == 0 || var_c == 0 {
        return degenerate(var_p == 0 && var_c == 0 && sp == sc);
    }
    SimilarityScore::new(cov as f64 / (var_c as f64 * var_p as f64).sqrt())
}

fn degenerate(equal_flats: bool) -> SimilarityScore {
    if equal_flats {
        SimilarityScore::ONE
    } else {
        SimilarityScore::ZERO
    }
}

/// NCC over arbitrary real-valued samples, evaluated with explicit means.
pub fn ncc_values(p: &[f64], c: &[f64]) -> Result<SimilarityScore> {
    if p.len() != c.len() {
        return Err(Error::InvalidParameter(format!(
            "sample lengths differ: {} vs {}",
            p.len(),
            c.len()
        )));
    }
    if p.is_empty() {
        return Ok(SimilarityScore::ZERO);
    }
    let n = p.len() as f64;
    let mp = p.iter().sum::<f64>() / n;
    let mc = c.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vc) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(c) {
        let (da, db) = (a - mp, b - mc);
        cov += da * db;
        vp += da * da;
        vc += db * db;
    }
    if vp == 0.0 || vc == 0.0 {
        return Ok(degenerate(vp == 0.0 && vc == 0.0 && mp == mc));
    }
    Ok(SimilarityScore::new(cov / (vc * vp).sqrt()))
}

/// Crops `frame` to `bbox` and resamples the crop to `size × size` by nearest
/// neighbor. Returns `None` for zero-area boxes.
pub fn crop_resampled(
    frame: &GrayscaleImage,
    bbox: &BoundingBox,
    size: u32,
) -> Result<Option<GrayscaleImage>> {
    bbox.validate()?;
    if bbox.x_max > frame.width() as f64 || bbox.y_max > frame.height() as f64 {
        return Err(Error::BoxOutsideFrame(
            bbox.to_string(),
            frame.width(),
            frame.height(),
        ));
    }
    if bbox.area() <= 0.0 {
        return Ok(None);
    }
    let x0 = bbox.x_min.floor() as u32;
    let y0 = bbox.y_min.floor() as u32;
    let cw = (bbox.x_max.ceil() as u32).min(frame.width()) - x0;
    let ch = (bbox.y_max.ceil() as u32).min(frame.height()) - y0;
    if cw == 0 || ch == 0 {
        return Ok(None);
    }
    let sample = |i: u32, extent: u32| -> u32 {
        let v = ((2 * i as u64 + 1) * extent as u64) / (2 * size as u64);
        (v as u32).min(extent - 1)
    };
    let cols: Vec<u32> = (0..size).map(|i| x0 + sample(i, cw)).collect();
    let mut pixels = Vec::with_capacity(size as usize * size as usize);
    for j in 0..size {
        let y = y0 + sample(j, ch);
        pixels.extend(cols.iter().map(|&x| frame.get(x, y)));
    }
    GrayscaleImage::new(size, size, pixels).map(Some)
}

/// NCC between the contents of two boxes, after resampling both crops to a
/// common [`CROP_SIZE`] grid. A zero-area box scores 0.
pub fn bbox_similarity(
    prev_frame: &GrayscaleImage,
    prev_box: &BoundingBox,
    cur_frame: &GrayscaleImage,
    cur_box: &BoundingBox,
) -> Result<SimilarityScore> {
    let prev = crop_resampled(prev_frame, prev_box, CROP_SIZE)?;
    let cur = crop_resampled(cur_frame, cur_box, CROP_SIZE)?;
    match (prev, cur) {
        (Some(p), Some(c)) => Ok(ncc_u8(p.pixels(), c.pixels())),
        _ => Ok(SimilarityScore::ZERO),
    }
}

/// `min(frame NCC, box NCC)`. A missing box makes its term 0.
pub fn similarity(
    prev_frame: &GrayscaleImage,
    cur_frame: &GrayscaleImage,
    prev_box: Option<&BoundingBox>,
    cur_box: Option<&BoundingBox>,
) -> Result<SimilarityScore> {
    let frames = ncc(prev_frame, cur_frame)?;
    let boxes = match (prev_box, cur_box) {
        (Some(pb), Some(cb)) => bbox_similarity(prev_frame, pb, cur_frame, cb)?,
        _ => SimilarityScore::ZERO,
    };
    Ok(frames.min(boxes))
}

/// [`similarity`] for streams that may lack pixel data.
///
/// Without both frames the frame term is taken as 1 and the box term falls
/// back to the IoU of the two boxes; a missing box still scores 0.
pub fn similarity_with_fallback(
    prev_frame: Option<&GrayscaleImage>,
    cur_frame: Option<&GrayscaleImage>,
    prev_box: Option<&BoundingBox>,
    cur_box: Option<&BoundingBox>,
) -> Result<SimilarityScore> {
    match (prev_frame, cur_frame) {
        (Some(p), Some(c)) => similarity(p, c, prev_box, cur_box),
        _ => Ok(match (prev_box, cur_box) {
            (Some(pb), Some(cb)) => SimilarityScore::new(iou(pb, cb)),
            _ => SimilarityScore::ZERO,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(w: u32, h: u32, pixels: Vec<u8>) -> GrayscaleImage {
        GrayscaleImage::new(w, h, pixels).unwrap()
    }

    fn ramp(w: u32, h: u32) -> GrayscaleImage {
        GrayscaleImage::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 251) as u8).unwrap()
    }

    fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
        BoundingBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn self_and_inverse() {
        let x = ramp(40, 30);
        assert_eq!(ncc(&x, &x).unwrap().value(), 1.0);
        assert!((ncc(&x, &x.inverted()).unwrap().value() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_frames() {
        let flat = GrayscaleImage::filled(8, 8, 77).unwrap();
        let other_flat = GrayscaleImage::filled(8, 8, 78).unwrap();
        let x = ramp(8, 8);
        // denominator is exactly zero here
        assert_eq!(ncc(&flat, &x).unwrap().value(), 0.0);
        assert_eq!(ncc(&x, &flat).unwrap().value(), 0.0);
        assert_eq!(ncc(&flat, &flat).unwrap().value(), 1.0);
        assert_eq!(ncc(&flat, &other_flat).unwrap().value(), 0.0);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            ncc(&ramp(4, 4), &ramp(4, 5)),
            Err(Error::DimensionMismatch(4, 4, 4, 5))
        ));
    }

    #[test]
    fn matches_float_formula() {
        let p = ramp(16, 9);
        let c = GrayscaleImage::from_fn(16, 9, |x, y| ((x * x + 3 * y) % 256) as u8).unwrap();
        let fp: Vec<f64> = p.pixels().iter().map(|&v| v as f64).collect();
        let fc: Vec<f64> = c.pixels().iter().map(|&v| v as f64).collect();
        let a = ncc(&p, &c).unwrap().value();
        let b = ncc_values(&fp, &fc).unwrap().value();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn same_box_same_frame() {
        let f = ramp(100, 80);
        let b = bb(10.0, 12.0, 50.5, 40.0);
        assert_eq!(bbox_similarity(&f, &b, &f, &b).unwrap().value(), 1.0);
    }

    #[test]
    fn negated_crop() {
        let prev = ramp(100, 80);
        // current frame holds the negation of prev's box region at another spot
        let b_prev = bb(10.0, 10.0, 42.0, 42.0);
        let cur = GrayscaleImage::from_fn(100, 80, |x, y| {
            if (50..82).contains(&x) && (20..52).contains(&y) {
                255 - prev.get(x - 40, y - 10)
            } else {
                0
            }
        })
        .unwrap();
        let b_cur = bb(50.0, 20.0, 82.0, 52.0);
        let s = bbox_similarity(&prev, &b_prev, &cur, &b_cur).unwrap().value();
        assert!((s + 1.0).abs() < 1e-12, "{s}");
    }

    #[test]
    fn box_outside_frame() {
        let f = ramp(10, 10);
        let b = bb(5.0, 5.0, 11.0, 9.0);
        assert!(matches!(
            bbox_similarity(&f, &b, &f, &b),
            Err(Error::BoxOutsideFrame(..))
        ));
    }

    #[test]
    fn zero_area_box_scores_zero() {
        let f = ramp(10, 10);
        let ok = bb(1.0, 1.0, 6.0, 6.0);
        let flat = bb(3.0, 3.0, 3.0, 8.0);
        assert_eq!(bbox_similarity(&f, &ok, &f, &flat).unwrap().value(), 0.0);
    }

    #[test]
    fn similarity_takes_minimum() {
        let f = ramp(60, 60);
        let b = bb(5.0, 5.0, 30.0, 30.0);
        assert_eq!(similarity(&f, &f, Some(&b), Some(&b)).unwrap().value(), 1.0);
        assert_eq!(similarity(&f, &f, Some(&b), None).unwrap().value(), 0.0);
    }

    #[test]
    fn similarity_picks_weaker_box_term() {
        // Frames agree to ~0.9 overall; the boxed region is replaced by
        // independent noise so its crops correlate far less.
        let base = GrayscaleImage::from_fn(64, 64, |x, y| ((x * 4 + y * 2) % 256) as u8).unwrap();
        let mut state = 12345u32;
        let mut noise = || {
            state = state.wrapping_mul(1_103_515_245).wrapping_add(12345);
            (state >> 16) as u8
        };
        let cur = GrayscaleImage::from_fn(64, 64, |x, y| {
            let v = base.get(x, y);
            if x < 16 && y < 16 {
                noise()
            } else {
                v
            }
        })
        .unwrap();
        let b = bb(0.0, 0.0, 16.0, 16.0);
        let frames = ncc(&base, &cur).unwrap();
        let boxes = bbox_similarity(&base, &b, &cur, &b).unwrap();
        let s = similarity(&base, &cur, Some(&b), Some(&b)).unwrap();
        assert!(frames.value() > 0.8, "{frames:?}");
        assert!(boxes.value() < 0.5, "{boxes:?}");
        assert_eq!(s, boxes);
    }

    #[test]
    fn fallback_without_pixels() {
        let a = bb(0.0, 0.0, 2.0, 2.0);
        let b = bb(1.0, 1.0, 3.0, 3.0);
        let s = similarity_with_fallback(None, None, Some(&a), Some(&b)).unwrap();
        assert!((s.value() - 1.0 / 7.0).abs() < 1e-12);
        assert_eq!(
            similarity_with_fallback(None, None, Some(&a), None).unwrap(),
            SimilarityScore::ZERO
        );
    }

    fn arb_pair() -> impl Strategy<Value = (u32, u32, Vec<u8>, Vec<u8>)> {
        (1u32..24, 1u32..24).prop_flat_map(|(w, h)| {
            let n = (w * h) as usize;
            (
                Just(w),
                Just(h),
                prop::collection::vec(any::<u8>(), n),
                prop::collection::vec(any::<u8>(), n),
            )
        })
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded((w, h, a, b) in arb_pair()) {
            let (p, c) = (img(w, h, a), img(w, h, b));
            let pc = ncc(&p, &c).unwrap().value();
            prop_assert_eq!(pc, ncc(&c, &p).unwrap().value());
            prop_assert!((-1.0..=1.0).contains(&pc));
        }

        #[test]
        fn affine_invariance(
            p in prop::collection::vec(0.0..255.0f64, 2..200),
            noise in prop::collection::vec(-50.0..50.0f64, 200),
            scale in 0.01..100.0f64,
            shift in -1000.0..1000.0f64,
        ) {
            let c: Vec<f64> = p.iter().zip(&noise).map(|(a, n)| a + n).collect();
            let moved: Vec<f64> = p.iter().map(|v| scale * v + shift).collect();
            let base = ncc_values(&p, &c).unwrap().value();
            let after = ncc_values(&moved, &c).unwrap().value();
            prop_assert!((base - after).abs() <= 1e-9, "{} vs {}", base, after);
        }
    }
}
