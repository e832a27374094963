use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::catalog::{BoundingBox, CharacterizationTrace, DetectionOutcome, FrameRecord, GrayscaleImage, ModelId};
use crate::error::{Error, Result};

const DEMO_SCENARIO: &str = include_str!("../../data/demo_scenario.json");
/// Pixel noise added to every synthetic frame.
const NOISE_SIGMA: f64 = 3.0;
/// Recorded IoU below this is treated as a missed detection.
const MISS_IOU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBehavior {
    pub conf_mean: f64,
    pub conf_sigma: f64,
    pub iou_mean: f64,
    pub iou_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub frames: u64,
    pub models: BTreeMap<ModelId, ModelBehavior>,
    /// Scene texture; segments without one carry no frame images.
    #[serde(default)]
    pub texture_seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_width")]
    pub width: u32,
    #[serde(default = "default_height")]
    pub height: u32,
    pub segments: Vec<Segment>,
}

fn default_width() -> u32 {
    64
}

fn default_height() -> u32 {
    48
}

impl Scenario {
    /// Two contexts: an easy scene where every model does well, then a hard
    /// one where only the large models keep their accuracy.
    pub fn demo() -> Scenario {
        Scenario::from_json_str(DEMO_SCENARIO).expect("built-in scenario is valid")
    }

    pub fn from_json_str(text: &str) -> Result<Scenario> {
        let s: Scenario = serde_json::from_str(text).map_err(|e| Error::Scenario(e.to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scenario> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Scenario::from_json_str(&text)
    }

    pub fn total_frames(&self) -> u64 {
        self.segments.iter().map(|s| s.frames).sum()
    }

    /// Index of the first frame of every segment after the first.
    pub fn boundaries(&self) -> Vec<u64> {
        let mut at = 0;
        let mut out = Vec::new();
        for (i, s) in self.segments.iter().enumerate() {
            if i > 0 {
                out.push(at);
            }
            at += s.frames;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: String, why: &str| Err(Error::Scenario(format!("{field}: {why}")));
        if self.width < 8 || self.height < 8 {
            return bad("width/height".into(), "frames must be at least 8x8");
        }
        if self.segments.is_empty() {
            return bad("segments".into(), "at least one segment is required");
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.frames == 0 {
                return bad(format!("segments[{i}].frames"), "must be positive");
            }
            if seg.models.is_empty() {
                return bad(format!("segments[{i}].models"), "at least one model is required");
            }
            for (name, b) in &seg.models {
                let fields = [
                    ("conf_mean", b.conf_mean, true),
                    ("conf_sigma", b.conf_sigma, false),
                    ("iou_mean", b.iou_mean, true),
                    ("iou_sigma", b.iou_sigma, false),
                ];
                for (field, v, is_mean) in fields {
                    let ok = if is_mean {
                        (0.0..=1.0).contains(&v)
                    } else {
                        v.is_finite() && v >= 0.0
                    };
                    if !ok {
                        let why = if is_mean {
                            "must lie in [0, 1]"
                        } else {
                            "must be finite and non-negative"
                        };
                        return bad(format!("segments[{i}].models.{name}.{field} = {v}"), why);
                    }
                }
            }
        }
        Ok(())
    }
}

struct Texture {
    base: Vec<f64>,
    truth: BoundingBox,
}

impl Texture {
    fn new(seed: u64, width: u32, height: u32) -> Texture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|k| {
                let amp = [50.0, 30.0, 15.0][k];
                (
                    amp,
                    rng.random_range(0.05..0.45),
                    rng.random_range(0.05..0.45),
                    rng.random_range(0.0..std::f64::consts::TAU),
                )
            })
            .collect();
        let (w, h) = (width as f64, height as f64);
        let bw = rng.random_range(0.25..0.4) * w;
        let bh = rng.random_range(0.25..0.4) * h;
        let x0 = rng.random_range(0.0..w - bw);
        let y0 = rng.random_range(0.0..h - bh);
        let truth = BoundingBox::new(x0.floor(), y0.floor(), (x0 + bw).floor(), (y0 + bh).floor())
            .expect("box inside frame");
        let mut base = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                let (xf, yf) = (x as f64, y as f64);
                let mut v = 128.0;
                for &(amp, fx, fy, phase) in &waves {
                    v += amp * (fx * xf + fy * yf + phase).sin();
                }
                let inside = xf >= truth.x_min && xf < truth.x_max && yf >= truth.y_min && yf < truth.y_max;
                base.push(if inside { 0.5 * v } else { v });
            }
        }
        Texture { base, truth }
    }

    fn render(&self, width: u32, height: u32, rng: &mut ChaCha8Rng) -> GrayscaleImage {
        let pixels = self
            .base
            .iter()
            .map(|&v| {
                let n: f64 = rng.sample(StandardNormal);
                (v + NOISE_SIGMA * n).round().clamp(0.0, 255.0) as u8
            })
            .collect();
        GrayscaleImage::new(width, height, pixels).expect("dimensions match")
    }
}

fn sample(rng: &mut ChaCha8Rng, mean: f64, sigma: f64) -> f64 {
    let n: f64 = rng.sample(StandardNormal);
    let v = (mean + sigma * n).clamp(0.0, 1.0);
    (v * 1e4).round() / 1e4
}

/// Generates a synthetic characterization trace. Everything is a function
/// of `scenario` and `seed`.
pub fn gen_trace(scenario: &Scenario, seed: u64) -> Result<CharacterizationTrace> {
    scenario.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (scenario.width, scenario.height);
    let mut frames = Vec::with_capacity(scenario.total_frames() as usize);
    let mut index = 0;
    for (i, seg) in scenario.segments.iter().enumerate() {
        let texture = Texture::new(seg.texture_seed.unwrap_or(i as u64), w, h);
        for _ in 0..seg.frames {
            let mut per_model = BTreeMap::new();
            for (name, b) in &seg.models {
                let confidence = sample(&mut rng, b.conf_mean, b.conf_sigma);
                let iou = sample(&mut rng, b.iou_mean, b.iou_sigma);
                let outcome = if iou < MISS_IOU {
                    DetectionOutcome {
                        confidence: 0.0,
                        iou: 0.0,
                        bbox: None,
                    }
                } else {
                    DetectionOutcome {
                        confidence,
                        iou,
                        bbox: Some(texture.truth.scaled(iou.sqrt())),
                    }
                };
                per_model.insert(name.clone(), outcome);
            }
            let frame = seg.texture_seed.map(|_| texture.render(w, h, &mut rng));
            frames.push(FrameRecord {
                frame_index: index,
                ground_truth: Some(texture.truth),
                per_model,
                frame,
            });
            index += 1;
        }
    }
    CharacterizationTrace::from_frames(frames)
}
