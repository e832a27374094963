//! Characterization traces: newline-delimited JSON, one record per frame.
//!
//! ```text
//! {"frame":0,"ground_truth":{...},"frame_image":"f0.pgm","detections":{"yolov7":{"confidence":0.8,"iou":0.7,"box":{...}}}}
//! ```
//!
//! `frame_image` is either a path to a binary PGM (resolved relative to the
//! trace file) or an inline block `{"width","height","pixels"}` with base64
//! pixel bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{BoundingBox, Catalog, GrayscaleImage, ModelId};
use crate::error::{Error, Result};

/// What one model produced on one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionOutcome {
    pub confidence: f64,
    pub iou: f64,
    #[serde(rename = "box", default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<BoundingBox>,
}

impl DetectionOutcome {
    fn check(&self) -> std::result::Result<(), String> {
        if !(self.confidence.is_finite() && (0.0..=1.0).contains(&self.confidence)) {
            return Err(format!("confidence {} outside [0, 1]", self.confidence));
        }
        if !(self.iou.is_finite() && (0.0..=1.0).contains(&self.iou)) {
            return Err(format!("iou {} outside [0, 1]", self.iou));
        }
        match &self.bbox {
            None if self.iou != 0.0 => {
                Err(format!("iou {} reported without a detection box", self.iou))
            }
            Some(b) => b.validate().map_err(|e| e.to_string()),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame_index: u64,
    pub ground_truth: Option<BoundingBox>,
    /// Models that were not run on this frame are simply absent.
    pub per_model: BTreeMap<ModelId, DetectionOutcome>,
    pub frame: Option<GrayscaleImage>,
}

impl FrameRecord {
    pub fn outcome(&self, model: &ModelId) -> Option<&DetectionOutcome> {
        self.per_model.get(model)
    }
}

/// An ordered, validated sequence of frame records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CharacterizationTrace {
    frames: Vec<FrameRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceLine {
    frame: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ground_truth: Option<BoundingBox>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_image: Option<FrameImage>,
    detections: BTreeMap<ModelId, DetectionOutcome>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum FrameImage {
    Path(String),
    Inline {
        width: u32,
        height: u32,
        pixels: String,
    },
}

/// Reads a trace file and checks it against `catalog`.
pub fn load_trace(path: impl AsRef<Path>, catalog: &Catalog) -> Result<CharacterizationTrace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let trace = CharacterizationTrace::parse(&text, base)?;
    trace.check_models(catalog)?;
    Ok(trace)
}

impl CharacterizationTrace {
    pub fn from_frames(frames: Vec<FrameRecord>) -> Result<Self> {
        let mut dims: Option<(u32, u32)> = None;
        let mut prev: Option<u64> = None;
        for f in &frames {
            let err = |message: String| Error::Trace {
                frame: f.frame_index,
                message,
            };
            if prev.is_some_and(|p| f.frame_index <= p) {
                return Err(err(format!(
                    "frame index {} does not follow {}",
                    f.frame_index,
                    prev.unwrap()
                )));
            }
            prev = Some(f.frame_index);
            if let Some(gt) = &f.ground_truth {
                gt.validate().map_err(|e| err(format!("ground truth: {e}")))?;
            }
            for (model, outcome) in &f.per_model {
                if model.as_str().is_empty() {
                    return Err(err("empty model name".into()));
                }
                outcome.check().map_err(|m| err(format!("{model}: {m}")))?;
            }
            if let Some(img) = &f.frame {
                let d = (img.width(), img.height());
                match dims {
                    None => dims = Some(d),
                    Some(first) if first != d => {
                        return Err(err(format!(
                            "frame image is {}x{}, earlier frames are {}x{}",
                            d.0, d.1, first.0, first.1
                        )))
                    }
                    _ => {}
                }
            }
        }
        Ok(Self { frames })
    }

    /// Parses newline-delimited records. Relative image paths resolve against
    /// `base_dir`. Model names are not checked; see [`Self::check_models`].
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut frames = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: TraceLine = serde_json::from_str(line)
                .map_err(|e| Error::parse(format!("trace line {}", lineno + 1), e))?;
            let frame = match rec.frame_image {
                None => None,
                Some(FrameImage::Path(p)) => {
                    let path = base_dir.join(p);
                    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                    Some(GrayscaleImage::from_pgm(&bytes).map_err(|e| Error::Trace {
                        frame: rec.frame,
                        message: format!("{}: {e}", path.display()),
                    })?)
                }
                Some(FrameImage::Inline {
                    width,
                    height,
                    pixels,
                }) => Some(
                    GrayscaleImage::from_base64(width, height, &pixels).map_err(|e| {
                        Error::Trace {
                            frame: rec.frame,
                            message: e.to_string(),
                        }
                    })?,
                ),
            };
            frames.push(FrameRecord {
                frame_index: rec.frame,
                ground_truth: rec.ground_truth,
                per_model: rec.detections,
                frame,
            });
        }
        Self::from_frames(frames)
    }

    pub fn check_models(&self, catalog: &Catalog) -> Result<()> {
        for f in &self.frames {
            if let Some(model) = f.per_model.keys().find(|m| !catalog.has_model(m.as_str())) {
                return Err(Error::Trace {
                    frame: f.frame_index,
                    message: format!("unknown model `{model}`"),
                });
            }
        }
        Ok(())
    }

    /// Writes the trace with frame images inlined.
    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for f in &self.frames {
            let line = TraceLine {
                frame: f.frame_index,
                ground_truth: f.ground_truth,
                frame_image: f.frame.as_ref().map(|img| FrameImage::Inline {
                    width: img.width(),
                    height: img.height(),
                    pixels: img.to_base64(),
                }),
                detections: f.per_model.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_jsonl_string()).map_err(|e| Error::io(path, e))
    }

    pub fn frames(&self) -> &[FrameRecord] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Every model with at least one outcome in the trace.
    pub fn models(&self) -> BTreeSet<ModelId> {
        self.frames
            .iter()
            .flat_map(|f| f.per_model.keys().cloned())
            .collect()
    }
}
