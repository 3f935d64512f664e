//! Canonical file formats: JSONL detections, annotations and tracks, the
//! binary raster stack, and JSON documents. Frames are 0-based, regions
//! 1-based.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::appearance::AppearanceRaster;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, DepthStats, Detection};
use crate::metrics::LabeledFrame;
use crate::simulator::GroundTruth;
use crate::spatial::PoseSample;
use crate::tracker::FrameOutput;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub frame: usize,
    pub detector: u32,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
    pub score: f64,
    pub depth_mean: f64,
    pub depth_std: f64,
}

/// One box of one person; used for both annotations and tracks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxRecord {
    pub frame: usize,
    pub person_id: u64,
    pub region: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayPerson {
    pub person_id: u64,
    pub boxes: Vec<[f64; 4]>,
}

/// Per-frame geometry for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayRecord {
    pub frame: usize,
    pub energy: Option<f64>,
    pub persons: Vec<OverlayPerson>,
    pub detections: Vec<DetectionRecord>,
}

fn path_label(path: &Path) -> String {
    path.display().to_string()
}

fn parse_error(path: &str, line: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_string(),
        line,
        reason: reason.into(),
    }
}

/// Parses one JSON value per non-blank line, reporting 1-based line numbers.
pub fn read_jsonl<T: DeserializeOwned, R: BufRead>(reader: R, label: &str) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| parse_error(label, i + 1, e.to_string()))?;
        out.push((i + 1, value));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(mut writer: W, items: impl IntoIterator<Item = T>) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut writer, &item)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

fn checked_box(b: [f64; 4], label: &str, line: usize) -> Result<BoundingBox> {
    if b.iter().any(|v| !v.is_finite()) {
        return Err(parse_error(label, line, "box coordinates must be finite"));
    }
    BoundingBox::new(b[0], b[1], b[2], b[3]).map_err(|e| parse_error(label, line, e.to_string()))
}

fn grow<T: Default + Clone>(frames: &mut Vec<T>, frame: usize) {
    if frames.len() <= frame {
        frames.resize(frame + 1, T::default());
    }
}

pub fn parse_detections<R: BufRead>(reader: R, label: &str) -> Result<Vec<Vec<Detection>>> {
    let mut frames: Vec<Vec<Detection>> = Vec::new();
    for (line, r) in read_jsonl::<DetectionRecord, _>(reader, label)? {
        let bbox = checked_box(r.bbox, label, line)?;
        if !(r.score > 0.0 && r.score.is_finite()) {
            return Err(parse_error(label, line, format!("score {} must be positive", r.score)));
        }
        if !(r.depth_std >= 0.0 && r.depth_std.is_finite() && r.depth_mean.is_finite()) {
            return Err(parse_error(label, line, "depth_mean must be finite and depth_std non-negative"));
        }
        grow(&mut frames, r.frame);
        frames[r.frame].push(Detection {
            bbox,
            score: r.score,
            detector_id: r.detector,
            depth: DepthStats {
                mean: r.depth_mean,
                std: r.depth_std,
            },
        });
    }
    Ok(frames)
}

pub fn load_detections(path: &Path) -> Result<Vec<Vec<Detection>>> {
    parse_detections(BufReader::new(File::open(path)?), &path_label(path))
}

pub fn detection_records(frames: &[Vec<Detection>]) -> Vec<DetectionRecord> {
    frames
        .iter()
        .enumerate()
        .flat_map(|(t, dets)| {
            dets.iter().map(move |d| DetectionRecord {
                frame: t,
                detector: d.detector_id,
                bbox: d.bbox.to_array(),
                score: d.score,
                depth_mean: d.depth.mean,
                depth_std: d.depth.std,
            })
        })
        .collect()
}

pub fn write_detections(path: &Path, frames: &[Vec<Detection>]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), detection_records(frames))
}

/// Per-frame box records, validated.
pub fn parse_boxes<R: BufRead>(reader: R, label: &str) -> Result<Vec<Vec<BoxRecord>>> {
    let mut frames: Vec<Vec<BoxRecord>> = Vec::new();
    for (line, r) in read_jsonl::<BoxRecord, _>(reader, label)? {
        checked_box(r.bbox, label, line)?;
        if r.region == 0 {
            return Err(parse_error(label, line, "regions are 1-based"));
        }
        grow(&mut frames, r.frame);
        frames[r.frame].push(r);
    }
    Ok(frames)
}

pub fn load_boxes(path: &Path) -> Result<Vec<Vec<BoxRecord>>> {
    parse_boxes(BufReader::new(File::open(path)?), &path_label(path))
}

/// Boxes of one 1-based region, per frame, labeled by person.
pub fn labeled_frames(frames: &[Vec<BoxRecord>], region: usize) -> Vec<LabeledFrame> {
    frames
        .iter()
        .map(|f| {
            f.iter()
                .filter(|r| r.region == region)
                .map(|r| (r.person_id, BoundingBox::from_array(r.bbox)))
                .collect()
        })
        .collect()
}

/// Visible ground-truth boxes as annotation records.
pub fn annotation_records(gt: &GroundTruth) -> Vec<BoxRecord> {
    gt.frames
        .iter()
        .enumerate()
        .flat_map(|(t, persons)| {
            persons.iter().flat_map(move |p| {
                p.boxes
                    .iter()
                    .zip(&p.visible)
                    .enumerate()
                    .filter(|(_, (_, v))| **v)
                    .map(move |(l, (b, _))| BoxRecord {
                        frame: t,
                        person_id: p.identity,
                        region: l + 1,
                        bbox: b.to_array(),
                    })
            })
        })
        .collect()
}

pub fn track_records(outputs: &[FrameOutput]) -> Vec<BoxRecord> {
    outputs
        .iter()
        .flat_map(|o| {
            o.persons.iter().flat_map(move |p| {
                p.boxes.iter().enumerate().map(move |(l, b)| BoxRecord {
                    frame: o.frame,
                    person_id: p.identity,
                    region: l + 1,
                    bbox: b.to_array(),
                })
            })
        })
        .collect()
}

pub fn write_boxes(path: &Path, records: &[BoxRecord]) -> Result<()> {
    write_jsonl(BufWriter::new(File::create(path)?), records)
}

/// Training samples in the annotation format: every frame/person pair with
/// all `regions` present becomes one sample.
pub fn pose_samples(frames: &[Vec<BoxRecord>], regions: usize) -> Vec<PoseSample> {
    let mut out = Vec::new();
    for f in frames {
        let mut by_person: BTreeMap<u64, Vec<Option<BoundingBox>>> = BTreeMap::new();
        for r in f.iter().filter(|r| r.region <= regions) {
            by_person.entry(r.person_id).or_insert_with(|| vec![None; regions])[r.region - 1] =
                Some(BoundingBox::from_array(r.bbox));
        }
        for boxes in by_person.into_values() {
            if let Some(boxes) = boxes.into_iter().collect::<Option<Vec<_>>>() {
                out.push(PoseSample { boxes });
            }
        }
    }
    out
}

/// One sample per frame, person id 1.
pub fn sample_records(samples: &[PoseSample]) -> Vec<BoxRecord> {
    samples
        .iter()
        .enumerate()
        .flat_map(|(t, s)| {
            s.boxes.iter().enumerate().map(move |(l, b)| BoxRecord {
                frame: t,
                person_id: 1,
                region: l + 1,
                bbox: b.to_array(),
            })
        })
        .collect()
}

pub fn overlay_records(outputs: &[FrameOutput], detections: &[Vec<Detection>]) -> Vec<OverlayRecord> {
    let dets = detection_records(detections);
    outputs
        .iter()
        .map(|o| OverlayRecord {
            frame: o.frame,
            energy: o.energy.is_finite().then_some(o.energy),
            persons: o
                .persons
                .iter()
                .map(|p| OverlayPerson {
                    person_id: p.identity,
                    boxes: p.boxes.iter().map(BoundingBox::to_array).collect(),
                })
                .collect(),
            detections: dets.iter().filter(|d| d.frame == o.frame).cloned().collect(),
        })
        .collect()
}

const RASTER_MAGIC: &[u8; 8] = b"FTRASTR1";

/// Layout: magic, then little-endian u32 width, height, bins, frame count,
/// then one byte per pixel, row-major, frame after frame.
pub fn write_rasters<W: Write>(mut w: W, rasters: &[AppearanceRaster]) -> Result<()> {
    let (width, height, bins) = rasters.first().map_or((0, 0, 1), |r| (r.width(), r.height(), r.bins()));
    if rasters.iter().any(|r| r.width() != width || r.height() != height || r.bins() != bins) {
        return Err(Error::config("rasters", "all frames must share size and bin count"));
    }
    w.write_all(RASTER_MAGIC)?;
    for v in [width, height, bins, rasters.len()] {
        let v = u32::try_from(v).map_err(|_| Error::config("rasters", "dimension exceeds u32"))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for r in rasters {
        w.write_all(r.data())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rasters<R: Read>(mut r: R) -> Result<Vec<AppearanceRaster>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != RASTER_MAGIC {
        return Err(Error::config("rasters", "not a raster file"));
    }
    let mut header = [0usize; 4];
    for v in &mut header {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *v = u32::from_le_bytes(b) as usize;
    }
    let [width, height, bins, count] = header;
    (0..count)
        .map(|_| {
            let mut data = vec![0u8; width * height];
            r.read_exact(&mut data)?;
            AppearanceRaster::new(width, height, bins, data)
        })
        .collect()
}

pub fn save_rasters(path: &Path, rasters: &[AppearanceRaster]) -> Result<()> {
    write_rasters(BufWriter::new(File::create(path)?), rasters)
}

pub fn load_rasters(path: &Path) -> Result<Vec<AppearanceRaster>> {
    read_rasters(BufReader::new(File::open(path)?))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| parse_error(&path_label(path), e.line(), e.to_string()))
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
