//! On-disk formats: frame logs (JSONL), depth images (16-bit PGM) and
//! ground-truth files.
//!
//! A frame log is one JSON object per line; the depth image lives next to
//! the log as a binary PGM (P5, maxval 65535, big-endian) referenced by a
//! relative `depth_file` path, values in millimeters with 0 marking
//! invalid pixels.

use crate::geometry::{Intrinsics, Pose};
use crate::mask::{DepthImage, Mask};
use crate::pipeline::{Detection, FrameInput, RelationDetection};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, Read, Write};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: line {line}: {message}")]
    BadRecord { path: String, line: usize, message: String },
    #[error("{path}: {message}")]
    BadFile { path: String, message: String },
}

fn bad_file(path: &Path, message: impl Into<String>) -> IoError {
    IoError::BadFile { path: path.display().to_string(), message: message.into() }
}

/// One frame-log line. The depth image is stored out-of-line and resolved
/// against the log file's directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame_id: u64,
    pub camera_pose: Pose,
    pub intrinsics: Intrinsics,
    pub depth_file: String,
    #[serde(default)]
    pub detections: Vec<DetectionRecord>,
    #[serde(default)]
    pub relations: Vec<RelationDetection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub label: String,
    pub score: f64,
    pub mask_rle: Mask,
}

/// Writes a 16-bit binary PGM (P5, maxval 65535, big-endian samples).
pub fn write_pgm(path: &Path, depth: &DepthImage) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(32 + depth.values().len() * 2);
    out.extend_from_slice(format!("P5\n{} {}\n65535\n", depth.width(), depth.height()).as_bytes());
    for &v in depth.values() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<DepthImage, IoError> {
    let data = std::fs::read(path)?;
    let mut cursor = 0usize;
    let mut token = |data: &[u8]| -> Result<String, IoError> {
        while cursor < data.len() && data[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        let start = cursor;
        while cursor < data.len() && !data[cursor].is_ascii_whitespace() {
            cursor += 1;
        }
        if start == cursor {
            return Err(bad_file(path, "truncated PGM header"));
        }
        Ok(String::from_utf8_lossy(&data[start..cursor]).into_owned())
    };
    if token(&data)? != "P5" {
        return Err(bad_file(path, "not a binary PGM (expected P5)"));
    }
    let width: u32 = token(&data)?.parse().map_err(|_| bad_file(path, "bad width"))?;
    let height: u32 = token(&data)?.parse().map_err(|_| bad_file(path, "bad height"))?;
    let maxval: u32 = token(&data)?.parse().map_err(|_| bad_file(path, "bad maxval"))?;
    if maxval != 65535 {
        return Err(bad_file(path, format!("expected 16-bit maxval 65535, got {maxval}")));
    }
    cursor += 1; // single whitespace byte after maxval
    let expected = (width as usize) * (height as usize) * 2;
    if data.len() - cursor < expected {
        return Err(bad_file(path, "truncated PGM payload"));
    }
    let values: Vec<u16> = data[cursor..cursor + expected]
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    DepthImage::new(width, height, values).map_err(|e| bad_file(path, e.to_string()))
}

/// Streaming frame-log reader; validates each record and loads its depth
/// image relative to the log location.
pub struct FrameLogReader {
    lines: std::io::Lines<std::io::BufReader<std::fs::File>>,
    base_dir: PathBuf,
    path: String,
    line_no: usize,
}

impl FrameLogReader {
    pub fn open(path: &Path) -> Result<Self, IoError> {
        let file = std::fs::File::open(path)?;
        Ok(FrameLogReader {
            lines: std::io::BufReader::new(file).lines(),
            base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
            path: path.display().to_string(),
            line_no: 0,
        })
    }

    fn bad(&self, message: impl Into<String>) -> IoError {
        IoError::BadRecord { path: self.path.clone(), line: self.line_no, message: message.into() }
    }
}

impl Iterator for FrameLogReader {
    type Item = Result<FrameInput, IoError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            if line.trim().is_empty() {
                continue;
            }
            let record: FrameRecord = match serde_json::from_str(&line) {
                Ok(r) => r,
                Err(e) => return Some(Err(self.bad(e.to_string()))),
            };
            let depth = match read_pgm(&self.base_dir.join(&record.depth_file)) {
                Ok(d) => d,
                Err(e) => return Some(Err(self.bad(e.to_string()))),
            };
            return Some(frame_from_record(record, depth).map_err(|m| self.bad(m)));
        }
    }
}

fn frame_from_record(record: FrameRecord, depth: DepthImage) -> Result<FrameInput, String> {
    let detections: Vec<Detection> = record
        .detections
        .into_iter()
        .map(|d| Detection { label: d.label, score: d.score, mask: d.mask_rle })
        .collect();
    let frame = FrameInput {
        frame_id: record.frame_id,
        camera_pose: record.camera_pose,
        intrinsics: record.intrinsics,
        depth,
        detections,
        relations: record.relations,
    };
    frame.validate().map_err(|e| e.to_string())?;
    Ok(frame)
}

/// Appends frames to a log, writing depth images into `frames/` beside it.
pub struct FrameLogWriter {
    log: std::io::BufWriter<std::fs::File>,
    frames_dir: PathBuf,
}

impl FrameLogWriter {
    pub fn create(log_path: &Path) -> Result<Self, IoError> {
        let base = log_path.parent().unwrap_or(Path::new("."));
        let frames_dir = base.join("frames");
        std::fs::create_dir_all(&frames_dir)?;
        Ok(FrameLogWriter {
            log: std::io::BufWriter::new(std::fs::File::create(log_path)?),
            frames_dir,
        })
    }

    pub fn write_frame(&mut self, frame: &FrameInput) -> Result<(), IoError> {
        let depth_name = format!("frames/{:06}.pgm", frame.frame_id);
        write_pgm(&self.frames_dir.join(format!("{:06}.pgm", frame.frame_id)), &frame.depth)?;
        let record = FrameRecord {
            frame_id: frame.frame_id,
            camera_pose: frame.camera_pose,
            intrinsics: frame.intrinsics,
            depth_file: depth_name,
            detections: frame
                .detections
                .iter()
                .map(|d| DetectionRecord { label: d.label.clone(), score: d.score, mask_rle: d.mask.clone() })
                .collect(),
            relations: frame.relations.clone(),
        };
        let line = serde_json::to_string(&record).expect("serializable record");
        self.log.write_all(line.as_bytes())?;
        self.log.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), IoError> {
        self.log.flush()?;
        Ok(())
    }
}

/// Ground truth: per frame, the true map-frame position of each object by
/// label.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub frames: Vec<FrameTruth>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameTruth {
    pub frame_id: u64,
    pub positions: BTreeMap<String, [f64; 3]>,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<GroundTruth, IoError> {
        let mut text = String::new();
        std::fs::File::open(path)?.read_to_string(&mut text)?;
        serde_json::from_str(&text).map_err(|e| bad_file(path, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), IoError> {
        let mut bytes = serde_json::to_vec(self).expect("serializable");
        bytes.push(b'\n');
        std::fs::write(path, bytes)?;
        Ok(())
    }

    pub fn positions_at(&self, frame_id: u64) -> Option<&BTreeMap<String, [f64; 3]>> {
        self.frames.iter().find(|f| f.frame_id == frame_id).map(|f| &f.positions)
    }

    /// Labels of every object that appears anywhere in the truth.
    pub fn labels(&self) -> Vec<String> {
        let mut set = std::collections::BTreeSet::new();
        for f in &self.frames {
            for label in f.positions.keys() {
                set.insert(label.clone());
            }
        }
        set.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Intrinsics, Pose};
    use crate::mask::Mask;

    fn tiny_depth() -> DepthImage {
        DepthImage::new(4, 3, (0..12).map(|i| (i * 100) as u16).collect()).unwrap()
    }

    #[test]
    fn pgm_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let depth = tiny_depth();
        write_pgm(&path, &depth).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!(back, depth);

        // Header is the documented P5/65535 form.
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n4 3\n65535\n"));
    }

    #[test]
    fn pgm_rejects_wrong_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pgm");
        std::fs::write(&path, b"P5\n2 2\n255\n\x00\x01\x02\x03").unwrap();
        assert!(read_pgm(&path).is_err());
    }

    #[test]
    fn frame_log_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("log.jsonl");
        let k = Intrinsics::new(100.0, 100.0, 2.0, 1.5, 4, 3).unwrap();
        let mask = Mask::from_counts(4, 3, vec![1, 2, 9]).unwrap();
        let frame = FrameInput {
            frame_id: 0,
            camera_pose: Pose::from_translation(1.0, 0.0, 0.0),
            intrinsics: k,
            depth: tiny_depth(),
            detections: vec![Detection { label: "bottle".into(), score: 0.9, mask }],
            relations: vec![],
        };
        let mut w = FrameLogWriter::create(&log_path).unwrap();
        w.write_frame(&frame).unwrap();
        w.finish().unwrap();

        let frames: Vec<FrameInput> =
            FrameLogReader::open(&log_path).unwrap().collect::<Result<_, _>>().unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].frame_id, 0);
        assert_eq!(frames[0].detections[0].label, "bottle");
        assert_eq!(frames[0].depth, tiny_depth());

        // Line matches the documented wire schema.
        let text = std::fs::read_to_string(&log_path).unwrap();
        let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(v["depth_file"], "frames/000000.pgm");
        assert!(v["camera_pose"]["t"].is_array());
        assert!(v["camera_pose"]["q"].is_array());
        assert_eq!(v["detections"][0]["mask_rle"]["size"], serde_json::json!([3, 4]));
    }

    #[test]
    fn frame_log_reports_offending_line() {
        let dir = tempfile::tempdir().unwrap();
        let log_path = dir.path().join("log.jsonl");
        std::fs::write(&log_path, "{\"frame_id\": true}\n").unwrap();
        let err = FrameLogReader::open(&log_path).unwrap().next().unwrap().unwrap_err();
        match err {
            IoError::BadRecord { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn ground_truth_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.json");
        let gt = GroundTruth {
            frames: vec![FrameTruth {
                frame_id: 0,
                positions: BTreeMap::from([("bottle".to_owned(), [0.67, 0.10, 0.95])]),
            }],
        };
        gt.save(&path).unwrap();
        let back = GroundTruth::load(&path).unwrap();
        assert_eq!(back.labels(), vec!["bottle"]);
        assert_eq!(back.positions_at(0).unwrap()["bottle"], [0.67, 0.10, 0.95]);
        assert!(back.positions_at(1).is_none());
    }
}
