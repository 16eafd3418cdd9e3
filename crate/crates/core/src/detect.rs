//! Ingredient detection boundary.
//!
//! A [`Detector`] turns a frame into labelled boxes. Two implementations ship:
//! [`FixtureDetector`] replays JSON fixture files and [`RemoteDetector`] posts
//! image bytes to a model server that answers in the same JSON shape.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::vocab::{Normalized, Vocabulary};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_WINDOW: usize = 3;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("fixture not found: {0}")]
    FixtureNotFound(String),
    #[error("fixture {id} is malformed: {reason}")]
    BadFixture { id: String, reason: String },
    #[error("remote detector unavailable: {reason} (retry after {retry_after_ms} ms)")]
    RemoteDetectorUnavailable { reason: String, retry_after_ms: u64 },
    #[error("threshold {0} outside [0, 1]")]
    BadThreshold(f64),
    #[error("frame source not supported by the {0} detector")]
    UnsupportedSource(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FrameSource {
    Fixture {
        fixture_id: String,
    },
    Image {
        reference: String,
        #[serde(skip)]
        bytes: Vec<u8>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub frame_id: String,
    pub source: FrameSource,
    pub timestamp_ms: u64,
}

/// Normalized `(x, y, w, h)` box inside the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub fn is_valid(&self) -> bool {
        const EPS: f64 = 1e-9;
        self.w > 0.0
            && self.h > 0.0
            && self.x >= 0.0
            && self.y >= 0.0
            && self.x + self.w <= 1.0 + EPS
            && self.y + self.h <= 1.0 + EPS
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectedIngredient {
    pub label: String,
    pub confidence: f64,
    pub bbox: BBox,
}

/// A label the detector reported that is not in the ingredient universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnknownLabel {
    pub raw: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDetections {
    pub frame_id: String,
    pub detections: Vec<DetectedIngredient>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unknown_labels: Vec<UnknownLabel>,
}

/// Wire shape shared by fixture files and the remote detector response.
#[derive(Debug, Clone, Deserialize)]
pub struct RawFrame {
    pub frame_id: String,
    pub detections: Vec<RawDetection>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct RawDetection {
    pub label: String,
    pub confidence: f64,
    pub bbox: [f64; 4],
}

pub trait Detector: Send + Sync {
    fn name(&self) -> &'static str;

    fn detect(&self, frame: &DetectionFrame, threshold: f64) -> Result<FrameDetections, DetectError>;
}

/// Normalizes raw labels, applies the threshold and validates boxes.
/// Detections below the threshold are dropped, known or not.
pub fn interpret_frame(raw: &RawFrame, threshold: f64, vocab: &Vocabulary) -> Result<FrameDetections, String> {
    let mut detections = Vec::new();
    let mut unknown_labels = Vec::new();
    for d in &raw.detections {
        if !(0.0..=1.0).contains(&d.confidence) {
            return Err(format!("confidence {} outside [0, 1]", d.confidence));
        }
        let bbox = BBox::from(d.bbox);
        if !bbox.is_valid() {
            return Err(format!("bbox {:?} not inside the unit square", d.bbox));
        }
        if d.confidence < threshold {
            continue;
        }
        match vocab.normalize_ingredient_name(&d.label) {
            Ok(Normalized::Known(id)) => {
                detections.push(DetectedIngredient { label: id, confidence: d.confidence, bbox })
            }
            Ok(Normalized::Unknown(_)) | Err(_) => {
                unknown_labels.push(UnknownLabel { raw: d.label.clone(), confidence: d.confidence })
            }
        }
    }
    Ok(FrameDetections { frame_id: raw.frame_id.clone(), detections, unknown_labels })
}

fn check_threshold(threshold: f64) -> Result<(), DetectError> {
    if (0.0..=1.0).contains(&threshold) {
        Ok(())
    } else {
        Err(DetectError::BadThreshold(threshold))
    }
}

/// Replays `<dir>/<fixture_id>.json` files.
pub struct FixtureDetector {
    dir: Option<PathBuf>,
    vocab: Vocabulary,
}

const EMBEDDED_FIXTURES: &[(&str, &str)] = &[
    ("fridge_01", include_str!("../data/fixtures/fridge_01.json")),
    ("fridge_02", include_str!("../data/fixtures/fridge_02.json")),
    ("pantry_01", include_str!("../data/fixtures/pantry_01.json")),
];

impl FixtureDetector {
    pub fn new(dir: impl Into<PathBuf>, vocab: Vocabulary) -> Self {
        Self { dir: Some(dir.into()), vocab }
    }

    /// Uses the fixtures compiled into the crate.
    pub fn embedded(vocab: Vocabulary) -> Self {
        Self { dir: None, vocab }
    }

    pub fn fixture_ids(&self) -> Vec<String> {
        match &self.dir {
            None => EMBEDDED_FIXTURES.iter().map(|(id, _)| id.to_string()).collect(),
            Some(dir) => {
                let mut ids: Vec<String> = std::fs::read_dir(dir)
                    .into_iter()
                    .flatten()
                    .flatten()
                    .filter_map(|e| {
                        let p = e.path();
                        (p.extension()? == "json").then(|| p.file_stem()?.to_str().map(String::from))?
                    })
                    .collect();
                ids.sort();
                ids
            }
        }
    }

    fn raw_frames(&self, fixture_id: &str) -> Result<Vec<RawFrame>, DetectError> {
        let valid_id =
            !fixture_id.is_empty() && fixture_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if !valid_id {
            return Err(DetectError::FixtureNotFound(fixture_id.to_string()));
        }
        let raw = match &self.dir {
            None => EMBEDDED_FIXTURES
                .iter()
                .find(|(id, _)| *id == fixture_id)
                .map(|(_, body)| body.to_string())
                .ok_or_else(|| DetectError::FixtureNotFound(fixture_id.to_string()))?,
            Some(dir) => std::fs::read_to_string(dir.join(format!("{fixture_id}.json")))
                .map_err(|_| DetectError::FixtureNotFound(fixture_id.to_string()))?,
        };
        serde_json::from_str(&raw)
            .map_err(|e| DetectError::BadFixture { id: fixture_id.to_string(), reason: e.to_string() })
    }

    /// The frames of a fixture, in file order.
    pub fn frames(&self, fixture_id: &str) -> Result<Vec<DetectionFrame>, DetectError> {
        Ok(self
            .raw_frames(fixture_id)?
            .into_iter()
            .enumerate()
            .map(|(i, f)| DetectionFrame {
                frame_id: f.frame_id,
                source: FrameSource::Fixture { fixture_id: fixture_id.to_string() },
                // Fixtures are treated as a 15 fps stream.
                timestamp_ms: i as u64 * 66,
            })
            .collect())
    }

    /// Runs [`Detector::detect`] on every frame of a fixture.
    pub fn detect_all(&self, fixture_id: &str, threshold: f64) -> Result<Vec<FrameDetections>, DetectError> {
        self.frames(fixture_id)?.iter().map(|f| self.detect(f, threshold)).collect()
    }
}

impl Detector for FixtureDetector {
    fn name(&self) -> &'static str {
        "fixture"
    }

    fn detect(&self, frame: &DetectionFrame, threshold: f64) -> Result<FrameDetections, DetectError> {
        check_threshold(threshold)?;
        let FrameSource::Fixture { fixture_id } = &frame.source else {
            return Err(DetectError::UnsupportedSource("fixture"));
        };
        let frames = self.raw_frames(fixture_id)?;
        let raw = frames
            .iter()
            .find(|f| f.frame_id == frame.frame_id)
            .ok_or_else(|| DetectError::FixtureNotFound(format!("{fixture_id}#{}", frame.frame_id)))?;
        interpret_frame(raw, threshold, &self.vocab)
            .map_err(|reason| DetectError::BadFixture { id: fixture_id.clone(), reason })
    }
}

/// Client for a model server exposing `POST /detect`.
pub struct RemoteDetector {
    endpoint: String,
    agent: ureq::Agent,
    vocab: Vocabulary,
}

impl RemoteDetector {
    pub fn new(endpoint: impl Into<String>, timeout: Duration, vocab: Vocabulary) -> Self {
        let agent =
            ureq::Agent::config_builder().timeout_global(Some(timeout)).http_status_as_error(false).build().into();
        Self { endpoint: endpoint.into().trim_end_matches('/').to_string(), agent, vocab }
    }
}

const DEFAULT_RETRY_AFTER_MS: u64 = 5_000;

impl Detector for RemoteDetector {
    fn name(&self) -> &'static str {
        "remote"
    }

    fn detect(&self, frame: &DetectionFrame, threshold: f64) -> Result<FrameDetections, DetectError> {
        check_threshold(threshold)?;
        let FrameSource::Image { bytes, .. } = &frame.source else {
            return Err(DetectError::UnsupportedSource("remote"));
        };
        let unavailable =
            |reason: String, retry_after_ms| DetectError::RemoteDetectorUnavailable { reason, retry_after_ms };
        let mut resp = self
            .agent
            .post(format!("{}/detect", self.endpoint))
            .header("Content-Type", "application/octet-stream")
            .header("X-Frame-Id", &frame.frame_id)
            .send(&bytes[..])
            .map_err(|e| unavailable(e.to_string(), DEFAULT_RETRY_AFTER_MS))?;
        let status = resp.status().as_u16();
        if status != 200 {
            let retry_after_ms = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(|s| s * 1000)
                .unwrap_or(DEFAULT_RETRY_AFTER_MS);
            return Err(unavailable(format!("status {status}"), retry_after_ms));
        }
        let raw: RawFrame = resp
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(format!("bad response body: {e}"), DEFAULT_RETRY_AFTER_MS))?;
        interpret_frame(&raw, threshold, &self.vocab)
            .map_err(|reason| unavailable(format!("bad response: {reason}"), DEFAULT_RETRY_AFTER_MS))
    }
}

/// Majority vote over the last `window` frames.
///
/// A label survives when it appears in at least `ceil(w / 2)` of those frames,
/// where `w` is `window` capped at the number of frames available. Frames are
/// expected to be already thresholded by [`Detector::detect`].
pub fn consolidate(frames: &[FrameDetections], window: usize) -> BTreeSet<String> {
    let window = window.max(1);
    let recent = &frames[frames.len().saturating_sub(window)..];
    if recent.is_empty() {
        return BTreeSet::new();
    }
    let needed = recent.len().div_ceil(2);
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for frame in recent {
        let labels: BTreeSet<&str> = frame.detections.iter().map(|d| d.label.as_str()).collect();
        for label in labels {
            *counts.entry(label).or_default() += 1;
        }
    }
    counts.into_iter().filter(|&(_, n)| n >= needed).map(|(l, _)| l.to_string()).collect()
}

/// Resolves a fixture directory, preferring `<data_dir>/fixtures`.
pub fn fixture_detector_for(data_dir: Option<&Path>, vocab: Vocabulary) -> FixtureDetector {
    match data_dir.map(|d| d.join("fixtures")) {
        Some(dir) if dir.is_dir() => FixtureDetector::new(dir, vocab),
        _ => FixtureDetector::embedded(vocab),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn detector() -> FixtureDetector {
        FixtureDetector::embedded(Vocabulary::embedded())
    }

    fn labels(f: &FrameDetections) -> Vec<(String, f64)> {
        f.detections.iter().map(|d| (d.label.clone(), d.confidence)).collect()
    }

    #[test]
    fn fridge_01_golden_at_default_threshold() {
        let d = detector();
        let frames = d.frames("fridge_01").unwrap();
        let out = d.detect(&frames[0], 0.5).unwrap();
        assert_eq!(labels(&out), vec![("tomato".into(), 0.91), ("onion".into(), 0.86), ("cheese".into(), 0.74)]);
        assert!(out.unknown_labels.is_empty());
    }

    #[test]
    fn unknown_labels_are_surfaced() {
        let d = detector();
        let frames = d.frames("fridge_01").unwrap();
        let out = d.detect(&frames[0], 0.0).unwrap();
        assert_eq!(out.unknown_labels.len(), 1);
        assert_eq!(out.unknown_labels[0].raw, "kitchen towel");
    }

    #[test]
    fn synonyms_are_resolved() {
        let d = detector();
        let frames = d.frames("fridge_02").unwrap();
        let out = d.detect(&frames[0], 0.5).unwrap();
        assert!(out.detections.iter().any(|x| x.label == "bell_pepper"));
    }

    #[test]
    fn threshold_one_drops_everything_below_one() {
        let d = detector();
        for id in d.fixture_ids() {
            for f in d.detect_all(&id, 1.0).unwrap() {
                assert!(f.detections.is_empty());
            }
        }
    }

    #[test]
    fn zero_threshold_is_a_superset() {
        let d = detector();
        let f = &d.frames("fridge_01").unwrap()[0];
        let low = d.detect(f, 0.0).unwrap();
        let high = d.detect(f, 0.5).unwrap();
        for det in &high.detections {
            assert!(low.detections.contains(det));
        }
        assert!(low.detections.len() > high.detections.len());
    }

    #[test]
    fn fixture_mode_is_deterministic() {
        let d = detector();
        let a = serde_json::to_string(&d.detect_all("fridge_01", 0.5).unwrap()).unwrap();
        let b = serde_json::to_string(&d.detect_all("fridge_01", 0.5).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_fixture() {
        let d = detector();
        assert!(matches!(d.frames("nope"), Err(DetectError::FixtureNotFound(_))));
        assert!(matches!(d.frames("../etc/passwd"), Err(DetectError::FixtureNotFound(_))));
    }

    #[test]
    fn bad_threshold_is_rejected() {
        let d = detector();
        let f = &d.frames("fridge_01").unwrap()[0];
        assert!(matches!(d.detect(f, 1.5), Err(DetectError::BadThreshold(_))));
    }

    #[test]
    fn fixtures_directory_is_read() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(
            dir.path().join("shelf.json"),
            r#"[{"frame_id":"s0","detections":[{"label":"Egg","confidence":0.7,"bbox":[0.1,0.1,0.2,0.2]}]}]"#,
        )
        .unwrap();
        let d = FixtureDetector::new(dir.path(), Vocabulary::embedded());
        assert_eq!(d.fixture_ids(), vec!["shelf".to_string()]);
        let out = d.detect_all("shelf", 0.5).unwrap();
        assert_eq!(out[0].detections[0].label, "egg");
    }

    #[test]
    fn rejects_box_outside_unit_square() {
        let raw = RawFrame {
            frame_id: "f".into(),
            detections: vec![RawDetection { label: "egg".into(), confidence: 0.9, bbox: [0.9, 0.9, 0.2, 0.2] }],
        };
        assert!(interpret_frame(&raw, 0.5, &Vocabulary::embedded()).is_err());
    }

    fn frame(labels: &[&str]) -> FrameDetections {
        FrameDetections {
            frame_id: String::new(),
            detections: labels
                .iter()
                .map(|l| DetectedIngredient {
                    label: l.to_string(),
                    confidence: 0.9,
                    bbox: BBox::from([0.1, 0.1, 0.1, 0.1]),
                })
                .collect(),
            unknown_labels: vec![],
        }
    }

    #[test]
    fn consolidate_majority() {
        let all = vec![frame(&["tomato"]), frame(&["tomato"]), frame(&["tomato"])];
        assert_eq!(consolidate(&all, 3), BTreeSet::from(["tomato".to_string()]));
        let once = vec![frame(&["tomato"]), frame(&[]), frame(&[])];
        assert!(consolidate(&once, 3).is_empty());
    }

    #[test]
    fn consolidate_fridge_01() {
        let d = detector();
        let frames = d.detect_all("fridge_01", 0.5).unwrap();
        let got: Vec<_> = consolidate(&frames, 3).into_iter().collect();
        assert_eq!(got, ["cheese", "onion", "tomato"]);
    }

    // Brute-force recount: for each label, count frames in the window that contain it.
    fn recount(frames: &[Vec<&str>], window: usize) -> BTreeSet<String> {
        let start = frames.len().saturating_sub(window);
        let w = frames.len() - start;
        let mut out = BTreeSet::new();
        let all: BTreeSet<&str> = frames[start..].iter().flatten().copied().collect();
        for label in all {
            let n = frames[start..].iter().filter(|f| f.contains(&label)).count();
            if 2 * n >= w {
                out.insert(label.to_string());
            }
        }
        out
    }

    #[test]
    fn consolidate_interleaved_four_frames() {
        let raw = vec![
            vec!["tomato", "onion"],
            vec!["onion", "egg", "onion"],
            vec!["tomato", "cheese"],
            vec!["cheese", "onion"],
        ];
        let frames: Vec<_> = raw.iter().map(|f| frame(f)).collect();
        let expected = recount(&raw, 4);
        assert_eq!(consolidate(&frames, 4), expected);
        assert_eq!(expected, ["cheese", "onion", "tomato"].iter().map(|s| s.to_string()).collect());
        assert_eq!(consolidate(&frames, 3), recount(&raw, 3));
    }

    proptest! {
        #[test]
        fn consolidate_matches_recount_and_is_subset(
            raw in prop::collection::vec(prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..4), 0..7),
            window in 1usize..6,
        ) {
            let frames: Vec<_> = raw.iter().map(|f| frame(f)).collect();
            let got = consolidate(&frames, window);
            prop_assert_eq!(&got, &recount(&raw, window));
            let union: BTreeSet<String> = raw.iter().flatten().map(|s| s.to_string()).collect();
            prop_assert!(got.is_subset(&union));
        }

        #[test]
        fn detect_is_monotone_in_threshold(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let d = detector();
            for id in ["fridge_01", "fridge_02", "pantry_01"] {
                let low = d.detect_all(id, lo).unwrap();
                let high = d.detect_all(id, hi).unwrap();
                for (l, h) in low.iter().zip(&high) {
                    for det in &h.detections {
                        prop_assert!(l.detections.contains(det));
                    }
                }
            }
        }
    }
}
