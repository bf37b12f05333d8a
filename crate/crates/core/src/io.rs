//! Readers and writers for the interchange formats.
//!
//! - MOT text: `frame,id,bb_left,bb_top,bb_width,bb_height,conf,x,y,z`,
//!   one object per line, coordinates emitted at 6 decimal places.
//! - Middlebury `.flo`: little-endian, float sentinel `202021.25`, then
//!   `i32` width/height and interleaved `f32` (u, v) pairs, row-major.
//! - Pose records: JSON lines, one object per line with `frame`, optional
//!   `track_id`, and `keypoints` as `[x, y, conf]` triples.
//! - Embedding sidecar: ASCII header `D <dim> N <count>`, then
//!   `count * dim` little-endian `f32`.
//! - Gray frame: ASCII header `W <w> H <h>`, then `w * h` little-endian `f32`.
//! - Heatmap: ASCII header `K <k> H <h> W <w>`, then `k * h * w`
//!   little-endian `f32`.
//!
//! Every parser is total: it returns a value or a structured error, never
//! panics on malformed input. Writers emit rows in `(frame, id)` order.

use crate::error::{Error, Result};
use crate::types::{BBox, Detection, FlowField, GrayFrame, Heatmap, Keypoint, Pose, TrackedBox};
use serde::{Deserialize, Serialize};

const FLO_SENTINEL: f32 = 202021.25;

// ---------------------------------------------------------------------------
// MOT text format
// ---------------------------------------------------------------------------

struct MotLine {
    frame: i64,
    id: i64,
    bbox: BBox,
    conf: f64,
}

fn parse_mot_line(line_no: usize, line: &str) -> Result<MotLine> {
    let fields: Vec<&str> = line.split(',').map(str::trim).collect();
    if fields.len() != 10 {
        return Err(Error::parse(
            line_no,
            format!("expected 10 comma-separated fields, got {}", fields.len()),
        ));
    }
    let int = |idx: usize, name: &str| -> Result<i64> {
        fields[idx]
            .parse::<i64>()
            .map_err(|e| Error::parse(line_no, format!("bad {name} '{}': {e}", fields[idx])))
    };
    let real = |idx: usize, name: &str| -> Result<f64> {
        let v = fields[idx]
            .parse::<f64>()
            .map_err(|e| Error::parse(line_no, format!("bad {name} '{}': {e}", fields[idx])))?;
        if !v.is_finite() {
            return Err(Error::parse(line_no, format!("non-finite {name}")));
        }
        Ok(v)
    };
    let frame = int(0, "frame")?;
    if frame < 0 {
        return Err(Error::parse(line_no, format!("negative frame {frame}")));
    }
    let id = int(1, "id")?;
    let left = real(2, "bb_left")?;
    let top = real(3, "bb_top")?;
    let width = real(4, "bb_width")?;
    let height = real(5, "bb_height")?;
    let conf = real(6, "conf")?;
    // world coordinates are ignored but must still be decimal fields
    real(7, "x")?;
    real(8, "y")?;
    real(9, "z")?;
    if width <= 0.0 || height <= 0.0 {
        return Err(Error::validation(format!(
            "line {line_no}: box width/height must be positive, got {width} x {height}"
        )));
    }
    if !(0.0..=1.0).contains(&conf) {
        return Err(Error::validation(format!(
            "line {line_no}: confidence {conf} outside [0, 1]"
        )));
    }
    let bbox = BBox::from_tlwh(left, top, width, height)?;
    Ok(MotLine {
        frame,
        id,
        bbox,
        conf,
    })
}

fn nonempty_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// Parse a MOT detection file (`id` column must be `-1`).
///
/// The returned list is sorted by frame, preserving file order within a
/// frame. Proposal ids and embeddings are absent; embeddings arrive through
/// the sidecar file, aligned with this row order.
pub fn parse_mot_detections(text: &str) -> Result<Vec<Detection>> {
    let mut rows = Vec::new();
    for (line_no, line) in nonempty_lines(text) {
        let m = parse_mot_line(line_no, line)?;
        if m.id != -1 {
            return Err(Error::validation(format!(
                "line {line_no}: detection rows must carry id -1, got {}",
                m.id
            )));
        }
        rows.push(Detection::new(m.frame, m.bbox, m.conf)?);
    }
    rows.sort_by_key(|d| d.frame);
    Ok(rows)
}

/// Parse a MOT track or ground-truth file (`id` column must be positive).
///
/// The returned list is sorted by `(frame, id)`.
pub fn parse_mot_tracks(text: &str) -> Result<Vec<TrackedBox>> {
    let mut rows = Vec::new();
    for (line_no, line) in nonempty_lines(text) {
        let m = parse_mot_line(line_no, line)?;
        if m.id <= 0 {
            return Err(Error::validation(format!(
                "line {line_no}: track rows must carry a positive id, got {}",
                m.id
            )));
        }
        rows.push(TrackedBox::new(m.frame, m.id, m.bbox, m.conf)?);
    }
    rows.sort_by_key(|t| (t.frame, t.track_id));
    Ok(rows)
}

fn mot_line(frame: i64, id: i64, bbox: &BBox, conf: f64) -> String {
    format!(
        "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},-1,-1,-1",
        frame,
        id,
        bbox.x1,
        bbox.y1,
        bbox.width(),
        bbox.height(),
        conf
    )
}

/// Serialize tracked boxes in `(frame, id)` order.
pub fn write_mot_tracks(items: &[TrackedBox]) -> String {
    let mut sorted: Vec<&TrackedBox> = items.iter().collect();
    sorted.sort_by_key(|t| (t.frame, t.track_id));
    let mut out = String::new();
    for t in sorted {
        out.push_str(&mot_line(t.frame, t.track_id, &t.bbox, t.score));
        out.push('\n');
    }
    out
}

/// Serialize detections (id column `-1`) in frame order, stable within frames.
pub fn write_mot_detections(items: &[Detection]) -> String {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by_key(|&i| (items[i].frame, i));
    let mut out = String::new();
    for i in order {
        let d = &items[i];
        out.push_str(&mot_line(d.frame, -1, &d.bbox, d.score));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Middlebury .flo
// ---------------------------------------------------------------------------

fn take_f32(bytes: &[u8], off: &mut usize) -> Option<f32> {
    let b = bytes.get(*off..*off + 4)?;
    *off += 4;
    Some(f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

fn take_i32(bytes: &[u8], off: &mut usize) -> Option<i32> {
    let b = bytes.get(*off..*off + 4)?;
    *off += 4;
    Some(i32::from_le_bytes([b[0], b[1], b[2], b[3]]))
}

pub fn read_flo(bytes: &[u8]) -> Result<FlowField> {
    let mut off = 0;
    let sentinel =
        take_f32(bytes, &mut off).ok_or_else(|| Error::format("flo: truncated header"))?;
    if sentinel != FLO_SENTINEL {
        return Err(Error::format(format!(
            "flo: bad sentinel {sentinel}, expected {FLO_SENTINEL}"
        )));
    }
    let width = take_i32(bytes, &mut off).ok_or_else(|| Error::format("flo: truncated header"))?;
    let height = take_i32(bytes, &mut off).ok_or_else(|| Error::format("flo: truncated header"))?;
    if width <= 0 || height <= 0 {
        return Err(Error::format(format!(
            "flo: non-positive dimensions {width} x {height}"
        )));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = checked_count(width, height, "flo")?
        .checked_mul(8)
        .and_then(|n| n.checked_add(12))
        .ok_or_else(|| Error::format("flo: dimensions overflow"))?;
    if bytes.len() != expected {
        return Err(Error::format(format!(
            "flo: payload length {} does not match {width} x {height} (expected {expected} bytes)",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        let u = take_f32(bytes, &mut off).unwrap();
        let v = take_f32(bytes, &mut off).unwrap();
        data.push([u, v]);
    }
    FlowField::new(width, height, data)
}

pub fn write_flo(field: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + field.data().len() * 8);
    out.extend_from_slice(&FLO_SENTINEL.to_le_bytes());
    out.extend_from_slice(&(field.width() as i32).to_le_bytes());
    out.extend_from_slice(&(field.height() as i32).to_le_bytes());
    for p in field.data() {
        out.extend_from_slice(&p[0].to_le_bytes());
        out.extend_from_slice(&p[1].to_le_bytes());
    }
    out
}

// ---------------------------------------------------------------------------
// Pose records (JSON lines)
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRecord {
    frame: i64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    track_id: Option<i64>,
    keypoints: Vec<[f64; 3]>,
}

/// Parse JSON-lines pose records; all records must share one keypoint count.
pub fn read_pose_records(text: &str) -> Result<Vec<Pose>> {
    let mut poses: Vec<Pose> = Vec::new();
    let mut k: Option<usize> = None;
    for (line_no, line) in nonempty_lines(text) {
        let rec: PoseRecord = serde_json::from_str(line)
            .map_err(|e| Error::parse(line_no, format!("bad pose record: {e}")))?;
        match k {
            None => k = Some(rec.keypoints.len()),
            Some(k) if k != rec.keypoints.len() => {
                return Err(Error::validation(format!(
                    "line {line_no}: keypoint count {} differs from earlier records ({k})",
                    rec.keypoints.len()
                )));
            }
            _ => {}
        }
        let keypoints = rec
            .keypoints
            .iter()
            .map(|&[x, y, c]| Keypoint::new(x, y, c))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::validation(format!("line {line_no}: {e}")))?;
        poses.push(Pose::new(rec.frame, rec.track_id, keypoints)?);
    }
    Ok(poses)
}

pub fn write_pose_records(poses: &[Pose]) -> String {
    let mut out = String::new();
    for p in poses {
        let rec = PoseRecord {
            frame: p.frame,
            track_id: p.track_id,
            keypoints: p.keypoints.iter().map(|k| [k.x, k.y, k.conf]).collect(),
        };
        out.push_str(&serde_json::to_string(&rec).expect("pose record serialization"));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------------
// Embedding sidecar
// ---------------------------------------------------------------------------

/// Split the ASCII header line off a binary file, returning (header, payload).
fn split_header(bytes: &[u8]) -> Result<(&str, &[u8])> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("missing header line"))?;
    let header = std::str::from_utf8(&bytes[..nl])
        .map_err(|_| Error::format("header line is not valid UTF-8"))?;
    Ok((header, &bytes[nl + 1..]))
}

fn header_fields<'a>(header: &'a str, keys: &[&str]) -> Result<Vec<usize>> {
    let tokens: Vec<&'a str> = header.split_whitespace().collect();
    if tokens.len() != keys.len() * 2 {
        return Err(Error::format(format!(
            "header '{header}' does not match expected keys {keys:?}"
        )));
    }
    let mut values = Vec::with_capacity(keys.len());
    for (i, key) in keys.iter().enumerate() {
        if tokens[2 * i] != *key {
            return Err(Error::format(format!(
                "header '{header}': expected key '{key}', found '{}'",
                tokens[2 * i]
            )));
        }
        let v: usize = tokens[2 * i + 1]
            .parse()
            .map_err(|e| Error::format(format!("header '{header}': bad {key} value: {e}")))?;
        values.push(v);
    }
    Ok(values)
}

fn read_f32_payload(payload: &[u8], count: usize, what: &str) -> Result<Vec<f32>> {
    let expected = count
        .checked_mul(4)
        .ok_or_else(|| Error::format(format!("{what}: element count overflows")))?;
    if payload.len() != expected {
        return Err(Error::format(format!(
            "{what}: payload is {} bytes, expected {expected}",
            payload.len()
        )));
    }
    Ok(payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

fn checked_count(a: usize, b: usize, what: &str) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Error::format(format!("{what}: dimensions overflow")))
}

/// Read the embedding sidecar; returns the dimension and one vector per row.
pub fn read_embeddings(bytes: &[u8]) -> Result<(usize, Vec<Vec<f32>>)> {
    let (header, payload) = split_header(bytes)?;
    let vals = header_fields(header, &["D", "N"])?;
    let (dim, count) = (vals[0], vals[1]);
    if dim == 0 {
        return Err(Error::format("embedding dimension must be positive"));
    }
    let flat = read_f32_payload(
        payload,
        checked_count(dim, count, "embedding sidecar")?,
        "embedding sidecar",
    )?;
    Ok((dim, flat.chunks_exact(dim).map(<[f32]>::to_vec).collect()))
}

pub fn write_embeddings(dim: usize, rows: &[Vec<f32>]) -> Result<Vec<u8>> {
    if rows.iter().any(|r| r.len() != dim) {
        return Err(Error::validation(format!(
            "all embeddings must have dimension {dim}"
        )));
    }
    let mut out = format!("D {} N {}\n", dim, rows.len()).into_bytes();
    for row in rows {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Gray frames and heatmaps
// ---------------------------------------------------------------------------

pub fn read_gray_frame(bytes: &[u8]) -> Result<GrayFrame> {
    let (header, payload) = split_header(bytes)?;
    let vals = header_fields(header, &["W", "H"])?;
    let (w, h) = (vals[0], vals[1]);
    let pixels = read_f32_payload(payload, checked_count(w, h, "gray frame")?, "gray frame")?;
    GrayFrame::new(w, h, pixels)
}

pub fn write_gray_frame(frame: &GrayFrame) -> Vec<u8> {
    let mut out = format!("W {} H {}\n", frame.width(), frame.height()).into_bytes();
    for v in frame.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_heatmap(bytes: &[u8]) -> Result<Heatmap> {
    let (header, payload) = split_header(bytes)?;
    let vals = header_fields(header, &["K", "H", "W"])?;
    let (k, h, w) = (vals[0], vals[1], vals[2]);
    let count = checked_count(checked_count(k, h, "heatmap")?, w, "heatmap")?;
    let values = read_f32_payload(payload, count, "heatmap")?;
    Heatmap::new(k, h, w, values)
}

pub fn write_heatmap(h: &Heatmap) -> Vec<u8> {
    let mut out = format!("K {} H {} W {}\n", h.k(), h.height(), h.width()).into_bytes();
    for v in h.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}
