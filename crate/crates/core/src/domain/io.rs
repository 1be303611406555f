//! File formats.
//!
//! Grid stacks use a flat little-endian container: the magic `GFH1`, then
//! `u32` width, height and channel count, then `channels * w * h` `f32`
//! values, channel-major and row-major within a channel. A heatmap is one
//! channel; an offset field is two (`dx` then `dy`).
//!
//! Detections and trajectories are CSV with the header
//! `time,id,x,y,confidence`; unassociated detections carry id `-1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Detection, GroundGrid, Heatmap, OffsetField, Point, Trajectory};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GFH1";
const HEADER_LEN: usize = 16;

/// A stack of equally sized channels as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStack {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<f64>>,
}

pub fn encode_stack(width: usize, height: usize, channels: &[&[f64]]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * width * height * channels.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(width as u32).to_le_bytes());
    out.extend_from_slice(&(height as u32).to_le_bytes());
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for ch in channels {
        debug_assert_eq!(ch.len(), width * height);
        for &v in ch.iter() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_stack(bytes: &[u8], origin: &Path) -> Result<GridStack> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::format(origin, "missing GFH1 header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (width, height, count) = (word(4), word(8), word(12));
    if width == 0 || height == 0 {
        return Err(Error::format(origin, "zero grid dimension"));
    }
    let plane = width * height;
    let expected = HEADER_LEN + 4 * plane * count;
    if bytes.len() != expected {
        return Err(Error::format(
            origin,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let channels = bytes[HEADER_LEN..]
        .chunks_exact(4 * plane.max(1))
        .map(|chunk| {
            chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect()
        })
        .collect();
    Ok(GridStack {
        width,
        height,
        channels,
    })
}

pub fn write_stack(path: &Path, width: usize, height: usize, channels: &[&[f64]]) -> Result<()> {
    std::fs::write(path, encode_stack(width, height, channels)).map_err(|e| Error::io(path, e))
}

pub fn read_stack(path: &Path) -> Result<GridStack> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_stack(&bytes, path)
}

pub fn write_heatmaps(path: &Path, grid: &GroundGrid, maps: &[Heatmap]) -> Result<()> {
    let channels: Vec<&[f64]> = maps.iter().map(|m| m.values()).collect();
    write_stack(path, grid.width(), grid.height(), &channels)
}

pub fn read_heatmaps(path: &Path, grid: &GroundGrid) -> Result<Vec<Heatmap>> {
    let stack = read_stack(path)?;
    check_dims(&stack, grid, path)?;
    stack
        .channels
        .into_iter()
        .map(|c| Heatmap::new(*grid, c))
        .collect::<Result<_>>()
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_offsets(path: &Path, grid: &GroundGrid, fields: &[OffsetField]) -> Result<()> {
    let channels: Vec<&[f64]> = fields.iter().flat_map(|f| [f.dx(), f.dy()]).collect();
    write_stack(path, grid.width(), grid.height(), &channels)
}

pub fn read_offsets(path: &Path, grid: &GroundGrid) -> Result<Vec<OffsetField>> {
    let stack = read_stack(path)?;
    check_dims(&stack, grid, path)?;
    if stack.channels.len() % 2 != 0 {
        return Err(Error::format(
            path,
            "offset stacks need an even channel count",
        ));
    }
    let mut channels = stack.channels.into_iter();
    let mut out = Vec::new();
    while let (Some(dx), Some(dy)) = (channels.next(), channels.next()) {
        out.push(OffsetField::new(*grid, dx, dy).map_err(|e| Error::format(path, e.to_string()))?);
    }
    Ok(out)
}

fn check_dims(stack: &GridStack, grid: &GroundGrid, path: &Path) -> Result<()> {
    if (stack.width, stack.height) != grid.dims() {
        return Err(Error::format(
            path,
            format!(
                "grid is {}x{}, expected {}x{}",
                stack.width,
                stack.height,
                grid.width(),
                grid.height()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub time: i64,
    pub id: i64,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

pub fn write_records(path: &Path, records: &[TrackRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(BufWriter::new(file));
    for r in records {
        writer.serialize(r)?;
    }
    if records.is_empty() {
        writer.write_record(["time", "id", "x", "y", "confidence"])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_records(path: &Path) -> Result<Vec<TrackRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(BufReader::new(file));
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["time", "id", "x", "y", "confidence"] {
        return Err(Error::format(
            path,
            "expected header time,id,x,y,confidence",
        ));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e: csv::Error| Error::format(path, e.to_string())))
        .collect()
}

/// Detections grouped per frame, frames `0..num_frames`.
pub fn write_detections(path: &Path, frames: &[Vec<Detection>]) -> Result<()> {
    let records: Vec<TrackRecord> = frames
        .iter()
        .flatten()
        .map(|d| TrackRecord {
            time: d.time,
            id: -1,
            x: d.pos.x,
            y: d.pos.y,
            confidence: d.confidence,
        })
        .collect();
    write_records(path, &records)
}

pub fn read_detections(path: &Path, num_frames: usize) -> Result<Vec<Vec<Detection>>> {
    let mut frames = vec![Vec::new(); num_frames];
    for r in read_records(path)? {
        let slot = usize::try_from(r.time)
            .ok()
            .and_then(|t| frames.get_mut(t))
            .ok_or_else(|| Error::format(path, format!("frame {} out of range", r.time)))?;
        slot.push(Detection::new(r.time, Point::new(r.x, r.y), r.confidence));
    }
    Ok(frames)
}

pub fn trajectories_to_records(tracks: &[Trajectory]) -> Vec<TrackRecord> {
    let mut records: Vec<TrackRecord> = tracks
        .iter()
        .flat_map(|t| {
            t.points().iter().map(move |p| TrackRecord {
                time: p.time,
                id: t.id,
                x: p.pos.x,
                y: p.pos.y,
                confidence: 1.0,
            })
        })
        .collect();
    records.sort_by_key(|r| (r.time, r.id));
    records
}

pub fn write_trajectories(path: &Path, tracks: &[Trajectory]) -> Result<()> {
    write_records(path, &trajectories_to_records(tracks))
}

pub fn read_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    let mut records = read_records(path)?;
    records.sort_by_key(|r| (r.id, r.time));
    let mut out: Vec<Trajectory> = Vec::new();
    for r in records {
        let pos = Point::new(r.x, r.y);
        match out.last_mut() {
            Some(t) if t.id == r.id => t
                .push(r.time, pos)
                .map_err(|e| Error::format(path, e.to_string()))?,
            _ => out.push(Trajectory::start(r.id, r.time, pos)),
        }
    }
    Ok(out)
}

/// Writes a UTF-8 text file.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
