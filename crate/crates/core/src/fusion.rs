//! Depth-camera / laser fusion.
//!
//! A body-frame point cloud is cut to a height band, projected onto the
//! laser's angular grid as a virtual scan, and merged with the real scan by
//! taking the per-beam minimum. Obstacles below or above the laser plane thus
//! show up in the fused scan wherever the camera sees them.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Scan, ScannerSpec};

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("scan length mismatch: laser has {laser} beams, virtual scan has {virtual_len}")]
    LengthMismatch { laser: usize, virtual_len: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Points in the robot body frame: x forward, y left, z up (meters).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VirtualScanSpec {
    /// Horizontal field of view of the camera, degrees.
    pub fov: f64,
    /// `[z_min, z_max]` in meters; points outside are ignored.
    pub height_band: [f64; 2],
    pub min_depth: f64,
}

impl Default for VirtualScanSpec {
    fn default() -> Self {
        Self {
            fov: 90.0,
            height_band: [0.02, 0.42],
            min_depth: 0.2,
        }
    }
}

impl VirtualScanSpec {
    pub fn validate(&self, laser: &ScannerSpec) -> Result<(), String> {
        if !(self.fov > 0.0 && self.fov <= laser.fov) {
            return Err(format!("camera fov {} must be in (0, {}]", self.fov, laser.fov));
        }
        if !(self.height_band[0] < self.height_band[1]) {
            return Err("height_band needs z_min < z_max".into());
        }
        if !(self.min_depth >= 0.0) {
            return Err("min_depth must be >= 0".into());
        }
        Ok(())
    }
}

/// Projects a point cloud onto the laser's beam grid.
///
/// Each kept point lands in the beam nearest to its bearing; a beam takes the
/// smallest planar range among its points. Empty beams and beams outside the
/// camera's field of view report `max_range`.
pub fn pointcloud_to_scan(cloud: &PointCloud, vspec: &VirtualScanSpec, sspec: &ScannerSpec) -> Scan {
    let mut scan = Scan::filled(sspec.num_beams, sspec.max_range);
    let half_cam = (0.5 * vspec.fov).to_radians();
    let [z_min, z_max] = vspec.height_band;
    let step = sspec.step_radians();
    let half_fov = sspec.half_fov_radians();
    for p in &cloud.points {
        if !(p.z >= z_min && p.z <= z_max) {
            continue;
        }
        let range = p.x.hypot(p.y);
        if !(range >= vspec.min_depth) {
            continue;
        }
        let bearing = p.y.atan2(p.x);
        if bearing.abs() > half_cam {
            continue;
        }
        let bin = ((bearing + half_fov) / step).round();
        if bin < 0.0 || bin >= sspec.num_beams as f64 {
            continue;
        }
        let slot = &mut scan.ranges[bin as usize];
        *slot = slot.min(range);
    }
    scan
}

/// Per-beam minimum of two scans on the same grid.
pub fn fuse_scans(laser: &Scan, virtual_scan: &Scan) -> Result<Scan, FusionError> {
    if laser.len() != virtual_scan.len() {
        return Err(FusionError::LengthMismatch {
            laser: laser.len(),
            virtual_len: virtual_scan.len(),
        });
    }
    let ranges = laser
        .ranges
        .iter()
        .zip(&virtual_scan.ranges)
        .map(|(&a, &b)| a.min(b))
        .collect();
    Ok(Scan { ranges })
}

fn data_lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String), FusionError>> {
    reader.lines().enumerate().filter_map(|(i, line)| match line {
        Err(e) => Some(Err(e.into())),
        Ok(line) => {
            let content = line.split('#').next().unwrap_or("").trim().to_string();
            (!content.is_empty()).then_some(Ok((i + 1, content)))
        }
    })
}

fn parse_value(token: &str, line: usize) -> Result<f64, FusionError> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| FusionError::Parse {
            line,
            message: format!("expected a finite number, found \"{token}\""),
        })
}

/// Reads `x y z` triples, one per line; `#` starts a comment.
pub fn read_point_cloud<R: BufRead>(reader: R) -> Result<PointCloud, FusionError> {
    let mut points = Vec::new();
    for item in data_lines(reader) {
        let (line, content) = item?;
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.len() != 3 {
            return Err(FusionError::Parse {
                line,
                message: format!("expected 3 values (x y z), found {}", tokens.len()),
            });
        }
        points.push(Point3 {
            x: parse_value(tokens[0], line)?,
            y: parse_value(tokens[1], line)?,
            z: parse_value(tokens[2], line)?,
        });
    }
    Ok(PointCloud { points })
}

/// Reads one range per line.
pub fn read_scan<R: BufRead>(reader: R) -> Result<Scan, FusionError> {
    let mut ranges = Vec::new();
    for item in data_lines(reader) {
        let (line, content) = item?;
        ranges.push(parse_value(&content, line)?);
    }
    Ok(Scan { ranges })
}

pub fn write_scan<W: Write>(scan: &Scan, mut out: W) -> std::io::Result<()> {
    for r in &scan.ranges {
        writeln!(out, "{r}")?;
    }
    Ok(())
}
