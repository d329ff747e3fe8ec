//! Binary little-endian PLY for splat models and point clouds.
//!
//! Splat vertices carry `x y z f_dc_0..2 opacity scale_0..2 rot_0..3` in
//! that order: mean, color, opacity logit, log scale and the (w, x, y, z)
//! quaternion. Values are written as doubles so a round trip is exact;
//! `float` properties are accepted on read.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gauss::{Gaussian3D, SplatModel};
use crate::iso::{CloudPoint, PointCloud};

use super::{atomic_write, read_bytes};

const SPLAT_PROPS: [&str; 14] = [
    "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2",
    "rot_3",
];
const CLOUD_PROPS: [&str; 9] = ["x", "y", "z", "nx", "ny", "nz", "red", "green", "blue"];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Scalar {
    F32,
    F64,
}

struct Header {
    comments: Vec<String>,
    count: usize,
    props: Vec<(String, Scalar)>,
    body: usize,
}

fn header(comments: &[String], count: usize, props: &[&str]) -> Vec<u8> {
    let mut s = String::from("ply\nformat binary_little_endian 1.0\n");
    for c in comments {
        s.push_str(&format!("comment {c}\n"));
    }
    s.push_str(&format!("element vertex {count}\n"));
    for p in props {
        s.push_str(&format!("property double {p}\n"));
    }
    s.push_str("end_header\n");
    s.into_bytes()
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    let bad = |reason: &str| Error::malformed(path, reason);
    let mut pos = 0;
    let mut lines = Vec::new();
    loop {
        let rest = &bytes[pos..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| bad("header is not terminated"))?;
        let line = std::str::from_utf8(&rest[..nl]).map_err(|_| bad("header is not ASCII"))?.trim_end_matches('\r');
        pos += nl + 1;
        if line == "end_header" {
            break;
        }
        lines.push(line.to_string());
        if lines.len() > 256 {
            return Err(bad("header too long"));
        }
    }
    let mut it = lines.iter();
    if it.next().map(String::as_str) != Some("ply") {
        return Err(bad("missing ply magic"));
    }
    let mut h = Header { comments: Vec::new(), count: 0, props: Vec::new(), body: pos };
    let mut saw_format = false;
    let mut saw_vertex = false;
    for line in it {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", "1.0"] => saw_format = true,
            ["format", other, ..] => return Err(bad(&format!("unsupported format {other}"))),
            ["comment", ..] => h.comments.push(line["comment".len()..].trim().to_string()),
            ["element", "vertex", n] if !saw_vertex => {
                h.count = n.parse().map_err(|_| bad("bad vertex count"))?;
                saw_vertex = true;
            }
            ["element", ..] => return Err(bad("only a single vertex element is supported")),
            ["property", ty, name] if saw_vertex => {
                let scalar = match *ty {
                    "double" | "float64" => Scalar::F64,
                    "float" | "float32" => Scalar::F32,
                    other => return Err(bad(&format!("unsupported property type {other}"))),
                };
                h.props.push((name.to_string(), scalar));
            }
            _ => return Err(bad(&format!("unexpected header line {line:?}"))),
        }
    }
    if !saw_format || !saw_vertex {
        return Err(bad("missing format or vertex element"));
    }
    Ok(h)
}

/// Reads the body into one row of doubles per vertex, ordered as `expect`.
fn read_rows(path: &Path, bytes: &[u8], expect: &[&str]) -> Result<(Header, Vec<Vec<f64>>)> {
    let h = parse_header(path, bytes)?;
    let names: Vec<&str> = h.props.iter().map(|(n, _)| n.as_str()).collect();
    if names != expect {
        return Err(Error::malformed(path, format!("expected properties {expect:?}, found {names:?}")));
    }
    let stride: usize = h.props.iter().map(|(_, s)| if *s == Scalar::F64 { 8 } else { 4 }).sum();
    let body = &bytes[h.body..];
    let need = h.count.checked_mul(stride).ok_or_else(|| Error::malformed(path, "vertex count overflows"))?;
    if body.len() < need {
        return Err(Error::malformed(path, format!("truncated: {} of {need} body bytes", body.len())));
    }
    if body.len() > need {
        return Err(Error::malformed(path, "trailing bytes after vertex data"));
    }
    let mut rows = Vec::with_capacity(h.count);
    for rec in body.chunks_exact(stride) {
        let mut off = 0;
        let row = h
            .props
            .iter()
            .map(|(_, s)| match s {
                Scalar::F64 => {
                    let v = f64::from_le_bytes(rec[off..off + 8].try_into().unwrap());
                    off += 8;
                    v
                }
                Scalar::F32 => {
                    let v = f32::from_le_bytes(rec[off..off + 4].try_into().unwrap()) as f64;
                    off += 4;
                    v
                }
            })
            .collect();
        rows.push(row);
    }
    Ok((h, rows))
}

pub fn encode_splat_ply(model: &SplatModel) -> Vec<u8> {
    let partition = model.origin_partition.map_or("none".to_string(), |p| p.to_string());
    let comments = vec![format!("isosplat iteration {} partition {partition}", model.iteration)];
    let mut out = header(&comments, model.len(), &SPLAT_PROPS);
    out.reserve(model.len() * 14 * 8);
    for g in &model.gaussians {
        let row = [
            g.mu[0], g.mu[1], g.mu[2], g.color[0], g.color[1], g.color[2], g.opacity_logit, g.log_scale[0],
            g.log_scale[1], g.log_scale[2], g.rot[0], g.rot[1], g.rot[2], g.rot[3],
        ];
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_splat_ply(path: &Path, bytes: &[u8]) -> Result<SplatModel> {
    let (h, rows) = read_rows(path, bytes, &SPLAT_PROPS)?;
    let mut model = SplatModel::default();
    for c in &h.comments {
        let words: Vec<&str> = c.split_whitespace().collect();
        if let ["isosplat", "iteration", it, "partition", part] = words.as_slice() {
            model.iteration = it.parse().map_err(|_| Error::malformed(path, "bad iteration comment"))?;
            model.origin_partition = match *part {
                "none" => None,
                p => Some(p.parse().map_err(|_| Error::malformed(path, "bad partition comment"))?),
            };
        }
    }
    model.gaussians = rows
        .iter()
        .map(|r| Gaussian3D {
            mu: [r[0], r[1], r[2]],
            color: [r[3], r[4], r[5]],
            opacity_logit: r[6],
            log_scale: [r[7], r[8], r[9]],
            rot: [r[10], r[11], r[12], r[13]],
        })
        .collect();
    Ok(model)
}

pub fn encode_cloud_ply(pc: &PointCloud) -> Vec<u8> {
    let mut out = header(&[], pc.len(), &CLOUD_PROPS);
    for p in &pc.points {
        for v in p.position.iter().chain(&p.normal).chain(&p.color) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_cloud_ply(path: &Path, bytes: &[u8]) -> Result<PointCloud> {
    let (_, rows) = read_rows(path, bytes, &CLOUD_PROPS)?;
    Ok(PointCloud {
        points: rows
            .iter()
            .map(|r| CloudPoint { position: [r[0], r[1], r[2]], normal: [r[3], r[4], r[5]], color: [r[6], r[7], r[8]] })
            .collect(),
    })
}

pub fn write_model(path: &Path, model: &SplatModel) -> Result<()> {
    atomic_write(path, &encode_splat_ply(model))
}

pub fn read_model(path: &Path) -> Result<SplatModel> {
    decode_splat_ply(path, &read_bytes(path)?)
}

pub fn write_cloud(path: &Path, pc: &PointCloud) -> Result<()> {
    atomic_write(path, &encode_cloud_ply(pc))
}

pub fn read_cloud(path: &Path) -> Result<PointCloud> {
    decode_cloud_ply(path, &read_bytes(path)?)
}
