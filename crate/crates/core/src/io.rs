//! File formats: point clouds (CSV and LGPC binary), BEV rasters (LGBV),
//! lane polylines as JSON, and atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bev::{BevMap, CloudPoint, GridSpec, CHANNELS};
use crate::error::{Error, Result};
use crate::geom::{Polyline3, Vec2, Vec3};
use crate::scalar::{cast, Scalar};
use crate::synth::Scene;

pub const CLOUD_MAGIC: &[u8; 4] = b"LGPC";
pub const BEV_MAGIC: &[u8; 4] = b"LGBV";

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn parse_err(location: String, message: impl Into<String>) -> Error {
    Error::Parse { location, message: message.into() }
}

/// Loads a point cloud, detecting the binary format by its magic bytes and
/// otherwise reading `x,y,z,r` CSV lines (blank lines ignored).
pub fn load_point_cloud<T: Scalar>(path: &Path) -> Result<Vec<CloudPoint<T>>> {
    let bytes = read_bytes(path)?;
    let label = path.display().to_string();
    if bytes.starts_with(CLOUD_MAGIC) {
        decode_cloud_binary(&bytes, &label)
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| parse_err(label.clone(), format!("not UTF-8: {e}")))?;
        parse_cloud_csv(text, &label)
    }
}

pub fn parse_cloud_csv<T: Scalar>(text: &str, label: &str) -> Result<Vec<CloudPoint<T>>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let loc = || format!("{label}:{}", i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(parse_err(loc(), format!("expected 4 fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; 4];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|_| parse_err(loc(), format!("bad number {f:?}")))?;
        }
        let p = CloudPoint::new(cast(v[0]), cast(v[1]), cast(v[2]), cast(v[3])).map_err(|e| parse_err(loc(), e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

fn decode_cloud_binary<T: Scalar>(bytes: &[u8], label: &str) -> Result<Vec<CloudPoint<T>>> {
    if bytes.len() < 8 {
        return Err(parse_err(format!("{label}@4"), "truncated header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let need = 8 + count * 32;
    if bytes.len() != need {
        return Err(parse_err(format!("{label}@8"), format!("expected {need} bytes for {count} points, found {}", bytes.len())));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let off = 8 + i * 32;
        let f = |k: usize| f64::from_le_bytes(bytes[off + 8 * k..off + 8 * k + 8].try_into().unwrap());
        let p = CloudPoint::new(cast(f(0)), cast(f(1)), cast(f(2)), cast(f(3)))
            .map_err(|e| parse_err(format!("{label}@{off}"), e.to_string()))?;
        out.push(p);
    }
    Ok(out)
}

pub fn encode_cloud_csv<T: Scalar>(points: &[CloudPoint<T>]) -> String {
    let mut s = String::with_capacity(points.len() * 48);
    for p in points {
        use std::fmt::Write as _;
        let _ = writeln!(s, "{:?},{:?},{:?},{:?}", p.x.value_f64(), p.y.value_f64(), p.z.value_f64(), p.r.value_f64());
    }
    s
}

pub fn encode_cloud_binary<T: Scalar>(points: &[CloudPoint<T>]) -> Result<Vec<u8>> {
    let count = u32::try_from(points.len()).map_err(|_| Error::TooLarge { size: points.len(), limit: u32::MAX as usize })?;
    let mut out = Vec::with_capacity(8 + points.len() * 32);
    out.extend_from_slice(CLOUD_MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    for p in points {
        for v in [p.x, p.y, p.z, p.r] {
            out.extend_from_slice(&v.value_f64().to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_point_cloud_csv<T: Scalar>(path: &Path, points: &[CloudPoint<T>]) -> Result<()> {
    write_atomic(path, encode_cloud_csv(points).as_bytes())
}

pub fn save_point_cloud_binary<T: Scalar>(path: &Path, points: &[CloudPoint<T>]) -> Result<()> {
    write_atomic(path, &encode_cloud_binary(points)?)
}

/// Binary chosen by a `.lgpc`/`.bin` extension, CSV otherwise.
pub fn save_point_cloud<T: Scalar>(path: &Path, points: &[CloudPoint<T>]) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("lgpc") | Some("bin") => save_point_cloud_binary(path, points),
        _ => save_point_cloud_csv(path, points),
    }
}

/// LGBV layout: magic, origin (2×f64), width u32, height u32, resolution
/// f64, then four row-major f32 planes, all little-endian.
pub fn encode_bev<T: Scalar>(map: &BevMap<T>) -> Vec<u8> {
    let s = &map.spec;
    let mut out = Vec::with_capacity(36 + CHANNELS * 4 * s.cells());
    out.extend_from_slice(BEV_MAGIC);
    out.extend_from_slice(&s.origin.x.value_f64().to_le_bytes());
    out.extend_from_slice(&s.origin.y.value_f64().to_le_bytes());
    out.extend_from_slice(&s.width_px.to_le_bytes());
    out.extend_from_slice(&s.height_px.to_le_bytes());
    out.extend_from_slice(&s.resolution.value_f64().to_le_bytes());
    for plane in &map.channels {
        for v in plane {
            out.extend_from_slice(&(v.value_f64() as f32).to_le_bytes());
        }
    }
    out
}

pub fn decode_bev<T: Scalar>(bytes: &[u8], label: &str) -> Result<BevMap<T>> {
    if bytes.len() < 36 || !bytes.starts_with(BEV_MAGIC) {
        return Err(parse_err(format!("{label}@0"), "missing LGBV header"));
    }
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let spec = GridSpec::new(Vec2::new(cast(f64_at(4)), cast(f64_at(12))), u32_at(20), u32_at(24), cast(f64_at(28)))
        .map_err(|e| parse_err(format!("{label}@4"), e.to_string()))?;
    let n = spec.cells();
    let need = 36 + CHANNELS * 4 * n;
    if bytes.len() != need {
        return Err(parse_err(format!("{label}@36"), format!("expected {need} bytes, found {}", bytes.len())));
    }
    let mut map = BevMap::empty(spec);
    for (c, plane) in map.channels.iter_mut().enumerate() {
        for (i, v) in plane.iter_mut().enumerate() {
            let o = 36 + (c * n + i) * 4;
            *v = cast(f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64);
        }
    }
    Ok(map)
}

pub fn write_bev<T: Scalar>(path: &Path, map: &BevMap<T>) -> Result<()> {
    write_atomic(path, &encode_bev(map))
}

pub fn read_bev<T: Scalar>(path: &Path) -> Result<BevMap<T>> {
    decode_bev(&read_bytes(path)?, &path.display().to_string())
}

#[derive(Serialize, Deserialize)]
struct LaneJson {
    points: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct LanesJson {
    lanes: Vec<LaneJson>,
}

/// `{"lanes": [{"points": [[x,y,z], ...]}, ...]}`.
pub fn lanes_to_json<T: Scalar>(lanes: &[Polyline3<T>]) -> Result<String> {
    let doc = LanesJson {
        lanes: lanes
            .iter()
            .map(|l| LaneJson { points: l.points().iter().map(|p| p.cast::<f64>().to_array()).collect() })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn lanes_from_json<T: Scalar>(text: &str) -> Result<Vec<Polyline3<T>>> {
    let doc: LanesJson = serde_json::from_str(text)?;
    doc.lanes
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            Polyline3::new(l.points.into_iter().map(|p| Vec3::from_array(p).cast()).collect())
                .map_err(|e| parse_err(format!("lanes[{i}]"), e.to_string()))
        })
        .collect()
}

pub fn write_lanes<T: Scalar>(path: &Path, lanes: &[Polyline3<T>]) -> Result<()> {
    write_atomic(path, lanes_to_json(lanes)?.as_bytes())
}

pub fn read_lanes<T: Scalar>(path: &Path) -> Result<Vec<Polyline3<T>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    lanes_from_json(&text).map_err(|e| match e {
        Error::Json(j) => parse_err(path.display().to_string(), j.to_string()),
        other => other,
    })
}

/// Serializes any value as pretty JSON and writes it atomically.
pub fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<V: for<'de> Deserialize<'de>>(path: &Path) -> Result<V> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path.display().to_string(), e.to_string()))
}

/// Writes `scene` as `<dir>/<stem>.json`, with its cloud (if any) in the
/// binary file `<stem>.lgpc` next to it.
pub fn write_scene<T: Scalar + Serialize>(dir: &Path, stem: &str, scene: &Scene<T>) -> Result<std::path::PathBuf> {
    let mut stored = Scene { cloud: Vec::new(), ..scene.clone() };
    if !scene.cloud.is_empty() {
        let name = format!("{stem}.lgpc");
        save_point_cloud_binary(&dir.join(&name), &scene.cloud)?;
        stored.cloud_file = Some(name);
    }
    let path = dir.join(format!("{stem}.json"));
    write_json(&path, &stored)?;
    Ok(path)
}

/// Reads a scene written by [`write_scene`], loading its cloud file
/// (resolved relative to the scene file) when one is referenced.
pub fn read_scene<T: Scalar + for<'de> Deserialize<'de>>(path: &Path) -> Result<Scene<T>> {
    let mut scene: Scene<T> = read_json(path)?;
    if let Some(name) = &scene.cloud_file {
        let dir = path.parent().unwrap_or(Path::new("."));
        scene.cloud = load_point_cloud(&dir.join(name))?;
    }
    Ok(scene)
}
