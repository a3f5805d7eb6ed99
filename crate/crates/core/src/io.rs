//! Point-cloud and gripper file formats.
//!
//! Object clouds are read from PLY (ASCII or binary little-endian, vertex
//! properties `x y z nx ny nz`) or OBJ (`v` and `vn` records, paired by index
//! or through `f v//vn` references). Faces are otherwise ignored: the object is
//! treated as a point cloud with normals.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::kinematics::{KinematicModel, Pose};
use crate::{Error, Result, Vec3};

/// Raw oriented point cloud.
#[derive(Clone, Debug, Default)]
pub struct OrientedCloud {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

/// Whether normals stored in a file point out of or into the object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormalConvention {
    #[default]
    Outward,
    Inward,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn load_gripper(path: &Path) -> Result<KinematicModel> {
    KinematicModel::from_json_str(&read_text(path)?, path)
}

/// Loads an object cloud and flips its normals so they point into the object.
pub fn load_object(path: &Path, convention: NormalConvention) -> Result<OrientedCloud> {
    let ext = path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase());
    let mut cloud = match ext.as_deref() {
        Some("ply") => parse_ply(&read_bytes(path)?, path)?,
        Some("obj") => parse_obj(&read_text(path)?, path)?,
        _ => {
            return Err(Error::parse(path, "file name", "unsupported extension (expected .ply or .obj)"));
        }
    };
    if cloud.points.is_empty() {
        return Err(Error::parse(path, "vertices", "file contains no points"));
    }
    for (i, n) in cloud.normals.iter_mut().enumerate() {
        let len = n.norm();
        if !(len > 1e-12) || !len.is_finite() {
            return Err(Error::parse(path, format!("vertex {i}"), "zero or non-finite normal"));
        }
        *n /= len;
        if convention == NormalConvention::Outward {
            *n = -*n;
        }
    }
    if cloud.points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::parse(path, "vertices", "non-finite coordinate"));
    }
    Ok(cloud)
}

/// Centroid at the origin, bounding-box diagonal 1. Returns the applied
/// `(centroid, scale)` so that `normalized = (p - centroid) * scale`.
pub fn normalize(cloud: &mut OrientedCloud) -> (Vec3, f64) {
    let n = cloud.points.len() as f64;
    let centroid = cloud.points.iter().sum::<Vec3>() / n;
    let (lo, hi) = cloud
        .points
        .iter()
        .fold((cloud.points[0], cloud.points[0]), |(lo, hi), p| (lo.inf(p), hi.sup(p)));
    let diag = (hi - lo).norm();
    let scale = if diag > 0.0 { 1.0 / diag } else { 1.0 };
    for p in &mut cloud.points {
        *p = (*p - centroid) * scale;
    }
    (centroid, scale)
}

#[derive(Clone, Copy, PartialEq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
}

#[derive(Clone, Copy)]
enum PlyType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl PlyType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => PlyType::I8,
            "uchar" | "uint8" => PlyType::U8,
            "short" | "int16" => PlyType::I16,
            "ushort" | "uint16" => PlyType::U16,
            "int" | "int32" => PlyType::I32,
            "uint" | "uint32" => PlyType::U32,
            "float" | "float32" => PlyType::F32,
            "double" | "float64" => PlyType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            PlyType::I8 | PlyType::U8 => 1,
            PlyType::I16 | PlyType::U16 => 2,
            PlyType::I32 | PlyType::U32 | PlyType::F32 => 4,
            PlyType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            PlyType::I8 => b[0] as i8 as f64,
            PlyType::U8 => b[0] as f64,
            PlyType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            PlyType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            PlyType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

enum PlyProperty {
    Scalar(String, PlyType),
    List(PlyType, PlyType),
}

struct PlyElement {
    name: String,
    count: usize,
    props: Vec<PlyProperty>,
}

fn parse_ply(bytes: &[u8], path: &Path) -> Result<OrientedCloud> {
    // header is ASCII up to and including "end_header\n"
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| Error::parse(path, "header", "missing end_header"))?;
    let mut body_start = end + marker.len();
    while body_start < bytes.len() && bytes[body_start] != b'\n' {
        body_start += 1;
    }
    body_start += 1;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::parse(path, "header", "not UTF-8"))?;

    let mut format = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    for (ln, line) in header.lines().enumerate() {
        let loc = || format!("line {}", ln + 1);
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.first().copied() {
            Some("ply") if ln == 0 => {}
            _ if ln == 0 => return Err(Error::parse(path, loc(), "missing 'ply' magic")),
            Some("format") => {
                format = Some(match tok.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLe,
                    other => {
                        return Err(Error::parse(path, loc(), format!("unsupported format {other:?}")));
                    }
                })
            }
            Some("element") => {
                let (Some(name), Some(count)) = (tok.get(1), tok.get(2).and_then(|c| c.parse().ok())) else {
                    return Err(Error::parse(path, loc(), "malformed element line"));
                };
                elements.push(PlyElement { name: name.to_string(), count, props: Vec::new() });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, loc(), "property before any element"))?;
                let prop = if tok.get(1) == Some(&"list") {
                    match (tok.get(2).and_then(|t| PlyType::parse(t)), tok.get(3).and_then(|t| PlyType::parse(t))) {
                        (Some(a), Some(b)) => PlyProperty::List(a, b),
                        _ => return Err(Error::parse(path, loc(), "bad list property types")),
                    }
                } else {
                    match (tok.get(1).and_then(|t| PlyType::parse(t)), tok.get(2)) {
                        (Some(t), Some(name)) => PlyProperty::Scalar(name.to_string(), t),
                        _ => return Err(Error::parse(path, loc(), "bad property line")),
                    }
                };
                el.props.push(prop);
            }
            Some("comment") | Some("obj_info") | None => {}
            Some(other) => return Err(Error::parse(path, loc(), format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| Error::parse(path, "header", "missing format line"))?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::parse(path, "header", "no vertex element"))?;
    let names = ["x", "y", "z", "nx", "ny", "nz"];
    let mut slots = [usize::MAX; 6];
    for (pi, p) in elements[vi].props.iter().enumerate() {
        if let PlyProperty::Scalar(name, _) = p {
            if let Some(k) = names.iter().position(|n| n == name) {
                slots[k] = pi;
            }
        }
    }
    if let Some(k) = slots.iter().position(|&s| s == usize::MAX) {
        return Err(Error::parse(path, "header", format!("vertex element lacks property '{}'", names[k])));
    }

    let mut cloud = OrientedCloud::default();
    match format {
        PlyFormat::Ascii => {
            let body = std::str::from_utf8(&bytes[body_start.min(bytes.len())..])
                .map_err(|_| Error::parse(path, "body", "not UTF-8"))?;
            let header_lines = header.lines().count() + 1;
            let mut lines = body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
            for (ei, el) in elements.iter().enumerate() {
                for _ in 0..el.count {
                    let (ln, line) = lines
                        .next()
                        .ok_or_else(|| Error::parse(path, format!("element {}", el.name), "unexpected end of file"))?;
                    if ei != vi {
                        continue;
                    }
                    let vals: Vec<f64> = line
                        .split_whitespace()
                        .map(|t| t.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::parse(path, format!("line {}", header_lines + ln + 1), e.to_string()))?;
                    if vals.len() < el.props.len() {
                        return Err(Error::parse(
                            path,
                            format!("line {}", header_lines + ln + 1),
                            format!("expected {} values, found {}", el.props.len(), vals.len()),
                        ));
                    }
                    let g = |k: usize| vals[slots[k]];
                    cloud.points.push(Vec3::new(g(0), g(1), g(2)));
                    cloud.normals.push(Vec3::new(g(3), g(4), g(5)));
                }
            }
        }
        PlyFormat::BinaryLe => {
            let mut pos = body_start;
            for (ei, el) in elements.iter().enumerate() {
                for row in 0..el.count {
                    let mut vals = [0.0; 6];
                    for (pi, p) in el.props.iter().enumerate() {
                        match p {
                            PlyProperty::Scalar(_, t) => {
                                let sz = t.size();
                                let b = bytes.get(pos..pos + sz).ok_or_else(|| {
                                    Error::parse(path, format!("{} {row}", el.name), "unexpected end of file")
                                })?;
                                if ei == vi {
                                    if let Some(k) = slots.iter().position(|&s| s == pi) {
                                        vals[k] = t.read_le(b);
                                    }
                                }
                                pos += sz;
                            }
                            PlyProperty::List(ct, it) => {
                                let b = bytes.get(pos..pos + ct.size()).ok_or_else(|| {
                                    Error::parse(path, format!("{} {row}", el.name), "unexpected end of file")
                                })?;
                                let n = ct.read_le(b) as usize;
                                pos += ct.size() + n * it.size();
                            }
                        }
                    }
                    if ei == vi {
                        cloud.points.push(Vec3::new(vals[0], vals[1], vals[2]));
                        cloud.normals.push(Vec3::new(vals[3], vals[4], vals[5]));
                    }
                }
                if ei == vi {
                    // remaining elements are not needed
                    break;
                }
            }
        }
    }
    Ok(cloud)
}

fn parse_obj(text: &str, path: &Path) -> Result<OrientedCloud> {
    let mut v = Vec::new();
    let mut vn = Vec::new();
    let mut assigned: Vec<Option<usize>> = Vec::new();
    let mut saw_face_normals = false;
    for (ln, line) in text.lines().enumerate() {
        let loc = || format!("line {}", ln + 1);
        let mut tok = line.split_whitespace();
        let parse3 = |tok: &mut std::str::SplitWhitespace| -> Result<Vec3> {
            let mut c = [0.0; 3];
            for x in &mut c {
                *x = tok
                    .next()
                    .ok_or_else(|| Error::parse(path, loc(), "expected 3 coordinates"))?
                    .parse()
                    .map_err(|e: std::num::ParseFloatError| Error::parse(path, loc(), e.to_string()))?;
            }
            Ok(Vec3::from(c))
        };
        match tok.next() {
            Some("v") => {
                v.push(parse3(&mut tok)?);
                assigned.push(None);
            }
            Some("vn") => vn.push(parse3(&mut tok)?),
            Some("f") => {
                for corner in tok {
                    let parts: Vec<&str> = corner.split('/').collect();
                    if parts.len() == 3 && !parts[2].is_empty() {
                        let resolve = |s: &str, n: usize| -> Result<usize> {
                            let i: i64 = s.parse().map_err(|_| Error::parse(path, loc(), "bad face index"))?;
                            let idx = if i < 0 { n as i64 + i } else { i - 1 };
                            if idx < 0 || idx as usize >= n {
                                return Err(Error::parse(path, loc(), "face index out of range"));
                            }
                            Ok(idx as usize)
                        };
                        let vi = resolve(parts[0], v.len())?;
                        let ni = resolve(parts[2], vn.len())?;
                        assigned[vi] = Some(ni);
                        saw_face_normals = true;
                    }
                }
            }
            _ => {}
        }
    }
    let normals = if saw_face_normals {
        assigned
            .iter()
            .enumerate()
            .map(|(i, a)| {
                a.map(|k| vn[k])
                    .ok_or_else(|| Error::parse(path, format!("vertex {}", i + 1), "vertex has no normal"))
            })
            .collect::<Result<Vec<_>>>()?
    } else if vn.len() == v.len() {
        vn
    } else {
        return Err(Error::parse(
            path,
            "normals",
            format!("{} vertices but {} normals and no face references", v.len(), vn.len()),
        ));
    };
    Ok(OrientedCloud { points: v, normals })
}

/// ASCII PLY with positions and normals.
pub fn ply_string(points: &[Vec3], normals: &[Vec3]) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n\
         property double nx\nproperty double ny\nproperty double nz\nend_header\n",
        points.len()
    );
    for (p, n) in points.iter().zip(normals) {
        let _ = writeln!(s, "{} {} {} {} {} {}", p.x, p.y, p.z, n.x, n.y, n.z);
    }
    s
}

/// Gripper hulls at the given link poses as one OBJ with a group per link.
pub fn pose_obj(model: &KinematicModel, poses: &[Pose]) -> String {
    let mut s = String::from("# gripper pose\n");
    let mut base = 1;
    for (link, pose) in model.links().iter().zip(poses) {
        let _ = writeln!(s, "g {}", link.name);
        for v in link.vertices() {
            let w = pose.apply(v);
            let _ = writeln!(s, "v {} {} {}", w.x, w.y, w.z);
        }
        for t in link.hull.triangles() {
            let _ = writeln!(s, "f {} {} {}", t[0] + base, t[1] + base, t[2] + base);
        }
        base += link.vertices().len();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_ply_round_trip_flips_normals() {
        let dir = std::env::temp_dir().join(format!("kigrasp-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let p = dir.join("a.ply");
        let pts = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 0.0)];
        let nrm = vec![Vec3::x(), Vec3::new(0.0, 2.0, 0.0)];
        fs::write(&p, ply_string(&pts, &nrm)).unwrap();
        let c = load_object(&p, NormalConvention::Outward).unwrap();
        assert_eq!(c.points, pts);
        assert_eq!(c.normals, vec![-Vec3::x(), -Vec3::y()]);
        let c = load_object(&p, NormalConvention::Inward).unwrap();
        assert_eq!(c.normals[1], Vec3::y());
    }

    #[test]
    fn binary_ply() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\n\
property float z\nproperty float nx\nproperty float ny\nproperty float nz\nproperty uchar red\nend_header\n"
            .to_vec();
        for v in [1.0f32, 2.0, 3.0, 0.0, 0.0, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.push(255);
        let c = parse_ply(&bytes, Path::new("b.ply")).unwrap();
        assert_eq!(c.points[0], Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(c.normals[0], Vec3::z());
    }

    #[test]
    fn ply_errors_carry_line_numbers() {
        let text = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n\
property float nx\nproperty float ny\nproperty float nz\nend_header\n1 2 oops 0 0 1\n";
        let err = parse_ply(text.as_bytes(), Path::new("c.ply")).unwrap_err();
        assert!(err.to_string().contains("line 11"), "{err}");
    }

    #[test]
    fn obj_with_face_normals() {
        let text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1//1 2//1 3//1\n";
        let c = parse_obj(text, Path::new("d.obj")).unwrap();
        assert_eq!(c.normals.len(), 3);
        assert!(parse_obj("v 0 0 0\n", Path::new("e.obj")).is_err());
    }

    #[test]
    fn normalization_centres_and_scales() {
        let mut c = OrientedCloud {
            points: vec![Vec3::new(2.0, 2.0, 2.0), Vec3::new(4.0, 6.0, 6.0)],
            normals: vec![Vec3::x(); 2],
        };
        normalize(&mut c);
        assert!((c.points[0] + c.points[1]).norm() < 1e-15);
        assert!(((c.points[1] - c.points[0]).norm() - 1.0).abs() < 1e-15);
    }
}
