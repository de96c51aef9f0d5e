//! On-disk formats.
//!
//! - depth: 16-bit grayscale PNG in millimeters, 0 = invalid
//! - rgb: 8-bit PNG or JPEG
//! - meshes: ASCII OBJ, binary little-endian PLY
//! - point clouds: binary little-endian PLY with `x y z [nx ny nz] [red green blue]`
//! - per-frame labels, keypoint lists and prediction sidecars: JSON

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::bbox::BoundingBox2D;
use crate::camera::CameraIntrinsics;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::image::{DepthImage, Mask, Raster, RgbImage};
use crate::mesh::TriangleMesh;
use crate::pose::KeypointPrediction;
use crate::se3::PoseSE3;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn image_err(path: &Path) -> impl FnOnce(::image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

// ---------------------------------------------------------------------------
// Images

pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthImage> {
    let path = path.as_ref();
    let img = ::image::open(path).map_err(image_err(path))?;
    let ::image::DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::parse(path, "depth PNG must be 16-bit single-channel"));
    };
    let (w, h) = buf.dimensions();
    let data = buf.into_raw().into_iter().map(|mm| mm as f32 / 1000.0).collect();
    DepthImage::new(w as usize, h as usize, data)
}

/// Depth in meters rounded to whole millimeters; values beyond 65.535 m saturate.
pub fn write_depth_png(path: impl AsRef<Path>, depth: &DepthImage) -> Result<()> {
    let path = path.as_ref();
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|z| (*z as f64 * 1000.0).round().clamp(0.0, u16::MAX as f64) as u16)
        .collect();
    let buf = ::image::ImageBuffer::<::image::Luma<u16>, _>::from_raw(
        depth.width() as u32,
        depth.height() as u32,
        raw,
    )
    .ok_or_else(|| Error::ShapeError("depth buffer size".into()))?;
    ensure_parent(path)?;
    buf.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(image_err(path))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = ::image::open(path).map_err(image_err(path))?.to_rgb8();
    let (w, h) = img.dimensions();
    RgbImage::new(w as usize, h as usize, img.into_raw())
}

pub fn write_rgb_png(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    let path = path.as_ref();
    let buf = ::image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
        .ok_or_else(|| Error::ShapeError("rgb buffer size".into()))?;
    ensure_parent(path)?;
    buf.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(image_err(path))
}

/// Masks are stored as 8-bit grayscale PNG; any nonzero pixel is foreground.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let img = ::image::open(path).map_err(image_err(path))?.to_luma8();
    let (w, h) = img.dimensions();
    Mask::new(w as usize, h as usize, img.into_raw().into_iter().map(|x| x > 0).collect())
}

pub fn write_mask_png(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let raw = mask.data().iter().map(|b| if *b { 255u8 } else { 0 }).collect();
    let buf = ::image::GrayImage::from_raw(mask.width() as u32, mask.height() as u32, raw)
        .ok_or_else(|| Error::ShapeError("mask buffer size".into()))?;
    ensure_parent(path)?;
    buf.save_with_format(path, ::image::ImageFormat::Png)
        .map_err(image_err(path))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// OBJ

/// Reads `v`, `vn` and `f` records. Polygons are fan-triangulated. Vertex
/// normals are attached only when every vertex receives one through a face.
pub fn read_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_obj(BufReader::new(file), path)
}

fn parse_obj(reader: impl BufRead, path: &Path) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut vn = Vec::new();
    let mut triangles = Vec::new();
    let mut vertex_normal: Vec<Option<usize>> = Vec::new();

    let resolve = |idx: &str, len: usize, line: usize| -> Result<usize> {
        let i: i64 = idx
            .parse()
            .map_err(|_| Error::parse(path, format!("line {line}: bad index {idx:?}")))?;
        let r = if i < 0 { len as i64 + i } else { i - 1 };
        if r < 0 || r as usize >= len {
            return Err(Error::parse(path, format!("line {line}: index {i} out of range")));
        }
        Ok(r as usize)
    };

    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let lineno = n + 1;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let xyz = parse_floats::<3>(&mut tok)
                    .ok_or_else(|| Error::parse(path, format!("line {lineno}: bad vertex")))?;
                vertices.push(Point3::from(xyz));
                vertex_normal.push(None);
            }
            Some("vn") => {
                let xyz = parse_floats::<3>(&mut tok)
                    .ok_or_else(|| Error::parse(path, format!("line {lineno}: bad normal")))?;
                vn.push(Vector3::from(xyz));
            }
            Some("f") => {
                let mut corners = Vec::new();
                for t in tok {
                    let mut parts = t.split('/');
                    let vi = resolve(parts.next().unwrap_or(""), vertices.len(), lineno)?;
                    let ni = parts.nth(1).filter(|s| !s.is_empty());
                    if let Some(ni) = ni {
                        let ni = resolve(ni, vn.len(), lineno)?;
                        vertex_normal[vi].get_or_insert(ni);
                    }
                    corners.push(vi);
                }
                if corners.len() < 3 {
                    return Err(Error::parse(path, format!("line {lineno}: face with < 3 vertices")));
                }
                for k in 1..corners.len() - 1 {
                    triangles.push([corners[0], corners[k], corners[k + 1]]);
                }
            }
            _ => {}
        }
    }
    let mesh = TriangleMesh::new(vertices, triangles)?;
    if !vn.is_empty() && vertex_normal.iter().all(Option::is_some) {
        let normals = vertex_normal.iter().map(|i| vn[i.unwrap()]).collect();
        return mesh.with_vertex_normals(normals);
    }
    Ok(mesh)
}

fn parse_floats<'a, const N: usize>(tok: &mut impl Iterator<Item = &'a str>) -> Option<[f64; N]> {
    let mut out = [0.0; N];
    for x in out.iter_mut() {
        *x = tok.next()?.parse().ok()?;
    }
    Some(out)
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let mut s = String::new();
    for v in mesh.vertices() {
        s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
    }
    if let Some(ns) = mesh.vertex_normals() {
        for n in ns {
            s.push_str(&format!("vn {} {} {}\n", n.x, n.y, n.z));
        }
        for t in mesh.triangles() {
            s.push_str(&format!("f {0}//{0} {1}//{1} {2}//{2}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
    } else {
        for t in mesh.triangles() {
            s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
    }
    write_bytes(path.as_ref(), s.as_bytes())
}

// ---------------------------------------------------------------------------
// PLY

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        macro_rules! rd {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b)?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Scalar::I8 => rd!(i8),
            Scalar::U8 => rd!(u8),
            Scalar::I16 => rd!(i16),
            Scalar::U16 => rd!(u16),
            Scalar::I32 => rd!(i32),
            Scalar::U32 => rd!(u32),
            Scalar::F32 => rd!(f32),
            Scalar::F64 => rd!(f64),
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Values of one element: named scalar columns plus list properties.
#[derive(Debug, Default)]
struct ElementData {
    scalars: BTreeMap<String, Vec<f64>>,
    lists: BTreeMap<String, Vec<Vec<f64>>>,
}

fn read_ply_raw(path: &Path) -> Result<BTreeMap<String, ElementData>> {
    let bytes = read_bytes(path)?;
    let mut cursor = std::io::Cursor::new(bytes.as_slice());
    let mut elements: Vec<Element> = Vec::new();
    let mut line = String::new();
    let mut first = true;
    let mut format_ok = false;
    loop {
        line.clear();
        let n = cursor.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::parse(path, "PLY header not terminated"));
        }
        let l = line.trim();
        if first {
            if l != "ply" {
                return Err(Error::parse(path, "missing 'ply' magic"));
            }
            first = false;
            continue;
        }
        let tok: Vec<&str> = l.split_whitespace().collect();
        match tok.as_slice() {
            ["format", "binary_little_endian", _] => format_ok = true,
            ["format", other, ..] => {
                return Err(Error::parse(path, format!("unsupported PLY format {other}")));
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::parse(path, format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let (Some(ct), Some(it)) = (Scalar::parse(ct), Scalar::parse(it)) else {
                    return Err(Error::parse(path, format!("bad list property {l}")));
                };
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "property before element"))?
                    .props
                    .push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| Error::parse(path, format!("bad property type {ty}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| Error::parse(path, "property before element"))?
                    .props
                    .push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => {}
        }
    }
    if !format_ok {
        return Err(Error::parse(path, "PLY must be binary_little_endian"));
    }
    let truncated = |e: std::io::Error| Error::parse(path, format!("truncated PLY body: {e}"));
    let mut out = BTreeMap::new();
    for el in &elements {
        let mut data = ElementData::default();
        // Declared columns exist even when the element is empty.
        for p in &el.props {
            match p {
                Property::Scalar(name, _) => {
                    data.scalars.entry(name.clone()).or_default();
                }
                Property::List(name, ..) => {
                    data.lists.entry(name.clone()).or_default();
                }
            }
        }
        for _ in 0..el.count {
            for p in &el.props {
                match p {
                    Property::Scalar(name, ty) => {
                        let v = ty.read(&mut cursor).map_err(truncated)?;
                        data.scalars.entry(name.clone()).or_default().push(v);
                    }
                    Property::List(name, ct, it) => {
                        let n = ct.read(&mut cursor).map_err(truncated)? as usize;
                        let items = (0..n)
                            .map(|_| it.read(&mut cursor))
                            .collect::<std::io::Result<Vec<_>>>()
                            .map_err(truncated)?;
                        data.lists.entry(name.clone()).or_default().push(items);
                    }
                }
            }
        }
        out.insert(el.name.clone(), data);
    }
    Ok(out)
}

fn columns<const N: usize>(data: &ElementData, names: [&str; N]) -> Option<Vec<[f64; N]>> {
    let cols: Vec<&Vec<f64>> = names.iter().map(|n| data.scalars.get(*n)).collect::<Option<_>>()?;
    let len = cols[0].len();
    Some((0..len).map(|i| std::array::from_fn(|k| cols[k][i])).collect())
}

pub fn read_mesh_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let raw = read_ply_raw(path)?;
    let verts = raw
        .get("vertex")
        .ok_or_else(|| Error::parse(path, "no vertex element"))?;
    let xyz = columns(verts, ["x", "y", "z"]).ok_or_else(|| Error::parse(path, "vertex needs x, y, z"))?;
    let faces = raw
        .get("face")
        .and_then(|f| f.lists.get("vertex_indices").or_else(|| f.lists.get("vertex_index")))
        .cloned()
        .unwrap_or_default();
    let mut triangles = Vec::new();
    for f in faces {
        if f.len() < 3 {
            return Err(Error::parse(path, "face with < 3 vertices"));
        }
        for k in 1..f.len() - 1 {
            triangles.push([f[0] as usize, f[k] as usize, f[k + 1] as usize]);
        }
    }
    let mesh = TriangleMesh::new(xyz.into_iter().map(Point3::from).collect(), triangles)?;
    match columns(verts, ["nx", "ny", "nz"]) {
        Some(n) => mesh.with_vertex_normals(n.into_iter().map(Vector3::from).collect()),
        None => Ok(mesh),
    }
}

fn ply_header(vertex_count: usize, vertex_props: &[&str], face_count: Option<usize>) -> String {
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {vertex_count}\n");
    for p in vertex_props {
        h.push_str(p);
        h.push('\n');
    }
    if let Some(fc) = face_count {
        h.push_str(&format!("element face {fc}\nproperty list uchar int vertex_indices\n"));
    }
    h.push_str("end_header\n");
    h
}

pub fn write_mesh_ply(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let normals = mesh.vertex_normals();
    let mut props = vec!["property double x", "property double y", "property double z"];
    if normals.is_some() {
        props.extend(["property double nx", "property double ny", "property double nz"]);
    }
    let mut buf = ply_header(mesh.vertices().len(), &props, Some(mesh.triangles().len())).into_bytes();
    for (i, v) in mesh.vertices().iter().enumerate() {
        for c in v.coords.iter() {
            buf.extend_from_slice(&c.to_le_bytes());
        }
        if let Some(ns) = normals {
            for c in ns[i].iter() {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    for t in mesh.triangles() {
        buf.push(3);
        for i in t {
            buf.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    write_bytes(path.as_ref(), &buf)
}

/// Dispatches on the file extension (`.obj` or `.ply`).
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("obj") => read_obj(path),
        Some("ply") => read_mesh_ply(path),
        _ => Err(Error::InputError(format!(
            "{}: mesh must be .obj or .ply",
            path.display()
        ))),
    }
}

/// Colors are read as 8-bit `red green blue` and scaled to `[0, 1]`.
pub fn read_cloud_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let raw = read_ply_raw(path)?;
    let verts = raw
        .get("vertex")
        .ok_or_else(|| Error::parse(path, "no vertex element"))?;
    let xyz = columns(verts, ["x", "y", "z"]).ok_or_else(|| Error::parse(path, "vertex needs x, y, z"))?;
    let mut cloud = PointCloud::new(xyz.into_iter().map(Point3::from).collect());
    if let Some(n) = columns(verts, ["nx", "ny", "nz"]) {
        let normals = n
            .into_iter()
            .map(|n| Vector3::from(n).try_normalize(1e-12).unwrap_or_else(Vector3::z))
            .collect();
        cloud = cloud.with_normals(normals)?;
    }
    if let Some(c) = columns(verts, ["red", "green", "blue"]) {
        cloud = cloud.with_colors(c.into_iter().map(|c| Vector3::from(c) / 255.0).collect())?;
    }
    Ok(cloud)
}

/// Coordinates and normals as float32, colors as uchar.
pub fn write_cloud_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut props = vec!["property float x", "property float y", "property float z"];
    if cloud.normals().is_some() {
        props.extend(["property float nx", "property float ny", "property float nz"]);
    }
    if cloud.colors().is_some() {
        props.extend(["property uchar red", "property uchar green", "property uchar blue"]);
    }
    let mut buf = ply_header(cloud.len(), &props, None).into_bytes();
    for (i, p) in cloud.points().iter().enumerate() {
        for c in p.coords.iter() {
            buf.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(ns) = cloud.normals() {
            for c in ns[i].iter() {
                buf.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        if let Some(cs) = cloud.colors() {
            for c in cs[i].iter() {
                buf.push((c * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    write_bytes(path.as_ref(), &buf)
}

// ---------------------------------------------------------------------------
// JSON documents

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e.to_string()))
}

/// Pretty-printed, newline-terminated.
pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::InputError(e.to_string()))?;
    s.push('\n');
    write_bytes(path.as_ref(), s.as_bytes())
}

/// Per-image annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub object_id: String,
    #[serde(rename = "cam_K")]
    pub cam_k: [f64; 9],
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
    pub bbox: [f64; 4],
}

impl FrameLabel {
    pub fn new(object_id: &str, k: &CameraIntrinsics, pose: &PoseSE3, bbox: &BoundingBox2D) -> Self {
        Self {
            object_id: object_id.to_string(),
            cam_k: k.to_matrix(),
            rotation: pose.rotation_array(),
            translation: pose.translation_array(),
            bbox: bbox.to_array(),
        }
    }

    pub fn intrinsics(&self) -> Result<CameraIntrinsics> {
        CameraIntrinsics::from_matrix(&self.cam_k)
    }

    pub fn pose(&self) -> Result<PoseSE3> {
        PoseSE3::from_arrays(&self.rotation, &self.translation)
    }

    pub fn bounding_box(&self) -> Result<BoundingBox2D> {
        let [a, b, c, d] = self.bbox;
        BoundingBox2D::new(a, b, c, d)
    }
}

pub fn read_label(path: impl AsRef<Path>) -> Result<FrameLabel> {
    let path = path.as_ref();
    let label: FrameLabel = read_json(path)?;
    label.intrinsics().map_err(|e| Error::parse(path, e.to_string()))?;
    label.pose().map_err(|e| Error::parse(path, e.to_string()))?;
    label.bounding_box().map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(label)
}

/// Keypoint file: JSON array of `[x, y, z]` in the object frame.
pub fn read_keypoints(path: impl AsRef<Path>) -> Result<Vec<Point3<f64>>> {
    let pts: Vec<[f64; 3]> = read_json(path)?;
    Ok(pts.into_iter().map(Point3::from).collect())
}

pub fn write_keypoints(path: impl AsRef<Path>, points: &[Point3<f64>]) -> Result<()> {
    let arr: Vec<[f64; 3]> = points.iter().map(|p| [p.x, p.y, p.z]).collect();
    write_json(path, &arr)
}

// ---------------------------------------------------------------------------
// Prediction blobs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorField {
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    #[serde(rename = "R")]
    pub rotation: [f64; 9],
    #[serde(rename = "t")]
    pub translation: [f64; 3],
}

impl PoseRecord {
    pub fn from_pose(p: &PoseSE3) -> Self {
        Self {
            rotation: p.rotation_array(),
            translation: p.translation_array(),
        }
    }

    pub fn to_pose(&self) -> Result<PoseSE3> {
        PoseSE3::from_arrays(&self.rotation, &self.translation)
    }
}

/// JSON sidecar describing a raw little-endian f32 blob. The blob sits next to
/// the sidecar with the same stem and a `.bin` extension.
///
/// Required fields: `points` `[N, 3]`, `offsets` `[N, K, 3]`, `scores` `[N]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSidecar {
    pub shape: Vec<usize>,
    pub order: String,
    pub fields: BTreeMap<String, TensorField>,
    pub frame_id: String,
    pub object_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PoseRecord>,
}

#[derive(Debug, Clone)]
pub struct PredictionFile {
    pub sidecar: PredictionSidecar,
    pub prediction: KeypointPrediction,
}

pub fn blob_path_for(sidecar: &Path) -> PathBuf {
    sidecar.with_extension("bin")
}

fn field<'a>(
    path: &Path,
    sc: &PredictionSidecar,
    blob: &'a [f32],
    name: &str,
    expect: &[Option<usize>],
) -> Result<(&'a [f32], Vec<usize>)> {
    let f = sc
        .fields
        .get(name)
        .ok_or_else(|| Error::parse(path, format!("missing field {name:?}")))?;
    if f.shape.len() != expect.len()
        || f.shape.iter().zip(expect).any(|(s, e)| e.is_some_and(|e| e != *s))
    {
        return Err(Error::parse(path, format!("field {name:?} has shape {:?}", f.shape)));
    }
    let len: usize = f.shape.iter().product();
    let end = f
        .offset
        .checked_add(len)
        .filter(|e| *e <= blob.len())
        .ok_or_else(|| Error::parse(path, format!("field {name:?} exceeds blob")))?;
    Ok((&blob[f.offset..end], f.shape.clone()))
}

pub fn read_prediction(sidecar_path: impl AsRef<Path>) -> Result<PredictionFile> {
    let path = sidecar_path.as_ref();
    let sc: PredictionSidecar = read_json(path)?;
    if sc.order != "row-major" {
        return Err(Error::parse(path, format!("unsupported order {:?}", sc.order)));
    }
    let blob_path = blob_path_for(path);
    let bytes = read_bytes(&blob_path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::parse(&blob_path, "blob length not a multiple of 4"));
    }
    let blob: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let total: usize = sc.shape.iter().product();
    if total != blob.len() {
        return Err(Error::parse(
            &blob_path,
            format!("blob holds {} floats, sidecar shape says {total}", blob.len()),
        ));
    }
    let (pts, s) = field(path, &sc, &blob, "points", &[None, Some(3)])?;
    let n = s[0];
    let (offs, s) = field(path, &sc, &blob, "offsets", &[Some(n), None, Some(3)])?;
    let k = s[1];
    let (scores, _) = field(path, &sc, &blob, "scores", &[Some(n)])?;
    let points = pts
        .chunks_exact(3)
        .map(|c| Point3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let offsets = offs
        .chunks_exact(3)
        .map(|c| Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let scores = scores.iter().map(|s| *s as f64).collect();
    let prediction = KeypointPrediction::new(points, offsets, scores, k)
        .map_err(|e| Error::parse(path, e.to_string()))?;
    Ok(PredictionFile { sidecar: sc, prediction })
}

/// Writes `<dir>/<stem>.bin` and `<dir>/<stem>.json`; returns the sidecar path.
/// Values are narrowed to f32.
pub fn write_prediction(
    dir: impl AsRef<Path>,
    stem: &str,
    frame_id: &str,
    object_id: &str,
    prediction: &KeypointPrediction,
    gt: Option<&PoseSE3>,
) -> Result<PathBuf> {
    let n = prediction.len();
    let k = prediction.num_keypoints();
    let mut blob: Vec<f32> = Vec::with_capacity(n * (3 + 3 * k + 1));
    for p in prediction.points() {
        blob.extend(p.coords.iter().map(|c| *c as f32));
    }
    for i in 0..n {
        for j in 0..k {
            blob.extend(prediction.offset(i, j).iter().map(|c| *c as f32));
        }
    }
    blob.extend(prediction.scores().iter().map(|s| *s as f32));
    let mut fields = BTreeMap::new();
    fields.insert("points".into(), TensorField { offset: 0, shape: vec![n, 3] });
    fields.insert("offsets".into(), TensorField { offset: 3 * n, shape: vec![n, k, 3] });
    fields.insert("scores".into(), TensorField { offset: 3 * n + 3 * n * k, shape: vec![n] });
    let sc = PredictionSidecar {
        shape: vec![blob.len()],
        order: "row-major".into(),
        fields,
        frame_id: frame_id.into(),
        object_id: object_id.into(),
        gt: gt.map(PoseRecord::from_pose),
    };
    let dir = dir.as_ref();
    let sidecar = dir.join(format!("{stem}.json"));
    let bytes: Vec<u8> = blob.iter().flat_map(|f| f.to_le_bytes()).collect();
    write_bytes(&blob_path_for(&sidecar), &bytes)?;
    write_json(&sidecar, &sc)?;
    Ok(sidecar)
}

/// Writes a byte buffer, creating parent directories.
pub fn write_file(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    write_bytes(path.as_ref(), bytes)
}

/// Appends newline-terminated JSON records.
pub fn to_json_lines<T: Serialize>(records: &[T]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::InputError(e.to_string()))?;
        out.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    Ok(out)
}

pub fn read_json_lines<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn depth_png_roundtrip_in_mm() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.png");
        let d = DepthImage::from_fn_sanitized(7, 5, |u, v| if u == v { 0.0 } else { 0.5 + 0.001 * (u * 5 + v) as f32 });
        write_depth_png(&p, &d).unwrap();
        let back = read_depth_png(&p).unwrap();
        assert_eq!(back.dims(), (7, 5));
        for (a, b) in d.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-6);
            assert_eq!(*a == 0.0, *b == 0.0);
        }
    }

    #[test]
    fn eight_bit_depth_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        write_rgb_png(&p, &RgbImage::filled(3, 3, [1, 2, 3])).unwrap();
        assert!(matches!(read_depth_png(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn rgb_and_mask_roundtrip() {
        let dir = tempdir().unwrap();
        let img = RgbImage::from_fn(9, 4, |u, v| [u as u8, v as u8, (u * v) as u8]);
        write_rgb_png(dir.path().join("a.png"), &img).unwrap();
        assert_eq!(read_rgb(dir.path().join("a.png")).unwrap(), img);
        let m = Mask::from_fn(9, 4, |u, v| (u + v) % 3 == 0);
        write_mask_png(dir.path().join("m.png"), &m).unwrap();
        assert_eq!(read_mask_png(dir.path().join("m.png")).unwrap(), m);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_json::<FrameLabel>("/nonexistent/x.json"), Err(Error::Io { .. })));
    }

    #[test]
    fn obj_parses_quads_and_normals() {
        let src = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvn 0 0 2\nf 1//1 2//1 3//1 4//1\n";
        let m = parse_obj(src.as_bytes(), Path::new("q.obj")).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2], [0, 2, 3]]);
        assert_eq!(m.vertex_normals().unwrap()[2], Vector3::z());
        let neg = parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n".as_bytes(), Path::new("n.obj")).unwrap();
        assert_eq!(neg.triangles(), &[[0, 1, 2]]);
        assert!(neg.vertex_normals().is_none());
        assert!(parse_obj("v 0 0 0\nf 1 2 3\n".as_bytes(), Path::new("b.obj")).is_err());
    }

    #[test]
    fn mesh_roundtrips_through_obj_and_ply() {
        let dir = tempdir().unwrap();
        let m = TriangleMesh::sphere(0.05, 1);
        for name in ["s.obj", "s.ply"] {
            let p = dir.path().join(name);
            match name {
                "s.obj" => write_obj(&p, &m).unwrap(),
                _ => write_mesh_ply(&p, &m).unwrap(),
            }
            let back = read_mesh(&p).unwrap();
            assert_eq!(back.triangles(), m.triangles());
            for (a, b) in back.vertices().iter().zip(m.vertices()) {
                assert!((a - b).norm() < 1e-12);
            }
            assert!(back.vertex_normals().is_some());
        }
        assert!(read_mesh(dir.path().join("x.stl")).is_err());
    }

    #[test]
    fn ascii_ply_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.ply");
        fs::write(&p, "ply\nformat ascii 1.0\nelement vertex 0\nend_header\n").unwrap();
        assert!(matches!(read_mesh_ply(&p), Err(Error::Parse { .. })));
    }

    #[test]
    fn truncated_ply_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("t.ply");
        let mut bytes = ply_header(2, &["property float x", "property float y", "property float z"], None).into_bytes();
        bytes.extend_from_slice(&[0u8; 12]);
        fs::write(&p, bytes).unwrap();
        assert!(read_cloud_ply(&p).is_err());
    }

    #[test]
    fn cloud_ply_roundtrip_with_attributes() {
        let dir = tempdir().unwrap();
        let pts = vec![Point3::new(0.5, -0.25, 1.0), Point3::new(0.125, 2.0, 3.5)];
        let cloud = PointCloud::new(pts.clone())
            .with_normals(vec![Vector3::x(), Vector3::new(0.0, 0.6, 0.8)])
            .unwrap()
            .with_colors(vec![Vector3::new(1.0, 0.0, 0.2), Vector3::new(0.0, 1.0, 1.0)])
            .unwrap();
        let p = dir.path().join("c.ply");
        write_cloud_ply(&p, &cloud).unwrap();
        let back = read_cloud_ply(&p).unwrap();
        assert_eq!(back.points(), pts.as_slice());
        assert!((back.normals().unwrap()[1] - Vector3::new(0.0, 0.6, 0.8)).norm() < 1e-6);
        assert!((back.colors().unwrap()[0] - Vector3::new(1.0, 0.0, 0.2)).norm() < 1.0 / 255.0);
        let bare = PointCloud::new(pts.clone());
        write_cloud_ply(&p, &bare).unwrap();
        let back = read_cloud_ply(&p).unwrap();
        assert!(back.normals().is_none() && back.colors().is_none());
        write_cloud_ply(&p, &PointCloud::new(vec![])).unwrap();
        assert!(read_cloud_ply(&p).unwrap().is_empty());
    }

    #[test]
    fn label_json_layout() {
        let k = CameraIntrinsics::new(572.4, 573.5, 325.3, 242.0).unwrap();
        let pose = PoseSE3::rot_z(0.3).compose(&PoseSE3::from_translation(Vector3::new(0.1, 0.0, 0.8)));
        let b = BoundingBox2D::new(10.0, 20.0, 50.0, 70.0).unwrap();
        let label = FrameLabel::new("duck", &k, &pose, &b);
        let v: serde_json::Value = serde_json::to_value(&label).unwrap();
        assert_eq!(v["object_id"], "duck");
        assert_eq!(v["cam_K"].as_array().unwrap().len(), 9);
        assert_eq!(v["R"].as_array().unwrap().len(), 9);
        assert_eq!(v["t"].as_array().unwrap().len(), 3);
        let dir = tempdir().unwrap();
        write_json(dir.path().join("l.json"), &label).unwrap();
        let back = read_label(dir.path().join("l.json")).unwrap();
        assert_eq!(back, label);
        assert!(back.pose().unwrap().rotation_distance(&pose) < 1e-12);
    }

    #[test]
    fn label_with_bad_rotation_rejected() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("l.json");
        fs::write(
            &p,
            r#"{"object_id":"a","cam_K":[1,0,0,0,1,0,0,0,1],"R":[2,0,0,0,1,0,0,0,1],"t":[0,0,1],"bbox":[0,0,1,1]}"#,
        )
        .unwrap();
        assert!(matches!(read_label(&p), Err(Error::Parse { .. })));
    }

    fn small_prediction() -> KeypointPrediction {
        let points = vec![Point3::new(0.0, 0.0, 1.0), Point3::new(0.5, 0.25, 1.0)];
        let offsets = (0..6).map(|i| Vector3::new(i as f64 * 0.5, 0.0, -0.25)).collect();
        KeypointPrediction::new(points, offsets, vec![0.75, 1.0], 3).unwrap()
    }

    #[test]
    fn prediction_blob_roundtrip() {
        let dir = tempdir().unwrap();
        let pred = small_prediction();
        let gt = PoseSE3::from_translation(Vector3::new(0.0, 0.0, 0.5));
        let sc = write_prediction(dir.path(), "f0", "frame-0", "obj", &pred, Some(&gt)).unwrap();
        let back = read_prediction(&sc).unwrap();
        assert_eq!(back.sidecar.frame_id, "frame-0");
        assert_eq!(back.sidecar.gt.as_ref().unwrap().to_pose().unwrap(), gt);
        assert_eq!(back.prediction.points(), pred.points());
        assert_eq!(back.prediction.offset(1, 2), pred.offset(1, 2));
        assert_eq!(back.prediction.scores(), pred.scores());
        assert_eq!(fs::metadata(blob_path_for(&sc)).unwrap().len(), 4 * (6 + 18 + 2));
    }

    #[test]
    fn malformed_blob_rejected() {
        let dir = tempdir().unwrap();
        let sc = write_prediction(dir.path(), "f0", "a", "obj", &small_prediction(), None).unwrap();
        let blob = blob_path_for(&sc);
        let mut bytes = fs::read(&blob).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&blob, &bytes).unwrap();
        assert!(matches!(read_prediction(&sc), Err(Error::Parse { .. })));
        bytes.truncate(bytes.len() - 1);
        fs::write(&blob, &bytes).unwrap();
        assert!(read_prediction(&sc).is_err());
    }

    #[test]
    fn json_lines_roundtrip() {
        let dir = tempdir().unwrap();
        let recs = vec![PoseRecord::from_pose(&PoseSE3::identity()), PoseRecord::from_pose(&PoseSE3::rot_z(1.0))];
        let p = dir.path().join("r.jsonl");
        write_file(&p, &to_json_lines(&recs).unwrap()).unwrap();
        let back: Vec<PoseRecord> = read_json_lines(&p).unwrap();
        assert_eq!(back, recs);
    }
}
