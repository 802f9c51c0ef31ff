//! PLY ingestion and export.
//!
//! Two vertex layouts are understood:
//!
//! * native: `x y z scale_0..2 rot_0..3 opacity red green blue`, with the
//!   rotation as (w, x, y, z), linear scales and colors/opacity in [0, 1];
//! * 3DGS export: log-scales, logit opacity and SH DC color terms
//!   `f_dc_0..2`. Higher SH bands and any other property are ignored.
//!
//! Both `ascii` and `binary_little_endian` encodings are accepted. Scenes are
//! written in the native layout with `double` properties, which makes
//! save/load lossless.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::SceneError;
use crate::scene::{quat_from_wxyz, quat_to_wxyz, Gaussian, GaussianScene};

/// Zeroth-order real spherical harmonic, 1 / (2 √π).
pub const SH_C0: f64 = 0.28209479177387814;

const NATIVE_PROPS: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    "red", "green", "blue",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyEncoding {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: PlyEncoding,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_err(element: &str, message: impl Into<String>) -> SceneError {
    SceneError::Parse {
        element: element.to_string(),
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, SceneError> {
    const END: &[u8] = b"end_header";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| parse_err("header", "missing end_header"))?;
    let mut body_offset = end + END.len();
    // the header terminator line ends with \n (or \r\n)
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) == Some(&b'\n') {
        body_offset += 1;
    }
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| parse_err("header", "header is not valid UTF-8"))?;
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    if lines.next() != Some("ply") {
        return Err(parse_err("header", "missing `ply` magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => PlyEncoding::Ascii,
                    "binary_little_endian" => PlyEncoding::BinaryLittleEndian,
                    other => {
                        return Err(parse_err("format", format!("unsupported encoding `{other}`")))
                    }
                });
            }
            ["element", name, count] => {
                let count = count
                    .parse()
                    .map_err(|_| parse_err(name, format!("bad element count `{count}`")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    props: Vec::new(),
                });
            }
            ["property", "list", count, item, _name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err("property", "property before any element"))?;
                let count = Scalar::parse(count)
                    .ok_or_else(|| parse_err(&el.name, format!("bad list count type `{count}`")))?;
                let item = Scalar::parse(item)
                    .ok_or_else(|| parse_err(&el.name, format!("bad list item type `{item}`")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err("property", "property before any element"))?;
                let ty = Scalar::parse(ty)
                    .ok_or_else(|| parse_err(&el.name, format!("bad property type `{ty}`")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            _ => return Err(parse_err("header", format!("unrecognised line `{line}`"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| parse_err("format", "missing format line"))?,
        elements,
        body_offset,
    })
}

/// Raw rows of the vertex element keyed by property name.
struct VertexTable {
    names: Vec<String>,
    rows: Vec<Vec<f64>>,
    types: Vec<Scalar>,
}

impl VertexTable {
    fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

fn read_body(header: &Header, body: &[u8]) -> Result<VertexTable, SceneError> {
    let mut table = None;
    match header.encoding {
        PlyEncoding::Ascii => {
            let text = std::str::from_utf8(body)
                .map_err(|_| parse_err("body", "ascii body is not valid UTF-8"))?;
            let mut tokens = text.split_whitespace();
            for el in &header.elements {
                let is_vertex = el.name == "vertex";
                let mut rows = Vec::with_capacity(if is_vertex { el.count } else { 0 });
                for r in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.props {
                        let mut next = |what: &str| -> Result<f64, SceneError> {
                            let tok = tokens.next().ok_or_else(|| {
                                parse_err(&el.name, format!("row {r}: missing {what}"))
                            })?;
                            tok.parse::<f64>().map_err(|_| {
                                parse_err(&el.name, format!("row {r}: bad number `{tok}`"))
                            })
                        };
                        match p {
                            Property::Scalar { .. } => row.push(next("value")?),
                            Property::List { .. } => {
                                let n = next("list count")?;
                                for _ in 0..(n as usize) {
                                    next("list item")?;
                                }
                            }
                        }
                    }
                    if is_vertex {
                        rows.push(row);
                    }
                }
                if is_vertex {
                    table = Some(make_table(el, rows));
                }
            }
        }
        PlyEncoding::BinaryLittleEndian => {
            let mut at = 0usize;
            for el in &header.elements {
                let is_vertex = el.name == "vertex";
                let mut rows = Vec::with_capacity(if is_vertex { el.count } else { 0 });
                for r in 0..el.count {
                    let mut row = Vec::new();
                    for p in &el.props {
                        let mut take = |ty: Scalar| -> Result<f64, SceneError> {
                            let end = at + ty.size();
                            let b = body.get(at..end).ok_or_else(|| {
                                parse_err(&el.name, format!("row {r}: truncated binary body"))
                            })?;
                            at = end;
                            Ok(ty.read_le(b))
                        };
                        match *p {
                            Property::Scalar { ty, .. } => row.push(take(ty)?),
                            Property::List { count, item } => {
                                let n = take(count)?;
                                for _ in 0..(n as usize) {
                                    take(item)?;
                                }
                            }
                        }
                    }
                    if is_vertex {
                        rows.push(row);
                    }
                }
                if is_vertex {
                    table = Some(make_table(el, rows));
                }
            }
        }
    }
    table.ok_or_else(|| parse_err("vertex", "no vertex element"))
}

fn make_table(el: &Element, rows: Vec<Vec<f64>>) -> VertexTable {
    let (names, types) = el
        .props
        .iter()
        .filter_map(|p| match p {
            Property::Scalar { name, ty } => Some((name.clone(), *ty)),
            Property::List { .. } => None,
        })
        .unzip();
    VertexTable { names, rows, types }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parses a PLY file in either supported layout and validates the result.
pub fn load_scene(bytes: &[u8]) -> Result<GaussianScene, SceneError> {
    let header = parse_header(bytes)?;
    let table = read_body(&header, &bytes[header.body_offset..])?;
    let col = |name: &str| {
        table
            .column(name)
            .ok_or_else(|| parse_err("vertex", format!("missing property `{name}`")))
    };
    let is_3dgs = table.column("f_dc_0").is_some();
    let mut gaussians = Vec::with_capacity(table.rows.len());
    if is_3dgs {
        let c: Vec<usize> = [
            "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
            "opacity", "f_dc_0", "f_dc_1", "f_dc_2",
        ]
        .iter()
        .map(|n| col(n))
        .collect::<Result<_, _>>()?;
        for (i, row) in table.rows.iter().enumerate() {
            let v = |k: usize| row[c[k]];
            let q = Quaternion::new(v(6), v(7), v(8), v(9));
            if q.norm() == 0.0 || q.norm().is_nan() {
                return Err(SceneError::Validation {
                    index: i,
                    message: "rotation quaternion has zero or NaN norm".into(),
                });
            }
            let dc = |k: usize| (0.5 + SH_C0 * v(k)).clamp(0.0, 1.0);
            gaussians.push(Gaussian {
                mean: Vector3::new(v(0), v(1), v(2)),
                rotation: UnitQuaternion::new_normalize(q),
                scale: Vector3::new(v(3).exp(), v(4).exp(), v(5).exp()),
                color: Vector3::new(dc(11), dc(12), dc(13)),
                opacity: sigmoid(v(10)),
            });
            // NaN survives clamp(); catch it with the index here
            if v(11).is_nan() || v(12).is_nan() || v(13).is_nan() {
                return Err(SceneError::Validation {
                    index: i,
                    message: "NaN field".into(),
                });
            }
        }
    } else {
        let c: Vec<usize> = NATIVE_PROPS.iter().map(|n| col(n)).collect::<Result<_, _>>()?;
        let color_div: Vec<f64> = (11..14)
            .map(|k| match table.types[c[k]] {
                Scalar::U8 => 255.0,
                Scalar::U16 => 65535.0,
                _ => 1.0,
            })
            .collect();
        for (i, row) in table.rows.iter().enumerate() {
            let v = |k: usize| row[c[k]];
            let (w, x, y, z) = (v(6), v(7), v(8), v(9));
            let qn = (w * w + x * x + y * y + z * z).sqrt();
            if qn == 0.0 || qn.is_nan() {
                return Err(SceneError::Validation {
                    index: i,
                    message: "rotation quaternion has zero or NaN norm".into(),
                });
            }
            gaussians.push(Gaussian {
                mean: Vector3::new(v(0), v(1), v(2)),
                rotation: quat_from_wxyz(w, x, y, z),
                scale: Vector3::new(v(3), v(4), v(5)),
                color: Vector3::new(
                    v(11) / color_div[0],
                    v(12) / color_div[1],
                    v(13) / color_div[2],
                ),
                opacity: v(10),
            });
        }
    }
    let scene = GaussianScene::new(gaussians);
    scene.validate()?;
    Ok(scene)
}

pub fn save_scene(scene: &GaussianScene) -> Vec<u8> {
    save_scene_as(scene, PlyEncoding::BinaryLittleEndian)
}

/// Writes the native layout. Both encodings are lossless: ASCII uses the
/// shortest round-trip decimal form of each `f64`.
pub fn save_scene_as(scene: &GaussianScene, encoding: PlyEncoding) -> Vec<u8> {
    let mut out = Vec::with_capacity(512 + scene.len() * NATIVE_PROPS.len() * 8);
    out.extend_from_slice(b"ply\n");
    out.extend_from_slice(match encoding {
        PlyEncoding::Ascii => b"format ascii 1.0\n".as_slice(),
        PlyEncoding::BinaryLittleEndian => b"format binary_little_endian 1.0\n".as_slice(),
    });
    out.extend_from_slice(b"comment splatgym native gaussian layout\n");
    out.extend_from_slice(format!("element vertex {}\n", scene.len()).as_bytes());
    for p in NATIVE_PROPS {
        out.extend_from_slice(format!("property double {p}\n").as_bytes());
    }
    out.extend_from_slice(b"end_header\n");
    for g in &scene.gaussians {
        let [w, x, y, z] = quat_to_wxyz(&g.rotation);
        let row = [
            g.mean.x, g.mean.y, g.mean.z, g.scale.x, g.scale.y, g.scale.z, w, x, y, z, g.opacity,
            g.color.x, g.color.y, g.color.z,
        ];
        match encoding {
            PlyEncoding::BinaryLittleEndian => {
                for v in row {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            PlyEncoding::Ascii => {
                let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    out
}

/// Object-label sidecar: `{object-id: [indices]}`.
pub fn objects_to_json(scene: &GaussianScene) -> String {
    let map: BTreeMap<&String, Vec<usize>> = scene
        .objects
        .iter()
        .map(|(k, v)| (k, v.iter().copied().collect()))
        .collect();
    serde_json::to_string_pretty(&map).expect("string keys always serialise")
}

pub fn objects_from_json(json: &str) -> Result<BTreeMap<String, BTreeSet<usize>>, SceneError> {
    let map: BTreeMap<String, Vec<usize>> = serde_json::from_str(json)?;
    Ok(map
        .into_iter()
        .map(|(k, v)| (k, v.into_iter().collect()))
        .collect())
}

/// Sidecar path for a PLY file: `scene.ply` → `scene.objects.json`.
pub fn sidecar_path(ply: &Path) -> std::path::PathBuf {
    ply.with_extension("objects.json")
}

/// Reads a PLY and, if present, its object sidecar.
pub fn read_scene_file(path: &Path) -> Result<GaussianScene, SceneError> {
    let mut scene = load_scene(&std::fs::read(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        scene.objects = objects_from_json(&std::fs::read_to_string(side)?)?;
        scene.validate()?;
    }
    Ok(scene)
}

/// Writes the PLY plus its object sidecar (only when objects exist).
pub fn write_scene_file(path: &Path, scene: &GaussianScene) -> Result<(), SceneError> {
    std::fs::write(path, save_scene(scene))?;
    if !scene.objects.is_empty() {
        std::fs::write(sidecar_path(path), objects_to_json(scene))?;
    }
    Ok(())
}
