//! Minimal polygon-file (PLY) support: ASCII and binary headers, scalar and
//! list properties, plus typed helpers for point clouds, meshes and splat
//! files.

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::{ColoredPoint, Mesh};
use crate::model::sh::SH_BASIS_LEN;
use crate::model::{GaussianSplat, PARAMS_PER_SPLAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Encoding {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scalar {
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
    fn parse(name: &str) -> Option<Scalar> {
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

    fn decode(self, b: &[u8], little: bool) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if little { <$t>::from_le_bytes(arr) } else { <$t>::from_be_bytes(arr) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    Scalar(Scalar),
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ElementDecl {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Header {
    pub encoding: Encoding,
    pub elements: Vec<ElementDecl>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Scalar(Vec<f64>),
    List(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub decl: ElementDecl,
    pub columns: Vec<Column>,
}

impl Element {
    pub fn scalar(&self, name: &str) -> Option<&[f64]> {
        let i = self.decl.properties.iter().position(|p| p.name == name)?;
        match &self.columns[i] {
            Column::Scalar(v) => Some(v),
            Column::List(_) => None,
        }
    }

    pub fn list(&self, name: &str) -> Option<&[Vec<f64>]> {
        let i = self.decl.properties.iter().position(|p| p.name == name)?;
        match &self.columns[i] {
            Column::List(v) => Some(v),
            Column::Scalar(_) => None,
        }
    }

    fn require(&self, name: &str) -> Result<&[f64]> {
        self.scalar(name)
            .ok_or_else(|| Error::format(0, format!("element '{}' lacks scalar property '{name}'", self.decl.name)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlyFile {
    pub header: Header,
    pub elements: Vec<Element>,
}

impl PlyFile {
    pub fn element(&self, name: &str) -> Option<&Element> {
        self.elements.iter().find(|e| e.decl.name == name)
    }
}

fn parse_header(bytes: &[u8]) -> Result<(Header, usize)> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::format(start as u64, "unterminated PLY header"))?;
        *pos = start + end + 1;
        let line = std::str::from_utf8(&bytes[start..start + end])
            .map_err(|_| Error::format(start as u64, "non-UTF-8 PLY header"))?
            .trim_end_matches('\r')
            .to_string();
        Ok((start, line))
    };
    let (_, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return Err(Error::format(0, "missing 'ply' magic"));
    }
    let mut encoding = None;
    let mut elements: Vec<ElementDecl> = Vec::new();
    loop {
        let (at, line) = next_line(&mut pos)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let bad = |msg: &str| Error::format(at as u64, format!("{msg}: '{line}'"));
        match toks.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                encoding = Some(match toks.get(1).copied() {
                    Some("ascii") => Encoding::Ascii,
                    Some("binary_little_endian") => Encoding::BinaryLittleEndian,
                    Some("binary_big_endian") => Encoding::BinaryBigEndian,
                    _ => return Err(bad("unknown format")),
                });
            }
            Some("element") => {
                if toks.len() != 3 {
                    return Err(bad("malformed element"));
                }
                let count = toks[2].parse().map_err(|_| bad("bad element count"))?;
                elements.push(ElementDecl {
                    name: toks[1].to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                let prop = if toks.get(1) == Some(&"list") {
                    if toks.len() != 5 {
                        return Err(bad("malformed list property"));
                    }
                    Property {
                        name: toks[4].to_string(),
                        kind: PropertyKind::List {
                            count: Scalar::parse(toks[2]).ok_or_else(|| bad("bad list count type"))?,
                            item: Scalar::parse(toks[3]).ok_or_else(|| bad("bad list item type"))?,
                        },
                    }
                } else {
                    if toks.len() != 3 {
                        return Err(bad("malformed property"));
                    }
                    Property {
                        name: toks[2].to_string(),
                        kind: PropertyKind::Scalar(Scalar::parse(toks[1]).ok_or_else(|| bad("bad property type"))?),
                    }
                };
                el.properties.push(prop);
            }
            Some("end_header") => break,
            Some(_) => return Err(bad("unknown header keyword")),
        }
    }
    let encoding = encoding.ok_or_else(|| Error::format(pos as u64, "PLY header lacks a format line"))?;
    Ok((Header { encoding, elements }, pos))
}

fn empty_columns(decl: &ElementDecl) -> Vec<Column> {
    decl.properties
        .iter()
        .map(|p| match p.kind {
            PropertyKind::Scalar(_) => Column::Scalar(Vec::with_capacity(decl.count)),
            PropertyKind::List { .. } => Column::List(Vec::with_capacity(decl.count)),
        })
        .collect()
}

fn push(col: &mut Column, v: f64) {
    if let Column::Scalar(c) = col {
        c.push(v)
    }
}

fn push_list(col: &mut Column, v: Vec<f64>) {
    if let Column::List(c) = col {
        c.push(v)
    }
}

pub fn parse(bytes: &[u8]) -> Result<PlyFile> {
    let (header, mut pos) = parse_header(bytes)?;
    let mut elements = Vec::new();
    match header.encoding {
        Encoding::Ascii => {
            let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| Error::format(pos as u64, "non-UTF-8 ASCII body"))?;
            let mut tokens = text.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                let t = tokens.next().ok_or_else(|| Error::format(bytes.len() as u64, format!("ASCII body ended while reading {what}")))?;
                t.parse::<f64>().map_err(|_| Error::format(pos as u64, format!("bad number '{t}' in {what}")))
            };
            for decl in &header.elements {
                let mut columns = empty_columns(decl);
                for _ in 0..decl.count {
                    for (p, col) in decl.properties.iter().zip(columns.iter_mut()) {
                        match p.kind {
                            PropertyKind::Scalar(_) => push(col, next(&p.name)?),
                            PropertyKind::List { .. } => {
                                let n = next(&p.name)?;
                                if !(n >= 0.0) || n.fract() != 0.0 {
                                    return Err(Error::format(pos as u64, format!("bad list length {n}")));
                                }
                                let items = (0..n as usize).map(|_| next(&p.name)).collect::<Result<Vec<_>>>()?;
                                push_list(col, items);
                            }
                        }
                    }
                }
                elements.push(Element {
                    decl: decl.clone(),
                    columns,
                });
            }
        }
        Encoding::BinaryLittleEndian | Encoding::BinaryBigEndian => {
            let little = header.encoding == Encoding::BinaryLittleEndian;
            let read = |s: Scalar, pos: &mut usize| -> Result<f64> {
                let end = *pos + s.size();
                if end > bytes.len() {
                    return Err(Error::format(*pos as u64, "binary body truncated"));
                }
                let v = s.decode(&bytes[*pos..end], little);
                *pos = end;
                Ok(v)
            };
            for decl in &header.elements {
                let mut columns = empty_columns(decl);
                for _ in 0..decl.count {
                    for (p, col) in decl.properties.iter().zip(columns.iter_mut()) {
                        match p.kind {
                            PropertyKind::Scalar(s) => push(col, read(s, &mut pos)?),
                            PropertyKind::List { count, item } => {
                                let n = read(count, &mut pos)?;
                                if n < 0.0 {
                                    return Err(Error::format(pos as u64, "negative list length"));
                                }
                                let items = (0..n as usize).map(|_| read(item, &mut pos)).collect::<Result<Vec<_>>>()?;
                                push_list(col, items);
                            }
                        }
                    }
                }
                elements.push(Element {
                    decl: decl.clone(),
                    columns,
                });
            }
        }
    }
    Ok(PlyFile { header, elements })
}

pub fn read(path: &Path) -> Result<PlyFile> {
    parse(&std::fs::read(path)?)
}

fn header_text(elements: &[(&str, usize, &[(&str, &str)])]) -> String {
    let mut h = String::from("ply\nformat binary_little_endian 1.0\n");
    for (name, count, props) in elements {
        h.push_str(&format!("element {name} {count}\n"));
        for (ty, pname) in props.iter() {
            h.push_str(&format!("property {ty} {pname}\n"));
        }
    }
    h.push_str("end_header\n");
    h
}

fn color_u8(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

const POINT_PROPS: [(&str, &str); 6] = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
];

/// Binary point cloud: float32 position and uint8 color.
pub fn encode_points(points: &[ColoredPoint]) -> Vec<u8> {
    let mut out = header_text(&[("vertex", points.len(), &POINT_PROPS)]).into_bytes();
    for p in points {
        for k in 0..3 {
            out.extend_from_slice(&(p.position[k] as f32).to_le_bytes());
        }
        out.extend(p.color.iter().map(|&c| color_u8(c)));
    }
    out
}

fn vertex_colors(v: &Element) -> Vec<[f64; 3]> {
    let n = v.decl.count;
    let pick = |names: [&str; 3]| -> Option<[&[f64]; 3]> { Some([v.scalar(names[0])?, v.scalar(names[1])?, v.scalar(names[2])?]) };
    let cols = pick(["red", "green", "blue"]).or_else(|| pick(["r", "g", "b"]));
    let integer = v.decl.properties.iter().any(|p| {
        matches!(p.name.as_str(), "red" | "r") && matches!(p.kind, PropertyKind::Scalar(s) if !matches!(s, Scalar::F32 | Scalar::F64))
    });
    (0..n)
        .map(|i| match cols {
            Some(c) => {
                let f = |x: f64| if integer { x / 255.0 } else { x };
                [f(c[0][i]), f(c[1][i]), f(c[2][i])]
            }
            None => [0.5; 3],
        })
        .collect()
}

fn vertex_positions(v: &Element) -> Result<Vec<Vector3<f64>>> {
    let (x, y, z) = (v.require("x")?, v.require("y")?, v.require("z")?);
    Ok((0..v.decl.count).map(|i| Vector3::new(x[i], y[i], z[i])).collect())
}

pub fn decode_points(bytes: &[u8]) -> Result<Vec<ColoredPoint>> {
    let ply = parse(bytes)?;
    let v = ply.element("vertex").ok_or_else(|| Error::format(0, "point file has no vertex element"))?;
    let pos = vertex_positions(v)?;
    let col = vertex_colors(v);
    Ok(pos.into_iter().zip(col).map(|(p, c)| ColoredPoint::new(p, c)).collect())
}

pub fn read_points(path: &Path) -> Result<Vec<ColoredPoint>> {
    decode_points(&std::fs::read(path)?)
}

pub fn write_points(path: &Path, points: &[ColoredPoint]) -> Result<()> {
    std::fs::write(path, encode_points(points))?;
    Ok(())
}

/// Binary mesh with per-vertex color and triangular faces.
pub fn encode_mesh(mesh: &Mesh) -> Vec<u8> {
    let mut h = header_text(&[("vertex", mesh.vertices.len(), &POINT_PROPS)]);
    h = h.replace("end_header\n", &format!("element face {}\nproperty list uchar int vertex_indices\nend_header\n", mesh.faces.len()));
    let mut out = h.into_bytes();
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        for k in 0..3 {
            out.extend_from_slice(&(v[k] as f32).to_le_bytes());
        }
        out.extend(c.iter().map(|&x| color_u8(x)));
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

/// Reads vertices, optional colors and faces; polygons are fan-triangulated.
pub fn decode_mesh(bytes: &[u8]) -> Result<Mesh> {
    let ply = parse(bytes)?;
    let v = ply.element("vertex").ok_or_else(|| Error::format(0, "mesh file has no vertex element"))?;
    let vertices = vertex_positions(v)?;
    let colors = vertex_colors(v);
    let f = ply.element("face").ok_or_else(|| Error::format(0, "mesh file has no face element"))?;
    let lists = f
        .list("vertex_indices")
        .or_else(|| f.list("vertex_index"))
        .ok_or_else(|| Error::format(0, "face element lacks vertex_indices"))?;
    let mut faces = Vec::new();
    for poly in lists {
        if poly.len() < 3 {
            return Err(Error::format(0, format!("face with {} vertices", poly.len())));
        }
        for k in 1..poly.len() - 1 {
            faces.push([poly[0] as u32, poly[k] as u32, poly[k + 1] as u32]);
        }
    }
    let mesh = Mesh { vertices, colors, faces };
    mesh.validate()?;
    Ok(mesh)
}

pub fn read_mesh(path: &Path) -> Result<Mesh> {
    decode_mesh(&std::fs::read(path)?)
}

pub fn write_mesh(path: &Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, encode_mesh(mesh))?;
    Ok(())
}

/// Property names of the per-level splat file, in file order.
pub fn splat_property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * (SH_BASIS_LEN - 1)).map(|i| format!("f_rest_{i}")));
    names
}

/// File column for each parameter index. Rest coefficients are stored
/// channel-major without the constant term, as common splat tools expect.
fn file_order() -> [usize; PARAMS_PER_SPLAT] {
    let mut order = [0usize; PARAMS_PER_SPLAT];
    for (i, o) in order.iter_mut().enumerate().take(11) {
        *o = i;
    }
    for c in 0..3 {
        for k in 0..SH_BASIS_LEN {
            let param = 11 + c * SH_BASIS_LEN + k;
            order[param] = if k == 0 { 11 + c } else { 14 + c * (SH_BASIS_LEN - 1) + (k - 1) };
        }
    }
    order
}

pub fn encode_splats(splats: &[GaussianSplat]) -> Vec<u8> {
    let names = splat_property_names();
    let mut h = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", splats.len());
    for n in &names {
        h.push_str(&format!("property float {n}\n"));
    }
    h.push_str("end_header\n");
    let mut out = h.into_bytes();
    out.reserve(splats.len() * PARAMS_PER_SPLAT * 4);
    let order = file_order();
    for s in splats {
        let p = s.to_params();
        let mut row = [0f32; PARAMS_PER_SPLAT];
        for (i, &col) in order.iter().enumerate() {
            row[col] = p[i] as f32;
        }
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_splats(bytes: &[u8], lod_level: u8) -> Result<Vec<GaussianSplat>> {
    let ply = parse(bytes)?;
    let v = ply.element("vertex").ok_or_else(|| Error::format(0, "splat file has no vertex element"))?;
    let names = splat_property_names();
    let cols = names.iter().map(|n| v.require(n)).collect::<Result<Vec<_>>>()?;
    let order = file_order();
    let mut out = Vec::with_capacity(v.decl.count);
    for row in 0..v.decl.count {
        let mut p = [0.0; PARAMS_PER_SPLAT];
        for (i, &col) in order.iter().enumerate() {
            p[i] = cols[col][row];
        }
        let s = GaussianSplat::from_params(&p, lod_level);
        if !s.is_finite() {
            return Err(Error::Corrupt(format!("splat {row} has non-finite attributes")));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn read_splats(path: &Path, lod_level: u8) -> Result<Vec<GaussianSplat>> {
    decode_splats(&std::fs::read(path)?, lod_level)
}

pub fn write_splats(path: &Path, splats: &[GaussianSplat]) -> Result<()> {
    std::fs::write(path, encode_splats(splats))?;
    Ok(())
}

/// Rounds every parameter through `f32`, the precision of all splat files.
pub fn quantize_splat(s: &GaussianSplat) -> GaussianSplat {
    let mut p = s.to_params();
    p.iter_mut().for_each(|v| *v = *v as f32 as f64);
    GaussianSplat::from_params(&p, s.lod_level)
}
