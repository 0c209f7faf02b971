//! PLY reader (ascii, binary little/big endian) and writer (ascii, binary
//! little endian).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
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

    fn decode(self, b: &[u8], enc: Encoding) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let arr: [u8; $n] = b[..$n].try_into().unwrap();
                (if enc == Encoding::Big { <$t>::from_be_bytes(arr) } else { <$t>::from_le_bytes(arr) }) as f64
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

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Parsed contents of a PLY file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlyData {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<Vec<usize>>,
    /// Every scalar vertex property by name (including `x`, `y`, `z`).
    pub vertex_scalars: BTreeMap<String, Vec<f64>>,
}

pub fn read_ply(path: &Path) -> Result<PlyData> {
    parse_ply(&std::fs::read(path)?, path)
}

pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<PlyData> {
    let err = |at: String, msg: &str| Error::parse(path, at, msg);
    let header_end = find_header_end(bytes).ok_or_else(|| err("header".into(), "missing end_header"))?;
    let header = std::str::from_utf8(&bytes[..header_end.0]).map_err(|_| err("header".into(), "header is not UTF-8"))?;
    let mut lines = header.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(err("line 1".into(), "missing `ply` magic")),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    for (i, line) in lines {
        let at = format!("line {}", i + 1);
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", fmt, _version] => {
                encoding = Some(match *fmt {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    _ => return Err(err(at, "unknown format")),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(at.clone(), "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| err(at.clone(), "property before element"))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count).ok_or_else(|| err(at.clone(), "bad list count type"))?,
                    item: Scalar::parse(item).ok_or_else(|| err(at.clone(), "bad list item type"))?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| err(at.clone(), "property before element"))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty: Scalar::parse(ty).ok_or_else(|| err(at.clone(), "bad property type"))?,
                });
            }
            ["end_header"] => break,
            _ => return Err(err(at, "unrecognised header line")),
        }
    }
    let encoding = encoding.ok_or_else(|| err("header".into(), "missing format line"))?;
    let body = &bytes[header_end.1..];
    let mut out = PlyData::default();
    match encoding {
        Encoding::Ascii => read_ascii_body(body, &elements, header.lines().count() + 1, path, &mut out)?,
        enc => read_binary_body(body, &elements, enc, header_end.1, path, &mut out)?,
    }
    let get = |n: &str| out.vertex_scalars.get(n);
    if let Some(vertex) = elements.iter().find(|e| e.name == "vertex") {
        match (get("x"), get("y"), get("z")) {
            (Some(x), Some(y), Some(z)) => {
                out.vertices = (0..vertex.count).map(|i| [x[i], y[i], z[i]]).collect();
            }
            _ => return Err(err("header".into(), "vertex element lacks x/y/z")),
        }
    }
    let nv = out.vertices.len();
    if let Some((fi, bad)) = out.faces.iter().enumerate().find_map(|(fi, f)| f.iter().find(|&&i| i >= nv).map(|&b| (fi, b))) {
        return Err(err(format!("face {fi}"), &format!("vertex index {bad} out of range")));
    }
    Ok(out)
}

/// `(end of header text, start of body)`.
fn find_header_end(bytes: &[u8]) -> Option<(usize, usize)> {
    let key = b"end_header";
    let pos = bytes.windows(key.len()).position(|w| w == key)?;
    let mut body = pos + key.len();
    if bytes.get(body) == Some(&b'\r') {
        body += 1;
    }
    if bytes.get(body) == Some(&b'\n') {
        body += 1;
    }
    Some((pos + key.len(), body))
}

fn store(out: &mut PlyData, el: &Element, name: &str, value: f64) {
    if el.name == "vertex" {
        out.vertex_scalars.entry(name.to_string()).or_default().push(value);
    }
}

fn is_face_list(el: &Element, name: &str) -> bool {
    el.name == "face" && (name == "vertex_indices" || name == "vertex_index")
}

fn read_ascii_body(body: &[u8], elements: &[Element], first_line: usize, path: &Path, out: &mut PlyData) -> Result<()> {
    let text = std::str::from_utf8(body).map_err(|_| Error::parse(path, "body", "ascii body is not UTF-8"))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    for el in elements {
        for _ in 0..el.count {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(path, "end of file", format!("missing `{}` records", el.name)))?;
            let at = format!("line {}", first_line + ln);
            let mut toks = line.split_whitespace();
            let mut next = |what: &str| -> Result<f64> {
                toks.next()
                    .ok_or_else(|| Error::parse(path, at.clone(), format!("missing {what}")))?
                    .parse::<f64>()
                    .map_err(|_| Error::parse(path, at.clone(), format!("bad number for {what}")))
            };
            for p in &el.props {
                match p {
                    Property::Scalar { name, .. } => {
                        let v = next(name)?;
                        store(out, el, name, v);
                    }
                    Property::List { name, .. } => {
                        let n = next(name)? as usize;
                        let items = (0..n).map(|_| next(name)).collect::<Result<Vec<_>>>()?;
                        if is_face_list(el, name) {
                            out.faces.push(items.into_iter().map(|v| v as usize).collect());
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn read_binary_body(
    body: &[u8],
    elements: &[Element],
    enc: Encoding,
    body_offset: usize,
    path: &Path,
    out: &mut PlyData,
) -> Result<()> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        let slice = body
            .get(pos..pos + n)
            .ok_or_else(|| Error::parse(path, format!("byte {}", body_offset + pos), "unexpected end of binary body"))?;
        pos += n;
        Ok(slice)
    };
    for el in elements {
        for _ in 0..el.count {
            for p in &el.props {
                match p {
                    Property::Scalar { name, ty } => {
                        let v = ty.decode(take(ty.size())?, enc);
                        store(out, el, name, v);
                    }
                    Property::List { name, count, item } => {
                        let n = count.decode(take(count.size())?, enc) as usize;
                        let mut items = Vec::with_capacity(n);
                        for _ in 0..n {
                            items.push(item.decode(take(item.size())?, enc));
                        }
                        if is_face_list(el, name) {
                            out.faces.push(items.into_iter().map(|v| v as usize).collect());
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

/// Optional per-vertex attributes written after `x y z`.
#[derive(Debug, Clone, Default)]
pub struct VertexAttributes<'a> {
    pub colors: Option<&'a [[u8; 3]]>,
    /// Extra `double` properties, in order.
    pub scalars: Vec<(&'a str, &'a [f64])>,
}

pub fn write_ply(
    path: &Path,
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    attrs: &VertexAttributes<'_>,
    format: PlyFormat,
) -> Result<()> {
    let mut buf = Vec::new();
    write_ply_to(&mut buf, vertices, faces, attrs, format)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn write_ply_to(
    w: &mut impl Write,
    vertices: &[Vec3],
    faces: &[[usize; 3]],
    attrs: &VertexAttributes<'_>,
    format: PlyFormat,
) -> Result<()> {
    let n = vertices.len();
    if attrs.colors.is_some_and(|c| c.len() != n) || attrs.scalars.iter().any(|(_, s)| s.len() != n) {
        return Err(Error::ShapeMismatch("vertex attribute length differs from vertex count".into()));
    }
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\ncomment mcatlas")?;
    writeln!(w, "element vertex {n}\nproperty double x\nproperty double y\nproperty double z")?;
    if attrs.colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    for (name, _) in &attrs.scalars {
        writeln!(w, "property double {name}")?;
    }
    if !faces.is_empty() {
        writeln!(w, "element face {}\nproperty list uchar int vertex_indices", faces.len())?;
    }
    writeln!(w, "end_header")?;
    for (i, v) in vertices.iter().enumerate() {
        match format {
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", v[0], v[1], v[2])?;
                if let Some(c) = attrs.colors {
                    write!(w, " {} {} {}", c[i][0], c[i][1], c[i][2])?;
                }
                for (_, s) in &attrs.scalars {
                    write!(w, " {}", s[i])?;
                }
                writeln!(w)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for c in v {
                    w.write_all(&c.to_le_bytes())?;
                }
                if let Some(c) = attrs.colors {
                    w.write_all(&c[i])?;
                }
                for (_, s) in &attrs.scalars {
                    w.write_all(&s[i].to_le_bytes())?;
                }
            }
        }
    }
    for f in faces {
        if f.iter().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("face index out of range".into()));
        }
        match format {
            PlyFormat::Ascii => writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?,
            PlyFormat::BinaryLittleEndian => {
                w.write_all(&[3u8])?;
                for &i in f {
                    w.write_all(&(i as i32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_mixed_property_types_big_endian() {
        let mut bytes = b"ply\nformat binary_big_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nproperty uchar alpha\nelement face 1\nproperty list uchar uint vertex_indices\nend_header\n".to_vec();
        for v in [1.5f32, -2.0, 0.25] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.push(7);
        bytes.push(3);
        for i in [0u32, 0, 0] {
            bytes.extend_from_slice(&i.to_be_bytes());
        }
        let d = parse_ply(&bytes, Path::new("x.ply")).unwrap();
        assert_eq!(d.vertices, vec![[1.5, -2.0, 0.25]]);
        assert_eq!(d.faces, vec![vec![0, 0, 0]]);
        assert_eq!(d.vertex_scalars["alpha"], vec![7.0]);
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n\0\0\0\0".to_vec();
        let e = parse_ply(&bytes, Path::new("t.ply")).unwrap_err();
        assert!(matches!(e, Error::Parse { ref at, .. } if at.starts_with("byte")), "{e}");
    }

    #[test]
    fn bad_ascii_number_reports_line() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 two 3\n";
        let e = parse_ply(bytes, Path::new("a.ply")).unwrap_err();
        assert!(matches!(e, Error::Parse { ref at, .. } if at == "line 8"), "{e}");
    }

    #[test]
    fn face_index_out_of_range() {
        let bytes = b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n";
        assert!(parse_ply(bytes, Path::new("f.ply")).is_err());
    }
}
