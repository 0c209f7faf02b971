//! Wavefront OBJ: `v` and `f` records on read, plus `vt`/`usemtl` on write.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;

use super::mesh::Mesh;

/// Reads vertices and faces; polygons are fan-triangulated and texture or
/// normal indices (`f 1/2/3`) are ignored.
pub fn read_obj(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    parse_obj(&text, path)
}

pub fn parse_obj(text: &str, path: &Path) -> Result<Mesh> {
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut polys: Vec<(usize, Vec<i64>)> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let at = || format!("line {}", ln + 1);
        let line = line.split('#').next().unwrap_or("");
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut c = [0.0; 3];
                for slot in &mut c {
                    *slot = toks
                        .next()
                        .ok_or_else(|| Error::parse(path, at(), "vertex needs three coordinates"))?
                        .parse()
                        .map_err(|_| Error::parse(path, at(), "bad vertex coordinate"))?;
                }
                vertices.push(c);
            }
            Some("f") => {
                let idx = toks
                    .map(|t| {
                        t.split('/')
                            .next()
                            .and_then(|s| s.parse::<i64>().ok())
                            .filter(|&i| i != 0)
                            .ok_or_else(|| Error::parse(path, at(), format!("bad face index `{t}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                if idx.len() < 3 {
                    return Err(Error::parse(path, at(), "face needs at least three vertices"));
                }
                polys.push((ln + 1, idx));
            }
            _ => {}
        }
    }
    let n = vertices.len() as i64;
    let mut triangles = Vec::new();
    for (ln, poly) in polys {
        let resolved = poly
            .iter()
            .map(|&i| {
                let r = if i < 0 { n + i } else { i - 1 };
                if (0..n).contains(&r) {
                    Ok(r as usize)
                } else {
                    Err(Error::parse(path, format!("line {ln}"), format!("face index {i} out of range")))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        for k in 1..resolved.len() - 1 {
            triangles.push([resolved[0], resolved[k], resolved[k + 1]]);
        }
    }
    Mesh::new(vertices, triangles)
}

/// A textured group of triangles for [`write_obj`].
#[derive(Debug, Clone)]
pub struct ObjGroup<'a> {
    pub name: String,
    pub vertices: &'a [Vec3],
    pub uvs: &'a [[f64; 2]],
    pub triangles: &'a [[usize; 3]],
}

/// Writes groups with shared material. Indices in each group are local to
/// that group. Floats use the shortest representation that reads back
/// bit-identically.
pub fn write_obj(path: &Path, groups: &[ObjGroup<'_>], mtl: Option<(&str, &str)>) -> Result<()> {
    let mut s = String::new();
    if let Some((lib, _)) = mtl {
        writeln!(s, "mtllib {lib}").unwrap();
    }
    let (mut v_off, mut vt_off) = (1usize, 1usize);
    for g in groups {
        if !g.uvs.is_empty() && g.uvs.len() != g.vertices.len() {
            return Err(Error::ShapeMismatch(format!("group {} has {} uvs for {} vertices", g.name, g.uvs.len(), g.vertices.len())));
        }
        writeln!(s, "o {}", g.name).unwrap();
        if let Some((_, material)) = mtl {
            writeln!(s, "usemtl {material}").unwrap();
        }
        for v in g.vertices {
            writeln!(s, "v {:?} {:?} {:?}", v[0], v[1], v[2]).unwrap();
        }
        for t in g.uvs {
            writeln!(s, "vt {:?} {:?}", t[0], t[1]).unwrap();
        }
        for t in g.triangles {
            if t.iter().any(|&i| i >= g.vertices.len()) {
                return Err(Error::InvalidArgument(format!("triangle index out of range in group {}", g.name)));
            }
            if g.uvs.is_empty() {
                writeln!(s, "f {} {} {}", t[0] + v_off, t[1] + v_off, t[2] + v_off).unwrap();
            } else {
                writeln!(
                    s,
                    "f {}/{} {}/{} {}/{}",
                    t[0] + v_off,
                    t[0] + vt_off,
                    t[1] + v_off,
                    t[1] + vt_off,
                    t[2] + v_off,
                    t[2] + vt_off
                )
                .unwrap();
            }
        }
        v_off += g.vertices.len();
        vt_off += g.uvs.len();
    }
    std::fs::write(path, s)?;
    Ok(())
}
