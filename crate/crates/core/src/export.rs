//! Inspectable artifacts: textured patch-grid meshes and correspondence
//! colormaps.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::data::obj::{write_obj, ObjGroup};
use crate::data::ply::{write_ply, PlyFormat, VertexAttributes};
use crate::error::{Error, Result};
use crate::eval::{patch_areas, CorrespondenceSet};
use crate::geom::{dist2, UvPoint, UvSampleSet, Vec3};
use crate::model::SurfaceMap;

pub const DEFAULT_GRID: usize = 32;
pub const MATERIAL_LIB: &str = "atlas.mtl";
pub const MATERIAL_NAME: &str = "checker";
pub const TEXTURE_FILE: &str = "checker.png";
const TEXTURE_SIZE: u32 = 512;
const TEXTURE_SQUARES: u32 = 8;

/// One patch sampled on a regular `G×G` UV grid. Vertex `(i, j)` sits at
/// index `i·G + j` with `u = j/(G-1)`, `v = i/(G-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch: usize,
    pub vertices: Vec<Vec3>,
    pub uvs: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchGridMesh {
    pub grid: usize,
    pub patches: Vec<PatchGrid>,
}

fn check_grid(g: usize) -> Result<()> {
    if g < 2 {
        return Err(Error::InvalidArgument(format!("grid resolution must be at least 2, got {g}")));
    }
    Ok(())
}

pub fn grid_uv(g: usize) -> Result<UvSampleSet> {
    check_grid(g)?;
    let step = 1.0 / (g - 1) as f64;
    Ok(UvSampleSet::new(
        (0..g).flat_map(|i| (0..g).map(move |j| UvPoint::new(j as f64 * step, i as f64 * step))).collect(),
    ))
}

/// Two counter-clockwise triangles per grid cell.
pub fn grid_triangles(g: usize) -> Result<Vec<[usize; 3]>> {
    check_grid(g)?;
    let mut tris = Vec::with_capacity(2 * (g - 1) * (g - 1));
    for i in 0..g - 1 {
        for j in 0..g - 1 {
            let a = i * g + j;
            let (b, c, d) = (a + 1, a + g, a + g + 1);
            tris.push([a, b, d]);
            tris.push([a, d, c]);
        }
    }
    Ok(tris)
}

/// Grids for the given patches.
pub fn patch_grid_mesh(map: &dyn SurfaceMap, g: usize, patches: &[usize]) -> Result<PatchGridMesh> {
    let uv = grid_uv(g)?;
    let triangles = grid_triangles(g)?;
    let uvs: Vec<[f64; 2]> = uv.points.iter().map(|p| [p.u, p.v]).collect();
    let patches = patches
        .iter()
        .map(|&patch| {
            Ok(PatchGrid { patch, vertices: map.points(patch, &uv)?, uvs: uvs.clone(), triangles: triangles.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchGridMesh { grid: g, patches })
}

/// Writes `path` as an OBJ of every non-collapsed patch, with the shared
/// material and checkerboard texture next to it.
pub fn export_frame(map: &dyn SurfaceMap, g: usize, area_samples: usize, path: &Path) -> Result<PatchGridMesh> {
    check_grid(g)?;
    let areas = patch_areas(map, area_samples)?;
    let mesh = patch_grid_mesh(map, g, &areas.active())?;
    write_material(path.parent().unwrap_or(Path::new(".")))?;
    let names: Vec<String> = mesh.patches.iter().map(|p| format!("patch_{}", p.patch)).collect();
    let groups: Vec<ObjGroup<'_>> = mesh
        .patches
        .iter()
        .zip(&names)
        .map(|(p, name)| ObjGroup { name: name.clone(), vertices: &p.vertices, uvs: &p.uvs, triangles: &p.triangles })
        .collect();
    write_obj(path, &groups, Some((MATERIAL_LIB, MATERIAL_NAME)))?;
    Ok(mesh)
}

pub fn checkerboard(size: u32, squares: u32) -> RgbImage {
    let cell = (size / squares.max(1)).max(1);
    RgbImage::from_fn(size, size, |x, y| {
        if (x / cell + y / cell) % 2 == 0 {
            Rgb([235, 235, 235])
        } else {
            Rgb([40, 40, 40])
        }
    })
}

/// Material library and texture shared by every exported frame in `dir`.
pub fn write_material(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mtl = format!("newmtl {MATERIAL_NAME}\nKa 1 1 1\nKd 1 1 1\nKs 0 0 0\nillum 1\nmap_Kd {TEXTURE_FILE}\n");
    std::fs::write(dir.join(MATERIAL_LIB), mtl)?;
    checkerboard(TEXTURE_SIZE, TEXTURE_SQUARES)
        .save(dir.join(TEXTURE_FILE))
        .map_err(|e| Error::Io(std::io::Error::other(e)))
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h / 60.0) % 6.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |t: f64| ((t + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r), q(g), q(b)]
}

/// Fixed colormap of a position in the unit cube: x drives hue, y
/// saturation and z value.
pub fn source_color(p: Vec3) -> [u8; 3] {
    let c = |t: f64| if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    hsv_to_rgb(360.0 * c(p[0]) % 360.0, 0.35 + 0.65 * c(p[1]), 0.5 + 0.5 * c(p[2]))
}

/// Sources followed by predicted points, both colored by the source
/// position, with `||f(p) - q||` of each pair as the `error` property.
pub fn export_correspondence_colors(corr: &CorrespondenceSet, path: &Path) -> Result<()> {
    let n = corr.len();
    if corr.predicted.len() != n || corr.truth.len() != n {
        return Err(Error::ShapeMismatch("correspondence lists differ in length".into()));
    }
    let vertices: Vec<Vec3> = corr.sources.iter().chain(&corr.predicted).copied().collect();
    let colors: Vec<[u8; 3]> = corr.sources.iter().map(|&p| source_color(p)).collect();
    let colors: Vec<[u8; 3]> = colors.iter().chain(&colors).copied().collect();
    let err: Vec<f64> = corr.predicted.iter().zip(&corr.truth).map(|(&f, &q)| dist2(f, q).sqrt()).collect();
    let err: Vec<f64> = err.iter().chain(&err).copied().collect();
    write_ply(
        path,
        &vertices,
        &[],
        &VertexAttributes { colors: Some(&colors), scalars: vec![("error", &err)] },
        PlyFormat::BinaryLittleEndian,
    )
}

#[cfg(test)]
mod tests;
