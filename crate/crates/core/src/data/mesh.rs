use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::{self, PointCloud, Vec3};

use super::{obj, ply};

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidArgument(format!("triangle {t:?} indexes past {n} vertices")));
        }
        if vertices.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::NonFiniteValue { location: "mesh vertex".into() });
        }
        Ok(Self { vertices, triangles })
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        let (e1, e2) = (geom::sub(b, a), geom::sub(c, a));
        0.5 * geom::norm2(cross(e1, e2)).sqrt()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Loads an `.obj` or `.ply` file by extension.
pub fn load_mesh(path: &Path) -> Result<Mesh> {
    match extension(path).as_deref() {
        Some("obj") => obj::read_obj(path),
        Some("ply") => {
            let d = ply::read_ply(path)?;
            let mut tris = Vec::new();
            for f in &d.faces {
                if f.len() < 3 {
                    return Err(Error::parse(path, "face", "face with fewer than three vertices"));
                }
                for k in 1..f.len() - 1 {
                    tris.push([f[0], f[k], f[k + 1]]);
                }
            }
            Mesh::new(d.vertices, tris)
        }
        _ => Err(Error::InvalidArgument(format!("{}: unsupported mesh format", path.display()))),
    }
}

pub(crate) fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Area-weighted triangle choice, then a uniform barycentric point.
pub fn sample_surface<R: Rng + ?Sized>(mesh: &Mesh, n: usize, rng: &mut R) -> Result<PointCloud> {
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegenerateMesh);
    }
    let pts = (0..n).map(|_| {
        let r = rng.gen::<f64>() * total;
        let t = cumulative.partition_point(|&c| c <= r).min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i]);
        let s = rng.gen::<f64>().sqrt();
        let r2 = rng.gen::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
    });
    Ok(PointCloud::from_points(pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::stream_rng;

    fn unit_cube_obj() -> String {
        let mut s = String::new();
        for i in 0..8 {
            s += &format!("v {} {} {}\n", i & 1, (i >> 1) & 1, (i >> 2) & 1);
        }
        for f in [
            [1, 3, 4, 2],
            [5, 6, 8, 7],
            [1, 2, 6, 5],
            [3, 7, 8, 4],
            [1, 5, 7, 3],
            [2, 4, 8, 6],
        ] {
            s += &format!("f {} {} {} {}\n", f[0], f[1], f[2], f[3]);
        }
        s
    }

    #[test]
    fn unit_cube_obj_counts() {
        let m = obj::parse_obj(&unit_cube_obj(), Path::new("cube.obj")).unwrap();
        assert_eq!(m.vertices.len(), 8);
        assert_eq!(m.triangles.len(), 12);
        assert!((m.area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn samples_stay_in_single_triangle() {
        let m = Mesh::new(vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        let pc = sample_surface(&m, 2000, &mut stream_rng(1, 0)).unwrap();
        for p in pc.iter() {
            // barycentric coordinates w.r.t. the right triangle (0,0),(2,0),(0,1)
            let (b1, b2) = (p[0] / 2.0, p[1]);
            assert!(b1 >= 0.0 && b2 >= 0.0 && b1 + b2 <= 1.0 + 1e-12 && p[2] == 0.0);
        }
    }

    #[test]
    fn area_weighting_binomial() {
        // triangle A has area 1, triangle B area 3
        let m = Mesh::new(
            vec![[0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [10.0, 0.0, 0.0], [16.0, 0.0, 0.0], [10.0, 1.0, 0.0]],
            vec![[0, 1, 2], [3, 4, 5]],
        )
        .unwrap();
        let n = 100_000;
        let pc = sample_surface(&m, n, &mut stream_rng(2, 0)).unwrap();
        let in_b = pc.iter().filter(|p| p[0] >= 10.0).count() as f64 / n as f64;
        assert!((in_b - 0.75).abs() < 0.03, "{in_b}");
    }

    #[test]
    fn zero_area_mesh() {
        let m = Mesh::new(vec![[0.0; 3], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(sample_surface(&m, 10, &mut stream_rng(0, 0)), Err(Error::DegenerateMesh)));
        let empty = Mesh::new(vec![], vec![]).unwrap();
        assert!(matches!(sample_surface(&empty, 10, &mut stream_rng(0, 0)), Err(Error::DegenerateMesh)));
    }
}
