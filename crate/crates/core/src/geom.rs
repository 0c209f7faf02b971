//! Small fixed-size geometry helpers and the basic point containers.

use ndarray::Array2;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];
pub type Mat3 = [[f64; 3]; 3];

pub const IDENTITY3: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm2(a: Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub fn dist2(a: Vec3, b: Vec3) -> f64 {
    norm2(sub(a, b))
}

#[inline]
pub fn mat_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [dot(m[0], v), dot(m[1], v), dot(m[2], v)]
}

pub fn mat_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

pub fn transpose(m: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn det(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Rodrigues rotation about a unit `axis`.
pub fn axis_angle(axis: Vec3, angle: f64) -> Mat3 {
    let n = norm2(axis).sqrt();
    let [x, y, z] = [axis[0] / n, axis[1] / n, axis[2] / n];
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ]
}

/// Rotation angle of a rotation matrix, in `[0, π]`.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let tr = r[0][0] + r[1][1] + r[2][2];
    ((tr - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

/// `x ↦ R·x + T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub const IDENTITY: Self = Self { rotation: IDENTITY3, translation: [0.0; 3] };

    pub fn new(rotation: Mat3, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    /// Rotation about an axis passing through `center`.
    pub fn about_center(axis: Vec3, angle: f64, center: Vec3) -> Self {
        let rotation = axis_angle(axis, angle);
        let translation = sub(center, mat_vec(&rotation, center));
        Self { rotation, translation }
    }

    /// The same motion with the rotation taken about `center`:
    /// `x ↦ R·(x - c) + c + T`.
    pub fn pivoted(&self, center: Vec3) -> Self {
        let translation = add(sub(center, mat_vec(&self.rotation, center)), self.translation);
        Self { rotation: self.rotation, translation }
    }

    #[inline]
    pub fn apply(&self, p: Vec3) -> Vec3 {
        add(mat_vec(&self.rotation, p), self.translation)
    }

    pub fn apply_cloud(&self, cloud: &PointCloud) -> PointCloud {
        PointCloud::from_points(cloud.iter().map(|p| self.apply(p)))
    }

    /// Largest deviation of `RᵀR` from identity, and `det R - 1`.
    pub fn orthonormality_error(&self) -> (f64, f64) {
        let rtr = mat_mul(&transpose(&self.rotation), &self.rotation);
        let mut worst: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((rtr[i][j] - e).abs());
            }
        }
        (worst, det(&self.rotation) - 1.0)
    }
}

/// A point `p ∈ Ω = [0,1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UvPoint {
    pub u: f64,
    pub v: f64,
}

impl UvPoint {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    pub fn in_domain(&self) -> bool {
        (0.0..=1.0).contains(&self.u) && (0.0..=1.0).contains(&self.v)
    }

    pub fn dist2(&self, o: &UvPoint) -> f64 {
        let (du, dv) = (self.u - o.u, self.v - o.v);
        du * du + dv * dv
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct UvSampleSet {
    pub points: Vec<UvPoint>,
}

impl UvSampleSet {
    pub fn new(points: Vec<UvPoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// m×2 array of `(u, v)` rows.
    pub fn to_array(&self) -> Array2<f64> {
        Array2::from_shape_fn((self.points.len(), 2), |(i, j)| {
            if j == 0 {
                self.points[i].u
            } else {
                self.points[i].v
            }
        })
    }

    pub fn check_domain(&self) -> Result<()> {
        match self.points.iter().position(|p| !p.in_domain()) {
            Some(i) => Err(Error::InvalidArgument(format!(
                "uv sample {i} = ({}, {}) lies outside [0,1]²",
                self.points[i].u, self.points[i].v
            ))),
            None => Ok(()),
        }
    }
}

/// An n×3 point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud(Array2<f64>);

impl PointCloud {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.ncols() != 3 {
            return Err(Error::ShapeMismatch(format!("point cloud needs 3 columns, got {}", points.ncols())));
        }
        Ok(Self(points.as_standard_layout().to_owned()))
    }

    pub fn from_points(points: impl IntoIterator<Item = Vec3>) -> Self {
        let flat: Vec<f64> = points.into_iter().flatten().collect();
        let n = flat.len() / 3;
        Self(Array2::from_shape_vec((n, 3), flat).expect("three coordinates per point"))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    #[inline]
    pub fn point(&self, i: usize) -> Vec3 {
        [self.0[[i, 0]], self.0[[i, 1]], self.0[[i, 2]]]
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec3> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn to_vec(&self) -> Vec<Vec3> {
        self.iter().collect()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn select(&self, idx: &[usize]) -> PointCloud {
        Self(self.0.select(ndarray::Axis(0), idx))
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.len().max(1) as f64;
        let mut c = [0.0; 3];
        for p in self.iter() {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        [c[0] / n, c[1] / n, c[2] / n]
    }

    /// Axis-aligned bounding box `(min, max)`.
    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.iter();
        let first = it.next()?;
        let (mut lo, mut hi) = (first, first);
        for p in it {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        Some((lo, hi))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_angle_is_orthonormal() {
        let r = RigidTransform::new(axis_angle([0.3, -1.0, 2.0], 2.1), [0.0; 3]);
        let (o, d) = r.orthonormality_error();
        assert!(o < 1e-12 && d.abs() < 1e-12);
        assert!((rotation_angle(&r.rotation) - 2.1).abs() < 1e-12);
    }

    #[test]
    fn rotation_about_center_fixes_center() {
        let c = [0.5, 0.2, -1.0];
        let t = RigidTransform::about_center([0.0, 1.0, 0.0], 1.0, c);
        let p = t.apply(c);
        assert!(dist2(p, c) < 1e-28);
    }
}
