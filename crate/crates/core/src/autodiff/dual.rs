//! Forward-mode dual numbers carrying the two UV tangents.

use std::ops::{Add, Mul, Neg, Sub};

use super::kernels;

/// A value together with its partial derivatives along `u` and `v`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DualValue {
    pub value: f64,
    pub tangents: [f64; 2],
}

impl DualValue {
    pub const fn constant(value: f64) -> Self {
        Self { value, tangents: [0.0, 0.0] }
    }

    pub const fn new(value: f64, du: f64, dv: f64) -> Self {
        Self { value, tangents: [du, dv] }
    }

    /// The seeds for an input point `(u, v)`.
    pub fn seed_uv(u: f64, v: f64) -> [Self; 2] {
        [Self::new(u, 1.0, 0.0), Self::new(v, 0.0, 1.0)]
    }

    pub fn softplus(self) -> Self {
        let s = kernels::sigmoid(self.value);
        Self {
            value: kernels::softplus(self.value),
            tangents: [s * self.tangents[0], s * self.tangents[1]],
        }
    }

    pub fn scale(self, k: f64) -> Self {
        Self {
            value: self.value * k,
            tangents: [self.tangents[0] * k, self.tangents[1] * k],
        }
    }
}

impl Add for DualValue {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            value: self.value + o.value,
            tangents: [self.tangents[0] + o.tangents[0], self.tangents[1] + o.tangents[1]],
        }
    }
}

impl Sub for DualValue {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            value: self.value - o.value,
            tangents: [self.tangents[0] - o.tangents[0], self.tangents[1] - o.tangents[1]],
        }
    }
}

impl Mul for DualValue {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        Self {
            value: self.value * o.value,
            tangents: [
                self.tangents[0] * o.value + self.value * o.tangents[0],
                self.tangents[1] * o.value + self.value * o.tangents[1],
            ],
        }
    }
}

impl Neg for DualValue {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

/// `J_φ(p)`: row `i` holds `(∂φ_i/∂u, ∂φ_i/∂v)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Jacobian3x2(pub [[f64; 2]; 3]);

impl Jacobian3x2 {
    pub fn from_columns(du: [f64; 3], dv: [f64; 3]) -> Self {
        Self([[du[0], dv[0]], [du[1], dv[1]], [du[2], dv[2]]])
    }

    pub fn from_duals(out: [DualValue; 3]) -> Self {
        Self::from_columns(
            [out[0].tangents[0], out[1].tangents[0], out[2].tangents[0]],
            [out[0].tangents[1], out[1].tangents[1], out[2].tangents[1]],
        )
    }

    pub fn column(&self, j: usize) -> [f64; 3] {
        [self.0[0][j], self.0[1][j], self.0[2][j]]
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row][col]
    }

    /// Left-multiplies by a 3×3 matrix (e.g. a rotation applied after the map).
    pub fn left_mul(&self, m: &[[f64; 3]; 3]) -> Self {
        let mut out = [[0.0; 2]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| m[i][k] * self.0[k][j]).sum();
            }
        }
        Self(out)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule_matches_finite_differences() {
        let f = |u: f64, v: f64| {
            let [a, b] = DualValue::seed_uv(u, v);
            (a * b + a.softplus() - b.scale(3.0)).softplus()
        };
        let plain = |u: f64, v: f64| {
            kernels::softplus(u * v + kernels::softplus(u) - 3.0 * v)
        };
        let (u, v, h) = (0.3, -0.7, 1e-5);
        let d = f(u, v);
        assert_eq!(d.value, plain(u, v));
        let fd_u = (plain(u + h, v) - plain(u - h, v)) / (2.0 * h);
        let fd_v = (plain(u, v + h) - plain(u, v - h)) / (2.0 * h);
        assert!((d.tangents[0] - fd_u).abs() < 1e-9);
        assert!((d.tangents[1] - fd_v).abs() < 1e-9);
    }
}
