//! Two-dimensional FFTs and trigonometric interpolation on the `n × n` torus grid.
//!
//! Nodal arrays are stored row-major with `x¹` fastest: `u[j * n + i] = u(i h, j h)`.
//! Coefficients follow `u(x) = Σ_k ĉ_k φ_k(x)` with `φ_k = e^{2πi k·x}` except on
//! the Nyquist index `n/2`, where the basis is `cos(π n x)` so that the
//! interpolant is real and exactly reproduces nodal values.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::geometry::Vec2;

#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({})", self.n)
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn run(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        for row in data.chunks_mut(n) {
            plan.process_with_scratch(row, &mut scratch);
        }
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for i in 0..n {
            for j in 0..n {
                col[j] = data[j * n + i];
            }
            plan.process_with_scratch(&mut col, &mut scratch);
            for j in 0..n {
                data[j * n + i] = col[j];
            }
        }
    }

    /// Unnormalized forward transform (`e^{-2πi k·x}`).
    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(data, &self.fwd.clone());
    }

    /// Unnormalized inverse transform (`e^{+2πi k·x}`).
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(data, &self.inv.clone());
    }

    /// Interpolation coefficients `ĉ` of real nodal values.
    pub fn coefficients(&self, values: &[f64]) -> Vec<Complex64> {
        let scale = 1.0 / (self.n * self.n) as f64;
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut data);
        data.iter_mut().for_each(|c| *c *= scale);
        data
    }

    /// Nodal values from coefficients (inverse of [`coefficients`](Self::coefficients)).
    pub fn values(&self, coeffs: &[Complex64]) -> Vec<f64> {
        let mut data = coeffs.to_vec();
        self.inverse(&mut data);
        data.iter().map(|c| c.re).collect()
    }
}

/// Signed frequency of FFT index `k`; the Nyquist index maps to `n/2`.
pub fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Basis values and derivatives along one axis at coordinate `t`.
fn axis_basis(n: usize, t: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut e = vec![Complex64::new(0.0, 0.0); n];
    let mut de = vec![Complex64::new(0.0, 0.0); n];
    for k in 0..n {
        let f = signed_freq(k, n);
        let w = 2.0 * PI * f;
        if k == n / 2 {
            e[k] = Complex64::new((w * t).cos(), 0.0);
            de[k] = Complex64::new(-w * (w * t).sin(), 0.0);
        } else {
            let z = Complex64::from_polar(1.0, w * t);
            e[k] = z;
            de[k] = Complex64::new(0.0, w) * z;
        }
    }
    (e, de)
}

/// Value of the trigonometric interpolant at `x`.
pub fn eval(coeffs: &[Complex64], n: usize, x: Vec2) -> f64 {
    let (ex, _) = axis_basis(n, x.x);
    let (ey, _) = axis_basis(n, x.y);
    let mut acc = Complex64::new(0.0, 0.0);
    for ky in 0..n {
        let row = &coeffs[ky * n..(ky + 1) * n];
        let s: Complex64 = row.iter().zip(&ex).map(|(c, e)| c * e).sum();
        acc += s * ey[ky];
    }
    acc.re
}

/// Value and gradient of the trigonometric interpolant at `x`.
pub fn eval_with_gradient(coeffs: &[Complex64], n: usize, x: Vec2) -> (f64, Vec2) {
    let (ex, dex) = axis_basis(n, x.x);
    let (ey, dey) = axis_basis(n, x.y);
    let mut v = Complex64::new(0.0, 0.0);
    let mut gx = Complex64::new(0.0, 0.0);
    let mut gy = Complex64::new(0.0, 0.0);
    for ky in 0..n {
        let row = &coeffs[ky * n..(ky + 1) * n];
        let mut s = Complex64::new(0.0, 0.0);
        let mut sd = Complex64::new(0.0, 0.0);
        for kx in 0..n {
            s += row[kx] * ex[kx];
            sd += row[kx] * dex[kx];
        }
        v += s * ey[ky];
        gx += sd * ey[ky];
        gy += s * dey[ky];
    }
    (v.re, Vec2::new(gx.re, gy.re))
}

/// Per-mode weights `J0(2π|k| r)` for exact ring averages at radius `r`.
pub fn ring_weights(n: usize, r: f64) -> Vec<f64> {
    let mut w = vec![0.0; n * n];
    for ky in 0..n {
        let fy = signed_freq(ky, n);
        for kx in 0..n {
            let fx = signed_freq(kx, n);
            w[ky * n + kx] = libm::j0(2.0 * PI * fx.hypot(fy) * r);
        }
    }
    w
}

/// Angular average of the interpolant over the circle of radius `r` about `y`,
/// given precomputed [`ring_weights`]. Exact for the trigonometric interpolant.
pub fn ring_average(coeffs: &[Complex64], n: usize, y: Vec2, weights: &[f64]) -> f64 {
    let (ex, _) = axis_basis(n, y.x);
    let (ey, _) = axis_basis(n, y.y);
    let mut acc = Complex64::new(0.0, 0.0);
    for ky in 0..n {
        let mut s = Complex64::new(0.0, 0.0);
        for kx in 0..n {
            let idx = ky * n + kx;
            s += coeffs[idx] * ex[kx] * weights[idx];
        }
        acc += s * ey[ky];
    }
    acc.re
}

/// Multiplies coefficients by `e^{-2πi k·s}`, translating the interpolant by `s`.
/// Exact for fields with vanishing Nyquist content.
pub fn shift(coeffs: &[Complex64], n: usize, s: Vec2) -> Vec<Complex64> {
    let mut out = coeffs.to_vec();
    let phx: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, -2.0 * PI * signed_freq(k, n) * s.x)).collect();
    let phy: Vec<Complex64> = (0..n).map(|k| Complex64::from_polar(1.0, -2.0 * PI * signed_freq(k, n) * s.y)).collect();
    for ky in 0..n {
        for kx in 0..n {
            out[ky * n + kx] *= phx[kx] * phy[ky];
        }
    }
    out
}
