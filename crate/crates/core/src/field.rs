//! Periodic grid, scalar fields, and the staggered-face discretization of the
//! weak Finsler Laplacian.
//!
//! Face covectors: on the x-face between nodes `(i, j)` and `(i+1, j)`
//!
//! ```text
//! ξ₁ = Σ_m w_m (u[i+1, j+m] − u[i, j+m]) / h,   w = (1, 10, 1) / 12
//! ξ₂ = (u[i, j+1] − u[i, j−1] + u[i+1, j+1] − u[i+1, j−1]) / 4h
//! ```
//!
//! and symmetrically on y-faces. The transverse weights cancel the leading
//! `cos 4θ` anisotropy of the plain five-point operator. The discrete energy
//! is `E[u] = Σ_faces ¼ F*²(x_f, ξ_f) σ_f h²` over both face families.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{FinslerStructure, LocalNorm, Mat2, Vec2};
use crate::spectral::{signed_freq, Fft2};

const W_SIDE: f64 = 1.0 / 12.0;
const W_MID: f64 = 10.0 / 12.0;
const FACE_WEIGHTS: [f64; 3] = [W_SIDE, W_MID, W_SIDE];

/// Faces where `|ξ|` is below this use the α Hessian in Newton linearizations.
pub const TINY_COVECTOR: f64 = 1e-8;

/// Width (in grid spacings) of the Gaussian taper of the smooth delta.
pub const DELTA_TAPER: f64 = 1.5;

#[derive(Clone, Copy, Debug)]
pub struct Face {
    pub local: LocalNorm,
    /// `½ σ_f h²`: half because each family carries half of the energy.
    pub coef: f64,
}

#[derive(Debug, Clone)]
pub struct TorusGrid {
    n: usize,
    h: f64,
    structure: FinslerStructure,
    weights: Vec<f64>,
    vol: f64,
    x_faces: Vec<Face>,
    y_faces: Vec<Face>,
    fft: Fft2,
}

/// Nodal values on a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub n: usize,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField { n, values: vec![0.0; n * n] }
    }

    pub fn from_fn(n: usize, f: impl Fn(Vec2) -> f64) -> Self {
        let h = 1.0 / n as f64;
        let values = (0..n * n).map(|k| f(Vec2::new((k % n) as f64 * h, (k / n) as f64 * h))).collect();
        ScalarField { n, values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Face covectors of a field, one per x-face and one per y-face.
#[derive(Debug, Clone)]
pub struct FaceCovectors {
    pub x: Vec<Vec2>,
    pub y: Vec<Vec2>,
}

/// Point mass approximation of `δ_y`: node indices and masses summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDelta {
    pub center: Vec2,
    pub weights: Vec<(usize, f64)>,
}

impl DiscreteDelta {
    pub fn total(&self) -> f64 {
        self.weights.iter().map(|w| w.1).sum()
    }
}

/// Linearization `K = Dᵀ diag(coef · T_F(ξ_f)) D` at some state.
#[derive(Debug, Clone)]
pub struct TangentOperator {
    n: usize,
    h: f64,
    mx: Vec<Mat2>,
    my: Vec<Mat2>,
}

impl TorusGrid {
    pub fn new(structure: FinslerStructure, n: usize) -> Result<Self> {
        if n < 16 || n % 2 != 0 {
            return Err(Error::InvalidGrid(n));
        }
        if !structure.is_periodic() {
            return Err(Error::NonPeriodicField);
        }
        structure.validate()?;
        let h = 1.0 / n as f64;
        let measure = structure.measure;
        let node = |i: usize, j: usize| Vec2::new(i as f64 * h, j as f64 * h);
        let mut weights = Vec::with_capacity(n * n);
        let mut x_faces = Vec::with_capacity(n * n);
        let mut y_faces = Vec::with_capacity(n * n);
        let constant = structure.is_constant_coefficient();
        let (c_local, c_sigma) = {
            let l = structure.local(Vec2::zeros());
            (l, l.density(measure))
        };
        for j in 0..n {
            for i in 0..n {
                let face = |p: Vec2| {
                    if constant {
                        Face { local: c_local, coef: 0.5 * c_sigma * h * h }
                    } else {
                        let l = structure.local(p);
                        Face { local: l, coef: 0.5 * l.density(measure) * h * h }
                    }
                };
                let sigma = if constant { c_sigma } else { structure.measure_density(node(i, j)) };
                weights.push(sigma * h * h);
                x_faces.push(face(node(i, j) + Vec2::new(0.5 * h, 0.0)));
                y_faces.push(face(node(i, j) + Vec2::new(0.0, 0.5 * h)));
            }
        }
        let vol = weights.iter().sum();
        Ok(TorusGrid { n, h, structure, weights, vol, x_faces, y_faces, fft: Fft2::new(n) })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn structure(&self) -> &FinslerStructure {
        &self.structure
    }

    /// Per-node measure weights `σ(x_c) h²`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Vol_F(M) = Σ w_c`.
    pub fn volume(&self) -> f64 {
        self.vol
    }

    pub fn fft(&self) -> &Fft2 {
        &self.fft
    }

    pub fn node(&self, idx: usize) -> Vec2 {
        Vec2::new((idx % self.n) as f64 * self.h, (idx / self.n) as f64 * self.h)
    }

    #[inline]
    fn idx(&self, i: isize, j: isize) -> usize {
        let n = self.n as isize;
        (j.rem_euclid(n) * n + i.rem_euclid(n)) as usize
    }

    /// `Σ w_c u_c / Vol`.
    pub fn mean(&self, u: &ScalarField) -> f64 {
        dot(&self.weights, &u.values) / self.vol
    }

    /// Subtracts the measure mean.
    pub fn project_mean_zero(&self, u: &mut ScalarField) {
        let m = self.mean(u);
        u.values.iter_mut().for_each(|v| *v -= m);
    }

    /// `⟨u, v⟩_μ = Σ w_c u_c v_c`.
    pub fn inner(&self, u: &ScalarField, v: &ScalarField) -> f64 {
        self.weights.iter().zip(u.values.iter().zip(&v.values)).map(|(w, (a, b))| w * a * b).sum()
    }

    /// Face covectors `D u`.
    pub fn covectors(&self, u: &[f64]) -> FaceCovectors {
        let n = self.n as isize;
        let inv_h = 1.0 / self.h;
        let mut x = Vec::with_capacity(self.n * self.n);
        let mut y = Vec::with_capacity(self.n * self.n);
        for j in 0..n {
            for i in 0..n {
                let at = |a: isize, b: isize| u[self.idx(a, b)];
                let mut nx = 0.0;
                let mut ny = 0.0;
                for (m, w) in (-1..=1).zip(FACE_WEIGHTS) {
                    nx += w * (at(i + 1, j + m) - at(i, j + m));
                    ny += w * (at(i + m, j + 1) - at(i + m, j));
                }
                let tx = at(i, j + 1) - at(i, j - 1) + at(i + 1, j + 1) - at(i + 1, j - 1);
                let ty = at(i + 1, j) - at(i - 1, j) + at(i + 1, j + 1) - at(i - 1, j + 1);
                x.push(Vec2::new(nx * inv_h, 0.25 * tx * inv_h));
                y.push(Vec2::new(0.25 * ty * inv_h, ny * inv_h));
            }
        }
        FaceCovectors { x, y }
    }

    /// `Dᵀ` applied to face fluxes.
    pub fn apply_dt(&self, fx: &[Vec2], fy: &[Vec2]) -> Vec<f64> {
        dt_apply(self.n, self.h, fx, fy)
    }

    /// `∇E[u]`, the Euclidean gradient of the discrete Dirichlet energy.
    pub fn energy_gradient(&self, u: &[f64]) -> Vec<f64> {
        let c = self.covectors(u);
        let fx: Vec<Vec2> = self.x_faces.iter().zip(&c.x).map(|(f, xi)| f.coef * f.local.legendre(*xi)).collect();
        let fy: Vec<Vec2> = self.y_faces.iter().zip(&c.y).map(|(f, xi)| f.coef * f.local.legendre(*xi)).collect();
        self.apply_dt(&fx, &fy)
    }

    /// Discrete `−Δ_{F,μ} u`: the field `r` with `⟨r, φ⟩_μ = ⟨∇E[u], φ⟩` for all `φ`.
    pub fn assemble_weak_laplacian(&self, u: &ScalarField) -> ScalarField {
        let g = self.energy_gradient(&u.values);
        ScalarField { n: self.n, values: g.iter().zip(&self.weights).map(|(a, w)| a / w).collect() }
    }

    /// `Σ_faces ½F*²(x_f, ξ_f) σ_f h²` (each family weighted by ½).
    pub fn dirichlet_energy(&self, u: &ScalarField) -> f64 {
        let c = self.covectors(&u.values);
        self.face_sum(&c, |f, xi| 0.5 * f.local.dual(xi).powi(2))
    }

    /// `Σ_faces coef_f · g(face, ξ_f)`.
    pub fn face_sum(&self, c: &FaceCovectors, g: impl Fn(&Face, Vec2) -> f64) -> f64 {
        let sx: f64 = self.x_faces.iter().zip(&c.x).map(|(f, xi)| f.coef * g(f, *xi)).sum();
        let sy: f64 = self.y_faces.iter().zip(&c.y).map(|(f, xi)| f.coef * g(f, *xi)).sum();
        sx + sy
    }

    pub fn x_faces(&self) -> &[Face] {
        &self.x_faces
    }

    pub fn y_faces(&self) -> &[Face] {
        &self.y_faces
    }

    /// Face midpoint of x-face `k` (`family = 0`) or y-face `k` (`family = 1`).
    pub fn face_point(&self, family: usize, k: usize) -> Vec2 {
        let p = self.node(k);
        if family == 0 {
            p + Vec2::new(0.5 * self.h, 0.0)
        } else {
            p + Vec2::new(0.0, 0.5 * self.h)
        }
    }

    /// Newton linearization at `u`; independent of `u` for Riemannian structures.
    pub fn tangent_operator(&self, u: &ScalarField) -> TangentOperator {
        if self.structure.kind == crate::geometry::Kind::Riemannian {
            return self.alpha_operator();
        }
        let c = self.covectors(&u.values);
        let mx = self.x_faces.iter().zip(&c.x).map(|(f, xi)| f.coef * f.local.hessian_regularized(*xi, TINY_COVECTOR)).collect();
        let my = self.y_faces.iter().zip(&c.y).map(|(f, xi)| f.coef * f.local.hessian_regularized(*xi, TINY_COVECTOR)).collect();
        TangentOperator { n: self.n, h: self.h, mx, my }
    }

    /// The operator of the Riemannian part `α` (with this grid's measure).
    pub fn alpha_operator(&self) -> TangentOperator {
        let mx = self.x_faces.iter().map(|f| f.coef * f.local.a_inv).collect();
        let my = self.y_faces.iter().map(|f| f.coef * f.local.a_inv).collect();
        TangentOperator { n: self.n, h: self.h, mx, my }
    }

    /// Bilinear hat weights on the four surrounding nodes.
    pub fn make_delta(&self, center: Vec2) -> DiscreteDelta {
        let c = crate::geometry::reduce(center);
        let s = c / self.h;
        let (i0, j0) = (s.x.floor(), s.y.floor());
        let (fx, fy) = (s.x - i0, s.y - j0);
        let mut weights = Vec::with_capacity(4);
        for (di, wx) in [(0isize, 1.0 - fx), (1, fx)] {
            for (dj, wy) in [(0isize, 1.0 - fy), (1, fy)] {
                let w = wx * wy;
                if w != 0.0 {
                    weights.push((self.idx(i0 as isize + di, j0 as isize + dj), w));
                }
            }
        }
        DiscreteDelta { center, weights }
    }

    /// Band-limited Gaussian-tapered delta: `ρ̂(k) = exp(−½(2π s h |k|)²)` with
    /// Nyquist rows removed, placed at `center` by a spectral phase. Smooth in
    /// `center` and exactly translation-equivariant.
    pub fn smooth_delta_spectrum(&self, center: Vec2) -> Vec<Complex64> {
        self.tapered_delta_spectrum(center, DELTA_TAPER)
    }

    /// Multipliers `exp(−½(2π s h |k|)²)` of a Gaussian taper of width `s h`, Nyquist removed.
    pub fn taper_symbol(&self, taper: f64) -> Vec<f64> {
        self.tapered_delta_spectrum(Vec2::zeros(), taper).iter().map(|c| c.re).collect()
    }

    pub fn tapered_delta_spectrum(&self, center: Vec2, taper: f64) -> Vec<Complex64> {
        let n = self.n;
        let sig = 2.0 * PI * taper * self.h;
        let mut spec = vec![Complex64::new(0.0, 0.0); n * n];
        for ky in 0..n {
            if ky == n / 2 {
                continue;
            }
            let fy = signed_freq(ky, n);
            for kx in 0..n {
                if kx == n / 2 {
                    continue;
                }
                let fx = signed_freq(kx, n);
                let amp = (-0.5 * sig * sig * (fx * fx + fy * fy)).exp();
                let phase = -2.0 * PI * (fx * center.x + fy * center.y);
                spec[ky * n + kx] = Complex64::from_polar(amp, phase);
            }
        }
        spec
    }

    pub fn make_smooth_delta(&self, center: Vec2) -> DiscreteDelta {
        self.make_tapered_delta(center, DELTA_TAPER)
    }

    pub fn make_tapered_delta(&self, center: Vec2, taper: f64) -> DiscreteDelta {
        let scale = 1.0 / (self.n * self.n) as f64;
        let masses = self.fft.values(&self.tapered_delta_spectrum(center, taper));
        DiscreteDelta { center, weights: masses.into_iter().map(|m| m * scale).enumerate().collect() }
    }

    /// Right-hand side `δ_y / w − 1/Vol` of the Green problem.
    pub fn green_rhs(&self, delta: &DiscreteDelta) -> ScalarField {
        let mut values = vec![-1.0 / self.vol; self.n * self.n];
        for &(k, m) in &delta.weights {
            values[k] += m / self.weights[k];
        }
        ScalarField { n: self.n, values }
    }
}

fn dt_apply(n: usize, h: f64, fx: &[Vec2], fy: &[Vec2]) -> Vec<f64> {
    let ni = n as isize;
    let idx = |i: isize, j: isize| (j.rem_euclid(ni) * ni + i.rem_euclid(ni)) as usize;
    let inv_h = 1.0 / h;
    let mut out = vec![0.0; n * n];
    for q in 0..ni {
        for p in 0..ni {
            let mut acc = 0.0;
            for (m, w) in (-1..=1).zip(FACE_WEIGHTS) {
                // normal parts: node (p,q) is the "+1" end of face p-1 and the "0" end of face p
                acc += w * (fx[idx(p - 1, q - m)].x - fx[idx(p, q - m)].x);
                acc += w * (fy[idx(p - m, q - 1)].y - fy[idx(p - m, q)].y);
            }
            acc *= inv_h;
            let mut t = 0.0;
            for i in [p - 1, p] {
                t += fx[idx(i, q - 1)].y - fx[idx(i, q + 1)].y;
            }
            for j in [q - 1, q] {
                t += fy[idx(p - 1, j)].x - fy[idx(p + 1, j)].x;
            }
            out[idx(p, q)] = acc + 0.25 * t * inv_h;
        }
    }
    out
}

impl TangentOperator {
    /// Reference operator with every face matrix replaced by its family average.
    pub fn averaged(&self) -> TangentOperator {
        let avg = |v: &[Mat2]| v.iter().fold(Mat2::zeros(), |a, m| a + m) / v.len() as f64;
        let (ax, ay) = (avg(&self.mx), avg(&self.my));
        TangentOperator { n: self.n, h: self.h, mx: vec![ax; self.mx.len()], my: vec![ay; self.my.len()] }
    }

    /// `K v`.
    pub fn apply(&self, v: &[f64], grid: &TorusGrid) -> Vec<f64> {
        let c = grid.covectors(v);
        let fx: Vec<Vec2> = self.mx.iter().zip(&c.x).map(|(m, xi)| m * xi).collect();
        let fy: Vec<Vec2> = self.my.iter().zip(&c.y).map(|(m, xi)| m * xi).collect();
        dt_apply(self.n, self.h, &fx, &fy)
    }

    /// `W⁻¹ K v`, the action as a field operator.
    pub fn apply_field(&self, v: &ScalarField, grid: &TorusGrid) -> ScalarField {
        let k = self.apply(&v.values, grid);
        ScalarField { n: self.n, values: k.iter().zip(grid.weights()).map(|(a, w)| a / w).collect() }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
