//! Mean-zero Green kernels and their regular parts.
//!
//! `G(·, y)` solves `−Δ_{F,μ} G = δ_y − 1/Vol_F` with a band-limited Gaussian
//! source of width `s h / √2`, and the solution is smoothed by the same
//! Gaussian. Kernels therefore depend smoothly on `y`, the total smoothing is
//! `s h` as for a single taper, and for Riemannian structures the discrete
//! kernel `R K⁺ R` is symmetric by construction. Values and gradients off the
//! grid come from the trigonometric interpolant. The regular part
//! `H(y) = lim G(x, y) + log d_F(y, x) / 2π` is extracted from exact ring
//! averages of the interpolant at radii `{4, 6, 8, 12, 16} h`.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use parking_lot::Mutex;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{ScalarField, TorusGrid, DELTA_TAPER};
use crate::geometry::{reduce, wrap, Kind, Vec2};
use crate::interp;
use crate::solver::{solve_mean_zero_with_stats, SolveStats};
use crate::spectral;

/// Ring radii for regular-part extraction, in grid spacings.
pub const RING_MULTIPLES: [f64; 5] = [4.0, 6.0, 8.0, 12.0, 16.0];
/// Angular samples for the average of `log F(y, e_θ)`.
pub const LOG_SAMPLES: usize = 256;
/// Minimum evaluation distance from a source, in grid spacings.
pub const CORE_MULTIPLE: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Spectral,
    Bicubic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreenOptions {
    /// Reuse one solve for every source on constant-coefficient Riemannian structures.
    pub fast_path: bool,
    pub interpolation: Interpolation,
}

impl Default for GreenOptions {
    fn default() -> Self {
        GreenOptions { fast_path: true, interpolation: Interpolation::Spectral }
    }
}

/// One solved kernel `G(·, y)`.
#[derive(Debug, Clone)]
pub struct GreenField {
    pub source: Vec2,
    pub values: ScalarField,
    pub coeffs: Vec<Complex64>,
    pub stats: SolveStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitDiagnostics {
    pub radii: Vec<f64>,
    pub samples: Vec<f64>,
    pub linear: f64,
    pub quadratic: f64,
    pub residual: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegularPart {
    pub at: Vec2,
    pub value: f64,
    pub gradient: Vec2,
    pub diagnostics: FitDiagnostics,
}

/// Solved kernels for a list of sources.
#[derive(Debug, Clone)]
pub struct GreenKernel {
    pub sources: Vec<Vec2>,
    pub fields: Vec<Arc<GreenField>>,
}

/// Solves and caches Green fields on one grid.
pub struct GreenSolver {
    grid: Arc<TorusGrid>,
    options: GreenOptions,
    cache: Mutex<HashMap<(i64, i64), Arc<GreenField>>>,
    rings: OnceLock<Vec<Vec<f64>>>,
}

fn half_taper() -> f64 {
    DELTA_TAPER / std::f64::consts::SQRT_2
}

fn key(y: Vec2) -> (i64, i64) {
    let y = reduce(y);
    let k = |v: f64| {
        let r = (v * 1e12).round() as i64;
        r.rem_euclid(1_000_000_000_000)
    };
    (k(y.x), k(y.y))
}

/// Fourth-order central difference from samples at `±s`, `±2s`.
pub fn fd4(p1: f64, m1: f64, p2: f64, m2: f64, s: f64) -> f64 {
    (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * s)
}

impl GreenSolver {
    pub fn new(grid: Arc<TorusGrid>) -> Self {
        Self::with_options(grid, GreenOptions::default())
    }

    pub fn with_options(grid: Arc<TorusGrid>, options: GreenOptions) -> Self {
        GreenSolver { grid, options, cache: Mutex::new(HashMap::new()), rings: OnceLock::new() }
    }

    pub fn grid(&self) -> &Arc<TorusGrid> {
        &self.grid
    }

    pub fn options(&self) -> GreenOptions {
        self.options
    }

    /// Source-displacement step used for derivatives in the source position.
    pub fn source_step(&self) -> f64 {
        2.0 * self.grid.h()
    }

    pub fn cached_count(&self) -> usize {
        self.cache.lock().len()
    }

    /// Drops cached kernels except the origin kernel the fast path shifts.
    pub fn clear_cache(&self) {
        let origin = key(Vec2::zeros());
        self.cache.lock().retain(|k, _| *k == origin);
    }

    fn uses_shift(&self) -> bool {
        let s = self.grid.structure();
        self.options.fast_path && s.kind == Kind::Riemannian && s.is_constant_coefficient()
    }

    /// Solves with a half-width tapered source and applies the matching half
    /// taper to the solution.
    fn smoothed_solve(&self, rhs: &ScalarField) -> Result<(ScalarField, Vec<Complex64>, SolveStats)> {
        let grid = &self.grid;
        let (u, stats) = solve_mean_zero_with_stats(grid, rhs)?;
        let mut coeffs = grid.fft().coefficients(&u.values);
        coeffs.iter_mut().zip(grid.taper_symbol(half_taper())).for_each(|(c, t)| *c *= t);
        let mut values = ScalarField { n: grid.n(), values: grid.fft().values(&coeffs) };
        let mean = grid.mean(&values);
        values.values.iter_mut().for_each(|v| *v -= mean);
        coeffs[0] -= mean;
        Ok((values, coeffs, stats))
    }

    fn solve_direct(&self, y: Vec2) -> Result<GreenField> {
        let rhs = self.grid.green_rhs(&self.grid.make_tapered_delta(y, half_taper()));
        let (values, coeffs, stats) = self.smoothed_solve(&rhs)?;
        Ok(GreenField { source: y, values, coeffs, stats })
    }

    /// One solve of `−Δ u = Σ d_k (δ_{y_k} − 1/Vol)` for weighted sources,
    /// regularized like the single-source kernels. Not cached.
    pub fn solve_combination(&self, sources: &[(Vec2, f64)]) -> Result<GreenField> {
        let n = self.grid.n();
        let mut rhs = ScalarField::zeros(n);
        for &(y, d) in sources {
            let r = self.grid.green_rhs(&self.grid.make_tapered_delta(y, half_taper()));
            rhs.values.iter_mut().zip(&r.values).for_each(|(a, b)| *a += d * b);
        }
        let (values, coeffs, stats) = self.smoothed_solve(&rhs)?;
        let source = sources.first().map(|s| s.0).unwrap_or_else(Vec2::zeros);
        Ok(GreenField { source, values, coeffs, stats })
    }

    fn solve_one(&self, y: Vec2) -> Result<GreenField> {
        if !self.uses_shift() || key(y) == key(Vec2::zeros()) {
            return self.solve_direct(y);
        }
        let base = self.field(Vec2::zeros())?;
        let n = self.grid.n();
        let coeffs = spectral::shift(&base.coeffs, n, reduce(y));
        let mut values = ScalarField { n, values: self.grid.fft().values(&coeffs) };
        self.grid.project_mean_zero(&mut values);
        Ok(GreenField { source: y, values, coeffs, stats: base.stats })
    }

    /// Kernel with source `y` (cached).
    pub fn field(&self, y: Vec2) -> Result<Arc<GreenField>> {
        let k = key(y);
        if let Some(f) = self.cache.lock().get(&k) {
            return Ok(f.clone());
        }
        let f = Arc::new(self.solve_one(y)?);
        Ok(self.cache.lock().entry(k).or_insert(f).clone())
    }

    /// Kernels for several sources, solving missing ones in parallel.
    pub fn fields(&self, ys: &[Vec2]) -> Result<Vec<Arc<GreenField>>> {
        if self.uses_shift() {
            self.field(Vec2::zeros())?;
        }
        let missing: Vec<(usize, Vec2)> = {
            let cache = self.cache.lock();
            let mut seen = std::collections::HashSet::new();
            ys.iter()
                .enumerate()
                .filter(|(_, y)| !cache.contains_key(&key(**y)) && seen.insert(key(**y)))
                .map(|(i, y)| (i, *y))
                .collect()
        };
        let solved: Vec<Result<(usize, GreenField)>> = missing
            .par_iter()
            .map(|&(i, y)| {
                self.solve_one(y)
                    .map(|f| (i, f))
                    .map_err(|e| Error::SourceSolve { index: i, cause: Box::new(e) })
            })
            .collect();
        {
            let mut cache = self.cache.lock();
            for r in solved {
                let (_, f) = r?;
                cache.entry(key(f.source)).or_insert_with(|| Arc::new(f));
            }
        }
        let cache = self.cache.lock();
        Ok(ys.iter().map(|y| cache[&key(*y)].clone()).collect())
    }

    pub fn solve_green(&self, sources: &[Vec2]) -> Result<GreenKernel> {
        Ok(GreenKernel { sources: sources.to_vec(), fields: self.fields(sources)? })
    }

    pub fn ring_radii(&self) -> Vec<f64> {
        RING_MULTIPLES.iter().map(|m| m * self.grid.h()).collect()
    }

    fn ring_tables(&self) -> &Vec<Vec<f64>> {
        self.rings.get_or_init(|| {
            let n = self.grid.n();
            self.ring_radii().iter().map(|&r| spectral::ring_weights(n, r)).collect()
        })
    }

    /// `⟨log F(y, e_θ)⟩_θ`.
    pub fn mean_log_norm(&self, y: Vec2) -> f64 {
        let l = self.grid.structure().local(y);
        (0..LOG_SAMPLES)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / LOG_SAMPLES as f64;
                l.primal(Vec2::new(t.cos(), t.sin())).ln()
            })
            .sum::<f64>()
            / LOG_SAMPLES as f64
    }

    /// Exact ring averages of `G(·, y)` at the extraction radii.
    pub fn ring_averages(&self, field: &GreenField) -> Vec<f64> {
        let n = self.grid.n();
        self.ring_tables().iter().map(|w| spectral::ring_average(&field.coeffs, n, field.source, w)).collect()
    }

    fn check_ring_room(&self) -> Result<()> {
        let rmax = RING_MULTIPLES[RING_MULTIPLES.len() - 1] * self.grid.h();
        if rmax > 0.5 {
            return Err(Error::SeparationTooSmall { i: 0, j: 0, separation: 0.5, limit: rmax });
        }
        Ok(())
    }

    /// Regular-part value and fit diagnostics for the kernel with source `y`.
    pub fn regular_value(&self, y: Vec2) -> Result<(f64, FitDiagnostics)> {
        self.check_ring_room()?;
        let field = self.field(y)?;
        Ok(self.fit_regular(&field))
    }

    fn fit_regular(&self, field: &GreenField) -> (f64, FitDiagnostics) {
        let radii = self.ring_radii();
        let lbar = self.mean_log_norm(field.source);
        let samples: Vec<f64> = self
            .ring_averages(field)
            .iter()
            .zip(&radii)
            .map(|(g, r)| g + (r.ln() + lbar) / (2.0 * PI))
            .collect();
        let coef = least_squares(&radii, &samples, |r| [1.0, r, r * r]);
        let residual = radii
            .iter()
            .zip(&samples)
            .map(|(r, s)| (coef[0] + coef[1] * r + coef[2] * r * r - s).abs())
            .fold(0.0, f64::max);
        let flagged = !(residual <= 1e-3 * coef[0].abs() + 1e-6);
        (coef[0], FitDiagnostics { radii, samples, linear: coef[1], quadratic: coef[2], residual, flagged })
    }

    /// Source stencil `y ± s e_k, y ± 2s e_k` with `s = 2h`, ordered
    /// `[+s, −s, +2s, −2s]` per axis.
    pub fn stencil(&self, y: Vec2) -> [[Vec2; 4]; 2] {
        let s = self.source_step();
        let mut out = [[Vec2::zeros(); 4]; 2];
        for k in 0..2 {
            let mut e = Vec2::zeros();
            e[k] = s;
            out[k] = [y + e, y - e, y + 2.0 * e, y - 2.0 * e];
        }
        out
    }

    /// All eight stencil sources for `y`, axis-major.
    pub fn stencil_points(&self, y: Vec2) -> Vec<Vec2> {
        self.stencil(y).iter().flatten().copied().collect()
    }

    /// Gradient of `x ↦ H(x, x)` by fourth-order differences over the source stencil.
    pub fn regular_gradient(&self, y: Vec2) -> Result<Vec2> {
        self.check_ring_room()?;
        let pts = self.stencil_points(y);
        let fields = self.fields(&pts)?;
        let h: Vec<f64> = fields.iter().map(|f| self.fit_regular(f).0).collect();
        let s = self.source_step();
        Ok(Vec2::new(fd4(h[0], h[1], h[2], h[3], s), fd4(h[4], h[5], h[6], h[7], s)))
    }

    pub fn extract_regular_part_at(&self, y: Vec2) -> Result<RegularPart> {
        let (value, diagnostics) = self.regular_value(y)?;
        if diagnostics.flagged {
            return Err(Error::FitDiverged { residual: diagnostics.residual, limit: 1e-3 * value.abs() + 1e-6 });
        }
        let gradient = self.regular_gradient(y)?;
        Ok(RegularPart { at: y, value, gradient, diagnostics })
    }

    /// Fits `⟨G⟩(r) = A + B log r + C r²` and returns `λ = −2πB`.
    pub fn log_coefficient(&self, y: Vec2) -> Result<f64> {
        self.check_ring_room()?;
        let field = self.field(y)?;
        let radii = self.ring_radii();
        let avg = self.ring_averages(&field);
        let c = least_squares(&radii, &avg, |r| [1.0, r.ln(), r * r]);
        Ok(-2.0 * PI * c[1])
    }

    fn core_limit(&self) -> f64 {
        CORE_MULTIPLE * self.grid.h()
    }

    /// `G(x, y)` interpolated from the stored field.
    pub fn value(&self, field: &GreenField, x: Vec2) -> f64 {
        match self.options.interpolation {
            Interpolation::Spectral => spectral::eval(&field.coeffs, self.grid.n(), x),
            Interpolation::Bicubic => interp::bicubic(&field.values, x).0,
        }
    }

    /// `(G, ∂_x G)` at `x`.
    pub fn value_and_gradient(&self, field: &GreenField, x: Vec2) -> (f64, Vec2) {
        match self.options.interpolation {
            Interpolation::Spectral => spectral::eval_with_gradient(&field.coeffs, self.grid.n(), x),
            Interpolation::Bicubic => interp::bicubic(&field.values, x),
        }
    }

    /// `∂_x G(x, y)` with the core-distance check.
    pub fn kernel_gradient(&self, field: &GreenField, x: Vec2) -> Result<Vec2> {
        let sep = wrap(x - field.source).norm();
        if sep < self.core_limit() {
            return Err(Error::TooCloseToCore { separation: sep, limit: self.core_limit() });
        }
        Ok(self.value_and_gradient(field, x).1)
    }
}

impl GreenKernel {
    pub fn value(&self, solver: &GreenSolver, j: usize, x: Vec2) -> f64 {
        solver.value(&self.fields[j], x)
    }

    pub fn kernel_gradient(&self, solver: &GreenSolver, j: usize, x: Vec2) -> Result<Vec2> {
        solver.kernel_gradient(&self.fields[j], x)
    }

    pub fn extract_regular_part(&self, solver: &GreenSolver, at: usize) -> Result<RegularPart> {
        solver.extract_regular_part_at(self.sources[at])
    }
}

/// Least squares for three basis functions.
pub fn least_squares(xs: &[f64], ys: &[f64], basis: impl Fn(f64) -> [f64; 3]) -> [f64; 3] {
    let mut ata = Matrix3::zeros();
    let mut atb = Vector3::zeros();
    for (x, y) in xs.iter().zip(ys) {
        let b = Vector3::from(basis(*x));
        ata += b * b.transpose();
        atb += b * *y;
    }
    let sol = ata.lu().solve(&atb).unwrap_or_else(Vector3::zeros);
    [sol[0], sol[1], sol[2]]
}
