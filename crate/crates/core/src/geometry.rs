//! Pointwise Finsler algebra on the flat torus.
//!
//! A structure is `F(x, v) = sqrt(vᵀ a(x) v) + b(x)·v`. With `b ≡ 0` it is
//! Riemannian. Covector quantities (dual norm, Legendre map, response tensor)
//! use closed forms; the Randers dual is
//! `F*(ξ) = (sqrt((1-B)|ξ|² + c²) - c) / (1-B)` with `B = |b|²`, `c = ⟨b, ξ⟩`,
//! all inner products taken with `a⁻¹`.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Largest admissible `|b|_{a⁻¹}`.
pub const BETA_MAX: f64 = 0.95;
/// Largest separation accepted by [`FinslerStructure::local_distance`].
pub const LOCAL_DISTANCE_LIMIT: f64 = 0.25;
/// Angular samples used for indicatrix areas.
pub const AREA_SAMPLES: usize = 256;

/// Wraps a displacement to its minimal periodic representative in `[-½, ½)`.
pub fn wrap(d: Vec2) -> Vec2 {
    Vec2::new(d.x - (d.x + 0.5).floor(), d.y - (d.y + 0.5).floor())
}

/// Reduces a point to the fundamental cell `[0, 1)²`.
pub fn reduce(x: Vec2) -> Vec2 {
    Vec2::new(x.x.rem_euclid(1.0), x.y.rem_euclid(1.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    Riemannian,
    Randers,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasureKind {
    BusemannHausdorff,
    HolmesThompson,
}

/// Riemannian part `a_ij(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AlphaField {
    Identity,
    Diagonal { l1: f64, l2: f64 },
    Constant { a11: f64, a12: f64, a22: f64 },
    /// `a = diag(1 + amp·cos 2πx², 1 + amp·cos 2πx¹)`, a smooth periodic
    /// variable-coefficient test field.
    Modulated { amp: f64 },
}

impl AlphaField {
    pub fn at(&self, x: Vec2) -> Mat2 {
        match *self {
            AlphaField::Identity => Mat2::identity(),
            AlphaField::Diagonal { l1, l2 } => Mat2::new(l1, 0.0, 0.0, l2),
            AlphaField::Constant { a11, a12, a22 } => Mat2::new(a11, a12, a12, a22),
            AlphaField::Modulated { amp } => Mat2::new(
                1.0 + amp * (2.0 * PI * x.y).cos(),
                0.0,
                0.0,
                1.0 + amp * (2.0 * PI * x.x).cos(),
            ),
        }
    }

    pub fn is_constant(&self) -> bool {
        !matches!(self, AlphaField::Modulated { .. })
    }
}

/// One-form `b_i(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BetaField {
    Zero,
    Constant { b1: f64, b2: f64 },
    /// Periodic shear `b = (0, κ sin(2πx¹)/2π)`; matches `(0, κx¹)` to first
    /// order at `x¹ = 0` and has `∂₁b₂ = κ cos 2πx¹`.
    Shear { kappa: f64 },
    /// The covering-space field `b = (0, κx¹)`; not periodic, pointwise use only.
    LinearShear { kappa: f64 },
}

impl BetaField {
    pub fn at(&self, x: Vec2) -> Vec2 {
        match *self {
            BetaField::Zero => Vec2::zeros(),
            BetaField::Constant { b1, b2 } => Vec2::new(b1, b2),
            BetaField::Shear { kappa } => Vec2::new(0.0, kappa * (2.0 * PI * x.x).sin() / (2.0 * PI)),
            BetaField::LinearShear { kappa } => Vec2::new(0.0, kappa * x.x),
        }
    }

    /// Analytic Jacobian `J_ij = ∂_j b_i`.
    pub fn jacobian(&self, x: Vec2) -> Mat2 {
        match *self {
            BetaField::Zero | BetaField::Constant { .. } => Mat2::zeros(),
            BetaField::Shear { kappa } => Mat2::new(0.0, 0.0, kappa * (2.0 * PI * x.x).cos(), 0.0),
            BetaField::LinearShear { kappa } => Mat2::new(0.0, 0.0, kappa, 0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            BetaField::Zero => true,
            BetaField::Constant { b1, b2 } => b1 == 0.0 && b2 == 0.0,
            BetaField::Shear { kappa } | BetaField::LinearShear { kappa } => kappa == 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, BetaField::Zero | BetaField::Constant { .. })
    }

    pub fn is_periodic(&self) -> bool {
        !matches!(self, BetaField::LinearShear { kappa } if *kappa != 0.0)
    }

    /// Same field with its amplitude multiplied by `s`.
    pub fn scaled(&self, s: f64) -> BetaField {
        match *self {
            BetaField::Zero => BetaField::Zero,
            BetaField::Constant { b1, b2 } => BetaField::Constant { b1: s * b1, b2: s * b2 },
            BetaField::Shear { kappa } => BetaField::Shear { kappa: s * kappa },
            BetaField::LinearShear { kappa } => BetaField::LinearShear { kappa: s * kappa },
        }
    }
}

/// Frozen-coefficient norm data at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalNorm {
    pub a: Mat2,
    pub a_inv: Mat2,
    pub b: Vec2,
    pub riemannian: bool,
}

/// Everything needed to differentiate the Randers dual norm at `ξ ≠ 0`.
struct DualParts {
    one_minus_b2: f64,
    c: f64,
    s: f64,
    b_sharp: Vec2,
    g: Vec2,
}

impl LocalNorm {
    pub fn new(a: Mat2, b: Vec2, riemannian: bool) -> Self {
        let a_inv = a.try_inverse().expect("positive-definite tensor is invertible");
        LocalNorm { a, a_inv, b, riemannian }
    }

    /// `|b|_{a⁻¹}`.
    pub fn beta_norm(&self) -> f64 {
        (self.b.dot(&(self.a_inv * self.b))).max(0.0).sqrt()
    }

    pub fn alpha_norm(&self, v: Vec2) -> f64 {
        v.dot(&(self.a * v)).max(0.0).sqrt()
    }

    pub fn alpha_dual_norm(&self, xi: Vec2) -> f64 {
        xi.dot(&(self.a_inv * xi)).max(0.0).sqrt()
    }

    pub fn primal(&self, v: Vec2) -> f64 {
        self.alpha_norm(v) + self.b.dot(&v)
    }

    fn parts(&self, xi: Vec2) -> DualParts {
        let b_sharp = self.a_inv * self.b;
        let one_minus_b2 = 1.0 - self.b.dot(&b_sharp);
        let c = b_sharp.dot(&xi);
        let q = xi.dot(&(self.a_inv * xi));
        let s = (one_minus_b2 * q + c * c).max(0.0).sqrt();
        let g = one_minus_b2 * (self.a_inv * xi) + c * b_sharp;
        DualParts { one_minus_b2, c, s, b_sharp, g }
    }

    pub fn dual(&self, xi: Vec2) -> f64 {
        if self.riemannian {
            return self.alpha_dual_norm(xi);
        }
        let p = self.parts(xi);
        ((p.s - p.c) / p.one_minus_b2).max(0.0)
    }

    /// `∂_ξ ½F*²`; maps zero to zero.
    pub fn legendre(&self, xi: Vec2) -> Vec2 {
        if self.riemannian {
            return self.a_inv * xi;
        }
        let p = self.parts(xi);
        if p.s == 0.0 {
            return Vec2::zeros();
        }
        let fstar = (p.s - p.c) / p.one_minus_b2;
        let grad = (p.g / p.s - p.b_sharp) / p.one_minus_b2;
        fstar * grad
    }

    /// `∂²_ξ ½F*²`.
    pub fn hessian(&self, xi: Vec2) -> Result<Mat2> {
        if self.riemannian {
            return Ok(self.a_inv);
        }
        let p = self.parts(xi);
        if p.s == 0.0 || xi.norm() == 0.0 {
            return Err(Error::SingularCovector);
        }
        Ok(self.randers_hessian(&p))
    }

    fn randers_hessian(&self, p: &DualParts) -> Mat2 {
        let fstar = (p.s - p.c) / p.one_minus_b2;
        let grad = (p.g / p.s - p.b_sharp) / p.one_minus_b2;
        let q = p.one_minus_b2 * self.a_inv + p.b_sharp * p.b_sharp.transpose();
        let hess = (q / p.s - p.g * p.g.transpose() / (p.s * p.s * p.s)) / p.one_minus_b2;
        let t = grad * grad.transpose() + fstar * hess;
        0.5 * (t + t.transpose())
    }

    /// Hessian with the α fallback at faces where `|ξ| < tiny`.
    pub fn hessian_regularized(&self, xi: Vec2, tiny: f64) -> Mat2 {
        if self.riemannian || xi.norm() < tiny {
            return self.a_inv;
        }
        self.randers_hessian(&self.parts(xi))
    }

    /// Exact first-order symmetric correction: `T_F = a⁻¹ − S_β + O(|b|²)`.
    pub fn s_beta(&self, xi: Vec2) -> Result<Mat2> {
        let n = self.alpha_dual_norm(xi);
        if n == 0.0 {
            return Err(Error::SingularCovector);
        }
        let hat = self.a_inv * xi / n;
        let bs = self.a_inv * self.b;
        let bh = self.b.dot(&hat);
        Ok(bs * hat.transpose() + hat * bs.transpose() + bh * (self.a_inv - hat * hat.transpose()))
    }

    /// The two-term correction with the `1/|ξ|` prefactor, kept for comparison.
    pub fn s_beta_printed(&self, xi: Vec2) -> Result<Mat2> {
        let n = self.alpha_dual_norm(xi);
        if n == 0.0 {
            return Err(Error::SingularCovector);
        }
        let hat = self.a_inv * xi / n;
        let bs = self.a_inv * self.b;
        Ok((bs * hat.transpose() + hat * bs.transpose()) / n)
    }

    /// Area of the indicatrix `{v : F(v) ≤ 1}`.
    pub fn indicatrix_area(&self) -> f64 {
        polar_area(|e| 1.0 / self.primal(e))
    }

    /// Area of the dual unit ball `{ξ : F*(ξ) ≤ 1}`.
    pub fn dual_indicatrix_area(&self) -> f64 {
        polar_area(|e| 1.0 / self.dual(e))
    }

    pub fn density(&self, measure: MeasureKind) -> f64 {
        match measure {
            MeasureKind::BusemannHausdorff => PI / self.indicatrix_area(),
            MeasureKind::HolmesThompson => self.dual_indicatrix_area() / PI,
        }
    }
}

/// `½∫ r(θ)² dθ` by the periodic trapezoid rule.
fn polar_area<R: Fn(Vec2) -> f64>(radius: R) -> f64 {
    let m = AREA_SAMPLES;
    let dt = 2.0 * PI / m as f64;
    (0..m)
        .map(|k| {
            let t = k as f64 * dt;
            let r = radius(Vec2::new(t.cos(), t.sin()));
            0.5 * r * r
        })
        .sum::<f64>()
        * dt
}

/// All response tensors at `(x, ξ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResponseTensors {
    pub t_f: Mat2,
    pub s_beta: Mat2,
    pub a_beta: Mat2,
    pub m_f: Mat2,
    pub c_f: Mat2,
    pub basepoint: Vec2,
    pub base_covector: Vec2,
}

/// First-order Randers data at `(x, ξ)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandersFirstOrder {
    pub s_beta: Mat2,
    pub a_beta: Mat2,
    /// `a⁻¹ − S_β`
    pub t_first_order: Mat2,
    /// `a⁻¹ − S_β + A_β`
    pub m_first_order: Mat2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinslerStructure {
    pub kind: Kind,
    pub alpha: AlphaField,
    pub beta: BetaField,
    pub measure: MeasureKind,
}

impl FinslerStructure {
    pub fn new(kind: Kind, alpha: AlphaField, beta: BetaField, measure: MeasureKind) -> Result<Self> {
        let s = FinslerStructure { kind, alpha, beta, measure };
        s.validate()?;
        Ok(s)
    }

    pub fn identity() -> Self {
        FinslerStructure {
            kind: Kind::Riemannian,
            alpha: AlphaField::Identity,
            beta: BetaField::Zero,
            measure: MeasureKind::HolmesThompson,
        }
    }

    pub fn diagonal(l1: f64, l2: f64) -> Result<Self> {
        Self::new(Kind::Riemannian, AlphaField::Diagonal { l1, l2 }, BetaField::Zero, MeasureKind::HolmesThompson)
    }

    pub fn constant_randers(b1: f64, b2: f64) -> Result<Self> {
        Self::new(Kind::Randers, AlphaField::Identity, BetaField::Constant { b1, b2 }, MeasureKind::HolmesThompson)
    }

    pub fn shear_randers(kappa: f64) -> Result<Self> {
        Self::new(Kind::Randers, AlphaField::Identity, BetaField::Shear { kappa }, MeasureKind::HolmesThompson)
    }

    pub fn with_measure(mut self, measure: MeasureKind) -> Self {
        self.measure = measure;
        self
    }

    /// The Riemannian structure `α` underlying this one.
    pub fn alpha_part(&self) -> Self {
        FinslerStructure { kind: Kind::Riemannian, alpha: self.alpha, beta: BetaField::Zero, measure: self.measure }
    }

    pub fn is_constant_coefficient(&self) -> bool {
        self.alpha.is_constant() && self.beta.is_constant()
    }

    pub fn is_periodic(&self) -> bool {
        self.beta.is_periodic()
    }

    /// Checks ellipticity and `|b| ≤ β_max` on a sample lattice. Non-periodic
    /// fields are checked on the fundamental cell only.
    pub fn validate(&self) -> Result<()> {
        if self.kind == Kind::Riemannian && !self.beta.is_zero() {
            return Err(Error::RiemannianWithBeta);
        }
        let m = 32;
        for i in 0..m {
            for j in 0..m {
                let x = Vec2::new(i as f64 / m as f64, j as f64 / m as f64);
                self.check_point(x)?;
            }
        }
        Ok(())
    }

    fn check_point(&self, x: Vec2) -> Result<()> {
        let a = self.alpha.at(x);
        let tr = a.trace();
        let det = a.determinant();
        let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
        let eig = 0.5 * tr - disc;
        if !(eig > 0.0) || (a.m12 - a.m21).abs() > 1e-14 {
            return Err(Error::NotElliptic { x: x.x, y: x.y, eig });
        }
        if self.kind == Kind::Randers {
            let local = LocalNorm::new(a, self.beta.at(x), false);
            let norm = local.beta_norm();
            if !(norm <= BETA_MAX) {
                return Err(Error::NotStronglyConvex { x: x.x, y: x.y, norm });
            }
        }
        Ok(())
    }

    /// Norm data frozen at `x`. Periodic fields are evaluated at `x` reduced to
    /// the fundamental cell; the linear shear is evaluated as given.
    pub fn local(&self, x: Vec2) -> LocalNorm {
        let x = if self.beta.is_periodic() { reduce(x) } else { x };
        LocalNorm::new(self.alpha.at(x), self.beta.at(x), self.kind == Kind::Riemannian)
    }

    fn checked_local(&self, x: Vec2) -> Result<LocalNorm> {
        let l = self.local(x);
        if self.kind == Kind::Randers {
            let norm = l.beta_norm();
            if !(norm < 1.0) {
                return Err(Error::NotStronglyConvex { x: x.x, y: x.y, norm });
            }
        }
        Ok(l)
    }

    pub fn primal_norm(&self, x: Vec2, v: Vec2) -> Result<f64> {
        Ok(self.checked_local(x)?.primal(v))
    }

    pub fn dual_norm(&self, x: Vec2, xi: Vec2) -> Result<f64> {
        Ok(self.checked_local(x)?.dual(xi))
    }

    pub fn legendre_map(&self, x: Vec2, xi: Vec2) -> Result<Vec2> {
        Ok(self.checked_local(x)?.legendre(xi))
    }

    pub fn hessian_tensor(&self, x: Vec2, xi: Vec2) -> Result<Mat2> {
        self.checked_local(x)?.hessian(xi)
    }

    /// Identical to [`hessian_tensor`](Self::hessian_tensor); named for its use as a stiffness.
    pub fn elasticity_tensor(&self, x: Vec2, xi: Vec2) -> Result<Mat2> {
        self.hessian_tensor(x, xi)
    }

    /// `A_β = ½(∇b − ∇bᵀ)` from the analytic Jacobian.
    pub fn a_beta(&self, x: Vec2) -> Mat2 {
        let x = if self.beta.is_periodic() { reduce(x) } else { x };
        let j = self.beta.jacobian(x);
        0.5 * (j - j.transpose())
    }

    /// `A_β` by central differences of `b` with step `step`.
    pub fn a_beta_fd(&self, x: Vec2, step: f64) -> Mat2 {
        let mut j = Mat2::zeros();
        for k in 0..2 {
            let mut e = Vec2::zeros();
            e[k] = step;
            let d = (self.beta.at(x + e) - self.beta.at(x - e)) / (2.0 * step);
            j.set_column(k, &d);
        }
        0.5 * (j - j.transpose())
    }

    pub fn randers_first_order(&self, x: Vec2, xi: Vec2) -> Result<RandersFirstOrder> {
        if self.kind != Kind::Randers {
            return Err(Error::NotRanders);
        }
        let l = self.checked_local(x)?;
        let s_beta = l.s_beta(xi)?;
        let a_beta = self.a_beta(x);
        let t_first_order = l.a_inv - s_beta;
        Ok(RandersFirstOrder { s_beta, a_beta, t_first_order, m_first_order: t_first_order + a_beta })
    }

    pub fn response_tensors(&self, x: Vec2, xi: Vec2) -> Result<ResponseTensors> {
        let l = self.checked_local(x)?;
        let t_f = l.hessian(xi)?;
        let (s_beta, a_beta) = match self.kind {
            Kind::Riemannian => (Mat2::zeros(), Mat2::zeros()),
            Kind::Randers => (l.s_beta(xi)?, self.a_beta(x)),
        };
        Ok(ResponseTensors { t_f, s_beta, a_beta, m_f: t_f + a_beta, c_f: t_f, basepoint: x, base_covector: xi })
    }

    /// `T_F + A_β`.
    pub fn mobility_additive(&self, x: Vec2, xi: Vec2) -> Result<Mat2> {
        Ok(self.hessian_tensor(x, xi)? + self.a_beta(x))
    }

    /// `T_F⁻¹`.
    pub fn mobility_inverse(&self, x: Vec2, xi: Vec2) -> Result<Mat2> {
        let t = self.hessian_tensor(x, xi)?;
        t.try_inverse().ok_or(Error::SingularCovector)
    }

    pub fn measure_density(&self, x: Vec2) -> f64 {
        self.local(x).density(self.measure)
    }

    /// `F(x, y ⊖ x)` with coefficients frozen at `x`.
    pub fn local_distance(&self, x: Vec2, y: Vec2) -> Result<f64> {
        let d = wrap(y - x);
        let len = d.norm();
        if len >= LOCAL_DISTANCE_LIMIT {
            return Err(Error::SeparationTooLarge(len));
        }
        self.primal_norm(x, d)
    }
}
