//! Periodic bicubic (Catmull–Rom) interpolation: C¹, reproduces nodal values
//! and fields that are quadratic on the 4×4 neighbourhood.

use crate::field::ScalarField;
use crate::geometry::Vec2;

fn weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let t2 = t * t;
    let t3 = t2 * t;
    let w = [
        0.5 * (-t3 + 2.0 * t2 - t),
        0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
        0.5 * (-3.0 * t3 + 4.0 * t2 + t),
        0.5 * (t3 - t2),
    ];
    let dw = [
        0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
        0.5 * (9.0 * t2 - 10.0 * t),
        0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
        0.5 * (3.0 * t2 - 2.0 * t),
    ];
    (w, dw)
}

/// Value and gradient at `x`.
pub fn bicubic(field: &ScalarField, x: Vec2) -> (f64, Vec2) {
    let n = field.n;
    let h = 1.0 / n as f64;
    let sx = x.x.rem_euclid(1.0) / h;
    let sy = x.y.rem_euclid(1.0) / h;
    let (i0, j0) = (sx.floor(), sy.floor());
    let (wx, dwx) = weights(sx - i0);
    let (wy, dwy) = weights(sy - j0);
    let ni = n as isize;
    let mut v = 0.0;
    let mut gx = 0.0;
    let mut gy = 0.0;
    for (b, (wyb, dwyb)) in wy.iter().zip(&dwy).enumerate() {
        let j = (j0 as isize + b as isize - 1).rem_euclid(ni) as usize;
        for (a, (wxa, dwxa)) in wx.iter().zip(&dwx).enumerate() {
            let i = (i0 as isize + a as isize - 1).rem_euclid(ni) as usize;
            let u = field.values[j * n + i];
            v += wxa * wyb * u;
            gx += dwxa * wyb * u;
            gy += wxa * dwyb * u;
        }
    }
    (v, Vec2::new(gx / h, gy / h))
}

pub fn interpolate(field: &ScalarField, x: Vec2) -> f64 {
    bicubic(field, x).0
}

pub fn interpolate_gradient(field: &ScalarField, x: Vec2) -> Vec2 {
    bicubic(field, x).1
}
