//! Radial C^∞ bump: 1 on the ball of radius 1/4, 0 outside the unit ball.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, PartialEq)]
pub struct BumpEval {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// `f(t) = exp(−1/t)` for `t > 0`, else 0, with two derivatives.
fn mollifier(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let f = (-1.0 / t).exp();
    let t2 = t * t;
    (f, f / t2, f * (1.0 / (t2 * t2) - 2.0 / (t2 * t)))
}

/// Smooth step `S(t) = f(t) / (f(t) + f(1 − t))` with two derivatives.
pub fn smooth_step(t: f64) -> (f64, f64, f64) {
    if t <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if t >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let (a, da, dda) = mollifier(t);
    let (b, db1, ddb1) = mollifier(1.0 - t);
    let db = -db1;
    let ddb = ddb1;
    let sum = a + b;
    let num = da * b - a * db;
    let s = a / sum;
    let ds = num / (sum * sum);
    let dds = (dda * b - a * ddb) / (sum * sum) - 2.0 * num * (da + db) / (sum * sum * sum);
    (s, ds, dds)
}

/// Radial profile `g(s) = S((1 − s) / (3/4))` with two derivatives.
pub fn radial_profile(s: f64) -> (f64, f64, f64) {
    let (v, d1, d2) = smooth_step((1.0 - s) / 0.75);
    (v, -d1 / 0.75, d2 / (0.75 * 0.75))
}

/// `θ(y) = g(‖y‖)` with gradient and Hessian.
pub fn bump_theta(y: &[f64]) -> BumpEval {
    let d = y.len();
    let s = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (value, g1, g2) = radial_profile(s);
    if g1 == 0.0 && g2 == 0.0 {
        return BumpEval {
            value,
            gradient: DVector::zeros(d),
            hessian: DMatrix::zeros(d, d),
        };
    }
    let unit = DVector::from_column_slice(y) / s;
    let outer = &unit * unit.transpose();
    let hessian = &outer * g2 + (DMatrix::identity(d, d) - &outer) * (g1 / s);
    BumpEval {
        value,
        gradient: unit * g1,
        hessian,
    }
}
