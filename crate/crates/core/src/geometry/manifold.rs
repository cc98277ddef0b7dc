use std::f64::consts::{PI, TAU};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{estimate_reach, GeometryError, PointCloud};

const ARC_TABLE_LEN: usize = 100_000;
const PROJECTION_GRID: usize = 2048;
/// Amplitude of the out-of-plane wobble of the closed curve.
const CURVE_WOBBLE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ManifoldKind {
    #[serde(rename = "circle")]
    Circle2D,
    #[serde(rename = "curve")]
    ClosedCurve3D,
    #[serde(rename = "sphere")]
    Sphere3D,
}

impl ManifoldKind {
    pub const ALL: [ManifoldKind; 3] = [
        ManifoldKind::Circle2D,
        ManifoldKind::ClosedCurve3D,
        ManifoldKind::Sphere3D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ManifoldKind::Circle2D => "circle",
            ManifoldKind::ClosedCurve3D => "curve",
            ManifoldKind::Sphere3D => "sphere",
        }
    }
}

impl fmt::Display for ManifoldKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ManifoldKind {
    type Err = GeometryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "circle" => Ok(ManifoldKind::Circle2D),
            "curve" => Ok(ManifoldKind::ClosedCurve3D),
            "sphere" => Ok(ManifoldKind::Sphere3D),
            other => Err(GeometryError::InvalidManifold(format!(
                "unknown manifold `{other}` (expected circle, curve or sphere)"
            ))),
        }
    }
}

/// One of the three synthetic test manifolds, scaled to lie in the unit ball.
///
/// The closed curve is `t ↦ scale·(cos t, sin t, 0.3 sin 2t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSpec")]
pub struct ManifoldSpec {
    kind: ManifoldKind,
    scale: f64,
}

#[derive(Deserialize)]
struct RawSpec {
    kind: ManifoldKind,
    scale: f64,
}

impl TryFrom<RawSpec> for ManifoldSpec {
    type Error = GeometryError;

    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        ManifoldSpec::new(raw.kind, raw.scale)
    }
}

impl ManifoldSpec {
    pub fn new(kind: ManifoldKind, scale: f64) -> Result<Self, GeometryError> {
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(GeometryError::InvalidManifold(format!(
                "scale must lie in (0, 1], got {scale}"
            )));
        }
        Ok(Self { kind, scale })
    }

    pub fn kind(&self) -> ManifoldKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn intrinsic_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle2D | ManifoldKind::ClosedCurve3D => 1,
            ManifoldKind::Sphere3D => 2,
        }
    }

    pub fn ambient_dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Circle2D => 2,
            ManifoldKind::ClosedCurve3D | ManifoldKind::Sphere3D => 3,
        }
    }

    /// d-dimensional volume: length for curves, area for the sphere.
    pub fn volume(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle2D => TAU * self.scale,
            ManifoldKind::Sphere3D => 4.0 * PI * self.scale * self.scale,
            ManifoldKind::ClosedCurve3D => self.scale * unit_curve().length(),
        }
    }

    /// Reach. Exact for the circle and sphere; for the curve, the smaller of
    /// the minimal curvature radius and a dense discrete Federer estimate.
    pub fn reach(&self) -> f64 {
        match self.kind {
            ManifoldKind::Circle2D | ManifoldKind::Sphere3D => self.scale,
            ManifoldKind::ClosedCurve3D => self.scale * unit_curve().reach,
        }
    }

    pub(crate) fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> PointCloud {
        let n = self.ambient_dim();
        let mut data = Vec::with_capacity(count * n);
        for _ in 0..count {
            match self.kind {
                ManifoldKind::Circle2D => {
                    let t = TAU * rng.random::<f64>();
                    data.extend([self.scale * t.cos(), self.scale * t.sin()]);
                }
                ManifoldKind::Sphere3D => loop {
                    let v: [f64; 3] = [
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    ];
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if norm > 1e-12 {
                        data.extend(v.iter().map(|c| self.scale * c / norm));
                        break;
                    }
                },
                ManifoldKind::ClosedCurve3D => {
                    let t = unit_curve().param_at_fraction(rng.random::<f64>());
                    data.extend(curve_point(t).iter().map(|c| self.scale * c));
                }
            }
        }
        PointCloud::from_flat(n, data).expect("sampled points are finite")
    }

    /// Point and unit tangent at parameter `t` for the one-dimensional
    /// manifolds; `None` for the sphere.
    pub fn parametric(&self, t: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        match self.kind {
            ManifoldKind::Circle2D => Some((
                vec![self.scale * t.cos(), self.scale * t.sin()],
                vec![-t.sin(), t.cos()],
            )),
            ManifoldKind::ClosedCurve3D => {
                let p = curve_point(t);
                let v = curve_velocity(t);
                let speed = norm3(&v);
                Some((
                    p.iter().map(|c| self.scale * c).collect(),
                    v.iter().map(|c| c / speed).collect(),
                ))
            }
            ManifoldKind::Sphere3D => None,
        }
    }

    /// Closest point of the manifold to `x`.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
        if x.len() != self.ambient_dim() {
            return Err(GeometryError::DimensionMismatch {
                index: 0,
                expected: self.ambient_dim(),
                found: x.len(),
            });
        }
        match self.kind {
            ManifoldKind::Circle2D | ManifoldKind::Sphere3D => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm < 1e-12 * self.scale {
                    return Err(GeometryError::ProjectionAmbiguous);
                }
                Ok(x.iter().map(|v| self.scale * v / norm).collect())
            }
            ManifoldKind::ClosedCurve3D => {
                let t = self.curve_parameter(x)?;
                Ok(curve_point(t).iter().map(|c| self.scale * c).collect())
            }
        }
    }

    /// Euclidean distance from `x` to the manifold. Defined everywhere, even
    /// where the closest point is not unique.
    pub fn distance_to(&self, x: &[f64]) -> Result<f64, GeometryError> {
        if x.len() != self.ambient_dim() {
            return Err(GeometryError::DimensionMismatch {
                index: 0,
                expected: self.ambient_dim(),
                found: x.len(),
            });
        }
        Ok(match self.kind {
            ManifoldKind::Circle2D | ManifoldKind::Sphere3D => {
                (x.iter().map(|v| v * v).sum::<f64>().sqrt() - self.scale).abs()
            }
            ManifoldKind::ClosedCurve3D => self.curve_minima(x)[0].1 * self.scale,
        })
    }

    /// Orthonormal n×d tangent frame at the projection of `x`.
    pub fn tangent_basis(&self, x: &[f64]) -> Result<DMatrix<f64>, GeometryError> {
        let p = self.project(x)?;
        Ok(match self.kind {
            ManifoldKind::Circle2D => {
                let r = p[0].hypot(p[1]);
                DMatrix::from_column_slice(2, 1, &[-p[1] / r, p[0] / r])
            }
            ManifoldKind::ClosedCurve3D => {
                let t = self.curve_parameter(x)?;
                let v = curve_velocity(t);
                let s = norm3(&v);
                DMatrix::from_column_slice(3, 1, &[v[0] / s, v[1] / s, v[2] / s])
            }
            ManifoldKind::Sphere3D => {
                let r = norm3(&p);
                let u = [p[0] / r, p[1] / r, p[2] / r];
                // axis least aligned with u, orthogonalized
                let k = (0..3)
                    .min_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()))
                    .unwrap_or(0);
                let mut e = [0.0; 3];
                e[k] = 1.0;
                let dot = u[k];
                let mut t1 = [e[0] - dot * u[0], e[1] - dot * u[1], e[2] - dot * u[2]];
                let n1 = norm3(&t1);
                t1.iter_mut().for_each(|c| *c /= n1);
                let t2 = cross(&u, &t1);
                DMatrix::from_column_slice(3, 2, &[t1[0], t1[1], t1[2], t2[0], t2[1], t2[2]])
            }
        })
    }

    /// Parameter of the closest curve point: coarse grid, then safeguarded
    /// Newton on `(c(t) − x)·c'(t) = 0` around every grid-local minimum.
    fn curve_parameter(&self, x: &[f64]) -> Result<f64, GeometryError> {
        let minima = self.curve_minima(x);
        let (best_t, best_d) = minima[0];
        for &(t, d) in &minima[1..] {
            let gap = (t - best_t).rem_euclid(TAU);
            let gap = gap.min(TAU - gap);
            if gap > 1e-6 && d - best_d <= 1e-12 * best_d.max(1.0) {
                return Err(GeometryError::ProjectionAmbiguous);
            }
        }
        let reach = unit_curve().reach;
        if best_d >= reach {
            return Err(GeometryError::OutsideReach {
                distance: best_d * self.scale,
                reach: reach * self.scale,
            });
        }
        Ok(best_t)
    }

    /// Local minima `(t, distance)` of the distance from `x` to the unit
    /// curve, closest first.
    fn curve_minima(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let q = [x[0] / self.scale, x[1] / self.scale, x[2] / self.scale];
        let h = TAU / PROJECTION_GRID as f64;
        let d2: Vec<f64> = (0..PROJECTION_GRID)
            .map(|k| dist2_3(&curve_point(k as f64 * h), &q))
            .collect();
        let mut minima: Vec<(f64, f64)> = Vec::new();
        for k in 0..PROJECTION_GRID {
            let prev = d2[(k + PROJECTION_GRID - 1) % PROJECTION_GRID];
            let next = d2[(k + 1) % PROJECTION_GRID];
            if d2[k] <= prev && d2[k] <= next {
                let t = refine_curve_param(&q, (k as f64 - 1.0) * h, (k as f64 + 1.0) * h);
                minima.push((t.rem_euclid(TAU), dist2_3(&curve_point(t), &q).sqrt()));
            }
        }
        minima.sort_by(|a, b| a.1.total_cmp(&b.1));
        minima
    }
}

fn curve_point(t: f64) -> [f64; 3] {
    [t.cos(), t.sin(), CURVE_WOBBLE * (2.0 * t).sin()]
}

fn curve_velocity(t: f64) -> [f64; 3] {
    [-t.sin(), t.cos(), 2.0 * CURVE_WOBBLE * (2.0 * t).cos()]
}

fn curve_acceleration(t: f64) -> [f64; 3] {
    [-t.cos(), -t.sin(), -4.0 * CURVE_WOBBLE * (2.0 * t).sin()]
}

fn norm3(v: &[f64]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dist2_3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Root of `h(t) = (c(t) − q)·c'(t)` in `[lo, hi]`, Newton with bisection
/// fallback. If `h` does not change sign the better endpoint is returned.
fn refine_curve_param(q: &[f64; 3], mut lo: f64, mut hi: f64) -> f64 {
    let h = |t: f64| {
        let c = curve_point(t);
        let diff = [c[0] - q[0], c[1] - q[1], c[2] - q[2]];
        let v = curve_velocity(t);
        let a = curve_acceleration(t);
        (dot3(&diff, &v), dot3(&v, &v) + dot3(&diff, &a))
    };
    let (h_lo, _) = h(lo);
    let (h_hi, _) = h(hi);
    if h_lo > 0.0 || h_hi < 0.0 {
        let d_lo = dist2_3(&curve_point(lo), q);
        let d_hi = dist2_3(&curve_point(hi), q);
        return if d_lo <= d_hi { lo } else { hi };
    }
    let mut t = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (val, slope) = h(t);
        if val == 0.0 {
            return t;
        }
        if val < 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let newton = t - val / slope;
        let next = if slope > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - t).abs() <= 1e-15 * t.abs().max(1.0) {
            return next;
        }
        t = next;
    }
    t
}

struct UnitCurve {
    /// Cumulative arc length on a uniform parameter grid over [0, 2π].
    cumulative: Vec<f64>,
    reach: f64,
}

impl UnitCurve {
    fn length(&self) -> f64 {
        *self.cumulative.last().expect("table is nonempty")
    }

    /// Parameter at which the arc length reaches `fraction` of the total.
    fn param_at_fraction(&self, fraction: f64) -> f64 {
        let target = fraction * self.length();
        let k = self.cumulative.partition_point(|&s| s <= target);
        let k = k.clamp(1, ARC_TABLE_LEN);
        let (s0, s1) = (self.cumulative[k - 1], self.cumulative[k]);
        let w = if s1 > s0 { (target - s0) / (s1 - s0) } else { 0.0 };
        let h = TAU / ARC_TABLE_LEN as f64;
        ((k - 1) as f64 + w) * h
    }
}

fn unit_curve() -> &'static UnitCurve {
    static CURVE: OnceLock<UnitCurve> = OnceLock::new();
    CURVE.get_or_init(|| {
        let h = TAU / ARC_TABLE_LEN as f64;
        let speed = |t: f64| norm3(&curve_velocity(t));
        let mut cumulative = Vec::with_capacity(ARC_TABLE_LEN + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 0..ARC_TABLE_LEN {
            let t = k as f64 * h;
            // Simpson on each cell
            acc += h / 6.0 * (speed(t) + 4.0 * speed(t + 0.5 * h) + speed(t + h));
            cumulative.push(acc);
        }

        let curvature_radius = (0..20_000)
            .map(|k| {
                let t = TAU * k as f64 / 20_000.0;
                let v = curve_velocity(t);
                let s = norm3(&v);
                s * s * s / norm3(&cross(&v, &curve_acceleration(t)))
            })
            .fold(f64::INFINITY, f64::min);

        let m = 2000;
        let mut data = Vec::with_capacity(3 * m);
        let mut frames = Vec::with_capacity(m);
        for k in 0..m {
            let t = TAU * k as f64 / m as f64;
            data.extend(curve_point(t));
            let v = curve_velocity(t);
            let s = norm3(&v);
            frames.push(DMatrix::from_column_slice(3, 1, &[v[0] / s, v[1] / s, v[2] / s]));
        }
        let cloud = PointCloud::from_flat(3, data).expect("finite");
        let federer = estimate_reach(&cloud, &frames).expect("distinct points");

        UnitCurve {
            cumulative,
            reach: curvature_radius.min(federer),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rng_for, sample_manifold};

    #[test]
    fn kind_round_trips_through_strings_and_json() {
        for kind in ManifoldKind::ALL {
            assert_eq!(kind.name().parse::<ManifoldKind>().unwrap(), kind);
            let spec = ManifoldSpec::new(kind, 0.7).unwrap();
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<ManifoldSpec>(&json).unwrap(), spec);
        }
        assert!("torus".parse::<ManifoldKind>().is_err());
        assert!(serde_json::from_str::<ManifoldSpec>(r#"{"kind":"circle","scale":1.5}"#).is_err());
    }

    #[test]
    fn dims_follow_kind() {
        let dims: Vec<_> = ManifoldKind::ALL
            .iter()
            .map(|&k| {
                let s = ManifoldSpec::new(k, 1.0).unwrap();
                (s.intrinsic_dim(), s.ambient_dim())
            })
            .collect();
        assert_eq!(dims, vec![(1, 2), (1, 3), (2, 3)]);
        assert!(ManifoldSpec::new(ManifoldKind::Circle2D, 0.0).is_err());
    }

    #[test]
    fn radial_projections() {
        let circle = ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap();
        assert_eq!(circle.project(&[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(
            circle.project(&[0.0, 0.0]),
            Err(GeometryError::ProjectionAmbiguous)
        );
        let sphere = ManifoldSpec::new(ManifoldKind::Sphere3D, 0.9).unwrap();
        assert_eq!(sphere.project(&[0.0, 0.0, 0.1]).unwrap(), vec![0.0, 0.0, 0.9]);
    }

    #[test]
    fn sphere_sample_mean_near_origin() {
        let sphere = ManifoldSpec::new(ManifoldKind::Sphere3D, 1.0).unwrap();
        let cloud = sample_manifold(&sphere, 10_000, 17).unwrap();
        let mut mean = [0.0; 3];
        for p in cloud.iter() {
            for k in 0..3 {
                mean[k] += p[k] / 10_000.0;
            }
        }
        assert!(norm3(&mean) < 0.05, "mean {mean:?}");
    }

    #[test]
    fn noise_displacement_matches_chi_mean() {
        let sphere = ManifoldSpec::new(ManifoldKind::Sphere3D, 1.0).unwrap();
        let cloud = sample_manifold(&sphere, 1000, 3).unwrap();
        let noisy = crate::geometry::add_gaussian_noise(&cloud, 0.05, 4).unwrap();
        let mean_disp = cloud
            .iter()
            .zip(noisy.iter())
            .map(|(a, b)| crate::geometry::spatial::distance(a, b))
            .sum::<f64>()
            / 1000.0;
        // Monte-Carlo oracle for E‖Z‖, Z ~ N(0, 0.05² I₃), with its own stream.
        let mut rng = rng_for(999, 7);
        let mc = (0..200_000)
            .map(|_| {
                let z: [f64; 3] = [
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ];
                0.05 * norm3(&z)
            })
            .sum::<f64>()
            / 200_000.0;
        assert!((mean_disp - mc).abs() / mc < 0.1);
        assert!((mean_disp - 0.05 * 3f64.sqrt()).abs() / (0.05 * 3f64.sqrt()) < 0.1);
    }

    #[test]
    fn curve_samples_are_in_unit_ball_and_on_curve() {
        let spec = ManifoldSpec::new(ManifoldKind::ClosedCurve3D, 0.5).unwrap();
        let cloud = sample_manifold(&spec, 1000, 5).unwrap();
        for p in cloud.iter() {
            assert!(norm3(p) <= 1.0);
            let q = spec.project(p).unwrap();
            assert!(crate::geometry::spatial::distance(p, &q) < 1e-12);
        }
    }

    #[test]
    fn curve_sampling_is_uniform_in_arc_length() {
        // Fraction of samples with t in [0, π/2] should match that arc's share
        // of the total length, computed here with an independent midpoint rule.
        let spec = ManifoldSpec::new(ManifoldKind::ClosedCurve3D, 1.0).unwrap();
        let mut rng = rng_for(21, 0);
        let m = 200_000;
        let quarter = (0..m)
            .filter(|_| unit_curve().param_at_fraction(rng.random::<f64>()) < PI / 2.0)
            .count() as f64
            / m as f64;
        let arc = |a: f64, b: f64| {
            let k = 100_000;
            let h = (b - a) / k as f64;
            (0..k)
                .map(|i| norm3(&curve_velocity(a + (i as f64 + 0.5) * h)) * h)
                .sum::<f64>()
        };
        let expected = arc(0.0, PI / 2.0) / arc(0.0, TAU);
        assert!((quarter - expected).abs() < 0.005, "{quarter} vs {expected}");
        assert!((spec.volume() - arc(0.0, TAU)).abs() < 1e-9);
    }

    #[test]
    fn curve_projection_of_offset_point() {
        let spec = ManifoldSpec::new(ManifoldKind::ClosedCurve3D, 0.5).unwrap();
        for &t0 in &[0.3, 1.9, 4.4] {
            let (p, tangent) = spec.parametric(t0).unwrap();
            // a unit normal: any vector orthogonal to the tangent
            let e = [0.0, 0.0, 1.0];
            let d = dot3(&e, &[tangent[0], tangent[1], tangent[2]]);
            let mut n = [e[0] - d * tangent[0], e[1] - d * tangent[1], e[2] - d * tangent[2]];
            let nn = norm3(&n);
            n.iter_mut().for_each(|c| *c /= nn);
            let x: Vec<f64> = (0..3).map(|k| p[k] + 0.01 * n[k]).collect();
            let q = spec.project(&x).unwrap();
            // Oracle: brute-force grid search over 10⁶ parameter values.
            let xs = [x[0], x[1], x[2]];
            let best = (0..1_000_000)
                .map(|k| {
                    let t = TAU * k as f64 / 1e6;
                    let c = curve_point(t).map(|v| 0.5 * v);
                    (dist2_3(&c, &xs), c)
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .unwrap()
                .1;
            let err = crate::geometry::spatial::distance(&q, &best);
            assert!(err < 1e-4, "err {err}");
            assert!(crate::geometry::spatial::distance(&q, &p) < 1e-4);
        }
    }

    #[test]
    fn curve_reach_is_positive_and_below_curvature_bound() {
        let spec = ManifoldSpec::new(ManifoldKind::ClosedCurve3D, 0.5).unwrap();
        let r = spec.reach();
        assert!(r > 0.1 && r < 0.5, "reach {r}");
        let far = [0.0, 0.0, 0.0];
        assert!(matches!(
            spec.project(&far),
            Err(GeometryError::OutsideReach { .. }) | Err(GeometryError::ProjectionAmbiguous)
        ));
    }

    #[test]
    fn tangent_frames_are_orthonormal_and_tangent() {
        for kind in ManifoldKind::ALL {
            let spec = ManifoldSpec::new(kind, 0.6).unwrap();
            let cloud = sample_manifold(&spec, 20, 2).unwrap();
            for p in cloud.iter() {
                let b = spec.tangent_basis(p).unwrap();
                let gram = b.transpose() * &b;
                assert!((gram - DMatrix::identity(b.ncols(), b.ncols())).norm() < 1e-12);
                if kind != ManifoldKind::ClosedCurve3D {
                    let radial = nalgebra::DVector::from_column_slice(p);
                    assert!((b.transpose() * radial).norm() < 1e-12);
                }
            }
        }
    }
}
