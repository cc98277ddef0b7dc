//! Subspace-constrained gradient descent onto the d-dimensional ridge
//! `{z : Π_hi(z) ∇F(z) = 0}` of an asdf, where `Π_hi` projects onto the top
//! n − d Hessian eigenvectors.

use std::fmt::Write as _;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asdf::{Asdf, AsdfError, AsdfEvaluation};
use crate::geometry::PointCloud;
use crate::linalg::sorted_symmetric_eigen;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RidgeError {
    #[error("eigendecomposition failed (non-finite Hessian)")]
    EigenFailure,
    #[error("invalid descent config: {0}")]
    InvalidConfig(String),
    #[error("mesh has ambient dimension {found}, asdf expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("mesh is empty")]
    EmptyMesh,
    #[error(transparent)]
    Asdf(#[from] AsdfError),
}

/// Stopping threshold on `‖VVᵀg‖`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    /// Multiple of the median gradient norm over the initial mesh.
    Relative(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentConfig {
    pub step_size: f64,
    pub max_iters: usize,
    pub tolerance: Tolerance,
    pub backtracking: bool,
    pub shrink: f64,
    pub min_step: f64,
    /// Record the asdf value after every accepted step.
    #[serde(default)]
    pub record_values: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            step_size: 0.1,
            max_iters: 500,
            tolerance: Tolerance::Relative(1e-7),
            backtracking: true,
            shrink: 0.5,
            min_step: 1e-8,
            record_values: false,
        }
    }
}

impl DescentConfig {
    pub fn validate(&self) -> Result<(), RidgeError> {
        let tol_ok = match self.tolerance {
            Tolerance::Absolute(t) | Tolerance::Relative(t) => t > 0.0 && t.is_finite(),
        };
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(RidgeError::InvalidConfig("step size must be positive".into()));
        }
        if !tol_ok {
            return Err(RidgeError::InvalidConfig("tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(RidgeError::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.shrink > 0.0 && self.shrink < 1.0) || !(self.min_step > 0.0) {
            return Err(RidgeError::InvalidConfig(
                "backtracking needs shrink in (0, 1) and a positive minimum step".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DescentStatus {
    Converged,
    MaxIters,
    LeftDomain,
}

impl DescentStatus {
    pub fn name(self) -> &'static str {
        match self {
            DescentStatus::Converged => "converged",
            DescentStatus::MaxIters => "max_iters",
            DescentStatus::LeftDomain => "left_domain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentTrace {
    /// In the caller's (unscaled) coordinates.
    pub final_point: Vec<f64>,
    /// Number of asdf evaluations along the trajectory.
    pub iterations: usize,
    pub converged: bool,
    /// `‖VVᵀg‖` at the final point; NaN if the start was never evaluated.
    pub residual: f64,
    pub status: DescentStatus,
    /// Some step had (numerically) tied eigenvalues across the split.
    pub degenerate_split: bool,
    /// Asdf values at the start and after each accepted step, when recorded.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DescentOutput {
    pub traces: Vec<DescentTrace>,
    /// Tolerance actually used (after resolving a relative tolerance).
    pub tolerance: f64,
}

/// `VVᵀg` for the top n − d eigenvectors `V` of the Hessian, and whether the
/// eigenvalues at the split are tied.
pub fn projected_gradient(
    eval: &AsdfEvaluation,
    intrinsic_dim: usize,
) -> Result<(DVector<f64>, bool), RidgeError> {
    let n = eval.gradient.len();
    let k = n.checked_sub(intrinsic_dim).filter(|&k| k > 0).ok_or_else(|| {
        RidgeError::InvalidConfig(format!("intrinsic dimension {intrinsic_dim} must be < {n}"))
    })?;
    let (values, vectors) = sorted_symmetric_eigen(&eval.hessian).ok_or(RidgeError::EigenFailure)?;
    let degenerate = k < n && values[k - 1] - values[k] < 1e-12 * values[0].abs().max(1.0);
    let v = vectors.columns(0, k);
    let coef = v.transpose() * &eval.gradient;
    Ok((v * coef, degenerate))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next: Vec<f64>,
    /// `‖VVᵀg‖` at the starting point.
    pub residual: f64,
    pub degenerate_split: bool,
    /// Step length used; zero when backtracking gave up.
    pub step: f64,
    /// Set when backtracking gave up and the last rejected trial left the domain.
    pub left_domain: bool,
}

/// One step `x − η VVᵀg` from a point evaluated as `eval` (working coordinates).
/// With backtracking, η is shrunk until the asdf value does not increase; if
/// it falls below the minimum step, `next == x` and `step == 0`.
pub fn scgd_step<A: Asdf + ?Sized>(
    asdf: &A,
    eval: &AsdfEvaluation,
    x: &[f64],
    config: &DescentConfig,
) -> Result<StepResult, RidgeError> {
    let (dir, degenerate_split) = projected_gradient(eval, asdf.intrinsic_dim())?;
    let residual = dir.norm();
    let trial = |eta: f64| -> Vec<f64> { x.iter().zip(dir.iter()).map(|(a, g)| a - eta * g).collect() };
    if !config.backtracking {
        return Ok(StepResult {
            next: trial(config.step_size),
            residual,
            degenerate_split,
            step: config.step_size,
            left_domain: false,
        });
    }
    let mut eta = config.step_size;
    let mut left_domain = false;
    while eta >= config.min_step {
        let cand = trial(eta);
        match asdf.value_change(x, &cand) {
            Ok(dv) if dv <= 0.0 => {
                return Ok(StepResult {
                    next: cand,
                    residual,
                    degenerate_split,
                    step: eta,
                    left_domain: false,
                });
            }
            Ok(_) => left_domain = false,
            Err(e) if e.is_domain() => left_domain = true,
            Err(e) => return Err(e.into()),
        }
        eta *= config.shrink;
    }
    Ok(StepResult {
        next: x.to_vec(),
        residual,
        degenerate_split,
        step: 0.0,
        left_domain,
    })
}

/// Descends every mesh point independently (in parallel); traces are in mesh
/// order.
pub fn run_descent<A: Asdf + ?Sized>(
    asdf: &A,
    mesh: &PointCloud,
    config: &DescentConfig,
) -> Result<DescentOutput, RidgeError> {
    config.validate()?;
    if mesh.is_empty() {
        return Err(RidgeError::EmptyMesh);
    }
    if mesh.ambient_dim() != asdf.ambient_dim() {
        return Err(RidgeError::DimensionMismatch {
            expected: asdf.ambient_dim(),
            found: mesh.ambient_dim(),
        });
    }
    let starts: Vec<(Vec<f64>, Result<AsdfEvaluation, AsdfError>)> = (0..mesh.len())
        .into_par_iter()
        .map(|i| {
            let x = asdf.to_working(mesh.point(i));
            let e = asdf.evaluate_working(&x);
            (x, e)
        })
        .collect();
    let tolerance = match config.tolerance {
        Tolerance::Absolute(t) => t,
        Tolerance::Relative(factor) => {
            let mut norms: Vec<f64> = starts
                .iter()
                .filter_map(|(_, e)| e.as_ref().ok().map(|e| e.gradient.norm()))
                .collect();
            if norms.is_empty() {
                // nothing to descend; any positive value will do
                factor
            } else {
                norms.sort_by(f64::total_cmp);
                let median = norms[norms.len() / 2];
                (factor * median).max(f64::MIN_POSITIVE)
            }
        }
    };
    let traces = starts
        .into_par_iter()
        .enumerate()
        .map(|(i, (x, e))| descend_one(asdf, mesh.point(i), x, e, config, tolerance))
        .collect();
    Ok(DescentOutput { traces, tolerance })
}

fn descend_one<A: Asdf + ?Sized>(
    asdf: &A,
    original: &[f64],
    mut x: Vec<f64>,
    first: Result<AsdfEvaluation, AsdfError>,
    config: &DescentConfig,
    tolerance: f64,
) -> DescentTrace {
    let mut trace = DescentTrace {
        final_point: original.to_vec(),
        iterations: 0,
        converged: false,
        residual: f64::NAN,
        status: DescentStatus::LeftDomain,
        degenerate_split: false,
        values: Vec::new(),
    };
    let mut eval = match first {
        Ok(e) => e,
        Err(_) => return trace,
    };
    let mut moved = false;
    let finish = |trace: &mut DescentTrace, x: &[f64], moved: bool, status: DescentStatus| {
        if moved {
            trace.final_point = asdf.from_working(x);
        }
        trace.status = status;
        trace.converged = status == DescentStatus::Converged;
    };
    if config.record_values {
        trace.values.push(eval.value);
    }
    loop {
        trace.iterations += 1;
        let (dir, degenerate) = match projected_gradient(&eval, asdf.intrinsic_dim()) {
            Ok(v) => v,
            Err(_) => {
                finish(&mut trace, &x, moved, DescentStatus::LeftDomain);
                return trace;
            }
        };
        trace.residual = dir.norm();
        trace.degenerate_split |= degenerate;
        if trace.residual <= tolerance {
            finish(&mut trace, &x, moved, DescentStatus::Converged);
            return trace;
        }
        if trace.iterations >= config.max_iters {
            finish(&mut trace, &x, moved, DescentStatus::MaxIters);
            return trace;
        }
        let step = match scgd_step(asdf, &eval, &x, config) {
            Ok(s) => s,
            Err(_) => {
                finish(&mut trace, &x, moved, DescentStatus::LeftDomain);
                return trace;
            }
        };
        if step.step == 0.0 {
            let status = if step.left_domain {
                DescentStatus::LeftDomain
            } else {
                DescentStatus::MaxIters
            };
            finish(&mut trace, &x, moved, status);
            return trace;
        }
        match asdf.evaluate_working(&step.next) {
            Ok(e) => {
                x = step.next;
                eval = e;
                moved = true;
                if config.record_values {
                    trace.values.push(eval.value);
                }
            }
            Err(_) => {
                finish(&mut trace, &x, moved, DescentStatus::LeftDomain);
                return trace;
            }
        }
    }
}

/// Final points of the converged traces.
pub fn converged_points(traces: &[DescentTrace], ambient_dim: usize) -> Option<PointCloud> {
    let data: Vec<f64> = traces
        .iter()
        .filter(|t| t.converged)
        .flat_map(|t| t.final_point.iter().copied())
        .collect();
    if data.is_empty() {
        return None;
    }
    PointCloud::from_flat(ambient_dim, data).ok()
}

/// CSV with coordinate columns `x0..`, then iterations, converged, residual,
/// status.
pub fn traces_to_csv(traces: &[DescentTrace], ambient_dim: usize) -> String {
    let mut out = String::new();
    for k in 0..ambient_dim {
        let _ = write!(out, "x{k},");
    }
    out.push_str("iterations,converged,residual,status\n");
    for t in traces {
        for v in &t.final_point {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(
            out,
            "{},{},{},{}",
            t.iterations,
            t.converged,
            t.residual,
            t.status.name()
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asdf::NormalQuadratic;
    use crate::geometry::{rng_for, sample_manifold, ManifoldKind, ManifoldSpec};
    use crate::kde_asdf::KdeAsdf;
    use nalgebra::DMatrix;
    use rand::Rng;

    fn x_axis() -> NormalQuadratic {
        NormalQuadratic::new(&[0.0, 0.0], &DMatrix::from_column_slice(2, 1, &[1.0, 0.0]))
    }

    #[test]
    fn hand_evaluated_quadratic_step() {
        let q = x_axis();
        let x = [0.3, 0.5];
        let e = q.evaluate_working(&x).unwrap();
        let cfg = DescentConfig {
            step_size: 0.25,
            backtracking: false,
            ..DescentConfig::default()
        };
        let s = scgd_step(&q, &e, &x, &cfg).unwrap();
        assert_eq!(s.next, vec![0.3, 0.25]);
        assert_eq!(s.residual, 1.0);
    }

    #[test]
    fn fixed_point_is_returned_unchanged() {
        let q = x_axis();
        let mesh = PointCloud::new(vec![vec![0.123456789, 0.0], vec![-3.0, 0.0]]).unwrap();
        let out = run_descent(&q, &mesh, &DescentConfig {
            tolerance: Tolerance::Absolute(1e-9),
            ..DescentConfig::default()
        })
        .unwrap();
        for (t, p) in out.traces.iter().zip(mesh.iter()) {
            assert_eq!(t.status, DescentStatus::Converged);
            assert_eq!(t.iterations, 1);
            assert_eq!(t.final_point, p);
        }
    }

    #[test]
    fn isotropic_quadratic_reduces_norm() {
        // π‖x‖² via a single-sample KDE: Hessian 2πI, degenerate split.
        let a = KdeAsdf::new(PointCloud::new(vec![vec![0.0, 0.0]]).unwrap(), 1.0 / (2.0 * std::f64::consts::PI).sqrt(), 1).unwrap();
        let x = [0.3, -0.2];
        let e = a.evaluate_working(&x).unwrap();
        let s = scgd_step(&a, &e, &x, &DescentConfig::default()).unwrap();
        assert!(s.degenerate_split);
        let n0 = (x[0] * x[0] + x[1] * x[1]).sqrt();
        let n1 = (s.next[0] * s.next[0] + s.next[1] * s.next[1]).sqrt();
        assert!(n1 < n0);
    }

    #[test]
    fn quadratic_oracle_from_random_starts() {
        let basis = DMatrix::from_column_slice(3, 1, &[0.6, 0.0, 0.8]);
        let q = NormalQuadratic::new(&[0.1, -0.2, 0.0], &basis);
        let mut rng = rng_for(8, 0);
        let mesh = PointCloud::from_flat(3, (0..300).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
        let cfg = DescentConfig {
            step_size: 0.25,
            tolerance: Tolerance::Absolute(1e-10),
            ..DescentConfig::default()
        };
        let out = run_descent(&q, &mesh, &cfg).unwrap();
        for t in &out.traces {
            assert!(t.converged);
            assert!(q.normal_distance(&t.final_point) <= 1e-10);
        }
    }

    #[test]
    fn kde_descent_monotone_and_residual_rechecks() {
        let spec = ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap();
        let fit = sample_manifold(&spec, 300, 1).unwrap();
        let mesh = crate::geometry::add_gaussian_noise(&sample_manifold(&spec, 40, 2).unwrap(), 0.03, 3).unwrap();
        let a = KdeAsdf::new(fit, 0.05, 1).unwrap();
        let cfg = DescentConfig {
            record_values: true,
            ..DescentConfig::default()
        };
        let out = run_descent(&a, &mesh, &cfg).unwrap();
        let mut converged = 0;
        for t in &out.traces {
            assert!(t.values.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            if t.converged {
                converged += 1;
                let e = a.evaluate_working(&a.to_working(&t.final_point)).unwrap();
                let (dir, _) = projected_gradient(&e, 1).unwrap();
                // one scaling round trip of roundoff
                assert!(dir.norm() <= out.tolerance * 1.5 + 1e-12, "{} vs {}", dir.norm(), out.tolerance);
            }
        }
        assert!(converged >= 38, "{converged}/40");
    }

    #[test]
    fn far_point_leaves_domain() {
        let spec = ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap();
        let a = KdeAsdf::new(sample_manifold(&spec, 100, 1).unwrap(), 0.01, 1).unwrap();
        let mesh = PointCloud::new(vec![vec![5.0, 5.0]]).unwrap();
        let out = run_descent(&a, &mesh, &DescentConfig::default()).unwrap();
        assert_eq!(out.traces[0].status, DescentStatus::LeftDomain);
        assert_eq!(out.traces[0].final_point, vec![5.0, 5.0]);
    }

    #[test]
    fn config_validation_and_csv() {
        assert!(DescentConfig { step_size: 0.0, ..DescentConfig::default() }.validate().is_err());
        assert!(DescentConfig { max_iters: 0, ..DescentConfig::default() }.validate().is_err());
        let t = DescentTrace {
            final_point: vec![0.5, 1.0],
            iterations: 3,
            converged: true,
            residual: 1e-9,
            status: DescentStatus::Converged,
            degenerate_split: false,
            values: vec![],
        };
        let csv = traces_to_csv(&[t], 2);
        assert_eq!(csv, "x0,x1,iterations,converged,residual,status\n0.5,1,3,true,0.000000001,converged\n");
    }
}
