//! Local-PCA asdf: tangent frames from local covariance, cylinder packets
//! and the bump-weighted average of squared normal distances F^ō.

mod bump;
mod packet;
mod validate;

pub use bump::{bump_theta, radial_profile, smooth_step, BumpEval};
pub use packet::{
    build_packet, fobar_eval, Cylinder, CylinderPacket, CylinderRecord, DerivativeMode,
    PacketFile,
};
pub use validate::{
    cylinders_intersect, validate_packet, validate_packet_with, ConditionResult, PacketValidationReport,
    ValidationOptions,
};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::geometry::{GeometryError, KdTree, PointCloud};
use crate::linalg::{normalize_column_signs, sorted_symmetric_eigen};

#[derive(Debug, Error)]
pub enum PcaError {
    #[error("only {found} sample points near the center, need at least {needed}")]
    InsufficientNeighbors { found: usize, needed: usize },
    #[error("local covariance has no spectral gap after eigenvalue {0}")]
    DegenerateSpectrum(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Estimated tangent space at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub center: Vec<f64>,
    /// n×d, orthonormal columns.
    pub basis: DMatrix<f64>,
    /// `λ_d − λ_{d+1}` of the local covariance.
    pub eigen_gap: f64,
}

/// Top-d eigenvectors of `(1/N_z) Σ (y − c)(y − c)ᵀ` over the sample points
/// within `τ̄√2` of the center `c`.
pub fn estimate_tangent(
    cloud: &PointCloud,
    center: &[f64],
    tau_bar: f64,
    intrinsic_dim: usize,
) -> Result<TangentFrame, PcaError> {
    let neighbors =
        crate::geometry::spatial::within_radius_brute_force(cloud, center, tau_bar * 2f64.sqrt());
    frame_from_neighbors(cloud, &neighbors, center, intrinsic_dim)
}

pub(crate) fn estimate_tangent_indexed(
    cloud: &PointCloud,
    tree: &KdTree,
    center: &[f64],
    tau_bar: f64,
    intrinsic_dim: usize,
) -> Result<TangentFrame, PcaError> {
    let neighbors = tree.within_radius(center, tau_bar * 2f64.sqrt());
    frame_from_neighbors(cloud, &neighbors, center, intrinsic_dim)
}

fn frame_from_neighbors(
    cloud: &PointCloud,
    neighbors: &[usize],
    center: &[f64],
    d: usize,
) -> Result<TangentFrame, PcaError> {
    let n = cloud.ambient_dim();
    if center.len() != n {
        return Err(GeometryError::DimensionMismatch {
            index: 0,
            expected: n,
            found: center.len(),
        }
        .into());
    }
    if d == 0 || d >= n {
        return Err(PcaError::InvalidParameter(format!(
            "intrinsic dimension {d} must lie in [1, {n})"
        )));
    }
    if neighbors.len() < d + 1 {
        return Err(PcaError::InsufficientNeighbors {
            found: neighbors.len(),
            needed: d + 1,
        });
    }
    let c = DVector::from_column_slice(center);
    let mut cov = DMatrix::zeros(n, n);
    for &i in neighbors {
        let u = DVector::from_column_slice(cloud.point(i)) - &c;
        cov.ger(1.0, &u, &u, 1.0);
    }
    cov /= neighbors.len() as f64;
    let (values, vectors) = sorted_symmetric_eigen(&cov).ok_or(PcaError::DegenerateSpectrum(d))?;
    let gap = values[d - 1] - values[d];
    if !(values[0] > 0.0) || gap < 1e-12 * values[0] {
        return Err(PcaError::DegenerateSpectrum(d));
    }
    let mut basis = vectors.columns(0, d).into_owned();
    normalize_column_signs(&mut basis);
    Ok(TangentFrame {
        center: center.to_vec(),
        basis,
        eigen_gap: gap,
    })
}

/// `τ̄ = c · N^{−1/(d+ε)}`.
pub fn pca_schedule(
    n_samples: usize,
    intrinsic_dim: usize,
    epsilon: f64,
    scale: f64,
) -> Result<f64, PcaError> {
    if n_samples < 2 || !(epsilon > 0.0) || !(scale > 0.0) || intrinsic_dim == 0 {
        return Err(PcaError::InvalidParameter(format!(
            "pca schedule needs N ≥ 2, d ≥ 1, ε > 0 and c > 0 (got N={n_samples}, d={intrinsic_dim}, ε={epsilon}, c={scale})"
        )));
    }
    Ok(scale * (n_samples as f64).powf(-1.0 / (intrinsic_dim as f64 + epsilon)))
}

/// Upper bound on the sine of the tangent-estimate error from local PCA:
/// `(2τ̄³/τ + 2τ̄⁴/τ²)(d+2) / ((1−ε) τ̄² (1 + C²τ̄²/τ²)^{−d/2})`.
pub fn tangent_angle_bound(tau_bar: f64, reach: f64, d: usize, epsilon: f64, c: f64) -> f64 {
    let r = tau_bar / reach;
    let num = (2.0 * tau_bar.powi(3) / reach + 2.0 * tau_bar.powi(4) / (reach * reach)) * (d as f64 + 2.0);
    let den = (1.0 - epsilon) * tau_bar * tau_bar * (1.0 + c * c * r * r).powf(-(d as f64) / 2.0);
    num / den
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{sample_manifold, ManifoldKind, ManifoldSpec};
    use crate::linalg::largest_principal_angle_sine;

    #[test]
    fn line_points_give_exact_direction() {
        let dir = [0.6, 0.8];
        let cloud = PointCloud::new(
            (-10..=10)
                .map(|k| vec![0.01 * k as f64 * dir[0], 0.01 * k as f64 * dir[1]])
                .collect(),
        )
        .unwrap();
        let frame = estimate_tangent(&cloud, &[0.0, 0.0], 0.1, 1).unwrap();
        let truth = DMatrix::from_column_slice(2, 1, &dir);
        assert!(largest_principal_angle_sine(&frame.basis, &truth) < 1e-12);
        assert!(frame.basis[(1, 0)] > 0.0);
    }

    #[test]
    fn plane_with_tiny_outlier() {
        let mut pts: Vec<Vec<f64>> = Vec::new();
        for i in -5..=5 {
            for j in -5..=5 {
                pts.push(vec![0.01 * i as f64, 0.013 * j as f64, 0.0]);
            }
        }
        pts.push(vec![0.02, 0.01, 1e-9]);
        let cloud = PointCloud::new(pts).unwrap();
        let frame = estimate_tangent(&cloud, &[0.0, 0.0, 0.0], 0.1, 2).unwrap();
        let plane = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert!(largest_principal_angle_sine(&frame.basis, &plane) < 1e-6);
        assert!((frame.basis.transpose() * &frame.basis - DMatrix::identity(2, 2)).norm() < 1e-10);
    }

    #[test]
    fn circle_tangent_within_bound() {
        let spec = ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap();
        let cloud = sample_manifold(&spec, 1000, 12).unwrap();
        let center = cloud.point(0).to_vec();
        let frame = estimate_tangent(&cloud, &center, 0.2, 1).unwrap();
        let truth = spec.tangent_basis(&center).unwrap();
        let sine = largest_principal_angle_sine(&frame.basis, &truth);
        assert!(sine <= tangent_angle_bound(0.2, 1.0, 1, 0.5, 1.0));
    }

    #[test]
    fn error_paths() {
        let cloud = PointCloud::new(vec![vec![0.0, 0.0], vec![5.0, 5.0]]).unwrap();
        assert!(matches!(
            estimate_tangent(&cloud, &[0.0, 0.0], 0.1, 1),
            Err(PcaError::InsufficientNeighbors { found: 1, needed: 2 })
        ));
        let square = PointCloud::new(vec![
            vec![0.01, 0.0],
            vec![-0.01, 0.0],
            vec![0.0, 0.01],
            vec![0.0, -0.01],
        ])
        .unwrap();
        assert!(matches!(
            estimate_tangent(&square, &[0.0, 0.0], 0.1, 1),
            Err(PcaError::DegenerateSpectrum(1))
        ));
    }

    #[test]
    fn schedule_values() {
        assert!((pca_schedule(1000, 1, 0.5, 1.0).unwrap() - 0.01).abs() < 1e-12);
        assert!((pca_schedule(1000, 2, 1.0, 1.0).unwrap() - 0.1).abs() < 1e-12);
        let a = pca_schedule(1000, 1, 1e-9, 1.0).unwrap();
        let b = pca_schedule(2000, 1, 1e-9, 1.0).unwrap();
        assert!((b / a - 0.5).abs() < 1e-8);
        assert!(pca_schedule(1, 1, 0.5, 1.0).is_err());
    }
}
