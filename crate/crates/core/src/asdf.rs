//! The interface shared by the two approximate squared-distance functions.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::linalg::symmetrize;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsdfError {
    #[error("kernel sum underflowed: query is too far from every sample")]
    NumericUnderflow,
    #[error("query lies outside every cylinder of the packet")]
    OutsidePacket,
    #[error("all bump weights vanish at the query")]
    ZeroWeight,
    #[error("query has {found} coordinates, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("evaluation produced non-finite values")]
    NonFinite,
}

impl AsdfError {
    /// Errors that mean the query left the region where the function is
    /// defined, as opposed to misuse.
    pub fn is_domain(&self) -> bool {
        matches!(
            self,
            AsdfError::NumericUnderflow | AsdfError::OutsidePacket | AsdfError::ZeroWeight
        )
    }
}

/// Value, gradient and Hessian at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct AsdfEvaluation {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

impl AsdfEvaluation {
    /// Symmetrizes the Hessian and rejects non-finite entries.
    pub fn new(
        value: f64,
        gradient: DVector<f64>,
        mut hessian: DMatrix<f64>,
    ) -> Result<Self, AsdfError> {
        symmetrize(&mut hessian);
        if !value.is_finite()
            || gradient.iter().any(|v| !v.is_finite())
            || hessian.iter().any(|v| !v.is_finite())
        {
            return Err(AsdfError::NonFinite);
        }
        Ok(Self {
            value,
            gradient,
            hessian,
        })
    }
}

/// A smooth function whose d-dimensional ridge approximates the manifold.
///
/// Implementations may evaluate in their own *working* coordinates (the KDE
/// works in bandwidth-scaled coordinates); descent runs entirely in working
/// coordinates and converts back once.
pub trait Asdf: Sync {
    fn ambient_dim(&self) -> usize;

    fn intrinsic_dim(&self) -> usize;

    fn to_working(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn from_working(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    /// Evaluation at a point given in working coordinates.
    fn evaluate_working(&self, x: &[f64]) -> Result<AsdfEvaluation, AsdfError>;

    fn value_working(&self, x: &[f64]) -> Result<f64, AsdfError> {
        Ok(self.evaluate_working(x)?.value)
    }

    /// `F(to) − F(from)`. Implementations may override this with a form that
    /// stays accurate when the two values nearly cancel.
    fn value_change(&self, from: &[f64], to: &[f64]) -> Result<f64, AsdfError> {
        Ok(self.value_working(to)? - self.value_working(from)?)
    }
}

/// `F(x) = ‖(I − BBᵀ)(x − o)‖²`: squared distance to the affine subspace
/// through `o` spanned by the orthonormal columns of `B`. Its ridge is the
/// subspace itself, which makes it an exact oracle for descent.
#[derive(Debug, Clone)]
pub struct NormalQuadratic {
    origin: DVector<f64>,
    normal_projector: DMatrix<f64>,
    intrinsic_dim: usize,
}

impl NormalQuadratic {
    pub fn new(origin: &[f64], basis: &DMatrix<f64>) -> Self {
        let n = basis.nrows();
        assert_eq!(origin.len(), n, "origin dimension must match basis rows");
        Self {
            origin: DVector::from_column_slice(origin),
            normal_projector: DMatrix::identity(n, n) - basis * basis.transpose(),
            intrinsic_dim: basis.ncols(),
        }
    }

    /// Distance from `x` to the subspace.
    pub fn normal_distance(&self, x: &[f64]) -> f64 {
        (&self.normal_projector * (DVector::from_column_slice(x) - &self.origin)).norm()
    }
}

impl Asdf for NormalQuadratic {
    fn ambient_dim(&self) -> usize {
        self.origin.len()
    }

    fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    fn evaluate_working(&self, x: &[f64]) -> Result<AsdfEvaluation, AsdfError> {
        if x.len() != self.ambient_dim() {
            return Err(AsdfError::DimensionMismatch {
                expected: self.ambient_dim(),
                found: x.len(),
            });
        }
        let r = &self.normal_projector * (DVector::from_column_slice(x) - &self.origin);
        AsdfEvaluation::new(r.norm_squared(), 2.0 * &r, 2.0 * &self.normal_projector)
    }
}
