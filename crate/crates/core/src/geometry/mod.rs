//! Point clouds, synthetic manifolds, ε-nets and the distance/reach
//! diagnostics the rest of the crate is measured against.

mod io;
mod manifold;
pub mod spatial;

pub use io::{read_csv, read_csv_str, write_csv, write_csv_string};
pub use manifold::{ManifoldKind, ManifoldSpec};
pub use spatial::KdTree;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use spatial::squared_distance;

/// Returned by [`estimate_reach`] when the input has no measurable curvature.
pub const FLAT_REACH_SENTINEL: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("point {index} has {found} coordinates, expected {expected}")]
    DimensionMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("ambient dimension must be positive")]
    ZeroDimension,
    #[error("point cloud is empty")]
    Empty,
    #[error("invalid manifold: {0}")]
    InvalidManifold(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("net infeasible: {0}")]
    NetInfeasible(String),
    #[error("projection ambiguous: query lies on the medial axis")]
    ProjectionAmbiguous,
    #[error("query at distance {distance} is outside the reach {reach} of the manifold")]
    OutsideReach { distance: f64, reach: f64 },
    #[error("points {0} and {1} coincide")]
    DegeneratePair(usize, usize),
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for GeometryError {
    fn from(e: std::io::Error) -> Self {
        GeometryError::Io(e.to_string())
    }
}

/// An ordered collection of points in R^n, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    data: Vec<f64>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self, GeometryError> {
        let dim = points.first().map(Vec::len).ok_or(GeometryError::Empty)?;
        let mut data = Vec::with_capacity(points.len() * dim);
        for (index, p) in points.iter().enumerate() {
            if p.len() != dim {
                return Err(GeometryError::DimensionMismatch {
                    index,
                    expected: dim,
                    found: p.len(),
                });
            }
            data.extend_from_slice(p);
        }
        Self::from_flat(dim, data)
    }

    /// Builds a cloud from row-major coordinates. An empty `data` gives an
    /// empty cloud of the given dimension.
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self, GeometryError> {
        if dim == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        if data.len() % dim != 0 {
            return Err(GeometryError::DimensionMismatch {
                index: data.len() / dim,
                expected: dim,
                found: data.len() % dim,
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite { index: pos / dim });
        }
        Ok(Self { dim, data })
    }

    pub fn empty(dim: usize) -> Result<Self, GeometryError> {
        Self::from_flat(dim, Vec::new())
    }

    pub fn ambient_dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vecs(&self) -> Vec<Vec<f64>> {
        self.iter().map(<[f64]>::to_vec).collect()
    }

    /// Applies `f` to every point; `f` must preserve the dimension.
    pub fn map_points<F>(&self, mut f: F) -> Result<Self, GeometryError>
    where
        F: FnMut(&[f64]) -> Vec<f64>,
    {
        let mut data = Vec::with_capacity(self.data.len());
        for (index, p) in self.iter().enumerate() {
            let q = f(p);
            if q.len() != self.dim {
                return Err(GeometryError::DimensionMismatch {
                    index,
                    expected: self.dim,
                    found: q.len(),
                });
            }
            data.extend(q);
        }
        Self::from_flat(self.dim, data)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        Self {
            dim: self.dim,
            data,
        }
    }
}

/// Deterministic generator for `(seed, stream)`. Distinct streams of one seed
/// are independent, so callers never need to share generator state.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform sample (w.r.t. arc length or surface area) of `count` points.
pub fn sample_manifold(
    spec: &ManifoldSpec,
    count: usize,
    seed: u64,
) -> Result<PointCloud, GeometryError> {
    if count == 0 {
        return Err(GeometryError::InvalidArgument(
            "sample count must be at least 1".into(),
        ));
    }
    let mut rng = rng_for(seed, 0);
    Ok(spec.sample_with(&mut rng, count))
}

/// Adds independent N(0, sd²) noise to every coordinate.
pub fn add_gaussian_noise(
    cloud: &PointCloud,
    sd: f64,
    seed: u64,
) -> Result<PointCloud, GeometryError> {
    if !(sd >= 0.0) || !sd.is_finite() {
        return Err(GeometryError::InvalidArgument(format!(
            "noise sd must be a finite nonnegative number, got {sd}"
        )));
    }
    perturb_with(&mut rng_for(seed, 1), cloud, sd)
}

pub(crate) fn perturb_with<R: Rng + ?Sized>(
    rng: &mut R,
    cloud: &PointCloud,
    sd: f64,
) -> Result<PointCloud, GeometryError> {
    if sd == 0.0 {
        return Ok(cloud.clone());
    }
    let normal = Normal::new(0.0, sd).expect("sd validated by caller");
    let data = cloud.as_flat().iter().map(|v| v + normal.sample(rng)).collect();
    PointCloud::from_flat(cloud.ambient_dim(), data)
}

/// A greedy ε-net of a sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NetResult {
    pub centers: PointCloud,
    /// Position of each center in the input cloud.
    pub center_indices: Vec<usize>,
    pub radius: f64,
    pub min_separation: f64,
}

/// Greedy net in input order: a point becomes a center unless it lies within
/// `min_separation` of an already accepted center.
///
/// Besides the covering test against the input points, the net is rejected
/// when some center has no other center within `2 · covering_radius`. A
/// covering of a connected manifold by balls of that radius cannot contain an
/// isolated ball, so an isolated center means the sample is too sparse for
/// the requested scale.
pub fn build_net(
    cloud: &PointCloud,
    covering_radius: f64,
    min_separation: f64,
) -> Result<NetResult, GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::Empty);
    }
    if !(covering_radius > 0.0 && min_separation > 0.0) {
        return Err(GeometryError::InvalidArgument(
            "net radii must be positive".into(),
        ));
    }
    if min_separation > covering_radius {
        return Err(GeometryError::InvalidArgument(format!(
            "min_separation {min_separation} exceeds covering radius {covering_radius}"
        )));
    }
    let sep2 = min_separation * min_separation;
    let mut center_indices: Vec<usize> = Vec::new();
    for (i, p) in cloud.iter().enumerate() {
        let blocked = center_indices
            .iter()
            .any(|&c| squared_distance(cloud.point(c), p) < sep2);
        if !blocked {
            center_indices.push(i);
        }
    }
    let centers = cloud.select(&center_indices);
    let tree = KdTree::build(&centers);
    for (i, p) in cloud.iter().enumerate() {
        let (_, d) = tree.nearest(p).expect("at least one center");
        if d > covering_radius {
            return Err(GeometryError::NetInfeasible(format!(
                "input point {i} is {d} from the nearest center (covering radius {covering_radius})"
            )));
        }
    }
    if centers.len() > 1 {
        for (k, c) in centers.iter().enumerate() {
            let neighbors = tree.within_radius(c, 2.0 * covering_radius);
            if neighbors.len() < 2 {
                return Err(GeometryError::NetInfeasible(format!(
                    "center {k} has no neighbor within {}; the sample is too sparse for this scale",
                    2.0 * covering_radius
                )));
            }
        }
    }
    Ok(NetResult {
        centers,
        center_indices,
        radius: covering_radius,
        min_separation,
    })
}

/// Closest point of the analytic manifold.
pub fn project_to_manifold(spec: &ManifoldSpec, x: &[f64]) -> Result<Vec<f64>, GeometryError> {
    spec.project(x)
}

/// What [`rms_distance`] measures against.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    Manifold(&'a ManifoldSpec),
    Cloud(&'a PointCloud),
}

/// Root mean square of point-to-reference distances.
pub fn rms_distance(cloud: &PointCloud, reference: Reference<'_>) -> Result<f64, GeometryError> {
    let dists = distances_to(cloud, reference)?;
    Ok((dists.iter().map(|d| d * d).sum::<f64>() / dists.len() as f64).sqrt())
}

/// Distance from each point of `cloud` to the reference, in cloud order.
pub fn distances_to(
    cloud: &PointCloud,
    reference: Reference<'_>,
) -> Result<Vec<f64>, GeometryError> {
    if cloud.is_empty() {
        return Err(GeometryError::Empty);
    }
    match reference {
        Reference::Manifold(spec) => {
            check_dim(cloud, spec.ambient_dim())?;
            cloud.iter().map(|p| spec.distance_to(p)).collect()
        }
        Reference::Cloud(reference) => {
            if reference.is_empty() {
                return Err(GeometryError::Empty);
            }
            check_dim(cloud, reference.ambient_dim())?;
            let tree = KdTree::build(reference);
            Ok(cloud
                .iter()
                .map(|p| tree.nearest(p).expect("nonempty").1)
                .collect())
        }
    }
}

fn check_dim(cloud: &PointCloud, expected: usize) -> Result<(), GeometryError> {
    if cloud.ambient_dim() != expected {
        return Err(GeometryError::DimensionMismatch {
            index: 0,
            expected,
            found: cloud.ambient_dim(),
        });
    }
    Ok(())
}

/// `sup_{a∈A} inf_{b∈B} ‖a − b‖`.
pub fn directed_hausdorff(a: &PointCloud, b: &PointCloud) -> Result<f64, GeometryError> {
    let d = distances_to(a, Reference::Cloud(b))?;
    Ok(d.into_iter().fold(0.0, f64::max))
}

/// Symmetric Hausdorff distance between two finite point sets.
pub fn hausdorff_distance(a: &PointCloud, b: &PointCloud) -> Result<f64, GeometryError> {
    Ok(directed_hausdorff(a, b)?.max(directed_hausdorff(b, a)?))
}

/// Discrete Federer reach: the inverse of
/// `sup 2‖b − Π_a b‖ / ‖b − a‖²` over all ordered pairs, where `Π_a` projects
/// onto the affine tangent plane at `a` spanned by `frames[a]` (an n×d matrix
/// with orthonormal columns).
///
/// Returns [`FLAT_REACH_SENTINEL`] when no pair shows curvature.
pub fn estimate_reach(cloud: &PointCloud, frames: &[DMatrix<f64>]) -> Result<f64, GeometryError> {
    if cloud.len() < 2 {
        return Err(GeometryError::InvalidArgument(
            "reach estimation needs at least two points".into(),
        ));
    }
    if frames.len() != cloud.len() {
        return Err(GeometryError::InvalidArgument(format!(
            "{} frames supplied for {} points",
            frames.len(),
            cloud.len()
        )));
    }
    let n = cloud.ambient_dim();
    if let Some(bad) = frames.iter().position(|f| f.nrows() != n) {
        return Err(GeometryError::DimensionMismatch {
            index: bad,
            expected: n,
            found: frames[bad].nrows(),
        });
    }
    let mut sup: f64 = 0.0;
    let mut diff = vec![0.0; n];
    for (ia, a) in cloud.iter().enumerate() {
        let frame = &frames[ia];
        for (ib, b) in cloud.iter().enumerate() {
            if ia == ib {
                continue;
            }
            for k in 0..n {
                diff[k] = b[k] - a[k];
            }
            let len2: f64 = diff.iter().map(|v| v * v).sum();
            if len2 == 0.0 {
                return Err(GeometryError::DegeneratePair(ia.min(ib), ia.max(ib)));
            }
            // normal component of b − a
            let mut normal = diff.clone();
            for c in 0..frame.ncols() {
                let col = frame.column(c);
                let coef: f64 = (0..n).map(|k| col[k] * diff[k]).sum();
                for k in 0..n {
                    normal[k] -= coef * col[k];
                }
            }
            let off = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
            sup = sup.max(2.0 * off / len2);
        }
    }
    if sup <= 0.0 || 1.0 / sup > FLAT_REACH_SENTINEL {
        Ok(FLAT_REACH_SENTINEL)
    } else {
        Ok(1.0 / sup)
    }
}
