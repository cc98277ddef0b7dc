use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::bump::bump_theta;
use super::{estimate_tangent_indexed, PcaError};
use crate::asdf::{Asdf, AsdfError, AsdfEvaluation};
use crate::geometry::{build_net, GeometryError, KdTree, PointCloud};

/// Cylinder `τ̄(B_d × B_{n−d})` placed at `center` with tangent frame `basis`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cylinder {
    pub center: DVector<f64>,
    /// n×d, orthonormal columns.
    pub basis: DMatrix<f64>,
    pub eigen_gap: f64,
}

impl Cylinder {
    /// Tangential coordinates `Bᵀu` and normal part `u − BBᵀu` of `u = z − center`.
    pub fn split(&self, z: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let u = DVector::from_column_slice(z) - &self.center;
        let t = self.basis.transpose() * &u;
        let r = u - &self.basis * &t;
        (t, r)
    }

    pub fn contains(&self, z: &[f64], tau_bar: f64) -> bool {
        let (t, r) = self.split(z);
        t.norm() <= tau_bar && r.norm() <= tau_bar
    }
}

/// How [`fobar_eval`] obtains derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub enum DerivativeMode {
    #[default]
    Analytic,
    /// Central differences of the value with the given step (debugging aid).
    FiniteDifference { step: f64 },
}

/// Cylinders of a shared half-width τ̄, indexed by center.
#[derive(Debug, Clone)]
pub struct CylinderPacket {
    tau_bar: f64,
    intrinsic_dim: usize,
    ambient_dim: usize,
    cylinders: Vec<Cylinder>,
    tree: KdTree,
    /// Fraction of the construction sample inside at least one cylinder.
    coverage: Option<f64>,
    mode: DerivativeMode,
}

impl CylinderPacket {
    pub fn new(tau_bar: f64, cylinders: Vec<Cylinder>) -> Result<Self, PcaError> {
        if !(tau_bar > 0.0 && tau_bar.is_finite()) {
            return Err(PcaError::InvalidParameter(format!(
                "tau_bar must be positive, got {tau_bar}"
            )));
        }
        let first = cylinders
            .first()
            .ok_or_else(|| PcaError::InvalidParameter("packet has no cylinders".into()))?;
        let (n, d) = first.basis.shape();
        if d == 0 || d >= n {
            return Err(PcaError::InvalidParameter(format!(
                "intrinsic dimension {d} must lie in [1, {n})"
            )));
        }
        for (k, c) in cylinders.iter().enumerate() {
            if c.center.len() != n || c.basis.shape() != (n, d) {
                return Err(PcaError::InvalidParameter(format!(
                    "cylinder {k} has inconsistent dimensions"
                )));
            }
            let gram = c.basis.transpose() * &c.basis;
            if (gram - DMatrix::identity(d, d)).amax() > 1e-10 {
                return Err(PcaError::InvalidParameter(format!(
                    "cylinder {k} basis is not orthonormal"
                )));
            }
        }
        let centers = PointCloud::from_flat(
            n,
            cylinders.iter().flat_map(|c| c.center.iter().copied()).collect(),
        )?;
        Ok(Self {
            tau_bar,
            intrinsic_dim: d,
            ambient_dim: n,
            tree: KdTree::build(&centers),
            cylinders,
            coverage: None,
            mode: DerivativeMode::Analytic,
        })
    }

    pub fn with_derivative_mode(mut self, mode: DerivativeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn tau_bar(&self) -> f64 {
        self.tau_bar
    }

    pub fn cylinders(&self) -> &[Cylinder] {
        &self.cylinders
    }

    pub fn len(&self) -> usize {
        self.cylinders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cylinders.is_empty()
    }

    /// Fraction of the construction sample covered, if built from a sample.
    pub fn coverage(&self) -> Option<f64> {
        self.coverage
    }

    pub fn centers(&self) -> PointCloud {
        PointCloud::from_flat(
            self.ambient_dim,
            self.cylinders.iter().flat_map(|c| c.center.iter().copied()).collect(),
        )
        .expect("centers validated at construction")
    }

    /// Indices of the cylinders containing `z`, ascending.
    pub fn containing(&self, z: &[f64]) -> Vec<usize> {
        self.tree
            .within_radius(z, self.tau_bar * 2f64.sqrt())
            .into_iter()
            .filter(|&i| self.cylinders[i].contains(z, self.tau_bar))
            .collect()
    }

    /// Fraction of the points of `cloud` lying in at least one cylinder.
    pub fn coverage_of(&self, cloud: &PointCloud) -> f64 {
        let covered = cloud.iter().filter(|p| !self.containing(p).is_empty()).count();
        covered as f64 / cloud.len().max(1) as f64
    }

    /// Restriction of the packet to a subset of cylinders (for locality checks).
    pub fn subset(&self, indices: &[usize]) -> Result<Self, PcaError> {
        let cyl = indices.iter().map(|&i| self.cylinders[i].clone()).collect();
        Ok(Self::new(self.tau_bar, cyl)?.with_derivative_mode(self.mode))
    }

    fn check_dim(&self, z: &[f64]) -> Result<(), AsdfError> {
        if z.len() != self.ambient_dim {
            return Err(AsdfError::DimensionMismatch {
                expected: self.ambient_dim,
                found: z.len(),
            });
        }
        Ok(())
    }

    fn value_at(&self, z: &[f64]) -> Result<f64, AsdfError> {
        self.check_dim(z)?;
        let members = self.containing(z);
        if members.is_empty() {
            return Err(AsdfError::OutsidePacket);
        }
        let scale = 1.0 / (2.0 * self.tau_bar);
        let (mut s, mut w_total) = (0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &members {
            let (t, r) = self.cylinders[i].split(z);
            let y: Vec<f64> = t.iter().map(|v| v * scale).collect();
            let w = bump_theta(&y).value;
            let phi = r.norm_squared();
            s += w * phi;
            w_total += w;
            lo = lo.min(phi);
            hi = hi.max(phi);
        }
        if w_total <= 0.0 {
            return Err(AsdfError::ZeroWeight);
        }
        Ok((s / w_total).clamp(lo, hi))
    }

    fn analytic(&self, z: &[f64]) -> Result<AsdfEvaluation, AsdfError> {
        self.check_dim(z)?;
        let members = self.containing(z);
        if members.is_empty() {
            return Err(AsdfError::OutsidePacket);
        }
        let n = self.ambient_dim;
        let scale = 1.0 / (2.0 * self.tau_bar);
        let mut s = 0.0;
        let mut w_total = 0.0;
        let mut grad_s = DVector::zeros(n);
        let mut grad_w = DVector::zeros(n);
        let mut hess_s = DMatrix::zeros(n, n);
        let mut hess_w = DMatrix::zeros(n, n);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &members {
            let cyl = &self.cylinders[i];
            let (t, r) = cyl.split(z);
            let y: Vec<f64> = t.iter().map(|v| v * scale).collect();
            let bump = bump_theta(&y);
            let w = bump.value;
            let phi = r.norm_squared();
            let dphi = 2.0 * &r;
            let ddphi = (DMatrix::identity(n, n) - &cyl.basis * cyl.basis.transpose()) * 2.0;
            let dw = &cyl.basis * bump.gradient * scale;
            let ddw = &cyl.basis * bump.hessian * cyl.basis.transpose() * (scale * scale);

            s += w * phi;
            w_total += w;
            grad_s += &dphi * w + &dw * phi;
            grad_w += &dw;
            hess_s += &ddphi * w + &dphi * dw.transpose() + &dw * dphi.transpose() + &ddw * phi;
            hess_w += ddw;
            lo = lo.min(phi);
            hi = hi.max(phi);
        }
        if w_total <= 0.0 {
            return Err(AsdfError::ZeroWeight);
        }
        let f = s / w_total;
        let grad_f = (grad_s - &grad_w * f) / w_total;
        let hess_f = (hess_s - hess_w * f - &grad_f * grad_w.transpose() - &grad_w * grad_f.transpose())
            / w_total;
        AsdfEvaluation::new(f.clamp(lo, hi), grad_f, hess_f)
    }

    fn finite_difference(&self, z: &[f64], h: f64) -> Result<AsdfEvaluation, AsdfError> {
        let n = self.ambient_dim;
        let f0 = self.value_at(z)?;
        let shifted = |steps: &[(usize, f64)]| {
            let mut p = z.to_vec();
            for &(k, s) in steps {
                p[k] += s;
            }
            self.value_at(&p)
        };
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for i in 0..n {
            let fp = shifted(&[(i, h)])?;
            let fm = shifted(&[(i, -h)])?;
            grad[i] = (fp - fm) / (2.0 * h);
            hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
            for j in 0..i {
                let v = (shifted(&[(i, h), (j, h)])? - shifted(&[(i, h), (j, -h)])?
                    - shifted(&[(i, -h), (j, h)])?
                    + shifted(&[(i, -h), (j, -h)])?)
                    / (4.0 * h * h);
                hess[(i, j)] = v;
                hess[(j, i)] = v;
            }
        }
        AsdfEvaluation::new(f0, grad, hess)
    }
}

impl Asdf for CylinderPacket {
    fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    fn evaluate_working(&self, z: &[f64]) -> Result<AsdfEvaluation, AsdfError> {
        match self.mode {
            DerivativeMode::Analytic => self.analytic(z),
            DerivativeMode::FiniteDifference { step } => self.finite_difference(z, step),
        }
    }

    fn value_working(&self, z: &[f64]) -> Result<f64, AsdfError> {
        self.value_at(z)
    }
}

/// F^ō at `z` with analytic (or, if so configured, finite-difference)
/// derivatives.
pub fn fobar_eval(packet: &CylinderPacket, z: &[f64]) -> Result<AsdfEvaluation, AsdfError> {
    packet.evaluate_working(z)
}

/// Net of `cloud` at covering radius τ̄/2 and separation τ̄/2.9, with a local
/// PCA frame at every net point.
pub fn build_packet(
    cloud: &PointCloud,
    tau_bar: f64,
    intrinsic_dim: usize,
) -> Result<CylinderPacket, PcaError> {
    if !(tau_bar > 0.0) {
        return Err(PcaError::InvalidParameter(format!(
            "tau_bar must be positive, got {tau_bar}"
        )));
    }
    let net = build_net(cloud, tau_bar / 2.0, tau_bar / 2.9)?;
    let tree = KdTree::build(cloud);
    let cylinders = net
        .centers
        .iter()
        .map(|c| {
            let frame = estimate_tangent_indexed(cloud, &tree, c, tau_bar, intrinsic_dim)?;
            Ok(Cylinder {
                center: DVector::from_column_slice(c),
                basis: frame.basis,
                eigen_gap: frame.eigen_gap,
            })
        })
        .collect::<Result<Vec<_>, PcaError>>()?;
    let mut packet = CylinderPacket::new(tau_bar, cylinders)?;
    packet.coverage = Some(packet.coverage_of(cloud));
    Ok(packet)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylinderRecord {
    pub center: Vec<f64>,
    /// Column-major n×d.
    pub basis: Vec<f64>,
    pub eigen_gap: f64,
}

/// On-disk form of a packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketFile {
    pub tau_bar: f64,
    pub cylinders: Vec<CylinderRecord>,
}

impl PacketFile {
    pub fn from_packet(packet: &CylinderPacket) -> Self {
        Self {
            tau_bar: packet.tau_bar,
            cylinders: packet
                .cylinders
                .iter()
                .map(|c| CylinderRecord {
                    center: c.center.iter().copied().collect(),
                    basis: c.basis.iter().copied().collect(),
                    eigen_gap: c.eigen_gap,
                })
                .collect(),
        }
    }

    pub fn into_packet(self) -> Result<CylinderPacket, PcaError> {
        let cylinders = self
            .cylinders
            .into_iter()
            .enumerate()
            .map(|(k, rec)| {
                let n = rec.center.len();
                if n == 0 || rec.basis.len() % n != 0 {
                    return Err(PcaError::InvalidParameter(format!(
                        "cylinder {k}: basis length {} is not a multiple of {n}",
                        rec.basis.len()
                    )));
                }
                let d = rec.basis.len() / n;
                Ok(Cylinder {
                    center: DVector::from_vec(rec.center),
                    basis: DMatrix::from_vec(n, d, rec.basis),
                    eigen_gap: rec.eigen_gap,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        CylinderPacket::new(self.tau_bar, cylinders)
    }

    pub fn read(path: &Path) -> Result<CylinderPacket, PcaError> {
        let text = std::fs::read_to_string(path).map_err(GeometryError::from)?;
        serde_json::from_str::<PacketFile>(&text)?.into_packet()
    }
}
