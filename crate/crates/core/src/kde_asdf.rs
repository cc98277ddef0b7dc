//! Kernel-density asdf: `−log p_N + log N_f` in bandwidth-scaled coordinates,
//! with `p_N(x̂) = (1/N) Σ exp(−π‖x̂ − ŷ_i‖²)` and `x̂ = x / (σ√(2π))`.

use std::f64::consts::{E, PI, SQRT_2};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asdf::{Asdf, AsdfError, AsdfEvaluation};
use crate::geometry::{read_csv, GeometryError, KdTree, PointCloud};

/// Sentinel for ε′ when the concentration bound is vacuous (ε₁ ≥ K₁).
pub const VACUOUS_SENTINEL: f64 = 1e12;

#[derive(Debug, Error)]
pub enum KdeError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Kernel-density asdf over a fixed sample.
#[derive(Debug, Clone)]
pub struct KdeAsdf {
    samples: PointCloud,
    /// Samples in scaled coordinates, row-major.
    scaled: Vec<f64>,
    sigma: f64,
    intrinsic_dim: usize,
    log_nf: f64,
    cutoff: Option<Cutoff>,
}

#[derive(Debug, Clone)]
struct Cutoff {
    /// Radius in scaled coordinates.
    radius: f64,
    tree: KdTree,
}

impl KdeAsdf {
    pub fn new(samples: PointCloud, sigma: f64, intrinsic_dim: usize) -> Result<Self, KdeError> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(KdeError::InvalidParameter(format!(
                "sigma must be positive, got {sigma}"
            )));
        }
        if samples.is_empty() {
            return Err(GeometryError::Empty.into());
        }
        if intrinsic_dim == 0 || intrinsic_dim >= samples.ambient_dim() {
            return Err(KdeError::InvalidParameter(format!(
                "intrinsic dimension {intrinsic_dim} must lie in [1, {})",
                samples.ambient_dim()
            )));
        }
        let factor = 1.0 / (sigma * (2.0 * PI).sqrt());
        let scaled = samples.as_flat().iter().map(|v| v * factor).collect();
        Ok(Self {
            samples,
            scaled,
            sigma,
            intrinsic_dim,
            log_nf: 0.0,
            cutoff: None,
        })
    }

    pub fn with_log_nf(mut self, log_nf: f64) -> Self {
        self.log_nf = log_nf;
        self
    }

    /// Restricts the kernel sum to samples within `k·σ` of the query. Each
    /// omitted term is below `exp(−k²/2)` relative to a kernel peak; queries
    /// with no sample in range report `NumericUnderflow`.
    pub fn with_cutoff(mut self, k_sigma: f64) -> Result<Self, KdeError> {
        if !(k_sigma > 0.0) {
            return Err(KdeError::InvalidParameter(
                "cutoff must be positive".into(),
            ));
        }
        let scaled =
            PointCloud::from_flat(self.samples.ambient_dim(), self.scaled.clone())?;
        self.cutoff = Some(Cutoff {
            radius: k_sigma / (2.0 * PI).sqrt(),
            tree: KdTree::build(&scaled),
        });
        Ok(self)
    }

    pub fn samples(&self) -> &PointCloud {
        &self.samples
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn log_nf(&self) -> f64 {
        self.log_nf
    }

    fn scale_factor(&self) -> f64 {
        1.0 / (self.sigma * (2.0 * PI).sqrt())
    }

    fn scaled_sample(&self, i: usize) -> &[f64] {
        let n = self.samples.ambient_dim();
        &self.scaled[i * n..(i + 1) * n]
    }

    fn active(&self, x: &[f64]) -> Vec<usize> {
        match &self.cutoff {
            Some(c) => c.tree.within_radius(x, c.radius),
            None => (0..self.samples.len()).collect(),
        }
    }

    /// Exponents `−π‖x̂ − ŷ_i‖²` over the active samples with their maximum.
    fn exponents(&self, x: &[f64]) -> Result<(Vec<usize>, Vec<f64>, f64), AsdfError> {
        let n = self.samples.ambient_dim();
        if x.len() != n {
            return Err(AsdfError::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        let idx = self.active(x);
        let exps: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let y = self.scaled_sample(i);
                -PI * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            })
            .collect();
        let max = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !(max >= f64::MIN_POSITIVE.ln()) {
            return Err(AsdfError::NumericUnderflow);
        }
        Ok((idx, exps, max))
    }
}

impl Asdf for KdeAsdf {
    fn ambient_dim(&self) -> usize {
        self.samples.ambient_dim()
    }

    fn intrinsic_dim(&self) -> usize {
        self.intrinsic_dim
    }

    fn to_working(&self, x: &[f64]) -> Vec<f64> {
        let f = self.scale_factor();
        x.iter().map(|v| v * f).collect()
    }

    fn from_working(&self, x: &[f64]) -> Vec<f64> {
        let f = self.sigma * (2.0 * PI).sqrt();
        x.iter().map(|v| v * f).collect()
    }

    fn evaluate_working(&self, x: &[f64]) -> Result<AsdfEvaluation, AsdfError> {
        let n = self.ambient_dim();
        let (idx, exps, max) = self.exponents(x)?;
        let weights: Vec<f64> = exps.iter().map(|e| (e - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        let value = -max - total.ln() + (self.samples.len() as f64).ln() + self.log_nf;

        // Weighted mean and covariance of u_i = ŷ_i − x̂, two-pass.
        let mut mean = DVector::zeros(n);
        for (&i, w) in idx.iter().zip(&weights) {
            let y = self.scaled_sample(i);
            for k in 0..n {
                mean[k] += w * (y[k] - x[k]);
            }
        }
        mean /= total;
        let mut cov = DMatrix::zeros(n, n);
        let mut u = DVector::zeros(n);
        for (&i, w) in idx.iter().zip(&weights) {
            let y = self.scaled_sample(i);
            for k in 0..n {
                u[k] = y[k] - x[k] - mean[k];
            }
            cov.ger(*w, &u, &u, 1.0);
        }
        cov /= total;
        let gradient = -2.0 * PI * mean;
        let hessian = DMatrix::identity(n, n) * (2.0 * PI) - cov * (4.0 * PI * PI);
        AsdfEvaluation::new(value, gradient, hessian)
    }

    fn value_working(&self, x: &[f64]) -> Result<f64, AsdfError> {
        let (_, exps, max) = self.exponents(x)?;
        let total: f64 = exps.iter().map(|e| (e - max).exp()).sum();
        Ok(-max - total.ln() + (self.samples.len() as f64).ln() + self.log_nf)
    }

    /// With `s = to − from` and `δ_i = −π(‖s‖² + 2sᵀ(from − ŷ_i))` the change
    /// is `−log1p(Σ w_i expm1(δ_i))`, `w_i` the normalized kernel weights at
    /// `from`. This stays accurate for steps far below the value's roundoff.
    fn value_change(&self, from: &[f64], to: &[f64]) -> Result<f64, AsdfError> {
        if self.cutoff.is_some() {
            return Ok(self.value_working(to)? - self.value_working(from)?);
        }
        // `to` must itself be in the domain
        self.exponents(to)?;
        let (idx, exps, max) = self.exponents(from)?;
        let s: Vec<f64> = to.iter().zip(from).map(|(a, b)| a - b).collect();
        let s2: f64 = s.iter().map(|v| v * v).sum();
        let mut total = 0.0;
        let mut acc = 0.0;
        for (&i, e) in idx.iter().zip(&exps) {
            let w = (e - max).exp();
            let y = self.scaled_sample(i);
            let cross: f64 = s.iter().zip(from.iter().zip(y)).map(|(sk, (f, yk))| sk * (f - yk)).sum();
            let delta = -PI * (s2 + 2.0 * cross);
            total += w;
            acc += w * delta.exp_m1();
        }
        Ok(-(acc / total).ln_1p())
    }
}

/// Evaluates at a point in original coordinates; derivatives are taken with
/// respect to the scaled coordinates.
pub fn kde_eval(asdf: &KdeAsdf, x: &[f64]) -> Result<AsdfEvaluation, AsdfError> {
    asdf.evaluate_working(&asdf.to_working(x))
}

/// `τ̄ = σ^{5/6}`.
pub fn kde_schedule(sigma: f64) -> Result<f64, KdeError> {
    if !(sigma > 0.0 && sigma <= 1.0) {
        return Err(KdeError::InvalidParameter(format!(
            "sigma must lie in (0, 1], got {sigma}"
        )));
    }
    Ok(sigma.powf(5.0 / 6.0))
}

/// The unspecified universal constants in `C_f` and `C′`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticConstants {
    pub c_f: f64,
    pub c_prime: f64,
}

impl Default for DiagnosticConstants {
    fn default() -> Self {
        Self {
            c_f: 1.0,
            c_prime: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KdeDiagnostics {
    /// Lower bound on `E p_N` over the tube.
    pub k1: f64,
    /// Upper bound on `E p_N` over the tube.
    pub k2: f64,
    pub c_f: f64,
    pub epsilon1: f64,
    pub alpha: f64,
    pub beta: f64,
    /// `ε₁/(K₁ − ε₁)`, or [`VACUOUS_SENTINEL`] when `ε₁ ≥ K₁`.
    pub epsilon_prime: f64,
    pub rho: f64,
    /// ρ with the concentration term dropped, i.e. for `p_N` at its mean.
    pub rho_expectation: f64,
    pub tau_bar: f64,
    pub n_f: f64,
}

/// Diagnostic constants at the asdf's bandwidth and sample size.
///
/// Works in the scaling `τ̂ = τ/σ`, `τ̂̄ = τ̄/σ = σ^{−1/6}`, with `N_f ≈ σ^d/V`.
pub fn kde_diagnostics(
    asdf: &KdeAsdf,
    manifold_volume: f64,
    reach: f64,
    delta: f64,
    constants: DiagnosticConstants,
) -> Result<KdeDiagnostics, KdeError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(KdeError::InvalidParameter(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(manifold_volume > 0.0 && reach > 0.0) {
        return Err(KdeError::InvalidParameter(
            "volume and reach must be positive".into(),
        ));
    }
    let sigma = asdf.sigma;
    let d = asdf.intrinsic_dim as f64;
    let n = asdf.ambient_dim() as f64;
    let big_n = asdf.samples.len() as f64;
    let v = manifold_volume;

    let tau_hat = reach / sigma;
    let tau_bar_hat = sigma.powf(-1.0 / 6.0);
    let c = constants.c_f;
    let c_f = d * c * c * tau_bar_hat.powi(2) / (2.0 * tau_hat * tau_hat)
        + (tau_bar_hat.powi(4) / (tau_hat * tau_hat) + 2.0 * SQRT_2 * tau_bar_hat.powi(3) / tau_hat)
            * PI;

    let n_f = sigma.powf(d) / v;
    let concentration = 1.0 - 2.0 * (-(tau_bar_hat - (d / (2.0 * PI)).sqrt()).powi(2) * PI).exp();
    let k1 = (n_f * (-0.5f64).exp() * concentration * (-c_f).exp()).max(0.0);
    let k2 = c_f.exp() * n_f + (-tau_bar_hat * tau_bar_hat * PI / 2.0).exp();

    let alpha = 4.0 * v * sigma.powf(-d) * (-sigma.powf(-1.0 / 3.0) * PI / 4.0).exp();
    let beta = 4.0 * (-sigma.powf(-1.0 / 3.0) * PI / 2.0).exp();

    let v_hat = v / sigma.powf(d);
    let log_c_prime = constants.c_prime.ln()
        + v_hat.ln()
        + d * 100f64.ln()
        + n * (2.0 * (2.0 * PI / E).sqrt()).ln();
    let epsilon1 = 24.0 / big_n.sqrt() * ((PI * n).sqrt() / 2.0 + log_c_prime.max(0.0).sqrt())
        + (2.0 * (2.0 / delta).ln() / big_n).sqrt();
    let epsilon_prime = if epsilon1 < k1 {
        epsilon1 / (k1 - epsilon1)
    } else {
        VACUOUS_SENTINEL
    };
    let rho = (2.0 * (alpha + beta + c_f + epsilon_prime)).sqrt();
    let rho_expectation = (2.0 * (alpha + beta + c_f)).sqrt();

    Ok(KdeDiagnostics {
        k1,
        k2,
        c_f,
        epsilon1,
        alpha,
        beta,
        epsilon_prime,
        rho,
        rho_expectation,
        tau_bar: sigma.powf(5.0 / 6.0),
        n_f,
    })
}

/// On-disk description of a [`KdeAsdf`]; samples live in a separate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeAsdfFile {
    pub sigma: f64,
    pub intrinsic_dim: usize,
    #[serde(default)]
    pub log_nf: f64,
    pub samples_file: String,
}

impl KdeAsdfFile {
    /// Loads the asdf; a relative `samples_file` is resolved against `base_dir`.
    pub fn load(&self, base_dir: &Path) -> Result<KdeAsdf, KdeError> {
        let path = base_dir.join(&self.samples_file);
        let samples = read_csv(&path)?;
        Ok(KdeAsdf::new(samples, self.sigma, self.intrinsic_dim)?.with_log_nf(self.log_nf))
    }
}

impl KdeAsdf {
    pub fn describe(&self, samples_file: &str) -> KdeAsdfFile {
        KdeAsdfFile {
            sigma: self.sigma,
            intrinsic_dim: self.intrinsic_dim,
            log_nf: self.log_nf,
            samples_file: samples_file.to_string(),
        }
    }

    pub fn from_json_file(path: &Path) -> Result<KdeAsdf, KdeError> {
        let text = std::fs::read_to_string(path).map_err(GeometryError::from)?;
        let file: KdeAsdfFile = serde_json::from_str(&text)?;
        file.load(path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rng_for, sample_manifold, ManifoldKind, ManifoldSpec};
    use rand::Rng;

    fn single(y: &[f64], sigma: f64) -> KdeAsdf {
        KdeAsdf::new(PointCloud::new(vec![y.to_vec(), y.iter().map(|v| v + 10.0).collect()]).unwrap(), sigma, 1)
            .unwrap()
    }

    #[test]
    fn value_zero_at_single_sample() {
        let a = KdeAsdf::new(PointCloud::new(vec![vec![0.2, -0.1]]).unwrap(), 0.1, 1).unwrap();
        let e = kde_eval(&a, &[0.2, -0.1]).unwrap();
        assert_eq!(e.value, 0.0);
        assert!(e.gradient.norm() < 1e-15);
    }

    #[test]
    fn single_gaussian_is_exact_quadratic() {
        let a = KdeAsdf::new(PointCloud::new(vec![vec![0.0, 0.0]]).unwrap(), 0.1, 1).unwrap();
        let xh = [0.3, -0.4];
        let e = a.evaluate_working(&xh).unwrap();
        let r2 = 0.25;
        assert!((e.value - PI * r2).abs() < 1e-14);
        assert!((e.gradient - DVector::from_column_slice(&[2.0 * PI * 0.3, -2.0 * PI * 0.4])).norm() < 1e-14);
        assert!((e.hessian - DMatrix::identity(2, 2) * (2.0 * PI)).norm() < 1e-12);
    }

    #[test]
    fn bisector_gradient_vanishes_across_axis() {
        let a = KdeAsdf::new(PointCloud::new(vec![vec![0.1, 0.0], vec![-0.1, 0.0]]).unwrap(), 0.1, 1)
            .unwrap();
        let xh = a.to_working(&[0.0, 0.07]);
        let e = a.evaluate_working(&xh).unwrap();
        assert!(e.gradient[0].abs() < 1e-14);
        let h = 1e-6;
        let fd = (a.value_working(&[xh[0] + h, xh[1]]).unwrap()
            - a.value_working(&[xh[0] - h, xh[1]]).unwrap())
            / (2.0 * h);
        assert!(fd.abs() < 1e-8);
    }

    #[test]
    fn far_query_underflows() {
        let a = single(&[0.0, 0.0], 0.01);
        assert_eq!(kde_eval(&a, &[0.5, 0.5]), Err(AsdfError::NumericUnderflow));
        // about 37σ is still representable
        assert!(kde_eval(&a, &[0.37, 0.0]).is_ok());
    }

    #[test]
    fn log_nf_shifts_value_only() {
        let cloud = sample_manifold(&ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap(), 50, 1).unwrap();
        let a = KdeAsdf::new(cloud.clone(), 0.1, 1).unwrap();
        let b = KdeAsdf::new(cloud, 0.1, 1).unwrap().with_log_nf(-3.5);
        let x = a.to_working(&[0.9, 0.2]);
        let ea = a.evaluate_working(&x).unwrap();
        let eb = b.evaluate_working(&x).unwrap();
        assert_eq!(ea.gradient, eb.gradient);
        assert_eq!(ea.hessian, eb.hessian);
        assert!((eb.value - ea.value + 3.5).abs() < 1e-12);
    }

    #[test]
    fn value_change_matches_difference() {
        let cloud = sample_manifold(&ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap(), 200, 2).unwrap();
        let a = KdeAsdf::new(cloud, 0.05, 1).unwrap();
        let mut rng = rng_for(3, 0);
        for _ in 0..50 {
            let x = a.to_working(&[1.0 + 0.05 * rng.random::<f64>(), 0.1 * rng.random::<f64>()]);
            let y: Vec<f64> = x.iter().map(|v| v + 0.3 * (rng.random::<f64>() - 0.5)).collect();
            let direct = a.value_working(&y).unwrap() - a.value_working(&x).unwrap();
            let precise = a.value_change(&x, &y).unwrap();
            assert!((direct - precise).abs() < 1e-10 * (1.0 + direct.abs()), "{direct} {precise}");
        }
    }

    #[test]
    fn cutoff_agrees_near_samples() {
        let cloud = sample_manifold(&ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap(), 300, 4).unwrap();
        let full = KdeAsdf::new(cloud.clone(), 0.05, 1).unwrap();
        let cut = KdeAsdf::new(cloud, 0.05, 1).unwrap().with_cutoff(6.0).unwrap();
        let x = full.to_working(&[0.0, 1.02]);
        let a = full.evaluate_working(&x).unwrap();
        let b = cut.evaluate_working(&x).unwrap();
        assert!((a.value - b.value).abs() < 1e-6);
        assert!((a.gradient - b.gradient).norm() < 1e-5);
    }

    #[test]
    fn schedule_values() {
        assert_eq!(kde_schedule(1.0).unwrap(), 1.0);
        assert!((kde_schedule(0.01).unwrap() - 0.021544).abs() < 1e-5);
        let (a, b) = (kde_schedule(0.2).unwrap(), kde_schedule(0.1).unwrap());
        assert!((b.powf(1.2) / a.powf(1.2) - 0.5).abs() < 1e-12);
        assert!(kde_schedule(0.0).is_err());
    }

    #[test]
    fn c_f_matches_simplified_form() {
        // Independent evaluation of dσ^{5/3}/(2τ²) + (σ^{4/3}/τ² + 2√2σ^{1/2}/τ)π
        // at σ = 0.1, d = 1, τ = 1.
        let s: f64 = 0.1;
        let oracle = s.powf(5.0 / 3.0) / 2.0 + (s.powf(4.0 / 3.0) + 2.0 * 2f64.sqrt() * s.sqrt()) * PI;
        let cloud = PointCloud::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let a = KdeAsdf::new(cloud, s, 1).unwrap();
        let diag = kde_diagnostics(&a, 2.0 * PI, 1.0, 0.1, DiagnosticConstants::default()).unwrap();
        assert!((diag.c_f - oracle).abs() < 1e-12);
        assert!((diag.c_f - 2.9665).abs() < 1e-3, "{}", diag.c_f);
    }

    #[test]
    fn epsilon1_decays_like_inverse_sqrt_n() {
        let spec = ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap();
        let e = |n| {
            let a = KdeAsdf::new(sample_manifold(&spec, n, 1).unwrap(), 0.05, 1).unwrap();
            kde_diagnostics(&a, spec.volume(), 1.0, 0.05, DiagnosticConstants::default())
                .unwrap()
                .epsilon1
        };
        assert!((e(400) / e(1600) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn k_ratio_tends_to_exp_minus_half() {
        let a = single(&[0.0, 0.0], 1e-12);
        let d = kde_diagnostics(&a, 2.0 * PI, 1.0, 0.1, DiagnosticConstants::default()).unwrap();
        assert!(d.k1 <= d.k2);
        assert!((d.k1 / d.k2 - (-0.5f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cloud = PointCloud::new(vec![vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        crate::geometry::write_csv(&cloud, &dir.path().join("s.csv"), false).unwrap();
        let a = KdeAsdf::new(cloud, 0.07, 1).unwrap().with_log_nf(0.5);
        let json = serde_json::to_string(&a.describe("s.csv")).unwrap();
        std::fs::write(dir.path().join("a.json"), json).unwrap();
        let b = KdeAsdf::from_json_file(&dir.path().join("a.json")).unwrap();
        assert_eq!(b.samples(), a.samples());
        assert_eq!((b.sigma(), b.log_nf()), (0.07, 0.5));
    }
}
