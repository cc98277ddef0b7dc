//! Multi-trial benchmark of both asdfs on the synthetic manifolds, and
//! Hausdorff convergence-rate studies.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    distances_to, hausdorff_distance, perturb_with, rng_for, GeometryError, ManifoldKind,
    ManifoldSpec, PointCloud, Reference,
};
use crate::kde_asdf::{KdeAsdf, KdeError};
use crate::pca_asdf::{build_packet, pca_schedule, PcaError};
use crate::ridge::{converged_points, run_descent, DescentConfig, DescentTrace, RidgeError};

const STREAM_FIT: u64 = 1;
const STREAM_MESH: u64 = 2;
const STREAM_NOISE: u64 = 3;
const STREAM_REFERENCE: u64 = 4;

/// KDE bandwidth used when a config leaves it unset.
pub const DEFAULT_KDE_SIGMA: f64 = 0.05;
/// Step size for descent on F^ō when no descent config is given.
pub const DEFAULT_PCA_STEP: f64 = 0.25;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("no mesh point converged in any trial")]
    NoConvergedPoints,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Kde(#[from] KdeError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Ridge(#[from] RidgeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AsdfKind {
    Kde,
    Pca,
}

impl AsdfKind {
    pub fn name(self) -> &'static str {
        match self {
            AsdfKind::Kde => "kde",
            AsdfKind::Pca => "pca",
        }
    }
}

impl fmt::Display for AsdfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AsdfKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kde" => Ok(AsdfKind::Kde),
            "pca" => Ok(AsdfKind::Pca),
            other => Err(format!("unknown asdf kind `{other}` (expected kde or pca)")),
        }
    }
}

/// What the RMS of the converged finals is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceMode {
    /// Nearest point of a fresh `n_reference` sample.
    Sample,
    /// Closest point of the analytic manifold.
    Manifold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub manifold: ManifoldSpec,
    pub asdf: AsdfKind,
    pub n_fit: usize,
    pub n_mesh: usize,
    pub noise_sd: f64,
    pub n_reference: usize,
    pub trials: usize,
    /// σ for KDE, τ̄ for local PCA. Unset means the default for the kind.
    pub bandwidth: Option<f64>,
    /// ε and c of the `τ̄ = c N^{−1/(d+ε)}` schedule, used when `bandwidth`
    /// is unset.
    pub pca_epsilon: f64,
    pub pca_scale: f64,
    pub reference: ReferenceMode,
    pub seed: u64,
    pub descent: Option<DescentConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            manifold: ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).expect("valid scale"),
            asdf: AsdfKind::Kde,
            n_fit: 1000,
            n_mesh: 1000,
            noise_sd: 0.05,
            n_reference: 10000,
            trials: 100,
            bandwidth: None,
            pca_epsilon: 0.5,
            pca_scale: 1.0,
            reference: ReferenceMode::Sample,
            seed: 0,
            descent: None,
        }
    }
}

impl ExperimentConfig {
    pub fn new(manifold: ManifoldSpec, asdf: AsdfKind) -> Self {
        Self {
            manifold,
            asdf,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let counts = [
            ("n_fit", self.n_fit),
            ("n_mesh", self.n_mesh),
            ("n_reference", self.n_reference),
            ("trials", self.trials),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(MetricsError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(MetricsError::InvalidConfig(format!(
                "noise_sd must be finite and nonnegative, got {}",
                self.noise_sd
            )));
        }
        if let Some(b) = self.bandwidth {
            if !(b > 0.0 && b.is_finite()) {
                return Err(MetricsError::InvalidConfig(format!(
                    "bandwidth must be positive, got {b}"
                )));
            }
        }
        if let Some(d) = &self.descent {
            d.validate()?;
        }
        self.resolved_bandwidth()?;
        Ok(())
    }

    pub fn resolved_bandwidth(&self) -> Result<f64, MetricsError> {
        if let Some(b) = self.bandwidth {
            return Ok(b);
        }
        Ok(match self.asdf {
            AsdfKind::Kde => DEFAULT_KDE_SIGMA,
            AsdfKind::Pca => pca_schedule(
                self.n_fit,
                self.manifold.intrinsic_dim(),
                self.pca_epsilon,
                self.pca_scale,
            )?,
        })
    }

    pub fn resolved_descent(&self) -> DescentConfig {
        self.descent.unwrap_or_else(|| match self.asdf {
            AsdfKind::Kde => DescentConfig::default(),
            AsdfKind::Pca => DescentConfig {
                step_size: DEFAULT_PCA_STEP,
                ..DescentConfig::default()
            },
        })
    }

    fn trial_seed(&self, trial: usize) -> u64 {
        self.seed.wrapping_add(trial as u64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub converged: usize,
    pub mesh_points: usize,
    /// RMS under the configured reference mode; absent when nothing converged.
    pub rms: Option<f64>,
    pub rms_to_sample: Option<f64>,
    pub rms_to_manifold: Option<f64>,
    /// Symmetric Hausdorff distance between the finals and the reference sample.
    pub hausdorff: Option<f64>,
    /// `sup` over finals of the analytic distance to the manifold.
    pub max_manifold_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub bandwidth: f64,
    pub descent: DescentConfig,
    pub mean_rms: f64,
    /// One entry per trial with at least one converged final.
    pub rms_per_trial: Vec<f64>,
    pub convergence_fraction: f64,
    /// Mean over trials of the symmetric finals/reference Hausdorff distance.
    pub hausdorff_estimate: f64,
    pub mean_max_manifold_distance: f64,
    pub trials: Vec<TrialRecord>,
}

impl ExperimentReport {
    fn new(
        config: ExperimentConfig,
        bandwidth: f64,
        descent: DescentConfig,
        trials: Vec<TrialRecord>,
    ) -> Result<Self, MetricsError> {
        let rms_per_trial: Vec<f64> = trials.iter().filter_map(|t| t.rms).collect();
        if rms_per_trial.is_empty() {
            return Err(MetricsError::NoConvergedPoints);
        }
        let mean_rms = mean(&rms_per_trial);
        let hausdorff: Vec<f64> = trials.iter().filter_map(|t| t.hausdorff).collect();
        let sup: Vec<f64> = trials.iter().filter_map(|t| t.max_manifold_distance).collect();
        let converged: usize = trials.iter().map(|t| t.converged).sum();
        let total: usize = trials.iter().map(|t| t.mesh_points).sum();
        let report = Self {
            config,
            bandwidth,
            descent,
            mean_rms,
            convergence_fraction: converged as f64 / total as f64,
            hausdorff_estimate: mean(&hausdorff),
            mean_max_manifold_distance: mean(&sup),
            rms_per_trial,
            trials,
        };
        assert!((report.mean_rms - mean(&report.rms_per_trial)).abs() <= 1e-12);
        Ok(report)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `trial,rms` rows.
    pub fn rms_csv(&self) -> String {
        let mut out = String::from("trial,rms\n");
        for t in &self.trials {
            if let Some(r) = t.rms {
                writeln!(out, "{},{}", t.trial, r).expect("write to string");
            }
        }
        out
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs every trial of `config`. Trials run concurrently; the report does not
/// depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, MetricsError> {
    config.validate()?;
    let bandwidth = config.resolved_bandwidth()?;
    let descent = config.resolved_descent();
    let trials = (0..config.trials)
        .into_par_iter()
        .map(|t| run_trial(config, bandwidth, &descent, t))
        .collect::<Result<Vec<_>, _>>()?;
    ExperimentReport::new(config.clone(), bandwidth, descent, trials)
}

fn run_trial(
    config: &ExperimentConfig,
    bandwidth: f64,
    descent: &DescentConfig,
    trial: usize,
) -> Result<TrialRecord, MetricsError> {
    let spec = &config.manifold;
    let seed = config.trial_seed(trial);
    let fit = spec.sample_with(&mut rng_for(seed, STREAM_FIT), config.n_fit);
    let clean = spec.sample_with(&mut rng_for(seed, STREAM_MESH), config.n_mesh);
    let mesh = perturb_with(&mut rng_for(seed, STREAM_NOISE), &clean, config.noise_sd)?;
    let traces = descend(config.asdf, fit, bandwidth, spec.intrinsic_dim(), &mesh, descent)?;
    let converged = traces.iter().filter(|t| t.converged).count();
    let mut record = TrialRecord {
        trial,
        seed,
        converged,
        mesh_points: mesh.len(),
        rms: None,
        rms_to_sample: None,
        rms_to_manifold: None,
        hausdorff: None,
        max_manifold_distance: None,
    };
    let Some(finals) = converged_points(&traces, spec.ambient_dim()) else {
        return Ok(record);
    };
    let reference = spec.sample_with(&mut rng_for(seed, STREAM_REFERENCE), config.n_reference);
    let to_sample = distances_to(&finals, Reference::Cloud(&reference))?;
    let to_manifold = distances_to(&finals, Reference::Manifold(spec))?;
    let hausdorff = hausdorff_distance(&finals, &reference)?;
    let nn_sup = to_sample.iter().copied().fold(0.0, f64::max);
    assert!(hausdorff >= nn_sup);
    record.rms_to_sample = Some(rms(&to_sample));
    record.rms_to_manifold = Some(rms(&to_manifold));
    record.rms = match config.reference {
        ReferenceMode::Sample => record.rms_to_sample,
        ReferenceMode::Manifold => record.rms_to_manifold,
    };
    record.hausdorff = Some(hausdorff);
    record.max_manifold_distance = Some(to_manifold.iter().copied().fold(0.0, f64::max));
    Ok(record)
}

fn rms(distances: &[f64]) -> f64 {
    (distances.iter().map(|d| d * d).sum::<f64>() / distances.len() as f64).sqrt()
}

fn descend(
    kind: AsdfKind,
    fit: PointCloud,
    bandwidth: f64,
    d: usize,
    mesh: &PointCloud,
    descent: &DescentConfig,
) -> Result<Vec<DescentTrace>, MetricsError> {
    let output = match kind {
        AsdfKind::Kde => run_descent(&KdeAsdf::new(fit, bandwidth, d)?, mesh, descent)?,
        AsdfKind::Pca => run_descent(&build_packet(&fit, bandwidth, d)?, mesh, descent)?,
    };
    Ok(output.traces)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub bandwidth: f64,
    pub n_fit: usize,
    /// Mean over trials of `sup` over converged finals of the distance to the
    /// manifold.
    pub hausdorff: f64,
    pub convergence_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateStudy {
    pub manifold: ManifoldSpec,
    pub asdf: AsdfKind,
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `log hausdorff` against `log bandwidth`.
    pub slope: f64,
}

impl RateStudy {
    /// `bandwidth,n_fit,hausdorff,convergence_fraction` rows and a `# slope`
    /// footer.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bandwidth,n_fit,hausdorff,convergence_fraction\n");
        for p in &self.points {
            writeln!(
                out,
                "{},{},{},{}",
                p.bandwidth, p.n_fit, p.hausdorff, p.convergence_fraction
            )
            .expect("write to string");
        }
        writeln!(out, "# slope={}", self.slope).expect("write to string");
        out
    }
}

/// Sample size that keeps sampling adequate at `bandwidth`: the base `n_fit`
/// at the first bandwidth, scaled by `(b₀/b)^d` for KDE and `(b₀/b)^{d+ε}`
/// for local PCA.
pub fn scaled_sample_size(base: &ExperimentConfig, first: f64, bandwidth: f64) -> usize {
    let d = base.manifold.intrinsic_dim() as f64;
    let exponent = match base.asdf {
        AsdfKind::Kde => d,
        AsdfKind::Pca => d + base.pca_epsilon,
    };
    (base.n_fit as f64 * (first / bandwidth).powf(exponent)).ceil() as usize
}

/// Hausdorff distance of the putative manifold at each bandwidth.
///
/// `base.n_fit` is the sample size at the first (largest) bandwidth.
pub fn rate_study(
    spec: ManifoldSpec,
    kind: AsdfKind,
    bandwidths: &[f64],
    base: &ExperimentConfig,
) -> Result<RateStudy, MetricsError> {
    if bandwidths.len() < 3 {
        return Err(MetricsError::InvalidConfig(format!(
            "a rate study needs at least 3 bandwidths, got {}",
            bandwidths.len()
        )));
    }
    if bandwidths.windows(2).any(|w| !(w[1] < w[0])) || !(bandwidths[bandwidths.len() - 1] > 0.0) {
        return Err(MetricsError::InvalidConfig(
            "bandwidths must be positive and strictly decreasing".into(),
        ));
    }
    let mut config = base.clone();
    config.manifold = spec;
    config.asdf = kind;
    let mut points = Vec::with_capacity(bandwidths.len());
    for &b in bandwidths {
        let mut c = config.clone();
        c.bandwidth = Some(b);
        c.n_fit = scaled_sample_size(&config, bandwidths[0], b);
        let report = run_experiment(&c)?;
        points.push(RatePoint {
            bandwidth: b,
            n_fit: c.n_fit,
            hausdorff: report.mean_max_manifold_distance,
            convergence_fraction: report.convergence_fraction,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.bandwidth.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.hausdorff.ln()).collect();
    Ok(RateStudy {
        manifold: spec,
        asdf: kind,
        slope: least_squares_slope(&xs, &ys),
        points,
    })
}

/// Slope of the ordinary least-squares line through `(xs, ys)`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean(xs);
    let my = mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Ci,
    Full,
}

impl Profile {
    pub fn trials(self) -> usize {
        match self {
            Profile::Ci => 20,
            Profile::Full => 100,
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ci" => Ok(Profile::Ci),
            "full" => Ok(Profile::Full),
            other => Err(format!("unknown profile `{other}` (expected ci or full)")),
        }
    }
}

/// Tuned config for one cell of the benchmark table. Bandwidth choices come
/// from `examples/tune_presets.rs`.
pub fn preset(kind: ManifoldKind, asdf: AsdfKind, profile: Profile) -> ExperimentConfig {
    let (scale, sigma, pca_scale) = match kind {
        ManifoldKind::Circle2D => (1.0, DEFAULT_KDE_SIGMA, 4.5),
        ManifoldKind::ClosedCurve3D => (0.5, DEFAULT_KDE_SIGMA, 13.0),
        // the local-PCA net needs τ̄/R ≳ 0.27 at N = 1000, hence the small
        // radius; σ shrinks with it
        ManifoldKind::Sphere3D => (0.12, 0.02, 0.54),
    };
    let manifold = ManifoldSpec::new(kind, scale).expect("preset scale is valid");
    let mut config = ExperimentConfig::new(manifold, asdf);
    config.trials = profile.trials();
    config.reference = ReferenceMode::Manifold;
    match asdf {
        AsdfKind::Kde => config.bandwidth = Some(sigma),
        AsdfKind::Pca => config.pca_scale = pca_scale,
    }
    config
}

/// All six cells in table order: rows KDE then PCA, columns circle, curve,
/// sphere.
pub fn table_presets(profile: Profile) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for asdf in [AsdfKind::Kde, AsdfKind::Pca] {
        for kind in [
            ManifoldKind::Circle2D,
            ManifoldKind::ClosedCurve3D,
            ManifoldKind::Sphere3D,
        ] {
            out.push(preset(kind, asdf, profile));
        }
    }
    out
}
