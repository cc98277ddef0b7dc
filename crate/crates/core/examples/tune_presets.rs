//! Bandwidth sweep behind the benchmark presets.
//!
//! cargo run --release --example tune_presets -- [trials] [manifold scale]
//!
//! For every table cell, prints mean RMS (manifold and sample reference),
//! convergence fraction and bandwidth over a grid of σ (KDE) or schedule
//! scales c (local PCA).

use ridgecraft::geometry::{ManifoldKind, ManifoldSpec};
use ridgecraft::metrics::{run_experiment, AsdfKind, ExperimentConfig, ReferenceMode};

fn main() {
    let trials: usize = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("trials must be an integer"))
        .unwrap_or(5);
    let args: Vec<String> = std::env::args().collect();
    let cells = match args.get(2..4) {
        Some([kind, scale]) => vec![(
            kind.parse::<ManifoldKind>().expect("manifold kind"),
            scale.parse::<f64>().expect("scale"),
        )],
        _ => vec![
            (ManifoldKind::Circle2D, 1.0),
            (ManifoldKind::ClosedCurve3D, 0.5),
            (ManifoldKind::Sphere3D, 0.12),
        ],
    };
    println!("manifold,scale,asdf,knob,bandwidth,rms_manifold,rms_sample,convergence");
    for (kind, scale) in cells {
        let spec = ManifoldSpec::new(kind, scale).expect("valid scale");
        for sigma in [0.02, 0.03, 0.04, 0.05, 0.07] {
            let mut c = ExperimentConfig::new(spec, AsdfKind::Kde);
            c.trials = trials;
            c.bandwidth = Some(sigma);
            report(&c, sigma);
        }
        for pca_scale in [0.5, 0.54, 0.6, 0.8, 1.0, 2.0, 3.0, 4.5, 6.0, 9.0, 13.0, 15.0] {
            let mut c = ExperimentConfig::new(spec, AsdfKind::Pca);
            c.trials = trials;
            c.pca_scale = pca_scale;
            report(&c, pca_scale);
        }
    }
}

fn report(config: &ExperimentConfig, knob: f64) {
    let mut config = config.clone();
    config.reference = ReferenceMode::Manifold;
    match run_experiment(&config) {
        Ok(r) => {
            let sample: Vec<f64> = r.trials.iter().filter_map(|t| t.rms_to_sample).collect();
            let sample_mean = sample.iter().sum::<f64>() / sample.len() as f64;
            println!(
                "{},{},{},{},{:.4},{:.3e},{:.3e},{:.3}",
                config.manifold.kind(),
                config.manifold.scale(),
                config.asdf,
                knob,
                r.bandwidth,
                r.mean_rms,
                sample_mean,
                r.convergence_fraction
            );
        }
        Err(e) => println!(
            "{},{},{},{},-,error: {e}",
            config.manifold.kind(),
            config.manifold.scale(),
            config.asdf,
            knob
        ),
    }
}
