use ridgecraft::geometry::{ManifoldKind, ManifoldSpec};
use ridgecraft::metrics::{
    least_squares_slope, preset, rate_study, run_experiment, table_presets, AsdfKind,
    ExperimentConfig, MetricsError, Profile, ReferenceMode,
};

fn small(kind: ManifoldKind, asdf: AsdfKind) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(ManifoldSpec::new(kind, 1.0).unwrap(), asdf);
    c.n_fit = 400;
    c.n_mesh = 40;
    c.n_reference = 2000;
    c.trials = 3;
    c.seed = 11;
    c
}

#[test]
fn identical_configs_give_bit_identical_reports() {
    let c = small(ManifoldKind::Circle2D, AsdfKind::Kde);
    let (a, b) = (run_experiment(&c).unwrap(), run_experiment(&c).unwrap());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.rms_csv(), b.rms_csv());
}

#[test]
fn report_aggregates_match_trial_records() {
    let r = run_experiment(&small(ManifoldKind::Circle2D, AsdfKind::Kde)).unwrap();
    assert_eq!(r.rms_per_trial.len(), 3);
    let mean = r.rms_per_trial.iter().sum::<f64>() / 3.0;
    assert!((r.mean_rms - mean).abs() < 1e-12);
    for t in &r.trials {
        assert_eq!(t.seed, 11 + t.trial as u64);
        assert!(t.hausdorff.unwrap() >= t.rms_to_sample.unwrap());
    }
    let csv = r.rms_csv();
    assert!(csv.starts_with("trial,rms\n"));
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn a_single_noiseless_mesh_point_stays_near_the_manifold() {
    let mut c = small(ManifoldKind::Circle2D, AsdfKind::Kde);
    c.trials = 1;
    c.n_mesh = 1;
    c.noise_sd = 0.0;
    c.n_reference = 10_000;
    let r = run_experiment(&c).unwrap();
    // covering radius of 10000 uniform circle points is a few times 2π/10000
    assert!(r.mean_rms < 0.005, "{}", r.mean_rms);
    assert_eq!(r.convergence_fraction, 1.0);
}

#[test]
fn manifold_reference_is_no_larger_than_sample_reference_on_average() {
    let mut c = small(ManifoldKind::Sphere3D, AsdfKind::Kde);
    c.reference = ReferenceMode::Manifold;
    let r = run_experiment(&c).unwrap();
    for t in &r.trials {
        assert_eq!(t.rms, t.rms_to_manifold);
        assert!(t.rms_to_manifold.unwrap() <= t.rms_to_sample.unwrap() + 1e-12);
    }
}

#[test]
fn pca_experiment_on_the_sphere_runs_with_preset_scale() {
    let mut c = preset(ManifoldKind::Sphere3D, AsdfKind::Pca, Profile::Ci);
    c.trials = 2;
    c.n_mesh = 100;
    let r = run_experiment(&c).unwrap();
    assert!(r.convergence_fraction > 0.3);
    assert!(r.mean_rms < 3e-3 * 2.0);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small(ManifoldKind::Circle2D, AsdfKind::Kde);
    c.trials = 0;
    assert!(matches!(run_experiment(&c), Err(MetricsError::InvalidConfig(_))));
    let mut c = small(ManifoldKind::Circle2D, AsdfKind::Kde);
    c.noise_sd = -1.0;
    assert!(matches!(run_experiment(&c), Err(MetricsError::InvalidConfig(_))));
}

#[test]
fn rate_study_emits_points_and_slope() {
    let mut base = small(ManifoldKind::Circle2D, AsdfKind::Pca);
    base.n_fit = 1000;
    base.n_mesh = 50;
    base.trials = 2;
    base.noise_sd = 0.0;
    let spec = ManifoldSpec::new(ManifoldKind::Circle2D, 1.0).unwrap();
    let study = rate_study(spec, AsdfKind::Pca, &[0.2, 0.1, 0.05], &base).unwrap();
    assert_eq!(study.points.len(), 3);
    assert!(study.points.windows(2).all(|w| w[1].n_fit > w[0].n_fit));
    let xs: Vec<f64> = study.points.iter().map(|p| p.bandwidth.ln()).collect();
    let ys: Vec<f64> = study.points.iter().map(|p| p.hausdorff.ln()).collect();
    assert_eq!(study.slope, least_squares_slope(&xs, &ys));
    let csv = study.to_csv();
    assert!(csv.starts_with("bandwidth,n_fit,hausdorff,convergence_fraction\n"));
    assert!(csv.lines().last().unwrap().starts_with("# slope="));

    assert!(rate_study(spec, AsdfKind::Pca, &[0.1], &base).is_err());
    assert!(rate_study(spec, AsdfKind::Pca, &[0.05, 0.1, 0.2], &base).is_err());
}

#[test]
fn table_presets_follow_row_major_layout() {
    let cells = table_presets(Profile::Full);
    let layout: Vec<(AsdfKind, ManifoldKind)> =
        cells.iter().map(|c| (c.asdf, c.manifold.kind())).collect();
    assert_eq!(layout[0], (AsdfKind::Kde, ManifoldKind::Circle2D));
    assert_eq!(layout[2], (AsdfKind::Kde, ManifoldKind::Sphere3D));
    assert_eq!(layout[3], (AsdfKind::Pca, ManifoldKind::Circle2D));
    assert!(cells.iter().all(|c| c.trials == 100));
    assert!(table_presets(Profile::Ci).iter().all(|c| c.trials == 20));
}
