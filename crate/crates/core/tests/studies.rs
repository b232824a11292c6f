use terrapos::channel::{LinkState, LosProbabilityModel, NoiseConfig};
use terrapos::experiments::*;
use terrapos::scenario::{ObstacleMap, ScenarioConfig};

fn umi_with_los_probability(p: f64) -> ScenarioConfig {
    let mut s = ScenarioConfig::umi();
    s.noise.los_probability_model = LosProbabilityModel::Constant { probability: p };
    s
}

#[test]
fn noiseless_forced_los_peaks_sit_on_true_distances() {
    let mut s = ScenarioConfig::umi();
    s.noise = NoiseConfig::noiseless();
    let cfg = UmiRangingConfig { iterations: 10, force_state: Some(LinkState::Los), ..Default::default() };
    let r = run_umi_ranging(&s, &cfg, 3).unwrap();
    let expected = [23.92, 37.04, 45.52];
    for (t, want) in r.trps.iter().zip(expected) {
        let peak = t.peak.unwrap();
        assert!((peak - want).abs() < 0.01, "{}: peak {peak}", t.trp_id);
        assert_eq!(t.high_accuracy_fraction, 1.0);
        assert_eq!(t.failures, 0);
    }
}

#[test]
fn high_accuracy_share_tracks_los_probability() {
    let s = umi_with_los_probability(0.3);
    let r = run_umi_ranging(&s, &UmiRangingConfig { iterations: 600, ..Default::default() }, 5).unwrap();
    for t in &r.trps {
        assert!((t.high_accuracy_fraction - 0.3).abs() <= 0.05, "{}: {}", t.trp_id, t.high_accuracy_fraction);
        assert!(t.los_share_of_high_accuracy > 0.95);
    }
}

#[test]
fn zero_iterations_give_empty_report() {
    let r = run_umi_ranging(&ScenarioConfig::umi(), &UmiRangingConfig { iterations: 0, ..Default::default() }, 1)
        .unwrap();
    assert!(r.is_empty());
    assert!(r.trps.is_empty());
}

#[test]
fn ranging_study_is_reproducible_and_thread_independent() {
    let s = umi_with_los_probability(0.5);
    let cfg = UmiRangingConfig { iterations: 40, ..Default::default() };
    let a = run_umi_ranging(&s, &cfg, 9).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| run_umi_ranging(&s, &cfg, 9).unwrap());
    assert_eq!(a, b);
    let c = run_umi_ranging(&s, &cfg, 10).unwrap();
    assert_ne!(a, c);
}

#[test]
fn study_outputs_carry_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let s = ScenarioConfig::umi();
    let cfg = UmiRangingConfig { iterations: 5, ..Default::default() };
    let mut m = Manifest::new("ranging", &s, &cfg, 4);
    let r = run_umi_ranging(&s, &cfg, 4).unwrap();
    let paths = r.write_outputs(&mut m, dir.path()).unwrap();
    assert_eq!(paths.len(), 3 + 2);
    let header = format!("# config_hash {} seed 4\n", study_hash(&s, &cfg));
    for p in &paths {
        assert!(std::fs::read_to_string(p).unwrap().starts_with(&header), "{}", p.display());
    }
    let manifest = std::fs::read_to_string(m.save(dir.path()).unwrap()).unwrap();
    assert!(manifest.contains("seed 4"));
    assert!(manifest.contains("ranges.csv"));
}

#[test]
fn oracle_filter_matches_los_only_and_exclusion_pays_off() {
    let s = ScenarioConfig::umi_compact();
    let cfg = ExclusionConfig { epochs: 300, ..Default::default() };
    let r = run_exclusion_study(&s, &cfg, None, 21).unwrap();
    assert!(r.dl.is_none());
    for (a, b) in r.los_only.fixes.iter().zip(&r.oracle.fixes) {
        assert_eq!(a.valid, b.valid);
        if a.valid {
            assert_eq!(a.position, b.position);
            assert_eq!(a.trps_used, b.trps_used);
        }
    }
    for (n, f) in r.los_links.iter().zip(&r.los_only.fixes) {
        assert_eq!(f.valid, *n >= 3, "{n} LOS links");
    }
    let clean = r.los_only.stats.as_ref().unwrap().p2d(90.0).unwrap();
    let mixed = r.mixed.stats.as_ref().unwrap().p2d(90.0).unwrap();
    assert!(mixed >= 10.0 * clean, "mixed {mixed} vs LOS-only {clean}");
    assert!(r.table().lines().count() == 4);
}

#[test]
fn classifier_must_match_grid_length() {
    use terrapos::classifier::{network::random_params, Architecture, Classifier, RunningStats};
    let arch = Architecture::tiny();
    let c = Classifier {
        params: random_params(&arch, &mut terrapos::rng::substream(0, 0)),
        stats: RunningStats::identity(&arch),
        input_mean: vec![0.0; arch.input_len],
        input_std: vec![1.0; arch.input_len],
        bn_eps: 1e-5,
        threshold: 0.5,
        arch,
    };
    let cfg = ExclusionConfig { epochs: 2, ..Default::default() };
    assert!(run_exclusion_study(&ScenarioConfig::umi_compact(), &cfg, Some(&c), 1).is_err());
}

#[test]
fn fusion_beats_visual_odometry_on_gapped_drive() {
    let s = ScenarioConfig::umi_compact();
    let r = run_fusion_study(&s, &FusionStudyConfig::default(), 8).unwrap();
    let vo = r.row("vo").unwrap().ate;
    let fused = r.row("cpp_imu_vo").unwrap().ate;
    assert!(fused < vo, "fused {fused} vs VO {vo}");
    assert!((0.25..0.55).contains(&r.cpp_valid_fraction), "{}", r.cpp_valid_fraction);
    assert_eq!(r.truth.len(), r.fused.len());
}

#[test]
fn perfect_sensors_give_near_zero_errors() {
    let s = ScenarioConfig::umi_compact();
    let cfg = FusionStudyConfig {
        duration: 30.0,
        imu_sigma_acc: 0.0,
        imu_sigma_gyr: 0.0,
        vo_drift: 0.0,
        vo_noise: 0.0,
        vo_sigma: 0.01,
        cpp_synthetic_noise: Some(0.0),
        init_sigma: [1e-3, 1e-3, 1e-4],
        ..Default::default()
    };
    let r = run_fusion_study(&s, &cfg, 2).unwrap();
    for row in &r.rows {
        assert!(row.ate < 1e-3, "{}: {}", row.name, row.ate);
    }
}

#[test]
fn full_cpp_availability_keeps_fused_error_small() {
    let s = ScenarioConfig::umi_compact();
    let cfg = FusionStudyConfig {
        obstacles: ObstacleMap::default(),
        cpp_synthetic_noise: Some(0.01),
        cpp_sigma: 0.01,
        ..Default::default()
    };
    let r = run_fusion_study(&s, &cfg, 6).unwrap();
    assert_eq!(r.cpp_valid_fraction, 1.0);
    let fused = r.row("cpp_imu_vo").unwrap().ate;
    assert!(fused < 0.1, "{fused}");
}

#[test]
fn fusion_outputs_written_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let s = ScenarioConfig::umi_compact();
    let cfg = FusionStudyConfig { duration: 20.0, ..Default::default() };
    let mut m = Manifest::new("fusion", &s, &cfg, 1);
    let r = run_fusion_study(&s, &cfg, 1).unwrap();
    let paths = r.write_outputs(&mut m, dir.path()).unwrap();
    assert_eq!(paths.len(), 6);
    let table = std::fs::read_to_string(dir.path().join("table.csv")).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().starts_with("# config_hash "));
    assert_eq!(lines.next().unwrap(), "sensors,ate_m,rpe_trans_m,rpe_rot_deg");
    assert_eq!(lines.count(), 3);
}
