use std::time::Instant;

use tempose::config::RunConfig;
use tempose::experiment::run_pipeline;
use tempose::synth::generate_range;
use tempose::SceneSample;

fn scenes(cfg: &RunConfig, start: usize, n: usize) -> Vec<SceneSample> {
    generate_range(&cfg.world, start, n).unwrap().into_iter().map(|s| s.sample).collect()
}

#[test]
fn desk_smoke_run_emits_a_well_formed_report() {
    let mut cfg = RunConfig::desk();
    cfg.train.epochs = 2;
    cfg.teacher.epochs = 2;
    let (train, test) = (scenes(&cfg, 0, 200), scenes(&cfg, 200, 50));
    let start = Instant::now();
    let r = run_pipeline(&cfg, &train, &test, false).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 300.0, "smoke run took {secs:.0} s");

    let report = &r.report;
    assert_eq!(report.ks, [1, 3, 5]);
    assert_eq!((report.pck.len(), report.mse.len()), (3, 3));
    assert_eq!(report.records.len(), test.len());
    assert!(report.pck.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(report.mse.iter().all(|m| m.is_finite() && *m >= 0.0));
    assert!(report.pck.windows(2).all(|w| w[1] >= w[0]));
    assert!(report.mse.windows(2).all(|w| w[1] <= w[0]));
    assert!(r.teacher.is_some() && r.regression.is_none());
    assert!((0.0..=1.0).contains(&r.test_accuracy));
    assert!(!report.pretty().is_empty());
}
