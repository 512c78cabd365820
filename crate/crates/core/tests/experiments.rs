use sidyn::experiment::{self, ExperimentConfig, DeltaEvents};
use sidyn::io;

const APP_E: &str = r#"
name = "toy-periodic"
objective = "toy-rational"
x0 = [0.01, 1.0]
seed = 1

[optimizer]
eta = 1.0
lambda = 0.01
steps = 20000

[sweep]
lambda = [0.0, 0.01]

[analysis]
deltas = [0.01]
"#;

#[test]
fn toy_sweep_with_and_without_decay() {
    let root = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(APP_E, "app-e.toml").unwrap();
    let out = experiment::run_experiment(&cfg, APP_E, Some(root.path())).unwrap();
    assert_eq!(out.points.len(), 2);
    for p in ["point-000", "point-001"] {
        assert!(out.dir.join(p).join(experiment::MANIFEST).exists());
    }

    let [no_decay, decay] = &out.summary.points[..] else { panic!("two points") };
    assert_eq!(no_decay.lambda, 0.0);
    assert_eq!(decay.lambda, 0.01);
    let (_, jumps0, periods0) = no_decay.events[0];
    let (_, _, periods) = decay.events[0];
    assert_eq!((jumps0, periods0), (0, 0));
    assert!(periods >= 1);
    assert!(no_decay.final_loss.unwrap() < 1e-6);

    let events: Vec<DeltaEvents> = io::read_json(&out.dir.join("point-001/events.json")).unwrap();
    assert_eq!(events[0].segmentation.classified().count(), periods);

    let report = experiment::check_integrity(&out.dir).unwrap();
    assert!(report.ok(), "{:?}", report.mismatches);
}

#[test]
fn fixed_product_sweep_agrees_across_ratios() {
    let text = APP_E
        .replace("lambda = [0.0, 0.01]", "product = 1e-4\netas = [0.25, 1.0, 4.0]\nrescale_init = true")
        .replace("steps = 20000", "steps = 3000");
    let cfg = ExperimentConfig::parse(&text, "fixed.toml").unwrap();
    let root = tempfile::tempdir().unwrap();
    let out = experiment::run_experiment(&cfg, &text, Some(root.path())).unwrap();
    assert_eq!(out.points.len(), 3);
    assert_eq!(out.summary.agreement.len(), 3);
    for pair in &out.summary.agreement {
        assert_eq!(pair.compared_steps, 3000);
        assert!(pair.max_deviation < 1e-8, "{pair:?}");
    }
    for p in &out.summary.points {
        assert!((p.eta_lambda - 1e-4).abs() < 1e-18);
    }
}

#[test]
fn reruns_are_byte_identical() {
    let text = APP_E.replace("steps = 20000", "steps = 2000");
    let cfg = ExperimentConfig::parse(&text, "t").unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = experiment::run_experiment(&cfg, &text, Some(a.path())).unwrap();
    let rb = experiment::run_experiment(&cfg, &text, Some(b.path())).unwrap();
    assert_eq!(ra.manifest.files, rb.manifest.files);
    let bytes = |d: &std::path::Path| std::fs::read(d.join(experiment::SWEEP_MANIFEST)).unwrap();
    assert_eq!(bytes(&ra.dir), bytes(&rb.dir));
}

#[test]
fn sgd_on_network_is_seed_deterministic() {
    let text = r#"
name = "net"
objective = "si-net:tiny"
seed = 9

[optimizer]
family = "sgd"
eta = 0.2
lambda = 0.01
steps = 200
batch = 8

[sweep]
eta = [0.1, 0.2]
"#;
    let cfg = ExperimentConfig::parse(text, "net.toml").unwrap();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = experiment::run_experiment(&cfg, text, Some(a.path())).unwrap();
    let rb = experiment::run_experiment(&cfg, text, Some(b.path())).unwrap();
    assert_eq!(ra.manifest.files, rb.manifest.files);
    // Points get distinct streams.
    assert_ne!(ra.points[0].point.seed, ra.points[1].point.seed);
    let other = text.replace("seed = 9", "seed = 10");
    let cfg = ExperimentConfig::parse(&other, "net.toml").unwrap();
    let c = tempfile::tempdir().unwrap();
    let rc = experiment::run_experiment(&cfg, &other, Some(c.path())).unwrap();
    let trace = |r: &experiment::RunOutcome| std::fs::read(r.dir.join("point-000/trace.csv")).unwrap();
    assert_ne!(trace(&ra), trace(&rc));
}
