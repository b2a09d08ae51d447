use super::report::REPORT_SCHEMA;
use super::*;
use crate::graph::fixtures;
use crate::scm::decode_high_dim;

fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig { epochs: 3, mc_samples: 64, eval_samples: 256, hidden: vec![4], seed, log_every: 1, ..TrainConfig::default() }
}

fn schema_errors(report: &ExperimentReport) -> Vec<String> {
    let schema: serde_json::Value = serde_json::from_str(REPORT_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let instance = serde_json::to_value(report).unwrap();
    validator.iter_errors(&instance).map(|e| e.to_string()).collect()
}

#[test]
fn gen_data_writes_rows_and_sidecars() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sub/backdoor.csv");
    let truth = cmd_gen_data("backdoor", &out, &GenDataConfig { n: 10_000, seed: 5, ..Default::default() }).unwrap();
    let d = Dataset::load(&out).unwrap();
    assert_eq!((d.num_rows(), d.num_vars()), (10_000, 3));
    assert_eq!(d.meta.model.as_deref(), Some(truth.model_hash.as_str()));

    let back: GroundTruth = serde_json::from_str(&std::fs::read_to_string(truth_path(&out)).unwrap()).unwrap();
    assert_eq!(back, truth);
    let model: CanonicalScm = serde_json::from_str(&std::fs::read_to_string(model_path(&out)).unwrap()).unwrap();
    assert_eq!(model.hash(), truth.model_hash);
    assert_eq!(model.valuate_l1().unwrap(), truth.table);
    let (x, y) = (model.graph().var("X").unwrap(), model.graph().var("Y").unwrap());
    assert_eq!(model.ate(x, y).unwrap(), truth.ate);
}

#[test]
fn widened_data_meets_the_threshold() {
    let g = fixtures::backdoor();
    let gen = generate(&g, &GenDataConfig { n: 100, seed: 2, widen: Some(0.05), ..Default::default() }).unwrap();
    assert!((gen.truth.ate - gen.truth.tv).abs() >= 0.05);
    assert!(gen.truth.widen_steps.is_some());
}

#[test]
fn high_dim_expands_covariates_only() {
    let g = fixtures::napkin();
    let plain = generate(&g, &GenDataConfig { n: 200, seed: 4, ..Default::default() }).unwrap();
    let wide = generate(&g, &GenDataConfig { n: 200, seed: 4, high_dim: Some(20), ..Default::default() }).unwrap();
    assert_eq!(wide.data.num_vars(), 2 * 20 + 2);
    assert!(wide.data.vars().contains(&"W_19".to_string()) && wide.data.vars().contains(&"X".to_string()));
    let map = wide.truth.high_dim.clone().unwrap();
    assert_eq!(decode_high_dim(&wide.data, &map).unwrap().row(17), plain.data.row(17));
}

#[test]
fn generation_is_seeded() {
    let g = fixtures::frontdoor();
    let cfg = GenDataConfig { n: 50, seed: 9, ..Default::default() };
    assert_eq!(generate(&g, &cfg).unwrap().data, generate(&g, &cfg).unwrap().data);
    let other = GenDataConfig { seed: 10, ..cfg.clone() };
    assert_ne!(generate(&g, &cfg).unwrap().truth.model_hash, generate(&g, &other).unwrap().truth.model_hash);
}

#[test]
fn graphs_load_from_files_and_fixture_names() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("chain.txt");
    std::fs::write(&path, "node A\nnode B\nA -> B\n").unwrap();
    let (name, g) = load_graph(path.to_str().unwrap()).unwrap();
    assert_eq!((name.as_str(), g.num_vars()), ("chain", 2));
    assert_eq!(load_graph("iv").unwrap().1, fixtures::iv());
    let err = load_graph("no-such-graph").unwrap_err();
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn events_and_queries_parse() {
    assert_eq!(parse_event("X=1, Z=0").unwrap(), vec![("X".to_string(), 1), ("Z".to_string(), 0)]);
    assert!(parse_event("X").is_err());
    assert!(parse_event("X=2").is_err());
    let g = fixtures::backdoor();
    let q = QuerySpec::Interventional { outcome: vec![("Y".into(), 1)], intervention: vec![("X".into(), 0)] };
    assert!(matches!(q.resolve(&g).unwrap(), Query::Interventional { .. }));
    let bad = QuerySpec::Ate { treatment: "X".into(), outcome: "Q".into() };
    assert!(bad.resolve(&g).is_err());
    let overlap = QuerySpec::Interventional { outcome: vec![("X".into(), 1)], intervention: vec![("X".into(), 0)] };
    assert!(overlap.resolve(&g).is_err());
}

#[test]
fn exact_values_come_from_the_model() {
    let m = CanonicalScm::random(&fixtures::backdoor(), 3).unwrap();
    let (x, y) = (m.graph().var("X").unwrap(), m.graph().var("Y").unwrap());
    let do1 = QuerySpec::Interventional { outcome: vec![("Y".into(), 1)], intervention: vec![("X".into(), 1)] };
    let do0 = QuerySpec::Interventional { outcome: vec![("Y".into(), 1)], intervention: vec![("X".into(), 0)] };
    let ate = QuerySpec::default().exact(&m).unwrap();
    assert!((do1.exact(&m).unwrap() - do0.exact(&m).unwrap() - ate).abs() < 1e-12);
    assert_eq!(ate, m.ate(x, y).unwrap());
}

#[test]
fn settings_files_override_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cfg.json");
    std::fs::write(&path, r#"{"n": 50, "train": {"epochs": 7}}"#).unwrap();
    let s = Settings::load(&path).unwrap();
    assert_eq!((s.n, s.train.epochs), (50, 7));
    assert_eq!(s.train.mc_samples, TrainConfig::default().mc_samples);
    assert_eq!(s.taus, vec![0.01, 0.03, 0.05]);

    let desk = Settings::default();
    assert_eq!((desk.train.epochs, desk.train.mc_samples, desk.n, desk.trials), (500, 5000, 10_000, 5));
    let full = Settings::full_scale();
    assert_eq!((full.train.epochs, full.trials, full.sizes.len()), (3000, 20, 15));

    std::fs::write(&path, "{not json").unwrap();
    assert_eq!(Settings::load(&path).unwrap_err().exit_code(), 1);
}

#[test]
fn log_grid_spans_the_range() {
    let g = log_grid(1_000, 1_000_000, 15);
    assert_eq!((g[0], g[14], g.len()), (1_000, 1_000_000, 15));
    assert!(g.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(log_grid(1_000, 100_000, 3), vec![1_000, 10_000, 100_000]);
}

#[test]
fn estimate_without_sidecars_omits_scores() {
    let dir = tempfile::tempdir().unwrap();
    let g = fixtures::m_graph();
    let gen = generate(&g, &GenDataConfig { n: 300, seed: 1, ..Default::default() }).unwrap();
    let csv = dir.path().join("m.csv");
    gen.data.write_csv(&csv).unwrap();
    let out = dir.path().join("est.json");
    let r = cmd_estimate(&csv, "m", &QuerySpec::default(), &tiny_train(1), &out).unwrap();
    assert!(r.exact.is_none() && r.kl_ncm.is_none() && r.ncm_error.is_none());
    assert!(r.ncm_estimate.abs() <= 1.0 && r.naive_estimate.abs() <= 1.0);
    let back: EstimateReport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(back, r);
    assert!(!std::fs::read_to_string(&out).unwrap().contains("kl_ncm"));
}

#[test]
fn estimate_with_sidecars_scores_both_models() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("fd.csv");
    let truth = cmd_gen_data("frontdoor", &csv, &GenDataConfig { n: 300, seed: 8, ..Default::default() }).unwrap();
    let r = cmd_estimate(&csv, "frontdoor", &QuerySpec::default(), &tiny_train(2), &dir.path().join("e.json")).unwrap();
    assert_eq!(r.exact, Some(truth.ate));
    assert!((r.ncm_error.unwrap() - (r.ncm_estimate - truth.ate).abs()).abs() < 1e-15);
    assert!(r.kl_ncm.unwrap() >= 0.0 && r.kl_naive.unwrap() >= 0.0);
}

#[test]
fn symbolic_identification_reports_the_estimand() {
    let g = fixtures::backdoor();
    let gen = generate(&g, &GenDataConfig { n: 300, seed: 1, ..Default::default() }).unwrap();
    let cfg = NeuralIdConfig { train: tiny_train(1), ..NeuralIdConfig::default() };
    let (r, traces) = identify(&gen.data, &g, &QuerySpec::default(), &cfg, true).unwrap();
    assert_eq!(r.verdict, Verdict::Identifiable);
    assert_eq!(r.estimand_string.as_deref(), Some("sum_{Z} (P(Y|X,Z) * P(Z))"));
    assert!(r.estimate.is_some() && traces.is_empty() && r.gaps.is_empty());

    let bow = fixtures::bow();
    let gen = generate(&bow, &GenDataConfig { n: 300, seed: 1, ..Default::default() }).unwrap();
    let (r, _) = identify(&gen.data, &bow, &QuerySpec::default(), &cfg, true).unwrap();
    assert_eq!(r.verdict, Verdict::NotIdentifiable);
    assert!(r.estimate.is_none() && r.estimand_string.is_none());
}

#[test]
fn neural_identification_writes_traces() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("iv.csv");
    cmd_gen_data("iv", &csv, &GenDataConfig { n: 300, seed: 3, ..Default::default() }).unwrap();
    let cfg = NeuralIdConfig { train: tiny_train(4), repeats: 3, ..NeuralIdConfig::default() };
    let out = dir.path().join("id");
    let r = cmd_identify(&csv, "iv", &QuerySpec::default(), &cfg, false, &out).unwrap();
    assert_eq!((r.r, r.gaps.len(), r.method.as_str()), (3, 3, "neural"));
    assert!(r.mean.is_some() && r.se.is_some());
    for i in 0..3 {
        let text = std::fs::read_to_string(out.join(format!("gap_trace_{i}.csv"))).unwrap();
        assert_eq!(text.lines().count(), 1 + 3);
    }
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["query", "graph_hash", "tau", "r", "gaps", "mean", "se", "verdict"] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
}

fn smoke_id_config() -> BenchIdConfig {
    BenchIdConfig {
        graphs: vec!["backdoor".into(), "bow".into()],
        trials: 1,
        n: 200,
        seed: 11,
        neural: NeuralIdConfig { train: tiny_train(0), repeats: 2, ..NeuralIdConfig::default() },
        threads: Some(1),
        ..BenchIdConfig::default()
    }
}

#[test]
fn benchmark_id_smoke_run_is_well_formed() {
    let cfg = smoke_id_config();
    let (report, timings) = benchmark_id(&cfg).unwrap();
    assert_eq!(report.records.len(), 2);
    assert_eq!(timings.len(), 2);
    assert_eq!(report.taus, vec![0.01, 0.03, 0.05]);
    assert_eq!(report.summary.accuracy.len(), 2 * 3);
    // one band per logged epoch per graph, nine percentiles each
    assert_eq!(report.summary.gap_bands.len(), 2 * 3);
    assert!(report.summary.gap_bands.iter().all(|b| b.percentiles.len() == 9));
    assert_eq!(report.records[0].expected, Verdict::Identifiable);
    assert_eq!(report.records[1].expected, Verdict::NotIdentifiable);
    assert!(report.is_consistent());
    assert_eq!(schema_errors(&report), Vec::<String>::new());
    assert_eq!(ExperimentReport::from_json(&report.to_json().unwrap()).unwrap(), report);

    let dir = tempfile::tempdir().unwrap();
    report.write_all(dir.path()).unwrap();
    let again = cmd_report(&dir.path().join("report.json"), &dir.path().join("copy")).unwrap();
    assert_eq!(again, report);
    for f in ["gap_percentiles.csv", "accuracy.csv", "metrics.csv"] {
        assert_eq!(
            std::fs::read(dir.path().join(f)).unwrap(),
            std::fs::read(dir.path().join("copy").join(f)).unwrap()
        );
    }
}

#[test]
fn benchmark_id_is_deterministic_across_thread_counts() {
    let cfg = smoke_id_config();
    let a = benchmark_id(&cfg).unwrap().0.to_json().unwrap();
    let b = benchmark_id(&BenchIdConfig { threads: Some(2), ..cfg.clone() }).unwrap().0.to_json().unwrap();
    assert_eq!(a, b);
    let c = benchmark_id(&BenchIdConfig { seed: 12, ..cfg }).unwrap().0.to_json().unwrap();
    assert_ne!(a, c);
}

#[test]
fn benchmark_est_smoke_run_is_well_formed() {
    let cfg = BenchEstConfig {
        graphs: vec!["backdoor".into(), "m".into()],
        sizes: vec![100, 300],
        trials: 2,
        seed: 1,
        train: tiny_train(0),
        threads: Some(1),
        ..BenchEstConfig::default()
    };
    let (report, _) = benchmark_est(&cfg).unwrap();
    assert_eq!(report.records.len(), 2 * 2 * 2);
    // the model depends on graph and trial only
    let bd: Vec<&TrialRecord> = report.records.iter().filter(|r| r.graph == "backdoor" && r.trial == 0).collect();
    assert_eq!(bd[0].exact_ate, bd[1].exact_ate);
    assert_ne!(bd[0].seed, bd[1].seed);
    assert!(bd[0].widened);
    // two methods, two metrics, two sizes, two graphs
    assert_eq!(report.summary.metrics.len(), 2 * 2 * 2 * 2);
    assert!(report.metric("m", 300, "naive", "kl").is_some());
    assert!(report.is_consistent());
    assert_eq!(schema_errors(&report), Vec::<String>::new());
}

#[test]
fn tampered_reports_are_rejected() {
    let (mut report, _) = benchmark_id(&BenchIdConfig { graphs: vec!["m".into()], ..smoke_id_config() }).unwrap();
    report.records[0].gaps.push(1.0);
    report.records[0].traces[0].records[0].gap = 9.0;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    report.save(&path).unwrap();
    assert_eq!(cmd_report(&path, dir.path()).unwrap_err().exit_code(), 1);
}
