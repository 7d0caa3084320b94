use std::fs;

use sflplan_core::baselines::StrategyName;
use sflplan_core::harness::*;
use sflplan_core::simulator::ScheduleMode;

fn config(strategies: &[StrategyName]) -> ExperimentConfig {
    ExperimentConfig { strategies: strategies.to_vec(), ..ExperimentConfig::default() }
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().skip(1).collect()
}

#[test]
fn plan_run_rows_in_requested_order() {
    let report = run_plan(&config(&[StrategyName::Dpmora, StrategyName::Faaf]), None).unwrap();
    let csv = latency_csv(&report);
    assert_eq!(csv.lines().next().unwrap(), LATENCY_HEADER);
    let rows = data_lines(&csv);
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("DPMORA,") && rows[1].starts_with("FAAF,"));
    let dp = report.find(StrategyName::Dpmora, None).unwrap().objective().unwrap();
    let fa = report.find(StrategyName::Faaf, None).unwrap().objective().unwrap();
    assert!(dp < fa);
    assert_eq!(data_lines(&plans_csv(&report)).len(), 20);
    assert_eq!(data_lines(&waiting_csv(&report)).len(), 20);
}

#[test]
fn provenance_columns_on_every_row() {
    let cfg = ExperimentConfig { seed: 7, ..config(&[StrategyName::Dpmora, StrategyName::Sf1af]) };
    let report = run_plan(&cfg, None).unwrap();
    let hash = cfg.hash();
    assert_eq!(hash.len(), 16);
    for csv in
        [plans_csv(&report), latency_csv(&report), waiting_csv(&report), trace_csv(&report), timeline_csv(&report, 3)]
    {
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        assert_eq!(&header[..5], ["strategy", "sweep_param", "sweep_value", "seed", "config_hash"]);
        for row in data_lines(&csv) {
            let cols: Vec<&str> = row.split(',').collect();
            assert_eq!((cols[3], cols[4]), ("7", hash.as_str()), "{row}");
        }
    }
}

#[test]
fn baseline_only_run_has_empty_trace() {
    let report = run_plan(&config(&[StrategyName::Faaf]), None).unwrap();
    assert_eq!(trace_csv(&report), format!("{TRACE_HEADER}\n"));
}

#[test]
fn trace_rows_follow_blocks() {
    let report = run_plan(&config(&[StrategyName::Dpmora]), None).unwrap();
    let trace = report.outcomes[0].evaluated().unwrap().trace.clone().unwrap();
    let csv = trace_csv(&report);
    let rows = data_lines(&csv);
    assert_eq!(rows.len(), trace.blocks.len() + 1);
    assert!(rows[0].contains(",0,init,"));
    assert!(rows.last().unwrap().contains(",final_compute,"));
}

#[test]
fn unreachable_risk_level_is_reported_in_band() {
    let cfg = ExperimentConfig { p_risk: 0.0, ..config(&[StrategyName::Dpmora, StrategyName::Fsaf]) };
    let report = run_plan(&cfg, None).unwrap();
    assert_eq!(report.warnings().len(), 2);
    let csv = latency_csv(&report);
    for row in data_lines(&csv) {
        assert!(row.split(',').nth(5) == Some("infeasible"), "{row}");
    }
    assert_eq!(data_lines(&plans_csv(&report)).len(), 0);
}

#[test]
fn schedule_override_applies_to_all_strategies() {
    let report = run_plan(&config(&[StrategyName::Sf1af, StrategyName::Faaf]), Some(ScheduleMode::Sequential)).unwrap();
    assert!(report.outcomes.iter().all(|o| o.schedule == ScheduleMode::Sequential));
}

#[test]
fn sweep_and_plot_data() {
    let cfg = ExperimentConfig {
        sweep: Some(SweepSpec::parse("f_s:20:90:10").unwrap()),
        ..config(&[StrategyName::Dpmora, StrategyName::Faaf])
    };
    let report = run_sweep(&cfg).unwrap();
    assert_eq!(report.outcomes.len(), 16);
    let values: Vec<f64> = report.outcomes.iter().map(|o| o.sweep_value.unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]));

    let dir = tempfile::tempdir().unwrap();
    write_artifacts(&report, dir.path()).unwrap();
    let files = emit_plot_data(&dir.path().join("latency.csv"), &dir.path().join("plot")).unwrap();
    assert_eq!(files.len(), 3);
    for name in ["DPMORA.dat", "FAAF.dat"] {
        let text = fs::read_to_string(dir.path().join("plot").join(name)).unwrap();
        let lines: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines.len(), 8, "{name}");
        assert!(lines[0].starts_with("20 "));
    }
    let index = fs::read_to_string(dir.path().join("plot/index.dat")).unwrap();
    assert!(index.contains("DPMORA DPMORA.dat") && index.contains("FAAF FAAF.dat"));
}

#[test]
fn plot_data_edge_cases() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    fs::write(&empty, format!("{LATENCY_HEADER}\n")).unwrap();
    let files = emit_plot_data(&empty, &dir.path().join("a")).unwrap();
    assert_eq!(files.len(), 1);
    assert_eq!(fs::read_to_string(&files[0]).unwrap(), "# strategy file\n");

    let bad = dir.path().join("bad.csv");
    fs::write(&bad, format!("{LATENCY_HEADER}\nFAAF,f_s,50,0,abc,ok,parallel,1.0,2.0,0,0,0,0,0,\nFAAF,f_s,60,0,abc,ok,parallel,oops,2.0,0,0,0,0,0,\n")).unwrap();
    let err = emit_plot_data(&bad, &dir.path().join("b")).unwrap_err();
    assert!(err.to_string().contains("line 3"), "{err}");

    let missing = dir.path().join("missing.csv");
    fs::write(&missing, "strategy,objective_s\n").unwrap();
    assert!(emit_plot_data(&missing, &dir.path().join("c")).is_err());
}

#[test]
fn json_config_with_units() {
    let cfg = ExperimentConfig::from_json(
        r#"{
            "fleet": [
                {"id": "a", "f_d": "3620 MFLOPS"},
                {"id": "b", "f_d": 9.69, "dataset_size": 1000, "ul_rate": "20 Mbps"}
            ],
            "server": {"f_s": "0.06 TFLOPS", "dl_bw": "50 MHz"},
            "p_risk": 0.4,
            "strategies": ["DPMORA", "SF3AF"],
            "sweep": {"parameter": "ul_bw", "from": "10 Mbps", "to": "30 Mbps", "step": "10 Mbps"}
        }"#,
    )
    .unwrap();
    let r = cfg.resolve().unwrap();
    assert!((r.fleet[0].f_d - 3.62).abs() < 1e-12);
    assert!((r.server.f_s - 60.0).abs() < 1e-9);
    assert_eq!(r.server.w_dl, 50e6);
    assert_eq!(cfg.sweep.as_ref().unwrap().values().unwrap(), vec![10e6, 20e6, 30e6]);
    assert!(r.instance().is_ok());
}

#[test]
fn config_errors_name_the_field() {
    let err =
        |json: &str| ExperimentConfig::from_json(json).and_then(|c| c.resolve().map(|_| ())).unwrap_err().to_string();
    assert!(err(r#"{"server": {"f_s": "60 GHz"}}"#).contains("server.f_s"));
    assert!(err(r#"{"fleet": [{"id": "a", "f_d": "5 XFLOPS"}]}"#).contains("fleet[0].f_d"));
    assert!(err(r#"{"p_risk": 1.5}"#).contains("p_risk"));
    assert!(err(r#"{"fleet": []}"#).contains("fleet"));
    assert!(err(r#"{"strategies": ["SF9"]}"#).contains("line 1"));
    assert!(err(r#"{"unknown_field": 1}"#).contains("unknown_field"));
    let e = ExperimentConfig::from_json(r#"{"p_risk": -1}"#).unwrap().resolve().unwrap_err();
    assert_eq!(e.exit_code(), 1);
}

#[test]
fn hash_ignores_output_dir() {
    let a = ExperimentConfig::default();
    let b = ExperimentConfig { output_dir: Some("/tmp/elsewhere".into()), ..ExperimentConfig::default() };
    let c = ExperimentConfig { seed: 1, ..ExperimentConfig::default() };
    assert_eq!(a.hash(), b.hash());
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn fit_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    let rows: String = (1..=8).map(|x| format!("{x},{}\n", 2.0 * (x * x) as f64 - 3.0 * x as f64 + 5.0)).collect();
    fs::write(&path, format!("x,y\n{rows}")).unwrap();
    let fit = fit_csv(&path, sflplan_core::cost_models::FitKind::Qpr).unwrap();
    let c = fit.model.coeffs();
    for (got, want) in c.iter().zip([2.0, -3.0, 5.0]) {
        assert!((got - want).abs() < 1e-9, "{c:?}");
    }
    fs::write(&path, "x,y\n1,2\n2,q\n").unwrap();
    assert!(fit_csv(&path, sflplan_core::cost_models::FitKind::Qpr).unwrap_err().to_string().contains("line 3"));
}
