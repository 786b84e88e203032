use std::fs;
use std::process::Command;

use berk_nash::cli::execute;

fn s(p: &std::path::Path) -> String {
    p.to_str().unwrap().to_string()
}

#[test]
fn unhappy_then_solve_reports_gap() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    for extra in [None, Some("--correct")] {
        let mut args = vec!["scenario", "unhappy", "--p", "0.86", "--c", "0.6", "--delta", "0.0001"];
        args.extend(extra);
        let o_str = s(out);
        args.extend(["--out", &o_str]);
        let o = execute(&args);
        assert_eq!(o.exit_code, 0, "{}", o.summary);
        assert!(o.summary.contains("gap ratio 1.81"), "{}", o.summary);
    }
    let mut revenue = Vec::new();
    for (name, sub) in [("unhappy_correct.json", "c"), ("unhappy_misspecified.json", "m")] {
        let o = execute(&["solve", &s(&out.join(name)), "--out", &s(&out.join(sub))]);
        assert_eq!(o.exit_code, 0, "{}", o.summary);
        let rep: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join(sub).join("solve.json")).unwrap()).unwrap();
        assert!(rep["certificate"]["valid"].as_bool().unwrap());
        revenue.push(rep["revenue"].as_f64().unwrap());
    }
    assert!(revenue[0] / revenue[1] >= 1.81);
}

#[test]
fn divergence_simulation_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    assert_eq!(execute(&["scenario", "divergence", "--out", &s(out)]).exit_code, 0);
    let csv = out.join("run.csv");
    let args = [
        "simulate".to_string(),
        s(&out.join("divergence_instance.json")),
        "--contract".into(),
        s(&out.join("divergence_contract.json")),
        "-T".into(),
        "100000".into(),
        "--seed".into(),
        "1".into(),
        "--out".into(),
        s(&csv),
    ];
    let o = execute(&args);
    assert_eq!(o.exit_code, 0, "{}", o.summary);
    assert_eq!(o.artifacts.len(), 2);
    let first = fs::read(&csv).unwrap();
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(csv.with_extension("json")).unwrap()).unwrap();
    let report = &summary["cycle_report"];
    assert!(report["directions_ok"].as_bool().unwrap());
    assert!(report["min_growth_after_threshold"].as_f64().unwrap() >= 1.5);
    // Same inputs and seed overwrite identical artifacts.
    assert_eq!(execute(&args).exit_code, 0);
    assert_eq!(fs::read(&csv).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,action,outcome,freq_a0,freq_a1,freq_a2");
    assert_eq!(text.lines().count(), 100_001);
}

#[test]
fn analysis_commands_on_a_written_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let o_str = s(out);
    assert_eq!(
        execute(&["scenario", "unhappy", "--p", "0.8", "--c", "0.3", "--delta", "0.05", "--out", &o_str]).exit_code,
        0
    );
    let inst = s(&out.join("unhappy_misspecified.json"));
    let contract = out.join("p.json");
    fs::write(&contract, "[0, 0.5, 0]").unwrap();
    for args in [
        vec!["validate", &inst, "--out", &o_str],
        vec!["kl", &inst, "--out", &o_str],
        vec!["breakpoints", &inst, "--out", &o_str],
    ] {
        let o = execute(&args);
        assert_eq!(o.exit_code, 0, "{:?}: {}", args, o.summary);
        assert!(o.artifacts.iter().all(|p| p.exists()));
    }
    let c = s(&contract);
    let o = execute(&["equilibria", &inst, "--contract", &c, "--grid", "200", "--out", &o_str]);
    assert_eq!(o.exit_code, 0, "{}", o.summary);
    let certs: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("equilibria.json")).unwrap()).unwrap();
    assert!(certs.as_array().unwrap().iter().all(|c| c["valid"].as_bool().unwrap()));

    fs::write(&contract, "[0, 0.5]").unwrap();
    let o = execute(&["equilibria", &inst, "--contract", &c, "--out", &o_str]);
    assert_eq!(o.exit_code, 1);
}

#[test]
fn reduce_writes_maps_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let game = out.join("g.json");
    fs::write(&game, r#"{"y": [[2, 0], [1, 3]], "z": [[1, 4], [2, 1]]}"#).unwrap();
    let o = execute(&["reduce", "--game", &s(&game), "--eps-prime", "0.1", "--out", &s(out)]);
    assert_eq!(o.exit_code, 0, "{}", o.summary);
    let red: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("reduction.json")).unwrap()).unwrap();
    assert_eq!(red["reward_layout"][1][0].as_u64(), Some(3));
    let check: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("reduction_check.json")).unwrap()).unwrap();
    assert!(check["pass"].as_bool().unwrap());

    fs::write(&game, r#"{"y": [[2]], "z": [[0]]}"#).unwrap();
    assert_eq!(execute(&["reduce", "--game", &s(&game), "--eps-prime", "0.1", "--out", &s(out)]).exit_code, 1);
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_berk-nash");
    let dir = tempfile::tempdir().unwrap();
    let st = Command::new(bin).current_dir(dir.path()).args(["validate", "missing.json"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
    assert!(!dir.path().join("out").exists());
    let st = Command::new(bin).current_dir(dir.path()).arg("nope").output().unwrap();
    assert_eq!(st.status.code(), Some(2));
    let st = Command::new(bin).current_dir(dir.path()).args(["scenario", "divergence"]).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert!(dir.path().join("out/divergence_instance.json").exists());
    assert!(String::from_utf8(st.stdout).unwrap().contains("wrote"));
}
