//! End-to-end smoke tests of the `hglmm` binary: subcommand plumbing, file
//! outputs, and exit codes.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hglmm"))
}

fn workdir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hglmm_cli_{name}"));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn simulate_fit_predict_evaluate_report_cycle() {
    let dir = workdir("cycle");
    let sim_csv = dir.join("sim.csv");
    let losses = dir.join("losses.csv");

    let out = bin()
        .args([
            "simulate",
            "--family",
            "logistic",
            "--n",
            "3000",
            "--replicates",
            "2",
            "--seed",
            "11",
            "--groups",
            "4",
            "--leaves",
            "12",
            "--q0",
            "2",
            "--q1",
            "2",
            "--q2",
            "2",
            "--baselines",
        ])
        .arg("--out")
        .arg(&losses)
        .arg("--dump")
        .arg(&sim_csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let loss_text = std::fs::read_to_string(&losses).unwrap();
    assert!(loss_text.lines().count() > 2 * 3); // header + 2 reps x 3 methods
    assert!(loss_text.contains("hierarchical"));
    assert!(loss_text.contains("global"));

    let spec_path = dir.join("model.spec");
    std::fs::write(
        &spec_path,
        "response = y\nfamily = logistic\nfixed = x1, x2\nlevel = g1 : z1, z2\nlevel = g2 : z1, z2\n",
    )
    .unwrap();
    let model_path = dir.join("model.hglmm");
    let report_json = dir.join("fit.json");
    let out = bin()
        .args(["fit", "--seed", "4"])
        .arg("--data")
        .arg(&sim_csv)
        .arg("--spec")
        .arg(&spec_path)
        .arg("--out")
        .arg(&model_path)
        .arg("--report-json")
        .arg(&report_json)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("misclassification"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_json).unwrap()).unwrap();
    assert_eq!(report["family"], "logistic");

    let preds = dir.join("preds.csv");
    let out = bin()
        .arg("predict")
        .arg("--model")
        .arg(&model_path)
        .arg("--data")
        .arg(&sim_csv)
        .arg("--out")
        .arg(&preds)
        .output()
        .unwrap();
    assert!(out.status.success());
    let preds_text = std::fs::read_to_string(&preds).unwrap();
    assert_eq!(preds_text.lines().count(), 3001);
    assert!(preds_text.starts_with("row,eta,mu,class"));

    let out = bin()
        .arg("evaluate")
        .arg("--model")
        .arg(&model_path)
        .arg("--data")
        .arg(&sim_csv)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("misclassification"));

    let out = bin()
        .args(["report", "--level", "1", "--feature", "z1", "--top", "3"])
        .arg("--model")
        .arg(&model_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("posterior_sd"), "{text}");

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn search_emits_ranked_cells() {
    let dir = workdir("search");
    let sim_csv = dir.join("sim.csv");
    bin()
        .args([
            "simulate",
            "--family",
            "gaussian",
            "--n",
            "2500",
            "--replicates",
            "1",
            "--seed",
            "21",
            "--groups",
            "3",
            "--leaves",
            "9",
            "--q0",
            "2",
            "--q1",
            "2",
            "--q2",
            "2",
        ])
        .arg("--dump")
        .arg(&sim_csv)
        .output()
        .unwrap();
    let spec_path = dir.join("model.spec");
    std::fs::write(
        &spec_path,
        "response = y\nfamily = gaussian\nfixed = 1, x1, x2, z1, z2\nlevel = g1 : 1\n",
    )
    .unwrap();
    let cells = dir.join("cells.csv");
    let out = bin()
        .args([
            "search",
            "--levels",
            "g1,g2",
            "--candidates",
            "z1,z2",
            "--depth",
            "2",
            "--seed",
            "1",
        ])
        .arg("--data")
        .arg(&sim_csv)
        .arg("--spec")
        .arg(&spec_path)
        .arg("--out")
        .arg(&cells)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&cells).unwrap();
    // 2 * 2^2 one-level + 1 * 2^2 * 2^2 two-level cells, plus the header
    assert_eq!(text.lines().count(), 1 + 8 + 16);
    assert!(String::from_utf8_lossy(&out.stdout).contains("selected:"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn exit_codes_for_failure_classes() {
    let dir = workdir("exits");
    // missing file: data error -> 2
    let out = bin()
        .args([
            "evaluate",
            "--model",
            "/definitely/not/there",
            "--data",
            "/nope.csv",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // bad arguments -> 4
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(4));

    // usage error from a subcommand -> 4
    let sim_csv = dir.join("sim.csv");
    bin()
        .args([
            "simulate",
            "--family",
            "gaussian",
            "--n",
            "200",
            "--replicates",
            "1",
            "--seed",
            "3",
            "--groups",
            "2",
            "--leaves",
            "4",
            "--q0",
            "1",
            "--q1",
            "1",
            "--q2",
            "1",
        ])
        .arg("--dump")
        .arg(&sim_csv)
        .output()
        .unwrap();
    let spec_path = dir.join("model.spec");
    std::fs::write(
        &spec_path,
        "response = y\nfamily = gaussian\nfixed = x1\nlevel = g1 : z1\nlevel = g2 : z1\n",
    )
    .unwrap();
    let out = bin()
        .args(["fit", "--split", "0.5,0.4,0.4"])
        .arg("--data")
        .arg(&sim_csv)
        .arg("--spec")
        .arg(&spec_path)
        .arg("--out")
        .arg(dir.join("m.hglmm"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // malformed csv: data error -> 2
    let bad_csv = dir.join("bad.csv");
    std::fs::write(&bad_csv, "g1,g2,x1,z1,y\na,b,1,1\n").unwrap();
    let out = bin()
        .arg("fit")
        .arg("--data")
        .arg(&bad_csv)
        .arg("--spec")
        .arg(&spec_path)
        .arg("--out")
        .arg(dir.join("m2.hglmm"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    // unidentifiable dispersion (every leaf saturated): fit error -> 3
    let sat_csv = dir.join("sat.csv");
    std::fs::write(
        &sat_csv,
        "g1,g2,x1,z1,y\nA,a,1,1,0.5\nB,b,1,-1,0.25\nC,c,-1,1,0.75\nD,d,1,1,0.5\nE,e,1,-1,0.25\n",
    )
    .unwrap();
    let out = bin()
        .args(["fit", "--split", "1.0,0.0,0.0"])
        .arg("--data")
        .arg(&sat_csv)
        .arg("--spec")
        .arg(&spec_path)
        .arg("--out")
        .arg(dir.join("m3.hglmm"))
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stderr).contains("dispersion"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn baseline_table_prints_buckets() {
    let dir = workdir("buckets");
    let sim_csv = dir.join("sim.csv");
    bin()
        .args([
            "simulate",
            "--family",
            "logistic",
            "--n",
            "6000",
            "--replicates",
            "1",
            "--seed",
            "31",
            "--groups",
            "6",
            "--leaves",
            "30",
            "--q0",
            "2",
            "--q1",
            "2",
            "--q2",
            "2",
        ])
        .arg("--dump")
        .arg(&sim_csv)
        .output()
        .unwrap();
    let spec_path = dir.join("model.spec");
    std::fs::write(
        &spec_path,
        "response = y\nfamily = logistic\nfixed = x1, x2\nlevel = g1 : z1, z2\nlevel = g2 : z1, z2\n",
    )
    .unwrap();
    let out = bin()
        .args(["fit", "--seed", "2", "--baseline-table", "g2"])
        .arg("--data")
        .arg(&sim_csv)
        .arg("--spec")
        .arg(&spec_path)
        .arg("--out")
        .arg(dir.join("m.hglmm"))
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("local vs global by g2"), "{text}");
    assert!(text.contains("(10,20]"), "{text}");
    assert!(text.contains("(100,1000]"), "{text}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn simulate_is_deterministic_across_job_counts() {
    let dir = workdir("jobs");
    let mut outputs = Vec::new();
    for jobs in ["1", "3"] {
        let out_csv = dir.join(format!("losses_{jobs}.csv"));
        let status = bin()
            .args([
                "simulate", "--family", "gaussian", "--n", "800,1600", "--replicates", "3",
                "--seed", "5", "--groups", "3", "--leaves", "10", "--q0", "2", "--q1", "2",
                "--q2", "2", "--jobs", jobs,
            ])
            .arg("--out")
            .arg(&out_csv)
            .output()
            .unwrap();
        assert!(status.status.success());
        // timings differ run to run; everything else must be identical
        let stable: Vec<String> = std::fs::read_to_string(&out_csv)
            .unwrap()
            .lines()
            .map(|line| {
                let fields: Vec<&str> = line.split(',').collect();
                fields
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != 4)
                    .map(|(_, v)| *v)
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect();
        outputs.push(stable);
    }
    assert_eq!(outputs[0], outputs[1]);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn archive_version_error_message() {
    let dir = workdir("version");
    let fake = dir.join("future.hglmm");
    let mut bytes = Vec::new();
    bytes.extend_from_slice(b"HGLM");
    bytes.extend_from_slice(&7u32.to_le_bytes());
    bytes.extend_from_slice(&0u64.to_le_bytes());
    std::fs::write(&fake, bytes).unwrap();
    let out = bin()
        .arg("evaluate")
        .arg("--model")
        .arg(&fake)
        .arg("--data")
        .arg(&fake)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("version 7"));
    let _ = std::fs::remove_dir_all(&dir);
}
