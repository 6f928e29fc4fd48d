use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn infsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_infsel"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn manifest_id(dir: &Path) -> String {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    m["id"].as_str().unwrap().to_string()
}

/// Body lines of a tagged CSV after checking its manifest line.
fn csv_body(path: &Path, id: &str) -> Vec<String> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), format!("# manifest: {id}"), "{}", path.display());
    lines.map(str::to_string).collect()
}

#[test]
fn compare_writes_one_trace_per_method_and_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = infsel(&[
        "compare", "--synthetic", "outlier_regression", "--n", "2000", "--d", "10", "--iters", "200", "--seeds", "10",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let traces: Vec<_> = fs::read_dir(out.join("traces")).unwrap().collect();
    assert_eq!(traces.len(), 20);
    let id = manifest_id(&out);
    for t in traces {
        let body = csv_body(&t.unwrap().path(), &id);
        assert_eq!(body[0], "step,added_indices,objective,cumulative_points,wall_time_ms");
        assert_eq!(body.len(), 202);
    }
    let summary = csv_body(&out.join("summary.csv"), &id);
    assert_eq!(summary[0], "step,mean_objective,sd_objective,method");
    assert_eq!(summary.len(), 1 + 2 * 201);
    assert!(summary[1].ends_with(",greedy"));
    assert!(summary.last().unwrap().ends_with(",random"));
}

#[test]
fn zero_iterations_summarize_initial_objectives() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = infsel(&["compare", "--synthetic", "two_gaussians", "--n", "300", "--d", "4", "--iters", "0", "--seeds", "3",
        "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let summary = csv_body(&out.join("summary.csv"), &manifest_id(&out));
    assert_eq!(summary.len(), 3);
    let greedy: Vec<&str> = summary[1].split(',').collect();
    let random: Vec<&str> = summary[2].split(',').collect();
    assert_eq!(greedy[0], "0");
    assert_eq!(greedy[1..3], random[1..3]);
}

#[test]
fn csv_input_and_invalid_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("d.csv");
    let mut text = String::from("a,b,label\n");
    for i in 0..60 {
        let x = i as f64 / 10.0;
        text.push_str(&format!("{x},{},{}\n", (i * 7 % 11) as f64, if x + (i % 3) as f64 > 3.5 { "yes" } else { "no" }));
    }
    fs::write(&data, text).unwrap();
    let out = tmp.path().join("run");
    let o = infsel(&["compare", "--data", data.to_str().unwrap(), "--target-col", "label", "--task", "classification",
        "--iters", "5", "--seeds", "2", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["dataset"]["fingerprints"][0]["rows"], 60);
    assert_eq!(m["dataset"]["fingerprints"][0]["cols"], 2);

    let o = infsel(&["compare", "--synthetic", "two_gaussians", "--epsilon", "1.5"]);
    assert_eq!(o.status.code(), Some(2));
    let o = infsel(&["compare", "--data", data.to_str().unwrap(), "--target-col", "missing", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));
}

#[test]
fn transfer_grid_and_evaluator_record() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = infsel(&["transfer", "--synthetic", "hetero_regression", "--n", "400", "--d", "3", "--iters", "30",
        "--seeds", "2", "--eval-every", "10", "--evaluator", "gradient_boosted", "--n-trees", "50",
        "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let id = manifest_id(&out);
    let summary = csv_body(&out.join("summary.csv"), &id);
    let steps = |method: &str| -> Vec<String> {
        summary[1..]
            .iter()
            .filter(|l| l.ends_with(&format!(",{method}")))
            .map(|l| l.split(',').next().unwrap().to_string())
            .collect()
    };
    assert_eq!(steps("greedy"), vec!["0", "10", "20", "30"]);
    assert_eq!(steps("greedy"), steps("random"));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let ev = &m["config"]["transfer"]["evaluator"];
    assert_eq!(ev["mode"], "gradient_boosted");
    assert_eq!(ev["n_trees"], 50);
    assert!(ev.get("max_depth").is_some() && ev.get("learning_rate").is_some());
    assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 8);
}

#[test]
fn tune_ranks_and_pairing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = infsel(&["tune", "--synthetic", "hetero_regression", "--n", "300", "--d", "3", "--iters", "3",
        "--seeds", "2", "--eta-cycle", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let id = manifest_id(&out);
    let ranks = csv_body(&out.join("ranks.csv"), &id);
    assert_eq!(ranks[0], "seed,hyperband_iter,eta,challenger_score,random_score,challenger_rank,configs_paired");
    assert_eq!(ranks.len(), 1 + 2 * 3);
    for row in &ranks[1..] {
        let cells: Vec<&str> = row.split(',').collect();
        assert_eq!(cells[2], "3");
        assert!(["1", "1.5", "2"].contains(&cells[5]), "{row}");
        assert_eq!(cells[6], "true");
    }
    for t in fs::read_dir(out.join("traces")).unwrap() {
        let body = csv_body(&t.unwrap().path(), &id);
        assert_eq!(body[0], "hyperband_iter,bracket,rung,config_json,resource,score,wall_time_ms");
    }
    let summary = csv_body(&out.join("summary.csv"), &id);
    assert!(summary.iter().any(|l| l.ends_with(",influence_rank")));
}

#[test]
fn verify_filter_quick_and_exit_status() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("v");
    let o = infsel(&["verify", "--only", "delta_ordering", "--quick", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let doc: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("properties.json")).unwrap()).unwrap();
    assert_eq!(doc["manifest"], manifest_id(&out).as_str());
    let props = doc["properties"].as_array().unwrap();
    assert_eq!(props.len(), 1);
    assert_eq!(props[0]["name"], "delta_ordering");
    assert_eq!(props[0]["quick"], true);

    let o = infsel(&["verify", "--only", "no_such_property"]);
    assert_eq!(o.status.code(), Some(2));
}
