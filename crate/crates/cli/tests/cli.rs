use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_grads");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn grads(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn grads_env(args: &[&str], env: (&str, &str)) -> Output {
    Command::new(BIN).args(args).env(env.0, env.1).output().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn select_args<'a>(store: &'a str, query: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec!["select", "--store", store, "--query", query];
    v.extend_from_slice(extra);
    v
}

#[test]
fn select_matches_golden_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sel.json");
    let (store, query, proj) = (fixture("store.jsonl"), fixture("query.json"), fixture("projection.json"));
    let args = select_args(p(&store), p(&query), &["--projection", p(&proj), "--out", p(&out)]);
    assert_eq!(grads(&args).status.code(), Some(0));
    let first = std::fs::read(&out).unwrap();
    assert_eq!(first, std::fs::read(fixture("selection.golden.json")).unwrap());
    for threads in ["1", "4"] {
        assert_eq!(grads_env(&args, ("RAYON_NUM_THREADS", threads)).status.code(), Some(0));
        assert_eq!(std::fs::read(&out).unwrap(), first);
    }
}

#[test]
fn indexed_selection_agrees_with_direct() {
    let dir = tempfile::tempdir().unwrap();
    let idx = dir.path().join("index.jsonl");
    let (store, query, proj) = (fixture("store.jsonl"), fixture("query.json"), fixture("projection.json"));
    let o = grads(&["index", "--store", p(&store), "--projection", p(&proj), "--out", p(&idx)]);
    assert_eq!(o.status.code(), Some(0));
    let with_index = grads(&select_args(p(&store), p(&query), &["--projection", p(&proj), "--index", p(&idx)]));
    assert_eq!(with_index.status.code(), Some(0));
    let golden = std::fs::read(fixture("selection.golden.json")).unwrap();
    assert_eq!(with_index.stdout, golden);

    // Same index scored against a different projection is rejected.
    let stale = grads(&select_args(p(&store), p(&query), &["--index", p(&idx)]));
    assert_eq!(stale.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&stale.stderr).contains("stale"));
}

#[test]
fn assemble_matches_prompt_golden() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("prompt.txt");
    let o = grads(&[
        "assemble",
        "--store",
        p(&fixture("store.jsonl")),
        "--query",
        p(&fixture("query.json")),
        "--selection",
        p(&fixture("selection.golden.json")),
        "--task",
        "Solve the arithmetic question.",
        "--out",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(fixture("prompt.golden.txt")).unwrap());
}

#[test]
fn select_can_emit_the_prompt_directly() {
    let dir = tempfile::tempdir().unwrap();
    let prompt = dir.path().join("prompt.txt");
    let o = grads(&select_args(
        p(&fixture("store.jsonl")),
        p(&fixture("query.json")),
        &[
            "--projection",
            p(&fixture("projection.json")),
            "--task",
            "Solve the arithmetic question.",
            "--emit-prompt",
            p(&prompt),
        ],
    ));
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read(&prompt).unwrap(), std::fs::read(fixture("prompt.golden.txt")).unwrap());
}

#[test]
fn baselines_run_and_respect_k() {
    let (store, query) = (fixture("store.jsonl"), fixture("query.json"));
    for m in ["bm25", "cosine", "mmr"] {
        let o = grads(&select_args(p(&store), p(&query), &["--method", m, "--k", "2"]));
        assert_eq!(o.status.code(), Some(0), "{m}");
        let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(v["method"], m);
        assert_eq!(v["selected"].as_array().unwrap().len(), 2);
    }
    let o = grads(&select_args(p(&store), p(&query), &["--method", "bm25", "--match-field", "input_output"]));
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let (store, query) = (fixture("store.jsonl"), fixture("query.json"));

    let q3 = dir.path().join("q3.json");
    std::fs::write(&q3, r#"{"id":"q","x":[1.0,2.0,3.0]}"#).unwrap();
    assert_eq!(grads(&select_args(p(&store), p(&q3), &[])).status.code(), Some(3));

    assert_eq!(grads(&select_args(p(&store), p(&query), &["--k", "0"])).status.code(), Some(2));
    assert_eq!(grads(&select_args(p(&store), p(&query), &["--method", "nope"])).status.code(), Some(2));
    assert_eq!(grads(&select_args(p(&store), p(&query), &["--lambda", "2"])).status.code(), Some(2));

    let broken = dir.path().join("broken.jsonl");
    let mut text = std::fs::read_to_string(&store).unwrap();
    text.push_str("{\"id\":\"x\",\"text_input\":\n");
    std::fs::write(&broken, text).unwrap();
    let o = grads(&select_args(p(&broken), p(&query), &[]));
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 8"));

    assert_eq!(grads(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(grads(&["--help"]).status.code(), Some(0));
}

#[test]
fn failed_write_leaves_existing_output_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sel.json");
    std::fs::write(&out, "previous").unwrap();
    let q3 = dir.path().join("q3.json");
    std::fs::write(&q3, r#"{"id":"q","x":[1.0,2.0,3.0]}"#).unwrap();
    let o = grads(&select_args(p(&fixture("store.jsonl")), p(&q3), &["--out", p(&out)]));
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "previous");
}

#[test]
fn verify_passes_and_negative_control_fails() {
    let ok = grads(&["verify", "--trials", "60", "--seed", "4"]);
    assert_eq!(ok.status.code(), Some(0));
    let text = String::from_utf8_lossy(&ok.stdout);
    assert!(text.contains("fd-agreement: 120/120"), "{text}");

    let bad = grads(&["verify", "--trials", "60", "--seed", "4", "--break-transpose"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("seed 4"));
}

#[test]
fn selection_with_network_layer() {
    let dir = tempfile::tempdir().unwrap();
    let net = dir.path().join("net.json");
    std::fs::write(
        &net,
        r#"{"dim":2,"layers":[
            {"rho":1.0,"w_pv":[[0.1,0,0,0],[0,0.1,0,0],[0,0,0.2,0],[0,0,0,0.2]],"w_kq":[[0.3,0,0,0],[0,0.3,0,0],[0,0,0.1,0],[0,0,0,0.1]]},
            {"rho":2.0,"w_pv":[[0.2,0,0,0],[0,0.2,0,0],[0,0,0.3,0],[0,0,0,0.3]],"w_kq":[[0.2,0.1,0,0],[0,0.2,0,0],[0,0,0.1,0],[0,0,0,0.1]]}
        ]}"#,
    )
    .unwrap();
    let (store, query) = (fixture("store.jsonl"), fixture("query.json"));
    for layer in ["1", "2"] {
        let o = grads(&select_args(p(&store), p(&query), &["--network", p(&net), "--layer", layer]));
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let o = grads(&select_args(p(&store), p(&query), &["--network", p(&net), "--layer", "3"]));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn simulate_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = grads(&["simulate", "--seed", "0", "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["flow_curve.csv", "boundary.csv", "config.json", "network.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let flow = std::fs::read_to_string(out.join("flow_curve.csv")).unwrap();
    assert_eq!(flow.lines().next(), Some("layer,mean_flow_effective,mean_flow_ineffective,ratio"));
    assert_eq!(flow.lines().count(), 5);

    // The trained network feeds straight back into selection.
    let sel = grads(&select_args(
        p(&fixture("store.jsonl")),
        p(&fixture("query.json")),
        &["--network", p(&out.join("network.json"))],
    ));
    assert_eq!(sel.status.code(), Some(3));
}
