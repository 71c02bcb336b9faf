use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use approx::assert_relative_eq;
use nalgebra::DMatrix;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_narrinf"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// Runs the binary and returns its exit code and stderr.
fn run(args: &[&str]) -> (i32, String) {
    let out = bin().args(args).output().expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_dataset(dir: &Path, edges: &str, covariates: &str, outcomes: &str, sources: &str) {
    fs::create_dir_all(dir).unwrap();
    fs::write(dir.join("edges.csv"), format!("src,dst,weight\n{edges}")).unwrap();
    fs::write(dir.join("covariates.csv"), covariates).unwrap();
    fs::write(dir.join("outcomes.csv"), format!("vertex_id,y\n{outcomes}")).unwrap();
    fs::write(dir.join("sources.csv"), format!("vertex_id,z\n{sources}")).unwrap();
}

fn write_params(path: &Path, tau: f64, gamma: f64, beta: f64, mu: f64) {
    fs::write(
        path,
        format!(r#"{{"tau":{tau},"gamma":[{gamma}],"beta":[{beta}],"mu":{mu},"sigma_eps":0.0}}"#),
    )
    .unwrap();
}

fn ingest_fixture(tmp: &TempDir) -> PathBuf {
    let out = tmp.path().join("data");
    let (code, err) = run(&[
        "ingest",
        "--input",
        p(&fixture("tweets.jsonl")),
        "--narrative",
        p(&fixture("narrative.json")),
        "--out",
        p(&out),
    ]);
    assert_eq!(code, 0, "{err}");
    out
}

/// Short chains; `max_rhat` is loose since only mechanics are under test.
fn quick_fit(data: &Path, out: &Path, seed: &str, max_rhat: &str, extra: &[&str]) -> i32 {
    let mut args = vec![
        "fit", "--data", p(data), "--out", p(out), "--seed", seed, "--iters", "600", "--burn", "300",
        "--chains", "2", "--max-rhat", max_rhat,
    ];
    args.extend_from_slice(extra);
    run(&args).0
}

#[test]
fn ingest_fixture_writes_dataset_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = ingest_fixture(&tmp);
    for f in ["edges.csv", "covariates.csv", "outcomes.csv", "sources.csv", "accounts.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let covariates = fs::read_to_string(out.join("covariates.csv")).unwrap();
    // Off-narrative accounts are not vertices.
    assert!(!covariates.contains("x1,"));
    assert_eq!(covariates.lines().count(), 41);
    let (code, _) = run(&["verify", "--manifest", p(&out.join("manifest.json"))]);
    assert_eq!(code, 0);
}

#[test]
fn narrative_matching_nothing_exits_3() {
    let tmp = TempDir::new().unwrap();
    let spec = tmp.path().join("narr.json");
    fs::write(&spec, r#"{"hashtags":["NothingLikeThis"],"keywords":[],"case_sensitive":false}"#).unwrap();
    let out = tmp.path().join("out");
    let (code, err) = run(&["ingest", "--input", p(&fixture("tweets.jsonl")), "--narrative", p(&spec), "--out", p(&out)]);
    assert_eq!(code, 3, "{err}");
    assert!(err.contains("narrative"));
    assert!(!out.exists());
}

#[test]
fn missing_input_exits_2() {
    let tmp = TempDir::new().unwrap();
    let (code, _) = run(&[
        "ingest",
        "--input",
        p(&tmp.path().join("nope.jsonl")),
        "--narrative",
        p(&fixture("narrative.json")),
        "--out",
        p(&tmp.path().join("out")),
    ]);
    assert_eq!(code, 2);
}

#[test]
fn fit_rejects_burn_not_below_iters() {
    let tmp = TempDir::new().unwrap();
    let data = ingest_fixture(&tmp);
    let (code, err) = run(&["fit", "--data", p(&data), "--out", p(&tmp.path().join("fit")), "--iters", "100", "--burn", "100"]);
    assert_eq!(code, 2, "{err}");
    assert!(!tmp.path().join("fit").exists());
}

#[test]
fn fit_is_byte_identical_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let data = ingest_fixture(&tmp);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(quick_fit(&data, &a, "7", "100", &["--threads", "1"]), 0);
    assert_eq!(quick_fit(&data, &b, "7", "100", &["--threads", "3"]), 0);
    let read = |d: &Path| fs::read(d.join("posterior.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = tmp.path().join("c");
    assert_eq!(quick_fit(&data, &c, "8", "100", &[]), 0);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn unmet_rhat_threshold_exits_4_with_outputs() {
    let tmp = TempDir::new().unwrap();
    let data = ingest_fixture(&tmp);
    let out = tmp.path().join("fit");
    assert_eq!(quick_fit(&data, &out, "7", "1.0", &[]), 4);
    assert!(out.join("posterior.csv").is_file());
    assert!(out.join("diagnostics.json").is_file());
}

fn edgeless_pair(tmp: &TempDir) -> PathBuf {
    let dir = tmp.path().join("pair");
    write_dataset(&dir, "", "vertex_id,x\nv1,0\nv2,0\n", "v1,1\nv2,1\n", "v1,0\nv2,0\n");
    dir
}

fn degenerate_posterior(path: &Path, tau: f64) {
    let mut s = String::from("chain,draw,tau,gamma_1,beta_1,mu,sigma_eps\n");
    for d in 0..10 {
        s.push_str(&format!("0,{d},{tau},0.5,0,0,0\n"));
    }
    fs::write(path, s).unwrap();
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn impact_on_edgeless_pair_is_one_half() {
    let tmp = TempDir::new().unwrap();
    let data = edgeless_pair(&tmp);
    let post = tmp.path().join("posterior.csv");
    degenerate_posterior(&post, std::f64::consts::LN_2);
    let out = tmp.path().join("impact.csv");
    let (code, err) = run(&["impact", "--data", p(&data), "--posterior", p(&post), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
    let (header, rows) = read_csv(&out);
    assert_eq!(header, ["vertex_id", "screen_name", "zeta_mean", "zeta_lo", "zeta_hi", "n_draws"]);
    let v1 = rows.iter().find(|r| r[0] == "v1").unwrap();
    assert_relative_eq!(v1[2].parse::<f64>().unwrap(), 0.5, max_relative = 1e-12);
}

#[test]
fn impact_vertex_subset_gives_one_row() {
    let tmp = TempDir::new().unwrap();
    let data = edgeless_pair(&tmp);
    let post = tmp.path().join("posterior.csv");
    degenerate_posterior(&post, 0.3);
    let out = tmp.path().join("impact.csv");
    let (code, _) = run(&["impact", "--data", p(&data), "--posterior", p(&post), "--out", p(&out), "--vertices", "v2"]);
    assert_eq!(code, 0);
    let (_, rows) = read_csv(&out);
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "v2");
    let (code, _) = run(&["impact", "--data", p(&data), "--posterior", p(&post), "--out", p(&out), "--vertices", "v9"]);
    assert_eq!(code, 2);
}

#[test]
fn empty_posterior_exits_2() {
    let tmp = TempDir::new().unwrap();
    let data = edgeless_pair(&tmp);
    let post = tmp.path().join("posterior.csv");
    fs::write(&post, "chain,draw,tau,gamma_1,beta_1,mu,sigma_eps\n").unwrap();
    let (code, _) = run(&["impact", "--data", p(&data), "--posterior", p(&post), "--out", p(&tmp.path().join("i.csv"))]);
    assert_eq!(code, 2);
}

#[test]
fn crlb_on_four_vertex_design_matches_dense_inverse() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("four");
    write_dataset(
        &data,
        "v1,v2,1\nv1,v3,2\n",
        "vertex_id,x\nv1,0\nv2,1\nv3,2\nv4,3\n",
        "v1,1\nv2,1\nv3,1\nv4,1\n",
        "v1,1\nv2,0\nv3,0\nv4,0\n",
    );
    let (tau, gamma, beta, mu) = (0.8, 0.4, 0.2, -0.3);
    let params = tmp.path().join("params.json");
    write_params(&params, tau, gamma, beta, mu);
    let out = tmp.path().join("crlb.json");
    let (code, err) = run(&["crlb", "--data", p(&data), "--params", p(&params), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");

    let z = [1.0, 0.0, 0.0, 0.0];
    let s = [0.0, 2f64.ln(), 3f64.ln(), 0.0];
    let x = [0.0, 1.0, 2.0, 3.0];
    let mut f = DMatrix::<f64>::zeros(4, 4);
    for i in 0..4 {
        let lambda = (tau * z[i] + tau * gamma * s[i] + beta * x[i] + mu).exp();
        let g = nalgebra::DVector::from_vec(vec![z[i] + gamma * s[i], tau * s[i], x[i], 1.0]);
        f += &g * g.transpose() * lambda;
    }
    let inv = f.clone().lu().try_inverse().unwrap();

    let report: serde_json::Value = serde_json::from_slice(&fs::read(&out).unwrap()).unwrap();
    let bound = report["crlb"].as_array().unwrap();
    assert_eq!(bound.len(), 4);
    for r in 0..4 {
        let row = bound[r].as_array().unwrap();
        assert_eq!(row.len(), 4);
        for c in 0..4 {
            assert_relative_eq!(row[c].as_f64().unwrap(), inv[(r, c)], max_relative = 1e-8, epsilon = 1e-12);
        }
    }
    assert_relative_eq!(report["f11"].as_f64().unwrap(), f[(0, 0)], max_relative = 1e-12);
    assert_relative_eq!(report["f22"].as_f64().unwrap(), f[(1, 1)], max_relative = 1e-12);
}

#[test]
fn crlb_single_vertex_is_singular() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("one");
    write_dataset(&data, "", "vertex_id,x\nv1,0.5\n", "v1,2\n", "v1,1\n");
    let params = tmp.path().join("params.json");
    write_params(&params, 1.0, 0.5, 0.3, -0.5);
    let out = tmp.path().join("crlb.json");
    let (code, err) = run(&["crlb", "--data", p(&data), "--params", p(&params), "--out", p(&out)]);
    assert_eq!(code, 6, "{err}");
    assert!(!out.exists());
}

#[test]
fn crlb_multi_covariate_is_unsupported() {
    let tmp = TempDir::new().unwrap();
    let data = tmp.path().join("two");
    write_dataset(&data, "v1,v2,1\n", "vertex_id,x,w\nv1,0,1\nv2,1,0\n", "v1,1\nv2,1\n", "v1,1\nv2,0\n");
    let params = tmp.path().join("params.json");
    write_params(&params, 1.0, 0.5, 0.3, -0.5);
    let (code, _) = run(&["crlb", "--data", p(&data), "--params", p(&params), "--out", p(&tmp.path().join("c.json"))]);
    assert_eq!(code, 5);
}

fn simulate(out: &Path, n: &str, seed: &str) -> i32 {
    run(&["simulate", "--n", n, "--seed", seed, "--out", p(out)]).0
}

#[test]
fn simulate_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(simulate(&a, "50", "4"), 0);
    assert_eq!(simulate(&b, "50", "4"), 0);
    for f in ["tweets.jsonl", "edges.csv", "outcomes.csv", "sources.csv", "covariates.csv", "truth.json", "accounts.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn simulate_single_account_round_trips() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(simulate(&sim, "1", "2"), 0);
    let data = tmp.path().join("data");
    let (code, err) = run(&[
        "ingest",
        "--input",
        p(&sim.join("tweets.jsonl")),
        "--narrative",
        p(&sim.join("narrative.json")),
        "--out",
        p(&data),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(fs::read_to_string(data.join("outcomes.csv")).unwrap().lines().count(), 2);
}

#[test]
fn simulate_rejects_invalid_params() {
    let tmp = TempDir::new().unwrap();
    let params = tmp.path().join("bad.json");
    write_params(&params, -1.0, 0.5, 0.3, 0.0);
    let (code, _) = run(&["simulate", "--params", p(&params), "--out", p(&tmp.path().join("s"))]);
    assert_eq!(code, 2);
}

#[test]
fn simulated_truth_files_feed_crlb() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(simulate(&sim, "200", "5"), 0);
    let out = tmp.path().join("crlb.json");
    let (code, err) = run(&["crlb", "--data", p(&sim), "--params", p(&sim.join("truth.json")), "--out", p(&out)]);
    assert_eq!(code, 0, "{err}");
}

#[test]
fn tampered_output_fails_verification() {
    let tmp = TempDir::new().unwrap();
    let sim = tmp.path().join("sim");
    assert_eq!(simulate(&sim, "20", "1"), 0);
    let manifest = sim.join("manifest.json");
    assert_eq!(run(&["verify", "--manifest", p(&manifest)]).0, 0);
    fs::write(sim.join("outcomes.csv"), "vertex_id,y\n").unwrap();
    let (code, err) = run(&["verify", "--manifest", p(&manifest)]);
    assert_eq!(code, 2);
    assert!(err.contains("outcomes.csv"));
}
