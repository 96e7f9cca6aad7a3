use std::fs;
use std::path::Path;

use graphpick_cli::cli_main;

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["graphpick"];
    argv.extend_from_slice(args);
    cli_main(argv)
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Small model settings so training runs in well under a second.
fn tiny_config(dir: &Path) -> String {
    let path = p(dir, "tiny.toml");
    fs::write(
        &path,
        "window = 32\nn_layers = 1\nlstm_hidden = 4\nbase_channels = 2\ndepth = 2\nbatch_size = 4\nepochs = 2\nlr = 0.001\n",
    )
    .unwrap();
    path
}

#[test]
fn synth_and_graph_are_byte_identical_on_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let mut bytes = Vec::new();
    for round in 0..2 {
        let s = p(d, &format!("s{round}.csv"));
        let g = p(d, &format!("g{round}.bin"));
        assert_eq!(run(&["synth", "--traces", "64", "--seed", "7", "--out", &s]), 0);
        assert_eq!(run(&["build-graph", "--in", &s, "--k", "8", "--out", &g]), 0);
        bytes.push((fs::read(&s).unwrap(), fs::read(&g).unwrap()));
    }
    assert_eq!(bytes[0], bytes[1]);
    let text = String::from_utf8(bytes[0].0.clone()).unwrap();
    assert!(text.starts_with("id,src_x,src_y,rcv_x,rcv_y,dt,fb_sample,s0,"));
    assert_eq!(text.lines().count(), 65);
    assert_eq!(&bytes[0].1[..4], b"FBGR");
}

#[test]
fn eval_writes_report_with_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (s, b, r, res) = (p(d, "s.csv"), p(d, "b.csv"), p(d, "r.json"), p(d, "res.csv"));
    assert_eq!(run(&["synth", "--traces", "32", "--seed", "1", "--out", &s]), 0);
    assert_eq!(run(&["baseline", "--in", &s, "--out", &b]), 0);
    assert_eq!(run(&["eval", "--picks", &b, "--labels", &s, "--tol", "2", "--report", &r, "--residuals", &res]), 0);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    for key in ["n", "n_picked", "tolerance", "accuracy", "rmse", "unit"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["n"], 32);
    assert_eq!(report["tolerance"], 2);
    assert_eq!(report["unit"], "samples");
    let acc = report["accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert!(fs::read_to_string(&res).unwrap().starts_with("id,fb_pred,fb_true,residual\n"));
}

#[test]
fn train_pick_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d);
    let (s, m, log, picks, probs, plot) =
        (p(d, "s.csv"), p(d, "m.fbck"), p(d, "m.jsonl"), p(d, "p.csv"), p(d, "q.csv"), p(d, "plot.csv"));
    assert_eq!(run(&["synth", "--traces", "24", "--seed", "2", "--out", &s]), 0);
    let train = ["train", "--in", &s, "--config", &cfg, "--k", "2", "--lmo-t0", "-0.01", "--checkpoint", &m, "--log", &log];
    assert_eq!(run(&train), 0);
    assert_eq!(fs::read_to_string(&log).unwrap().lines().count(), 2);
    let sidecar: serde_json::Value = serde_json::from_str(&fs::read_to_string(format!("{m}.json")).unwrap()).unwrap();
    assert_eq!(sidecar["model"]["encoder"]["k"], 2);
    assert_eq!(sidecar["lmo"]["window_len"], 32);
    assert_eq!(run(&["pick", "--in", &s, "--checkpoint", &m, "--out", &picks, "--probs-out", &probs]), 0);
    assert_eq!(run(&["eval", "--picks", &picks, "--labels", &s, "--probs", &probs, "--plot", &plot]), 0);
    let plot_text = fs::read_to_string(&plot).unwrap();
    assert_eq!(plot_text.lines().count(), 25);
    assert!(plot_text.starts_with("id,src_x,src_y,offset,fb_pred,fb_true,p0,"));
}

#[test]
fn validation_failures_exit_one_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = p(d, "s.csv");
    assert_eq!(run(&["synth", "--traces", "16", "--seed", "3", "--out", &s]), 0);
    let out = p(d, "out.csv");

    assert_eq!(run(&["synth", "--traces", "16", "--out", &out, "--bogus"]), 1);
    assert_eq!(run(&["build-graph", "--in", &s]), 1);
    assert_eq!(run(&["build-graph", "--in", &p(d, "missing.csv"), "--out", &out]), 1);
    assert_eq!(run(&["build-graph", "--in", &s, "--k", "0", "--out", &out]), 1);
    assert_eq!(run(&["synth", "--traces", "16", "--out", &p(d, "no/such/dir.csv")]), 1);
    assert_eq!(run(&["eval", "--picks", &s, "--labels", &s, "--plot", &out]), 1);
    assert_eq!(run(&["baseline", "--in", &s, "--out", &out, "--sta", "9", "--lta", "4"]), 1);

    let bad = p(d, "bad.toml");
    fs::write(&bad, "learning_rate = 0.1\n").unwrap();
    assert_eq!(run(&["train", "--in", &s, "--config", &bad, "--checkpoint", &out]), 1);
    assert_eq!(run(&["train", "--in", &s, "--lambda", "1.5", "--checkpoint", &out]), 1);

    let stray = p(d, "stray.csv");
    fs::write(&stray, "id,fb_pred,fb_true,residual\n999,3,,\n").unwrap();
    let report = p(d, "r.json");
    assert_eq!(run(&["eval", "--picks", &stray, "--labels", &s, "--report", &report]), 1);
    assert!(!Path::new(&report).exists());
    assert!(!Path::new(&out).exists());
}

#[test]
fn help_exits_zero() {
    assert_eq!(run(&["--help"]), 0);
    assert_eq!(run(&["train", "--help"]), 0);
    assert_eq!(run(&[]), 1);
}

#[test]
fn runtime_failures_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = p(d, "s.csv");
    assert_eq!(run(&["synth", "--traces", "16", "--seed", "3", "--out", &s]), 0);
    let ck = p(d, "broken.fbck");
    fs::write(&ck, b"FBCK\x01\x00").unwrap();
    assert_eq!(run(&["pick", "--in", &s, "--checkpoint", &ck, "--out", &p(d, "p.csv")]), 2);
    assert!(!d.join("p.csv").exists());
    if cfg!(target_os = "linux") {
        assert_eq!(run(&["synth", "--traces", "4", "--out", "/proc/graphpick-test.csv"]), 2);
    }
}
