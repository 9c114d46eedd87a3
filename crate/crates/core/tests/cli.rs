use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--set",
    "synth_nodes_per_cluster=20",
    "--set",
    "hidden=16,8",
    "--set",
    "latent_dim=4",
    "--set",
    "epochs_ae=5",
    "--set",
    "epochs_gae=5",
    "--set",
    "epochs_train=5",
    "--set",
    "kmeans_restarts=2",
];

fn cgcn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cgcn"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn with_small<'a>(cmd: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = SMALL.to_vec();
    v.extend_from_slice(cmd);
    v
}

#[test]
fn train_twice_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&cgcn(&with_small(&["train"]), &a));
    ok(&cgcn(&with_small(&["train"]), &b));
    for f in [
        "report.json",
        "losses.csv",
        "labels.txt",
        "checkpoint.bin",
        "checkpoint.json",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let losses = fs::read_to_string(a.join("losses.csv")).unwrap();
    assert_eq!(
        losses.lines().next().unwrap(),
        "epoch,l_ae,l_f,l_s,l_pre,l_train,l_kl,total"
    );
    assert_eq!(losses.lines().count(), 1 + 5);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 0);
    assert!(report["metrics"]["nmi"].is_number());
    assert!(report["fusion"]["lambda_b"].is_number());
}

#[test]
fn synth_pretrain_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&cgcn(&with_small(&["synth"]), &data));
    for f in ["features.txt", "edges.txt", "labels.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }

    let config = dir.path().join("run.cfg");
    fs::write(
        &config,
        format!(
            "# file dataset\nfeatures = {}\nedges = {}\nlabels = {}\nk = 3\n",
            data.join("features.txt").display(),
            data.join("edges.txt").display(),
            data.join("labels.txt").display()
        ),
    )
    .unwrap();
    let cfg = config.to_str().unwrap();
    let pre = dir.path().join("pre");
    ok(&cgcn(&with_small(&["--config", cfg, "pretrain"]), &pre));
    let ckpt = pre.join("checkpoint.bin");
    assert!(ckpt.exists() && pre.join("checkpoint.json").exists());

    let run = dir.path().join("run");
    ok(&cgcn(
        &with_small(&[
            "--config",
            cfg,
            "train",
            "--checkpoint",
            ckpt.to_str().unwrap(),
        ]),
        &run,
    ));

    let truth = data.join("labels.txt");
    let pred = run.join("labels.txt");
    let out = ok(&cgcn(
        &[
            "eval",
            "--truth",
            truth.to_str().unwrap(),
            "--pred",
            pred.to_str().unwrap(),
        ],
        &run,
    ));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    for key in ["acc", "nmi", "ari", "f1", "n", "k"] {
        assert!(!v[key].is_null(), "missing {key}");
    }
    assert_eq!(v["n"], 60);
    assert_eq!(v["k"], 3);
}

#[test]
fn errors_are_reported_as_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = cgcn(&["--set", "no_such_key=1", "train"], dir.path());
    assert!(!o.status.success());
    let v: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(v["error"], "config");
    assert!(v["message"].as_str().unwrap().contains("no_such_key"));

    let bad = dir.path().join("bad.cfg");
    fs::write(&bad, "seed = 1\nthis line has no equals sign\n").unwrap();
    let o = cgcn(&["--config", bad.to_str().unwrap(), "train"], dir.path());
    let v: serde_json::Value =
        serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(v["error"], "format");
    assert!(v["message"].as_str().unwrap().contains(":2:"));
}

#[test]
fn sweep_and_ablate_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = dir.path().join("sweep");
    ok(&cgcn(
        &with_small(&["sweep", "--alphas", "0,1", "--betas", "0,0.5,2"]),
        &sweep,
    ));
    let csv = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "alpha,beta,acc,nmi,ari,f1");
    assert_eq!(csv.lines().count(), 1 + 6);
    let svg = fs::read_to_string(sweep.join("sweep_alpha.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    let svg = fs::read_to_string(sweep.join("sweep_beta.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);

    let abl = dir.path().join("abl");
    ok(&cgcn(&with_small(&["ablate", "--seeds", "0,1"]), &abl));
    let csv = fs::read_to_string(abl.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 8);
    assert!(csv
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("0,base,false,false,"));
}
