mod common;

use std::fs;

use common::*;
use xdrec_core::corpus::read_prepared;
use xdrec_core::trainer::{save_checkpoint, TrainState};
use xdrec_core::{Domain, HyperParams};

#[test]
fn synth_prepare_train_eval_probe() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    let block = parse_block(&ok(&[
        "synth",
        "--out",
        s(&raw),
        "--users",
        "40",
        "--seed",
        "3",
    ]));
    let n_events: usize = block["events"].parse().unwrap();
    let lines = fs::read_to_string(raw.join("events.tsv"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, n_events);

    let data = tmp.path().join("data");
    let stdout = ok(&[
        "prepare",
        "--events",
        s(&raw.join("events.tsv")),
        "--out",
        s(&data),
        "--min-interactions",
        "1",
    ]);
    let stats = parse_block(&stdout);
    for key in [
        "items_x",
        "items_y",
        "users",
        "train_sequences",
        "val_x",
        "test_x",
        "val_y",
        "test_y",
        "avg_length",
    ] {
        assert!(stats.contains_key(key), "missing {key} in {stdout}");
    }
    assert_eq!(stats["users"], "40");
    assert_eq!(stats["rejected_lines"], "0");
    let prepared = read_prepared(&data).unwrap();
    assert_eq!(stats["items_x"], prepared.vocab.size(Domain::X).to_string());

    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run), "--seed", "1"];
    args.extend_from_slice(TINY);
    ok(&args);
    for f in [
        "hyperparams.json",
        "history.jsonl",
        "metrics_test.json",
        "metrics_test.csv",
        "checkpoint/manifest.json",
        "checkpoint/tensors.bin",
    ] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let history = fs::read_to_string(run.join("history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
    let csv = fs::read_to_string(run.join("metrics_test.csv")).unwrap();
    assert_eq!(csv.lines().next(), Some("partition,domain,metric,value"));

    let ckpt = run.join("checkpoint");
    let printed: serde_json::Value =
        serde_json::from_str(&ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt)])).unwrap();
    assert_eq!(printed, read_json(&run.join("metrics_test.json")));

    let same = tmp.path().join("probe1");
    ok(&[
        "probe",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--group",
        "1-5",
        "--coefficient",
        "1",
        "--out",
        s(&same),
    ]);
    let probed: serde_json::Value = serde_json::from_str(&ok(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&same.join("checkpoint")),
    ]))
    .unwrap();
    for dom in ["x", "y"] {
        for (k, v) in printed[dom].as_object().unwrap() {
            let (a, b) = (v.as_f64().unwrap(), probed[dom][k].as_f64().unwrap());
            assert!((a - b).abs() <= 1e-9, "{dom}.{k}: {a} vs {b}");
        }
    }

    let half = tmp.path().join("probe05");
    ok(&[
        "probe",
        "--data",
        s(&data),
        "--checkpoint",
        s(&ckpt),
        "--group",
        "2-3",
        "--coefficient",
        "0.5",
        "--out",
        s(&half),
    ]);
    let spectrum = fs::read_to_string(half.join("spectrum.csv")).unwrap();
    let mut rows = spectrum.lines();
    assert_eq!(rows.next(), Some("pre,post"));
    for (k, row) in rows.enumerate() {
        let (pre, post) = row.split_once(',').unwrap();
        let (pre, post): (f64, f64) = (pre.parse().unwrap(), post.parse().unwrap());
        let expected = if (1..=2).contains(&k) { pre * 0.5 } else { pre };
        assert_eq!(post, expected, "row {k}");
    }
}

#[test]
fn prepare_is_byte_identical_on_rerun() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    ok(&["synth", "--out", s(&raw), "--users", "30"]);
    let events = raw.join("events.tsv");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        ok(&[
            "prepare",
            "--events",
            s(&events),
            "--out",
            s(dir),
            "--min-interactions",
            "1",
            "--split-seed",
            "7",
        ]);
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 7);
    for name in names {
        assert_eq!(
            fs::read(a.join(&name)).unwrap(),
            fs::read(b.join(&name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn config_file_drives_prepare() {
    let tmp = tempfile::tempdir().unwrap();
    let raw = tmp.path().join("raw");
    ok(&["synth", "--out", s(&raw), "--users", "30"]);
    let cfg = tmp.path().join("exp.toml");
    fs::write(
        &cfg,
        format!(
            "[data]\nevents = {:?}\nprepared = {:?}\nmin_interactions = 1\n[graph]\nwindow = 2\n",
            raw.join("events.tsv"),
            tmp.path().join("data")
        ),
    )
    .unwrap();
    ok(&["--config", s(&cfg), "prepare"]);
    let stats = read_json(&tmp.path().join("data/stats.json"));
    assert_eq!(stats["window"], 2);
    assert_eq!(stats["min_interactions"], 1);
}

#[test]
fn usage_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), 20, 0);
    let missing = tmp.path().join("nope");
    let bad_cfg = tmp.path().join("bad.toml");
    fs::write(&bad_cfg, "[train]\ndimension = 3\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["train", "--data", s(&missing), "--out", s(tmp.path())],
        vec![
            "ablate",
            "--variant",
            "A",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
        ],
        vec![
            "--config",
            s(&bad_cfg),
            "train",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
        ],
        vec!["eval", "--data", s(&data), "--checkpoint", s(&missing)],
        vec![
            "train",
            "--data",
            s(&data),
            "--out",
            s(tmp.path()),
            "--lr",
            "-1",
        ],
        vec!["prepare", "--events", s(&missing), "--out", s(tmp.path())],
        vec!["train"],
        vec!["frobnicate"],
    ];
    for args in cases {
        let out = xdrec(&args);
        assert_eq!(
            out.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}

#[test]
fn probe_group_beyond_rank_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), 20, 0);
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run)];
    args.extend_from_slice(TINY);
    ok(&args);
    let ckpt = run.join("checkpoint");
    for (group, coef) in [
        ("1-9", "0.5"),
        ("0-1", "0.5"),
        ("2-1", "0.5"),
        ("1-2", "1.5"),
        ("one", "0.5"),
    ] {
        let out = xdrec(&[
            "probe",
            "--data",
            s(&data),
            "--checkpoint",
            s(&ckpt),
            "--group",
            group,
            "--coefficient",
            coef,
            "--out",
            s(&tmp.path().join("p")),
        ]);
        assert_eq!(out.status.code(), Some(2), "{group} {coef}");
    }
}

#[test]
fn corrupt_checkpoint_is_a_runtime_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), 20, 0);
    let run = tmp.path().join("run");
    let mut args = vec!["train", "--data", s(&data), "--out", s(&run)];
    args.extend_from_slice(TINY);
    ok(&args);
    let tensors = run.join("checkpoint/tensors.bin");
    let mut bytes = fs::read(&tensors).unwrap();
    bytes.truncate(bytes.len() / 2);
    fs::write(&tensors, bytes).unwrap();
    let out = xdrec(&[
        "eval",
        "--data",
        s(&data),
        "--checkpoint",
        s(&run.join("checkpoint")),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn ablate_all_is_variant_b() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), 20, 0);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--out",
        s(&a),
        "--ablate",
        "all",
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    let mut args = vec![
        "ablate",
        "--variant",
        "b",
        "--data",
        s(&data),
        "--out",
        s(&b),
    ];
    args.extend_from_slice(TINY);
    ok(&args);
    assert_eq!(
        read_json(&a.join("hyperparams.json")),
        read_json(&b.join("hyperparams.json"))
    );
    assert_eq!(
        read_json(&a.join("metrics_test.json")),
        read_json(&b.join("metrics_test.json"))
    );
}

#[test]
fn seeds_write_median_report() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), 20, 0);
    let run = tmp.path().join("run");
    let mut args = vec![
        "train",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--seeds",
        "0,1,2",
    ];
    args.extend_from_slice(TINY);
    let stdout = ok(&args);
    assert_eq!(stdout.lines().filter(|l| l.starts_with("seed ")).count(), 3);
    let median = read_json(&run.join("median_test.json"));
    for dom in ["x", "y"] {
        for metric in ["mrr", "ndcg10", "recall10"] {
            let mut v: Vec<f64> = (0..3)
                .map(|s| {
                    read_json(&run.join(format!("seed-{s}/metrics_test.json")))[dom][metric]
                        .as_f64()
                        .unwrap()
                })
                .collect();
            v.sort_by(f64::total_cmp);
            assert_eq!(
                median[dom][metric].as_f64().unwrap(),
                v[1],
                "{dom}.{metric}"
            );
        }
    }
}

#[test]
fn relative_outputs_land_under_out_root() {
    let tmp = tempfile::tempdir().unwrap();
    let out = xdrec_env(
        &["synth", "--out", "raw", "--users", "10"],
        &[("XDREC_OUT", tmp.path())],
    );
    assert!(out.status.success());
    assert!(tmp.path().join("raw/events.tsv").is_file());
}

#[test]
fn untrained_checkpoint_scores_near_chance() {
    let tmp = tempfile::tempdir().unwrap();
    let data = prepared(tmp.path(), 60, 4);
    let prepared = read_prepared(&data).unwrap();
    let (n_x, n_y) = (
        prepared.vocab.size(Domain::X),
        prepared.vocab.size(Domain::Y),
    );
    let hp = HyperParams {
        dim: 8,
        max_len: 10,
        ..HyperParams::default()
    };
    let ckpt = tmp.path().join("fresh");
    save_checkpoint(
        &ckpt,
        &TrainState::new(&hp, n_x, n_y).to_checkpoint(&hp, n_x, n_y),
    )
    .unwrap();
    let report: serde_json::Value =
        serde_json::from_str(&ok(&["eval", "--data", s(&data), "--checkpoint", s(&ckpt)])).unwrap();
    for (dom, n) in [("x", n_x), ("y", n_y)] {
        let mrr = report[dom]["mrr"].as_f64().unwrap();
        let chance: f64 = (1..=n).map(|r| 1.0 / r as f64).sum::<f64>() / n as f64;
        assert!(mrr < 4.0 * chance, "{dom}: mrr {mrr}, chance {chance}");
    }
}
