use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ropnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ropnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("run.cfg");
    fs::write(
        &path,
        format!(
            "# small run\n\
             model.window_len = 2\n\
             model.lstm_hidden = 8\n\
             model.heads = 2\n\
             model.ffn_dim = 8\n\
             train.epochs = 2\n\
             data.synthetic.n_rows = 150\n\
             output.dir = {}\n{extra}",
            dir.join("out").display()
        ),
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_documents_every_config_key_with_defaults() {
    for args in [
        vec!["--help"],
        vec!["train", "--help"],
        vec!["compare", "--help"],
    ] {
        let out = ropnet(&args);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        for (key, default, _) in ropnet::config::KEYS {
            assert!(text.contains(key), "{args:?} help lacks {key}");
            assert!(
                text.contains(&format!("[{default}]")),
                "{args:?} help lacks default of {key}"
            );
        }
    }
}

#[test]
fn config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "train.momentum = 0.9\n");
    let out = ropnet(&["--config", &cfg, "train"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.momentum"));
    assert_eq!(ropnet(&["--model", "gru", "train"]).status.code(), Some(2));
}

#[test]
fn data_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("broken.csv");
    fs::write(&csv, "WOB,RPM\n1,2\n").unwrap();
    let cfg = dir.path().join("csv.cfg");
    fs::write(
        &cfg,
        format!(
            "data.path = {}\noutput.dir = {}\n",
            csv.display(),
            dir.path().join("out").display()
        ),
    )
    .unwrap();
    let out = ropnet(&["--config", cfg.to_str().unwrap(), "train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing columns"));
}

#[test]
fn gen_data_then_train_predict_and_explain() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(
        dir.path(),
        "model.kind = hybrid_lstm_mixer_attention\nexplain.anchors = 2\n",
    );
    let out_dir = dir.path().join("out");

    assert!(ropnet(&["--config", &cfg, "gen-data"]).status.success());
    let data = out_dir.join("synthetic.csv");
    assert!(data.exists() && out_dir.join("synthetic.truth.json").exists());

    let train = ropnet(&["--config", &cfg, "train"]);
    assert!(
        train.status.success(),
        "{}",
        String::from_utf8_lossy(&train.stderr)
    );
    let metrics: serde_json::Value = serde_json::from_slice(&train.stdout).unwrap();
    assert!(metrics["r2"].as_f64().unwrap().is_finite());
    for f in [
        "losscurve_hybrid_lstm_mixer_attention.csv",
        "metrics_hybrid_lstm_mixer_attention.json",
        "checkpoint_hybrid_lstm_mixer_attention.roph",
    ] {
        assert!(out_dir.join(f).exists(), "{f} missing");
    }

    let eval = ropnet(&["--config", &cfg, "eval"]);
    assert!(eval.status.success());
    let again: serde_json::Value = serde_json::from_slice(&eval.stdout).unwrap();
    assert_eq!(again, metrics);

    let predict = ropnet(&[
        "--config",
        &cfg,
        "predict",
        "--input",
        data.to_str().unwrap(),
    ]);
    assert!(
        predict.status.success(),
        "{}",
        String::from_utf8_lossy(&predict.stderr)
    );
    let preds = fs::read_to_string(out_dir.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("sample_index,actual,predicted,abs_error\n"));
    assert_eq!(preds.lines().count(), 1 + 150 - 1);

    let explain = ropnet(&["--config", &cfg, "explain"]);
    assert!(
        explain.status.success(),
        "{}",
        String::from_utf8_lossy(&explain.stderr)
    );
    assert!(fs::read_to_string(out_dir.join("importance.csv"))
        .unwrap()
        .starts_with("feature,importance,rank\n"));
    assert!(out_dir.join("surrogate.json").exists());
}

#[test]
fn compare_is_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path(), "");
    let mut tables = Vec::new();
    for _ in 0..2 {
        let out = ropnet(&["--config", &cfg, "--seed", "7", "compare"]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        tables.push(fs::read(dir.path().join("out/comparison.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables.remove(0)).unwrap();
    assert!(text.starts_with("model,r2,mae,rmse,mape_pct\n"));
    assert_eq!(text.lines().count(), 6);
    assert!(!text.contains("FAILED"));
}

#[test]
fn divergence_marks_failed_rows_and_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(
        dir.path(),
        "train.lr = 1e300\ncompare.models = ts_mixer,baseline_lstm\n",
    );
    let out = ropnet(&["--config", &cfg, "compare"]);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let table = fs::read_to_string(dir.path().join("out/comparison.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    assert!(table.contains("FAILED"));
}
