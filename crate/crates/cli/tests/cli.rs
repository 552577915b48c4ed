use std::path::Path;
use std::process::{Command, Output};

fn mlstream(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlstream")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = mlstream(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn end_to_end_commands() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("c.txt");
    let ckpt = dir.path().join("m.ckpt");
    ok(&["gen-data", "--train", "8", "--dev", "2", "--test", "2", "--vocab-size", "6", "--d-feat", "3", "--out", s(&corpus)]);
    assert!(std::fs::read_to_string(&corpus).unwrap().starts_with("MLSCORPUS v1 V=6 d_feat=3 train=8 dev=2 test=2\n"));

    ok(&[
        "train", "--corpus", s(&corpus), "--mode", "multiple-A", "--spec", "8-4-4", "--epochs", "1", "--batch-size", "4",
        "--layers", "1", "--d-model", "8", "--heads", "2", "--ff-dim", "8", "--joint-dim", "8", "--out", s(&ckpt),
    ]);
    assert!(ckpt.exists());

    let report = ok(&["eval", "--corpus", s(&corpus), "--checkpoint", s(&ckpt), "--mode", "multiple-A", "--split", "dev"]);
    assert!(!report.trim().is_empty());

    let lines = ok(&["stream", "--corpus", s(&corpus), "--checkpoint", s(&ckpt), "--mode", "b", "--index", "1"]);
    let records: Vec<serde_json::Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert!(!records.is_empty());
    for (i, r) in records.iter().enumerate() {
        assert_eq!(r["clock_ms"].as_u64().unwrap() % 128, 0, "{r}");
        assert!(r["committed"].is_array() && r["provisional"].is_array());
        assert!(r["done"].is_boolean());
        if i > 0 {
            assert!(r["clock_ms"].as_u64() >= records[i - 1]["clock_ms"].as_u64());
        }
    }

    let config = dir.path().join("exp.conf");
    std::fs::write(
        &config,
        "corpus = c.txt\nepochs = 1\nbatch_size = 4\nlayers = 1\nd_model = 8\nheads = 2\nff_dim = 8\njoint_dim = 8\nrow = tiny single 8-4-0\nrow = tiny single 8-4-8\n",
    )
    .unwrap();
    let csv_path = dir.path().join("out.csv");
    ok(&["experiment", "--config", s(&config), "--out", s(&csv_path)]);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "model,mode,block_setting,delay_ms,error_rate");
    assert!(rows[1].starts_with("tiny,single,8-4-0,0,"));
    assert!(rows[2].starts_with("tiny,single,8-4-8,256,"));
    assert_eq!(ok(&["experiment", "--config", s(&config)]), csv);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.txt");
    for args in [
        vec!["eval", "--corpus", s(&missing), "--checkpoint", s(&missing)],
        vec!["gen-data", "--vocab-size", "2", "--out", s(&missing)],
        vec!["train", "--corpus", s(&missing), "--mode", "multiple-A", "--spec", "8-4-3", "--out", s(&missing)],
    ] {
        let out = mlstream(&args);
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let config = dir.path().join("exp.conf");
    std::fs::write(&config, "corpus = absent.txt\nrow = m single 8-4-0\n").unwrap();
    let out = mlstream(&["experiment", "--config", s(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("gen-data"));
}
