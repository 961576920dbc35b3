// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oblivinfer"))
        .args(args)
        .env_remove("OBLIVINFER_DATA")
        .output()
        .expect("spawn")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_idx(dir: &Path, prefix: &str, n: usize) {
    let mut im = Vec::new();
    for v in [0x803u32, n as u32, 28, 28] {
        im.extend_from_slice(&v.to_be_bytes());
    }
    let mut lb = Vec::new();
    for v in [0x801u32, n as u32] {
        lb.extend_from_slice(&v.to_be_bytes());
    }
    for i in 0..n {
        let c = i % 10;
        // Class c lights up row band c.
        for r in 0..28 {
            for col in 0..28 {
                let on = r / 3 == c && (col + i) % 5 != 0;
                im.push(if on { 230 } else { ((i * 7 + r + col) % 20) as u8 });
            }
        }
        lb.push(c as u8);
    }
    fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), im).unwrap();
    fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), lb).unwrap();
}

#[test]
fn manifest_lists_kernels() {
    let o = run(&["manifest", "--model", "mlp"]);
    assert!(o.status.success());
    let s = stdout(&o);
    assert!(s.starts_with("# oblivinfer manifest"));
    assert!(s.contains("mlp,conv2d,0"));
    assert!(s.contains("mlp,relu,1"));
    assert!(s.contains("reduction_fraction=0.6667"));
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["trace", "--model", "mixed", "--random", "--granularity", "bogus", "--out", "x"]).status.code(), Some(2));
    assert_eq!(run(&["verify", "--model", "mixed", "--count", "1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("m");
    assert_eq!(run(&["train", "--model", "mlp", "--out", out.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn verify_passes_and_catches_injection() {
    let o = run(&["verify", "--model", "mixed", "--count", "12"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS"));
    let o = run(&["verify", "--model", "mixed", "--count", "12", "--inject-leaky-layer", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("diverges at event"));
    assert!(stdout(&o).contains("threshold.leaky"));
}

#[test]
fn bench_reports_three_timings() {
    let o = run(&["bench", "--model", "mlp-small", "--iterations", "100"]);
    assert!(o.status.success());
    let s = stdout(&o);
    let mut lines = s.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "model,iterations,leaky_s,oblivious_s,traced_s,oblivious_over_leaky");
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[1], "100");
    assert!(row[5].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn random_traces_leaky_and_oblivious() {
    let dir = tempfile::tempdir().unwrap();
    let base = dir.path().to_str().unwrap();
    for mode in ["leaky", "oblivious"] {
        let out = format!("{base}/{mode}");
        let o = run(&[
            "trace", "--model", "mixed", "--random", "--count", "10", "--mode", mode, "--granularity", "full", "--out", &out,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let files: Vec<_> = fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.extension().is_some_and(|e| e == "otrc"))
            .collect();
        assert_eq!(files.len(), 10);
        let distinct: BTreeSet<Vec<u8>> = files.iter().map(|p| fs::read(p).unwrap()).collect();
        if mode == "oblivious" {
            assert_eq!(distinct.len(), 1);
        } else {
            assert!(distinct.len() > 1);
        }
        let labels = fs::read_to_string(format!("{out}/labels.csv")).unwrap();
        assert!(labels.starts_with("# oblivinfer trace") && labels.contains("seed=1"));
    }
}

#[test]
fn train_trace_attack_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    fs::create_dir_all(&data).unwrap();
    write_idx(&data, "train", 600);
    write_idx(&data, "t10k", 300);
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let train = |out: &str| {
        Command::new(env!("CARGO_BIN_EXE_oblivinfer"))
            .args([
                "train", "--model", "mlp", "--arch", "784,32,16,10", "--epochs", "3", "--out", out, "--seed", "4",
            ])
            .env("OBLIVINFER_DATA", &data)
            .output()
            .unwrap()
    };
    let o = train(&p("m"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("epoch,train_acc,test_acc,loss"));
    assert_eq!(fs::read_dir(p("m")).unwrap().count(), 2);
    assert_eq!(train(&p("m")).status.code(), Some(2));
    assert!(train(&p("m2")).status.success());
    assert_eq!(fs::read(p("m/mlp.bin")).unwrap(), fs::read(p("m2/mlp.bin")).unwrap());

    let model = p("m/mlp.json");
    let data_s = data.to_str().unwrap();
    let o = run(&["trace", "--model", &model, "--dataset", data_s, "--count", "270", "--out", &p("tr")]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "trace", "--model", &model, "--dataset", data_s, "--count", "30", "--offset", "270", "--mode", "oblivious", "--out", &p("ob"),
    ]);
    assert!(o.status.success());

    let o = run(&[
        "attack", "--model", &model, "--traces", &p("tr"), "--selector", "last,last2", "--sizes", "135,270", "--out", &p("curve.csv"),
        "--plot", &p("curve.svg"), "--victims", &p("ob"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(p("curve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 4);
    let best = rows.iter().map(|r| r.rsplit(',').next().unwrap().parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(best > 0.5, "{csv}");
    assert!(fs::read_to_string(p("curve.svg")).unwrap().starts_with("<svg"));
    assert!(fs::read_to_string(p("curve.confusion.csv")).unwrap().contains("label,pred_0"));

    // Fewer than nine traces of some class cannot be stratified nine ways.
    let o = run(&["attack", "--model", &model, "--traces", &p("tr"), "--sizes", "50"]);
    assert_eq!(o.status.code(), Some(2));
}
