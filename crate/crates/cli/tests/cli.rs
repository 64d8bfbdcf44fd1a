use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn emgevm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emgevm"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = emgevm(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the single error line.
fn fails(args: &[&str]) -> (i32, String) {
    let out = emgevm(args);
    let err = String::from_utf8(out.stderr).unwrap();
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error[")).collect();
    assert_eq!(lines.len(), 1, "stderr: {err}");
    (out.status.code().unwrap(), lines[0].to_string())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path) -> std::path::PathBuf {
    let ds = dir.join("ds");
    ok(&[
        "synth",
        "-o",
        s(&ds),
        "--subjects",
        "1",
        "--samples",
        "3000",
    ]);
    ds
}

#[test]
fn extract_train_eval_round() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let f = dir.path().join("f.csv");
    let m = dir.path().join("m.json");
    let r = dir.path().join("r.json");
    let pc = dir.path().join("pc.csv");
    ok(&[
        "extract",
        "-d",
        s(&ds),
        "-o",
        s(&f),
        "--win-len",
        "500",
        "--step",
        "500",
        "-p",
        "1",
    ]);
    let header = fs::read_to_string(&f)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string();
    assert_eq!(header, "subject,label,trial,window,ch0_k1,ch1_k1");
    assert!(dir.path().join("f.csv.config.json").is_file());

    ok(&[
        "extract",
        "-d",
        s(&ds),
        "-o",
        s(&f),
        "--win-len",
        "500",
        "--step",
        "500",
        "-p",
        "4",
    ]);
    let summary = ok(&[
        "train",
        "--features",
        s(&f),
        "-o",
        s(&m),
        "--win-len",
        "500",
        "--step",
        "500",
        "-p",
        "4",
    ]);
    assert!(summary.contains("before reduction"));
    let report = ok(&[
        "eval",
        "-m",
        s(&m),
        "--features",
        s(&f),
        "--json",
        s(&r),
        "--per-class-csv",
        s(&pc),
    ]);
    let row = report.lines().nth(1).unwrap();
    assert!(row.starts_with("EVM"), "{report}");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    assert_eq!(json["config"]["order"], 4);
    assert_eq!(fs::read_to_string(&pc).unwrap().lines().count(), 11);

    // --data extracts with the bundle's own configuration
    let direct = ok(&["eval", "-m", s(&m), "-d", s(&ds)]);
    assert_eq!(direct, report);
}

#[test]
fn reduction_switches_and_tail_of_one() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let m = dir.path().join("m.json");
    let full = ok(&["train", "-d", s(&ds), "-o", s(&m), "-p", "4", "--no-reduce"]);
    let line = full
        .lines()
        .find(|l| l.starts_with("extreme vectors"))
        .unwrap();
    let nums: Vec<&str> = line
        .split(|c: char| !c.is_ascii_digit())
        .filter(|t| !t.is_empty())
        .collect();
    assert_eq!(nums[0], nums[1], "{line}");
    ok(&[
        "train",
        "-d",
        s(&ds),
        "-o",
        s(&m),
        "-p",
        "4",
        "--tail-size",
        "1",
    ]);
}

#[test]
fn repeated_runs_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let f = dir.path().join(format!("f{threads}.csv"));
        let m = dir.path().join(format!("m{threads}.json"));
        let r = dir.path().join(format!("r{threads}.json"));
        ok(&["--threads", threads, "extract", "-d", s(&ds), "-o", s(&f)]);
        ok(&[
            "--threads",
            threads,
            "train",
            "--features",
            s(&f),
            "-o",
            s(&m),
        ]);
        let text = ok(&[
            "--threads",
            threads,
            "eval",
            "-m",
            s(&m),
            "--features",
            s(&f),
            "--json",
            s(&r),
        ]);
        outputs.push([
            fs::read(&f).unwrap(),
            fs::read(&m).unwrap(),
            fs::read(&r).unwrap(),
            text.into_bytes(),
        ]);
    }
    assert!(outputs[0] == outputs[1]);
}

#[test]
fn sweeps_write_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synth(dir.path());
    let out = ok(&["sweep", "-d", s(&ds), "--param", "p", "--values", "2,4,6"]);
    assert_eq!(out.lines().count(), 4);
    assert!(out.starts_with("p,accuracy,model_size\n"));

    let sweep = ok(&[
        "sweep",
        "-d",
        s(&ds),
        "--param",
        "tau",
        "--values",
        "27",
        "-p",
        "4",
    ]);
    let acc: f64 = sweep
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    let m = dir.path().join("m.json");
    let r = dir.path().join("r.json");
    ok(&["train", "-d", s(&ds), "-o", s(&m), "-p", "4"]);
    ok(&["eval", "-m", s(&m), "-d", s(&ds), "--json", s(&r)]);
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&r).unwrap()).unwrap();
    assert_eq!(
        json["reports"][0]["report"]["accuracy"].as_f64().unwrap(),
        acc
    );
}

#[test]
fn psd_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let frame = dir.path().join("frame.csv");
    let body: String = (0..2000)
        .map(|n| format!("{}\n", (0.9 * n as f64).sin() + 0.01 * (n % 7) as f64))
        .collect();
    fs::write(&frame, body).unwrap();
    let out = ok(&["psd", "--frame", s(&frame), "-p", "4", "--points", "64"]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "frequency_hz,power");
    assert_eq!(lines.len(), 65);
    assert!(lines[64].starts_with("2000,"));

    fs::write(&frame, "0\n0\n0\n0\n0\n").unwrap();
    let (code, line) = fails(&["psd", "--frame", s(&frame), "-p", "2"]);
    assert_eq!(code, 4, "{line}");
    assert!(line.starts_with("error[numeric]:"));
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-root");
    let (code, line) = fails(&["extract", "-d", s(&missing), "-o", "x.csv"]);
    assert_eq!(code, 3);
    assert!(
        line.starts_with("error[data]:") && line.contains("no-such-root"),
        "{line}"
    );

    let ds = synth(dir.path());
    let (code, line) = fails(&["extract", "-d", s(&ds), "-o", "x.csv", "-p", "0"]);
    assert_eq!(code, 2);
    assert!(line.starts_with("error[config]:"), "{line}");

    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"split": {"train": [1, 2, 3, 4, 5, 6], "test": []}}"#,
    )
    .unwrap();
    let m = dir.path().join("m.json");
    ok(&["train", "-d", s(&ds), "-o", s(&m), "-c", s(&cfg), "-p", "4"]);
    let (code, line) = fails(&["eval", "-m", s(&m), "-d", s(&ds)]);
    assert_eq!(code, 2, "{line}");

    // features of another order do not fit the bundle
    let f = dir.path().join("f.csv");
    ok(&["extract", "-d", s(&ds), "-o", s(&f), "-p", "3"]);
    let (code, line) = fails(&["eval", "-m", s(&m), "--features", s(&f)]);
    assert_eq!(code, 2);
    assert!(line.contains("do not match"), "{line}");

    fs::write(&m, "{\"format_version\": 1").unwrap();
    let (code, _) = fails(&["eval", "-m", s(&m), "--features", s(&f)]);
    assert_eq!(code, 3);
}
