use std::path::Path;
use std::process::{Command, Output};

fn tdpp(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tdpp"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove("TDPP_USER_KEY")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = tdpp(out, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn protect_extract_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let text = ok(out, &["prepare"]);
    assert!(text.contains("quantized accuracy"));
    assert!(text.starts_with("# tdpp "));

    let p = ok(out, &["protect", "--bn-ports", "256"]);
    assert!(p.contains("key bits per PM: 1920"), "{p}");
    assert!(p.contains("keys: 1\n"));
    ok(out, &["extract", "--with-key", "--bn-ports", "256"]);
    assert_eq!(
        std::fs::read(out.join("recovered.tdpq")).unwrap(),
        std::fs::read(out.join("model.tdpq")).unwrap()
    );
    ok(out, &["extract", "--bn-ports", "256"]);
    assert_ne!(
        std::fs::read(out.join("extracted.tdpq")).unwrap(),
        std::fs::read(out.join("model.tdpq")).unwrap()
    );

    let p2 = ok(out, &["protect", "--arch", "config2", "--user-key", &"a5".repeat(16)]);
    assert!(p2.contains("keys: 3\n"), "{p2}");
    ok(
        out,
        &[
            "extract",
            "--with-key",
            "--arch",
            "config2",
            "--user-key",
            &"a5".repeat(16),
        ],
    );
    assert_eq!(
        std::fs::read(out.join("recovered.tdpq")).unwrap(),
        std::fs::read(out.join("model.tdpq")).unwrap()
    );
    let mapping = std::fs::read(out.join("mapping.tdpm")).unwrap();
    assert_eq!(&mapping[..4], b"TDPM");
}

#[test]
fn attack_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["prepare"]);
    ok(out, &["protect"]);
    let text = ok(out, &["attack"]);
    assert!(text.contains("mean of 40"), "{text}");
    let eff = std::fs::read_to_string(out.join("effectiveness.csv")).unwrap();
    // header, column names, 40 trials
    assert_eq!(eff.lines().count(), 42);
    let sec = json(&out.join("security.json"));
    assert_eq!(sec["per_layer"].as_array().unwrap().len(), 3);
    assert!(sec["model"].as_f64().unwrap() > 100.0);
    assert_eq!(sec["header"]["tool"], "tdpp");
    let attack = json(&out.join("attack.json"));
    let mean = attack["effectiveness"]["mean_accuracy"].as_f64().unwrap();
    assert!((0.06..=0.14).contains(&mean), "{mean}");
}

#[test]
fn overhead_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    ok(out, &["overhead"]);
    let csv = std::fs::read_to_string(out.join("overhead_area.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# tdpp "));
    assert!(lines.next().unwrap().starts_with("metric,p,T,scheme,x=1,"));
    for l in csv.lines().filter(|l| l.contains(",wang,")) {
        assert_eq!(l.split(',').nth(4), Some("-"));
    }
    for l in csv.lines().filter(|l| l.contains(",config1,")) {
        assert!(l.split(',').skip(4).all(|c| c == "1.0"));
    }
    assert!(!csv.contains('\r'));
    assert!(out.join("overhead_power.csv").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let bad = out.join("bad.toml");
    std::fs::write(&bad, "[zoo]\ndims = [64, 3]\n").unwrap();
    let o = tdpp(out, &["prepare", "--config", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("zoo.dims"));

    std::fs::write(&bad, "[system]\nwhat = 1\n").unwrap();
    assert_eq!(
        tdpp(out, &["report", "--config", bad.to_str().unwrap()]).status.code(),
        Some(2)
    );
    assert_eq!(tdpp(out, &["report", "--bn-ports", "3"]).status.code(), Some(2));

    assert_eq!(tdpp(out, &["protect"]).status.code(), Some(4));

    ok(out, &["prepare"]);
    let o = tdpp(out, &["protect", "--arch", "config2", "--tiles", "2"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn report_summarizes_keys() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let text = ok(out, &["report"]);
    assert!(text.contains("256 ports: 1920"));
    assert!(text.contains("53.33%"));
    assert!(text.contains("83.33%"));
    let r = json(&out.join("report.json"));
    assert_eq!(r["keys"]["key_bits_per_pm"], 896);
}
