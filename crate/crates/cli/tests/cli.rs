use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_iealm"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn iealm")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("iealm-cli-{}-{name}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn ppm(w: usize, h: usize, f: impl Fn(usize) -> u8) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend((0..w * h * 3).map(f));
    out
}

fn s(p: &PathBuf) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn encrypt_decrypt_restores_file() {
    let dir = scratch("roundtrip");
    let (plain, cipher, back) = (dir.join("p.ppm"), dir.join("c.ppm"), dir.join("b.ppm"));
    let bytes = ppm(40, 24, |i| (i * 37 % 251) as u8);
    fs::write(&plain, &bytes).unwrap();
    let o = run(&["encrypt", s(&plain), s(&cipher), "--b", "1.93", "--faithful"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let printed = String::from_utf8(o.stdout).unwrap();
    let sums = printed.trim().strip_prefix("sums ").unwrap().replace(' ', "");
    assert_ne!(fs::read(&cipher).unwrap(), bytes);
    let o = run(&["decrypt", s(&cipher), s(&back), "--b", "1.93", "--sums", &sums]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(&back).unwrap(), bytes);
}

#[test]
fn missing_input_fails_with_message() {
    let dir = scratch("missing");
    let o = run(&["encrypt", s(&dir.join("nope.ppm")), s(&dir.join("c.ppm")), "--b", "1.9", "--sums", "1,2,3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("nope.ppm"), "{}", stderr(&o));
}

#[test]
fn out_of_range_b_is_rejected_before_writing() {
    let dir = scratch("badb");
    let (plain, cipher) = (dir.join("p.ppm"), dir.join("c.ppm"));
    fs::write(&plain, ppm(4, 4, |i| i as u8)).unwrap();
    for b in ["1.5", "2.0"] {
        let o = run(&["encrypt", s(&plain), s(&cipher), "--b", b, "--sums", "1,2,3"]);
        assert!(!o.status.success());
        assert!(stderr(&o).starts_with("error:"));
    }
    assert!(!cipher.exists());
}

#[test]
fn attack_report_key_file_and_replay() {
    let dir = scratch("attack");
    let (report, key) = (dir.join("r.json"), dir.join("k.eqk"));
    let o = run(&[
        "attack", "--size", "256x256", "--packing", "--report", s(&report), "--save-eqkey", s(&key),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let r: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert!(r["total"].as_u64().unwrap() <= 175, "{r}");

    // Encrypt with the oracle's key, then decrypt using only the key file.
    let (plain, cipher, back) = (dir.join("p.ppm"), dir.join("c.ppm"), dir.join("b.ppm"));
    let bytes = ppm(256, 256, |i| (i * 7 % 256) as u8);
    fs::write(&plain, &bytes).unwrap();
    let o = run(&["encrypt", s(&plain), s(&cipher), "--b", "1.99", "--sums", "29676,9202,62299"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["attack", "--load-eqkey", s(&key), "--decrypt", s(&cipher), "--out", s(&back)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    assert_eq!(fs::read(&back).unwrap(), bytes);
}

#[test]
fn faithful_oracle_attack_explains_failure() {
    let o = run(&["attack", "--size", "8x8", "--faithful"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert!(err.contains("not a bijection"), "{err}");
    assert!(err.contains("stage"), "{err}");
}

#[test]
fn graph_exports_are_deterministic_and_quantizer_specific() {
    let dir = scratch("graph");
    let mut dots = Vec::new();
    for q in ["floor", "round", "ceil"] {
        let (dot, json) = (dir.join(format!("{q}.dot")), dir.join(format!("{q}.json")));
        let args = ["graph", "--n", "3", "--b", "511/256", "--quantizer", q, "--dot", s(&dot), "--json", s(&json)];
        let first = run(&args);
        assert!(first.status.success(), "{}", stderr(&first));
        let bytes = fs::read(&dot).unwrap();
        let again = run(&args);
        assert_eq!(first.stdout, again.stdout);
        assert_eq!(fs::read(&dot).unwrap(), bytes);
        assert!(bytes.starts_with(b"digraph"));
        dots.push(bytes);
    }
    assert_ne!(dots[0], dots[1]);
    assert_ne!(dots[1], dots[2]);
    assert_ne!(dots[0], dots[2]);

    let o = run(&["graph", "--n", "1"]);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["node_count"], 4, "{stats}");
}

#[test]
fn keyspace_prints_power_of_two() {
    let o = run(&["keyspace", "--bits", "32", "--size", "2048x2048"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["key_space_log2"], 154);
    assert_eq!(v["key_space_size_approx"], "2.284e46");
}

#[test]
fn corpus_empty_and_zero() {
    let dir = scratch("corpus");
    let o = run(&["corpus", s(&dir)]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty"), "{}", stderr(&o));

    fs::write(dir.join("zero.ppm"), ppm(3, 2, |_| 0)).unwrap();
    let o = run(&["corpus", s(&dir)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["means"], serde_json::json!([[0.0, 0.0, 0.0]]));
}
