use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kvx2l(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvx2l")).args(args).env_remove("KVX2L_CACHE_DIR").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn prefill(dir: &Path) {
    let o = kvx2l(&["prefill", "--synthetic-tokens", "400", "--chunk-frames", "5", "--cache-dir", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn prefill_then_query() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("cache");
    prefill(&dir);
    // 400 tokens, 4 per frame, 5 frames per chunk
    let kv = fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "kv")).count();
    assert_eq!(kv, 2 * 20);
    assert!(dir.join("manifest.json").exists());

    let out = tmp.path().join("answer.json");
    let o = kvx2l(&[
        "query", "--cache-dir", dir.to_str().unwrap(), "--topk", "4", "--prompt-tokens", "1,5", "--max-new", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&fs::read(out).unwrap()).unwrap();
    assert_eq!(v["tokens"].as_array().unwrap().len(), 3);
    assert_eq!(v["plan"]["selected"].as_array().unwrap().len(), 4);
    // 4 chunks of 20 at 2x and 16 at 32x
    assert_eq!(v["context_len"], 4 * 10 + 16);
}

#[test]
fn cache_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_kvx2l"))
        .args(["prefill", "--synthetic-tokens", "40"])
        .env("KVX2L_CACHE_DIR", tmp.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    // usage and configuration problems
    assert_eq!(kvx2l(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(kvx2l(&["prefill", "--synthetic-tokens", "40", "--alpha-low", "8", "--alpha-high", "4", "--cache-dir", d]).status.code(), Some(2));
    assert_eq!(kvx2l(&["query", "--cache-dir", d]).status.code(), Some(2));
    // corrupted cache
    prefill(tmp.path());
    let victim = tmp.path().join("chunk000002_H.kv");
    let mut bytes = fs::read(&victim).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x40;
    fs::write(&victim, bytes).unwrap();
    let o = kvx2l(&["query", "--cache-dir", d, "--oracle", "uniform"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // over the memory budget
    assert_eq!(kvx2l(&["bench", "--tokens", "100000", "--memory-budget", "1024"]).status.code(), Some(4));
}

#[test]
fn bench_and_sweep_write_csv() {
    let o = kvx2l(&["bench", "--tokens", "800", "--reps", "3"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "label,alpha_low,alpha_high,k,oracle,n,m,ttft_ms,baseline_ttft_ms,speedup,decode_tok_per_s,reduction_pct,niah_accuracy"
    );
    assert_eq!(lines.count(), 3);

    let tmp = tempfile::tempdir().unwrap();
    let conf = tmp.path().join("sweep.conf");
    fs::write(&conf, "tokens = 800\nreps = 3\nstrict_timing = true\n").unwrap();
    let o = kvx2l(&["sweep", "--config", conf.to_str().unwrap(), "--k-values", "1,2,3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows: Vec<f64> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(11).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0] > rows[1] && rows[1] > rows[2]);
}

#[test]
fn niah_writes_matrices_and_gnuplot() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("acc.csv");
    let gp = tmp.path().join("acc.gp");
    let o = kvx2l(&[
        "niah", "--lengths", "128,256", "--depths", "0,50,100", "--trials", "2",
        "--out", csv.to_str().unwrap(), "--emit-gnuplot", gp.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), "depth_pct,128,256");
    assert_eq!(text.lines().count(), 4);
    assert!(tmp.path().join("acc.uniform-32x.csv").exists());
    assert!(fs::read_to_string(gp).unwrap().contains("acc.csv"));
}
