#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn attnct(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_attnct"))
        .args(args)
        .env_remove("ATTNCT_SEED")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> String {
    let out = attnct(args);
    assert!(
        out.status.success(),
        "attnct {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn code(args: &[&str]) -> i32 {
    attnct(args).status.code().expect("exit code")
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small network so that CLI runs take seconds.
pub const SMALL: &str = "net.input_height=32
net.input_width=32
net.stem_kernel=3
net.stem_stride=1
net.stage_channels=8,16
train.batch_size=8
";

pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.cfg");
    std::fs::write(&p, format!("{SMALL}{extra}")).unwrap();
    p
}

pub fn synth(dir: &Path, n: usize, size: usize, seed: u64) -> PathBuf {
    let d = dir.join("data");
    ok(&["synth", "--out", s(&d), "--n", &n.to_string(), "--size", &size.to_string(), "--seed", &seed.to_string()]);
    d
}

/// Relative path → contents for every file below `root`.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub fn key_values(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
