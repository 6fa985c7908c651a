//! Runs the `accept` experiment through the binary twice, echoes one line per
//! criterion and checks that the two runs wrote byte-identical files.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};

use circulator::acceptance::KNOWN_MODEL_LIMITS;

fn run(dir: &Path) -> (String, Option<i32>) {
    let out = Command::new(env!("CARGO_BIN_EXE_circulator"))
        .args(["--experiment", "accept", "--out"])
        .arg(dir)
        .output()
        .expect("binary runs");
    (String::from_utf8_lossy(&out.stdout).into_owned(), out.status.code())
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut m = BTreeMap::new();
    for e in std::fs::read_dir(dir).expect("output dir") {
        let e = e.expect("entry");
        m.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).expect("read"));
    }
    m
}

fn criterion_id(line: &str) -> Option<u32> {
    let rest = line.strip_prefix("PASS ").or_else(|| line.strip_prefix("FAIL "))?;
    rest.trim_start().split(|c: char| !c.is_ascii_digit()).next()?.parse().ok()
}

fn main() -> ExitCode {
    let a = tempfile::tempdir().expect("tempdir");
    let b = tempfile::tempdir().expect("tempdir");
    let (stdout, code) = run(a.path());
    let mut hard_failures = Vec::new();
    let mut known = Vec::new();
    let mut seen = 0;
    for line in stdout.lines() {
        let Some(id) = criterion_id(line) else { continue };
        seen += 1;
        println!("{line}");
        if line.starts_with("FAIL") {
            if KNOWN_MODEL_LIMITS.contains(&id) {
                known.push(id);
            } else {
                hard_failures.push(id);
            }
        }
    }
    if seen == 0 {
        println!("FAIL accept produced no criterion lines (exit {code:?})");
        return ExitCode::FAILURE;
    }

    let (_, code_b) = run(b.path());
    let fa = files(a.path());
    let fb = files(b.path());
    let differing: Vec<&String> = fa.keys().filter(|k| fb.get(*k) != fa.get(*k)).collect();
    let same = code == code_b && fa.len() == fb.len() && differing.is_empty();
    if same {
        println!("PASS 11 deterministic outputs: {} files byte-identical across two runs", fa.len());
    } else {
        println!("FAIL 11 deterministic outputs: differing {differing:?}, exit codes {code:?} and {code_b:?}");
        hard_failures.push(11);
    }

    // A budget overrun fails the line but not the binary, so 0 and 4 are both fine here.
    if !matches!(code, Some(0) | Some(4)) {
        println!("FAIL binary exit code {code:?}");
        return ExitCode::FAILURE;
    }
    for id in &known {
        println!("note: criterion {id} is a documented model limit, see README");
    }
    if hard_failures.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
