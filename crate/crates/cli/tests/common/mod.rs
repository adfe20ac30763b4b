//! Helpers shared by the CLI integration tests: spawning the compiled
//! binary, small CSV fixtures, and directory snapshots for rerun
//! comparisons.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Output};

/// Command handle on the binary under test.
pub fn recon() -> Command {
    Command::new(env!("CARGO_BIN_EXE_recon"))
}

pub fn run(args: &[&str]) -> Output {
    recon().args(args).output().expect("binary spawns")
}

pub fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("terminated by signal")
}

pub fn stdout_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

pub fn stderr_text(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

pub fn write_file(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

/// Total over two bottom series A and B.
pub const HIERARCHY_CSV: &str = "parent,child\nTotal,A\nTotal,B\n";

/// Deliberately incoherent base forecasts (Total != A + B).
pub const BASE_CSV: &str = "t,Total,A,B\n1,10.0,4.0,5.0\n2,8.0,3.0,6.0\n";

/// Coherent observed values on the same ticks (exactly representable sums).
pub const ACTUALS_CSV: &str = "t,Total,A,B\n1,9.5,4.25,5.25\n2,8.75,3.5,5.25\n";

/// Every file in a directory keyed by name, with manifest timestamp lines
/// stripped so reruns can be compared byte for byte.
pub fn dir_snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut snapshot = BTreeMap::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let entry = entry.unwrap();
        let name = entry.file_name().into_string().unwrap();
        let mut bytes = std::fs::read(entry.path()).unwrap();
        if name == "manifest.txt" {
            let text = String::from_utf8(bytes).unwrap();
            bytes = text
                .lines()
                .filter(|line| !line.starts_with("timestamp"))
                .collect::<Vec<_>>()
                .join("\n")
                .into_bytes();
        }
        snapshot.insert(name, bytes);
    }
    snapshot
}

/// Asserts two snapshots hold the same files with the same bytes, naming
/// the first file that differs instead of dumping raw bytes.
pub fn assert_same_outputs(
    a: &BTreeMap<String, Vec<u8>>,
    b: &BTreeMap<String, Vec<u8>>,
    what: &str,
) {
    let names_a: Vec<&String> = a.keys().collect();
    let names_b: Vec<&String> = b.keys().collect();
    assert_eq!(names_a, names_b, "{what}: file sets differ");
    for (name, bytes) in a {
        assert!(bytes == &b[name], "{what}: {name} differs between runs");
    }
}

/// Parses a panel CSV produced by the binary: skips `#` provenance lines,
/// checks the header, and returns each data row's floats (without the tick).
pub fn parse_panel(path: &Path, expected_header: &str) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), expected_header);
    lines
        .map(|line| {
            line.split(',')
                .skip(1)
                .map(|field| field.parse::<f64>().unwrap())
                .collect()
        })
        .collect()
}
