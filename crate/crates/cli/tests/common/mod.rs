#![allow(dead_code)]

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use nmo_core::sim::WorkloadSpec;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process with an explicit environment.
pub fn nmo(args: &[&str], env: &[(&str, &str)]) -> Output {
    let env: HashMap<String, String> = env
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let mut stdout = Vec::new();
    let mut stderr = Vec::new();
    let argv = std::iter::once("nmo").chain(args.iter().copied());
    let code = nmo_cli::run(argv, &env, &mut stdout, &mut stderr);
    Output {
        code,
        stdout: String::from_utf8(stdout).unwrap(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

/// Runs the built binary with only the given `NMO_*` variables set.
pub fn nmo_bin(args: &[&str], env: &[(&str, &str)], cwd: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_nmo"));
    cmd.args(args).current_dir(cwd);
    for (k, _) in std::env::vars() {
        if k.starts_with("NMO_") {
            cmd.env_remove(k);
        }
    }
    cmd.envs(env.iter().copied());
    let out = cmd.output().unwrap();
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8(out.stdout).unwrap(),
        stderr: String::from_utf8(out.stderr).unwrap(),
    }
}

pub fn write_workload(dir: &Path, spec: &WorkloadSpec) -> PathBuf {
    let path = dir.join("workload.json");
    std::fs::write(&path, serde_json::to_vec_pretty(spec).unwrap()).unwrap();
    path
}

pub fn small_triad() -> WorkloadSpec {
    WorkloadSpec::stream_triad(300_000, 4, 1 << 20)
}

pub const SAMPLING_ON: [(&str, &str); 4] = [
    ("NMO_ENABLE", "on"),
    ("NMO_MODE", "loadstore"),
    ("NMO_PERIOD", "3000"),
    ("NMO_TRACK_RSS", "on"),
];
