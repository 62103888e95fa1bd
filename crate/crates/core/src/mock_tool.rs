//! Stand-in for the wrapped processing tools.
//!
//! Understands the built-in template (`-c CONFIG -o OUTDIR @LIST`), sleeps
//! for `MOCK_SLEEP_MS`, writes `result.manifest` in the output directory and
//! exits with `MOCK_EXIT_CODE`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::plugin::parse_config;

pub const MANIFEST_FILE: &str = "result.manifest";

#[derive(Debug, Default, PartialEq, Eq)]
pub struct MockArgs {
    pub config: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub image_list: Option<PathBuf>,
}

pub fn parse_args(args: &[String]) -> Result<MockArgs, String> {
    let mut out = MockArgs::default();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        match a.as_str() {
            "-c" => out.config = Some(it.next().ok_or("-c needs a value")?.into()),
            "-o" => out.output_dir = Some(it.next().ok_or("-o needs a value")?.into()),
            s if s.starts_with('@') => out.image_list = Some(PathBuf::from(&s[1..])),
            _ => {}
        }
    }
    Ok(out)
}

fn setting(config: &[(String, String)], key: &str) -> Option<u64> {
    config.iter().find(|(k, _)| k == key).and_then(|(_, v)| v.trim().parse().ok())
}

/// Runs the mock tool and returns its process exit code.
pub fn run(tool: &str, args: &[String]) -> i32 {
    match run_inner(tool, args) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("{tool}: {msg}");
            2
        }
    }
}

fn run_inner(tool: &str, args: &[String]) -> Result<i32, String> {
    let parsed = parse_args(args)?;
    let config = match &parsed.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            parse_config(&text).map_err(|e| e.to_string())?
        }
        None => Vec::new(),
    };
    let images: Vec<String> = match &parsed.image_list {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| format!("{}: {e}", p.display()))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect(),
        None => Vec::new(),
    };
    let sleep_ms = setting(&config, "MOCK_SLEEP_MS").unwrap_or(0);
    let exit_code = setting(&config, "MOCK_EXIT_CODE").unwrap_or(0) as i32;

    println!("{tool}: {} input(s)", images.len());
    for (k, v) in std::env::vars().filter(|(k, _)| k.starts_with("YOUPI_AUX_")) {
        println!("{tool}: {k}={v}");
    }
    std::thread::sleep(Duration::from_millis(sleep_ms));

    let out_dir = parsed.output_dir.unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).map_err(|e| format!("{}: {e}", out_dir.display()))?;
    let mut manifest = format!("STATUS {}\n", if exit_code == 0 { "ok" } else { "fail" });
    for img in &images {
        let name = Path::new(img).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        manifest.push_str(&format!("PROCESSED {name}\n"));
    }
    let mpath = out_dir.join(MANIFEST_FILE);
    fs::write(&mpath, manifest).map_err(|e| format!("{}: {e}", mpath.display()))?;
    Ok(exit_code)
}
