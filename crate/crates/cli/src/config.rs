//! Key-value config files expanded into flags.
//!
//! Each `key = value` line becomes `--key value`, inserted directly after the
//! subcommand so that any flag given on the command line wins. `true` yields a
//! bare flag and `false` drops the key. Relative paths are resolved against
//! the directory of the config file.

use std::ffi::OsString;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use crate::UsageError;

const COMMANDS: &[&str] = &["generate", "prior", "likelihood", "observe", "oracle", "partitions"];
const PATH_KEYS: &[&str] = &["image", "partition", "scene", "preview", "tables", "out", "out-dir"];

pub fn parse(text: &str, base: &Path) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| UsageError(format!("config line {}: expected `key = value`", n + 1)))?;
        let (key, value) = (key.trim().replace('_', "-"), value.trim());
        if key.is_empty() || key == "config" {
            return Err(UsageError(format!("config line {}: invalid key", n + 1)).into());
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                if PATH_KEYS.contains(&key.as_str()) && Path::new(value).is_relative() {
                    out.push(base.join(value).into_os_string());
                } else {
                    out.push(value.into());
                }
            }
        }
    }
    Ok(out)
}

/// Removes `--config FILE` from `args` and splices the file's flags in after the subcommand.
pub fn expand(mut args: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.to_string_lossy().starts_with("--config=")) else {
        return Ok(args);
    };
    let flag = args.remove(pos).to_string_lossy().into_owned();
    let path = match flag.strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None if pos < args.len() => args.remove(pos).to_string_lossy().into_owned(),
        None => return Err(UsageError("--config needs a file".into()).into()),
    };
    let path = Path::new(&path);
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let extra = parse(&text, path.parent().unwrap_or(Path::new("")))?;
    let cmd = args.iter().position(|a| COMMANDS.contains(&a.to_string_lossy().as_ref()));
    let at = match cmd {
        Some(i) if args[i] == "oracle" => (i + 2).min(args.len()),
        Some(i) => i + 1,
        None => args.len(),
    };
    args.splice(at..at, extra);
    Ok(args)
}
