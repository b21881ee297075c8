//! Flat `key = value` run files merged into the command line.
//!
//! Each key names a long flag of the chosen subcommand (`max_iter` and
//! `max-iter` both mean `--max-iter`). Flags given on the command line win
//! over the file.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Command;

/// Global options that take a value and may precede the subcommand.
const GLOBAL_VALUED: [&str; 2] = ["--threads", "--config"];

pub fn parse_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected `key = value`, found `{raw}`", path.display(), i + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"').to_string();
        if key.is_empty() {
            bail!("{}:{}: empty key", path.display(), i + 1);
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            bail!("{}:{}: key `{key}` given twice", path.display(), i + 1);
        }
        pairs.push((key, value));
    }
    Ok(pairs)
}

fn flag_name(arg: &str) -> Option<&str> {
    let name = arg.strip_prefix("--")?;
    Some(name.split_once('=').map_or(name, |(n, _)| n))
}

/// Removes `--config FILE` from `args` and splices the file's entries in
/// right after the subcommand path, skipping keys already on the command
/// line. Keys that the subcommand does not accept are rejected.
pub fn expand(args: Vec<OsString>, cmd: &Command) -> Result<Vec<String>> {
    let mut args: Vec<String> = args
        .into_iter()
        .map(|a| a.into_string().map_err(|a| anyhow::anyhow!("argument {a:?} is not valid UTF-8")))
        .collect::<Result<_>>()?;
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        if args[i] == "--config" {
            if i + 1 >= args.len() {
                bail!("--config needs a file");
            }
            config = Some(args.remove(i + 1));
            args.remove(i);
        } else if let Some(path) = args[i].strip_prefix("--config=") {
            config = Some(path.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    let Some(path) = config else {
        return Ok(args);
    };
    let pairs = parse_file(Path::new(&path))?;

    // walk to the innermost subcommand named on the command line
    let mut sub = cmd;
    let mut insert_at = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].as_str();
        if GLOBAL_VALUED.contains(&a) {
            i += 2;
            continue;
        }
        if a.starts_with('-') {
            i += 1;
            continue;
        }
        match sub.find_subcommand(a) {
            Some(next) => {
                sub = next;
                insert_at = Some(i + 1);
                i += 1;
            }
            None => break,
        }
    }
    let Some(at) = insert_at else {
        bail!("--config needs a subcommand to apply to");
    };
    if sub.has_subcommands() {
        bail!("`{}` needs a subcommand before its config can be applied", sub.get_name());
    }
    let known: HashSet<&str> =
        sub.get_arguments().chain(cmd.get_arguments()).filter_map(|a| a.get_long()).collect();
    let present: HashSet<&str> = args[1..].iter().filter_map(|a| flag_name(a)).collect();
    let mut injected = Vec::new();
    for (key, value) in &pairs {
        if !known.contains(key.as_str()) {
            bail!("{path}: unknown key `{key}` for `{}`", sub.get_name());
        }
        if key == "config" {
            bail!("{path}: config files cannot include other config files");
        }
        if !present.contains(key.as_str()) {
            injected.push(format!("--{key}={value}"));
        }
    }
    args.splice(at..at, injected);
    Ok(args)
}
