//! `key=value` config files and environment overrides.
//!
//! Both are turned into ordinary flags placed ahead of the user's own
//! arguments, so anything given on the command line wins.

use std::ffi::{OsStr, OsString};
use std::path::{Path, PathBuf};

use clap::{ArgAction, Command};

use super::CliError;

pub const ENV_ENDPOINT: &str = "TOXIVEC_ENDPOINT";
pub const ENV_RATE_LIMIT_MS: &str = "TOXIVEC_RATE_LIMIT_MS";

/// Parses a flat `key=value` file. Blank lines and `#` comments are ignored.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(format!("line {}: expected key=value, got `{line}`", i + 1));
        };
        let key = k.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() {
            return Err(format!("line {}: empty key", i + 1));
        }
        out.push((key, v.trim().to_string()));
    }
    Ok(out)
}

fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

/// The `--config` path, wherever it appears.
fn find_config(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Positions of the subcommand tokens (e.g. `query`, `similar`).
fn subcommand_path(root: &Command, args: &[OsString]) -> Vec<usize> {
    let mut positions = Vec::new();
    let mut cmd = root;
    let mut i = 1;
    while i < args.len() {
        let s = args[i].to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            i += 2;
            continue;
        }
        if s.starts_with('-') {
            i += 1;
            continue;
        }
        match cmd.find_subcommand(OsStr::new(s.as_ref())) {
            Some(sub) => {
                positions.push(i);
                cmd = sub;
                if !cmd.has_subcommands() {
                    break;
                }
            }
            None => break,
        }
        i += 1;
    }
    positions
}

fn leaf<'a>(root: &'a Command, args: &[OsString], path: &[usize]) -> &'a Command {
    let mut cmd = root;
    for &p in path {
        if let Some(sub) = cmd.find_subcommand(&args[p]) {
            cmd = sub;
        }
    }
    cmd
}

fn flag_for(cmd: &Command, key: &str, value: &str) -> Result<Option<OsString>, String> {
    let arg = cmd.get_arguments().find(|a| {
        a.get_long() == Some(key) || (key.chars().count() == 1 && a.get_short().map(String::from).as_deref() == Some(key))
    });
    let Some(arg) = arg else {
        return Ok(None);
    };
    let long = arg.get_long().map(|l| format!("--{l}")).unwrap_or_else(|| format!("-{key}"));
    match arg.get_action() {
        ArgAction::SetTrue => match parse_bool(value) {
            Some(true) => Ok(Some(long.into())),
            Some(false) => Ok(None),
            None => Err(format!("`{key}` expects true or false, got `{value}`")),
        },
        ArgAction::SetFalse | ArgAction::Count | ArgAction::Help | ArgAction::Version => Ok(None),
        _ => Ok(Some(format!("{long}={value}").into())),
    }
}

/// Rewrites `args` so config-file and environment settings come first.
pub fn expand_args(root: &Command, args: Vec<OsString>, env: &dyn Fn(&str) -> Option<String>) -> Result<Vec<OsString>, CliError> {
    let path = subcommand_path(root, &args);
    if path.is_empty() {
        return Ok(args);
    }
    let cmd = leaf(root, &args, &path);
    let mut injected: Vec<OsString> = Vec::new();

    if let Some(config_path) = find_config(&args) {
        for (key, value) in load_config(&config_path)? {
            if key == "config" {
                continue;
            }
            match flag_for(cmd, &key, &value).map_err(|m| CliError::usage(format!("{}: {m}", config_path.display())))? {
                Some(flag) => injected.push(flag),
                None => log::debug!("config key `{key}` does not apply to `{}`", cmd.get_name()),
            }
        }
    }
    for (var, key) in [(ENV_ENDPOINT, "endpoint"), (ENV_RATE_LIMIT_MS, "rate-limit-ms")] {
        if let Some(value) = env(var).filter(|v| !v.is_empty()) {
            if let Ok(Some(flag)) = flag_for(cmd, key, &value) {
                injected.push(flag);
            }
        }
    }
    if injected.is_empty() {
        return Ok(args);
    }
    let mut out = Vec::with_capacity(args.len() + injected.len());
    out.push(args[0].clone());
    out.extend(path.iter().map(|&p| args[p].clone()));
    out.extend(injected);
    out.extend(args.into_iter().enumerate().skip(1).filter(|(i, _)| !path.contains(i)).map(|(_, a)| a));
    Ok(out)
}

fn load_config(path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::data(format!("cannot read config file {}: {e}", path.display())))?;
    parse_config(&text).map_err(|m| CliError::usage(format!("{}: {m}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::command;

    fn os(args: &[&str]) -> Vec<OsString> {
        args.iter().map(OsString::from).collect()
    }

    fn strs(args: &[OsString]) -> Vec<String> {
        args.iter().map(|a| a.to_string_lossy().into_owned()).collect()
    }

    #[test]
    fn parses_key_values() {
        let c = parse_config("# comment\n\ndim = 50\nmin_count=2\n--seed=7\n").unwrap();
        assert_eq!(c, [("dim".into(), "50".into()), ("min-count".into(), "2".into()), ("seed".into(), "7".into())]);
        assert!(parse_config("novalue\n").unwrap_err().contains("line 1"));
    }

    #[test]
    fn config_goes_before_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.conf");
        std::fs::write(&cfg, "dim=50\ndynamic-window=true\nendpoint=http://ignored\nn=3\n").unwrap();
        let cmd = command();
        let args = os(&["toxivec", "--config", cfg.to_str().unwrap(), "train", "--dim", "20"]);
        let out = strs(&expand_args(&cmd, args, &|_| None).unwrap());
        assert_eq!(out[..5], ["toxivec", "train", "--dim=50", "--dynamic-window", "--config"]);
        assert_eq!(out[out.len() - 2..], ["--dim", "20"]);
    }

    #[test]
    fn nested_subcommand_and_short_flag() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("q.conf");
        std::fs::write(&cfg, "n=3\njson=false\n").unwrap();
        let cmd = command();
        let args = os(&["toxivec", "query", "similar", "--config", cfg.to_str().unwrap(), "--word", "x"]);
        let out = strs(&expand_args(&cmd, args, &|_| None).unwrap());
        assert_eq!(out[..4], ["toxivec", "query", "similar", "-n=3"]);
    }

    #[test]
    fn env_overrides_only_apply_to_ingest() {
        let cmd = command();
        let env = |k: &str| (k == ENV_RATE_LIMIT_MS).then(|| "5".to_string());
        let out = strs(&expand_args(&cmd, os(&["toxivec", "ingest", "--output", "o"]), &env).unwrap());
        assert_eq!(out, ["toxivec", "ingest", "--rate-limit-ms=5", "--output", "o"]);
        let out = strs(&expand_args(&cmd, os(&["toxivec", "stats", "--corpus", "c"]), &env).unwrap());
        assert_eq!(out, ["toxivec", "stats", "--corpus", "c"]);
    }

    #[test]
    fn bad_bool_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("b.conf");
        std::fs::write(&cfg, "dynamic-window=maybe\n").unwrap();
        let args = os(&["toxivec", "train", "--config", cfg.to_str().unwrap()]);
        let err = expand_args(&command(), args, &|_| None).unwrap_err();
        assert_eq!(err.code, 1);
    }
}
