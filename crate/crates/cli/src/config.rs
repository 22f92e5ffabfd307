//! `key = value` config files. Keys are long flag names without the leading
//! dashes; list values are comma-separated; `#` starts a comment. Values
//! from the file are spliced in ahead of the command-line flags, so flags
//! win.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use clap::{ArgAction, CommandFactory};
use serde::Serialize;

use crate::{Cli, CliError};

/// Keys where setting one on the command line discards the others from the
/// file.
const EXCLUSIVE: &[&[&str]] = &[&["preset", "arch"]];

pub const RESOLVED_NAME: &str = "config.txt";

fn config_path(args: &[OsString]) -> Result<Option<OsString>, CliError> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it
                .next()
                .cloned()
                .map(Some)
                .ok_or_else(|| CliError::Usage("--config needs a file".into()));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Ok(Some(p.into()));
        }
    }
    Ok(None)
}

fn on_command_line(args: &[OsString], key: &str) -> bool {
    let flag = format!("--{key}");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == flag || s.starts_with(&format!("{flag}="))
    })
}

/// Parses `key = value` lines into pairs, rejecting malformed lines.
pub fn parse(text: &str, origin: &str) -> Result<Vec<(String, String)>, CliError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!("{origin}:{}: expected `key = value`", i + 1)));
        };
        let key = k.trim().to_ascii_lowercase().replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::Usage(format!("{origin}:{}: missing key", i + 1)));
        }
        if out.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Usage(format!("{origin}:{}: duplicate key '{key}'", i + 1)));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Splices the options of a `--config` file into `args` right after the
/// subcommand name. Arguments are returned unchanged without `--config`.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args)? else {
        return Ok(args);
    };
    let Some(sub_name) = args.get(1).map(|a| a.to_string_lossy().into_owned()) else {
        return Ok(args);
    };
    let root = Cli::command();
    let Some(sub) = root.find_subcommand(&sub_name) else {
        return Ok(args);
    };
    let origin = Path::new(&path).display().to_string();
    let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {origin}: {e}")))?;

    let mut spliced: Vec<OsString> = Vec::new();
    for (key, value) in parse(&text, &origin)? {
        let Some(arg) = sub.get_arguments().find(|a| a.get_long() == Some(key.as_str())) else {
            return Err(CliError::Usage(format!("{origin}: unknown key '{key}' for {sub_name}")));
        };
        if key == "config" {
            return Err(CliError::Usage(format!("{origin}: config files cannot include others")));
        }
        let group = EXCLUSIVE.iter().find(|g| g.contains(&key.as_str())).copied().unwrap_or(&[]);
        if on_command_line(&args, &key) || group.iter().any(|k| on_command_line(&args, k)) {
            continue;
        }
        let flag = OsString::from(format!("--{key}"));
        match arg.get_action() {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "yes" | "1" => spliced.push(flag),
                "false" | "no" | "0" => {}
                _ => return Err(CliError::Usage(format!("{origin}: '{key}' expects true or false"))),
            },
            ArgAction::Append => {
                for v in value.split(',').map(str::trim).filter(|v| !v.is_empty()) {
                    spliced.push(flag.clone());
                    spliced.push(v.into());
                }
            }
            _ if arg.get_num_args().is_some_and(|n| n.max_values() > 1) => {
                spliced.push(flag);
                spliced.extend(value.split(',').map(|v| OsString::from(v.trim())));
            }
            _ => {
                spliced.push(flag);
                spliced.push(value.into());
            }
        }
    }
    let mut out = args;
    out.splice(2..2, spliced);
    Ok(out)
}

/// Renders resolved options as a config file that reproduces the run.
pub fn render(command: &str, args: &impl Serialize) -> String {
    let mut s = format!("# resolved options of `rfcn {command}`\n");
    let value = serde_json::to_value(args).expect("options serialize");
    let serde_json::Value::Object(map) = value else {
        unreachable!("options are a struct")
    };
    for (k, v) in map {
        let text = match v {
            serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s,
            serde_json::Value::Array(items) if items.is_empty() => continue,
            serde_json::Value::Array(items) => items
                .iter()
                .map(|i| i.as_str().map(str::to_string).unwrap_or_else(|| i.to_string()))
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        let _ = writeln!(s, "{k} = {text}");
    }
    s
}

pub fn write_resolved(dir: &Path, command: &str, args: &impl Serialize) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(RESOLVED_NAME);
    fs::write(&path, render(command, args)).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn comments_quotes_and_errors() {
        let pairs = parse("# run\nepochs = 20 # short\nout = \"o\"\n\n", "c").unwrap();
        assert_eq!(pairs, [("epochs".to_string(), "20".to_string()), ("out".to_string(), "o".to_string())]);
        assert!(matches!(parse("epochs 20", "c"), Err(CliError::Usage(m)) if m.contains("c:1")));
        assert!(parse("a = 1\na = 2", "c").is_err());
    }

    #[test]
    fn flags_win_over_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "seed = 3\nseqs = 5\npreset = rfc-lenet\n").unwrap();
        let args = os(&["rfcn", "synth", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", "x"]);
        let err = expand(args);
        assert!(matches!(err, Err(CliError::Usage(m)) if m.contains("unknown key 'preset'")));

        fs::write(&cfg, "seed = 3\nseqs = 5\n").unwrap();
        let args = os(&["rfcn", "synth", "--config", cfg.to_str().unwrap(), "--seed", "9", "--out", "x"]);
        let expanded = expand(args).unwrap();
        let cli = Cli::try_parse_from(expanded).unwrap();
        let crate::Command::Synth(s) = cli.command else { panic!() };
        assert_eq!((s.seed, s.seqs), (9, 5));
    }

    #[test]
    fn rendered_options_parse_back() {
        let cli = Cli::try_parse_from(os(&[
            "rfcn", "train", "--preset", "rfc-12s", "--scale", "0.25", "--data", "d", "--out", "o", "--split", "70-30",
            "--mode", "decoupled", "--fc-checkpoint", "fc.rfcn", "--eps", "1e-6",
        ]))
        .unwrap();
        let crate::Command::Train(t) = cli.command else { panic!() };
        let text = render("train", &t);
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("config.txt");
        fs::write(&cfg, &text).unwrap();
        let again = Cli::try_parse_from(expand(os(&["rfcn", "train", "--config", cfg.to_str().unwrap()])).unwrap()).unwrap();
        let crate::Command::Train(u) = again.command else { panic!() };
        assert_eq!(render("train", &u), text);
    }
}
