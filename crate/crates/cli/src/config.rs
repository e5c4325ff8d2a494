//! `--config FILE`: a JSON object whose keys are long flag names.
//!
//! The file is expanded into flags inserted right after the subcommand, ahead
//! of the user's own flags. Every subcommand lets a later occurrence of a flag
//! replace an earlier one, so the command line wins.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::Value;

fn flag_tokens(key: &str, value: &Value) -> Result<Vec<OsString>> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| -> Result<String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) => Ok(n.to_string()),
            Value::Bool(b) => Ok(b.to_string()),
            other => bail!("config key {key:?}: unsupported value {other}"),
        }
    };
    Ok(match value {
        Value::Null | Value::Bool(false) => Vec::new(),
        Value::Bool(true) => vec![flag.into()],
        Value::Array(items) => {
            let joined = items.iter().map(scalar).collect::<Result<Vec<_>>>()?.join(",");
            vec![flag.into(), joined.into()]
        }
        Value::Object(_) => bail!("config key {key:?}: nested objects are not supported"),
        v => vec![flag.into(), scalar(v)?.into()],
    })
}

pub fn load(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let value: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(map) = value else {
        bail!("config {} must be a JSON object", path.display());
    };
    let mut tokens = Vec::new();
    for (key, value) in &map {
        if key == "config" {
            bail!("config files cannot include other config files");
        }
        tokens.extend(flag_tokens(key, value)?);
    }
    Ok(tokens)
}

/// Removes `--config FILE` from `args` and splices the file's flags in after
/// the subcommand.
pub fn expand(mut args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut i = 1;
    while i < args.len() {
        let arg = args[i].to_string_lossy().into_owned();
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            if i + 1 >= args.len() {
                bail!("--config needs a file");
            }
            config = Some(args.remove(i + 1));
            args.remove(i);
            continue;
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            config = Some(OsString::from(path));
            args.remove(i);
            continue;
        }
        i += 1;
    }
    let Some(config) = config else {
        return Ok(args);
    };
    let tokens = load(Path::new(&config))?;
    let Some(at) = args
        .iter()
        .position(|a| subcommands.iter().any(|s| a.to_str() == Some(s)))
    else {
        bail!("--config needs a subcommand");
    };
    args.splice(at + 1..at + 1, tokens);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn flags_follow_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"metrics": ["auroc", "fpr95"], "latency_ms": 33, "consistency": true, "json": false}"#,
        )
        .unwrap();
        let args = os(&["bin", "--config", path.to_str().unwrap(), "evaluate", "seq", "--latency-ms", "0"]);
        let out = expand(args, &["evaluate"]).unwrap();
        assert_eq!(
            out,
            os(&[
                "bin",
                "evaluate",
                "--consistency",
                "--latency-ms",
                "33",
                "--metrics",
                "auroc,fpr95",
                "seq",
                "--latency-ms",
                "0"
            ])
        );
    }

    #[test]
    fn no_config_is_untouched() {
        let args = os(&["bin", "gen", "--out", "x"]);
        assert_eq!(expand(args.clone(), &["gen"]).unwrap(), args);
    }
}
