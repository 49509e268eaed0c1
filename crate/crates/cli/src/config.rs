//! Layered settings: defaults, then the config file, then flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::commands::CliError;

/// Fully resolved `key = value` settings of one subcommand.
#[derive(Clone, Debug, Default)]
pub struct Resolved {
    values: BTreeMap<String, String>,
}

impl Resolved {
    /// `file` entries may be unscoped (`seed = 3`) or scoped to one
    /// subcommand (`train.seed = 3`); entries scoped to other subcommands
    /// are skipped. Every remaining key must appear in `defaults`.
    pub fn layer(
        command: &str,
        defaults: &[(&str, String)],
        file: &BTreeMap<String, String>,
        flags: &[(&str, Option<String>)],
    ) -> Result<Self, CliError> {
        let mut values: BTreeMap<String, String> =
            defaults.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        let mut scoped = Vec::new();
        for (k, v) in file {
            match k.split_once('.') {
                Some((scope, key)) if scope == command => scoped.push((key.to_string(), v.clone())),
                Some(_) => {}
                None => put(&mut values, k, v.clone())?,
            }
        }
        for (k, v) in scoped {
            put(&mut values, &k, v)?;
        }
        for (k, v) in flags {
            if let Some(v) = v {
                put(&mut values, k, v.clone())?;
            }
        }
        Ok(Resolved { values })
    }

    pub fn get(&self, key: &str) -> &str {
        self.values.get(key).map(String::as_str).unwrap_or("")
    }

    /// The value, or a user error naming the flag when unset.
    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        match self.get(key) {
            "" => Err(CliError::User(format!("--{} is required", key.replace('_', "-")))),
            v => Ok(v),
        }
    }

    pub fn optional(&self, key: &str) -> Option<&str> {
        Some(self.get(key)).filter(|v| !v.is_empty())
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        let v = self.get(key);
        v.parse()
            .map_err(|_| CliError::User(format!("{key}: cannot parse {v:?}")))
    }

    pub fn flag(&self, key: &str) -> Result<bool, CliError> {
        match self.get(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(CliError::User(format!("{key}: expected true or false, got {v:?}"))),
        }
    }

    /// Config-file text that replays this run.
    pub fn to_text(&self, command: &str) -> String {
        let mut out = format!("# exreg {command}\n");
        for (k, v) in &self.values {
            out.push_str(&format!("{command}.{k} = {v}\n"));
        }
        out
    }

    /// Logs the resolved settings and, when `dir` is given, writes them
    /// to `dir/resolved.conf`.
    pub fn echo(&self, command: &str, dir: Option<&Path>) -> Result<(), CliError> {
        let text = self.to_text(command);
        eprint!("{text}");
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
            let p = d.join("resolved.conf");
            std::fs::write(&p, text).map_err(|e| CliError::io(&p, e))?;
        }
        Ok(())
    }
}

fn put(values: &mut BTreeMap<String, String>, key: &str, v: String) -> Result<(), CliError> {
    match values.get_mut(key) {
        Some(slot) => {
            *slot = v;
            Ok(())
        }
        None => Err(CliError::User(format!("unknown setting {key:?}"))),
    }
}

/// Reads the optional `--config` file.
pub fn read_file(path: Option<&Path>) -> Result<BTreeMap<String, String>, CliError> {
    let Some(p) = path else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
    Ok(exreg::training::parse_key_values(&text)?)
}

/// A checkpoint argument may name the file or the training output directory.
pub fn checkpoint_path(arg: &str) -> PathBuf {
    let p = PathBuf::from(arg);
    if p.is_dir() {
        p.join(crate::commands::CHECKPOINT_FILE)
    } else {
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> Vec<(&'static str, String)> {
        vec![("seed", "0".into()), ("out", String::new())]
    }

    #[test]
    fn flags_override_file_override_defaults() {
        let mut file = BTreeMap::new();
        file.insert("seed".to_string(), "3".to_string());
        file.insert("train.seed".to_string(), "4".to_string());
        file.insert("evaluate.seed".to_string(), "9".to_string());
        let r = Resolved::layer("train", &defaults(), &file, &[]).unwrap();
        assert_eq!(r.get("seed"), "4");
        let r = Resolved::layer("train", &defaults(), &file, &[("seed", Some("5".into()))]).unwrap();
        assert_eq!(r.get("seed"), "5");
        assert!(r.require("out").is_err());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut file = BTreeMap::new();
        file.insert("sede".to_string(), "3".to_string());
        assert!(Resolved::layer("train", &defaults(), &file, &[]).is_err());
    }

    #[test]
    fn echo_replays() {
        let r = Resolved::layer("train", &defaults(), &BTreeMap::new(), &[("out", Some("x".into()))]).unwrap();
        let parsed = exreg::training::parse_key_values(&r.to_text("train")).unwrap();
        let again = Resolved::layer("train", &defaults(), &parsed, &[]).unwrap();
        assert_eq!(again.values, r.values);
    }
}
