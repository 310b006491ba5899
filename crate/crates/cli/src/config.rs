//! Flat `key=value` config files. Each key is a long flag name without the
//! dashes; flags given on the command line win over the file.

use std::ffi::OsString;
use std::path::Path;

const SUBCOMMANDS: &[&str] = &["fit", "simulate", "impute", "diagnose"];
const SWITCHES: &[&str] = &["dump-imputations"];

/// Parses config text into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", i + 1))?;
        let key = key.trim().trim_start_matches("--");
        if key.is_empty() {
            return Err(format!("config line {}: empty key", i + 1));
        }
        out.push((key.to_string(), value.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(p.into());
        }
    }
    None
}

fn has_flag(args: &[OsString], key: &str) -> bool {
    let long = format!("--{key}");
    args.iter().any(|a| {
        let s = a.to_string_lossy();
        s == long || s.starts_with(&format!("{long}="))
    })
}

/// Appends the config file's settings to `args` as flags.
pub fn expand(mut args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| format!("cannot read config {}: {e}", Path::new(&path).display()))?;
    for (key, value) in parse(&text)? {
        if key == "command" {
            let present = args.iter().skip(1).any(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()));
            if !present {
                args.insert(1.min(args.len()), value.into());
            }
            continue;
        }
        if has_flag(&args, &key) {
            continue;
        }
        if SWITCHES.contains(&key.as_str()) {
            match value.as_str() {
                "true" | "1" | "yes" => args.push(format!("--{key}").into()),
                "false" | "0" | "no" => {}
                other => return Err(format!("config key {key}: expected true or false, found '{other}'")),
            }
        } else {
            args.push(format!("--{key}").into());
            args.push(value.into());
        }
    }
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_pairs_and_comments() {
        let kv = parse("# run\ndata = a.csv\n\n--seed=4\n").unwrap();
        assert_eq!(kv, vec![("data".into(), "a.csv".into()), ("seed".into(), "4".into())]);
        assert!(parse("oops").is_err());
    }

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, "command=fit\nseed=9\nresponse=y\ndump-imputations=true\n").unwrap();
        let args = os(&["mbi", "--config", path.to_str().unwrap(), "--seed", "1"]);
        let out = expand(args).unwrap();
        let s: Vec<String> = out.iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(s[1], "fit");
        assert!(s.windows(2).any(|w| w == ["--seed", "1"]));
        assert!(!s.contains(&"9".to_string()));
        assert!(s.windows(2).any(|w| w == ["--response", "y"]));
        assert!(s.contains(&"--dump-imputations".to_string()));
    }
}
