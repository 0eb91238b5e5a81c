//! `key = value` config files merged beneath flags and environment variables.

use std::ffi::OsString;
use std::path::Path;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, CommandFactory};

use crate::{Cli, CliError};

/// Parses `key = value` lines; `#` starts a comment. Keys are normalized to
/// long-flag spelling (`max_epochs` -> `max-epochs`).
pub fn parse_config(text: &str, path: &Path) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                n + 1
            )));
        };
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::Usage(format!("{}:{}: empty key", path.display(), n + 1)));
        }
        out.push((key, value));
    }
    Ok(out)
}

/// Whether the value of `id` came from the command line or the environment.
fn explicitly_set(m: &ArgMatches, id: &str) -> bool {
    matches!(
        m.value_source(id),
        Some(ValueSource::CommandLine) | Some(ValueSource::EnvVariable)
    )
}

/// Parses `args`, then fills every setting still at its default from the
/// config file named by `--config` / `SEISMOFORGE_CONFIG`.
pub fn parse_with_config(mut args: Vec<OsString>) -> Result<Cli, CliError> {
    let cmd = Cli::command();
    let first = cmd.clone().try_get_matches_from(&args)?;
    let Some(path) = first.get_one::<std::path::PathBuf>("config").cloned() else {
        return Cli::from_matches(&first);
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| CliError::Core(seismogpt::Error::Io { path: path.clone(), source: e }))?;
    let entries = parse_config(&text, &path)?;

    let (sub_name, sub_matches) = first
        .subcommand()
        .expect("clap requires a subcommand");
    let sub_cmd = cmd
        .find_subcommand(sub_name)
        .expect("matched subcommand exists");
    let known = |c: &clap::Command, key: &str| {
        c.get_arguments()
            .find(|a| a.get_long() == Some(key))
            .map(|a| (a.get_id().as_str().to_string(), a.get_action().clone()))
    };

    let mut extra = Vec::new();
    for (key, value) in entries {
        if key == "config" {
            continue;
        }
        let hit = known(sub_cmd, &key)
            .map(|h| (h, sub_matches))
            .or_else(|| known(&cmd, &key).map(|h| (h, &first)));
        let Some(((id, action), matches)) = hit else {
            let anywhere = cmd.get_subcommands().any(|s| known(s, &key).is_some());
            if anywhere {
                continue;
            }
            return Err(CliError::Usage(format!(
                "{}: unknown key `{key}`",
                path.display()
            )));
        };
        if explicitly_set(matches, &id) {
            continue;
        }
        match action {
            ArgAction::SetTrue => match value.as_str() {
                "true" | "1" | "yes" => extra.push(OsString::from(format!("--{key}"))),
                "false" | "0" | "no" => {}
                other => {
                    return Err(CliError::Usage(format!(
                        "{}: `{key}` expects true/false, got `{other}`",
                        path.display()
                    )))
                }
            },
            _ => {
                extra.push(OsString::from(format!("--{key}")));
                extra.push(OsString::from(value));
            }
        }
    }
    args.extend(extra);
    let merged = cmd.try_get_matches_from(&args)?;
    Cli::from_matches(&merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Command;

    #[test]
    fn config_lines() {
        let p = Path::new("c.conf");
        let e = parse_config("# hi\nmax_epochs = 3\nlr=1e-3 # inline\n\n", p).unwrap();
        assert_eq!(
            e,
            vec![
                ("max-epochs".to_string(), "3".to_string()),
                ("lr".to_string(), "1e-3".to_string())
            ]
        );
        assert!(matches!(parse_config("oops", p), Err(CliError::Usage(_))));
    }

    #[test]
    fn config_fills_defaults_only() {
        let dir = std::env::temp_dir().join(format!("sgpt-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let cfg = dir.join("run.conf");
        std::fs::write(&cfg, "lr = 0.01\nmax_epochs = 7\nno_early_stopping = true\nevents = 5\n")
            .unwrap();
        let args: Vec<OsString> = [
            "seismogpt", "--config", cfg.to_str().unwrap(), "train", "--data", "d", "--out", "o",
            "--lr", "0.02",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let cli = parse_with_config(args).unwrap();
        let Command::Train(t) = cli.command else {
            panic!("expected train")
        };
        assert_eq!(t.lr, 0.02);
        assert_eq!(t.max_epochs, 7);
        assert!(t.no_early_stopping);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
