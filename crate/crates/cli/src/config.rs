//! Effective configuration: built-in defaults, then the `--config` file,
//! then command-line flags, each layer overriding the previous one.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};

/// Declares a subcommand's flag struct (every field optional) and its
/// resolved config struct (defaults filled in) from one field list.
macro_rules! options {
    (
        $args:ident => $cfg:ident {
            $( $(#[$meta:meta])* $field:ident : $ty:ty = $default:expr, )*
        }
        $( optional { $( $(#[$ometa:meta])* $ofield:ident : $oty:ty, )* } )?
    ) => {
        #[derive(Debug, Clone, clap::Args, serde::Serialize)]
        pub struct $args {
            $(
                $(#[$meta])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $field: Option<$ty>,
            )*
            $($(
                $(#[$ometa])*
                #[arg(long)]
                #[serde(skip_serializing_if = "Option::is_none")]
                pub $ofield: Option<$oty>,
            )*)?
        }

        #[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $cfg {
            $( pub $field: $ty, )*
            $($( pub $ofield: Option<$oty>, )*)?
        }

        impl Default for $cfg {
            fn default() -> Self {
                Self {
                    $( $field: $default, )*
                    $($( $ofield: None, )*)?
                }
            }
        }
    };
}

pub(crate) use options;

/// A subcommand with a resolved config.
pub trait RunCommand: Serialize + DeserializeOwned + Default {
    /// Path whose `.config.json` sibling receives the sidecar by default.
    fn primary_output(&self) -> Option<&Path>;
    fn run(&self) -> CliResult<()>;
}

pub fn load_config_file(path: &Path) -> CliResult<Map<String, Value>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::File {
        path: path.to_path_buf(),
        source: e.into(),
    })?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(CliError::usage(format!("{}: config must be a JSON object", path.display()))),
        Err(e) => Err(CliError::File {
            path: path.to_path_buf(),
            source: e.into(),
        }),
    }
}

/// Layers defaults, file values and flag values into `C`.
pub fn resolve<C: RunCommand>(
    command: &str,
    file: Option<&Map<String, Value>>,
    flags: &impl Serialize,
) -> CliResult<C> {
    let mut merged = match serde_json::to_value(C::default())? {
        Value::Object(map) => map,
        _ => unreachable!("configs serialize to objects"),
    };
    if let Some(file) = file {
        for (key, value) in file {
            if key == "command" {
                if value.as_str() != Some(command) {
                    return Err(CliError::usage(format!(
                        "config file is for command {value}, not {command:?}"
                    )));
                }
                continue;
            }
            merged.insert(key.clone(), value.clone());
        }
    }
    if let Value::Object(set) = serde_json::to_value(flags)? {
        merged.extend(set);
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::usage(format!("config: {e}")))
}

/// The resolved config tagged with its command, as written to the sidecar.
pub fn sidecar_value(command: &str, config: &impl Serialize) -> CliResult<Value> {
    let mut map = Map::new();
    map.insert("command".into(), Value::String(command.into()));
    if let Value::Object(fields) = serde_json::to_value(config)? {
        map.extend(fields);
    }
    Ok(Value::Object(map))
}

pub fn default_sidecar_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".config.json");
    PathBuf::from(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    options! {
        DemoArgs => DemoConfig {
            seed: u64 = 7,
            steps: usize = 10,
            name: String = "a".into(),
        }
        optional {
            out: PathBuf,
        }
    }

    impl RunCommand for DemoConfig {
        fn primary_output(&self) -> Option<&Path> {
            self.out.as_deref()
        }

        fn run(&self) -> CliResult<()> {
            Ok(())
        }
    }

    fn flags(seed: Option<u64>) -> DemoArgs {
        DemoArgs {
            seed,
            steps: None,
            name: None,
            out: None,
        }
    }

    #[test]
    fn flags_beat_file_beats_defaults() {
        let d: DemoConfig = resolve("demo", None, &flags(None)).unwrap();
        assert_eq!((d.seed, d.steps, d.name.as_str()), (7, 10, "a"));

        let file: Map<String, Value> =
            serde_json::from_str(r#"{"command":"demo","seed":3,"steps":4}"#).unwrap();
        let f: DemoConfig = resolve("demo", Some(&file), &flags(None)).unwrap();
        assert_eq!((f.seed, f.steps), (3, 4));

        let g: DemoConfig = resolve("demo", Some(&file), &flags(Some(9))).unwrap();
        assert_eq!((g.seed, g.steps), (9, 4));
    }

    #[test]
    fn rejects_unknown_keys_and_wrong_command() {
        let unknown: Map<String, Value> = serde_json::from_str(r#"{"sead":3}"#).unwrap();
        assert!(matches!(
            resolve::<DemoConfig>("demo", Some(&unknown), &flags(None)),
            Err(CliError::Usage(_))
        ));
        let other: Map<String, Value> = serde_json::from_str(r#"{"command":"knee"}"#).unwrap();
        assert!(resolve::<DemoConfig>("demo", Some(&other), &flags(None)).is_err());
    }

    #[test]
    fn sidecar_round_trips() {
        let cfg = DemoConfig {
            out: Some("x.ras".into()),
            ..Default::default()
        };
        let value = sidecar_value("demo", &cfg).unwrap();
        let map = value.as_object().unwrap().clone();
        let back: DemoConfig = resolve("demo", Some(&map), &flags(None)).unwrap();
        assert_eq!(serde_json::to_value(&back).unwrap(), serde_json::to_value(&cfg).unwrap());
        assert_eq!(default_sidecar_path(Path::new("x.ras")), PathBuf::from("x.ras.config.json"));
    }
}
