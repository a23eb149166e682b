use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

/// Overlays the flags given on the command line onto a JSON config file.
/// Unset flags serialize to `null` or are skipped, so the file value wins there.
pub fn merge<T: Serialize + DeserializeOwned>(cli: &T, config: Option<&Path>) -> Result<T> {
    let mut base = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            serde_json::from_str::<Value>(&text)
                .with_context(|| format!("parsing config {}", p.display()))?
        }
        None => Value::Object(Default::default()),
    };
    let Value::Object(base_map) = &mut base else {
        bail!("config must be a JSON object");
    };
    let Value::Object(flags) = serde_json::to_value(cli)? else {
        unreachable!("argument structs serialize to objects");
    };
    for (k, v) in flags {
        if !v.is_null() {
            base_map.insert(k, v);
        }
    }
    Ok(serde_json::from_value(base)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde::Deserialize;

    #[derive(Debug, Default, PartialEq, Serialize, Deserialize)]
    struct Opts {
        lr: Option<f64>,
        dim: Option<usize>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        files: Vec<String>,
    }

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"lr": 0.5, "dim": 8, "files": ["a"]}"#).unwrap();
        let cli = Opts {
            lr: Some(0.1),
            ..Default::default()
        };
        let got = merge(&cli, Some(&p)).unwrap();
        assert_eq!(
            got,
            Opts {
                lr: Some(0.1),
                dim: Some(8),
                files: vec!["a".into()]
            }
        );
        assert_eq!(merge(&cli, None).unwrap(), cli);
    }
}
