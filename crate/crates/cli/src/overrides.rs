//! `key=value` overrides layered onto a serializable default config.
//!
//! Keys are dotted paths into the config's JSON form (`shapes.seed`,
//! `predictor_opt.schedule.base`). A key must already exist; values are
//! parsed as JSON where the current value is not a string, so `true`, `3`,
//! `1e-3` and `{"kind":"sgd_momentum","momentum":0.9}` all work.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

#[derive(Debug)]
pub struct OverrideError(pub String);

impl std::fmt::Display for OverrideError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

pub type Pair = (String, String);

pub fn parse_pair(s: &str) -> Result<Pair, String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(format!("empty key in `{s}`"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

/// Plain `key=value` lines; blank lines and `#` comments are skipped.
pub fn read_config_file(path: &Path) -> Result<Vec<Pair>, OverrideError> {
    let text =
        fs::read_to_string(path).map_err(|e| OverrideError(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let pair = parse_pair(line)
            .map_err(|e| OverrideError(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(pair);
    }
    Ok(out)
}

fn set(root: &mut Value, key: &str, raw: &str) -> Result<(), OverrideError> {
    let mut node = root;
    for part in key.split('.') {
        node = node
            .as_object_mut()
            .and_then(|m| m.get_mut(part))
            .ok_or_else(|| OverrideError(format!("unknown config key `{key}`")))?;
    }
    *node = match node {
        Value::String(_) => Value::String(raw.to_string()),
        _ => serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string())),
    };
    Ok(())
}

/// Applies `pairs` in order (later wins) and deserializes the result.
pub fn apply<T: Serialize + DeserializeOwned>(
    base: &T,
    pairs: &[Pair],
) -> Result<T, OverrideError> {
    let mut v = serde_json::to_value(base).map_err(|e| OverrideError(e.to_string()))?;
    for (k, raw) in pairs {
        set(&mut v, k, raw)?;
    }
    serde_json::from_value(v).map_err(|e| OverrideError(format!("bad config value: {e}")))
}

/// Whether `key` names an existing entry of `base`.
pub fn has_key<T: Serialize>(base: &T, key: &str) -> bool {
    let Ok(mut node) = serde_json::to_value(base) else {
        return false;
    };
    for part in key.split('.') {
        match node.as_object_mut().and_then(|m| m.remove(part)) {
            Some(v) => node = v,
            None => return false,
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use admin_lab::apps::{ClassifyConfig, ConvergeConfig};

    fn pairs(items: &[&str]) -> Vec<Pair> {
        items.iter().map(|s| parse_pair(s).unwrap()).collect()
    }

    #[test]
    fn nested_keys_and_enums() {
        let c = apply(
            &ClassifyConfig::default(),
            &pairs(&["shapes.seed=9", "formulation=standardized", "lambda=0.5"]),
        )
        .unwrap();
        assert_eq!(c.shapes.seed, 9);
        assert_eq!(c.lambda, 0.5);
        assert_eq!(c.formulation, admin_lab::game::Formulation::Standardized);
    }

    #[test]
    fn json_values_replace_whole_subtrees() {
        let c = apply(
            &ClassifyConfig::default(),
            &pairs(&[
                "predictor_opt.schedule.base=0.05",
                r#"encoder_kind={"kind":"sgd_momentum","momentum":0.9}"#,
            ]),
        )
        .unwrap();
        assert_eq!(c.predictor_opt.schedule.lr_at(0), 0.05);
        assert_eq!(c.encoder_kind, admin_lab::diff::OptimizerKind::sgd(0.9));
    }

    #[test]
    fn later_pairs_win() {
        let c = apply(
            &ConvergeConfig::default(),
            &pairs(&["steps=10", "steps=20"]),
        )
        .unwrap();
        assert_eq!(c.steps, 20);
    }

    #[test]
    fn unknown_and_ill_typed_keys_are_rejected() {
        let base = ConvergeConfig::default();
        assert!(apply(&base, &pairs(&["stepz=10"])).is_err());
        assert!(apply(&base, &pairs(&["steps.inner=10"])).is_err());
        assert!(apply(&base, &pairs(&["steps=many"])).is_err());
        assert!(apply(&base, &pairs(&["steps=-1"])).is_err());
    }

    #[test]
    fn pair_syntax() {
        assert_eq!(parse_pair(" a = 1 ").unwrap(), ("a".into(), "1".into()));
        assert!(parse_pair("a").is_err());
        assert!(parse_pair("=1").is_err());
    }

    #[test]
    fn key_lookup() {
        let c = ClassifyConfig::default();
        assert!(has_key(&c, "shapes.seed"));
        assert!(!has_key(&ConvergeConfig::default(), "shapes.seed"));
    }
}
