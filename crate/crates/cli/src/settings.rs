use std::path::Path;

use r2e_core::pipeline::{PipelineError, R2eConfig};

use crate::args::{Cli, Command};

fn config_error(message: impl Into<String>) -> PipelineError {
    PipelineError::Config(message.into())
}

/// Defaults, then the config file, then `R2E_*` variables from `env`, then
/// `--set` overrides, then dedicated flags.
pub fn resolve<I>(cli: &Cli, env: I) -> Result<R2eConfig, PipelineError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut cfg = match &cli.config {
        Some(path) => read_config(path)?,
        None => R2eConfig::default(),
    };
    cfg.apply_env(env)?;
    for o in &cli.overrides {
        let (key, value) = o
            .split_once('=')
            .ok_or_else(|| config_error(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg = set_key(&cfg, key.trim(), value.trim())?;
    }
    if let Some(a) = &cli.artifacts {
        cfg.paths.artifacts = a.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let inference = match &cli.command {
        Some(Command::Rank(a)) => Some(&a.inference),
        Some(Command::Explain(a)) => Some(&a.inference),
        Some(Command::Evaluate(a)) => Some(&a.inference),
        _ => None,
    };
    if let Some(i) = inference {
        if let Some(k) = i.k {
            cfg.inference.k = k;
        }
        if let Some(c) = i.c {
            cfg.inference.c = c;
        }
    }
    match &cli.command {
        Some(Command::Explain(a)) => {
            if let Some(m) = a.permutations {
                cfg.inference.permutations = m;
            }
            if let Some(s) = &a.output_space {
                cfg.inference.output_space = s.parse().map_err(config_error)?;
            }
        }
        Some(Command::Serve(a)) => {
            if let Some(b) = &a.bind {
                cfg.server.bind = b.clone();
            }
            if let Some(t) = a.session_ttl_secs {
                cfg.server.session_ttl_secs = t;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn read_config(path: &Path) -> Result<R2eConfig, PipelineError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    R2eConfig::from_toml(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))
}

/// Parses `raw` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets a dotted key such as `reasoner_train.optimizer.learning_rate`.
/// Keys the config does not know are rejected.
pub fn set_key(cfg: &R2eConfig, key: &str, raw: &str) -> Result<R2eConfig, PipelineError> {
    let mut root: toml::Table = toml::from_str(&cfg.to_toml()).map_err(|e| config_error(e.to_string()))?;
    let parts: Vec<&str> = key.split('.').collect();
    let (leaf, parents) = parts.split_last().ok_or_else(|| config_error("empty --set key"))?;
    let mut table = &mut root;
    for p in parents {
        table = table
            .get_mut(*p)
            .and_then(toml::Value::as_table_mut)
            .ok_or_else(|| config_error(format!("unknown config key `{key}`")))?;
    }
    let value = parse_value(raw);
    table.insert(leaf.to_string(), value.clone());
    let text = toml::to_string(&root).map_err(|e| config_error(e.to_string()))?;
    let updated = R2eConfig::from_toml(&text).map_err(|e| config_error(format!("--set {key}: {e}")))?;
    // Unknown keys deserialise silently; make sure the value landed.
    let check: toml::Table = toml::from_str(&updated.to_toml()).map_err(|e| config_error(e.to_string()))?;
    let mut node = check.get(parts[0]);
    for p in &parts[1..] {
        node = node.and_then(|n| n.get(*p));
    }
    if node.is_none() {
        return Err(config_error(format!("unknown config key `{key}`")));
    }
    Ok(updated)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_key_nested_typed_and_unknown() {
        let cfg = R2eConfig::default();
        let c = set_key(&cfg, "mlm_train.optimizer.learning_rate", "0.01").unwrap();
        assert_eq!(c.mlm_train.optimizer.learning_rate, 0.01);
        let c = set_key(&c, "server.bind", "0.0.0.0:1").unwrap();
        assert_eq!(c.server.bind, "0.0.0.0:1");
        assert!(set_key(&cfg, "inference.nope", "1").is_err());
        assert!(set_key(&cfg, "nope.k", "1").is_err());
        assert!(set_key(&cfg, "inference.k", "many").is_err());
        assert!(set_key(&cfg, "inference.c", "3").is_err());
    }
}
