//! Flat `key=value` run configuration.
//!
//! The format is one assignment per line, `#` comments, blank lines ignored.
//! Unknown keys are rejected, as are keys that do not apply to the selected
//! kinds (for example `model.hidden` with `model.kind=logreg`). Every run
//! writes back the fully resolved table — defaults filled in, overrides
//! applied — so an output directory always states exactly what produced it.
//!
//! Keys:
//!
//! ```text
//! data.kind            blobs | csv                    (blobs)
//! data.n               training rows                  (2000, blobs)
//! data.test_n          held-out rows                  (500, blobs)
//! data.d               feature count                  (10, blobs)
//! data.classes         class count                    (4, blobs)
//! data.spread          cluster standard deviation     (1.0, blobs)
//! data.train_path      training csv                   (required, csv)
//! data.test_path       held-out csv                   (required, csv)
//! clients              client population M            (20)
//! model.kind           logreg | mlp                   (logreg)
//! model.input_dim      feature count                  (data.d; required for csv)
//! model.classes        output count                   (data.classes; required for csv)
//! model.hidden         hidden width                   (32, mlp only)
//! model.activation     relu | tanh                    (relu, mlp only)
//! train.epochs         local epochs E                 (1)
//! train.batch          mini-batch size B              (32)
//! train.lr             learning rate                  (0.05)
//! sampling.kind        static | dynamic               (static)
//! sampling.c           initial rate C                 (1.0)
//! sampling.beta        decay coefficient              (required when dynamic)
//! sampling.min_clients per-round floor                (2)
//! sampling.t0          decay index origin, 0 | 1      (0)
//! masking.kind         none | random | selective      (none)
//! masking.gamma        keep fraction                  (1.0, random/selective)
//! masking.fill         zero | server                  (zero, random/selective)
//! agg.mode             weighted | uniform | paper-literal  (weighted)
//! rounds               communication rounds           (required)
//! eval_every           evaluation cadence             (1)
//! seed                 global seed                    (42)
//! dropout              per-client dropout probability (0.0)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fedsim_core::{
    AggregationMode, Activation, DataSource, MaskFill, MaskingPolicy, ModelKind, ModelSpec,
    RoundOrigin, RunConfig, SamplingSchedule, ScheduleKind, TrainConfig,
};

use crate::CliError;

type ConfigMap = BTreeMap<String, String>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Parse a config file into key/value pairs, rejecting malformed lines and
/// duplicate keys.
pub fn parse_file(path: &Path) -> Result<ConfigMap, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
    let mut map = ConfigMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            config_err(format!(
                "{}:{}: expected key=value, found `{line}`",
                path.display(),
                idx + 1
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if map.insert(key.clone(), value).is_some() {
            return Err(config_err(format!(
                "{}:{}: duplicate key `{key}`",
                path.display(),
                idx + 1
            )));
        }
    }
    Ok(map)
}

/// Apply `--set key=value` pairs on top of the file contents.
pub fn apply_overrides(map: &mut ConfigMap, overrides: &[String]) -> Result<(), CliError> {
    for entry in overrides {
        let (key, value) = entry
            .split_once('=')
            .ok_or_else(|| config_err(format!("--set expects key=value, found `{entry}`")))?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(())
}

struct Resolver {
    map: ConfigMap,
    resolved: ConfigMap,
}

impl Resolver {
    fn new(map: ConfigMap) -> Resolver {
        Resolver {
            map,
            resolved: ConfigMap::new(),
        }
    }

    /// Consume a key, falling back to a default; the final value lands in
    /// the resolved echo.
    fn take(&mut self, key: &str, default: Option<&str>) -> Result<String, CliError> {
        let value = match (self.map.remove(key), default) {
            (Some(v), _) => v,
            (None, Some(d)) => d.to_string(),
            (None, None) => return Err(config_err(format!("missing required key `{key}`"))),
        };
        self.resolved.insert(key.to_string(), value.clone());
        Ok(value)
    }

    fn reject_if_present(&self, key: &str, reason: &str) -> Result<(), CliError> {
        if self.map.contains_key(key) {
            return Err(config_err(format!("key `{key}` {reason}")));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: Option<&str>) -> Result<T, CliError> {
        let raw = self.take(key, default)?;
        raw.parse()
            .map_err(|_| config_err(format!("key `{key}`: cannot parse `{raw}`")))
    }

    fn finish(self) -> Result<ConfigMap, CliError> {
        if let Some(key) = self.map.keys().next() {
            return Err(config_err(format!("unknown key `{key}`")));
        }
        Ok(self.resolved)
    }
}

/// Turn a key/value table into a validated [`RunConfig`] plus the resolved
/// echo of every applicable key.
pub fn resolve(map: ConfigMap) -> Result<(RunConfig, ConfigMap), CliError> {
    let mut r = Resolver::new(map);

    let data_kind = r.take("data.kind", Some("blobs"))?;
    let (data, default_dims, default_classes) = match data_kind.as_str() {
        "blobs" => {
            for key in ["data.train_path", "data.test_path"] {
                r.reject_if_present(key, "requires data.kind=csv")?;
            }
            let train_examples: usize = r.parse("data.n", Some("2000"))?;
            let test_examples: usize = r.parse("data.test_n", Some("500"))?;
            let dims: usize = r.parse("data.d", Some("10"))?;
            let classes: usize = r.parse("data.classes", Some("4"))?;
            let spread: f64 = r.parse("data.spread", Some("1.0"))?;
            (
                DataSource::Blobs {
                    train_examples,
                    test_examples,
                    dims,
                    classes,
                    spread,
                },
                Some(dims.to_string()),
                Some(classes.to_string()),
            )
        }
        "csv" => {
            for key in ["data.n", "data.test_n", "data.d", "data.classes", "data.spread"] {
                r.reject_if_present(key, "requires data.kind=blobs")?;
            }
            let train_path = PathBuf::from(r.take("data.train_path", None)?);
            let test_path = PathBuf::from(r.take("data.test_path", None)?);
            (
                DataSource::Csv {
                    train_path,
                    test_path,
                },
                None,
                None,
            )
        }
        other => return Err(config_err(format!("data.kind: unknown kind `{other}`"))),
    };

    let num_clients: usize = r.parse("clients", Some("20"))?;

    let model_kind = r.take("model.kind", Some("logreg"))?;
    let input_dim: usize = r.parse("model.input_dim", default_dims.as_deref())?;
    let num_classes: usize = r.parse("model.classes", default_classes.as_deref())?;
    let model = match model_kind.as_str() {
        "logreg" => {
            r.reject_if_present("model.hidden", "is only valid for model.kind=mlp")?;
            r.reject_if_present("model.activation", "is only valid for model.kind=mlp")?;
            ModelSpec::logreg(input_dim, num_classes)
        }
        "mlp" => {
            let hidden: usize = r.parse("model.hidden", Some("32"))?;
            let activation = match r.take("model.activation", Some("relu"))?.as_str() {
                "relu" => Activation::Relu,
                "tanh" => Activation::Tanh,
                other => {
                    return Err(config_err(format!(
                        "model.activation: unknown activation `{other}`"
                    )))
                }
            };
            ModelSpec::mlp(input_dim, hidden, num_classes, activation)
        }
        other => return Err(config_err(format!("model.kind: unknown kind `{other}`"))),
    };

    let train = TrainConfig {
        epochs: r.parse("train.epochs", Some("1"))?,
        batch_size: r.parse("train.batch", Some("32"))?,
        learning_rate: r.parse("train.lr", Some("0.05"))?,
    };

    let sampling_kind = r.take("sampling.kind", Some("static"))?;
    let initial_rate: f64 = r.parse("sampling.c", Some("1.0"))?;
    let kind = match sampling_kind.as_str() {
        "static" => {
            r.reject_if_present("sampling.beta", "requires sampling.kind=dynamic")?;
            ScheduleKind::Static
        }
        "dynamic" => ScheduleKind::Dynamic {
            decay: r.parse("sampling.beta", None)?,
        },
        other => return Err(config_err(format!("sampling.kind: unknown kind `{other}`"))),
    };
    let min_clients: usize = r.parse("sampling.min_clients", Some("2"))?;
    let origin = match r.take("sampling.t0", Some("0"))?.as_str() {
        "0" => RoundOrigin::Zero,
        "1" => RoundOrigin::One,
        other => {
            return Err(config_err(format!(
                "sampling.t0: expected 0 or 1, found `{other}`"
            )))
        }
    };
    let sampling = SamplingSchedule {
        kind,
        initial_rate,
        min_clients,
        origin,
    };

    let masking_kind = r.take("masking.kind", Some("none"))?;
    let masking = match masking_kind.as_str() {
        "none" => {
            r.reject_if_present("masking.gamma", "requires masking.kind of random or selective")?;
            r.reject_if_present("masking.fill", "requires masking.kind of random or selective")?;
            MaskingPolicy::None
        }
        "random" | "selective" => {
            let keep_fraction: f64 = r.parse("masking.gamma", Some("1.0"))?;
            let fill = match r.take("masking.fill", Some("zero"))?.as_str() {
                "zero" => MaskFill::Zero,
                "server" => MaskFill::ServerFill,
                other => {
                    return Err(config_err(format!(
                        "masking.fill: expected zero or server, found `{other}`"
                    )))
                }
            };
            if masking_kind == "random" {
                MaskingPolicy::Random {
                    keep_fraction,
                    fill,
                }
            } else {
                MaskingPolicy::Selective {
                    keep_fraction,
                    fill,
                }
            }
        }
        other => return Err(config_err(format!("masking.kind: unknown kind `{other}`"))),
    };

    let aggregation = match r.take("agg.mode", Some("weighted"))?.as_str() {
        "weighted" => AggregationMode::Weighted,
        "uniform" => AggregationMode::Uniform,
        "paper-literal" => AggregationMode::PaperLiteral,
        other => return Err(config_err(format!("agg.mode: unknown mode `{other}`"))),
    };

    let config = RunConfig {
        data,
        num_clients,
        model,
        train,
        sampling,
        masking,
        aggregation,
        rounds: r.parse("rounds", None)?,
        eval_every: r.parse("eval_every", Some("1"))?,
        seed: r.parse("seed", Some("42"))?,
        dropout_prob: r.parse("dropout", Some("0.0"))?,
    };
    let resolved = r.finish()?;
    config.validate().map_err(CliError::Core)?;
    Ok((config, resolved))
}

/// Render the resolved table, one sorted `key=value` line each.
pub fn render_resolved(resolved: &ConfigMap) -> String {
    let mut out = String::new();
    for (key, value) in resolved {
        writeln!(out, "{key}={value}").expect("writing to a string cannot fail");
    }
    out
}

/// Patch the resolved echo for one sweep point so each per-value output
/// directory states its own configuration.
pub fn patch_for_sweep(resolved: &ConfigMap, axis: crate::AxisArg, value: f64) -> ConfigMap {
    let mut patched = resolved.clone();
    match axis {
        crate::AxisArg::Beta => {
            patched.insert("sampling.kind".into(), "dynamic".into());
            patched.insert("sampling.beta".into(), value.to_string());
        }
        crate::AxisArg::Gamma => {
            patched.insert("masking.gamma".into(), value.to_string());
        }
        crate::AxisArg::C => {
            patched.insert("sampling.c".into(), value.to_string());
        }
    }
    patched
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(pairs: &[(&str, &str)]) -> ConfigMap {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let (config, resolved) = resolve(map(&[("rounds", "5")])).unwrap();
        assert_eq!(config.rounds, 5);
        assert_eq!(config.num_clients, 20);
        assert_eq!(config.seed, 42);
        assert_eq!(resolved.get("train.lr").unwrap(), "0.05");
        assert_eq!(resolved.get("model.input_dim").unwrap(), "10");
        assert_eq!(resolved.get("rounds").unwrap(), "5");
    }

    #[test]
    fn missing_rounds_is_an_error_naming_the_key() {
        let err = resolve(map(&[])).unwrap_err();
        assert!(err.to_string().contains("rounds"));
    }

    #[test]
    fn unknown_key_rejected() {
        let err = resolve(map(&[("rounds", "5"), ("roundz", "6")])).unwrap_err();
        assert!(err.to_string().contains("roundz"));
    }

    #[test]
    fn inapplicable_key_rejected() {
        let err = resolve(map(&[("rounds", "5"), ("model.hidden", "8")])).unwrap_err();
        assert!(err.to_string().contains("model.hidden"));
        let err = resolve(map(&[("rounds", "5"), ("sampling.beta", "0.1")])).unwrap_err();
        assert!(err.to_string().contains("sampling.beta"));
        let err = resolve(map(&[("rounds", "5"), ("masking.gamma", "0.5")])).unwrap_err();
        assert!(err.to_string().contains("masking.gamma"));
    }

    #[test]
    fn dynamic_sampling_requires_beta() {
        let err = resolve(map(&[("rounds", "5"), ("sampling.kind", "dynamic")])).unwrap_err();
        assert!(err.to_string().contains("sampling.beta"));
    }

    #[test]
    fn csv_kind_requires_paths() {
        let err = resolve(map(&[("rounds", "5"), ("data.kind", "csv")])).unwrap_err();
        assert!(err.to_string().contains("data.train_path"));
    }

    #[test]
    fn bad_value_names_the_key() {
        let err = resolve(map(&[("rounds", "many")])).unwrap_err();
        assert!(err.to_string().contains("rounds"));
        assert!(err.to_string().contains("many"));
    }

    #[test]
    fn full_masking_config_round_trips() {
        let (config, resolved) = resolve(map(&[
            ("rounds", "3"),
            ("masking.kind", "selective"),
            ("masking.gamma", "0.3"),
            ("masking.fill", "server"),
            ("sampling.kind", "dynamic"),
            ("sampling.beta", "0.01"),
            ("sampling.t0", "1"),
        ]))
        .unwrap();
        assert!(matches!(
            config.masking,
            MaskingPolicy::Selective {
                keep_fraction,
                fill: MaskFill::ServerFill,
            } if keep_fraction == 0.3
        ));
        assert!(matches!(config.sampling.kind, ScheduleKind::Dynamic { decay } if decay == 0.01));
        assert_eq!(config.sampling.origin, RoundOrigin::One);
        assert_eq!(resolved.get("masking.fill").unwrap(), "server");
    }

    #[test]
    fn render_is_sorted_and_line_oriented() {
        let (_, resolved) = resolve(map(&[("rounds", "5"), ("seed", "9")])).unwrap();
        let text = render_resolved(&resolved);
        let lines: Vec<&str> = text.lines().collect();
        let mut sorted = lines.clone();
        sorted.sort_unstable();
        assert_eq!(lines, sorted);
        assert!(lines.contains(&"seed=9"));
    }
}
