//! Flat `key = value` config files mirroring `TrainConfig`.
//!
//! Blank lines and lines starting with `#` are ignored. `tau` is accepted as
//! another name for `temperature`.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use trimodal::train::TrainConfig;

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| anyhow!("bad value {value:?} for {key}: {e}"))
}

pub fn set(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "epochs" => cfg.epochs = parse(key, value)?,
        "lr" => cfg.lr = parse(key, value)?,
        "weight_decay" => cfg.weight_decay = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "temperature" | "tau" => cfg.temperature = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "bias" => cfg.bias = parse(key, value)?,
        "beta1" => cfg.beta1 = parse(key, value)?,
        "beta2" => cfg.beta2 = parse(key, value)?,
        "eps" => cfg.eps = parse(key, value)?,
        "out_dim" => cfg.out_dim = parse(key, value)?,
        "select_on_validation" => cfg.select_on_validation = parse(key, value)?,
        _ => bail!("unknown key {key:?}"),
    }
    Ok(())
}

pub fn apply_str(cfg: &mut TrainConfig, text: &str, origin: &str) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("{origin}:{}: expected key = value", n + 1))?;
        set(cfg, key.trim(), value.trim()).with_context(|| format!("{origin}:{}", n + 1))?;
    }
    Ok(())
}

pub fn apply_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    apply_str(cfg, &text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let mut cfg = TrainConfig::default();
        apply_str(&mut cfg, "# run\nepochs = 3\n\ntau=0.1\nbias = true\n", "t").unwrap();
        assert_eq!(cfg.epochs, 3);
        assert_eq!(cfg.temperature, 0.1);
        assert!(cfg.bias);
        assert_eq!(cfg.lr, 1e-5);
    }

    #[test]
    fn errors_carry_the_line() {
        let mut cfg = TrainConfig::default();
        let err = apply_str(&mut cfg, "epochs = 3\nlr = fast\n", "run.cfg").unwrap_err();
        assert!(format!("{err:#}").contains("run.cfg:2"), "{err:#}");
        let err = apply_str(&mut cfg, "nope = 1\n", "run.cfg").unwrap_err();
        assert!(format!("{err:#}").contains("unknown key"), "{err:#}");
        assert!(apply_str(&mut cfg, "epochs\n", "run.cfg").is_err());
    }

    #[test]
    fn key_values_round_trip() {
        let cfg = TrainConfig {
            epochs: 7,
            lr: 3e-4,
            bias: true,
            ..TrainConfig::default()
        };
        let mut back = TrainConfig::default();
        apply_str(&mut back, &cfg.to_key_values(), "dump").unwrap();
        assert_eq!(back, cfg);
    }
}
