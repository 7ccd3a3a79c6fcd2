//! Expansion of a base config over a grid of key values.

use std::path::Path;

use toml::{Table, Value};

use super::config::{known_keys, validate_config};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SweepAxis {
    /// Dotted key, e.g. `verif.learning_rate`.
    pub key: String,
    pub values: Vec<Value>,
}

fn parse_value(raw: &str) -> Value {
    let raw = raw.trim();
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_owned()))
}

impl SweepAxis {
    /// Parses `section.key=v1,v2,...`. Values are TOML literals; anything
    /// that does not parse as one is taken as a bare string.
    pub fn parse(spec: &str) -> Result<Self> {
        let (key, values) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(vec![format!("sweep axis `{spec}` is not of the form key=v1,v2")]))?;
        let key = key.trim().to_owned();
        if !known_keys().contains(&key) {
            return Err(Error::Config(vec![format!("sweep axis names unknown key `{key}`")]));
        }
        let values: Vec<Value> = values.split(',').filter(|v| !v.trim().is_empty()).map(parse_value).collect();
        if values.is_empty() {
            return Err(Error::Config(vec![format!("sweep axis `{key}` has no values")]));
        }
        Ok(SweepAxis { key, values })
    }
}

fn set(table: &mut Table, dotted: &str, value: Value) {
    match dotted.split_once('.') {
        Some((section, key)) => {
            let entry = table
                .entry(section.to_owned())
                .or_insert_with(|| Value::Table(Table::new()));
            if let Value::Table(t) = entry {
                t.insert(key.to_owned(), value);
            }
        }
        None => {
            table.insert(dotted.to_owned(), value);
        }
    }
}

/// One resolved config document per point of the Cartesian product of
/// `axes`, named `run_000`, `run_001`, … with the first axis varying
/// slowest. Each run writes to `out_root/<name>`.
pub fn expand_sweep(base: &str, axes: &[SweepAxis], out_root: &Path) -> Result<Vec<(String, String)>> {
    let base_table: Table = base
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(vec![format!("not valid TOML: {}", e.message())]))?;
    let total: usize = axes.iter().map(|a| a.values.len()).product();
    let mut out = Vec::with_capacity(total);
    for i in 0..total {
        let mut table = base_table.clone();
        let mut rest = i;
        for axis in axes.iter().rev() {
            let n = axis.values.len();
            set(&mut table, &axis.key, axis.values[rest % n].clone());
            rest /= n;
        }
        let name = format!("run_{i:03}");
        set(
            &mut table,
            "output_dir",
            Value::String(out_root.join(&name).to_string_lossy().into_owned()),
        );
        let resolved = validate_config(&toml::to_string(&table).expect("table serializes"), None)?;
        out.push((name, resolved.to_toml()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_is_cartesian() {
        let axes = vec![
            SweepAxis::parse("verif.learning_rate=1e-4,1e-3").unwrap(),
            SweepAxis::parse("mining.mode=FTS,RNP").unwrap(),
            SweepAxis::parse("mining.target_size=100,200,400").unwrap(),
        ];
        let runs = expand_sweep("task = \"train-verif\"", &axes, Path::new("sweep")).unwrap();
        assert_eq!(runs.len(), 12);
        let last = validate_config(&runs[11].1, None).unwrap();
        assert_eq!(last.verif.learning_rate, 1e-3);
        assert_eq!(last.mining.target_size, 400);
        assert_eq!(last.output_dir, Path::new("sweep").join("run_011"));
        let first = validate_config(&runs[0].1, None).unwrap();
        assert_eq!(first.mining.mode, crate::mining::MiningMode::FTS);
    }

    #[test]
    fn bad_axes_rejected() {
        assert!(SweepAxis::parse("verif.learnin_rate=1").is_err());
        assert!(SweepAxis::parse("verif.learning_rate").is_err());
        let axes = vec![SweepAxis::parse("verif.batch_size=1").unwrap()];
        assert!(expand_sweep("task = \"train-verif\"", &axes, Path::new("x")).is_err());
    }
}
