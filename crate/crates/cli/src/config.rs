use std::io::BufRead;
use std::path::Path;

use z2lgt::runner::{ExperimentSpec, Preset};
use z2lgt::Error;

use crate::{CliError, CliResult};

/// Preset defaults with the TOML file merged on top.
pub fn load_spec(preset: Preset, path: Option<&Path>) -> CliResult<ExperimentSpec> {
    let defaults = ExperimentSpec::preset(preset);
    let Some(path) = path else {
        return Ok(defaults);
    };
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()).into());
    }
    let text = std::fs::read_to_string(path)?;
    let file: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        CliError::Validation(format!("{}: {}", path.display(), e.message()))
    })?;
    let mut base =
        toml::Table::try_from(&defaults).map_err(|e| CliError::Runtime(e.to_string()))?;
    merge(&mut base, file);
    let spec: ExperimentSpec =
        toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| {
                CliError::Validation(format!("{}: {}", path.display(), e.message()))
            })?;
    if spec.preset != preset {
        return Err(CliError::Validation(format!(
            "{}: preset `{}` does not match the command's `{}`",
            path.display(),
            spec.preset.name(),
            preset.name()
        )));
    }
    Ok(spec)
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Two named numeric columns of a CSV file with a header row.
pub fn read_columns<R: BufRead>(r: R, x: &str, y: &str) -> CliResult<(Vec<f64>, Vec<f64>)> {
    let mut lines = r.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Validation("empty CSV file".into()))??;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter().position(|c| *c == name).ok_or_else(|| {
            CliError::Validation(format!(
                "column `{name}` not found (have {})",
                cols.join(",")
            ))
        })
    };
    let (ix, iy) = (find(x)?, find(y)?);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| -> CliResult<f64> {
            f.get(i).and_then(|s| s.trim().parse().ok()).ok_or_else(|| {
                CliError::Validation(format!("line {}: bad value in column {}", n + 2, i + 1))
            })
        };
        xs.push(parse(ix)?);
        ys.push(parse(iy)?);
    }
    Ok((xs, ys))
}
