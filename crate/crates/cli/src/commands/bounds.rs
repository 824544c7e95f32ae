use std::path::Path;

use dinr::metrics::format_float;
use dinr::theory::{rademacher_bound, universal_constant, BoundInputs, BoundVariant};

use crate::error::{CliError, Result};

/// Evaluates every bound variant for the constants in `inputs` (TOML), prints
/// a table and writes `bounds.csv`.
pub fn run(inputs: &Path, out: &Path) -> Result<Vec<(BoundVariant, f64)>> {
    let text = std::fs::read_to_string(inputs).map_err(|source| CliError::Read { path: inputs.to_path_buf(), source })?;
    let parsed: BoundInputs = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", inputs.display())))?;
    let values = BoundVariant::ALL
        .iter()
        .map(|&v| Ok((v, rademacher_bound(&parsed, v)?)))
        .collect::<Result<Vec<_>>>()?;

    println!("{:<16} {:>14}", "variant", "bound");
    for (v, b) in &values {
        println!("{:<16} {:>14.6}", v.name(), b);
    }
    let get = |want: BoundVariant| values.iter().find(|(v, _)| *v == want).map(|(_, b)| *b).unwrap_or(f64::NAN);
    let (inr, dinr) = (get(BoundVariant::Inr), get(BoundVariant::Dinr));
    let rel = if inr < dinr {
        "<"
    } else if inr > dinr {
        ">"
    } else {
        "="
    };
    println!("ordering: inr {rel} dinr  (C = {:.6})", universal_constant());

    let path = out.join("bounds.csv");
    let mut w = csv::Writer::from_path(&path).map_err(dinr::Error::from)?;
    w.write_record(["variant", "bound"]).map_err(dinr::Error::from)?;
    for (v, b) in &values {
        w.write_record([v.name(), &format_float(*b)]).map_err(dinr::Error::from)?;
    }
    w.flush()?;
    Ok(values)
}
