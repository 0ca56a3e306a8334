//! Plain key=value config files and inline synthetic-spec strings.

use std::collections::BTreeMap;
use std::path::Path;

use fgp_core::synth::{Model, SynthSpec};

/// Read a `key=value` file; `#` starts a comment, blank lines are skipped.
pub fn load_key_values(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let mut map = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((key, value)) => {
                let value = value.trim().trim_matches('"').trim_matches('\'');
                map.insert(key.trim().to_string(), value.to_string());
            }
            None => return Err(format!("line {} is not key=value: `{line}`", k + 1)),
        }
    }
    Ok(map)
}

/// Comma-separated list of numbers, e.g. `1,9,90`.
pub fn parse_f64_list(text: &str) -> Result<Vec<f64>, String> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(part.parse::<f64>().map_err(|_| format!("bad number `{part}`"))?);
    }
    if out.is_empty() {
        return Err("empty list".into());
    }
    Ok(out)
}

/// Inline synthetic spec `d=5,n=4096,seed=7,sigma=0.004[,nu=..][,dt=..]`.
pub fn parse_synth_inline(text: &str) -> Result<SynthSpec, String> {
    let mut d = 5usize;
    let mut n = 1024usize;
    let mut seed = 1u64;
    let mut sigma = 0.01f64;
    let mut nu = 0.0f64;
    let mut dt = 1.0f64;
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (key, value) =
            part.split_once('=').ok_or_else(|| format!("`{part}` is not key=value"))?;
        let value = value.trim();
        match key.trim() {
            "d" => d = value.parse().map_err(|_| format!("bad d `{value}`"))?,
            "n" => n = value.parse().map_err(|_| format!("bad n `{value}`"))?,
            "seed" => seed = value.parse().map_err(|_| format!("bad seed `{value}`"))?,
            "sigma" => sigma = value.parse().map_err(|_| format!("bad sigma `{value}`"))?,
            "nu" => nu = value.parse().map_err(|_| format!("bad nu `{value}`"))?,
            "dt" => dt = value.parse().map_err(|_| format!("bad dt `{value}`"))?,
            other => return Err(format!("unknown synth key `{other}`")),
        }
    }
    Ok(SynthSpec {
        d,
        n,
        seed,
        model: Model::MultiplicativeWalk { vol: vec![sigma; d], drift: vec![nu; d] },
        dt,
        s0: 1.0,
    })
}
