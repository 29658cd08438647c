// SPDX-License-Identifier: Apache-2.0

//! Payload size sweep comparing connector-mediated and direct exchange.

use serde::{Deserialize, Serialize};

use super::scenario::{run_scenario, CaseId, Mode, PhaseTimings, ScenarioContext, ScenarioSpec};
use super::{api_error, ApiError, MIB};

/// Runs `repeats` fresh same-host exchanges per (size, mode). Modes alternate
/// within each repeat so slow drift affects both alike. One discarded
/// warm-up run per mode precedes the measurements.
pub fn run_size_sweep(
    ctx: &ScenarioContext<'_>,
    sizes_mb: &[usize],
    modes: &[Mode],
    repeats: usize,
    seed: u64,
) -> Result<Vec<PhaseTimings>, ApiError> {
    if repeats < 3 {
        return Err(api_error("INVALID_ARGUMENT", "a sweep needs at least 3 repeats"));
    }
    if sizes_mb.is_empty() || modes.is_empty() {
        return Err(api_error("INVALID_ARGUMENT", "nothing to sweep"));
    }
    let spec = |mode, size_mb: usize, run_index| ScenarioSpec {
        mode,
        run_index,
        seed,
        ..ScenarioSpec::new(CaseId::AppAppSameHost, size_mb * MIB)
    };
    for &mode in modes {
        let warm = run_scenario(ctx, &spec(mode, sizes_mb[0], 0));
        if let Some(e) = warm.error {
            return Err(e);
        }
    }
    let mut rows = Vec::with_capacity(sizes_mb.len() * modes.len() * repeats);
    for &size in sizes_mb {
        for run in 0..repeats {
            for &mode in modes {
                let out = run_scenario(ctx, &spec(mode, size, run));
                log::info!(
                    "{mode} {size} MB run {run}: prepare {:.4}s configure {:.4}s exchange {:.4}s {}",
                    out.timings.prepare_s,
                    out.timings.configure_s,
                    out.timings.exchange_s,
                    out.timings.verdict
                );
                if let Some(mut e) = out.error {
                    e.message = format!("{mode} {size} MB run {run}: {}", e.message);
                    return Err(e);
                }
                rows.push(out.timings);
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub mode: Mode,
    pub size_mb: f64,
    pub runs: usize,
    pub prepare_s: f64,
    pub configure_s: f64,
    pub exchange_s: f64,
}

pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// (max - min) / mean.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (max - min) / mean
}

/// Per (mode, size) medians, ordered by mode then size.
pub fn medians(rows: &[PhaseTimings]) -> Vec<MedianRow> {
    let mut keys: Vec<(Mode, f64)> = rows.iter().map(|r| (r.mode, r.size_mb)).collect();
    keys.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
    keys.dedup();
    keys.into_iter()
        .map(|(mode, size_mb)| {
            let group: Vec<&PhaseTimings> = rows.iter().filter(|r| r.mode == mode && r.size_mb == size_mb).collect();
            let col = |f: fn(&PhaseTimings) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            MedianRow {
                mode,
                size_mb,
                runs: group.len(),
                prepare_s: col(|r| r.prepare_s),
                configure_s: col(|r| r.configure_s),
                exchange_s: col(|r| r.exchange_s),
            }
        })
        .collect()
}
