//! Rendering of [`CostReport`] as JSON and as a Markdown table.

use sat_core::profiler::CostReport;
use serde_json::{json, Value};

pub const PROFILE_SCHEMA: &str = "sat.profile/1";

/// Token column text: `N` alone, or `N/T_c` when a cache is attached.
pub fn tokens_label(r: &CostReport, streaming: bool) -> String {
    if streaming {
        format!("{}/{}", r.n_tokens, r.cache_len)
    } else {
        r.n_tokens.to_string()
    }
}

fn mb(bytes: u64) -> f64 {
    bytes as f64 / 1e6
}

pub fn to_json(r: &CostReport, streaming: bool) -> Value {
    json!({
        "schema": PROFILE_SCHEMA,
        "arch": r.config.variant.name(),
        "model": r.config.variant.short_name(),
        "streaming": streaming,
        "tokens": tokens_label(r, streaming),
        "n_tokens": r.n_tokens,
        "cache_len": r.cache_len,
        "context_length": r.context_length,
        "params_m": sat_core::weights::parameter_count(&r.config) as f64 / 1e6,
        "gflops": r.gflops(),
        "gflops_all_matmuls": r.gflops_all_matmuls(),
        "peak_activation_bytes": r.peak_activation_bytes,
        "retained_activation_bytes": r.retained_activation_bytes,
        "cache_bytes": r.cache_bytes,
    })
}

pub fn markdown_table(rows: &[(CostReport, bool)]) -> String {
    let mut s = String::from(
        "| Model | Size (M) | #Token | Gflops | Gflops (all matmuls) | Peak mem (MB) | Retained mem (MB) | Cache (MB) |\n\
         |---|---:|---:|---:|---:|---:|---:|---:|\n",
    );
    for (r, streaming) in rows {
        s.push_str(&format!(
            "| {} | {:.1} | {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.3} |\n",
            r.config.variant.short_name(),
            sat_core::weights::parameter_count(&r.config) as f64 / 1e6,
            tokens_label(r, *streaming),
            r.gflops(),
            r.gflops_all_matmuls(),
            mb(r.peak_activation_bytes),
            mb(r.retained_activation_bytes),
            mb(r.cache_bytes),
        ));
    }
    s
}
