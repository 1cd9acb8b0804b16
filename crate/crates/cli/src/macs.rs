//! The cost table printed by `fedact macs`.

use fedact_core::eval::{mac_count_iterative, mac_count_slp, mac_count_slp_per_ap, MacConvention};
use fedact_core::scenario::ScenarioConfig;

use crate::config::ExperimentConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct MacRow {
    pub detector: &'static str,
    pub convention: &'static str,
    pub macs: u64,
    pub iters: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MacTable {
    pub rows: Vec<MacRow>,
    pub slp_per_ap: u64,
    pub slp_network: u64,
    /// AMP / network-SLP cost with one complex MAC counted once.
    pub amp_ratio_complex1: f64,
    /// AMP / network-SLP cost with one complex MAC counted as four real MACs.
    pub amp_ratio_real4: f64,
}

pub fn mac_table(config: &ExperimentConfig) -> MacTable {
    let sc: &ScenarioConfig = &config.scenario;
    let per_ap = mac_count_slp_per_ap(sc).macs;
    let network = mac_count_slp(sc).macs;
    let amp_iters = config.solver.amp_iters as u64;
    let prox_iters = config.solver.max_iters as u64;
    let mut rows = vec![
        MacRow { detector: "fl (per AP)", convention: "real", macs: per_ap, iters: 1 },
        MacRow { detector: "fl (network)", convention: "real", macs: network, iters: 1 },
    ];
    for (name, iters) in [("amp", amp_iters), ("ista/fista (max)", prox_iters)] {
        for (conv, tag) in [(MacConvention::Complex1, "complex1"), (MacConvention::Real4, "real4")] {
            rows.push(MacRow {
                detector: name,
                convention: tag,
                macs: mac_count_iterative(sc, iters, conv).macs,
                iters,
            });
        }
    }
    let amp1 = mac_count_iterative(sc, amp_iters, MacConvention::Complex1).macs;
    let amp4 = mac_count_iterative(sc, amp_iters, MacConvention::Real4).macs;
    MacTable {
        rows,
        slp_per_ap: per_ap,
        slp_network: network,
        amp_ratio_complex1: amp1 as f64 / network as f64,
        amp_ratio_real4: amp4 as f64 / network as f64,
    }
}

pub fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i) % 3 == 0 {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

pub fn render(table: &MacTable) -> String {
    let mut out = format!("{:<18} {:<10} {:>16} {:>6}\n", "detector", "convention", "macs", "iters");
    for r in &table.rows {
        out.push_str(&format!(
            "{:<18} {:<10} {:>16} {:>6}\n",
            r.detector,
            r.convention,
            thousands(r.macs),
            r.iters
        ));
    }
    out.push_str(&format!("amp/fl ratio (complex1): {:.3}\n", table.amp_ratio_complex1));
    out.push_str(&format!("amp/fl ratio (real4):    {:.3}\n", table.amp_ratio_real4));
    out
}
