//! Per-step activity dumps of one cue episode.

use std::fmt::Write as _;

use diffplast_core::envs::{cue_generate_with, CuePattern, CueTaskConfig};
use diffplast_core::rng::SeedTree;
use diffplast_core::{Network, Tape};

fn stats(xs: &[f64]) -> (f64, f64, f64) {
    let min = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, xs.iter().sum::<f64>() / xs.len().max(1) as f64, max)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

pub fn parse_pattern(s: &str) -> Option<CuePattern> {
    match s {
        "random" => Some(CuePattern::Random),
        "left" => Some(CuePattern::AllLeft),
        "right" => Some(CuePattern::AllRight),
        "none" => Some(CuePattern::NoCues),
        _ => None,
    }
}

/// Space-separated columns with a header row:
///
/// - `u{i}`: output-layer membrane potentials
/// - `h{l}_{i}`: hidden-layer spikes
/// - `e{l}_min e{l}_mean e{l}_max`: trace statistics per layer
/// - `phi{l}`: mean BCM threshold, sliding-threshold rules only
/// - `m{l}`: mean modulatory signal, modulated rules only
///
/// The whole horizon is simulated.
pub fn trace_cue(net: &Network, env: &CueTaskConfig, pattern: CuePattern, seed: u64) -> diffplast_core::Result<String> {
    let seeds = SeedTree::new(seed);
    let ep = cue_generate_with(env, pattern, &mut seeds.stream("trace-env", &[]))?;
    let layers = net.num_layers();
    let sizes = &net.config.layer_sizes;
    let rules = &net.config.rules;

    let mut out = String::new();
    let mut header = vec!["step".to_string()];
    header.extend((0..sizes[layers - 1]).map(|i| format!("u{i}")));
    for (l, &n) in sizes[..layers - 1].iter().enumerate() {
        header.extend((0..n).map(|i| format!("h{l}_{i}")));
    }
    for (l, kind) in rules.iter().enumerate() {
        header.extend([format!("e{l}_min"), format!("e{l}_mean"), format!("e{l}_max")]);
        if kind.is_bcm() {
            header.push(format!("phi{l}"));
        }
        if kind.is_modulated() {
            header.push(format!("m{l}"));
        }
    }
    let _ = writeln!(out, "{}", header.join(" "));

    let mut tape = Tape::new();
    tape.set_check_finite(false);
    let mut ro = net.begin(&mut tape)?;
    for (t, x) in ep.spikes.iter().enumerate() {
        ro.step_values(net, &mut tape, x)?;
        let mut row = vec![t.to_string()];
        if let Some(u) = ro.states[layers - 1].u {
            row.extend(tape.value(u).data().iter().map(|v| v.to_string()));
        }
        for &s in &ro.outputs[..layers - 1] {
            row.extend(tape.value(s).data().iter().map(|v| (*v as u8).to_string()));
        }
        for (l, kind) in rules.iter().enumerate() {
            let tr = &ro.states[l].trace;
            let (lo, mu, hi) = stats(tape.value(tr.e).data());
            row.extend([lo.to_string(), mu.to_string(), hi.to_string()]);
            if kind.is_bcm() {
                row.push(tr.phi.map_or(0.0, |p| mean(tape.value(p).data())).to_string());
            }
            if kind.is_modulated() {
                row.push(tr.m.map_or(0.0, |m| mean(tape.value(m).data())).to_string());
            }
        }
        let _ = writeln!(out, "{}", row.join(" "));
    }
    Ok(out)
}
