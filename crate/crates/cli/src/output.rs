//! Text outputs: the metrics stream and the columnar episode dump.

use std::fmt::Write as _;
use std::io::{self, Write};

use diffplast_core::envs::{CueEpisode, Side};

pub const METRICS_HEADER: &str = "iteration,loss,accuracy,mean_hidden_rate,lr,wall_time";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub iteration: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub mean_hidden_rate: f64,
    pub lr: f64,
    pub wall_time: f64,
}

impl MetricsRow {
    /// Reals use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.iteration, self.loss, self.accuracy, self.mean_hidden_rate, self.lr, self.wall_time
        )
    }

    pub fn parse(line: &str) -> Option<Self> {
        let f: Vec<&str> = line.trim().split(',').collect();
        if f.len() != 6 {
            return None;
        }
        Some(MetricsRow {
            iteration: f[0].parse().ok()?,
            loss: f[1].parse().ok()?,
            accuracy: f[2].parse().ok()?,
            mean_hidden_rate: f[3].parse().ok()?,
            lr: f[4].parse().ok()?,
            wall_time: f[5].parse().ok()?,
        })
    }
}

pub struct MetricsWriter<W: Write> {
    out: W,
}

impl<W: Write> MetricsWriter<W> {
    /// `with_header` is false when appending to an existing stream.
    pub fn new(mut out: W, with_header: bool) -> io::Result<Self> {
        if with_header {
            writeln!(out, "{METRICS_HEADER}")?;
        }
        Ok(MetricsWriter { out })
    }

    pub fn write(&mut self, row: &MetricsRow) -> io::Result<()> {
        writeln!(self.out, "{}", row.to_csv())?;
        self.out.flush()
    }
}

fn side_char(s: Side) -> char {
    match s {
        Side::Left => 'L',
        Side::Right => 'R',
    }
}

/// `# key value` metadata lines followed by one `step neuron spike` row per
/// input neuron and step.
pub fn episode_text(ep: &CueEpisode) -> String {
    let mut s = String::new();
    let sides: String = ep.cue_sides.iter().map(|&c| side_char(c)).collect();
    let _ = writeln!(s, "# cues {}", if sides.is_empty() { "-" } else { &sides });
    let _ = writeln!(s, "# correct {}", side_char(ep.correct_side));
    let _ = writeln!(s, "# rest {}", ep.rest);
    let _ = writeln!(s, "# decision {} {}", ep.decision.0, ep.decision.1);
    s.push_str("step neuron spike\n");
    for (t, row) in ep.spikes.iter().enumerate() {
        for (n, &v) in row.iter().enumerate() {
            let _ = writeln!(s, "{t} {n} {}", v as u8);
        }
    }
    s
}

/// Inverse of [`episode_text`].
pub fn parse_episode(text: &str) -> Option<CueEpisode> {
    let mut cues = Vec::new();
    let (mut correct, mut rest, mut decision) = (None, None, None);
    let mut cells: Vec<(usize, usize, f64)> = Vec::new();
    for line in text.lines() {
        if let Some(meta) = line.strip_prefix("# ") {
            let (key, val) = meta.split_once(' ')?;
            match key {
                "cues" => {
                    cues = val
                        .chars()
                        .filter(|&c| c != '-')
                        .map(|c| match c {
                            'L' => Some(Side::Left),
                            'R' => Some(Side::Right),
                            _ => None,
                        })
                        .collect::<Option<Vec<_>>>()?
                }
                "correct" => correct = Some(if val == "L" { Side::Left } else { Side::Right }),
                "rest" => rest = val.parse().ok(),
                "decision" => {
                    let (a, b) = val.split_once(' ')?;
                    decision = Some((a.parse().ok()?, b.parse().ok()?));
                }
                _ => return None,
            }
            continue;
        }
        if line.starts_with("step") || line.is_empty() {
            continue;
        }
        let mut it = line.split(' ');
        let t = it.next()?.parse().ok()?;
        let n = it.next()?.parse().ok()?;
        let v: f64 = it.next()?.parse().ok()?;
        cells.push((t, n, v));
    }
    let steps = cells.iter().map(|c| c.0 + 1).max().unwrap_or(0);
    let width = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    let mut spikes = vec![vec![0.0; width]; steps];
    for (t, n, v) in cells {
        spikes[t][n] = v;
    }
    Some(CueEpisode { cue_sides: cues, spikes, correct_side: correct?, decision: decision?, rest: rest? })
}
