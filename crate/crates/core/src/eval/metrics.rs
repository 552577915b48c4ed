use crate::error::{contract, Result};
use crate::multilatency::{Path, TraceEntry};
use crate::transducer::Token;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ErrorCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
    pub reference_len: usize,
}

impl ErrorCounts {
    pub fn distance(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// Distance over reference length; an empty reference counts as length 1.
    pub fn rate(&self) -> f64 {
        self.distance() as f64 / self.reference_len.max(1) as f64
    }

    pub fn add(&mut self, other: &ErrorCounts) {
        self.substitutions += other.substitutions;
        self.insertions += other.insertions;
        self.deletions += other.deletions;
        self.reference_len += other.reference_len;
    }
}

/// Levenshtein alignment of `hyp` against `reference`.
///
/// Among equally short alignments the backtrace from the end prefers a
/// substitution (or match), then an insertion, then a deletion.
pub fn error_rate(hyp: &[Token], reference: &[Token]) -> (f64, ErrorCounts) {
    let (n, m) = (reference.len(), hyp.len());
    let w = m + 1;
    let mut d = vec![0usize; (n + 1) * w];
    for i in 0..=n {
        d[i * w] = i;
    }
    for j in 0..=m {
        d[j] = j;
    }
    for i in 1..=n {
        for j in 1..=m {
            let sub = d[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hyp[j - 1]);
            let ins = d[i * w + j - 1] + 1;
            let del = d[(i - 1) * w + j] + 1;
            d[i * w + j] = sub.min(ins).min(del);
        }
    }
    let mut counts = ErrorCounts { reference_len: n, ..Default::default() };
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = d[i * w + j];
        if i > 0 && j > 0 {
            let diff = usize::from(reference[i - 1] != hyp[j - 1]);
            if d[(i - 1) * w + j - 1] + diff == here {
                counts.substitutions += diff;
                i -= 1;
                j -= 1;
                continue;
            }
        }
        if j > 0 && d[i * w + j - 1] + 1 == here {
            counts.insertions += 1;
            j -= 1;
        } else {
            counts.deletions += 1;
            i -= 1;
        }
    }
    (counts.rate(), counts)
}

/// Emission delays of one output path, in frames.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathLatency {
    /// Regions reported on this path.
    pub regions: usize,
    pub tokens: usize,
    /// Largest delay over all regions, emitting or not: the structural delay.
    pub structural_frames: usize,
    /// Mean and max over emitted tokens; zero when none were emitted.
    pub mean_token_frames: f64,
    pub max_token_frames: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatencyReport {
    pub frame_ms: u32,
    pub committed: Option<PathLatency>,
    pub provisional: Option<PathLatency>,
}

impl LatencyReport {
    /// Structural look-ahead delay of the earliest output path: the
    /// provisional path when the stream has one, else the committed path.
    pub fn lookahead_frames(&self) -> usize {
        self.provisional.or(self.committed).map_or(0, |p| p.structural_frames)
    }

    pub fn lookahead_ms(&self) -> u32 {
        self.lookahead_frames() as u32 * self.frame_ms
    }

    pub fn committed_ms(&self) -> u32 {
        self.committed.map_or(0, |p| p.structural_frames) as u32 * self.frame_ms
    }
}

fn path_latency(trace: &[TraceEntry], path: Path) -> Option<PathLatency> {
    let entries: Vec<&TraceEntry> = trace.iter().filter(|e| e.path == path).collect();
    if entries.is_empty() {
        return None;
    }
    let mut out = PathLatency { regions: entries.len(), tokens: 0, structural_frames: 0, mean_token_frames: 0.0, max_token_frames: 0 };
    let mut sum = 0usize;
    for e in entries {
        let delay = e.clock - e.region_end;
        out.structural_frames = out.structural_frames.max(delay);
        if !e.tokens.is_empty() {
            out.tokens += e.tokens.len();
            sum += delay * e.tokens.len();
            out.max_token_frames = out.max_token_frames.max(delay);
        }
    }
    if out.tokens > 0 {
        out.mean_token_frames = sum as f64 / out.tokens as f64;
    }
    Some(out)
}

/// Structural delay between each region's last frame arriving and its
/// tokens being output. Compute time plays no part: clocks count frames.
pub fn measure_latency(trace: &[TraceEntry], frame_ms: u32) -> Result<LatencyReport> {
    if let Some(e) = trace.iter().find(|e| e.clock < e.region_end) {
        return Err(contract(format!(
            "trace entry output at frame {} before its region ended at frame {}",
            e.clock, e.region_end
        )));
    }
    Ok(LatencyReport {
        frame_ms,
        committed: path_latency(trace, Path::Committed),
        provisional: path_latency(trace, Path::Provisional),
    })
}
