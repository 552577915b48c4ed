//! Error rate, emission latency and the mode-comparison experiment.

mod experiment;
mod metrics;

pub use experiment::{
    evaluate_row, parse_experiment, run_experiment, run_experiment_on, train_row, write_csv, ExperimentConfig,
    ExperimentRow, RowSpec, CSV_HEADER,
};
pub use metrics::{error_rate, measure_latency, ErrorCounts, LatencyReport, PathLatency};

use crate::error::Result;
use crate::model::TransducerModel;
use crate::multilatency::{run_stream, LatencyConfig};
use crate::par::{self, Execution};
use crate::synth::Utterance;

/// Pooled edit counts and the largest structural look-ahead delay seen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub counts: ErrorCounts,
    pub lookahead_ms: u32,
}

/// Streams every utterance through `config`, scoring transcripts against the
/// references and measuring each stream's latency.
pub fn evaluate(
    model: &TransducerModel,
    config: LatencyConfig,
    utterances: &[Utterance],
    execution: Execution,
) -> Result<EvalSummary> {
    let frame_ms = config.primary_spec.frame_ms;
    let results = par::map(utterances, execution, |u| -> Result<(ErrorCounts, u32)> {
        let out = run_stream(model, config, &u.frames)?;
        let latency = measure_latency(&out.trace, frame_ms)?;
        Ok((error_rate(&out.transcript, &u.transcript).1, latency.lookahead_ms()))
    });
    let mut summary = EvalSummary { counts: ErrorCounts::default(), lookahead_ms: 0 };
    for r in results {
        let (c, ms) = r?;
        summary.counts.add(&c);
        summary.lookahead_ms = summary.lookahead_ms.max(ms);
    }
    Ok(summary)
}
