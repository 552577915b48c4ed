use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::blocking::{delay_ms, BlockSpec};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TransducerModel};
use crate::multilatency::{fit, DecodeOptions, LatencyConfig, Method, Objective, TrainConfig, Trainer};
use crate::par::Execution;
use crate::synth::{read_corpus, Corpus};

use super::evaluate;

pub const CSV_HEADER: &str = "model,mode,block_setting,delay_ms,error_rate";

/// One `row = <model> <mode> <spec>` line.
#[derive(Clone, Debug, PartialEq)]
pub struct RowSpec {
    pub model: String,
    pub method: Method,
    pub spec: BlockSpec,
}

/// Plain `key = value` experiment description.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    /// When set, each row's trained model is saved here.
    pub checkpoint_dir: Option<PathBuf>,
    /// Load a row's checkpoint from `checkpoint_dir` instead of training.
    pub load_checkpoints: bool,
    pub seed: u64,
    pub train: TrainConfig,
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub joint_dim: usize,
    pub mask_prob: f64,
    pub mode_prob: f64,
    pub decode: DecodeOptions,
    pub frame_ms: u32,
    pub rows: Vec<RowSpec>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::from("corpus.txt"),
            checkpoint_dir: None,
            load_checkpoints: false,
            seed: 1,
            train: TrainConfig::default(),
            layers: 4,
            d_model: 32,
            heads: 4,
            ff_dim: 64,
            joint_dim: 32,
            mask_prob: 0.5,
            mode_prob: 0.5,
            decode: DecodeOptions::default(),
            frame_ms: 32,
            rows: Vec::new(),
        }
    }
}

fn value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{key}`")))
}

/// Parses an experiment file. Relative corpus and checkpoint paths are
/// resolved against `base`.
pub fn parse_experiment(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        match k {
            "corpus" => c.corpus = base.join(v),
            "checkpoint_dir" => c.checkpoint_dir = Some(base.join(v)),
            "load_checkpoints" => c.load_checkpoints = value(k, v)?,
            "seed" => c.seed = value(k, v)?,
            "epochs" => c.train.epochs = value(k, v)?,
            "batch_size" => c.train.batch_size = value(k, v)?,
            "lr" => c.train.lr = value(k, v)?,
            "layers" => c.layers = value(k, v)?,
            "d_model" => c.d_model = value(k, v)?,
            "heads" => c.heads = value(k, v)?,
            "ff_dim" => c.ff_dim = value(k, v)?,
            "joint_dim" => c.joint_dim = value(k, v)?,
            "mask_prob" => c.mask_prob = value(k, v)?,
            "mode_prob" => c.mode_prob = value(k, v)?,
            "beam_width" => c.decode.beam_width = value(k, v)?,
            "max_symbols" => c.decode.max_symbols = value(k, v)?,
            "frame_ms" => c.frame_ms = value(k, v)?,
            "row" => {
                let f: Vec<&str> = v.split_whitespace().collect();
                let [model, mode, spec] = f[..] else {
                    return Err(Error::Config(format!("line {}: row needs `<model> <mode> <N_l-N_c-N_r>`", n + 1)));
                };
                let method: Method = mode.parse()?;
                let spec: BlockSpec = spec.parse()?;
                if method.is_multiple() {
                    spec.check_multi_latency()?;
                }
                c.rows.push(RowSpec { model: model.to_owned(), method, spec });
            }
            _ => return Err(Error::Config(format!("line {}: unknown key `{k}`", n + 1))),
        }
    }
    if c.rows.is_empty() {
        return Err(Error::Config("experiment lists no rows".into()));
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRow {
    pub model: String,
    pub mode: Method,
    /// The primary geometry, then for multiple modes the auxiliary geometry.
    pub block_setting: String,
    pub delay_ms: u32,
    /// Percent, averaged over the dev and test splits.
    pub error_rate: f64,
}

/// `8-4-4 8-4-0` for Method A, `8-4-4 12-4-0` for Method B: the auxiliary
/// path sees history plus target as history and the look-ahead as target.
fn block_setting(row: &RowSpec) -> String {
    let s = row.spec;
    match row.method {
        Method::Single => s.to_string(),
        Method::A => format!("{s} {}-{}-0", s.n_left, s.n_center),
        Method::B => format!("{s} {}-{}-0", s.n_left + s.n_center, s.n_right),
    }
}

fn checkpoint_path(dir: &Path, row: &RowSpec) -> PathBuf {
    dir.join(format!("{}_{}_{}.ckpt", row.model, row.method, row.spec))
}

fn objective(cfg: &ExperimentConfig, method: Method) -> Objective {
    match method {
        Method::Single => Objective::Single,
        Method::A => Objective::MethodA { mask_prob: cfg.mask_prob },
        Method::B => Objective::MethodB { mode_prob: cfg.mode_prob },
    }
}

/// Trains (or loads) one row's model.
pub fn train_row(cfg: &ExperimentConfig, corpus: &Corpus, row: &RowSpec) -> Result<TransducerModel> {
    if cfg.load_checkpoints {
        let dir = cfg
            .checkpoint_dir
            .as_ref()
            .ok_or_else(|| Error::Config("load_checkpoints needs checkpoint_dir".into()))?;
        let path = checkpoint_path(dir, row);
        if !path.exists() {
            return Err(Error::Config(format!(
                "checkpoint `{}` not found; rerun without load_checkpoints to train it",
                path.display()
            )));
        }
        return TransducerModel::load(path);
    }
    let mc = ModelConfig {
        d_feat: corpus.d_feat,
        d_model: cfg.d_model,
        layers: cfg.layers,
        heads: cfg.heads,
        ff_dim: cfg.ff_dim,
        vocab_size: corpus.vocab_size,
        joint_dim: cfg.joint_dim,
    };
    let spec = row.spec.with_frame_ms(cfg.frame_ms);
    let mut trainer = Trainer::new(TransducerModel::new(mc, cfg.seed)?, cfg.seed.wrapping_add(1));
    let train = TrainConfig { seed: cfg.seed.wrapping_add(2), ..cfg.train };
    fit(&mut trainer, &corpus.train, &spec, objective(cfg, row.method), &train)?;
    if let Some(dir) = &cfg.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
        trainer.model.save(checkpoint_path(dir, row))?;
    }
    Ok(trainer.model)
}

/// Evaluates a trained model for one row.
pub fn evaluate_row(cfg: &ExperimentConfig, corpus: &Corpus, row: &RowSpec, model: &TransducerModel) -> Result<ExperimentRow> {
    let spec = row.spec.with_frame_ms(cfg.frame_ms);
    let mut lc = LatencyConfig::new(spec, row.method)?;
    lc.decode = cfg.decode;
    let dev = evaluate(model, lc, &corpus.dev, Execution::default())?;
    let test = evaluate(model, lc, &corpus.test, Execution::default())?;
    Ok(ExperimentRow {
        model: row.model.clone(),
        mode: row.method,
        block_setting: block_setting(row),
        delay_ms: dev.lookahead_ms.max(test.lookahead_ms),
        error_rate: 100.0 * (dev.counts.rate() + test.counts.rate()) / 2.0,
    })
}

/// Runs every row on an in-memory corpus.
pub fn run_experiment_on(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<Vec<ExperimentRow>> {
    cfg.rows
        .iter()
        .map(|row| {
            let model = train_row(cfg, corpus, row)?;
            let out = evaluate_row(cfg, corpus, row, &model)?;
            debug_assert_eq!(out.delay_ms, if row.method.is_multiple() { 0 } else { delay_ms(&row.spec.with_frame_ms(cfg.frame_ms)) });
            Ok(out)
        })
        .collect()
}

/// Reads the corpus named by `cfg` and runs every row.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    if !cfg.corpus.exists() {
        return Err(Error::Config(format!(
            "corpus `{}` not found; create it with `mlstream gen-data --out {}`",
            cfg.corpus.display(),
            cfg.corpus.display()
        )));
    }
    let corpus = read_corpus(&cfg.corpus)?;
    run_experiment_on(cfg, &corpus)
}

pub fn write_csv(rows: &[ExperimentRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{:.4}", r.model, r.mode, r.block_setting, r.delay_ms, r.error_rate);
    }
    out
}
