use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mlstream::eval::{evaluate, parse_experiment, run_experiment, write_csv, ErrorCounts};
use mlstream::multilatency::{fit, DecodeOptions, LatencyConfig, Method, Objective, Streamer, TrainConfig, Trainer};
use mlstream::synth::{generate_corpus, read_corpus, write_corpus, Corpus, CorpusSpec, Utterance};
use mlstream::{BlockSpec, ModelConfig, TransducerModel};
use serde_json::json;

#[derive(Parser)]
#[command(name = "mlstream", version, about = "Multi-latency block-streaming transducer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus file.
    GenData(GenData),
    /// Train a model and write a checkpoint.
    Train(Train),
    /// Stream a split through a checkpoint and report the token error rate.
    Eval(Eval),
    /// Stream one utterance and print each step as a JSON line.
    Stream(Stream),
    /// Run an experiment config and write the results CSV.
    Experiment(Experiment),
}

#[derive(Args)]
struct GenData {
    #[arg(long, default_value_t = 16)]
    vocab_size: usize,
    #[arg(long, default_value_t = 4)]
    frames_per_token: usize,
    #[arg(long, default_value_t = 8)]
    d_feat: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 2000)]
    train: usize,
    #[arg(long, default_value_t = 200)]
    dev: usize,
    #[arg(long, default_value_t = 200)]
    test: usize,
    #[arg(long, default_value_t = 3)]
    min_tokens: usize,
    #[arg(long, default_value_t = 8)]
    max_tokens: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Mode {
    /// single, multiple-A or multiple-B.
    #[arg(long, default_value = "single")]
    mode: Method,
    /// Block geometry N_l-N_c-N_r.
    #[arg(long, default_value = "8-4-4")]
    spec: BlockSpec,
    #[arg(long, default_value_t = 32)]
    frame_ms: u32,
}

impl Mode {
    fn spec(&self) -> BlockSpec {
        self.spec.with_frame_ms(self.frame_ms)
    }
}

#[derive(Args)]
struct Decode {
    #[arg(long, default_value_t = 1)]
    beam_width: usize,
    #[arg(long, default_value_t = 3)]
    max_symbols: usize,
}

impl Decode {
    fn latency(&self, mode: &Mode) -> Result<LatencyConfig> {
        let mut lc = LatencyConfig::new(mode.spec(), mode.mode)?;
        lc.decode = DecodeOptions { beam_width: self.beam_width, max_symbols: self.max_symbols };
        Ok(lc)
    }
}

#[derive(Args)]
struct Train {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    mode: Mode,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    ff_dim: usize,
    #[arg(long, default_value_t = 32)]
    joint_dim: usize,
    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 2e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.5)]
    mask_prob: f64,
    #[arg(long, default_value_t = 0.5)]
    mode_prob: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Split {
    Train,
    Dev,
    Test,
}

fn split(corpus: &Corpus, s: Split) -> &[Utterance] {
    match s {
        Split::Train => &corpus.train,
        Split::Dev => &corpus.dev,
        Split::Test => &corpus.test,
    }
}

#[derive(Args)]
struct Eval {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    mode: Mode,
    #[command(flatten)]
    decode: Decode,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
}

#[derive(Args)]
struct Stream {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[command(flatten)]
    mode: Mode,
    #[command(flatten)]
    decode: Decode,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    /// Utterance index within the split.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

#[derive(Args)]
struct Experiment {
    #[arg(long)]
    config: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_corpus(path: &PathBuf) -> Result<Corpus> {
    read_corpus(path).with_context(|| format!("reading corpus {}", path.display()))
}

fn load_model(path: &PathBuf) -> Result<TransducerModel> {
    TransducerModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn gen_data(a: GenData) -> Result<()> {
    let spec = CorpusSpec {
        vocab_size: a.vocab_size,
        frames_per_token: a.frames_per_token,
        d_feat: a.d_feat,
        noise_std: a.noise_std,
        train: a.train,
        dev: a.dev,
        test: a.test,
        min_tokens: a.min_tokens,
        max_tokens: a.max_tokens,
        seed: a.seed,
    };
    let corpus = generate_corpus(&spec)?;
    write_corpus(&corpus, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    eprintln!("wrote {} / {} / {} utterances to {}", a.train, a.dev, a.test, a.out.display());
    Ok(())
}

fn train(a: Train) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let config = ModelConfig {
        d_feat: corpus.d_feat,
        d_model: a.d_model,
        layers: a.layers,
        heads: a.heads,
        ff_dim: a.ff_dim,
        vocab_size: corpus.vocab_size,
        joint_dim: a.joint_dim,
    };
    let objective = match a.mode.mode {
        Method::Single => Objective::Single,
        Method::A => Objective::MethodA { mask_prob: a.mask_prob },
        Method::B => Objective::MethodB { mode_prob: a.mode_prob },
    };
    let mut trainer = Trainer::new(TransducerModel::new(config, a.seed)?, a.seed.wrapping_add(1));
    let cfg = TrainConfig { epochs: a.epochs, batch_size: a.batch_size, lr: a.lr, seed: a.seed.wrapping_add(2) };
    let history = fit(&mut trainer, &corpus.train, &a.mode.spec(), objective, &cfg)?;
    for (e, l) in history.iter().enumerate() {
        println!("epoch {:>3}  loss {l:.4}", e + 1);
    }
    trainer.model.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(())
}

fn eval(a: Eval) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let model = load_model(&a.checkpoint)?;
    let lc = a.decode.latency(&a.mode)?;
    let s = evaluate(&model, lc, split(&corpus, a.split), Default::default())?;
    let ErrorCounts { substitutions, insertions, deletions, reference_len } = s.counts;
    println!(
        "error_rate {:.2}%  (sub {substitutions}, ins {insertions}, del {deletions}, ref {reference_len})  delay {} ms",
        100.0 * s.counts.rate(),
        s.lookahead_ms
    );
    Ok(())
}

fn stream(a: Stream) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let model = load_model(&a.checkpoint)?;
    let lc = a.decode.latency(&a.mode)?;
    let utts = split(&corpus, a.split);
    let Some(utt) = utts.get(a.index) else {
        bail!("utterance {} out of range: split has {}", a.index, utts.len());
    };
    let frame_ms = u64::from(a.mode.frame_ms);
    let mut s = Streamer::new(&model, lc, corpus.d_feat);
    let hop = a.mode.spec.n_center;
    let mut t = 0;
    let print = |s: &Streamer<'_, TransducerModel>, done: bool| {
        let line = json!({
            "clock_ms": s.clock() as u64 * frame_ms,
            "committed": s.committed(),
            "provisional": s.provisional(),
            "done": done,
        });
        println!("{line}");
    };
    while t < utt.len() && !s.is_done() {
        let n = hop.min(utt.len() - t);
        s.push(&utt.frames.slice_rows(t, n))?;
        t += n;
        while let Some(out) = s.poll()? {
            print(&s, out.done);
        }
    }
    if !s.is_done() {
        s.close();
        while let Some(out) = s.poll()? {
            print(&s, out.done);
        }
    }
    let transcript = s.finalize()?;
    eprintln!("reference  {:?}", utt.transcript);
    eprintln!("transcript {transcript:?}");
    Ok(())
}

fn experiment(a: Experiment) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let base = a.config.parent().map(PathBuf::from).unwrap_or_default();
    let cfg = parse_experiment(&text, &base)?;
    let csv = write_csv(&run_experiment(&cfg)?);
    match a.out {
        Some(p) => std::fs::write(&p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Stream(a) => stream(a),
        Command::Experiment(a) => experiment(a),
    }
}
