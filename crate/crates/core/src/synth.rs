//! Synthetic streaming corpora.
//!
//! Every content token owns a fixed random prototype vector. An utterance is
//! a short stretch of silence (zero vectors), each transcript token's
//! prototype repeated `frames_per_token` times, and `frames_per_token` frames
//! of trailing silence, all with white Gaussian noise added.
//!
//! # File format
//!
//! Plain text, one line per item, `\n` terminated:
//!
//! ```text
//! MLSCORPUS v1 V=<vocab> d_feat=<d> train=<n> dev=<n> test=<n>
//! <T> <U> <frames> <tokens>
//! ...
//! ```
//!
//! Records follow in train, dev, test order. `<frames>` is the lowercase hex
//! of the `T·d_feat` little-endian f64 values in row-major order, `<tokens>`
//! the comma-separated decimal ids; either is `-` when empty.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;
use crate::transducer::{Token, Vocabulary};

const MAGIC: &str = "MLSCORPUS v1";

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub vocab_size: usize,
    pub frames_per_token: usize,
    pub d_feat: usize,
    pub noise_std: f64,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            vocab_size: 16,
            frames_per_token: 4,
            d_feat: 8,
            noise_std: 1.0,
            train: 2000,
            dev: 200,
            test: 200,
            min_tokens: 3,
            max_tokens: 8,
            seed: 1,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<Vocabulary> {
        let vocab = Vocabulary::new(self.vocab_size)?;
        if self.frames_per_token == 0 || self.d_feat == 0 {
            return Err(contract("frames_per_token and d_feat must be at least one"));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(contract(format!("noise_std {} is not a finite nonnegative value", self.noise_std)));
        }
        if self.min_tokens > self.max_tokens {
            return Err(contract("min_tokens exceeds max_tokens"));
        }
        Ok(vocab)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    /// `[T × d_feat]`.
    pub frames: Tensor,
    /// Content tokens only; no blank, no eos.
    pub transcript: Vec<Token>,
}

impl Utterance {
    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub d_feat: usize,
    pub train: Vec<Utterance>,
    pub dev: Vec<Utterance>,
    pub test: Vec<Utterance>,
}

/// The generator's token prototypes, `[V × d_feat]`; rows 0 and 1 are zero.
pub fn prototypes(spec: &CorpusSpec) -> Result<Tensor> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(draw_prototypes(spec, &mut rng))
}

fn draw_prototypes(spec: &CorpusSpec, rng: &mut ChaCha8Rng) -> Tensor {
    let mut p = Tensor::zeros(vec![spec.vocab_size, spec.d_feat]);
    for k in 2..spec.vocab_size {
        for x in p.row_mut(k) {
            *x = rng.sample(StandardNormal);
        }
    }
    p
}

pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    let vocab = spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let protos = draw_prototypes(spec, &mut rng);
    let fpt = spec.frames_per_token;
    let d = spec.d_feat;
    // (split, transcript, lead) triples already drawn, to keep splits disjoint
    let mut seen: HashSet<(usize, Vec<Token>, usize)> = HashSet::new();
    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    for (split, n) in [spec.train, spec.dev, spec.test].into_iter().enumerate() {
        for _ in 0..n {
            let mut attempts = 0;
            let (transcript, lead) = loop {
                let u = rng.gen_range(spec.min_tokens..=spec.max_tokens);
                let tokens: Vec<Token> = (0..u).map(|_| rng.gen_range(vocab.content_tokens())).collect();
                let lead = rng.gen_range(0..fpt);
                let clash = (0..3).any(|s| s != split && seen.contains(&(s, tokens.clone(), lead)));
                if !clash {
                    break (tokens, lead);
                }
                attempts += 1;
                if attempts > 1000 {
                    return Err(contract("spec too small to draw disjoint splits"));
                }
            };
            seen.insert((split, transcript.clone(), lead));
            let t = lead + fpt * (transcript.len() + 1);
            let mut data = vec![0.0; t * d];
            for (i, &tok) in transcript.iter().enumerate() {
                for f in 0..fpt {
                    let row = lead + i * fpt + f;
                    data[row * d..(row + 1) * d].copy_from_slice(protos.row(tok));
                }
            }
            if spec.noise_std > 0.0 {
                for x in &mut data {
                    let z: f64 = rng.sample(StandardNormal);
                    *x += spec.noise_std * z;
                }
            }
            splits[split].push(Utterance { frames: Tensor::matrix(t, d, data)?, transcript });
        }
    }
    let [train, dev, test] = splits;
    Ok(Corpus { vocab_size: spec.vocab_size, d_feat: d, train, dev, test })
}

pub fn encode_corpus(corpus: &Corpus) -> String {
    let mut out = format!(
        "{MAGIC} V={} d_feat={} train={} dev={} test={}\n",
        corpus.vocab_size,
        corpus.d_feat,
        corpus.train.len(),
        corpus.dev.len(),
        corpus.test.len()
    );
    for u in corpus.train.iter().chain(&corpus.dev).chain(&corpus.test) {
        let bytes: Vec<u8> = u.frames.data().iter().flat_map(|x| x.to_le_bytes()).collect();
        let frames = if bytes.is_empty() { "-".to_owned() } else { hex::encode(bytes) };
        let tokens = if u.transcript.is_empty() {
            "-".to_owned()
        } else {
            u.transcript.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")
        };
        let _ = writeln!(out, "{} {} {frames} {tokens}", u.len(), u.transcript.len());
    }
    out
}

fn header_field(field: Option<&str>, key: &str) -> Result<usize> {
    let bad = || Error::Parse { record: 0, message: format!("header field `{key}` missing or malformed") };
    field
        .and_then(|f| f.strip_prefix(key))
        .and_then(|f| f.strip_prefix('='))
        .and_then(|v| v.parse().ok())
        .ok_or_else(bad)
}

/// Parses a corpus file. Parse errors report the 1-based record index, with
/// 0 meaning the header.
pub fn decode_corpus(text: &str) -> Result<Corpus> {
    let mut lines = text.split_terminator('\n');
    let header = lines.next().unwrap_or("");
    let rest = header
        .strip_prefix(MAGIC)
        .ok_or_else(|| Error::Parse { record: 0, message: "missing corpus magic".into() })?;
    let mut f = rest.split_whitespace();
    let vocab_size = header_field(f.next(), "V")?;
    let d_feat = header_field(f.next(), "d_feat")?;
    let counts = [
        header_field(f.next(), "train")?,
        header_field(f.next(), "dev")?,
        header_field(f.next(), "test")?,
    ];
    if f.next().is_some() {
        return Err(Error::Parse { record: 0, message: "trailing header fields".into() });
    }
    let vocab = Vocabulary::new(vocab_size).map_err(|e| Error::Parse { record: 0, message: e.to_string() })?;
    if d_feat == 0 {
        return Err(Error::Parse { record: 0, message: "d_feat must be positive".into() });
    }
    let mut record = 0;
    let mut splits: [Vec<Utterance>; 3] = Default::default();
    for (split, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            record += 1;
            let line = lines
                .next()
                .ok_or_else(|| Error::Parse { record, message: "record missing (truncated file)".into() })?;
            splits[split].push(parse_record(line, d_feat, &vocab).map_err(|message| Error::Parse { record, message })?);
        }
    }
    if lines.next().is_some() {
        return Err(Error::Parse { record: record + 1, message: "more records than the header declares".into() });
    }
    if !text.is_empty() && !text.ends_with('\n') {
        return Err(Error::Parse { record, message: "missing final newline (truncated file)".into() });
    }
    let [train, dev, test] = splits;
    Ok(Corpus { vocab_size, d_feat, train, dev, test })
}

fn parse_record(line: &str, d: usize, vocab: &Vocabulary) -> std::result::Result<Utterance, String> {
    let parts: Vec<&str> = line.split(' ').collect();
    let [t, u, frames, tokens] = parts[..] else {
        return Err(format!("expected 4 fields, found {}", parts.len()));
    };
    let t: usize = t.parse().map_err(|_| format!("bad frame count `{t}`"))?;
    let u: usize = u.parse().map_err(|_| format!("bad token count `{u}`"))?;
    let bytes = match frames {
        "-" => Vec::new(),
        h => hex::decode(h).map_err(|e| format!("bad frame hex: {e}"))?,
    };
    if bytes.len() != t * d * 8 || (t > 0) == (frames == "-") {
        return Err(format!("expected {} frame bytes, found {}", t * d * 8, bytes.len()));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let transcript: Vec<Token> = match tokens {
        "-" => Vec::new(),
        s => s
            .split(',')
            .map(|x| x.parse().map_err(|_| format!("bad token `{x}`")))
            .collect::<std::result::Result<_, _>>()?,
    };
    if transcript.len() != u || (u > 0) == (tokens == "-") {
        return Err(format!("expected {u} tokens, found {}", transcript.len()));
    }
    vocab.check_sequence(&transcript).map_err(|e| e.to_string())?;
    let frames = Tensor::matrix(t, d, data).map_err(|e| e.to_string())?;
    Ok(Utterance { frames, transcript })
}

pub fn write_corpus(corpus: &Corpus, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_corpus(corpus))?;
    Ok(())
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    decode_corpus(&std::fs::read_to_string(path)?)
}
