mod common;

use mlstream::eval::error_rate;
use mlstream::synth::{decode_corpus, encode_corpus, generate_corpus, prototypes, read_corpus, write_corpus, Corpus, CorpusSpec};
use mlstream::{Error, Tensor, Token};
use proptest::prelude::*;

fn small(noise_std: f64, seed: u64) -> CorpusSpec {
    CorpusSpec { noise_std, train: 60, dev: 20, test: 20, seed, ..CorpusSpec::default() }
}

/// Class of the nearest prototype row; silence is row 0.
fn nearest(protos: &Tensor, frame: &[f64]) -> Token {
    let dist = |k: usize| protos.row(k).iter().zip(frame).map(|(p, x)| (p - x) * (p - x)).sum::<f64>();
    (0..protos.rows()).filter(|&k| k != 1).min_by(|&a, &b| dist(a).total_cmp(&dist(b))).unwrap()
}

/// Frame-wise nearest-prototype recognizer: runs of one class become
/// `round(len / fpt)` copies of it.
fn oracle_decode(protos: &Tensor, frames: &Tensor, fpt: usize) -> Vec<Token> {
    let classes: Vec<Token> = (0..frames.rows()).map(|t| nearest(protos, frames.row(t))).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < classes.len() {
        let mut j = i;
        while j < classes.len() && classes[j] == classes[i] {
            j += 1;
        }
        if classes[i] != 0 {
            let copies = ((j - i) as f64 / fpt as f64).round().max(1.0) as usize;
            out.extend(std::iter::repeat(classes[i]).take(copies));
        }
        i = j;
    }
    out
}

fn oracle_error(spec: &CorpusSpec) -> f64 {
    let corpus = generate_corpus(spec).unwrap();
    let protos = prototypes(spec).unwrap();
    let (mut errs, mut len) = (0, 0);
    for u in corpus.dev.iter().chain(&corpus.test) {
        let (_, c) = error_rate(&oracle_decode(&protos, &u.frames, spec.frames_per_token), &u.transcript);
        errs += c.distance();
        len += c.reference_len;
    }
    100.0 * errs as f64 / len as f64
}

fn frame_errors(spec: &CorpusSpec) -> usize {
    let corpus = generate_corpus(spec).unwrap();
    let protos = prototypes(spec).unwrap();
    let fpt = spec.frames_per_token;
    let mut wrong = 0;
    for u in &corpus.dev {
        let clean = {
            // the lead is the number of leading frames before the first token
            let t = u.len();
            let lead = t - fpt * (u.transcript.len() + 1);
            let mut c = vec![0; t];
            for (i, &tok) in u.transcript.iter().enumerate() {
                c[lead + i * fpt..lead + (i + 1) * fpt].fill(tok);
            }
            c
        };
        wrong += (0..u.len()).filter(|&t| nearest(&protos, u.frames.row(t)) != clean[t]).count();
    }
    wrong
}

#[test]
fn noiseless_corpus_is_perfectly_decodable() {
    assert_eq!(oracle_error(&small(0.0, 3)), 0.0);
    let one = CorpusSpec { frames_per_token: 1, ..small(0.0, 4) };
    assert_eq!(oracle_error(&one), 0.0);
    let c = generate_corpus(&one).unwrap();
    let protos = prototypes(&one).unwrap();
    for u in &c.train {
        for (i, &tok) in u.transcript.iter().enumerate() {
            assert_eq!(u.frames.row(i), protos.row(tok));
        }
    }
}

#[test]
fn heavy_noise_defeats_the_oracle() {
    // about five times the typical prototype norm of √8
    assert!(oracle_error(&small(15.0, 3)) > 50.0);
}

#[test]
fn utterance_shape_follows_the_transcript() {
    let spec = small(0.5, 4);
    let c = generate_corpus(&spec).unwrap();
    assert_eq!((c.train.len(), c.dev.len(), c.test.len()), (60, 20, 20));
    for u in c.train.iter().chain(&c.dev).chain(&c.test) {
        let n = u.transcript.len();
        assert!((3..=8).contains(&n));
        assert!(u.transcript.iter().all(|&t| (2..16).contains(&t)));
        let extra = u.len() - 4 * (n + 1);
        assert!(extra < 4);
        assert_eq!(u.frames.cols(), 8);
    }
}

#[test]
fn splits_do_not_share_utterances() {
    let spec = CorpusSpec { vocab_size: 4, min_tokens: 1, max_tokens: 3, train: 40, dev: 10, test: 10, ..small(0.0, 5) };
    let c = generate_corpus(&spec).unwrap();
    let key = |u: &mlstream::synth::Utterance| (u.transcript.clone(), u.len());
    let train: Vec<_> = c.train.iter().map(key).collect();
    for u in c.dev.iter().chain(&c.test) {
        assert!(!train.contains(&key(u)));
    }
    let tiny = CorpusSpec { vocab_size: 3, min_tokens: 1, max_tokens: 1, frames_per_token: 1, train: 2, dev: 1, test: 0, ..small(0.0, 5) };
    assert!(matches!(generate_corpus(&tiny), Err(Error::Contract(_))));
}

#[test]
fn generation_is_deterministic_per_seed() {
    let a = generate_corpus(&small(1.0, 9)).unwrap();
    let b = generate_corpus(&small(1.0, 9)).unwrap();
    assert_eq!(encode_corpus(&a), encode_corpus(&b));
    let c = generate_corpus(&small(1.0, 10)).unwrap();
    assert_ne!(encode_corpus(&a), encode_corpus(&c));
}

#[test]
fn invalid_specs_are_rejected() {
    for bad in [
        CorpusSpec { vocab_size: 2, ..small(1.0, 1) },
        CorpusSpec { noise_std: -1.0, ..small(1.0, 1) },
        CorpusSpec { noise_std: f64::NAN, ..small(1.0, 1) },
        CorpusSpec { frames_per_token: 0, ..small(1.0, 1) },
        CorpusSpec { min_tokens: 5, max_tokens: 4, ..small(1.0, 1) },
    ] {
        assert!(generate_corpus(&bad).is_err(), "{bad:?}");
    }
}

#[test]
fn file_round_trip_is_exact() {
    let c = generate_corpus(&small(1.0, 11)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.txt");
    write_corpus(&c, &path).unwrap();
    let back = read_corpus(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(std::fs::read_to_string(&path).unwrap(), encode_corpus(&back));
}

#[test]
fn empty_corpus_round_trips() {
    let c = Corpus { vocab_size: 5, d_feat: 2, train: vec![], dev: vec![], test: vec![] };
    let text = encode_corpus(&c);
    assert_eq!(text, "MLSCORPUS v1 V=5 d_feat=2 train=0 dev=0 test=0\n");
    assert_eq!(decode_corpus(&text).unwrap(), c);
}

#[test]
fn damaged_files_are_rejected() {
    let text = encode_corpus(&generate_corpus(&small(1.0, 12)).unwrap());
    let lines: Vec<&str> = text.lines().collect();
    let cut = lines[..lines.len() - 1].join("\n") + "\n";
    assert!(matches!(decode_corpus(&cut), Err(Error::Parse { .. })));
    assert!(decode_corpus(text.trim_end_matches('\n')).is_err());
    assert!(decode_corpus(&text.replacen("MLSCORPUS v1", "MLSCORPUS v2", 1)).is_err());
    let mut bad_hex = lines.clone();
    let rec = bad_hex[3].replacen(' ', " x", 2);
    bad_hex[3] = &rec;
    assert!(decode_corpus(&(bad_hex.join("\n") + "\n")).is_err());
    assert!(decode_corpus(&(text.clone() + "extra\n")).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// The same draws are scaled by the noise level, so a frame the oracle
    /// misclassifies stays misclassified under more noise.
    #[test]
    fn oracle_frame_errors_grow_with_noise(seed in 0u64..1000, lo in 0.05f64..2.0, step in 0.0f64..2.0) {
        let a = frame_errors(&small(lo, seed));
        let b = frame_errors(&small(lo + step, seed));
        prop_assert!(a <= b, "{a} > {b}");
    }

    #[test]
    fn any_small_corpus_round_trips(seed in 0u64..1000, noise in 0.0f64..2.0, d in 1usize..4) {
        let spec = CorpusSpec { d_feat: d, train: 5, dev: 2, test: 2, noise_std: noise, seed, ..CorpusSpec::default() };
        let c = generate_corpus(&spec).unwrap();
        prop_assert_eq!(decode_corpus(&encode_corpus(&c)).unwrap(), c);
    }
}
