//! Segmentation of a frame stream into history/target/look-ahead blocks.
//!
//! Block `b` (1-based) covers absolute frames `[b·Nc − Nl − Nc, b·Nc + Nr)`.
//! Its target range is `[(b−1)·Nc, b·Nc)`, so consecutive blocks hop by `Nc`
//! and their target ranges tile the stream. Positions outside `[0, T)` are
//! zero-filled and flagged invalid; they are hidden from attention.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::attention::AttentionMask;
use crate::error::{contract, Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_FRAME_MS: u32 = 32;

/// Block geometry `Nl-Nc-Nr` plus the frame period.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockSpec {
    pub n_left: usize,
    pub n_center: usize,
    pub n_right: usize,
    pub frame_ms: u32,
}

impl BlockSpec {
    pub fn new(n_left: usize, n_center: usize, n_right: usize) -> Result<Self> {
        if n_center == 0 {
            return Err(contract("block target size must be at least one frame"));
        }
        Ok(Self { n_left, n_center, n_right, frame_ms: DEFAULT_FRAME_MS })
    }

    pub fn with_frame_ms(mut self, frame_ms: u32) -> Self {
        self.frame_ms = frame_ms;
        self
    }

    pub fn block_len(&self) -> usize {
        self.n_left + self.n_center + self.n_right
    }

    /// Number of blocks whose target ranges tile a stream of `t` frames.
    pub fn block_count(&self, t: usize) -> usize {
        t.div_ceil(self.n_center)
    }

    /// Absolute index of position 0 of block `b`.
    pub fn block_start(&self, b: isize) -> isize {
        (b - 1) * self.n_center as isize - self.n_left as isize
    }

    /// Unclipped absolute target range of block `b`.
    pub fn target_span(&self, b: isize) -> (isize, isize) {
        let c = self.n_center as isize;
        ((b - 1) * c, b * c)
    }

    /// Unclipped absolute look-ahead range of block `b`.
    pub fn lookahead_span(&self, b: isize) -> (isize, isize) {
        let c = self.n_center as isize;
        (b * c, b * c + self.n_right as isize)
    }

    /// Number of zero-look-ahead auxiliary views, `Nr / Nc`.
    pub fn aux_count(&self) -> usize {
        self.n_right / self.n_center
    }

    /// Checks the geometry constraints of a multi-latency primary encoder.
    pub fn check_multi_latency(&self) -> Result<()> {
        if self.n_right < self.n_center || self.n_right % self.n_center != 0 {
            return Err(contract(format!(
                "multi-latency primary spec {self} needs a look-ahead that is a positive multiple of the target size"
            )));
        }
        Ok(())
    }

    /// The same block with its last `k·Nc` look-ahead frames removed.
    pub fn truncated(&self, k: usize) -> Result<Self> {
        if k > self.aux_count() {
            return Err(contract(format!("cannot drop {k} target hops from {self}")));
        }
        Ok(Self { n_right: self.n_right - k * self.n_center, ..*self })
    }
}

impl fmt::Display for BlockSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}-{}", self.n_left, self.n_center, self.n_right)
    }
}

impl FromStr for BlockSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split('-').collect();
        let bad = || Error::Config(format!("block spec `{s}` is not of the form Nl-Nc-Nr"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        Self::new(n[0], n[1], n[2]).map_err(|_| bad())
    }
}

/// Structural look-ahead delay of a block geometry.
pub fn delay_ms(spec: &BlockSpec) -> u32 {
    spec.n_right as u32 * spec.frame_ms
}

/// Mask over the `Nl+Nc+Nr` block positions that hides the last `k·Nc`
/// positions from every query. `k = 0` permits everything.
pub fn suffix_mask(spec: &BlockSpec, k: usize) -> Result<AttentionMask> {
    if k > spec.aux_count() {
        return Err(contract(format!(
            "suffix mask depth {k} exceeds {} for spec {spec}",
            spec.aux_count()
        )));
    }
    let len = spec.block_len();
    let cut = len - k * spec.n_center;
    Ok(AttentionMask::without_keys(len, |j| j >= cut))
}

/// Random access to frames that have arrived so far.
pub trait FrameSource {
    fn d_feat(&self) -> usize;
    /// Number of frames that can be read, i.e. indices `[0, len)`.
    fn len(&self) -> usize;
    fn frame(&self, idx: usize) -> &[f64];

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl FrameSource for Tensor {
    fn d_feat(&self) -> usize {
        self.cols()
    }

    fn len(&self) -> usize {
        self.rows()
    }

    fn frame(&self, idx: usize) -> &[f64] {
        self.row(idx)
    }
}

/// One materialized block.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    /// Block ordinal. Values below 1 only occur for the virtual blocks used to
    /// recognize the start of a stream through look-ahead positions.
    pub index: isize,
    pub spec: BlockSpec,
    /// `[block_len × d_feat]`, zero rows where `valid` is false.
    pub frames: Tensor,
    pub valid: Vec<bool>,
    /// Absolute frame index of position 0.
    pub start: isize,
    /// Target frames inside the stream.
    pub center_range: Range<usize>,
    pub is_last: bool,
    /// Frames readable from the source when the block was built.
    pub stream_len: usize,
}

impl Block {
    /// Reads block `b` of `spec` from `source`; indices outside `[0, len)`
    /// become zero padding.
    pub fn materialize(source: &(impl FrameSource + ?Sized), spec: &BlockSpec, b: isize) -> Self {
        let d = source.d_feat();
        let len = spec.block_len();
        let start = spec.block_start(b);
        let n = source.len() as isize;
        let mut data = vec![0.0; len * d];
        let mut valid = vec![false; len];
        for p in 0..len {
            let abs = start + p as isize;
            if abs >= 0 && abs < n {
                data[p * d..(p + 1) * d].copy_from_slice(source.frame(abs as usize));
                valid[p] = true;
            }
        }
        let (c0, c1) = spec.target_span(b);
        let center_range = clip(c0, c1, n);
        let is_last = c1 >= n;
        Self {
            index: b,
            spec: *spec,
            frames: Tensor::matrix(len, d, data).expect("block shape"),
            valid,
            start,
            center_range,
            is_last,
            stream_len: n as usize,
        }
    }

    pub fn len(&self) -> usize {
        self.valid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valid.is_empty()
    }

    /// Absolute look-ahead frames inside the stream.
    pub fn lookahead_range(&self) -> Range<usize> {
        let (a, b) = self.spec.lookahead_span(self.index);
        clip(a, b, self.stream_len as isize)
    }

    /// Block positions holding the in-stream target frames.
    pub fn target_positions(&self) -> Range<usize> {
        self.positions(&self.center_range)
    }

    pub fn lookahead_positions(&self) -> Range<usize> {
        self.positions(&self.lookahead_range())
    }

    fn positions(&self, abs: &Range<usize>) -> Range<usize> {
        if abs.is_empty() {
            return 0..0;
        }
        let a = (abs.start as isize - self.start) as usize;
        a..a + abs.len()
    }

    /// Mask over the context slot plus every block position: padding is
    /// hidden, and so are the last `k·Nc` positions.
    pub fn attention_mask(&self, suffix_k: usize) -> Result<AttentionMask> {
        let mut m = suffix_mask(&self.spec, suffix_k)?;
        for (j, _) in self.valid.iter().enumerate().filter(|(_, v)| !**v) {
            m.forbid_key(j);
        }
        Ok(m.with_leading_slots(1))
    }
}

fn clip(a: isize, b: isize, n: isize) -> Range<usize> {
    let lo = a.clamp(0, n);
    let hi = b.clamp(lo, n);
    lo as usize..hi as usize
}

/// Splits `[T × d]` frames into blocks whose target ranges tile `[0, T)`.
pub fn segment(frames: &Tensor, spec: &BlockSpec) -> Result<Vec<Block>> {
    if frames.shape().len() != 2 {
        return Err(Error::Shape(format!("frames must be [T × d], got {:?}", frames.shape())));
    }
    let t = frames.rows();
    if t == 0 {
        return Err(Error::EmptyInput("cannot segment an empty frame stream".into()));
    }
    Ok((1..=spec.block_count(t) as isize)
        .map(|b| Block::materialize(frames, spec, b))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(t: usize, d: usize) -> Tensor {
        Tensor::matrix(t, d, (0..t * d).map(|i| (i / d) as f64 + 1.0).collect()).unwrap()
    }

    fn spec(s: &str) -> BlockSpec {
        s.parse().unwrap()
    }

    #[test]
    fn no_context_tiles_exactly() {
        let blocks = segment(&ramp(8, 2), &spec("0-4-0")).unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].center_range, 0..4);
        assert_eq!(blocks[1].center_range, 4..8);
        assert!(blocks[1].is_last && !blocks[0].is_last);
        assert!(blocks.iter().all(|b| b.valid.iter().all(|&v| v)));
    }

    #[test]
    fn history_is_padded_in_first_block() {
        let blocks = segment(&ramp(12, 1), &spec("8-4-4")).unwrap();
        assert_eq!(blocks.len(), 3);
        let b1 = &blocks[0];
        assert_eq!(b1.start, -8);
        assert_eq!(b1.center_range, 0..4);
        assert_eq!(b1.valid, [vec![false; 8], vec![true; 8]].concat());
        assert!(b1.frames.data()[..8].iter().all(|&x| x == 0.0));
        // target then look-ahead frames 0..8 hold values 1..=8
        assert_eq!(&b1.frames.data()[8..], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        // last block: history 0..8, target 8..12, look-ahead past the end
        let b3 = &blocks[2];
        assert_eq!(b3.start, 0);
        assert_eq!(b3.center_range, 8..12);
        assert_eq!(b3.valid, [vec![true; 12], vec![false; 4]].concat());
        assert_eq!(b3.lookahead_range(), 12..12);
    }

    #[test]
    fn ragged_tail_is_short_and_padded() {
        let blocks = segment(&ramp(6, 1), &spec("8-4-0")).unwrap();
        assert_eq!(blocks.len(), 2);
        let b2 = &blocks[1];
        assert_eq!(b2.center_range, 4..6);
        assert_eq!(b2.start, -4);
        assert_eq!(b2.valid, [vec![false; 4], vec![true; 6], vec![false; 2]].concat());
        assert_eq!(b2.target_positions(), 8..10);
    }

    #[test]
    fn empty_stream_is_rejected() {
        let err = segment(&Tensor::zeros(vec![0, 3]), &spec("8-4-4")).unwrap_err();
        assert!(matches!(err, Error::EmptyInput(_)));
    }

    #[test]
    fn delays_follow_lookahead() {
        assert_eq!(delay_ms(&spec("8-4-4")), 128);
        assert_eq!(delay_ms(&spec("8-4-8")), 256);
        assert_eq!(delay_ms(&spec("8-4-0")), 0);
        assert_eq!(delay_ms(&spec("8-4-4").with_frame_ms(10)), 40);
    }

    #[test]
    fn suffix_masks() {
        let s = spec("8-4-8");
        assert_eq!(suffix_mask(&s, 0).unwrap().visible_keys(), 20);
        let m1 = suffix_mask(&s, 1).unwrap();
        assert_eq!(m1.visible_keys(), 16);
        assert!(!m1.allows(0, 16) && m1.allows(0, 15));
        let m2 = suffix_mask(&s, 2).unwrap();
        assert_eq!(m2.visible_keys(), 12);
        assert!(m2.allows(5, 11) && !m2.allows(5, 12));
        assert!(matches!(suffix_mask(&s, 3), Err(Error::Contract(_))));
    }

    #[test]
    fn spec_parsing() {
        let s = spec("8-4-4");
        assert_eq!((s.n_left, s.n_center, s.n_right, s.frame_ms), (8, 4, 4, 32));
        assert_eq!(s.to_string(), "8-4-4");
        assert!("8-0-4".parse::<BlockSpec>().is_err());
        assert!("8-4".parse::<BlockSpec>().is_err());
        assert!(spec("8-4-8").check_multi_latency().is_ok());
        assert!(spec("8-4-6").check_multi_latency().is_err());
        assert!(spec("8-4-0").check_multi_latency().is_err());
    }

    #[test]
    fn mask_hides_padding_and_keeps_context_slot() {
        let blocks = segment(&ramp(5, 1), &spec("2-2-2")).unwrap();
        let m = blocks[0].attention_mask(0).unwrap();
        assert_eq!(m.rows(), 7);
        assert!(m.allows(3, 0));
        assert!(!m.allows(3, 1) && !m.allows(3, 2));
        assert!(m.allows(0, 3));
    }

    proptest! {
        #[test]
        fn centers_tile_the_stream(t in 1usize..200, l in 0usize..10, c in 1usize..8, r in 0usize..10) {
            let s = BlockSpec::new(l, c, r).unwrap();
            let blocks = segment(&Tensor::zeros(vec![t, 1]), &s).unwrap();
            let mut next = 0;
            for b in &blocks {
                prop_assert_eq!(b.center_range.start, next);
                prop_assert!(!b.center_range.is_empty());
                next = b.center_range.end;
            }
            prop_assert_eq!(next, t);
            prop_assert!(blocks.last().unwrap().is_last);
            prop_assert_eq!(blocks.iter().filter(|b| b.is_last).count(), 1);
        }

        #[test]
        fn shifting_by_one_hop_advances_one_block(t in 1usize..60, l in 0usize..9, c in 1usize..6, r in 0usize..9) {
            let s = BlockSpec::new(l, c, r).unwrap();
            let x = ramp(t + c, 1);
            // `shifted` drops the first hop, so its block b should see x's block b+1
            let shifted = x.slice_rows(c, t);
            let a = segment(&x, &s).unwrap();
            let b = segment(&shifted, &s).unwrap();
            for (i, blk) in b.iter().enumerate() {
                let orig = &a[i + 1];
                for p in 0..s.block_len() {
                    if blk.valid[p] && orig.valid[p] {
                        prop_assert_eq!(blk.frames.row(p), orig.frames.row(p));
                    }
                }
            }
        }

        #[test]
        fn delay_is_linear_in_lookahead(r in 0usize..64, ms in 1u32..100) {
            let s = BlockSpec::new(8, 4, r).unwrap().with_frame_ms(ms);
            prop_assert_eq!(delay_ms(&s), r as u32 * ms);
            prop_assert_eq!(delay_ms(&s) == 0, r == 0);
        }
    }
}
