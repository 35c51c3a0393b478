//! Token ids plus their modality segmentation.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Modality region of a token span.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Region {
    System,
    Audio,
    Instruction,
    Generated,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::System, Region::Audio, Region::Instruction, Region::Generated];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::System => "system",
            Region::Audio => "audio",
            Region::Instruction => "instruction",
            Region::Generated => "generated",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Region::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::Segmentation(format!("unknown region {s:?}")))
    }
}

/// Contiguous run of positions `[start, end_inclusive]` tagged with a region.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub region: Region,
    pub start: usize,
    pub end_inclusive: usize,
}

impl Segment {
    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end_inclusive
    }
}

/// Inclusive span of key positions targeted by an intervention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end_inclusive: usize,
}

impl Span {
    pub fn contains(&self, pos: usize) -> bool {
        self.start <= pos && pos <= self.end_inclusive
    }
}

/// Checks that segments are non-empty, ordered, contiguous from 0, use
/// each region at most once and keep `Generated` last. Returns the covered length.
pub fn validate_segments(segments: &[Segment]) -> Result<usize> {
    let mut next = 0;
    let mut seen = [false; 4];
    for (i, s) in segments.iter().enumerate() {
        if s.end_inclusive < s.start {
            return Err(Error::Segmentation(format!(
                "segment {i} ({}) ends at {} before it starts at {}",
                s.region, s.end_inclusive, s.start
            )));
        }
        if s.start != next {
            return Err(Error::Segmentation(format!(
                "segment {i} ({}) starts at {}, expected {next}",
                s.region, s.start
            )));
        }
        if core::mem::replace(&mut seen[s.region.index()], true) {
            return Err(Error::Segmentation(format!("region {} appears more than once", s.region)));
        }
        if seen[Region::Generated.index()] && s.region != Region::Generated {
            return Err(Error::Segmentation(format!("region {} follows generated tokens", s.region)));
        }
        next = s.end_inclusive + 1;
    }
    Ok(next)
}

/// Token ids with an ordered, gap-free region segmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    segments: Vec<Segment>,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, segments: Vec<Segment>) -> Result<Self> {
        let covered = validate_segments(&segments)?;
        if covered != tokens.len() {
            return Err(Error::Segmentation(format!(
                "segments cover {covered} positions, sequence has {}",
                tokens.len()
            )));
        }
        Ok(Self { tokens, segments })
    }

    /// Concatenates the prompt regions in order; empty regions get no segment.
    pub fn from_regions(system: &[u32], audio: &[u32], instruction: &[u32]) -> Self {
        let mut seq = Self { tokens: Vec::new(), segments: Vec::new() };
        for (region, ids) in [(Region::System, system), (Region::Audio, audio), (Region::Instruction, instruction)] {
            seq.extend_region(region, ids);
        }
        seq
    }

    fn extend_region(&mut self, region: Region, ids: &[u32]) {
        if ids.is_empty() {
            return;
        }
        let start = self.tokens.len();
        self.tokens.extend_from_slice(ids);
        match self.segments.last_mut() {
            Some(last) if last.region == region => last.end_inclusive = self.tokens.len() - 1,
            _ => self.segments.push(Segment { region, start, end_inclusive: self.tokens.len() - 1 }),
        }
    }

    /// Appends a generated token, growing or opening the `Generated` segment.
    pub fn push_generated(&mut self, token: u32) {
        self.extend_region(Region::Generated, &[token]);
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn region_span(&self, region: Region) -> Option<Span> {
        self.segments
            .iter()
            .find(|s| s.region == region)
            .map(|s| Span { start: s.start, end_inclusive: s.end_inclusive })
    }

    /// `[a_s, a_e]`, the audio token positions.
    pub fn audio_span(&self) -> Option<Span> {
        self.region_span(Region::Audio)
    }

    pub fn generated(&self) -> &[u32] {
        match self.region_span(Region::Generated) {
            Some(s) => &self.tokens[s.start..=s.end_inclusive],
            None => &[],
        }
    }

    pub fn region_of(&self, pos: usize) -> Option<Region> {
        self.segments.iter().find(|s| s.contains(pos)).map(|s| s.region)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn from_regions_builds_contiguous_segments() {
        let seq = TokenSequence::from_regions(&[1, 2], &[5, 6, 7], &[9]);
        assert_eq!(seq.len(), 6);
        assert_eq!(seq.audio_span(), Some(Span { start: 2, end_inclusive: 4 }));
        assert_eq!(seq.region_of(5), Some(Region::Instruction));
        assert_eq!(validate_segments(seq.segments()), Ok(6));
    }

    #[test]
    fn generated_tokens_extend_one_segment() {
        let mut seq = TokenSequence::from_regions(&[1], &[2], &[3]);
        seq.push_generated(10);
        seq.push_generated(11);
        assert_eq!(seq.generated(), &[10, 11]);
        assert_eq!(seq.segments().len(), 4);
        assert_eq!(seq.region_span(Region::Generated), Some(Span { start: 3, end_inclusive: 4 }));
    }

    #[test]
    fn empty_audio_region_has_no_span() {
        let seq = TokenSequence::from_regions(&[1], &[], &[3]);
        assert_eq!(seq.audio_span(), None);
    }

    #[test]
    fn rejects_gaps_overlaps_and_bad_order() {
        let seg = |region, start, end_inclusive| Segment { region, start, end_inclusive };
        let gap = vec![seg(Region::System, 0, 1), seg(Region::Audio, 3, 4)];
        assert!(TokenSequence::new(vec![0; 5], gap).is_err());
        let overlap = vec![seg(Region::System, 0, 2), seg(Region::Audio, 2, 4)];
        assert!(TokenSequence::new(vec![0; 5], overlap).is_err());
        let dup = vec![seg(Region::Audio, 0, 1), seg(Region::Audio, 2, 4)];
        assert!(TokenSequence::new(vec![0; 5], dup).is_err());
        let after_gen = vec![seg(Region::Generated, 0, 1), seg(Region::Audio, 2, 4)];
        assert!(TokenSequence::new(vec![0; 5], after_gen).is_err());
        let short = vec![seg(Region::System, 0, 1)];
        assert!(TokenSequence::new(vec![0; 5], short).is_err());
    }

    #[test]
    fn region_names_round_trip() {
        for r in Region::ALL {
            assert_eq!(r.name().parse::<Region>(), Ok(r));
        }
        assert!("video".parse::<Region>().is_err());
    }
}
