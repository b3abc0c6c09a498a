//! Internet checksum (RFC 1071 / RFC 4443) over the IPv6 pseudo-header, the
//! substitution-class payload patterns used by the overlap models, and the two
//! checksum-preserving forgery techniques (word shuffle and delta compensation).
//!
//! Data is always summed as big-endian 16-bit words. Because the sum is
//! commutative, any permutation of those words leaves the checksum unchanged.

use std::fmt;
use std::net::Ipv6Addr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChecksumError {
    #[error("unknown payload pattern label {0:?}")]
    UnknownLabel(char),
    #[error("no compensation slot reserved in forged payload")]
    NoSlotReserved,
    #[error("compensation slot at {position} does not fit a {len}-byte payload")]
    SlotOutOfRange { position: usize, len: usize },
    #[error("compensation slot at odd offset {0}; slots must be 16-bit aligned")]
    SlotMisaligned(usize),
}

/// Virtual header prepended to upper-layer data for checksum purposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoHeader {
    pub src: Ipv6Addr,
    pub dst: Ipv6Addr,
    pub upper_layer_length: u32,
    pub next_header: u8,
}

impl PseudoHeader {
    pub fn new(src: Ipv6Addr, dst: Ipv6Addr, next_header: u8, upper_layer_length: usize) -> Self {
        PseudoHeader {
            src,
            dst,
            upper_layer_length: upper_layer_length as u32,
            next_header,
        }
    }

    /// All-zero addresses, length and protocol.
    pub fn zeroed() -> Self {
        PseudoHeader::new(Ipv6Addr::UNSPECIFIED, Ipv6Addr::UNSPECIFIED, 0, 0)
    }

    pub fn to_bytes(&self) -> [u8; 40] {
        let mut out = [0u8; 40];
        out[..16].copy_from_slice(&self.src.octets());
        out[16..32].copy_from_slice(&self.dst.octets());
        out[32..36].copy_from_slice(&self.upper_layer_length.to_be_bytes());
        out[39] = self.next_header;
        out
    }
}

/// Adds `data` as big-endian 16-bit words to a 32-bit accumulator. A trailing
/// odd byte is treated as if followed by a zero byte.
pub fn accumulate(data: &[u8], initial: u32) -> u32 {
    let mut sum = initial as u64;
    let mut words = data.chunks_exact(2);
    for w in &mut words {
        sum += u16::from_be_bytes([w[0], w[1]]) as u64;
    }
    if let [last] = words.remainder() {
        sum += (*last as u64) << 8;
    }
    fold64(sum)
}

fn fold64(mut sum: u64) -> u32 {
    while sum > 0xFFFF_FFFF {
        sum = (sum & 0xFFFF_FFFF) + (sum >> 32);
    }
    sum as u32
}

/// Folds a 32-bit accumulator into a 16-bit ones'-complement sum (not inverted).
pub fn fold(mut sum: u32) -> u16 {
    while sum >> 16 != 0 {
        sum = (sum & 0xFFFF) + (sum >> 16);
    }
    sum as u16
}

/// Ones'-complement 16-bit word sum of `data`.
pub fn word_sum(data: &[u8]) -> u16 {
    fold(accumulate(data, 0))
}

/// Upper-layer checksum of `data` under `pseudo`. The caller is expected to
/// have zeroed the checksum field inside `data`.
pub fn internet_checksum(pseudo: &PseudoHeader, data: &[u8]) -> u16 {
    let acc = accumulate(&pseudo.to_bytes(), 0);
    !fold(accumulate(data, acc))
}

/// True when `data`, with its checksum field filled in, sums to all ones.
pub fn verify(pseudo: &PseudoHeader, data: &[u8]) -> bool {
    internet_checksum(pseudo, data) == 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PatternLabel {
    A,
    B,
    C,
    D,
    E,
    F,
}

impl PatternLabel {
    pub const ALL: [PatternLabel; 6] = [
        PatternLabel::A,
        PatternLabel::B,
        PatternLabel::C,
        PatternLabel::D,
        PatternLabel::E,
        PatternLabel::F,
    ];

    pub fn from_char(c: char) -> Result<Self, ChecksumError> {
        Ok(match c.to_ascii_uppercase() {
            'A' => PatternLabel::A,
            'B' => PatternLabel::B,
            'C' => PatternLabel::C,
            'D' => PatternLabel::D,
            'E' => PatternLabel::E,
            'F' => PatternLabel::F,
            _ => return Err(ChecksumError::UnknownLabel(c)),
        })
    }

    pub fn as_char(self) -> char {
        match self {
            PatternLabel::A => 'A',
            PatternLabel::B => 'B',
            PatternLabel::C => 'C',
            PatternLabel::D => 'D',
            PatternLabel::E => 'E',
            PatternLabel::F => 'F',
        }
    }
}

impl fmt::Display for PatternLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

/// Which of the two pattern tables a packet draws from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    /// Parity for the `index`-th (zero-based) packet of a multi-packet test:
    /// packets 1, 3, 5 use the odd table, 2 and 4 the even one.
    pub fn for_packet(index: usize) -> Parity {
        if index.is_multiple_of(2) {
            Parity::Odd
        } else {
            Parity::Even
        }
    }
}

/// A 4-byte pattern (two 16-bit words) repeated to fill a fragment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PayloadPattern {
    pub label: PatternLabel,
    pub parity: Parity,
}

impl PayloadPattern {
    pub fn new(label: PatternLabel, parity: Parity) -> Self {
        PayloadPattern { label, parity }
    }

    pub fn bytes(&self) -> [u8; 4] {
        use PatternLabel::*;
        match (self.parity, self.label) {
            (Parity::Odd, A) => [0x11, 0x22, 0x33, 0x44],
            (Parity::Odd, B) => [0x11, 0x33, 0x22, 0x44],
            (Parity::Odd, C) => [0x22, 0x11, 0x33, 0x44],
            (Parity::Odd, D) => [0x22, 0x33, 0x11, 0x44],
            (Parity::Odd, E) => [0x33, 0x11, 0x22, 0x44],
            (Parity::Odd, F) => [0x33, 0x22, 0x11, 0x44],
            (Parity::Even, A) => [0x44, 0x11, 0x33, 0x22],
            (Parity::Even, B) => [0x44, 0x33, 0x11, 0x22],
            (Parity::Even, C) => [0x44, 0x33, 0x22, 0x11],
            (Parity::Even, D) => [0x11, 0x22, 0x44, 0x33],
            (Parity::Even, E) => [0x11, 0x33, 0x44, 0x22],
            (Parity::Even, F) => [0x22, 0x11, 0x44, 0x33],
        }
    }

    /// Pattern repeated over `units` 8-octet units.
    pub fn fill(&self, units: usize) -> Vec<u8> {
        let pattern = self.bytes();
        let mut out = Vec::with_capacity(units * 8);
        for _ in 0..units * 2 {
            out.extend_from_slice(&pattern);
        }
        out
    }
}

/// Pattern fill for a character label, e.g. `pattern_fill('A', Parity::Odd, 1)`.
pub fn pattern_fill(label: char, parity: Parity, units: usize) -> Result<Vec<u8>, ChecksumError> {
    Ok(PayloadPattern::new(PatternLabel::from_char(label)?, parity).fill(units))
}

/// Permutes the 16-bit groups of `payload` with a seeded RNG. The checksum of
/// the result equals that of the input. An odd trailing byte stays in place.
/// The output differs from the input whenever at least two distinct words exist.
pub fn checksum_preserving_shuffle(payload: &[u8], seed: u64) -> Vec<u8> {
    let mut words: Vec<[u8; 2]> = payload.chunks_exact(2).map(|w| [w[0], w[1]]).collect();
    let tail = payload.chunks_exact(2).remainder().to_vec();
    let original = words.clone();

    let distinct = words.iter().any(|w| *w != words[0]);
    if distinct {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..16 {
            words.shuffle(&mut rng);
            if words != original {
                break;
            }
        }
        if words == original {
            // Swap the first pair of unequal words.
            let j = words.iter().position(|w| *w != words[0]).unwrap_or(0);
            words.swap(0, j);
        }
    }

    let mut out: Vec<u8> = words.into_iter().flatten().collect();
    out.extend_from_slice(&tail);
    out
}

/// Returns the 16-bit word that, written big-endian at byte offset `slot` of
/// `forged`, makes the word sum of `forged` equal that of `original`.
///
/// The current content of the slot is ignored. In ones'-complement arithmetic
/// 0x0000 and 0xFFFF are interchangeable; 0x0000 is returned in that case.
pub fn checksum_compensate(original: &[u8], forged: &[u8], slot: Option<usize>) -> Result<u16, ChecksumError> {
    let slot = slot.ok_or(ChecksumError::NoSlotReserved)?;
    if slot % 2 != 0 {
        return Err(ChecksumError::SlotMisaligned(slot));
    }
    if slot + 2 > forged.len() {
        return Err(ChecksumError::SlotOutOfRange {
            position: slot,
            len: forged.len(),
        });
    }
    let mut rest = forged.to_vec();
    rest[slot] = 0;
    rest[slot + 1] = 0;

    let target = word_sum(original);
    let have = word_sum(&rest);
    let delta = fold(target as u32 + (!have) as u32);
    Ok(if delta == 0xFFFF { 0 } else { delta })
}

/// Writes the compensation word into `forged` at `slot`.
pub fn apply_compensation(original: &[u8], forged: &mut [u8], slot: usize) -> Result<u16, ChecksumError> {
    let word = checksum_compensate(original, forged, Some(slot))?;
    forged[slot..slot + 2].copy_from_slice(&word.to_be_bytes());
    Ok(word)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Straightforward RFC 1071 loop kept separate from `accumulate`.
    fn naive_checksum(pseudo: &PseudoHeader, data: &[u8]) -> u16 {
        let mut bytes = pseudo.to_bytes().to_vec();
        bytes.extend_from_slice(data);
        if bytes.len() % 2 == 1 {
            bytes.push(0);
        }
        let mut sum: u32 = 0;
        let mut i = 0;
        while i < bytes.len() {
            sum += ((bytes[i] as u32) << 8) | bytes[i + 1] as u32;
            if sum > 0xFFFF {
                sum = (sum & 0xFFFF) + 1;
            }
            i += 2;
        }
        !(sum as u16)
    }

    #[test]
    fn empty_zero_pseudo_header_is_all_ones() {
        assert_eq!(internet_checksum(&PseudoHeader::zeroed(), &[]), 0xFFFF);
    }

    #[test]
    fn pattern_a_odd_one_unit() {
        assert_eq!(
            pattern_fill('A', Parity::Odd, 1).unwrap(),
            vec![0x11, 0x22, 0x33, 0x44, 0x11, 0x22, 0x33, 0x44]
        );
    }

    #[test]
    fn unknown_label() {
        assert_eq!(pattern_fill('G', Parity::Odd, 1), Err(ChecksumError::UnknownLabel('G')));
    }

    #[test]
    fn odd_substitution_classes() {
        let sum = |l: char, k| word_sum(&pattern_fill(l, Parity::Odd, k).unwrap());
        // 0x1122 + 0x3344 == 0x3322 + 0x1144
        assert_eq!(0x1122u32 + 0x3344, 0x3322u32 + 0x1144);
        for k in 1..=16 {
            assert_eq!(sum('A', k), sum('F', k));
            assert_eq!(sum('B', k), sum('D', k));
            assert_eq!(sum('C', k), sum('E', k));
        }
    }

    #[test]
    fn even_table_classes_differ_from_odd() {
        // Word sums of the even table: A=0x7733, B=D=E=0x5555, C=F=0x6644.
        let sum = |l: char| word_sum(&pattern_fill(l, Parity::Even, 1).unwrap());
        assert_eq!(sum('A'), fold(2 * 0x7733));
        assert_eq!(sum('B'), sum('D'));
        assert_eq!(sum('B'), sum('E'));
        assert_eq!(sum('C'), sum('F'));
        assert_ne!(sum('C'), sum('E'));
    }

    #[test]
    fn fill_contains_pattern_twice_per_unit() {
        for units in 1..5 {
            let fill = pattern_fill('D', Parity::Even, units).unwrap();
            assert_eq!(fill.len(), units * 8);
            assert!(fill.chunks(4).all(|c| c == [0x11, 0x22, 0x44, 0x33]));
        }
    }

    #[test]
    fn shuffle_identical_words_is_identity() {
        let payload = [0xAB, 0xCD].repeat(10);
        assert_eq!(checksum_preserving_shuffle(&payload, 7), payload);
    }

    #[test]
    fn shuffle_keeps_odd_tail() {
        let payload = b"abcdefg";
        let out = checksum_preserving_shuffle(payload, 1);
        assert_eq!(out[6], b'g');
        assert_ne!(&out[..], &payload[..]);
    }

    #[test]
    fn shuffle_two_distinct_words_always_changes() {
        for seed in 0..50 {
            assert_eq!(checksum_preserving_shuffle(&[1, 2, 3, 4], seed), vec![3, 4, 1, 2]);
        }
    }

    #[test]
    fn compensate_recovers_original_word() {
        let original = b"syslog line with a word".to_vec();
        let mut forged = original.clone();
        let w = u16::from_be_bytes([original[4], original[5]]);
        forged[4] = 0;
        forged[5] = 0;
        assert_eq!(checksum_compensate(&original, &forged, Some(4)).unwrap(), w);
    }

    #[test]
    fn compensate_errors() {
        assert_eq!(checksum_compensate(b"ab", b"cd", None), Err(ChecksumError::NoSlotReserved));
        assert_eq!(checksum_compensate(b"ab", b"cd", Some(1)), Err(ChecksumError::SlotMisaligned(1)));
        assert!(matches!(
            checksum_compensate(b"ab", b"cd", Some(2)),
            Err(ChecksumError::SlotOutOfRange { .. })
        ));
    }

    fn pseudo_strategy() -> impl Strategy<Value = PseudoHeader> {
        (any::<u128>(), any::<u128>(), any::<u8>(), 0usize..2000).prop_map(|(s, d, nh, len)| {
            PseudoHeader::new(Ipv6Addr::from(s), Ipv6Addr::from(d), nh, len)
        })
    }

    proptest! {
        #[test]
        fn matches_naive_reference(pseudo in pseudo_strategy(), data in proptest::collection::vec(any::<u8>(), 0..300)) {
            prop_assert_eq!(internet_checksum(&pseudo, &data), naive_checksum(&pseudo, &data));
        }

        #[test]
        fn shuffle_preserves_checksum(pseudo in pseudo_strategy(), data in proptest::collection::vec(any::<u8>(), 0..200), seed in any::<u64>()) {
            let out = checksum_preserving_shuffle(&data, seed);
            prop_assert_eq!(internet_checksum(&pseudo, &data), internet_checksum(&pseudo, &out));
            let mut a = data.clone();
            let mut b = out.clone();
            a.sort_unstable();
            b.sort_unstable();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn compensation_restores_checksum(
            pseudo in pseudo_strategy(),
            original in proptest::collection::vec(any::<u8>(), 2..120),
            noise in proptest::collection::vec(any::<u8>(), 120),
            slot_word in any::<prop::sample::Index>(),
        ) {
            let mut forged: Vec<u8> = noise[..original.len()].to_vec();
            let slot = slot_word.index(original.len() / 2) * 2;
            apply_compensation(&original, &mut forged, slot).unwrap();
            prop_assert_eq!(internet_checksum(&pseudo, &original), internet_checksum(&pseudo, &forged));
        }
    }
}
