//! Shoreline protection scenarios.
//!
//! A scenario is a binary vector over the candidate coastal segments: bit `i`
//! is set when segment `i` carries a seawall. The text form is a bare
//! bitstring, most-significant (lowest segment id) first.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Number of candidate segments on the Abu Dhabi coastline.
pub const PAPER_SEGMENTS: usize = 17;

/// Which coastal segments are protected.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ProtectionScenario {
    bits: Vec<bool>,
}

impl ProtectionScenario {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::Parse {
                index: 0,
                message: "scenario must cover at least one segment".into(),
            });
        }
        Ok(Self { bits })
    }

    pub fn all(d_x: usize, protected: bool) -> Self {
        assert!(d_x >= 1, "d_x must be positive");
        Self {
            bits: vec![protected; d_x],
        }
    }

    /// Scenario with only segment `segment` toggled relative to `background`.
    pub fn unit(d_x: usize, segment: usize, background: bool) -> Self {
        let mut s = Self::all(d_x, background);
        s.bits[segment] = !background;
        s
    }

    pub fn d_x(&self) -> usize {
        self.bits.len()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_protected(&self, segment: usize) -> bool {
        self.bits[segment]
    }

    pub fn protected_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Returns a copy with one segment flipped.
    pub fn toggled(&self, segment: usize) -> Self {
        let mut bits = self.bits.clone();
        bits[segment] = !bits[segment];
        Self { bits }
    }

    /// Bits as 0.0 / 1.0 features.
    pub fn as_features(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    fn from_index(index: u64, d_x: usize) -> Self {
        // Segment 0 is the most significant bit.
        let bits = (0..d_x)
            .map(|i| (index >> (d_x - 1 - i)) & 1 == 1)
            .collect();
        Self { bits }
    }
}

/// Parses a bitstring such as `"00110011001100110"`.
pub fn parse_scenario(text: &str) -> Result<ProtectionScenario> {
    if text.is_empty() {
        return Err(Error::Parse {
            index: 0,
            message: "empty scenario string".into(),
        });
    }
    let bits = text
        .chars()
        .enumerate()
        .map(|(index, c)| match c {
            '0' => Ok(false),
            '1' => Ok(true),
            other => Err(Error::Parse {
                index,
                message: format!("expected '0' or '1', found {other:?}"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    ProtectionScenario::new(bits)
}

impl FromStr for ProtectionScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_scenario(s)
    }
}

impl fmt::Display for ProtectionScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ProtectionScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ProtectionScenario({self})")
    }
}

impl Serialize for ProtectionScenario {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ProtectionScenario {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        parse_scenario(&text).map_err(serde::de::Error::custom)
    }
}

/// The hand-picked base set: full protection, first half, second half, no
/// protection, every single-segment scenario and every single-gap scenario.
///
/// The first half is the leading `ceil(d_x / 2)` segments. Without `dedup` the
/// list always has `4 + 2 * d_x` entries, duplicates included.
pub fn make_base_scenarios(d_x: usize, dedup: bool) -> Vec<ProtectionScenario> {
    assert!(d_x >= 1, "d_x must be positive");
    let half = d_x.div_ceil(2);
    let first_half = ProtectionScenario {
        bits: (0..d_x).map(|i| i < half).collect(),
    };
    let second_half = ProtectionScenario {
        bits: (0..d_x).map(|i| i >= half).collect(),
    };

    let mut out = Vec::with_capacity(4 + 2 * d_x);
    out.push(ProtectionScenario::all(d_x, true));
    out.push(first_half);
    out.push(second_half);
    out.push(ProtectionScenario::all(d_x, false));
    out.extend((0..d_x).map(|i| ProtectionScenario::unit(d_x, i, false)));
    out.extend((0..d_x).map(|i| ProtectionScenario::unit(d_x, i, true)));

    if dedup {
        let mut seen = HashSet::new();
        out.retain(|s| seen.insert(s.clone()));
    }
    out
}

const HOLDOUT: [&str; 32] = [
    "00110011001100110",
    "11100000000000111",
    "00000111100000111",
    "00011000110001100",
    "11110000111100001",
    "00000011111100000",
    "11110000000001111",
    "00000111111100000",
    "11111100000111111",
    "00001111111110000",
    "11111000001111100",
    "00001110000111000",
    "10101010101010101",
    "11111110000001111",
    "00000001111110000",
    "11111000000011111",
    "11111110000000111",
    "00000111110000011",
    "00011100011100011",
    "00000001111111000",
    "11000000000000011",
    "00111111111111100",
    "01010101010101010",
    "11111100000011111",
    "11111000011111000",
    "00000011111000000",
    "11110001111000111",
    "11100011100011100",
    "00001111000011110",
    "11001100110011001",
    "11100111001110011",
    "00011111111111000",
];

/// The 32 handcrafted 17-segment holdout scenarios, in table order.
pub fn holdout_scenarios() -> Vec<ProtectionScenario> {
    HOLDOUT
        .iter()
        .map(|s| parse_scenario(s).expect("holdout table is valid"))
        .collect()
}

/// Draws `count` distinct scenarios uniformly without replacement, skipping
/// anything in `exclusions`. Deterministic in `seed`.
pub fn random_scenarios(
    count: usize,
    d_x: usize,
    seed: u64,
    exclusions: &HashSet<ProtectionScenario>,
) -> Result<Vec<ProtectionScenario>> {
    if d_x == 0 || d_x > 63 {
        return Err(Error::Config(format!("d_x must be in 1..=63, got {d_x}")));
    }
    let total = 1u64 << d_x;
    let excluded = exclusions.iter().filter(|s| s.d_x() == d_x).count() as u64;
    let available = total - excluded;
    if count as u64 > available {
        return Err(Error::Capacity(format!(
            "requested {count} scenarios but only {available} of 2^{d_x} are available"
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Dense spaces are enumerated and sampled by index; sparse ones by rejection.
    if total <= 1 << 20 {
        let candidates: Vec<ProtectionScenario> = (0..total)
            .map(|i| ProtectionScenario::from_index(i, d_x))
            .filter(|s| !exclusions.contains(s))
            .collect();
        let picks = sample(&mut rng, candidates.len(), count);
        Ok(picks.into_iter().map(|i| candidates[i].clone()).collect())
    } else {
        use rand::Rng;
        let mut chosen = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let s = ProtectionScenario::from_index(rng.gen_range(0..total), d_x);
            if !exclusions.contains(&s) && chosen.insert(s.clone()) {
                out.push(s);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strs(v: &[ProtectionScenario]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_scenario("000").unwrap().bits(), &[false, false, false]);
        assert_eq!(parse_scenario("101").unwrap().bits(), &[true, false, true]);
        let s = parse_scenario("00110011001100110").unwrap();
        assert_eq!(s.d_x(), 17);
        assert_eq!(s.protected_count(), 8);
    }

    #[test]
    fn parse_errors_name_the_index() {
        match parse_scenario("01x1") {
            Err(Error::Parse { index, .. }) => assert_eq!(index, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_scenario(""), Err(Error::Parse { .. })));
    }

    #[test]
    fn base_scenarios_small() {
        assert_eq!(
            strs(&make_base_scenarios(2, false)),
            ["11", "10", "01", "00", "10", "01", "01", "10"]
        );
        assert_eq!(strs(&make_base_scenarios(2, true)), ["11", "10", "01", "00"]);
    }

    #[test]
    fn base_scenarios_odd_half_rounds_up() {
        let base = make_base_scenarios(5, false);
        assert_eq!(base[1].to_string(), "11100");
        assert_eq!(base[2].to_string(), "00011");
    }

    #[test]
    fn base_scenarios_paper_size() {
        let base = make_base_scenarios(17, false);
        assert_eq!(base.len(), 38);
        assert!(strs(&base).contains(&"11111111111111111".to_string()));
        assert!(strs(&base).contains(&"00000000000000000".to_string()));
    }

    #[test]
    fn holdout_table() {
        let h = holdout_scenarios();
        assert_eq!(h.len(), 32);
        assert_eq!(h[0].to_string(), "00110011001100110");
        assert_eq!(h[31].to_string(), "00011111111111000");
        let unique: HashSet<_> = h.iter().collect();
        assert_eq!(unique.len(), 32);
        assert!(h.iter().all(|s| s.d_x() == 17));
    }

    #[test]
    fn random_scenarios_examples() {
        let none = HashSet::new();
        assert!(random_scenarios(0, 4, 1, &none).unwrap().is_empty());

        let mut all = random_scenarios(4, 2, 3, &none).unwrap();
        all.sort();
        assert_eq!(strs(&all), ["00", "01", "10", "11"]);

        let a = random_scenarios(2, 3, 7, &none).unwrap();
        let b = random_scenarios(2, 3, 7, &none).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn random_scenarios_respects_exclusions_and_capacity() {
        let excl: HashSet<_> = make_base_scenarios(3, true).into_iter().collect();
        let rest = random_scenarios(8 - excl.len(), 3, 11, &excl).unwrap();
        assert!(rest.iter().all(|s| !excl.contains(s)));
        assert!(matches!(
            random_scenarios(9 - excl.len(), 3, 11, &excl),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn random_scenarios_sparse_space() {
        let out = random_scenarios(50, 40, 5, &HashSet::new()).unwrap();
        let unique: HashSet<_> = out.iter().collect();
        assert_eq!(unique.len(), 50);
    }
}
