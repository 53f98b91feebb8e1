use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Per-encoder-layer freeze flags.
///
/// Written with `•` (trainable) and `∘` (frozen), or the ASCII alias `T`/`F`:
/// `TFT` is the same mask as `•∘•`, conventionally labelled `1 (•∘•)` by its
/// frozen-layer count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FreezeMask {
    pub frozen: [bool; 3],
}

impl FreezeMask {
    pub const TRAINABLE: FreezeMask = FreezeMask { frozen: [false; 3] };
    pub const FROZEN: FreezeMask = FreezeMask { frozen: [true; 3] };

    pub fn new(frozen: [bool; 3]) -> Self {
        FreezeMask { frozen }
    }

    /// All eight masks, ordered by frozen-layer count then layer position.
    pub fn all() -> Vec<FreezeMask> {
        let mut masks: Vec<FreezeMask> = (0u8..8)
            .map(|bits| FreezeMask::new([bits & 4 != 0, bits & 2 != 0, bits & 1 != 0]))
            .collect();
        masks.sort_by_key(|m| (m.frozen_count(), m.ascii()));
        masks
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().filter(|&&f| f).count()
    }

    pub fn is_frozen(&self, layer: usize) -> bool {
        self.frozen[layer]
    }

    pub fn ascii(&self) -> String {
        self.frozen.iter().map(|&f| if f { 'F' } else { 'T' }).collect()
    }

    pub fn dots(&self) -> String {
        self.frozen.iter().map(|&f| if f { '∘' } else { '•' }).collect()
    }

    /// `1 (•∘•)` style label.
    pub fn label(&self) -> String {
        format!("{} ({})", self.frozen_count(), self.dots())
    }
}

impl fmt::Display for FreezeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.dots())
    }
}

impl FromStr for FreezeMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let symbols: Vec<char> = s.chars().filter(|c| !c.is_whitespace()).collect();
        if symbols.len() != 3 {
            return Err(Error::Config(format!("freeze mask {s:?} must have exactly 3 symbols")));
        }
        let mut frozen = [false; 3];
        for (slot, c) in frozen.iter_mut().zip(symbols) {
            *slot = match c {
                '∘' | '○' | 'F' | 'f' => true,
                '•' | '●' | 'T' | 't' => false,
                other => {
                    return Err(Error::Config(format!(
                        "freeze mask {s:?}: unknown symbol {other:?} (use •/∘ or T/F)"
                    )))
                }
            };
        }
        Ok(FreezeMask { frozen })
    }
}

impl Serialize for FreezeMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.ascii())
    }
}

impl<'de> Deserialize<'de> for FreezeMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_notations() {
        let a: FreezeMask = "•∘•".parse().unwrap();
        let b: FreezeMask = "T F T".parse().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.frozen, [false, true, false]);
        assert_eq!(a.label(), "1 (•∘•)");
        assert_eq!(a.ascii(), "TFT");
        assert!("TT".parse::<FreezeMask>().is_err());
        assert!("TXT".parse::<FreezeMask>().is_err());
    }

    #[test]
    fn eight_distinct_masks() {
        let all = FreezeMask::all();
        assert_eq!(all.len(), 8);
        let mut uniq: Vec<_> = all.iter().map(|m| m.ascii()).collect();
        uniq.dedup();
        assert_eq!(uniq.len(), 8);
        assert_eq!(all[0], FreezeMask::TRAINABLE);
        assert_eq!(all[7], FreezeMask::FROZEN);
        assert!(all.windows(2).all(|w| w[0].frozen_count() <= w[1].frozen_count()));
    }

    #[test]
    fn serde_uses_ascii() {
        let m: FreezeMask = "∘••".parse().unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert_eq!(json, "\"FTT\"");
        assert_eq!(serde_json::from_str::<FreezeMask>(&json).unwrap(), m);
    }
}
