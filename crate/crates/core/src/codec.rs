//! Character sets ("codecs") of a recognizer.
//!
//! A [`Codec`] maps every recognizable character to an output index of the
//! network. Index 0 is always the CTC blank. Characters in the immune set
//! survive every [`Codec::reduce`], which is how a whitelist protects a model
//! from losing characters that the fine-tuning ground truth happens not to
//! contain.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

/// Sentinel used for the CTC blank at index 0. It never occurs in text.
pub const BLANK: char = '\u{0}';

/// Unicode-normalize ground truth to NFC.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodecError {
    #[error("character {ch:?} (U+{code:04X}) at position {position} is not in the codec")]
    NotInCodec {
        ch: char,
        code: u32,
        position: usize,
    },
    #[error("the blank sentinel is reserved and cannot be added to a codec")]
    ReservedBlank,
    #[error("label {0} is outside the codec")]
    LabelOutOfRange(usize),
    #[error("label sequence contains the blank at position {0}")]
    BlankInLabels(usize),
    #[error("malformed codec: {0}")]
    Malformed(String),
    #[error("codec delta does not match the codec it is applied to: {0}")]
    DeltaMismatch(String),
}

/// Ordered alphabet of a model, blank at index 0.
#[derive(Clone, PartialEq, Eq)]
pub struct Codec {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
    immune: BTreeSet<char>,
}

impl fmt::Debug for Codec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shown: String = self.symbols[1..].iter().collect();
        f.debug_struct("Codec")
            .field("size", &self.len())
            .field("symbols", &shown)
            .field("immune", &self.immune.len())
            .finish()
    }
}

/// Index bookkeeping for a codec change, consumed by the network's output
/// layer resize.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CodecDelta {
    /// Size of the codec the delta applies to.
    pub source_len: usize,
    /// New characters with their index in the target codec.
    pub added: Vec<(char, usize)>,
    /// Dropped characters with their index in the source codec.
    pub removed: Vec<(char, usize)>,
    /// Old index to new index for every surviving symbol, ascending.
    pub retained: Vec<(usize, usize)>,
}

impl CodecDelta {
    fn identity(len: usize) -> Self {
        CodecDelta {
            source_len: len,
            added: Vec::new(),
            removed: Vec::new(),
            retained: (0..len).map(|i| (i, i)).collect(),
        }
    }

    /// True when the delta neither adds nor removes anything and keeps every
    /// index in place.
    pub fn is_empty(&self) -> bool {
        self.added.is_empty()
            && self.removed.is_empty()
            && self.retained.iter().all(|&(o, n)| o == n)
    }

    pub fn target_len(&self) -> usize {
        self.retained.len() + self.added.len()
    }

    /// Build the target codec. The immune set of `source` is carried over.
    pub fn apply(&self, source: &Codec) -> Result<Codec, CodecError> {
        if source.len() != self.source_len {
            return Err(CodecError::DeltaMismatch(format!(
                "delta expects {} symbols, codec has {}",
                self.source_len,
                source.len()
            )));
        }
        let target_len = self.target_len();
        let mut slots: Vec<Option<char>> = vec![None; target_len];
        let mut seen_old = vec![false; source.len()];
        let mut last_new = None;
        for &(old, new) in &self.retained {
            if old >= source.len() || new >= target_len {
                return Err(CodecError::DeltaMismatch(format!(
                    "retained mapping {old}->{new} out of range"
                )));
            }
            if last_new.is_some_and(|l| new <= l) {
                return Err(CodecError::DeltaMismatch(
                    "retained mapping is not order preserving".into(),
                ));
            }
            last_new = Some(new);
            seen_old[old] = true;
            slots[new] = Some(source.symbols[old]);
        }
        for &(ch, old) in &self.removed {
            if old >= source.len() || source.symbols[old] != ch || seen_old[old] {
                return Err(CodecError::DeltaMismatch(format!(
                    "removed entry {ch:?}@{old} does not match"
                )));
            }
            if old == 0 {
                return Err(CodecError::DeltaMismatch("blank cannot be removed".into()));
            }
            seen_old[old] = true;
        }
        if seen_old.iter().any(|s| !s) {
            return Err(CodecError::DeltaMismatch(
                "delta does not account for every source symbol".into(),
            ));
        }
        for &(ch, new) in &self.added {
            if ch == BLANK {
                return Err(CodecError::ReservedBlank);
            }
            if new >= target_len || slots[new].is_some() {
                return Err(CodecError::DeltaMismatch(format!(
                    "added entry {ch:?}@{new} collides"
                )));
            }
            slots[new] = Some(ch);
        }
        let symbols: Vec<char> = slots.into_iter().map(|s| s.expect("slots filled")).collect();
        Codec::from_parts(symbols, source.immune.iter().copied())
    }
}

fn default_immune() -> impl Iterator<Item = char> {
    [BLANK, ' '].into_iter()
}

impl Codec {
    /// Build a codec from ground truth lines and a whitelist.
    ///
    /// Symbols are blank, then the union of space, the whitelist and every
    /// character of the (NFC normalized) texts in code point order.
    pub fn build<S: AsRef<str>>(texts: &[S], whitelist: &BTreeSet<char>) -> Codec {
        let mut chars: BTreeSet<char> = whitelist.iter().copied().collect();
        chars.insert(' ');
        for t in texts {
            chars.extend(normalize_text(t.as_ref()).chars());
        }
        chars.remove(&BLANK);
        let symbols: Vec<char> = std::iter::once(BLANK).chain(chars).collect();
        let immune = default_immune().chain(whitelist.iter().copied());
        Codec::from_parts(symbols, immune).expect("constructed codec is well formed")
    }

    /// Assemble a codec from an explicit symbol list (blank first) and immune
    /// set. Used by deserialization.
    pub fn from_parts(
        symbols: Vec<char>,
        immune: impl IntoIterator<Item = char>,
    ) -> Result<Codec, CodecError> {
        if symbols.first() != Some(&BLANK) {
            return Err(CodecError::Malformed("index 0 must be the blank".into()));
        }
        let mut index = HashMap::with_capacity(symbols.len());
        for (i, &c) in symbols.iter().enumerate() {
            if index.insert(c, i).is_some() {
                return Err(CodecError::Malformed(format!("duplicate symbol {c:?}")));
            }
        }
        let immune = default_immune().chain(immune).collect();
        Ok(Codec {
            symbols,
            index,
            immune,
        })
    }

    /// Number of output classes including the blank.
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// All symbols, blank first.
    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn immune(&self) -> &BTreeSet<char> {
        &self.immune
    }

    pub fn contains(&self, ch: char) -> bool {
        self.index.contains_key(&ch)
    }

    pub fn index_of(&self, ch: char) -> Option<usize> {
        self.index.get(&ch).copied()
    }

    /// The characters of the codec without the blank.
    pub fn charset(&self) -> BTreeSet<char> {
        self.symbols[1..].iter().copied().collect()
    }

    /// Append characters that are not yet present, in code point order.
    /// Existing indices never move.
    pub fn extend(&self, new_chars: &BTreeSet<char>) -> Result<(Codec, CodecDelta), CodecError> {
        if new_chars.contains(&BLANK) {
            return Err(CodecError::ReservedBlank);
        }
        let mut delta = CodecDelta::identity(self.len());
        let mut symbols = self.symbols.clone();
        for &ch in new_chars {
            if !self.contains(ch) {
                delta.added.push((ch, symbols.len()));
                symbols.push(ch);
            }
        }
        let codec = Codec::from_parts(symbols, self.immune.iter().copied())?;
        Ok((codec, delta))
    }

    /// Drop every symbol that is neither in `keep_chars` nor immune.
    pub fn reduce(&self, keep_chars: &BTreeSet<char>) -> (Codec, CodecDelta) {
        let mut delta = CodecDelta {
            source_len: self.len(),
            ..Default::default()
        };
        let mut symbols = Vec::with_capacity(self.len());
        for (old, &ch) in self.symbols.iter().enumerate() {
            if keep_chars.contains(&ch) || self.immune.contains(&ch) {
                delta.retained.push((old, symbols.len()));
                symbols.push(ch);
            } else {
                delta.removed.push((ch, old));
            }
        }
        let codec = Codec::from_parts(symbols, self.immune.iter().copied())
            .expect("reduction keeps blank first and stays duplicate free");
        (codec, delta)
    }

    /// Labels for `text` (NFC normalized first). Never contains the blank.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, CodecError> {
        normalize_text(text)
            .chars()
            .enumerate()
            .map(|(position, ch)| match self.index_of(ch) {
                Some(i) if i != 0 => Ok(i),
                _ => Err(CodecError::NotInCodec {
                    ch,
                    code: ch as u32,
                    position,
                }),
            })
            .collect()
    }

    pub fn decode_labels(&self, labels: &[usize]) -> Result<String, CodecError> {
        labels
            .iter()
            .enumerate()
            .map(|(pos, &l)| match l {
                0 => Err(CodecError::BlankInLabels(pos)),
                l if l >= self.len() => Err(CodecError::LabelOutOfRange(l)),
                l => Ok(self.symbols[l]),
            })
            .collect()
    }

    /// Delta taking `self`'s symbol set to `other`'s: shared symbols keep
    /// `self`'s order, symbols only in `other` are appended in code point
    /// order.
    pub fn diff(&self, other: &Codec) -> CodecDelta {
        let mut delta = CodecDelta {
            source_len: self.len(),
            ..Default::default()
        };
        let mut next = 0;
        for (old, &ch) in self.symbols.iter().enumerate() {
            if other.contains(ch) {
                delta.retained.push((old, next));
                next += 1;
            } else {
                delta.removed.push((ch, old));
            }
        }
        let mut added: Vec<char> = other
            .symbols
            .iter()
            .copied()
            .filter(|&c| !self.contains(c))
            .collect();
        added.sort_unstable();
        for ch in added {
            delta.added.push((ch, next));
            next += 1;
        }
        delta
    }
}

/// The whitelist of immune characters used by default: a-z, A-Z, 0-9.
pub fn default_whitelist() -> BTreeSet<char> {
    ('a'..='z').chain('A'..='Z').chain('0'..='9').collect()
}
