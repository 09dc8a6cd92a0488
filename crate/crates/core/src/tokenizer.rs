//! k-mer vocabularies and the three tokenization strategies: overlapping
//! (stride 1), non-overlapping (stride k) and same-length (non-overlapping
//! tokens tiled to the overlapping length).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DnaSequence, NUCLEOTIDES};

pub type TokenId = u32;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const CLS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;
pub const MASK_ID: TokenId = 4;
pub const NUM_SPECIAL: usize = 5;

pub const SPECIAL_TOKENS: [&str; NUM_SPECIAL] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

pub const MAX_K: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenizerError {
    #[error("k = {0} outside supported range 1..={MAX_K}")]
    KOutOfRange(usize),
    #[error("sequence of length {len} is shorter than k = {k}")]
    SequenceTooShort { len: usize, k: usize },
    #[error("tokens {index} and {next} do not overlap by k-1 bases")]
    InconsistentOverlap { index: usize, next: usize },
    #[error("special or unknown token id {id} at position {index}")]
    SpecialTokenPresent { id: TokenId, index: usize },
    #[error("token id {0} is outside the vocabulary")]
    UnknownId(TokenId),
    #[error("expected {expected} tokens, got {found}")]
    WrongStrategy { expected: Strategy, found: Strategy },
    #[error("frame length {0} is below the minimum of 3")]
    FrameTooShort(usize),
    #[error("invalid vocabulary description: {0}")]
    InvalidVocabJson(String),
    #[error("unknown strategy '{0}' (expected overlapping, non-overlapping or same-length)")]
    UnknownStrategy(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    #[default]
    Overlapping,
    NonOverlapping,
    SameLength,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Overlapping => "overlapping",
            Strategy::NonOverlapping => "non-overlapping",
            Strategy::SameLength => "same-length",
        })
    }
}

impl FromStr for Strategy {
    type Err = TokenizerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "overlapping" => Ok(Strategy::Overlapping),
            "non-overlapping" | "nonoverlapping" => Ok(Strategy::NonOverlapping),
            "same-length" | "samelength" => Ok(Strategy::SameLength),
            other => Err(TokenizerError::UnknownStrategy(other.to_string())),
        }
    }
}

/// Bijection between k-mers and ids. Ids 0..5 are the special tokens, then
/// every k-mer in lexicographic order over A<C<G<T. The mapping is
/// arithmetic, so no table is stored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Vocabulary {
    k: usize,
}

#[inline]
fn base_code(b: u8) -> Option<u32> {
    match b {
        b'A' => Some(0),
        b'C' => Some(1),
        b'G' => Some(2),
        b'T' => Some(3),
        _ => None,
    }
}

impl Vocabulary {
    pub fn new(k: usize) -> Result<Self, TokenizerError> {
        if !(1..=MAX_K).contains(&k) {
            return Err(TokenizerError::KOutOfRange(k));
        }
        Ok(Vocabulary { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_kmers(&self) -> usize {
        1 << (2 * self.k)
    }

    pub fn size(&self) -> usize {
        self.num_kmers() + NUM_SPECIAL
    }

    /// Id of a k-mer; anything containing a non-ACGT base maps to `[UNK]`.
    pub fn kmer_id(&self, kmer: &[u8]) -> TokenId {
        debug_assert_eq!(kmer.len(), self.k);
        let mut code = 0u32;
        for &b in kmer {
            match base_code(b) {
                Some(c) => code = (code << 2) | c,
                None => return UNK_ID,
            }
        }
        code + NUM_SPECIAL as TokenId
    }

    /// Id of any token string, special tokens included.
    pub fn token_to_id(&self, token: &str) -> Option<TokenId> {
        if let Some(i) = SPECIAL_TOKENS.iter().position(|s| *s == token) {
            return Some(i as TokenId);
        }
        if token.len() != self.k || !token.bytes().all(|b| base_code(b).is_some()) {
            return None;
        }
        Some(self.kmer_id(token.as_bytes()))
    }

    pub fn id_to_token(&self, id: TokenId) -> Option<String> {
        let id = id as usize;
        if id < NUM_SPECIAL {
            return Some(SPECIAL_TOKENS[id].to_string());
        }
        self.kmer_bases(id as TokenId).map(|b| String::from_utf8(b).expect("ascii"))
    }

    /// Bases of a k-mer id, `None` for special or out-of-range ids.
    pub fn kmer_bases(&self, id: TokenId) -> Option<Vec<u8>> {
        let id = id as usize;
        if id < NUM_SPECIAL || id >= self.size() {
            return None;
        }
        let code = id - NUM_SPECIAL;
        Some(
            (0..self.k)
                .rev()
                .map(|shift| NUCLEOTIDES[(code >> (2 * shift)) & 3])
                .collect(),
        )
    }

    pub fn is_kmer(&self, id: TokenId) -> bool {
        (id as usize) >= NUM_SPECIAL && (id as usize) < self.size()
    }

    /// Index 0..16 of the two central bases of a 6-mer (bases 3 and 4,
    /// one-based), ordered like a 2-mer vocabulary.
    pub fn central_dinucleotide(&self, id: TokenId) -> Option<usize> {
        if self.k != 6 || !self.is_kmer(id) {
            return None;
        }
        let code = id as usize - NUM_SPECIAL;
        Some((code >> 4) & 0xF)
    }

    pub fn to_json(&self) -> VocabJson {
        VocabJson {
            k: self.k,
            special_tokens: SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect(),
            ordering: "lex".to_string(),
        }
    }

    pub fn from_json(desc: &VocabJson) -> Result<Self, TokenizerError> {
        if desc.ordering != "lex" {
            return Err(TokenizerError::InvalidVocabJson(format!(
                "unsupported ordering '{}'",
                desc.ordering
            )));
        }
        if desc.special_tokens != SPECIAL_TOKENS {
            return Err(TokenizerError::InvalidVocabJson(format!(
                "special tokens must be {SPECIAL_TOKENS:?}"
            )));
        }
        Vocabulary::new(desc.k)
    }
}

/// Interchange form of a vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabJson {
    pub k: usize,
    pub special_tokens: Vec<String>,
    pub ordering: String,
}

pub fn build_vocab(k: usize) -> Result<Vocabulary, TokenizerError> {
    Vocabulary::new(k)
}

/// Token ids tagged with the strategy and k that produced them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub strategy: Strategy,
    pub k: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

fn check_len(seq: &DnaSequence, vocab: &Vocabulary) -> Result<(), TokenizerError> {
    if seq.len() < vocab.k() {
        Err(TokenizerError::SequenceTooShort { len: seq.len(), k: vocab.k() })
    } else {
        Ok(())
    }
}

pub fn encode_overlapping(seq: &DnaSequence, vocab: &Vocabulary) -> Result<TokenSequence, TokenizerError> {
    check_len(seq, vocab)?;
    let ids = seq.bases().windows(vocab.k()).map(|w| vocab.kmer_id(w)).collect();
    Ok(TokenSequence { ids, strategy: Strategy::Overlapping, k: vocab.k() })
}

pub fn encode_nonoverlapping(seq: &DnaSequence, vocab: &Vocabulary) -> Result<TokenSequence, TokenizerError> {
    check_len(seq, vocab)?;
    let ids = seq.bases().chunks_exact(vocab.k()).map(|w| vocab.kmer_id(w)).collect();
    Ok(TokenSequence { ids, strategy: Strategy::NonOverlapping, k: vocab.k() })
}

/// Non-overlapping tokens repeated cyclically until the output has exactly
/// as many tokens as the overlapping encoding (`len - k + 1`).
pub fn encode_same_length(seq: &DnaSequence, vocab: &Vocabulary) -> Result<TokenSequence, TokenizerError> {
    let base = encode_nonoverlapping(seq, vocab)?;
    let target = seq.len() - vocab.k() + 1;
    let ids = base.ids.iter().copied().cycle().take(target).collect();
    Ok(TokenSequence { ids, strategy: Strategy::SameLength, k: vocab.k() })
}

pub fn encode(seq: &DnaSequence, vocab: &Vocabulary, strategy: Strategy) -> Result<TokenSequence, TokenizerError> {
    match strategy {
        Strategy::Overlapping => encode_overlapping(seq, vocab),
        Strategy::NonOverlapping => encode_nonoverlapping(seq, vocab),
        Strategy::SameLength => encode_same_length(seq, vocab),
    }
}

/// Inverse of [`encode_overlapping`] for sequences without ambiguous bases.
pub fn decode_overlapping(tokens: &TokenSequence, vocab: &Vocabulary) -> Result<DnaSequence, TokenizerError> {
    if tokens.strategy != Strategy::Overlapping {
        return Err(TokenizerError::WrongStrategy {
            expected: Strategy::Overlapping,
            found: tokens.strategy,
        });
    }
    let k = vocab.k();
    let mut kmers = Vec::with_capacity(tokens.len());
    for (index, &id) in tokens.ids.iter().enumerate() {
        if (id as usize) < NUM_SPECIAL {
            return Err(TokenizerError::SpecialTokenPresent { id, index });
        }
        kmers.push(vocab.kmer_bases(id).ok_or(TokenizerError::UnknownId(id))?);
    }
    for (index, pair) in kmers.windows(2).enumerate() {
        if pair[0][1..] != pair[1][..k - 1] {
            return Err(TokenizerError::InconsistentOverlap { index, next: index + 1 });
        }
    }
    let mut bases: Vec<u8> = kmers.iter().map(|km| km[0]).collect();
    if let Some(last) = kmers.last() {
        bases.extend_from_slice(&last[1..]);
    }
    Ok(DnaSequence::from_normalized(String::new(), bases))
}

/// Model input frame: `[CLS] ids… [SEP] [PAD]…` of fixed length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Framed {
    pub ids: Vec<TokenId>,
    /// `true` at real (non-padding) positions.
    pub padding_mask: Vec<bool>,
}

impl Framed {
    /// Number of real positions, `[CLS]` and `[SEP]` included.
    pub fn real_len(&self) -> usize {
        self.padding_mask.iter().filter(|&&m| m).count()
    }
}

pub fn wrap_for_model(ids: &[TokenId], max_len: usize) -> Result<Framed, TokenizerError> {
    if max_len < 3 {
        return Err(TokenizerError::FrameTooShort(max_len));
    }
    let body = &ids[..ids.len().min(max_len - 2)];
    let mut out = Vec::with_capacity(max_len);
    out.push(CLS_ID);
    out.extend_from_slice(body);
    out.push(SEP_ID);
    let real = out.len();
    out.resize(max_len, PAD_ID);
    let padding_mask = (0..max_len).map(|i| i < real).collect();
    Ok(Framed { ids: out, padding_mask })
}
