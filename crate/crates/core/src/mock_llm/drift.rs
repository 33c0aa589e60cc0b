//! Re-tokenization drift: decoding generated ids to text and tokenizing the
//! text again need not reproduce the ids.

use serde::{Deserialize, Serialize};

use crate::model::TokenId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriftReport {
    pub original_ids: Vec<TokenId>,
    pub roundtrip_ids: Vec<TokenId>,
    pub drifted: bool,
}

/// `original_ids` are ids as a generator emitted them; the round trip goes
/// through `detokenize` then `tokenize`.
pub fn drift_probe(
    original_ids: &[TokenId],
    tokenize: impl Fn(&str) -> Vec<TokenId>,
    detokenize: impl Fn(&[TokenId]) -> String,
) -> DriftReport {
    let text = detokenize(original_ids);
    let roundtrip_ids = tokenize(&text);
    let drifted = roundtrip_ids != original_ids;
    DriftReport { original_ids: original_ids.to_vec(), roundtrip_ids, drifted }
}

/// Greedy longest-match tokenizer over a fixed piece table. Characters not
/// covered by any piece map to `UNKNOWN_BASE + byte`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyTokenizer {
    pieces: Vec<String>,
}

impl ToyTokenizer {
    pub const UNKNOWN_BASE: TokenId = 1_000;

    pub fn new<S: Into<String>>(pieces: impl IntoIterator<Item = S>) -> Self {
        Self { pieces: pieces.into_iter().map(Into::into).collect() }
    }

    /// The table with an ambiguous merge: "ab" can be one piece or "a"+"b".
    pub fn ambiguous() -> Self {
        Self::new(["a", "b", "ab", "ba"])
    }

    pub fn id_of(&self, piece: &str) -> Option<TokenId> {
        self.pieces.iter().position(|p| p == piece).map(|i| i as TokenId)
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        let bytes = text.as_bytes();
        let mut out = Vec::new();
        let mut i = 0;
        while i < bytes.len() {
            let best = self
                .pieces
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.is_empty() && bytes[i..].starts_with(p.as_bytes()))
                .max_by_key(|(idx, p)| (p.len(), std::cmp::Reverse(*idx)));
            match best {
                Some((idx, p)) => {
                    out.push(idx as TokenId);
                    i += p.len();
                }
                None => {
                    out.push(Self::UNKNOWN_BASE + TokenId::from(bytes[i]));
                    i += 1;
                }
            }
        }
        out
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        let mut bytes = Vec::new();
        for &id in ids {
            match self.pieces.get(id as usize) {
                Some(p) => bytes.extend_from_slice(p.as_bytes()),
                None if (Self::UNKNOWN_BASE..Self::UNKNOWN_BASE + 256).contains(&id) => {
                    bytes.push((id - Self::UNKNOWN_BASE) as u8)
                }
                None => {}
            }
        }
        String::from_utf8_lossy(&bytes).into_owned()
    }

    pub fn probe(&self, original_ids: &[TokenId]) -> DriftReport {
        drift_probe(original_ids, |t| self.tokenize(t), |ids| self.detokenize(ids))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separately_generated_pieces_drift() {
        let tok = ToyTokenizer::ambiguous();
        let (a, b, ab) = (tok.id_of("a").unwrap(), tok.id_of("b").unwrap(), tok.id_of("ab").unwrap());
        let r = tok.probe(&[a, b]);
        assert_eq!(r.roundtrip_ids, vec![ab]);
        assert!(r.drifted);
    }

    #[test]
    fn single_piece_and_empty_do_not_drift() {
        let tok = ToyTokenizer::ambiguous();
        assert!(!tok.probe(&[tok.id_of("ab").unwrap()]).drifted);
        let r = tok.probe(&[]);
        assert!(r.original_ids.is_empty() && r.roundtrip_ids.is_empty() && !r.drifted);
    }
}
