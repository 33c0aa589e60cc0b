//! Byte-level codec for messages that enter a conversation as text
//! (user prompts, tool observations).
//!
//! IDs 0..=255 are raw bytes; everything above is opaque to this codec.
//! Generated token IDs are only ever decoded for display and directive
//! parsing, never encoded back.

use super::TokenId;

/// End-of-sequence marker understood by the mock backend's script mode.
pub const EOS_TOKEN: TokenId = 256;

pub fn encode(text: &str) -> Vec<TokenId> {
    text.bytes().map(TokenId::from).collect()
}

pub fn decode(ids: &[TokenId]) -> String {
    let mut out = String::new();
    let mut bytes = Vec::new();
    for &id in ids {
        if id < 256 {
            bytes.push(id as u8);
            continue;
        }
        if !bytes.is_empty() {
            out.push_str(&String::from_utf8_lossy(&bytes));
            bytes.clear();
        }
        out.push_str(&format!("<|{id}|>"));
    }
    out.push_str(&String::from_utf8_lossy(&bytes));
    out
}
