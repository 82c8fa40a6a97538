use std::sync::Arc;

use super::{Result, TextModelError};
use crate::numeric::fnv1a64;

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
const FIRST_PIECE_ID: u32 = 4;

pub const DEFAULT_TEXT_BACKBONE: &str = "builtin/hashed-wordpiece-uncased";

pub trait TextBackbone: Send + Sync + std::fmt::Debug {
    fn id(&self) -> &str;
    /// Number of token ids, special markers included.
    fn vocab_size(&self) -> usize;
    /// Subword ids for `text`, without special markers.
    fn tokenize(&self, text: &str) -> Vec<u32>;
}

pub fn resolve_text_backbone(id: &str) -> Result<Arc<dyn TextBackbone>> {
    match id {
        DEFAULT_TEXT_BACKBONE => Ok(Arc::new(HashedWordpiece::default())),
        other => Err(TextModelError::BackboneUnavailable { id: other.to_string() }),
    }
}

/// Uncased tokenizer that splits words into fixed-width pieces (later
/// pieces get a `##` prefix, as in WordPiece) and hashes each piece into
/// the vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct HashedWordpiece {
    pub vocab_size: usize,
    pub piece_chars: usize,
}

impl Default for HashedWordpiece {
    fn default() -> Self {
        HashedWordpiece { vocab_size: 1 << 15, piece_chars: 6 }
    }
}

impl HashedWordpiece {
    fn piece_id(&self, piece: &str) -> u32 {
        FIRST_PIECE_ID + (fnv1a64(piece.as_bytes()) % (self.vocab_size as u64 - FIRST_PIECE_ID as u64)) as u32
    }

    fn push_word(&self, word: &[char], out: &mut Vec<u32>) {
        for (i, piece) in word.chunks(self.piece_chars).enumerate() {
            let s: String = piece.iter().collect();
            out.push(if i == 0 { self.piece_id(&s) } else { self.piece_id(&format!("##{s}")) });
        }
    }
}

impl TextBackbone for HashedWordpiece {
    fn id(&self) -> &str {
        DEFAULT_TEXT_BACKBONE
    }

    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        let mut word: Vec<char> = Vec::new();
        for ch in text.chars().flat_map(char::to_lowercase) {
            if ch.is_alphanumeric() {
                word.push(ch);
                continue;
            }
            if !word.is_empty() {
                self.push_word(&word, &mut out);
                word.clear();
            }
            if ch.is_whitespace() {
                continue;
            }
            if ch.is_control() {
                out.push(UNK_ID);
            } else {
                out.push(self.piece_id(&ch.to_string()));
            }
        }
        if !word.is_empty() {
            self.push_word(&word, &mut out);
        }
        out
    }
}

/// Remove whitespace-separated words that look like links.
pub fn strip_urls(text: &str) -> String {
    text.split_whitespace()
        .filter(|w| {
            let l = w.to_ascii_lowercase();
            !(l.starts_with("http://") || l.starts_with("https://") || l.starts_with("www."))
        })
        .collect::<Vec<_>>()
        .join(" ")
}
