//! Ledger tokenizers for remote backends.
//!
//! [`BpeTokenizer`] reads a GPT-2 style byte-level BPE vocabulary
//! (`encoder.json` + `vocab.bpe`) so ledger ids line up with the ids a hosted
//! completions endpoint accepts in `logit_bias`. [`WhitespaceTokenizer`] is
//! the fallback when no vocabulary file is available; its ids are local only.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;

use crate::backend::Tokenizer;
use crate::error::{Error, Result};
use crate::sampling::TokenId;

fn bytes_to_unicode() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut extra = 0u32;
    for b in 0..=255u32 {
        let printable = (0x21..=0x7e).contains(&b) || (0xa1..=0xac).contains(&b) || (0xae..=0xff).contains(&b);
        table[b as usize] = if printable {
            char::from_u32(b).unwrap()
        } else {
            extra += 1;
            char::from_u32(255 + extra).unwrap()
        };
    }
    table
}

/// Splits text the way the GPT-2 pre-tokenizer regex does:
/// contractions, optionally space-prefixed letter / digit / symbol runs, and
/// whitespace runs that leave their last space for the following word.
pub(crate) fn pretokenize(text: &str) -> Vec<&str> {
    const CONTRACTIONS: [&str; 7] = ["'s", "'t", "'re", "'ve", "'m", "'ll", "'d"];
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let byte_at = |i: usize| chars.get(i).map_or(text.len(), |c| c.0);
    let class = |c: char| {
        if c.is_alphabetic() {
            0
        } else if c.is_numeric() {
            1
        } else if c.is_whitespace() {
            3
        } else {
            2
        }
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let start = byte_at(i);
        if let Some(c) = CONTRACTIONS.iter().find(|c| text[start..].starts_with(**c)) {
            out.push(&text[start..start + c.len()]);
            i += c.chars().count();
            continue;
        }
        let (c0, k0) = (chars[i].1, class(chars[i].1));
        // optional single leading space before a non-space run
        let (body, kind) = if c0 == ' ' && i + 1 < chars.len() && class(chars[i + 1].1) != 3 {
            (i + 1, class(chars[i + 1].1))
        } else {
            (i, k0)
        };
        if kind != 3 {
            let mut j = body + 1;
            while j < chars.len() && class(chars[j].1) == kind {
                j += 1;
            }
            out.push(&text[start..byte_at(j)]);
            i = j;
            continue;
        }
        let mut j = i + 1;
        while j < chars.len() && class(chars[j].1) == 3 {
            j += 1;
        }
        // leave one space for the next word when the run is followed by text
        if j < chars.len() && j - i > 1 {
            j -= 1;
        }
        out.push(&text[start..byte_at(j)]);
        i = j;
    }
    out
}

/// Byte-level BPE tokenizer over a GPT-2 format vocabulary.
#[derive(Debug)]
pub struct BpeTokenizer {
    encoder: HashMap<String, u32>,
    decoder: HashMap<u32, String>,
    ranks: HashMap<(String, String), usize>,
    byte_encoder: [char; 256],
    byte_decoder: HashMap<char, u8>,
}

impl BpeTokenizer {
    pub fn from_files(encoder_json: &Path, merges: &Path) -> Result<Self> {
        let encoder: HashMap<String, u32> = serde_json::from_str(&fs::read_to_string(encoder_json)?)?;
        Self::new(encoder, &fs::read_to_string(merges)?)
    }

    /// `merges` is the `vocab.bpe` text: an optional `#version` line then one
    /// space-separated pair per line, highest priority first.
    pub fn new(encoder: HashMap<String, u32>, merges: &str) -> Result<Self> {
        let mut ranks = HashMap::new();
        for line in merges.lines().filter(|l| !l.starts_with("#version") && !l.trim().is_empty()) {
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Malformed(format!("merge line `{line}`")))?;
            let rank = ranks.len();
            ranks.entry((a.to_string(), b.to_string())).or_insert(rank);
        }
        let byte_encoder = bytes_to_unicode();
        let byte_decoder = byte_encoder.iter().enumerate().map(|(b, c)| (*c, b as u8)).collect();
        let decoder = encoder.iter().map(|(k, v)| (*v, k.clone())).collect();
        Ok(Self {
            encoder,
            decoder,
            ranks,
            byte_encoder,
            byte_decoder,
        })
    }

    fn bpe(&self, word: &str) -> Vec<String> {
        let mut parts: Vec<String> = word.chars().map(String::from).collect();
        while parts.len() > 1 {
            let best = parts
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| self.ranks.get(&(w[0].clone(), w[1].clone())).map(|r| (*r, i)))
                .min();
            let Some((_, i)) = best else { break };
            let merged = format!("{}{}", parts[i], parts[i + 1]);
            parts.splice(i..i + 2, [merged]);
        }
        parts
    }
}

impl Tokenizer for BpeTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut ids = Vec::new();
        for piece in pretokenize(text) {
            let mapped: String = piece.bytes().map(|b| self.byte_encoder[b as usize]).collect();
            for part in self.bpe(&mapped) {
                ids.push(self.encoder.get(&part).map_or(TokenId::UNKNOWN, |id| TokenId(*id)));
            }
        }
        ids
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        let bytes: Vec<u8> = ids
            .iter()
            .filter_map(|id| self.decoder.get(&id.0))
            .flat_map(|s| s.chars())
            .filter_map(|c| self.byte_decoder.get(&c).copied())
            .collect();
        String::from_utf8_lossy(&bytes).into_owned()
    }

    fn bias_compatible(&self) -> bool {
        true
    }
}

/// Lowercase whitespace tokens with ids interned on first sight.
///
/// Ids are local to this process, so a bias map built from them must not be
/// sent to a remote server.
#[derive(Debug, Default)]
pub struct WhitespaceTokenizer {
    state: Mutex<(HashMap<String, u32>, Vec<String>)>,
}

impl WhitespaceTokenizer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut state = self.state.lock().expect("tokenizer lock");
        let (index, words) = &mut *state;
        text.split_whitespace()
            .map(|w| {
                let w = w.to_lowercase();
                let next = words.len() as u32;
                let id = *index.entry(w.clone()).or_insert(next);
                if id == next {
                    words.push(w);
                }
                TokenId(id)
            })
            .collect()
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        let state = self.state.lock().expect("tokenizer lock");
        ids.iter()
            .filter_map(|id| state.1.get(id.index()).cloned())
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn bias_compatible(&self) -> bool {
        false
    }
}
