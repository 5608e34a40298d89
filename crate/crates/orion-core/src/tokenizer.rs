//! Byte-level BPE tokenizer of the GPT-2 family. The same algorithm serves
//! both reference models; they differ only in vocab and merge files.
//!
//! Text is first split by the GPT-2 pre-tokenization pattern
//! `'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+`,
//! each piece is mapped byte-by-byte into the printable byte alphabet, and
//! merges are applied lowest rank first.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use hashbrown::HashMap;

use crate::error::{OrionError, Result};

/// GPT-2's invertible byte -> unicode char table. Printable latin bytes map
/// to themselves; the rest are relocated above U+0100.
fn byte_char_table() -> [char; 256] {
    let mut table = ['\0'; 256];
    let mut shift = 0u32;
    for b in 0u32..256 {
        let printable =
            (33..=126).contains(&b) || (161..=172).contains(&b) || (174..=255).contains(&b);
        table[b as usize] = if printable {
            char::from_u32(b).unwrap()
        } else {
            let c = char::from_u32(256 + shift).unwrap();
            shift += 1;
            c
        };
    }
    table
}

/// Split per the GPT-2 pattern. Alternatives are tried in the regex order at
/// each position; `\s+(?!\S)` keeps the final whitespace char available as
/// the ` ` prefix of a following word.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let n = chars.len();
    let end_of = |i: usize| -> usize {
        if i < n {
            chars[i].0
        } else {
            text.len()
        }
    };
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let (start, c) = chars[i];
        // Contractions, lowercase only.
        if c == '\'' && i + 1 < n {
            let c1 = chars[i + 1].1;
            let c2 = if i + 2 < n { Some(chars[i + 2].1) } else { None };
            let len = match (c1, c2) {
                ('r', Some('e')) | ('v', Some('e')) | ('l', Some('l')) => 3,
                ('s', _) | ('t', _) | ('m', _) | ('d', _) => 2,
                _ => 0,
            };
            if len > 0 {
                out.push(&text[start..end_of(i + len)]);
                i += len;
                continue;
            }
        }
        // ` ?` prefix applies only to the literal space.
        if c == ' ' && i + 1 < n {
            let c2 = chars[i + 1].1;
            if c2.is_alphabetic() {
                let mut j = i + 1;
                while j < n && chars[j].1.is_alphabetic() {
                    j += 1;
                }
                out.push(&text[start..end_of(j)]);
                i = j;
                continue;
            }
            if c2.is_numeric() {
                let mut j = i + 1;
                while j < n && chars[j].1.is_numeric() {
                    j += 1;
                }
                out.push(&text[start..end_of(j)]);
                i = j;
                continue;
            }
            if !c2.is_whitespace() {
                let mut j = i + 1;
                while j < n && !chars[j].1.is_whitespace() && !chars[j].1.is_alphabetic() && !chars[j].1.is_numeric() {
                    j += 1;
                }
                out.push(&text[start..end_of(j)]);
                i = j;
                continue;
            }
        }
        if c.is_alphabetic() {
            let mut j = i;
            while j < n && chars[j].1.is_alphabetic() {
                j += 1;
            }
            out.push(&text[start..end_of(j)]);
            i = j;
            continue;
        }
        if c.is_numeric() {
            let mut j = i;
            while j < n && chars[j].1.is_numeric() {
                j += 1;
            }
            out.push(&text[start..end_of(j)]);
            i = j;
            continue;
        }
        if !c.is_whitespace() {
            let mut j = i;
            while j < n && !chars[j].1.is_whitespace() && !chars[j].1.is_alphabetic() && !chars[j].1.is_numeric() {
                j += 1;
            }
            out.push(&text[start..end_of(j)]);
            i = j;
            continue;
        }
        // Whitespace run.
        let mut j = i;
        while j < n && chars[j].1.is_whitespace() {
            j += 1;
        }
        if j < n && j - i >= 2 {
            // `\s+(?!\S)` backtracks one char before a non-space.
            out.push(&text[start..chars[j - 1].0]);
            i = j - 1;
        } else {
            out.push(&text[start..end_of(j)]);
            i = j;
        }
    }
    out
}

#[derive(Debug)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    ranks: HashMap<(String, String), u32>,
    byte_to_char: [char; 256],
    char_to_byte: HashMap<char, u8>,
    /// Beginning-of-text marker usable by prompt templates, if the vocab
    /// defines one.
    special: Option<(String, u32)>,
}

pub const BOT_MARKER: &str = "<|endoftext|>";

impl Vocabulary {
    /// Build from the two interchange files: a JSON token -> id map and a
    /// merges list (one `left right` pair per line, rank = line order,
    /// `#version` header tolerated).
    pub fn from_parts(vocab_json: &str, merges_txt: &str) -> Result<Self> {
        let token_to_id_tree: BTreeMap<String, u32> = serde_json::from_str(vocab_json)
            .map_err(|e| OrionError::Tokenizer(alloc::format!("vocab json: {e}")))?;
        let n = token_to_id_tree.len();
        let mut id_to_token = alloc::vec![String::new(); n];
        let mut token_to_id = HashMap::with_capacity(n);
        let mut seen = alloc::vec![false; n];
        for (tok, id) in token_to_id_tree {
            let idx = id as usize;
            if idx >= n {
                return Err(OrionError::Tokenizer(alloc::format!(
                    "vocab ids must be dense in [0, {n}); found id {id}"
                )));
            }
            if seen[idx] {
                return Err(OrionError::Tokenizer(alloc::format!("duplicate vocab id {id}")));
            }
            seen[idx] = true;
            id_to_token[idx] = tok.clone();
            token_to_id.insert(tok, id);
        }
        if let Some(hole) = seen.iter().position(|s| !s) {
            return Err(OrionError::Tokenizer(alloc::format!("vocab id {hole} missing; ids must be dense")));
        }

        let mut ranks = HashMap::new();
        let mut rank = 0u32;
        for line in merges_txt.lines() {
            let line = line.trim_end_matches('\r');
            if line.is_empty() || line.starts_with("#version") {
                continue;
            }
            let mut it = line.splitn(2, ' ');
            let (a, b) = match (it.next(), it.next()) {
                (Some(a), Some(b)) if !a.is_empty() && !b.is_empty() => (a, b),
                _ => {
                    return Err(OrionError::Tokenizer(alloc::format!("bad merges line: {line:?}")));
                }
            };
            ranks.insert((a.to_string(), b.to_string()), rank);
            rank += 1;
        }

        let byte_to_char = byte_char_table();
        let mut char_to_byte = HashMap::with_capacity(256);
        for (b, c) in byte_to_char.iter().enumerate() {
            char_to_byte.insert(*c, b as u8);
        }
        let special = token_to_id.get(BOT_MARKER).map(|id| (BOT_MARKER.to_string(), *id));
        Ok(Self { token_to_id, id_to_token, ranks, byte_to_char, char_to_byte, special })
    }

    pub fn vocab_size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn bot_id(&self) -> Option<u32> {
        self.special.as_ref().map(|(_, id)| *id)
    }

    fn map_bytes(&self, piece: &str) -> String {
        piece.bytes().map(|b| self.byte_to_char[b as usize]).collect()
    }

    /// BPE over one pre-token already in byte-mapped space.
    fn bpe(&self, word: &str) -> Result<Vec<u32>> {
        let mut parts: Vec<String> = word.chars().map(|c| c.to_string()).collect();
        while parts.len() > 1 {
            let mut best: Option<(u32, usize)> = None;
            for i in 0..parts.len() - 1 {
                let key = (parts[i].clone(), parts[i + 1].clone());
                if let Some(r) = self.ranks.get(&key) {
                    if best.map_or(true, |(br, _)| *r < br) {
                        best = Some((*r, i));
                    }
                }
            }
            let Some((_, at)) = best else { break };
            // Merge every non-overlapping occurrence of the best pair,
            // left to right, as the reference implementation does.
            let (la, lb) = (parts[at].clone(), parts[at + 1].clone());
            let mut merged = Vec::with_capacity(parts.len());
            let mut i = 0;
            while i < parts.len() {
                if i + 1 < parts.len() && parts[i] == la && parts[i + 1] == lb {
                    merged.push(alloc::format!("{la}{lb}"));
                    i += 2;
                } else {
                    merged.push(core::mem::take(&mut parts[i]));
                    i += 1;
                }
            }
            parts = merged;
        }
        parts
            .iter()
            .map(|p| {
                self.token_to_id
                    .get(p)
                    .copied()
                    .ok_or_else(|| OrionError::Tokenizer(alloc::format!("symbol {p:?} not in vocab")))
            })
            .collect()
    }

    /// Plain BPE encoding; no special-token interpretation.
    pub fn encode(&self, text: &str) -> Result<Vec<u32>> {
        let mut ids = Vec::new();
        for piece in pretokenize(text) {
            let mapped = self.map_bytes(piece);
            ids.extend(self.bpe(&mapped)?);
        }
        Ok(ids)
    }

    /// Encoding for rendered prompts: a leading beginning-of-text marker
    /// (when the vocab defines one) becomes its dedicated id instead of
    /// being split by BPE. Templates control whether the marker appears.
    pub fn encode_prompt(&self, text: &str) -> Result<Vec<u32>> {
        if let Some((marker, id)) = &self.special {
            if let Some(rest) = text.strip_prefix(marker.as_str()) {
                let mut ids = alloc::vec![*id];
                ids.extend(self.encode(rest)?);
                return Ok(ids);
            }
        }
        self.encode(text)
    }

    /// Inverse of `encode` on its image; out-of-range ids are the only error.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            let tok = self
                .id_to_token
                .get(id as usize)
                .ok_or_else(|| OrionError::Tokenizer(alloc::format!("id {id} out of range")))?;
            for c in tok.chars() {
                match self.char_to_byte.get(&c) {
                    Some(b) => bytes.push(*b),
                    // Tolerate raw chars so byte-mapped and literal special
                    // tokens both survive a round trip.
                    None => {
                        let mut buf = [0u8; 4];
                        bytes.extend_from_slice(c.encode_utf8(&mut buf).as_bytes());
                    }
                }
            }
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    pub fn token_id(&self, s: &str) -> Option<u32> {
        match self.encode(s) {
            Ok(ids) if ids.len() == 1 => Some(ids[0]),
            _ => None,
        }
    }

    pub fn is_single_token(&self, s: &str) -> bool {
        self.token_id(s).is_some()
    }

    /// Direct lookup of a token string already in vocab spelling.
    pub fn id_of_token(&self, tok: &str) -> Option<u32> {
        self.token_to_id.get(tok).copied()
    }

    pub fn token_of_id(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(|s| s.as_str())
    }

    /// The first BPE token of `text`, as the raw string it decodes to.
    /// Labels of generated tasks use this to stay single-token by
    /// construction.
    pub fn first_token_str(&self, text: &str) -> Result<String> {
        let ids = self.encode(text)?;
        match ids.first() {
            Some(&id) => self.decode(&[id]),
            None => Err(OrionError::Tokenizer("empty text has no first token".into())),
        }
    }

    /// Deterministic vocabulary for hermetic tests: the 256 byte tokens, the
    /// beginning-of-text marker, and merge chains making each given word one
    /// token. Other text still encodes through the byte tokens.
    pub fn synthetic(words: &[&str]) -> Result<Self> {
        let table = byte_char_table();
        let mut tokens: Vec<String> = table.iter().map(|c| String::from(*c)).collect();
        tokens.push(BOT_MARKER.into());
        let mut have: HashMap<String, ()> = tokens.iter().map(|t| (t.clone(), ())).collect();
        let mut merges: Vec<(String, String)> = Vec::new();
        let mut merged: HashMap<(String, String), ()> = HashMap::new();
        let mut add_chain = |word: &str, tokens: &mut Vec<String>, merges: &mut Vec<(String, String)>| {
            let mapped: Vec<char> = word.bytes().map(|b| table[b as usize]).collect();
            let mut acc: String = match mapped.first() {
                Some(c) => String::from(*c),
                None => return,
            };
            for c in &mapped[1..] {
                let pair = (acc.clone(), String::from(*c));
                acc.push(*c);
                if merged.insert(pair.clone(), ()).is_none() {
                    merges.push(pair);
                }
                if have.insert(acc.clone(), ()).is_none() {
                    tokens.push(acc.clone());
                }
            }
        };
        for w in words {
            add_chain(w, &mut tokens, &mut merges);
        }
        // A word's chain can be shadowed by an earlier word's lower-ranked
        // merges; extend chains from the observed segmentation until every
        // word is one token.
        for _ in 0..64 {
            let vocab = Self::build_synthetic(&tokens, &merges)?;
            let mut clean = true;
            for w in words {
                if w.is_empty() || vocab.is_single_token(w) {
                    continue;
                }
                clean = false;
                let ids = vocab.encode(w)?;
                let parts: Vec<String> =
                    ids.iter().map(|id| vocab.id_to_token[*id as usize].clone()).collect();
                let mut acc = parts[0].clone();
                for p in &parts[1..] {
                    let pair = (acc.clone(), p.clone());
                    acc.push_str(p);
                    if merged.insert(pair.clone(), ()).is_none() {
                        merges.push(pair);
                    }
                    if have.insert(acc.clone(), ()).is_none() {
                        tokens.push(acc.clone());
                    }
                }
            }
            if clean {
                return Ok(vocab);
            }
        }
        Err(OrionError::Tokenizer("synthetic vocabulary failed to converge".into()))
    }

    fn build_synthetic(tokens: &[String], merges: &[(String, String)]) -> Result<Self> {
        let map: BTreeMap<&str, u32> =
            tokens.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
        if map.len() != tokens.len() {
            return Err(OrionError::Tokenizer("duplicate synthetic token".into()));
        }
        let vocab_json = serde_json::to_string(&map)
            .map_err(|e| OrionError::Tokenizer(alloc::format!("synthetic vocab: {e}")))?;
        let mut merges_txt = String::new();
        for (a, b) in merges {
            merges_txt.push_str(a);
            merges_txt.push(' ');
            merges_txt.push_str(b);
            merges_txt.push('\n');
        }
        Self::from_parts(&vocab_json, &merges_txt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::vec;

    #[test]
    fn byte_table_is_invertible() {
        let table = byte_char_table();
        let mut seen = alloc::collections::BTreeSet::new();
        for c in table {
            assert!(seen.insert(c), "duplicate mapping for {c:?}");
        }
        assert_eq!(table[b'A' as usize], 'A');
        assert_eq!(table[b' ' as usize], '\u{120}'); // 'Ġ'
        assert_eq!(table[b'\n' as usize], '\u{10a}'); // 'Ċ'
    }

    #[test]
    fn pretokenize_matches_reference_cases() {
        // Expected values follow the published GPT-2 pattern semantics.
        let cases: &[(&str, &[&str])] = &[
            ("Hello world", &["Hello", " world"]),
            ("it's here", &["it", "'s", " here"]),
            ("we're 42 fine!", &["we", "'re", " 42", " fine", "!"]),
            ("  spaced", &[" ", " spaced"]),
            ("a\n\nb", &["a", "\n", "\n", "b"]),
            ("tab\tx", &["tab", "\t", "x"]),
            ("trail  ", &["trail", "  "]),
            ("num123x", &["num", "123", "x"]),
            ("¡hola señor!", &["¡", "hola", " señor", "!"]),
            ("A:B", &["A", ":", "B"]),
            ("x 'y", &["x", " '", "y"]),
        ];
        for (text, want) in cases {
            assert_eq!(&pretokenize(text), want, "input {text:?}");
        }
    }

    fn tiny_vocab() -> Vocabulary {
        // Alphabet pieces plus two merges: l+o -> lo, lo+w -> low.
        let mut entries = vec![];
        for (i, t) in ["l", "o", "w", "e", "r", "Ġ", "lo", "low", "<|endoftext|>"].iter().enumerate() {
            entries.push(format!("\"{}\": {}", t.replace('Ġ', "\\u0120"), i));
        }
        let vocab_json = format!("{{{}}}", entries.join(","));
        let merges = "#version: 0.2\nl o\nlo w\n";
        Vocabulary::from_parts(&vocab_json, merges).expect("tiny vocab")
    }

    #[test]
    fn bpe_applies_merges_in_rank_order() {
        let v = tiny_vocab();
        let ids = v.encode("lower").unwrap();
        // low + e + r
        assert_eq!(ids, vec![7, 3, 4]);
        assert_eq!(v.decode(&ids).unwrap(), "lower");
    }

    #[test]
    fn encode_prompt_consumes_leading_marker() {
        let v = tiny_vocab();
        let ids = v.encode_prompt("<|endoftext|>lo").unwrap();
        assert_eq!(ids[0], 8);
        assert_eq!(&ids[1..], &[6]);
        // Without the marker the same text must go through plain BPE.
        assert!(v.encode("lo").unwrap() == vec![6]);
    }

    #[test]
    fn vocab_rejects_sparse_ids() {
        let err = Vocabulary::from_parts("{\"a\": 0, \"b\": 2}", "").unwrap_err();
        assert!(format!("{err}").contains("dense"));
    }

    #[test]
    fn single_token_queries() {
        let v = tiny_vocab();
        assert!(v.is_single_token("low"));
        assert!(!v.is_single_token("lower"));
        assert_eq!(v.token_id("low"), Some(7));
        assert_eq!(v.first_token_str("lower").unwrap(), "low");
    }
}
