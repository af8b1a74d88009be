//! Tokenizer, vocabulary, and the query/document input template.
//!
//! The tokenizer lowercases, splits alphanumeric runs, and emits every other
//! non-whitespace character as its own token, so `"Who? He said."` becomes
//! `[who, ?, he, said, .]`. It can never produce a special token: specials
//! contain `<` and `>` which always split.
//!
//! Special ids are fixed low ids so checkpoints and vocab files agree:
//! pad = 0, unk = 1, empty-document = 2, then a block of reserved sentinel
//! tokens `<unused_0>` … `<unused_15>` at ids 3..19. Sentinels are never
//! produced by text and exist to serve as scoring targets for the
//! decoder-logit head. Regular text ids start at 19.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::DataError;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EMPTY_DOC_TOKEN: &str = "<empty>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const EMPTY_DOC_ID: usize = 2;
pub const SENTINEL_COUNT: usize = 16;
/// First id available to tokens learned from text.
pub const FIRST_TEXT_ID: usize = 3 + SENTINEL_COUNT;

/// Id of reserved sentinel token `<unused_k>`.
pub fn sentinel_id(k: usize) -> usize {
    assert!(k < SENTINEL_COUNT, "sentinel {k} out of range");
    3 + k
}

/// Lowercased word/punctuation tokenization. Alphanumeric runs form tokens;
/// every other non-whitespace character is a single-character token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_string());
            }
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// Token/id table with fixed special ids. Built from a corpus by frequency
/// (ties broken by first occurrence), persisted as `token<TAB>id` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, usize>,
    id_to_token: Vec<String>,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut id_to_token: Vec<String> = vec![
            PAD_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
            EMPTY_DOC_TOKEN.to_string(),
        ];
        for k in 0..SENTINEL_COUNT {
            id_to_token.push(format!("<unused_{k}>"));
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary {
            token_to_id,
            id_to_token,
        }
    }

    /// Builds a vocabulary of at most `max_size` entries (specials included)
    /// from an iterator of raw texts. Tokens are ranked by frequency, ties
    /// by first occurrence, so the result is deterministic in corpus order.
    pub fn build<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        max_size: usize,
    ) -> Result<Self, DataError> {
        if max_size <= FIRST_TEXT_ID {
            return Err(DataError::VocabTooSmall {
                got: max_size,
                need: FIRST_TEXT_ID + 1,
            });
        }
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        let mut seen = 0usize;
        for text in texts {
            for token in tokenize(text) {
                let entry = counts.entry(token).or_insert((0, seen));
                entry.0 += 1;
                seen += 1;
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then(a.1 .1.cmp(&b.1 .1)));
        let mut vocab = Vocabulary::with_specials();
        for (token, _) in ranked.into_iter().take(max_size - FIRST_TEXT_ID) {
            let id = vocab.id_to_token.len();
            vocab.token_to_id.insert(token.clone(), id);
            vocab.id_to_token.push(token);
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false // specials are always present
    }

    /// Id for a token, falling back to `<unk>`.
    pub fn id(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.id_to_token.get(id).map(String::as_str)
    }

    /// Tokenizes and maps to ids in one step.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut out = String::new();
        for (id, token) in self.id_to_token.iter().enumerate() {
            writeln!(out, "{token}\t{id}").expect("string write");
        }
        fs::write(path, out).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let body = fs::read_to_string(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut id_to_token = Vec::new();
        for (lineno, line) in body.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (token, id_str) = line.split_once('\t').ok_or_else(|| DataError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: "expected token<TAB>id".into(),
            })?;
            let id: usize = id_str.parse().map_err(|_| DataError::Parse {
                path: path.display().to_string(),
                line: lineno + 1,
                message: format!("bad id {id_str:?}"),
            })?;
            if id != id_to_token.len() {
                return Err(DataError::Parse {
                    path: path.display().to_string(),
                    line: lineno + 1,
                    message: format!("ids must be contiguous from 0, got {id}"),
                });
            }
            id_to_token.push(token.to_string());
        }
        let specials = Vocabulary::with_specials();
        if id_to_token.len() < specials.len()
            || id_to_token[..specials.len()] != specials.id_to_token[..]
        {
            return Err(DataError::Parse {
                path: path.display().to_string(),
                line: 1,
                message: "special tokens missing or not at their fixed ids".into(),
            });
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token,
        })
    }
}

/// One model input: the rendered template text, its token ids, and whether
/// truncation dropped anything. When the document is empty, `token_ids`
/// carries the `<empty>` marker id, which has no surface form in `text`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    pub text: String,
    pub token_ids: Vec<usize>,
    pub truncated: bool,
}

/// Options for [`build_input`].
#[derive(Debug, Clone)]
pub struct TemplateOptions {
    pub max_seq_len: usize,
    /// Append the `Relevant:` cue after the document (generation-style).
    pub with_postfix: bool,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        TemplateOptions {
            max_seq_len: 128,
            with_postfix: false,
        }
    }
}

/// Renders `Query: {q} Document: {d}` (plus the optional `Relevant:`
/// postfix) into a token sequence of at most `max_seq_len` ids. Overflow is
/// resolved by truncating document tokens from the tail first, then query
/// tokens; template tokens always survive. An empty query is an error; an
/// empty document becomes the `<empty>` marker token.
pub fn build_input(
    query: &str,
    doc: &str,
    vocab: &Vocabulary,
    opts: &TemplateOptions,
) -> Result<InputSequence, DataError> {
    let q_tokens = tokenize(query);
    if q_tokens.is_empty() {
        return Err(DataError::EmptyQuery);
    }
    let d_tokens = tokenize(doc);
    let prefix_q = ["query".to_string(), ":".to_string()];
    let prefix_d = ["document".to_string(), ":".to_string()];
    let postfix: &[String] = if opts.with_postfix {
        &["relevant".to_string(), ":".to_string()][..]
    } else {
        &[]
    };
    let template_len = prefix_q.len() + prefix_d.len() + postfix.len();
    if opts.max_seq_len < template_len + 1 {
        return Err(DataError::MaxSeqLenTooSmall {
            got: opts.max_seq_len,
            need: template_len + 1,
        });
    }
    let budget = opts.max_seq_len - template_len;
    let doc_is_empty = d_tokens.is_empty();
    // Document slot costs one position even when empty (the marker token).
    let d_cost = d_tokens.len().max(1);
    let (q_keep, d_keep) = if q_tokens.len() + d_cost <= budget {
        (q_tokens.len(), d_tokens.len())
    } else if q_tokens.len() < budget {
        // Document truncates first.
        (q_tokens.len(), budget - q_tokens.len())
    } else {
        // Query itself overflows: keep one document position, trim the query.
        (budget - 1, d_tokens.len().min(1))
    };
    let d_keep = d_keep.min(d_tokens.len());
    let truncated = q_keep < q_tokens.len() || d_keep < d_tokens.len();

    let mut surface: Vec<&str> = Vec::with_capacity(opts.max_seq_len);
    let mut ids: Vec<usize> = Vec::with_capacity(opts.max_seq_len);
    for t in prefix_q.iter().chain(q_tokens.iter().take(q_keep)) {
        surface.push(t);
        ids.push(vocab.id(t));
    }
    for t in prefix_d.iter() {
        surface.push(t);
        ids.push(vocab.id(t));
    }
    if doc_is_empty {
        ids.push(EMPTY_DOC_ID);
    } else {
        for t in d_tokens.iter().take(d_keep) {
            surface.push(t);
            ids.push(vocab.id(t));
        }
    }
    for t in postfix {
        surface.push(t);
        ids.push(vocab.id(t));
    }
    debug_assert!(ids.len() <= opts.max_seq_len);
    Ok(InputSequence {
        text: surface.join(" "),
        token_ids: ids,
        truncated,
    })
}
