//! Word-level tokenization and the normalization rules shared by the
//! index, the metrics, and the surrogate model.
//!
//! The tokenizer is deliberately simple: split on Unicode whitespace,
//! then peel a maximal run of trailing punctuation off each chunk into
//! its own token. Offsets are character indices into the source, so a
//! response can always be reassembled byte-for-byte from its tokens
//! plus the gaps between them.

/// Punctuation that gets peeled off the end of a whitespace-delimited chunk.
const TRAILING_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\''];

/// A tokenized text: the tokens plus, for each, its `(start, end)`
/// character range in the source. Ranges are strictly increasing and
/// never overlap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized {
    pub tokens: Vec<String>,
    pub offsets: Vec<(usize, usize)>,
}

impl Tokenized {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Split `text` into word tokens.
///
/// Each maximal run of non-whitespace characters becomes one token,
/// except that a maximal run of trailing punctuation (`.,!?;:"'`)
/// splits off as its own token: `"blue."` tokenizes to `blue` + `.`.
/// Case is preserved; callers that need case-insensitive keys lowercase
/// at the point of use.
pub fn tokenize(text: &str) -> Tokenized {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();

    let mut chunk_start = 0usize; // in chars
    let mut chunk: Vec<char> = Vec::new();
    let flush = |start: usize, chunk: &mut Vec<char>, tokens: &mut Vec<String>, offsets: &mut Vec<(usize, usize)>| {
        if chunk.is_empty() {
            return;
        }
        let end = start + chunk.len();
        // Find where the trailing punctuation run begins.
        let mut punct_at = chunk.len();
        while punct_at > 0 && TRAILING_PUNCT.contains(&chunk[punct_at - 1]) {
            punct_at -= 1;
        }
        if punct_at == 0 || punct_at == chunk.len() {
            // All punctuation, or none trailing: the chunk is one token.
            tokens.push(chunk.iter().collect());
            offsets.push((start, end));
        } else {
            tokens.push(chunk[..punct_at].iter().collect());
            offsets.push((start, start + punct_at));
            tokens.push(chunk[punct_at..].iter().collect());
            offsets.push((start + punct_at, end));
        }
        chunk.clear();
    };

    for (i, ch) in text.chars().enumerate() {
        if ch.is_whitespace() {
            flush(chunk_start, &mut chunk, &mut tokens, &mut offsets);
        } else {
            if chunk.is_empty() {
                chunk_start = i;
            }
            chunk.push(ch);
        }
    }
    flush(chunk_start, &mut chunk, &mut tokens, &mut offsets);

    Tokenized { tokens, offsets }
}

/// Rebuild the source text from a tokenization and the original string.
/// Exists mainly so tests can assert the round-trip invariant.
pub fn detokenize(source: &str, tok: &Tokenized) -> String {
    let chars: Vec<char> = source.chars().collect();
    let mut out = String::new();
    let mut cursor = 0usize;
    for (i, (start, end)) in tok.offsets.iter().enumerate() {
        // Gap before this token.
        out.extend(chars[cursor..*start].iter());
        out.push_str(&tok.tokens[i]);
        cursor = *end;
    }
    out.extend(chars[cursor..].iter());
    out
}

/// Collapse every whitespace run to a single space and trim the ends.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace- and case-normalized form used for containment checks.
pub fn normalize_match(text: &str) -> String {
    normalize_ws(text).to_lowercase()
}

/// True when `needle` occurs in `haystack` after both are normalized.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    normalize_match(haystack).contains(&normalize_match(needle))
}

/// Slice a string by character range. Ranges come from [`Tokenized`]
/// offsets or from splice plans, which both count chars, not bytes.
pub fn slice_chars(text: &str, start: usize, end: usize) -> String {
    text.chars().skip(start).take(end.saturating_sub(start)).collect()
}

/// Character length of a string.
pub fn char_len(text: &str) -> usize {
    text.chars().count()
}
