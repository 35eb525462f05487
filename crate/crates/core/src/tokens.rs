//! Token-piece segmentation and budget helpers.
//!
//! The runtime needs token boundaries for advantage masking and token
//! budgets even when a backend returns plain text. Pieces are produced by a
//! deterministic char-class segmentation: a piece is either a maximal
//! alphanumeric run or a single non-alphanumeric char, with any preceding
//! whitespace glued to it. Every byte of the input belongs to exactly one
//! piece, so piece spans tile the text.

/// Split `text` into token pieces. Concatenating the pieces reproduces
/// `text` byte-exactly.
pub fn tokenize_pieces(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let bytes = text.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i < text.len() {
        // absorb leading whitespace into the upcoming piece
        while i < text.len() && (bytes[i] as char).is_ascii_whitespace() {
            i += 1;
        }
        if i >= text.len() {
            break;
        }
        let ch = text[i..].chars().next().unwrap();
        if ch.is_alphanumeric() {
            i += ch.len_utf8();
            while i < text.len() {
                let c = text[i..].chars().next().unwrap();
                if c.is_alphanumeric() {
                    i += c.len_utf8();
                } else {
                    break;
                }
            }
        } else {
            i += ch.len_utf8();
        }
        pieces.push(&text[start..i]);
        start = i;
    }
    if start < text.len() {
        // trailing whitespace
        pieces.push(&text[start..]);
    }
    pieces
}

/// Number of token pieces in `text`.
pub fn count_tokens(text: &str) -> usize {
    tokenize_pieces(text).len()
}

/// Approximate token count for opaque backends that return no token ids:
/// whitespace-delimited word count times 1.3, rounded up.
pub fn estimate_tokens(text: &str) -> usize {
    let words = text.split_whitespace().count();
    ((words as f64) * 1.3).ceil() as usize
}

/// Deterministic head-tail truncation: keep the first and last
/// `budget / 2` pieces (minus room for the elision marker) and join them
/// with a marker noting how many pieces were dropped. The output never
/// exceeds `budget` pieces.
pub fn head_tail_truncate(text: &str, budget: usize) -> String {
    let pieces = tokenize_pieces(text);
    if pieces.len() <= budget {
        return text.to_string();
    }
    // The marker itself costs pieces; measure it for the worst-case count.
    let elided = pieces.len();
    let marker = format!("\n[... {elided} tokens elided ...]\n");
    let marker_cost = count_tokens(&marker);
    if budget <= marker_cost {
        return pieces[..budget].concat();
    }
    let keep = budget - marker_cost;
    let head = keep / 2 + keep % 2;
    let tail = keep / 2;
    let dropped = pieces.len() - head - tail;
    let marker = format!("\n[... {dropped} tokens elided ...]\n");
    let mut out = String::new();
    out.push_str(&pieces[..head].concat());
    out.push_str(&marker);
    out.push_str(&pieces[pieces.len() - tail..].concat());
    out
}
