/// Candidate SQL statements in a completion.
///
/// Fenced code blocks win when any of them contains SQL. Otherwise each
/// candidate runs from a `SELECT` (or a `WITH name AS (`) keyword to the next
/// `;` (kept), a blank line, or the end of the text.
pub fn extract_sql(completion: &str) -> Vec<String> {
    let fenced: Vec<String> = fenced_blocks(completion)
        .into_iter()
        .filter(|b| keyword_start(b, 0).is_some())
        .collect();
    if !fenced.is_empty() {
        return fenced;
    }
    let mut found = Vec::new();
    let mut from = 0;
    while let Some(start) = keyword_start(completion, from) {
        let rest = &completion[start..];
        let semicolon = rest.find(';').map(|i| i + 1);
        let blank = rest.find("\n\n").or_else(|| rest.find("\r\n\r\n"));
        let end = match (semicolon, blank) {
            (Some(s), Some(b)) => s.min(b),
            (Some(s), None) => s,
            (None, Some(b)) => b,
            (None, None) => rest.len(),
        };
        let candidate = rest[..end].trim();
        if !candidate.is_empty() {
            found.push(candidate.to_string());
        }
        from = start + end.max(1);
    }
    found
}

fn fenced_blocks(text: &str) -> Vec<String> {
    let mut blocks = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find("```") {
        let after = &rest[open + 3..];
        // skip the info string (e.g. "sql")
        let body_start = after.find('\n').map_or(after.len(), |i| i + 1);
        let body = &after[body_start..];
        let Some(close) = body.find("```") else {
            break;
        };
        let block = body[..close].trim();
        if !block.is_empty() {
            blocks.push(block.to_string());
        }
        rest = &body[close + 3..];
    }
    blocks
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offset of the first SQL-starting keyword at or after `from`.
fn keyword_start(text: &str, from: usize) -> Option<usize> {
    let bytes = text.as_bytes();
    let lower = text.to_ascii_lowercase();
    let mut i = from;
    while i < bytes.len() {
        if !text.is_char_boundary(i) || (i > 0 && is_word_byte(bytes[i - 1])) {
            i += 1;
            continue;
        }
        let tail = &lower[i..];
        let word_end = |n: usize| tail.as_bytes().get(n).is_none_or(|&b| !is_word_byte(b));
        if tail.starts_with("select") && word_end(6) {
            return Some(i);
        }
        if tail.starts_with("with") && word_end(4) && looks_like_cte(&tail[4..]) {
            return Some(i);
        }
        i += 1;
    }
    None
}

/// True for `[RECURSIVE] name [(cols)] AS (`.
fn looks_like_cte(after_with: &str) -> bool {
    let mut s = after_with.trim_start();
    if let Some(r) = s.strip_prefix("recursive") {
        if r.starts_with(char::is_whitespace) {
            s = r.trim_start();
        }
    }
    let name_len = s
        .bytes()
        .take_while(|&b| is_word_byte(b) || b == b'"')
        .count();
    if name_len == 0 {
        return false;
    }
    s = s[name_len..].trim_start();
    if s.starts_with('(') {
        match s.find(')') {
            Some(close) => s = s[close + 1..].trim_start(),
            None => return false,
        }
    }
    match s.strip_prefix("as") {
        Some(r) => r.trim_start().starts_with('('),
        None => false,
    }
}
