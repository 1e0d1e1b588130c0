use sqlparser::dialect::GenericDialect;
use sqlparser::tokenizer::{Token, Tokenizer};

use crate::rng::short_hash;

/// Canonical text for duplicate detection: words lower-cased, whitespace and
/// comments dropped, tokens separated by single spaces, no trailing semicolon.
/// With `literal_placeholders`, numbers become `?num` and strings `?str`.
pub fn normalize_sql(sql: &str, literal_placeholders: bool) -> String {
    let tokens = match Tokenizer::new(&GenericDialect {}, sql).tokenize() {
        Ok(tokens) => tokens,
        Err(_) => {
            return sql
                .split_whitespace()
                .collect::<Vec<_>>()
                .join(" ")
                .to_lowercase()
        }
    };
    let mut parts: Vec<String> = tokens
        .iter()
        .filter(|t| !matches!(t, Token::Whitespace(_) | Token::EOF))
        .map(|t| match t {
            Token::Word(w) => w.value.to_lowercase(),
            Token::Number(..) if literal_placeholders => "?num".to_string(),
            Token::SingleQuotedString(_)
            | Token::DoubleQuotedString(_)
            | Token::NationalStringLiteral(_)
            | Token::EscapedStringLiteral(_)
                if literal_placeholders =>
            {
                "?str".to_string()
            }
            other => other.to_string(),
        })
        .collect();
    while parts.last().is_some_and(|p| p == ";") {
        parts.pop();
    }
    parts.join(" ")
}

/// Stable record id: hash of the literal-preserving normal form.
pub fn query_id(sql: &str) -> String {
    short_hash(&normalize_sql(sql, false), 16)
}
