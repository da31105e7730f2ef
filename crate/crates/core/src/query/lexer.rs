use chrono::{DateTime, Utc};

use super::SyntaxError;
use crate::value::{parse_datetime, Timespan};

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Str(String),
    Long(i64),
    Real(f64),
    Span(Timespan),
    DateTime(DateTime<Utc>),
    Bool(bool),
    Placeholder(String),
    Pipe,
    Comma,
    LParen,
    RParen,
    Assign,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub offset: usize,
}

pub struct Lexer<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
    /// Accept `{Key}` placeholders (filter predicates).
    placeholders: bool,
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str, placeholders: bool) -> Self {
        Lexer {
            src,
            bytes: src.as_bytes(),
            pos: 0,
            placeholders,
        }
    }

    pub fn tokenize(mut self) -> Result<Vec<Token>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            let t = self.next_token()?;
            let eof = t.tok == Tok::Eof;
            out.push(t);
            if eof {
                return Ok(out);
            }
        }
    }

    fn err(&self, offset: usize, msg: impl Into<String>) -> SyntaxError {
        SyntaxError::at(self.src, offset, msg)
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    fn peek_at(&self, n: usize) -> Option<u8> {
        self.bytes.get(self.pos + n).copied()
    }

    fn skip_ws(&mut self) {
        while let Some(b) = self.peek() {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'/' && self.peek_at(1) == Some(b'/') {
                while let Some(b) = self.peek() {
                    if b == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn next_token(&mut self) -> Result<Token, SyntaxError> {
        self.skip_ws();
        let start = self.pos;
        let Some(b) = self.peek() else {
            return Ok(Token {
                tok: Tok::Eof,
                offset: start,
            });
        };
        let two = |l: &mut Self, t: Tok| {
            l.pos += 2;
            t
        };
        let one = |l: &mut Self, t: Tok| {
            l.pos += 1;
            t
        };
        let tok = match b {
            b'|' => one(self, Tok::Pipe),
            b',' => one(self, Tok::Comma),
            b'(' => one(self, Tok::LParen),
            b')' => one(self, Tok::RParen),
            b'+' => one(self, Tok::Plus),
            b'-' => one(self, Tok::Minus),
            b'=' if self.peek_at(1) == Some(b'=') => two(self, Tok::EqEq),
            b'=' => one(self, Tok::Assign),
            b'!' if self.peek_at(1) == Some(b'=') => two(self, Tok::NotEq),
            b'<' if self.peek_at(1) == Some(b'=') => two(self, Tok::Le),
            b'<' => one(self, Tok::Lt),
            b'>' if self.peek_at(1) == Some(b'=') => two(self, Tok::Ge),
            b'>' => one(self, Tok::Gt),
            b'"' | b'\'' => self.string(b)?,
            b'{' => self.placeholder()?,
            b'0'..=b'9' => self.number()?,
            b if b.is_ascii_alphabetic() || b == b'_' => self.word()?,
            _ => {
                let c = self.src[start..].chars().next().unwrap_or('?');
                return Err(self.err(start, format!("unexpected character '{c}'")));
            }
        };
        Ok(Token { tok, offset: start })
    }

    fn string(&mut self, quote: u8) -> Result<Tok, SyntaxError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        loop {
            let Some(c) = self.src[self.pos..].chars().next() else {
                return Err(self.err(start, "unterminated string literal"));
            };
            self.pos += c.len_utf8();
            match c {
                c if c as u32 == quote as u32 => return Ok(Tok::Str(out)),
                '\\' => {
                    let Some(e) = self.src[self.pos..].chars().next() else {
                        return Err(self.err(start, "unterminated string literal"));
                    };
                    self.pos += e.len_utf8();
                    out.push(match e {
                        'n' => '\n',
                        't' => '\t',
                        'r' => '\r',
                        other => other,
                    });
                }
                c => out.push(c),
            }
        }
    }

    fn placeholder(&mut self) -> Result<Tok, SyntaxError> {
        let start = self.pos;
        let rest = &self.src[start + 1..];
        let end = rest.find('}');
        let name = end.map(|e| &rest[..e]);
        match name {
            Some(n) if is_ident(n) => {
                if !self.placeholders {
                    return Err(self.err(start, format!("unresolved placeholder '{{{n}}}'")));
                }
                self.pos = start + 1 + n.len() + 1;
                Ok(Tok::Placeholder(n.to_string()))
            }
            _ => Err(self.err(start, "unexpected character '{'")),
        }
    }

    fn number(&mut self) -> Result<Tok, SyntaxError> {
        let start = self.pos;
        while let Some(b) = self.peek() {
            if b.is_ascii_digit() || b == b'.' || b == b':' {
                self.pos += 1;
            } else {
                break;
            }
        }
        let body = &self.src[start..self.pos];
        if body.contains(':') {
            return Timespan::parse(body)
                .map(Tok::Span)
                .map_err(|e| self.err(start, e));
        }
        // exponent
        if matches!(self.peek(), Some(b'e' | b'E'))
            && (self.peek_at(1).is_some_and(|b| b.is_ascii_digit())
                || (matches!(self.peek_at(1), Some(b'+' | b'-'))
                    && self.peek_at(2).is_some_and(|b| b.is_ascii_digit())))
        {
            self.pos += 2;
            while self.peek().is_some_and(|b| b.is_ascii_digit()) {
                self.pos += 1;
            }
            let text = &self.src[start..self.pos];
            return text
                .parse::<f64>()
                .map(Tok::Real)
                .map_err(|_| self.err(start, format!("malformed number '{text}'")));
        }
        if self.peek().is_some_and(|b| b.is_ascii_alphabetic()) {
            while self.peek().is_some_and(|b| b.is_ascii_alphabetic()) {
                self.pos += 1;
            }
            let text = &self.src[start..self.pos];
            if body.contains('.') {
                return Err(self.err(start, format!("malformed duration '{text}'")));
            }
            return Timespan::parse(text)
                .map(Tok::Span)
                .map_err(|e| self.err(start, e));
        }
        if body.contains('.') {
            return body
                .parse::<f64>()
                .map(Tok::Real)
                .map_err(|_| self.err(start, format!("malformed number '{body}'")));
        }
        body.parse::<i64>()
            .map(Tok::Long)
            .map_err(|_| self.err(start, format!("integer '{body}' out of range")))
    }

    fn word(&mut self) -> Result<Tok, SyntaxError> {
        let start = self.pos;
        while self
            .peek()
            .is_some_and(|b| b.is_ascii_alphanumeric() || b == b'_')
        {
            self.pos += 1;
        }
        let word = &self.src[start..self.pos];
        match word {
            "true" => return Ok(Tok::Bool(true)),
            "false" => return Ok(Tok::Bool(false)),
            _ => {}
        }
        if matches!(word, "datetime" | "timespan" | "time") {
            let save = self.pos;
            self.skip_ws();
            if self.peek() == Some(b'(') {
                let open = self.pos;
                let close = self.src[open..]
                    .find(')')
                    .map(|i| open + i)
                    .ok_or_else(|| self.err(open, "unterminated literal"))?;
                let raw = self.src[open + 1..close].trim();
                let raw = raw.trim_matches(|c| c == '"' || c == '\'');
                self.pos = close + 1;
                if self.placeholders {
                    if let Some(inner) = raw.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                        if is_ident(inner) {
                            return Ok(Tok::Placeholder(inner.to_string()));
                        }
                    }
                }
                return if word == "datetime" {
                    parse_datetime(raw)
                        .map(Tok::DateTime)
                        .map_err(|e| self.err(open + 1, e))
                } else {
                    Timespan::parse(raw)
                        .map(Tok::Span)
                        .map_err(|e| self.err(open + 1, e))
                };
            }
            self.pos = save;
        }
        Ok(Tok::Ident(word.to_string()))
    }
}

fn is_ident(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        Lexer::new(s, false)
            .tokenize()
            .unwrap()
            .into_iter()
            .map(|t| t.tok)
            .collect()
    }

    #[test]
    fn durations_and_numbers() {
        assert_eq!(
            toks("1h 30m 0.01:00:00.000000 01:00:00 1.5 42 1e3"),
            vec![
                Tok::Span(Timespan::from_hours(1)),
                Tok::Span(Timespan::from_minutes(30)),
                Tok::Span(Timespan::from_hours(1)),
                Tok::Span(Timespan::from_hours(1)),
                Tok::Real(1.5),
                Tok::Long(42),
                Tok::Real(1000.0),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn datetime_literal_unquoted_and_quoted() {
        let a = toks("datetime(2024-01-01T00:00:00.000000Z)");
        let b = toks("datetime(\"2024-01-01\")");
        assert_eq!(a, b);
    }

    #[test]
    fn placeholders_only_in_filter_mode() {
        assert!(Lexer::new("{A} > 1", false).tokenize().is_err());
        let t: Vec<Tok> = Lexer::new("{A} > datetime({B})", true)
            .tokenize()
            .unwrap()
            .into_iter()
            .map(|t| t.tok)
            .collect();
        assert_eq!(t[0], Tok::Placeholder("A".into()));
        assert_eq!(t[2], Tok::Placeholder("B".into()));
    }

    #[test]
    fn string_escapes() {
        assert_eq!(toks(r#""a\"b""#)[0], Tok::Str("a\"b".into()));
        assert!(Lexer::new("\"open", false).tokenize().is_err());
    }
}
