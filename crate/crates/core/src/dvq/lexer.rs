use super::DvqError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum TokenKind {
    /// Identifier or keyword; classification happens in the parser.
    Word(String),
    Number(String),
    Str(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Star,
    Op(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub offset: usize,
}

impl Token {
    pub fn is_word(&self, keyword: &str) -> bool {
        matches!(&self.kind, TokenKind::Word(w) if w.eq_ignore_ascii_case(keyword))
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, DvqError> {
    let mut tokens = Vec::new();
    let mut chars = text.char_indices().peekable();
    let mut depth: Vec<usize> = Vec::new();

    while let Some(&(offset, c)) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let kind = match c {
            '(' => {
                chars.next();
                depth.push(offset);
                TokenKind::LParen
            }
            ')' => {
                chars.next();
                if depth.pop().is_none() {
                    return Err(DvqError::UnbalancedParens { offset });
                }
                TokenKind::RParen
            }
            ',' => {
                chars.next();
                TokenKind::Comma
            }
            '.' => {
                chars.next();
                TokenKind::Dot
            }
            '*' => {
                chars.next();
                TokenKind::Star
            }
            '=' => {
                chars.next();
                TokenKind::Op("=")
            }
            '!' => {
                chars.next();
                match chars.peek() {
                    Some(&(_, '=')) => {
                        chars.next();
                        TokenKind::Op("!=")
                    }
                    _ => {
                        return Err(DvqError::MalformedClause {
                            offset,
                            message: "expected '=' after '!'".into(),
                        })
                    }
                }
            }
            '<' => {
                chars.next();
                match chars.peek() {
                    Some(&(_, '=')) => {
                        chars.next();
                        TokenKind::Op("<=")
                    }
                    Some(&(_, '>')) => {
                        chars.next();
                        TokenKind::Op("<>")
                    }
                    _ => TokenKind::Op("<"),
                }
            }
            '>' => {
                chars.next();
                match chars.peek() {
                    Some(&(_, '=')) => {
                        chars.next();
                        TokenKind::Op(">=")
                    }
                    _ => TokenKind::Op(">"),
                }
            }
            '\'' | '"' => {
                let quote = c;
                chars.next();
                let mut value = String::new();
                let mut closed = false;
                while let Some((_, ch)) = chars.next() {
                    if ch == quote {
                        // doubled quote is an escaped quote
                        if matches!(chars.peek(), Some(&(_, q)) if q == quote) {
                            chars.next();
                            value.push(quote);
                            continue;
                        }
                        closed = true;
                        break;
                    }
                    value.push(ch);
                }
                if !closed {
                    return Err(DvqError::MalformedClause {
                        offset,
                        message: "unterminated string literal".into(),
                    });
                }
                TokenKind::Str(value)
            }
            c if c.is_ascii_digit() || (c == '-' && next_is_digit(text, offset)) => {
                let mut end = offset + c.len_utf8();
                chars.next();
                let mut seen_dot = false;
                while let Some(&(i, ch)) = chars.peek() {
                    if ch.is_ascii_digit() || (ch == '.' && !seen_dot) {
                        seen_dot |= ch == '.';
                        end = i + ch.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                TokenKind::Number(text[offset..end].to_string())
            }
            c if is_ident_start(c) => {
                let mut end = offset;
                while let Some(&(i, ch)) = chars.peek() {
                    if is_ident_char(ch) {
                        end = i + ch.len_utf8();
                        chars.next();
                    } else {
                        break;
                    }
                }
                TokenKind::Word(text[offset..end].to_string())
            }
            other => {
                return Err(DvqError::MalformedClause {
                    offset,
                    message: format!("unexpected character {other:?}"),
                })
            }
        };
        tokens.push(Token { kind, offset });
    }

    if let Some(offset) = depth.pop() {
        return Err(DvqError::UnbalancedParens { offset });
    }
    Ok(tokens)
}

fn next_is_digit(text: &str, offset: usize) -> bool {
    text[offset + 1..]
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_digit())
}
