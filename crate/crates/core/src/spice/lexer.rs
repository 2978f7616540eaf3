use super::ParseError;

/// One logical card: a physical line plus its `+` continuations, with
/// comments removed. `line` is the 1-based number of the first physical line.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Card {
    pub line: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Token {
    Word(String),
    Eq,
    LParen,
    RParen,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Item {
    Word(String),
    Param(String, String),
    /// `name(arg ...)`, e.g. a `sin(...)` source waveform.
    Func(String, Vec<String>),
}

fn strip_inline_comment(line: &str) -> &str {
    let mut end = line.len();
    if let Some(p) = line.find(';') {
        end = end.min(p);
    }
    // ` $ ` starts a comment in ngspice; a leading `$` does too
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'$' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            end = end.min(i);
            break;
        }
    }
    &line[..end]
}

/// Line number and text of the first non-blank line.
pub(crate) type FirstLine = (usize, String);

/// Splits raw text into logical cards. The first non-blank physical line is
/// also returned verbatim so the caller can decide whether it is a title.
pub(crate) fn logical_cards(text: &str) -> Result<(Option<FirstLine>, Vec<Card>), ParseError> {
    let mut cards: Vec<Card> = Vec::new();
    let mut first: Option<(usize, String)> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let raw = raw.trim_end_matches('\r');
        if first.is_none() && !raw.trim().is_empty() {
            first = Some((line_no, raw.trim().to_string()));
        }
        let trimmed = raw.trim_start();
        if trimmed.starts_with('*') {
            continue;
        }
        let body = strip_inline_comment(trimmed).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('+') {
            match cards.last_mut() {
                Some(prev) => {
                    prev.text.push(' ');
                    prev.text.push_str(rest.trim());
                }
                None => {
                    return Err(ParseError::Lex { line: line_no, message: "continuation line without a card".into() })
                }
            }
            continue;
        }
        cards.push(Card { line: line_no, text: body.to_string() });
    }
    Ok((first, cards))
}

/// Tokenizes one card. Commas separate like whitespace; `{...}` and `'...'`
/// expressions stay single words.
pub(crate) fn tokenize(text: &str, line: usize) -> Result<Vec<Token>, ParseError> {
    let mut out = Vec::new();
    let mut word = String::new();
    let mut depth = 0i32;
    let mut chars = text.chars().peekable();
    let flush = |word: &mut String, out: &mut Vec<Token>| {
        if !word.is_empty() {
            out.push(Token::Word(std::mem::take(word).to_ascii_lowercase()));
        }
    };
    while let Some(c) = chars.next() {
        match c {
            c if c.is_whitespace() || c == ',' => flush(&mut word, &mut out),
            '=' => {
                flush(&mut word, &mut out);
                out.push(Token::Eq);
            }
            '(' => {
                flush(&mut word, &mut out);
                depth += 1;
                out.push(Token::LParen);
            }
            ')' => {
                flush(&mut word, &mut out);
                depth -= 1;
                if depth < 0 {
                    return Err(ParseError::Lex { line, message: "unbalanced ')'".into() });
                }
                out.push(Token::RParen);
            }
            '{' | '\'' => {
                let close = if c == '{' { '}' } else { '\'' };
                word.push(c);
                let mut closed = false;
                for n in chars.by_ref() {
                    word.push(n);
                    if n == close {
                        closed = true;
                        break;
                    }
                }
                if !closed {
                    return Err(ParseError::Lex { line, message: format!("unterminated `{c}` expression") });
                }
            }
            '}' => return Err(ParseError::Lex { line, message: "unbalanced '}'".into() }),
            c if c.is_control() => {
                return Err(ParseError::Lex { line, message: format!("unexpected control character {c:?}") })
            }
            c => word.push(c),
        }
    }
    flush(&mut word, &mut out);
    if depth != 0 {
        return Err(ParseError::Lex { line, message: "unbalanced '('".into() });
    }
    Ok(out)
}

/// Groups tokens into positional words, `key=value` params and function
/// calls. With `functions == false` parentheses are only grouping and are
/// dropped (as on `.model` cards).
pub(crate) fn items(tokens: &[Token], line: usize, functions: bool) -> Result<Vec<Item>, ParseError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < tokens.len() {
        match &tokens[i] {
            Token::Word(w) => {
                match tokens.get(i + 1) {
                    Some(Token::Eq) => match tokens.get(i + 2) {
                        Some(Token::Word(v)) => {
                            out.push(Item::Param(w.clone(), v.clone()));
                            i += 3;
                        }
                        _ => return Err(ParseError::Lex { line, message: format!("`{w}=` has no value") }),
                    },
                    Some(Token::LParen) if functions => {
                        let mut args = Vec::new();
                        let mut depth = 0;
                        let mut j = i + 1;
                        loop {
                            match &tokens[j] {
                                Token::LParen => depth += 1,
                                Token::RParen => {
                                    depth -= 1;
                                    if depth == 0 {
                                        break;
                                    }
                                }
                                Token::Word(a) => args.push(a.clone()),
                                Token::Eq => args.push("=".into()),
                            }
                            j += 1;
                        }
                        out.push(Item::Func(w.clone(), args));
                        i = j + 1;
                    }
                    _ => {
                        out.push(Item::Word(w.clone()));
                        i += 1;
                    }
                }
            }
            Token::Eq => return Err(ParseError::Lex { line, message: "`=` without a parameter name".into() }),
            Token::LParen | Token::RParen => i += 1,
        }
    }
    Ok(out)
}
