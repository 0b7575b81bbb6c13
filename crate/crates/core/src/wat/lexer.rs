use super::parser::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum TokenKind {
    LParen,
    RParen,
    Atom(String),
    Str(String),
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub kind: TokenKind,
    pub line: usize,
    pub col: usize,
}

impl Token {
    pub fn describe(&self) -> String {
        match &self.kind {
            TokenKind::LParen => "`(`".into(),
            TokenKind::RParen => "`)`".into(),
            TokenKind::Atom(a) => format!("`{a}`"),
            TokenKind::Str(s) => format!("string {s:?}"),
        }
    }
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::CharIndices<'a>>,
    src: &'a str,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn bump(&mut self) -> Option<char> {
        let (_, c) = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&mut self) -> Option<char> {
        self.chars.peek().map(|&(_, c)| c)
    }

    fn peek2(&mut self) -> Option<char> {
        let (i, c) = *self.chars.peek()?;
        self.src[i + c.len_utf8()..].chars().next()
    }
}

fn is_atom_char(c: char) -> bool {
    !c.is_whitespace() && !matches!(c, '(' | ')' | '"' | ';')
}

pub(crate) fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut cur = Cursor { chars: src.char_indices().peekable(), src, line: 1, col: 1 };
    let mut out = Vec::new();
    while let Some(c) = cur.peek() {
        let (line, col) = (cur.line, cur.col);
        match c {
            c if c.is_whitespace() => {
                cur.bump();
            }
            ';' if cur.peek2() == Some(';') => {
                while let Some(c) = cur.peek() {
                    if c == '\n' {
                        break;
                    }
                    cur.bump();
                }
            }
            '(' if cur.peek2() == Some(';') => {
                cur.bump();
                cur.bump();
                let mut depth = 1;
                loop {
                    match cur.bump() {
                        None => {
                            return Err(ParseError::Syntax {
                                line,
                                col,
                                expected: "`;)` closing block comment".into(),
                                found: "end of input".into(),
                            })
                        }
                        Some('(') if cur.peek() == Some(';') => {
                            cur.bump();
                            depth += 1;
                        }
                        Some(';') if cur.peek() == Some(')') => {
                            cur.bump();
                            depth -= 1;
                            if depth == 0 {
                                break;
                            }
                        }
                        Some(_) => {}
                    }
                }
            }
            '(' => {
                cur.bump();
                out.push(Token { kind: TokenKind::LParen, line, col });
            }
            ')' => {
                cur.bump();
                out.push(Token { kind: TokenKind::RParen, line, col });
            }
            '"' => {
                cur.bump();
                let mut s = String::new();
                loop {
                    match cur.bump() {
                        None | Some('\n') => {
                            return Err(ParseError::Syntax {
                                line,
                                col,
                                expected: "closing `\"`".into(),
                                found: "end of line".into(),
                            })
                        }
                        Some('"') => break,
                        Some('\\') => match cur.bump() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('\\') => s.push('\\'),
                            Some('"') => s.push('"'),
                            Some('\'') => s.push('\''),
                            other => {
                                return Err(ParseError::Unsupported {
                                    line,
                                    col,
                                    construct: format!("string escape \\{}", other.unwrap_or(' ')),
                                })
                            }
                        },
                        Some(c) => s.push(c),
                    }
                }
                out.push(Token { kind: TokenKind::Str(s), line, col });
            }
            ';' => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    expected: "token".into(),
                    found: "`;`".into(),
                })
            }
            _ => {
                let mut s = String::new();
                while let Some(c) = cur.peek() {
                    if !is_atom_char(c) {
                        break;
                    }
                    s.push(c);
                    cur.bump();
                }
                out.push(Token { kind: TokenKind::Atom(s), line, col });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokenKind> {
        tokenize(src).unwrap().into_iter().map(|t| t.kind).collect()
    }

    #[test]
    fn skips_both_comment_styles() {
        let k = kinds("(func (;0;) ;; trailing\n i32.const 1 (; a (; nested ;) one ;))");
        assert_eq!(
            k,
            vec![
                TokenKind::LParen,
                TokenKind::Atom("func".into()),
                TokenKind::Atom("i32.const".into()),
                TokenKind::Atom("1".into()),
                TokenKind::RParen,
            ]
        );
    }

    #[test]
    fn tracks_positions() {
        let toks = tokenize("(module\n  (func))").unwrap();
        assert_eq!((toks[2].line, toks[2].col), (2, 3));
    }

    #[test]
    fn unterminated_comment_is_an_error() {
        assert!(tokenize("(; open").is_err());
    }
}
