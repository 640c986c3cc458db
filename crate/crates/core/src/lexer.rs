use crate::error::AstError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(String),
    Punct(&'static str),
    /// Text after `#pragma`, whitespace-collapsed.
    Pragma(String),
    Eof,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

// Longest first so that `<=` wins over `<`.
const PUNCTS: &[&str] = &[
    "->", "++", "--", "+=", "-=", "*=", "/=", "%=", "<=", ">=", "==", "!=", "&&", "||", "<<", ">>", "(", ")", "[", "]",
    "{", "}", ";", ",", "+", "-", "*", "/", "%", "<", ">", "=", "!", "&", "|", "^", "~", "?", ":", ".",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, AstError> {
    let chars: Vec<char> = src.chars().collect();
    let mut toks = Vec::new();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    let mut at_line_start = true;

    macro_rules! bump {
        () => {{
            if chars[i] == '\n' {
                line += 1;
                col = 1;
                at_line_start = true;
            } else {
                col += 1;
            }
            i += 1;
        }};
    }

    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            bump!();
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (l0, c0) = (line, col);
            bump!();
            bump!();
            loop {
                if i >= chars.len() {
                    return Err(AstError::syntax(l0, c0, "unterminated comment"));
                }
                if chars[i] == '*' && chars.get(i + 1) == Some(&'/') {
                    bump!();
                    bump!();
                    break;
                }
                bump!();
            }
            continue;
        }
        let (tl, tc) = (line, col);
        if c == '#' {
            if !at_line_start {
                return Err(AstError::syntax(tl, tc, "`#` must start a line"));
            }
            let start = i;
            while i < chars.len() && chars[i] != '\n' {
                bump!();
            }
            let text: String = chars[start + 1..i].iter().collect();
            let mut words = text.split_whitespace();
            match words.next() {
                Some("pragma") => {
                    let rest: Vec<&str> = words.collect();
                    toks.push(Token {
                        tok: Tok::Pragma(rest.join(" ")),
                        line: tl,
                        col: tc,
                    });
                }
                other => {
                    return Err(AstError::Unsupported {
                        line: tl,
                        col: tc,
                        construct: format!("preprocessor directive #{}", other.unwrap_or("")),
                    })
                }
            }
            continue;
        }
        at_line_start = false;
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                bump!();
            }
            toks.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                line: tl,
                col: tc,
            });
            continue;
        }
        if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && chars[i].is_ascii_digit() {
                bump!();
            }
            if i < chars.len() && chars[i] == '.' {
                is_float = true;
                bump!();
                while i < chars.len() && chars[i].is_ascii_digit() {
                    bump!();
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let save = (i, line, col);
                bump!();
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    bump!();
                }
                if i < chars.len() && chars[i].is_ascii_digit() {
                    is_float = true;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        bump!();
                    }
                } else {
                    (i, line, col) = save;
                }
            }
            if i < chars.len() && (chars[i] == 'f' || chars[i] == 'F') && is_float {
                bump!();
            }
            let text: String = chars[start..i].iter().collect();
            if i < chars.len() && (chars[i].is_ascii_alphabetic() || chars[i] == '_') {
                return Err(AstError::syntax(tl, tc, format!("malformed number `{text}`")));
            }
            let tok = if is_float {
                Tok::Float(text)
            } else {
                Tok::Int(
                    text.parse()
                        .map_err(|_| AstError::syntax(tl, tc, "integer literal out of range"))?,
                )
            };
            toks.push(Token { tok, line: tl, col: tc });
            continue;
        }
        if c == '"' || c == '\'' {
            return Err(AstError::Unsupported {
                line: tl,
                col: tc,
                construct: "string or character literal".into(),
            });
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        let Some(p) = PUNCTS.iter().find(|p| rest.starts_with(**p)) else {
            return Err(AstError::syntax(tl, tc, format!("unexpected character `{c}`")));
        };
        for _ in 0..p.len() {
            bump!();
        }
        toks.push(Token {
            tok: Tok::Punct(p),
            line: tl,
            col: tc,
        });
    }
    toks.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(toks)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<Tok> {
        tokenize(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn numbers_and_operators() {
        assert_eq!(
            kinds("c[i] += 1.5e-3*x--;"),
            vec![
                Tok::Ident("c".into()),
                Tok::Punct("["),
                Tok::Ident("i".into()),
                Tok::Punct("]"),
                Tok::Punct("+="),
                Tok::Float("1.5e-3".into()),
                Tok::Punct("*"),
                Tok::Ident("x".into()),
                Tok::Punct("--"),
                Tok::Punct(";"),
                Tok::Eof
            ]
        );
    }

    #[test]
    fn pragma_lines_are_single_tokens() {
        let toks = kinds("  #pragma   stml reads c in {-1,0,+1}\nx;");
        assert_eq!(toks[0], Tok::Pragma("stml reads c in {-1,0,+1}".into()));
    }

    #[test]
    fn other_directives_are_rejected() {
        let err = tokenize("#include <stdio.h>\n").unwrap_err();
        assert!(matches!(err, AstError::Unsupported { .. }));
    }

    #[test]
    fn comments_are_skipped() {
        assert_eq!(
            kinds("a /* x */ // y\n;"),
            vec![Tok::Ident("a".into()), Tok::Punct(";"), Tok::Eof]
        );
    }
}
