use super::{AttributeId, PolicyAst, PolicyError};

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    LParen,
    RParen,
    And,
    Or,
    Attr(AttributeId),
}

fn syntax(offset: usize, message: impl Into<String>) -> PolicyError {
    PolicyError::Syntax {
        offset,
        message: message.into(),
    }
}

fn is_word_byte(b: u8) -> bool {
    !b.is_ascii_whitespace() && b != b'(' && b != b')'
}

fn tokenize(text: &str) -> Result<Vec<(usize, Token)>, PolicyError> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        match b {
            b'(' => {
                tokens.push((i, Token::LParen));
                i += 1;
            }
            b')' => {
                tokens.push((i, Token::RParen));
                i += 1;
            }
            _ if b.is_ascii_whitespace() => i += 1,
            _ if b.is_ascii_alphanumeric() || b == b'_' => {
                let start = i;
                while i < bytes.len() && is_word_byte(bytes[i]) {
                    i += 1;
                }
                // word boundaries are ASCII, so this slice is on char boundaries
                let word = &text[start..i];
                let token = if word.eq_ignore_ascii_case("and") {
                    Token::And
                } else if word.eq_ignore_ascii_case("or") {
                    Token::Or
                } else {
                    let attr = AttributeId::new(word).map_err(|_| PolicyError::Attribute {
                        offset: start,
                        token: word.to_string(),
                    })?;
                    Token::Attr(attr)
                };
                tokens.push((start, token));
            }
            _ => {
                let ch = text[i..].chars().next().unwrap();
                return Err(syntax(i, format!("unexpected character {ch:?}")));
            }
        }
    }
    Ok(tokens)
}

struct Parser {
    tokens: Vec<(usize, Token)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.tokens.get(self.pos).map_or(self.end, |(o, _)| *o)
    }

    fn expr(&mut self) -> Result<PolicyAst, PolicyError> {
        let mut terms = vec![self.and_expr()?];
        while self.peek() == Some(&Token::Or) {
            self.pos += 1;
            terms.push(self.and_expr()?);
        }
        Ok(PolicyAst::or(terms))
    }

    fn and_expr(&mut self) -> Result<PolicyAst, PolicyError> {
        let mut factors = vec![self.atom()?];
        while self.peek() == Some(&Token::And) {
            self.pos += 1;
            factors.push(self.atom()?);
        }
        Ok(PolicyAst::and(factors))
    }

    fn atom(&mut self) -> Result<PolicyAst, PolicyError> {
        let offset = self.offset();
        match self.tokens.get(self.pos).map(|(_, t)| t.clone()) {
            Some(Token::Attr(a)) => {
                self.pos += 1;
                Ok(PolicyAst::Leaf(a))
            }
            Some(Token::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Token::RParen) {
                    return Err(syntax(self.offset(), "expected ')'"));
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Token::RParen) => Err(syntax(offset, "empty expression or unbalanced ')'")),
            Some(Token::And) | Some(Token::Or) => {
                Err(syntax(offset, "expected attribute or '(' before operator"))
            }
            None => Err(syntax(offset, "unexpected end of policy")),
        }
    }
}

/// Parses policy text into a flattened AST.
///
/// Grammar, keywords case-insensitive, `and` binding tighter than `or`:
///
/// ```text
/// expr     := and_expr ("or" and_expr)*
/// and_expr := atom ("and" atom)*
/// atom     := ATTRIBUTE | "(" expr ")"
/// ```
pub fn parse_policy(text: &str) -> Result<PolicyAst, PolicyError> {
    let tokens = tokenize(text)?;
    if tokens.is_empty() {
        return Err(syntax(0, "empty policy"));
    }
    let mut parser = Parser {
        tokens,
        pos: 0,
        end: text.len(),
    };
    let ast = parser.expr()?;
    if parser.pos != parser.tokens.len() {
        let message = match parser.peek() {
            Some(Token::RParen) => "unbalanced ')'",
            _ => "unexpected token after expression",
        };
        return Err(syntax(parser.offset(), message));
    }
    Ok(ast)
}
