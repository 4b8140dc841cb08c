//! Access policies: propositional and/or formulae over attributes.
//!
//! Policies are parsed from text, flattened so that no `And` sits directly
//! under an `And` (likewise for `Or`), and compiled into threshold access
//! trees for secret sharing.

mod parser;
mod tree;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

pub use parser::parse_policy;
pub use tree::{compile, AccessTree};

pub const MAX_ATTRIBUTE_LEN: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("malformed attribute {token:?} at byte {offset}")]
    Attribute { offset: usize, token: String },
}

/// An attribute name: `[a-z0-9_]{1,64}`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AttributeId(String);

impl AttributeId {
    /// Validates and lowercases a candidate attribute token.
    pub fn new(name: &str) -> Result<Self, PolicyError> {
        let lower = name.to_ascii_lowercase();
        let valid = !lower.is_empty()
            && lower.len() <= MAX_ATTRIBUTE_LEN
            && lower
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_');
        if valid {
            Ok(Self(lower))
        } else {
            Err(PolicyError::Attribute {
                offset: 0,
                token: name.to_string(),
            })
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AttributeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for AttributeId {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

pub type AttributeSet = BTreeSet<AttributeId>;

/// Builds an attribute set from names, failing on the first malformed one.
pub fn attribute_set<I, S>(names: I) -> Result<AttributeSet, PolicyError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    names.into_iter().map(|n| AttributeId::new(n.as_ref())).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum PolicyAst {
    Leaf(AttributeId),
    And(Vec<PolicyAst>),
    Or(Vec<PolicyAst>),
}

impl PolicyAst {
    pub fn leaf(name: &str) -> Result<Self, PolicyError> {
        AttributeId::new(name).map(PolicyAst::Leaf)
    }

    /// Conjunction of `children`, splicing in any child conjunctions.
    /// A single child is returned unchanged.
    pub fn and(children: Vec<PolicyAst>) -> Self {
        Self::flattened(children, true)
    }

    /// Disjunction of `children`, splicing in any child disjunctions.
    pub fn or(children: Vec<PolicyAst>) -> Self {
        Self::flattened(children, false)
    }

    fn flattened(children: Vec<PolicyAst>, conj: bool) -> Self {
        let mut flat = Vec::with_capacity(children.len());
        for child in children {
            match child {
                PolicyAst::And(inner) if conj => flat.extend(inner),
                PolicyAst::Or(inner) if !conj => flat.extend(inner),
                other => flat.push(other),
            }
        }
        assert!(!flat.is_empty(), "connective needs at least one operand");
        if flat.len() == 1 {
            flat.pop().unwrap()
        } else if conj {
            PolicyAst::And(flat)
        } else {
            PolicyAst::Or(flat)
        }
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            PolicyAst::Leaf(_) => 1,
            PolicyAst::And(c) | PolicyAst::Or(c) => c.iter().map(Self::leaf_count).sum(),
        }
    }

    /// Nesting depth of connectives; a bare leaf has depth 0.
    pub fn depth(&self) -> usize {
        match self {
            PolicyAst::Leaf(_) => 0,
            PolicyAst::And(c) | PolicyAst::Or(c) => {
                1 + c.iter().map(Self::depth).max().unwrap_or(0)
            }
        }
    }

    /// True when the structural invariants hold: connectives have at least
    /// two children and never directly nest a connective of the same kind.
    pub fn is_canonical(&self) -> bool {
        match self {
            PolicyAst::Leaf(_) => true,
            PolicyAst::And(c) => {
                c.len() >= 2
                    && c.iter()
                        .all(|x| !matches!(x, PolicyAst::And(_)) && x.is_canonical())
            }
            PolicyAst::Or(c) => {
                c.len() >= 2
                    && c.iter()
                        .all(|x| !matches!(x, PolicyAst::Or(_)) && x.is_canonical())
            }
        }
    }
}

impl fmt::Display for PolicyAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (children, word) = match self {
            PolicyAst::Leaf(a) => return f.write_str(a.as_str()),
            PolicyAst::And(c) => (c, " and "),
            PolicyAst::Or(c) => (c, " or "),
        };
        f.write_str("(")?;
        for (i, child) in children.iter().enumerate() {
            if i > 0 {
                f.write_str(word)?;
            }
            child.fmt(f)?;
        }
        f.write_str(")")
    }
}

impl FromStr for PolicyAst {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_policy(s)
    }
}

/// Canonical, fully parenthesized lowercase rendering. This is the exact
/// form stored in ciphertext headers.
pub fn render_policy(ast: &PolicyAst) -> String {
    ast.to_string()
}

pub fn evaluate(ast: &PolicyAst, attrs: &AttributeSet) -> bool {
    match ast {
        PolicyAst::Leaf(a) => attrs.contains(a),
        PolicyAst::And(c) => c.iter().all(|x| evaluate(x, attrs)),
        PolicyAst::Or(c) => c.iter().any(|x| evaluate(x, attrs)),
    }
}

pub fn attributes_of(ast: &PolicyAst) -> AttributeSet {
    fn walk(ast: &PolicyAst, out: &mut AttributeSet) {
        match ast {
            PolicyAst::Leaf(a) => {
                out.insert(a.clone());
            }
            PolicyAst::And(c) | PolicyAst::Or(c) => c.iter().for_each(|x| walk(x, out)),
        }
    }
    let mut out = AttributeSet::new();
    walk(ast, &mut out);
    out
}

/// Parses then re-renders, yielding the canonical text of a policy.
/// Random policy over `universe` with at most `max_depth` levels of
/// connectives and two or three operands per connective.
pub fn random_policy<R: Rng + ?Sized>(
    rng: &mut R,
    universe: &[AttributeId],
    max_depth: usize,
) -> PolicyAst {
    assert!(!universe.is_empty(), "universe must not be empty");
    if max_depth == 0 || rng.gen_ratio(1, 4) {
        return PolicyAst::Leaf(universe[rng.gen_range(0..universe.len())].clone());
    }
    let arity = rng.gen_range(2..=3);
    let children = (0..arity)
        .map(|_| random_policy(rng, universe, max_depth - 1))
        .collect();
    if rng.gen() {
        PolicyAst::and(children)
    } else {
        PolicyAst::or(children)
    }
}

pub fn canonicalize(text: &str) -> Result<String, PolicyError> {
    parse_policy(text).map(|ast| render_policy(&ast))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn l(s: &str) -> PolicyAst {
        PolicyAst::leaf(s).unwrap()
    }

    const IMPORT_DECLARATION: &str = "(29837 and ((economic_operator) or (customs)))";

    #[test]
    fn attribute_tokens_are_lowercased_and_validated() {
        assert_eq!(AttributeId::new("Courier").unwrap().as_str(), "courier");
        assert!(AttributeId::new("").is_err());
        assert!(AttributeId::new("a b").is_err());
        assert!(AttributeId::new("a-b").is_err());
        assert!(AttributeId::new(&"x".repeat(64)).is_ok());
        assert!(AttributeId::new(&"x".repeat(65)).is_err());
    }

    #[test]
    fn render_examples() {
        assert_eq!(render_policy(&l("a")), "a");
        assert_eq!(render_policy(&PolicyAst::or(vec![l("x"), l("y")])), "(x or y)");
        let ast = PolicyAst::and(vec![
            l("29837"),
            PolicyAst::or(vec![l("courier"), l("customs")]),
        ]);
        assert_eq!(render_policy(&ast), "(29837 and (courier or customs))");
    }

    #[test]
    fn constructors_flatten() {
        let nested = PolicyAst::and(vec![l("a"), PolicyAst::and(vec![l("b"), l("c")])]);
        assert_eq!(nested, PolicyAst::And(vec![l("a"), l("b"), l("c")]));
        assert!(nested.is_canonical());
        assert_eq!(PolicyAst::or(vec![l("a")]), l("a"));
    }

    #[test]
    fn evaluate_import_declaration() {
        let ast = parse_policy(IMPORT_DECLARATION).unwrap();
        let customs = attribute_set(["29837", "customs"]).unwrap();
        let courier = attribute_set(["29837", "courier"]).unwrap();
        assert!(evaluate(&ast, &customs));
        assert!(!evaluate(&ast, &courier));
        assert!(evaluate(&ast, &attributes_of(&ast)));
        assert!(!evaluate(&ast, &AttributeSet::new()));
    }

    #[test]
    fn attributes_of_examples() {
        assert_eq!(attributes_of(&l("a")), attribute_set(["a"]).unwrap());
        assert_eq!(
            attributes_of(&parse_policy(IMPORT_DECLARATION).unwrap()),
            attribute_set(["29837", "economic_operator", "customs"]).unwrap()
        );
        assert_eq!(
            attributes_of(&PolicyAst::And(vec![l("a"), l("a")])),
            attribute_set(["a"]).unwrap()
        );
    }

    #[test]
    fn canonicalize_table_policies() {
        assert_eq!(
            canonicalize(IMPORT_DECLARATION).unwrap(),
            "(29837 and (economic_operator or customs))"
        );
    }
}
