use std::collections::BTreeSet;

use super::{AttributeId, PolicyAst};

/// Threshold-gate form of a policy. Leaves are numbered `1..=L` in
/// left-to-right depth-first order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AccessTree {
    Gate {
        threshold: usize,
        children: Vec<AccessTree>,
    },
    Leaf {
        attribute: AttributeId,
        index: u32,
    },
}

impl AccessTree {
    /// All leaves as `(index, attribute)` in index order.
    pub fn leaves(&self) -> Vec<(u32, &AttributeId)> {
        fn walk<'a>(tree: &'a AccessTree, out: &mut Vec<(u32, &'a AttributeId)>) {
            match tree {
                AccessTree::Leaf { attribute, index } => out.push((*index, attribute)),
                AccessTree::Gate { children, .. } => children.iter().for_each(|c| walk(c, out)),
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    pub fn leaf_count(&self) -> usize {
        match self {
            AccessTree::Leaf { .. } => 1,
            AccessTree::Gate { children, .. } => children.iter().map(Self::leaf_count).sum(),
        }
    }

    /// Recursive threshold check over a set of available leaf indices.
    pub fn satisfied_by(&self, available: &BTreeSet<u32>) -> bool {
        match self {
            AccessTree::Leaf { index, .. } => available.contains(index),
            AccessTree::Gate {
                threshold,
                children,
            } => children.iter().filter(|c| c.satisfied_by(available)).count() >= *threshold,
        }
    }
}

/// And becomes an n-of-n gate, Or a 1-of-n gate. Repeated attributes get
/// distinct leaves.
pub fn compile(ast: &PolicyAst) -> AccessTree {
    fn go(ast: &PolicyAst, next: &mut u32) -> AccessTree {
        match ast {
            PolicyAst::Leaf(a) => {
                *next += 1;
                AccessTree::Leaf {
                    attribute: a.clone(),
                    index: *next,
                }
            }
            PolicyAst::And(c) => AccessTree::Gate {
                threshold: c.len(),
                children: c.iter().map(|x| go(x, next)).collect(),
            },
            PolicyAst::Or(c) => AccessTree::Gate {
                threshold: 1,
                children: c.iter().map(|x| go(x, next)).collect(),
            },
        }
    }
    let mut next = 0;
    go(ast, &mut next)
}
