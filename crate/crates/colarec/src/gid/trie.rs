//! Prefix trie over assigned identifiers. Decoding walks it to restrict
//! each generated token to children that actually lead to an item.

use super::{GidAssignment, GidError};

#[derive(Clone, Debug)]
struct TrieNode {
    /// (token, child node id), sorted ascending by token.
    children: Vec<(usize, usize)>,
    /// Set on depth-`l` leaves.
    item: Option<usize>,
}

/// Immutable K-ary prefix tree; every root-to-leaf path is exactly one
/// assigned identifier.
#[derive(Clone, Debug)]
pub struct GidTrie {
    k: usize,
    depth: usize,
    nodes: Vec<TrieNode>,
    n_leaves: usize,
}

impl GidTrie {
    pub const ROOT: usize = 0;

    pub fn from_assignment(assignment: &GidAssignment) -> Result<GidTrie, GidError> {
        let mut trie = GidTrie {
            k: assignment.k,
            depth: assignment.l,
            nodes: vec![TrieNode {
                children: Vec::new(),
                item: None,
            }],
            n_leaves: 0,
        };
        for (item, gid) in assignment.gids.iter().enumerate() {
            trie.insert(gid, item)?;
        }
        Ok(trie)
    }

    fn insert(&mut self, tokens: &[usize], item: usize) -> Result<(), GidError> {
        let mut node = Self::ROOT;
        for &tok in tokens {
            node = match self.nodes[node].children.binary_search_by_key(&tok, |c| c.0) {
                Ok(pos) => self.nodes[node].children[pos].1,
                Err(pos) => {
                    let id = self.nodes.len();
                    self.nodes.push(TrieNode {
                        children: Vec::new(),
                        item: None,
                    });
                    self.nodes[node].children.insert(pos, (tok, id));
                    id
                }
            };
        }
        if let Some(existing) = self.nodes[node].item {
            return Err(GidError::DuplicateGid {
                item_a: existing,
                item_b: item,
            });
        }
        self.nodes[node].item = Some(item);
        self.n_leaves += 1;
        Ok(())
    }

    /// Token fan-out bound (K).
    pub fn k(&self) -> usize {
        self.k
    }

    /// Identifier length (l).
    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    /// Populated children of a node: (token, child id), ascending by token.
    pub fn children(&self, node: usize) -> &[(usize, usize)] {
        &self.nodes[node].children
    }

    /// The item at a leaf node, if this node is a leaf.
    pub fn item(&self, node: usize) -> Option<usize> {
        self.nodes[node].item
    }

    /// Walk a full or partial token path from the root.
    pub fn walk(&self, tokens: &[usize]) -> Option<usize> {
        let mut node = Self::ROOT;
        for &tok in tokens {
            let pos = self.nodes[node]
                .children
                .binary_search_by_key(&tok, |c| c.0)
                .ok()?;
            node = self.nodes[node].children[pos].1;
        }
        Some(node)
    }

    /// All (path, item) pairs in depth-first ascending-token order.
    pub fn leaves(&self) -> Vec<(Vec<usize>, usize)> {
        let mut out = Vec::with_capacity(self.n_leaves);
        let mut stack = vec![(Self::ROOT, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if let Some(item) = self.nodes[node].item {
                out.push((path.clone(), item));
            }
            // push in reverse so ascending tokens pop first
            for &(tok, child) in self.nodes[node].children.iter().rev() {
                let mut p = path.clone();
                p.push(tok);
                stack.push((child, p));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gid::{build_random, GidStrategy};

    fn assignment_of(gids: Vec<Vec<usize>>, k: usize, l: usize) -> GidAssignment {
        GidAssignment {
            strategy: GidStrategy::Random,
            k,
            l,
            seed: 0,
            gids,
        }
    }

    #[test]
    fn children_match_hand_construction() {
        let a = assignment_of(vec![vec![0, 0], vec![0, 1], vec![1, 0]], 2, 2);
        let trie = GidTrie::from_assignment(&a).unwrap();
        let root_tokens: Vec<usize> = trie.children(GidTrie::ROOT).iter().map(|c| c.0).collect();
        assert_eq!(root_tokens, vec![0, 1]);
        let node0 = trie.walk(&[0]).unwrap();
        let node0_tokens: Vec<usize> = trie.children(node0).iter().map(|c| c.0).collect();
        assert_eq!(node0_tokens, vec![0, 1]);
        assert_eq!(trie.item(trie.walk(&[0, 1]).unwrap()), Some(1));
        assert_eq!(trie.item(trie.walk(&[1, 0]).unwrap()), Some(2));
        assert_eq!(trie.walk(&[1, 1]), None);
        assert_eq!(trie.n_leaves(), 3);
    }

    #[test]
    fn leaves_round_trip_the_assignment() {
        let a = build_random(200, 8, 3, 9).unwrap();
        let trie = GidTrie::from_assignment(&a).unwrap();
        assert_eq!(trie.n_leaves(), 200);
        let mut got: Vec<(Vec<usize>, usize)> = trie.leaves();
        got.sort_by_key(|(_, item)| *item);
        for (path, item) in got {
            assert_eq!(path, a.gids[item], "item {item}");
        }
    }

    #[test]
    fn duplicate_identifier_is_rejected() {
        let a = assignment_of(vec![vec![1, 2], vec![1, 2]], 3, 2);
        match GidTrie::from_assignment(&a) {
            Err(GidError::DuplicateGid { item_a: 0, item_b: 1 }) => {}
            other => panic!("expected duplicate error, got {other:?}"),
        }
    }

    #[test]
    fn large_random_assignment_has_full_leaf_count() {
        let a = build_random(10_000, 32, 3, 4).unwrap();
        let trie = GidTrie::from_assignment(&a).unwrap();
        assert_eq!(trie.n_leaves(), 10_000);
        // set-based oracle: distinct paths equal item count
        let set: std::collections::HashSet<Vec<usize>> = a.gids.iter().cloned().collect();
        assert_eq!(set.len(), 10_000);
    }
}
