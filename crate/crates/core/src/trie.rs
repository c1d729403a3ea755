//! Vocabulary trie in a flat, breadth-first node array.
//!
//! Serialized form (`EDST`), little-endian:
//!
//! ```text
//! 0   4   magic "EDST"
//! 4   8   node count (u64)
//! 12  20n node records: code (u32), flags (u32, bit 0 = word end),
//!         child_count (u32), child_offset (u64)
//! ```
//!
//! Node 0 is the root. The children of a node are contiguous, sorted by code,
//! and always stored after their parent, so a lookup reads only the records
//! along its path plus a binary search per level. Leaves store offset 0.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use crate::decoder::{Alphabet, Vocabulary};
use crate::rng::XorShift64Star;

pub const TRIE_MAGIC: [u8; 4] = *b"EDST";
pub const TRIE_HEADER_LEN: usize = 12;
pub const NODE_LEN: usize = 20;

const WORD_END: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TrieError {
    #[error("bad magic: expected \"EDST\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("truncated node array: need {needed} bytes, have {actual}")]
    Truncated { needed: u64, actual: u64 },
    #[error("word {word:?} contains {ch:?}, which is not a non-space alphabet character")]
    OutOfAlphabet {
        word: alloc::string::String,
        ch: char,
    },
    #[error("word list is empty")]
    NoWords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrieNode {
    pub code: u32,
    pub word_end: bool,
    pub child_count: u32,
    pub child_offset: u64,
}

impl TrieNode {
    fn encode(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.code.to_le_bytes());
        out.extend_from_slice(&(if self.word_end { WORD_END } else { 0 }).to_le_bytes());
        out.extend_from_slice(&self.child_count.to_le_bytes());
        out.extend_from_slice(&self.child_offset.to_le_bytes());
    }

    fn decode(b: &[u8]) -> Self {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        Self {
            code: u32_at(0),
            word_end: u32_at(4) & WORD_END != 0,
            child_count: u32_at(8),
            child_offset: u64::from_le_bytes(b[12..20].try_into().unwrap()),
        }
    }
}

/// Read access to a node array, wherever it lives.
pub trait TrieNodes {
    fn node_count(&self) -> u64;

    /// `None` past the end of the array.
    fn node(&self, index: u64) -> Option<TrieNode>;

    fn child(&self, parent: &TrieNode, code: u32) -> Option<TrieNode> {
        let (mut lo, mut hi) = (0u64, parent.child_count as u64);
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            let node = self.node(parent.child_offset.checked_add(mid)?)?;
            match node.code.cmp(&code) {
                core::cmp::Ordering::Equal => return Some(node),
                core::cmp::Ordering::Less => lo = mid + 1,
                core::cmp::Ordering::Greater => hi = mid,
            }
        }
        None
    }

    /// Node reached by spelling `prefix` from the root.
    fn walk(&self, prefix: &str) -> Option<TrieNode> {
        let mut node = self.node(0)?;
        for c in prefix.chars() {
            node = self.child(&node, c as u32)?;
        }
        Some(node)
    }

    fn contains(&self, word: &str) -> bool {
        !word.is_empty() && self.walk(word).is_some_and(|n| n.word_end)
    }

    fn has_prefix(&self, prefix: &str) -> bool {
        self.walk(prefix).is_some()
    }
}

/// Fully materialized trie.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabTrie {
    nodes: Vec<TrieNode>,
}

impl VocabTrie {
    /// Builds from a word list. Duplicates and empty entries are dropped; every
    /// character must belong to `ab` and must not be a space.
    pub fn build<S: AsRef<str>>(words: &[S], ab: &Alphabet) -> Result<Self, TrieError> {
        let mut spelled: Vec<Vec<u32>> = Vec::with_capacity(words.len());
        for w in words {
            let w = w.as_ref();
            if w.is_empty() {
                continue;
            }
            if let Some(ch) = w.chars().find(|&c| c == ' ' || ab.index_of(c).is_none()) {
                return Err(TrieError::OutOfAlphabet { word: w.into(), ch });
            }
            spelled.push(w.chars().map(|c| c as u32).collect());
        }
        if spelled.is_empty() {
            return Err(TrieError::NoWords);
        }
        spelled.sort_unstable();
        spelled.dedup();
        Ok(Self::from_sorted(&spelled))
    }

    /// Breadth-first layout. Each queued node owns the range of sorted words
    /// sharing its prefix of length `depth`.
    fn from_sorted(words: &[Vec<u32>]) -> Self {
        let mut nodes = alloc::vec![TrieNode {
            code: 0,
            word_end: false,
            child_count: 0,
            child_offset: 0,
        }];
        let mut queue = VecDeque::from([(0usize, 0usize, words.len(), 0usize)]);
        while let Some((index, mut lo, hi, depth)) = queue.pop_front() {
            if lo < hi && words[lo].len() == depth {
                nodes[index].word_end = true;
                lo += 1;
            }
            if lo == hi {
                continue;
            }
            nodes[index].child_offset = nodes.len() as u64;
            while lo < hi {
                let code = words[lo][depth];
                let end = lo + words[lo..hi].partition_point(|w| w[depth] <= code);
                queue.push_back((nodes.len(), lo, end, depth + 1));
                nodes.push(TrieNode {
                    code,
                    word_end: false,
                    child_count: 0,
                    child_offset: 0,
                });
                nodes[index].child_count += 1;
                lo = end;
            }
        }
        Self { nodes }
    }

    pub fn nodes(&self) -> &[TrieNode] {
        &self.nodes
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TRIE_HEADER_LEN + self.nodes.len() * NODE_LEN);
        out.extend_from_slice(&TRIE_MAGIC);
        out.extend_from_slice(&(self.nodes.len() as u64).to_le_bytes());
        for n in &self.nodes {
            n.encode(&mut out);
        }
        out
    }

    /// Materializes every node of a serialized trie.
    pub fn decode(bytes: &[u8]) -> Result<Self, TrieError> {
        let view = TrieView::new(bytes)?;
        let nodes = (0..view.count).filter_map(|i| view.node(i)).collect();
        Ok(Self { nodes })
    }

    /// Every stored word, in code-point order.
    pub fn words(&self) -> Vec<alloc::string::String> {
        let mut out = Vec::new();
        let mut stack = alloc::vec![(0usize, alloc::string::String::new())];
        while let Some((i, prefix)) = stack.pop() {
            let n = self.nodes[i];
            if n.word_end {
                out.push(prefix.clone());
            }
            for c in (0..n.child_count as usize).rev() {
                let ci = n.child_offset as usize + c;
                let mut p = prefix.clone();
                p.push(char::from_u32(self.nodes[ci].code).unwrap_or('\u{FFFD}'));
                stack.push((ci, p));
            }
        }
        out
    }
}

impl TrieNodes for VocabTrie {
    fn node_count(&self) -> u64 {
        self.nodes.len() as u64
    }

    fn node(&self, index: u64) -> Option<TrieNode> {
        self.nodes.get(usize::try_from(index).ok()?).copied()
    }
}

/// Zero-copy view over a serialized trie. Queries decode only the records
/// they visit.
#[derive(Debug, Clone, Copy)]
pub struct TrieView<'a> {
    bytes: &'a [u8],
    count: u64,
}

impl<'a> TrieView<'a> {
    /// Checks the header and overall length; node records are not read.
    pub fn new(bytes: &'a [u8]) -> Result<Self, TrieError> {
        let actual = bytes.len() as u64;
        if bytes.len() < 4 {
            return Err(TrieError::Truncated {
                needed: TRIE_HEADER_LEN as u64,
                actual,
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != TRIE_MAGIC {
            return Err(TrieError::BadMagic(magic));
        }
        if bytes.len() < TRIE_HEADER_LEN {
            return Err(TrieError::Truncated {
                needed: TRIE_HEADER_LEN as u64,
                actual,
            });
        }
        let count = u64::from_le_bytes(bytes[4..12].try_into().unwrap());
        let needed = count
            .checked_mul(NODE_LEN as u64)
            .and_then(|n| n.checked_add(TRIE_HEADER_LEN as u64))
            .unwrap_or(u64::MAX);
        if actual < needed {
            return Err(TrieError::Truncated { needed, actual });
        }
        Ok(Self { bytes, count })
    }
}

impl TrieNodes for TrieView<'_> {
    fn node_count(&self) -> u64 {
        self.count
    }

    fn node(&self, index: u64) -> Option<TrieNode> {
        if index >= self.count {
            return None;
        }
        let at = TRIE_HEADER_LEN + index as usize * NODE_LEN;
        Some(TrieNode::decode(&self.bytes[at..at + NODE_LEN]))
    }
}

impl Vocabulary for VocabTrie {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

impl Vocabulary for TrieView<'_> {
    fn contains_word(&self, word: &str) -> bool {
        self.contains(word)
    }
}

/// Synthetic word list: `count` words of 1 to `max_len` characters drawn
/// uniformly from the non-space characters of `ab`. Per word, one draw picks
/// the length (`1 + below(max_len)`), then one draw per character picks its
/// index. Duplicates are kept.
pub fn gen_words(
    seed: u64,
    count: usize,
    max_len: usize,
    ab: &Alphabet,
) -> Vec<alloc::string::String> {
    let pool: Vec<char> = ab.chars().iter().copied().filter(|&c| c != ' ').collect();
    let mut rng = XorShift64Star::new(seed);
    if pool.is_empty() || max_len == 0 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let len = 1 + rng.below(max_len as u64) as usize;
            (0..len)
                .map(|_| pool[rng.below(pool.len() as u64) as usize])
                .collect()
        })
        .collect()
}
