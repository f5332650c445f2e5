//! Input-token vocabulary: a handful of reserved tokens, content words from
//! training items, one atomic token per user (uad) and per item (iad).

use std::collections::{BTreeSet, HashMap};

use crate::dataset::{InteractionDataset, Split};
use crate::text::tokenize;

/// Token id space, in fixed order: reserved ids, then sorted content words,
/// then user atomic ids, then item atomic ids. The layout is a pure
/// function of the dataset, so it never needs to be serialized.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    words: Vec<String>,
    word_ids: HashMap<String, usize>,
    n_users: usize,
    n_items: usize,
}

impl Vocabulary {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const COLON: usize = 2;
    pub const TASK_USER: usize = 3;
    pub const TASK_ITEM: usize = 4;
    const RESERVED: usize = 5;

    /// Build from the content of items that appear in at least one train
    /// interaction; words seen only on other items map to UNK.
    pub fn build(ds: &InteractionDataset) -> Vocabulary {
        let mut in_train = vec![false; ds.n_items()];
        for it in &ds.interactions {
            if it.split == Split::Train {
                in_train[it.item] = true;
            }
        }
        let mut words = BTreeSet::new();
        for (item, pairs) in ds.content.iter().enumerate() {
            if !in_train[item] {
                continue;
            }
            for (k, v) in pairs {
                words.extend(tokenize(k));
                words.extend(tokenize(v));
            }
        }
        let words: Vec<String> = words.into_iter().collect();
        let word_ids = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), Self::RESERVED + i))
            .collect();
        Vocabulary {
            words,
            word_ids,
            n_users: ds.n_users(),
            n_items: ds.n_items(),
        }
    }

    pub fn size(&self) -> usize {
        Self::RESERVED + self.words.len() + self.n_users + self.n_items
    }

    pub fn n_words(&self) -> usize {
        self.words.len()
    }

    /// Id of a word token, or UNK when out of vocabulary.
    pub fn word(&self, w: &str) -> usize {
        self.word_ids.get(w).copied().unwrap_or(Self::UNK)
    }

    /// Atomic token of a user.
    pub fn uad(&self, user: usize) -> usize {
        debug_assert!(user < self.n_users);
        Self::RESERVED + self.words.len() + user
    }

    /// Atomic token of an item.
    pub fn iad(&self, item: usize) -> usize {
        debug_assert!(item < self.n_items);
        Self::RESERVED + self.words.len() + self.n_users + item
    }

    /// Whether an id is a user atomic token.
    pub fn is_uad(&self, id: usize) -> bool {
        let base = Self::RESERVED + self.words.len();
        id >= base && id < base + self.n_users
    }
}
