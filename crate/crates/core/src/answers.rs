use std::collections::HashMap;

use serde::{Deserialize, Serialize};

/// The fixed answer set, kept in ascending id order so that ties in any
/// ranking resolve by answer id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct AnswerSet {
    ids: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for AnswerSet {
    fn from(mut ids: Vec<String>) -> Self {
        ids.sort();
        ids.dedup();
        let index = ids.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        Self { ids, index }
    }
}

impl From<AnswerSet> for Vec<String> {
    fn from(a: AnswerSet) -> Self {
        a.ids
    }
}

impl AnswerSet {
    pub fn new<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self::from(ids.into_iter().map(Into::into).collect::<Vec<_>>())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, i: usize) -> Option<&str> {
        self.ids.get(i).map(String::as_str)
    }
}
