use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::KnowledgeTriple;
use crate::error::{Error, Result};

/// Registry assigning one token per distinct entity string.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tokens<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Vocab::new();
        for t in tokens {
            v.intern(&t);
        }
        v
    }

    /// Token id for `s`, registering it when new.
    pub fn intern(&mut self, s: &str) -> usize {
        if let Some(&i) = self.index.get(s) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(s.to_string());
        self.index.insert(s.to_string(), i);
        i
    }

    pub fn get(&self, s: &str) -> Option<usize> {
        self.index.get(s).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Rebuilds the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    /// Tokenizes a triple, growing the registry as needed.
    pub fn fact_from_triple(&mut self, t: &KnowledgeTriple) -> Fact {
        Fact {
            subject: vec![self.intern(&t.subject)],
            relation: vec![self.intern(&t.relation)],
            object: self.intern(&t.object),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Fact {
    pub subject: Vec<usize>,
    pub relation: Vec<usize>,
    pub object: usize,
}

impl Fact {
    pub fn new(subject: Vec<usize>, relation: Vec<usize>, object: usize) -> Result<Self> {
        if subject.is_empty() {
            return Err(Error::EmptyInput("fact subject"));
        }
        if relation.is_empty() {
            return Err(Error::EmptyInput("fact relation"));
        }
        Ok(Fact {
            subject,
            relation,
            object,
        })
    }

    /// Input sequence: subject tokens followed by relation tokens.
    pub fn prompt(&self) -> Vec<usize> {
        let mut p = self.subject.clone();
        p.extend_from_slice(&self.relation);
        p
    }

    pub fn last_subject_pos(&self) -> usize {
        self.subject.len() - 1
    }

    pub fn max_token(&self) -> usize {
        self.subject
            .iter()
            .chain(&self.relation)
            .copied()
            .chain([self.object])
            .max()
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRequest {
    pub fact: Fact,
    pub new_object: usize,
}

impl EditRequest {
    pub fn new(fact: Fact, new_object: usize) -> Self {
        EditRequest { fact, new_object }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interning_is_stable() {
        let mut v = Vocab::new();
        let t = KnowledgeTriple::new("v1→v2→v1", "has distance of", "2").unwrap();
        let f = v.fact_from_triple(&t);
        assert_eq!(f, Fact::new(vec![0], vec![1], 2).unwrap());
        let g = v.fact_from_triple(&KnowledgeTriple::new("x", "has distance of", "2").unwrap());
        assert_eq!(g.prompt(), vec![3, 1]);
        assert_eq!(g.object, 2);
        assert_eq!(v.len(), 4);
        let mut back: Vocab = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
        back.reindex();
        assert_eq!(back.get("x"), Some(3));
    }
}
