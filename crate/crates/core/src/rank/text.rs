//! IDF-weighted metadata text matching.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

/// Lower-cased alphanumeric tokens, deduplicated and sorted.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.chars().flat_map(char::to_lowercase).collect())
        .collect()
}

/// Document frequencies over the index's metadata corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextIdf {
    docs: u64,
    df: HashMap<String, u32>,
}

impl TextIdf {
    pub fn from_texts<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut idf = Self::default();
        for t in texts {
            idf.add(t);
        }
        idf
    }

    pub fn add(&mut self, text: &str) {
        self.docs += 1;
        for term in tokenize(text) {
            *self.df.entry(term).or_insert(0) += 1;
        }
    }

    pub fn merge(&mut self, other: &TextIdf) {
        self.docs += other.docs;
        for (t, c) in &other.df {
            *self.df.entry(t.clone()).or_insert(0) += c;
        }
    }

    pub fn doc_count(&self) -> u64 {
        self.docs
    }

    pub fn df(&self, term: &str) -> u32 {
        self.df.get(term).copied().unwrap_or(0)
    }

    /// `ln(1 + D / df)`; terms never seen in the corpus count as `df = 1`.
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.df(term).max(1) as f64;
        (1.0 + self.docs as f64 / df).ln()
    }
}

/// Sum of squared IDF over the distinct terms both texts share.
pub fn text_match_score(query: &str, candidate: &str, idf: &TextIdf) -> f64 {
    if query.is_empty() || candidate.is_empty() {
        return 0.0;
    }
    QueryText::new(query, idf).score(candidate)
}

/// A query text tokenized once, with each term's squared IDF, for scoring
/// many candidates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueryText {
    terms: Vec<(String, f64)>,
}

impl QueryText {
    pub fn new(query: &str, idf: &TextIdf) -> Self {
        let terms = tokenize(query)
            .into_iter()
            .map(|t| {
                let w = idf.idf(&t).powi(2);
                (t, w)
            })
            .collect();
        Self { terms }
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn score(&self, candidate: &str) -> f64 {
        let mut hit = vec![false; self.terms.len()];
        let mut buf = String::new();
        for token in candidate
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            buf.clear();
            buf.extend(token.chars().flat_map(char::to_lowercase));
            if let Ok(i) = self.terms.binary_search_by(|(t, _)| t.as_str().cmp(&buf)) {
                hit[i] = true;
            }
        }
        self.terms
            .iter()
            .zip(hit)
            .filter(|(_, h)| *h)
            .map(|((_, w), _)| w)
            .sum()
    }
}
