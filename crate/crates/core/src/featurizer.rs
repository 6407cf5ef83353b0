//! Tokenization, vocabulary construction and TF-IDF feature vectors.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const NUM_TOKEN: &str = "<num>";
pub const DEFAULT_MIN_DF: usize = 2;

/// Lowercase, split on runs of non-alphanumeric characters, and fold
/// all-digit tokens into a single placeholder.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            if t.chars().all(|c| c.is_ascii_digit()) {
                NUM_TOKEN.to_string()
            } else {
                t.to_lowercase()
            }
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    total_documents: usize,
    min_df: usize,
    tokens: Vec<(String, usize)>,
}

/// Token → dense index map with document frequencies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabFile", into = "VocabFile")]
pub struct Vocabulary {
    tokens: Vec<String>,
    df: Vec<usize>,
    total_documents: usize,
    min_df: usize,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl From<VocabFile> for Vocabulary {
    fn from(f: VocabFile) -> Self {
        let (tokens, df): (Vec<_>, Vec<_>) = f.tokens.into_iter().unzip();
        Vocabulary::assemble(tokens, df, f.total_documents, f.min_df)
    }
}

impl From<Vocabulary> for VocabFile {
    fn from(v: Vocabulary) -> Self {
        VocabFile {
            total_documents: v.total_documents,
            min_df: v.min_df,
            tokens: v.tokens.into_iter().zip(v.df).collect(),
        }
    }
}

impl Vocabulary {
    fn assemble(
        tokens: Vec<String>,
        df: Vec<usize>,
        total_documents: usize,
        min_df: usize,
    ) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            df,
            total_documents,
            min_df,
            index,
        }
    }

    /// Keep tokens with document frequency ≥ `min_df`, ordered by descending
    /// df with ties broken lexicographically.
    pub fn build<S: AsRef<str>>(texts: &[S], min_df: usize) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            let uniq: HashSet<String> = tokenize(text.as_ref()).into_iter().collect();
            for t in uniq {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> =
            counts.into_iter().filter(|(_, c)| *c >= min_df).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let (tokens, df) = kept.into_iter().unzip();
        Vocabulary::assemble(tokens, df, texts.len(), min_df)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Feature dimension including the trailing bias slot.
    pub fn dim(&self) -> usize {
        self.tokens.len() + 1
    }

    pub fn bias_index(&self) -> usize {
        self.tokens.len()
    }

    pub fn total_documents(&self) -> usize {
        self.total_documents
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).map(|&i| i as usize)
    }

    pub fn df(&self, token: &str) -> Option<usize> {
        self.index_of(token).map(|i| self.df[i])
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn idf(&self, index: usize) -> f64 {
        ((1.0 + self.total_documents as f64) / (1.0 + self.df[index] as f64)).ln()
    }

    /// Content hash used to pair classifier parameters with their vocabulary.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.total_documents as u64).to_le_bytes());
        for (t, d) in self.tokens.iter().zip(&self.df) {
            h.update((t.len() as u64).to_le_bytes());
            h.update(t.as_bytes());
            h.update((*d as u64).to_le_bytes());
        }
        hex::encode(&h.finalize()[..16])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Sparse vector with strictly increasing indices and no stored zeros. The
/// last coordinate (`dim - 1`) is the bias feature and is always 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    indices: Vec<u32>,
    values: Vec<f64>,
    dim: usize,
}

impl FeatureVector {
    /// Build from (index, weight) pairs; sorts, drops zeros, rejects duplicates.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>, dim: usize) -> Result<Self> {
        pairs.retain(|&(_, w)| w != 0.0);
        pairs.sort_by_key(|&(i, _)| i);
        if pairs.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Contract("duplicate feature index".into()));
        }
        if pairs.last().is_some_and(|&(i, _)| i >= dim) {
            return Err(Error::Contract(format!(
                "feature index outside dimension {dim}"
            )));
        }
        Ok(FeatureVector {
            indices: pairs.iter().map(|&(i, _)| i as u32).collect(),
            values: pairs.iter().map(|&(_, w)| w).collect(),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, &v)| (i as usize, v))
    }

    /// L2 norm over all coordinates except the bias slot.
    pub fn content_norm(&self) -> f64 {
        let bias = self.dim - 1;
        self.iter()
            .filter(|&(i, _)| i != bias)
            .map(|(_, v)| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// TF-IDF weights, L2-normalized over the vocabulary coordinates, plus the
/// bias feature. Out-of-vocabulary tokens are dropped.
pub fn featurize(text: &str, vocab: &Vocabulary) -> FeatureVector {
    let mut tf: BTreeMap<usize, f64> = BTreeMap::new();
    for tok in tokenize(text) {
        if let Some(i) = vocab.index_of(&tok) {
            *tf.entry(i).or_default() += 1.0;
        }
    }
    let mut indices = Vec::with_capacity(tf.len() + 1);
    let mut values = Vec::with_capacity(tf.len() + 1);
    for (i, count) in tf {
        let w = count * vocab.idf(i);
        if w != 0.0 {
            indices.push(i as u32);
            values.push(w);
        }
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    indices.push(vocab.bias_index() as u32);
    values.push(1.0);
    FeatureVector {
        indices,
        values,
        dim: vocab.dim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_rules() {
        assert_eq!(
            tokenize("Mass 2.3 cm, stable."),
            ["mass", "<num>", "<num>", "cm", "stable"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("ABC abc"), ["abc", "abc"]);
        assert_eq!(tokenize("T2-weighted"), ["t2", "weighted"]);
    }

    #[test]
    fn vocab_min_df() {
        let v = Vocabulary::build(&["a b", "a c"], 2);
        assert_eq!(v.tokens(), ["a"]);
        let v = Vocabulary::build(&["a b", "a c"], 1);
        assert_eq!(v.tokens(), ["a", "b", "c"]);
        let v = Vocabulary::build(&["a a", "a"], 1);
        assert_eq!(v.df("a"), Some(2));
        assert_eq!(v.total_documents(), 2);
    }

    #[test]
    fn vocab_order_is_df_then_lexicographic() {
        let v = Vocabulary::build(&["z y x", "z y", "z w"], 1);
        assert_eq!(v.tokens(), ["z", "y", "w", "x"]);
        assert_eq!(v, Vocabulary::build(&["z y x", "z y", "z w"], 1));
    }

    #[test]
    fn all_oov_is_bias_only() {
        let v = Vocabulary::build(&["a b", "a c"], 1);
        let x = featurize("qqq zzz", &v);
        assert_eq!(x.iter().collect::<Vec<_>>(), vec![(3, 1.0)]);
        assert_eq!(x.dim(), 4);
    }

    #[test]
    fn token_in_every_document_has_zero_idf() {
        let v = Vocabulary::build(&["a b", "a c"], 1);
        let x = featurize("a", &v);
        assert_eq!(x.iter().collect::<Vec<_>>(), vec![(v.bias_index(), 1.0)]);
    }

    #[test]
    fn hand_computed_weights() {
        // docs: "a b", "a c"; N = 2. df(b) = df(c) = 1 → idf = ln(3/2).
        let v = Vocabulary::build(&["a b", "a c"], 1);
        let idf = (3.0f64 / 2.0).ln();
        assert!((v.idf(v.index_of("b").unwrap()) - idf).abs() < 1e-15);

        // "b b c": raw weights (2·idf, idf) → normalized (2, 1)/√5.
        let x = featurize("b b c", &v);
        let got: Vec<_> = x.iter().collect();
        let b = v.index_of("b").unwrap();
        let c = v.index_of("c").unwrap();
        assert_eq!(got.len(), 3);
        assert_eq!(got[0].0, b);
        assert!((got[0].1 - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(got[1].0, c);
        assert!((got[1].1 - 1.0 / 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(got[2], (v.bias_index(), 1.0));

        // Single token: normalization maps tf·ln(3/2) to 1.
        let x = featurize("b", &v);
        assert!((x.content_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vocab_json_roundtrip_keeps_fingerprint() {
        let v = Vocabulary::build(&["mass left", "mass right", "edema"], 1);
        let json = serde_json::to_string(&v).unwrap();
        let back: Vocabulary = serde_json::from_str(&json).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.fingerprint(), v.fingerprint());
        assert_eq!(back.index_of("mass"), Some(0));
        let other = Vocabulary::build(&["mass left"], 1);
        assert_ne!(other.fingerprint(), v.fingerprint());
    }

    #[test]
    fn from_pairs_validation() {
        let x = FeatureVector::from_pairs(vec![(2, 0.5), (0, 0.0), (1, 1.0)], 3).unwrap();
        assert_eq!(x.iter().collect::<Vec<_>>(), vec![(1, 1.0), (2, 0.5)]);
        assert!(FeatureVector::from_pairs(vec![(1, 1.0), (1, 2.0)], 3).is_err());
        assert!(FeatureVector::from_pairs(vec![(3, 1.0)], 3).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn norm_is_zero_or_one(docs in prop::collection::vec("[a-e ]{0,12}", 1..8), probe in "[a-g ]{0,16}") {
                let v = Vocabulary::build(&docs, 1);
                let x = featurize(&probe, &v);
                let n = x.content_norm();
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
                let idx: Vec<usize> = x.iter().map(|(i, _)| i).collect();
                prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(x.iter().all(|(_, w)| w > 0.0));
                prop_assert_eq!(x, featurize(&probe, &v));
            }
        }
    }
}
