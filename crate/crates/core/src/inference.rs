//! Greedy antecedent decoding and consolidation of links into clusters.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::Result;
use crate::model::Model;
use crate::pair::PairScoreMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Antecedent {
    /// No antecedent; the dummy score is fixed at 0.
    Dummy,
    Mention(usize),
}

/// `a_i` for every mention `i`.
pub type AntecedentAssignment = Vec<Antecedent>;

/// Pick the highest-scoring earlier mention when its score is positive.
/// Ties go to the earliest antecedent; a best score of exactly 0 goes to the
/// dummy.
pub fn decode_antecedents(scores: &PairScoreMatrix) -> AntecedentAssignment {
    (0..scores.mentions())
        .map(|i| {
            let mut best = Antecedent::Dummy;
            let mut best_score = 0.0;
            for (j, &s) in scores.row(i).iter().enumerate() {
                if s > best_score {
                    best = Antecedent::Mention(j);
                    best_score = s;
                }
            }
            best
        })
        .collect()
}

/// Partition of mention indices. Clusters are sorted by their smallest
/// member and members are ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Clustering(Vec<Vec<usize>>);

impl Clustering {
    /// Canonicalizes order; does not check disjointness.
    pub fn new(mut clusters: Vec<Vec<usize>>) -> Self {
        clusters.retain(|c| !c.is_empty());
        for c in &mut clusters {
            c.sort_unstable();
        }
        clusters.sort_unstable_by_key(|c| c[0]);
        Self(clusters)
    }

    /// One cluster per distinct label, mentions in index order.
    pub fn from_labels<L: PartialEq>(labels: &[L]) -> Self {
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        let mut seen: Vec<&L> = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            match seen.iter().position(|s| *s == l) {
                Some(c) => clusters[c].push(i),
                None => {
                    seen.push(l);
                    clusters.push(vec![i]);
                }
            }
        }
        Self::new(clusters)
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mention_count(&self) -> usize {
        self.0.iter().map(Vec::len).sum()
    }

    pub fn without_singletons(&self) -> Self {
        Self(self.0.iter().filter(|c| c.len() > 1).cloned().collect())
    }

    /// Exhaustive and disjoint over `0..k`.
    pub fn is_partition_of(&self, k: usize) -> bool {
        let mut seen = vec![false; k];
        for &m in self.0.iter().flatten() {
            if m >= k || seen[m] {
                return false;
            }
            seen[m] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Transitive closure of the antecedent links, singletons included.
pub fn clusters_from_links(assignment: &[Antecedent]) -> Clustering {
    let k = assignment.len();
    let mut sets = DisjointSet::new(k);
    for (i, a) in assignment.iter().enumerate() {
        if let Antecedent::Mention(j) = *a {
            debug_assert!(j < i, "antecedent {j} must precede mention {i}");
            sets.union(i, j);
        }
    }
    let roots: Vec<usize> = (0..k).map(|i| sets.find(i)).collect();
    Clustering::from_labels(&roots)
}

pub fn predict_document(model: &Model, doc: &Document) -> Result<Clustering> {
    let scores = model.score_document(doc)?;
    Ok(clusters_from_links(&decode_antecedents(&scores)))
}

pub fn predict_corpus(model: &Model, docs: &[Document]) -> Result<Vec<Clustering>> {
    docs.iter().map(|d| predict_document(model, d)).collect()
}

/// Gold clustering of a document, when every mention has a gold id.
pub fn gold_clustering(doc: &Document) -> Option<Clustering> {
    doc.gold_clusters().map(|g| Clustering::from_labels(&g))
}

/// One document's clusters as written to response and key files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocumentClusters {
    pub doc_id: String,
    pub clusters: Clustering,
}
