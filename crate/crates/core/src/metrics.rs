//! Coreference scoring: MUC, B³, CEAF_e, BLANC and the CoNLL / AVG summaries.
//!
//! Corpus scores are micro-averaged: numerators and denominators are summed
//! over documents before dividing. A 0/0 ratio counts as 0. Mentions present
//! on only one side are added to the other side as singletons.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::hungarian::max_weight_assignment;
use crate::inference::Clustering;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl MetricTriple {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub muc: MetricTriple,
    pub b3: MetricTriple,
    pub ceaf_e: MetricTriple,
    pub blanc: MetricTriple,
    pub conll: f64,
    pub avg: f64,
    /// Set when fewer than two mentions were scored, so BLANC has no pairs.
    pub blanc_undefined: bool,
}

impl MetricReport {
    /// Aligned plain-text table, scores in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<8} {:>9} {:>9} {:>9}", "metric", "P", "R", "F1").unwrap();
        for (name, t) in [
            ("MUC", self.muc),
            ("B3", self.b3),
            ("CEAF_e", self.ceaf_e),
            ("BLANC", self.blanc),
        ] {
            writeln!(
                out,
                "{:<8} {:>9.2} {:>9.2} {:>9.2}",
                name,
                100.0 * t.precision,
                100.0 * t.recall,
                100.0 * t.f1
            )
            .unwrap();
        }
        writeln!(out, "{:<8} {:>9} {:>9} {:>9.2}", "CoNLL", "", "", 100.0 * self.conll).unwrap();
        write!(out, "{:<8} {:>9} {:>9} {:>9.2}", "AVG", "", "", 100.0 * self.avg).unwrap();
        if self.blanc_undefined {
            write!(out, "\n(BLANC undefined: fewer than two mentions)").unwrap();
        }
        out
    }
}

/// Returns `(conll, avg)`: the mean F1 of MUC, B³ and CEAF_e, and the mean
/// F1 of those three plus BLANC.
pub fn summarize(muc: &MetricTriple, b3: &MetricTriple, ceaf_e: &MetricTriple, blanc: &MetricTriple) -> (f64, f64) {
    let conll = (muc.f1 + b3.f1 + ceaf_e.f1) / 3.0;
    let avg = (muc.f1 + b3.f1 + ceaf_e.f1 + blanc.f1) / 4.0;
    (conll, avg)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Counts {
    p_num: f64,
    p_den: f64,
    r_num: f64,
    r_den: f64,
}

impl Counts {
    fn add(&mut self, o: Counts) {
        self.p_num += o.p_num;
        self.p_den += o.p_den;
        self.r_num += o.r_num;
        self.r_den += o.r_den;
    }

    fn triple(&self) -> MetricTriple {
        MetricTriple::from_pr(ratio(self.p_num, self.p_den), ratio(self.r_num, self.r_den))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct BlancCounts {
    pairs: f64,
    key_coref: f64,
    resp_coref: f64,
    both_coref: f64,
}

impl BlancCounts {
    fn add(&mut self, o: BlancCounts) {
        self.pairs += o.pairs;
        self.key_coref += o.key_coref;
        self.resp_coref += o.resp_coref;
        self.both_coref += o.both_coref;
    }

    fn triple(&self) -> MetricTriple {
        if self.pairs == 0.0 {
            return MetricTriple::default();
        }
        let key_non = self.pairs - self.key_coref;
        let resp_non = self.pairs - self.resp_coref;
        let both_non = self.pairs - (self.key_coref + self.resp_coref - self.both_coref);
        let coref = MetricTriple::from_pr(
            ratio(self.both_coref, self.resp_coref),
            ratio(self.both_coref, self.key_coref),
        );
        let non = MetricTriple::from_pr(ratio(both_non, resp_non), ratio(both_non, key_non));
        if self.key_coref == 0.0 && self.resp_coref == 0.0 {
            non
        } else if key_non == 0.0 && resp_non == 0.0 {
            coref
        } else {
            MetricTriple {
                precision: (coref.precision + non.precision) / 2.0,
                recall: (coref.recall + non.recall) / 2.0,
                f1: (coref.f1 + non.f1) / 2.0,
            }
        }
    }
}

/// Key and response over a shared mention universe, with overlap counts.
struct Aligned {
    key: Vec<Vec<usize>>,
    resp: Vec<Vec<usize>>,
    key_of: HashMap<usize, usize>,
    resp_of: HashMap<usize, usize>,
    /// `(key cluster, response cluster) -> |K ∩ R|`
    overlap: HashMap<(usize, usize), usize>,
}

impl Aligned {
    fn new(key: &Clustering, response: &Clustering) -> Self {
        let mut key: Vec<Vec<usize>> = key.clusters().to_vec();
        let mut resp: Vec<Vec<usize>> = response.clusters().to_vec();
        let index = |cs: &[Vec<usize>]| -> HashMap<usize, usize> {
            cs.iter()
                .enumerate()
                .flat_map(|(c, ms)| ms.iter().map(move |&m| (m, c)))
                .collect()
        };
        let mut key_of = index(&key);
        let mut resp_of = index(&resp);
        let mut key_only: Vec<usize> = key_of.keys().filter(|m| !resp_of.contains_key(m)).copied().collect();
        let mut resp_only: Vec<usize> = resp_of.keys().filter(|m| !key_of.contains_key(m)).copied().collect();
        key_only.sort_unstable();
        resp_only.sort_unstable();
        for m in key_only {
            resp_of.insert(m, resp.len());
            resp.push(vec![m]);
        }
        for m in resp_only {
            key_of.insert(m, key.len());
            key.push(vec![m]);
        }
        let mut overlap = HashMap::new();
        for (&m, &kc) in &key_of {
            *overlap.entry((kc, resp_of[&m])).or_insert(0) += 1;
        }
        Self {
            key,
            resp,
            key_of,
            resp_of,
            overlap,
        }
    }

    fn muc(&self) -> Counts {
        let side = |clusters: &[Vec<usize>], other: &HashMap<usize, usize>| -> (f64, f64) {
            let mut num = 0.0;
            let mut den = 0.0;
            for c in clusters {
                let mut parts: Vec<usize> = c.iter().map(|m| other[m]).collect();
                parts.sort_unstable();
                parts.dedup();
                num += (c.len() - parts.len()) as f64;
                den += (c.len() - 1) as f64;
            }
            (num, den)
        };
        let (r_num, r_den) = side(&self.key, &self.resp_of);
        let (p_num, p_den) = side(&self.resp, &self.key_of);
        Counts {
            p_num,
            p_den,
            r_num,
            r_den,
        }
    }

    fn b_cubed(&self) -> Counts {
        let mut c = Counts::default();
        for (&m, &kc) in &self.key_of {
            let rc = self.resp_of[&m];
            let shared = self.overlap[&(kc, rc)] as f64;
            c.r_num += shared / self.key[kc].len() as f64;
            c.p_num += shared / self.resp[rc].len() as f64;
        }
        c.r_den = self.key_of.len() as f64;
        c.p_den = self.key_of.len() as f64;
        c
    }

    fn ceaf_e(&self) -> Counts {
        let mut sim = vec![vec![0.0; self.resp.len()]; self.key.len()];
        for (&(kc, rc), &n) in &self.overlap {
            sim[kc][rc] = 2.0 * n as f64 / (self.key[kc].len() + self.resp[rc].len()) as f64;
        }
        let total = max_weight_assignment(&sim).total;
        Counts {
            p_num: total,
            p_den: self.resp.len() as f64,
            r_num: total,
            r_den: self.key.len() as f64,
        }
    }

    fn blanc(&self) -> BlancCounts {
        let pairs = |n: usize| (n * n.saturating_sub(1) / 2) as f64;
        BlancCounts {
            pairs: pairs(self.key_of.len()),
            key_coref: self.key.iter().map(|c| pairs(c.len())).sum(),
            resp_coref: self.resp.iter().map(|c| pairs(c.len())).sum(),
            both_coref: self.overlap.values().map(|&n| pairs(n)).sum(),
        }
    }
}

pub fn muc(key: &Clustering, response: &Clustering) -> MetricTriple {
    Aligned::new(key, response).muc().triple()
}

pub fn b_cubed(key: &Clustering, response: &Clustering) -> MetricTriple {
    Aligned::new(key, response).b_cubed().triple()
}

pub fn ceaf_e(key: &Clustering, response: &Clustering) -> MetricTriple {
    Aligned::new(key, response).ceaf_e().triple()
}

pub fn blanc(key: &Clustering, response: &Clustering) -> MetricTriple {
    Aligned::new(key, response).blanc().triple()
}

/// Micro-averaged report over paired key/response clusterings.
pub fn score_corpus<'a>(pairs: impl IntoIterator<Item = (&'a Clustering, &'a Clustering)>) -> MetricReport {
    let mut muc_c = Counts::default();
    let mut b3_c = Counts::default();
    let mut ceaf_c = Counts::default();
    let mut blanc_c = BlancCounts::default();
    for (key, response) in pairs {
        let a = Aligned::new(key, response);
        muc_c.add(a.muc());
        b3_c.add(a.b_cubed());
        ceaf_c.add(a.ceaf_e());
        blanc_c.add(a.blanc());
    }
    let (muc, b3, ceaf_e, blanc) = (muc_c.triple(), b3_c.triple(), ceaf_c.triple(), blanc_c.triple());
    let (conll, avg) = summarize(&muc, &b3, &ceaf_e, &blanc);
    MetricReport {
        muc,
        b3,
        ceaf_e,
        blanc,
        conll,
        avg,
        blanc_undefined: blanc_c.pairs == 0.0,
    }
}

pub fn score_document(key: &Clustering, response: &Clustering) -> MetricReport {
    score_corpus([(key, response)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(clusters: &[&[usize]]) -> Clustering {
        Clustering::new(clusters.iter().map(|c| c.to_vec()).collect())
    }

    fn worked() -> (Clustering, Clustering) {
        (c(&[&[1, 2, 3], &[4, 5]]), c(&[&[1, 2], &[3, 4, 5]]))
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn worked_pair() {
        let (k, r) = worked();
        let m = muc(&k, &r);
        assert!(close(m.precision, 2.0 / 3.0) && close(m.recall, 2.0 / 3.0) && close(m.f1, 2.0 / 3.0));
        let b = b_cubed(&k, &r);
        assert!(close(b.f1, 11.0 / 15.0) && close(b.precision, 11.0 / 15.0));
        assert!(close(ceaf_e(&k, &r).f1, 0.8));
        assert!(close(blanc(&k, &r).f1, (0.5 + 2.0 / 3.0) / 2.0));
        let rep = score_document(&k, &r);
        assert!(close(rep.conll, (2.0 / 3.0 + 11.0 / 15.0 + 0.8) / 3.0));
        assert!((rep.avg - 0.6958).abs() < 1e-4);
        assert!((rep.conll - 0.7333).abs() < 1e-4);
    }

    #[test]
    fn identical_clusterings() {
        let k = c(&[&[0, 1, 2], &[3], &[4, 5]]);
        let rep = score_document(&k, &k);
        for t in [rep.muc, rep.b3, rep.ceaf_e, rep.blanc] {
            assert_eq!((t.precision, t.recall, t.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!((rep.conll, rep.avg), (1.0, 1.0));
    }

    #[test]
    fn all_singletons() {
        let k = c(&[&[0], &[1], &[2]]);
        assert_eq!(muc(&k, &k), MetricTriple::default());
        assert_eq!(blanc(&k, &k).f1, 1.0);
    }

    #[test]
    fn one_cluster_vs_singletons() {
        let key = c(&[&[0, 1, 2, 3]]);
        let resp = c(&[&[0], &[1], &[2], &[3]]);
        let b = b_cubed(&key, &resp);
        assert!(close(b.recall, 0.25));
        assert_eq!(b.precision, 1.0);
    }

    #[test]
    fn summary_arithmetic() {
        let one = MetricTriple::from_pr(1.0, 1.0);
        assert_eq!(summarize(&one, &one, &one, &one), (1.0, 1.0));
        let zero = MetricTriple::default();
        assert_eq!(summarize(&one, &one, &one, &zero), (1.0, 0.75));
    }

    #[test]
    fn blanc_degenerate_rules() {
        // only coreference links on both sides
        let whole = c(&[&[0, 1, 2]]);
        assert_eq!(blanc(&whole, &whole).f1, 1.0);
        // a single mention has no pairs
        let single = c(&[&[0]]);
        let rep = score_document(&single, &single);
        assert!(rep.blanc_undefined);
        assert_eq!(rep.blanc.f1, 0.0);
    }

    #[test]
    fn mismatched_universes_become_singletons() {
        let key = c(&[&[0, 1], &[2]]);
        let resp = c(&[&[0, 1]]);
        let rep = score_document(&key, &resp);
        let full = score_document(&key, &c(&[&[0, 1], &[2]]));
        assert_eq!(rep, full);
    }

    #[test]
    fn role_swap_duality() {
        let (k, r) = worked();
        let r2 = c(&[&[1], &[2, 3, 4, 5]]);
        for (a, b) in [(&k, &r), (&k, &r2), (&r, &r2)] {
            for f in [muc, b_cubed, ceaf_e, blanc] {
                let x = f(a, b);
                let y = f(b, a);
                assert!(close(x.precision, y.recall) && close(x.recall, y.precision) && close(x.f1, y.f1));
            }
        }
    }

    #[test]
    fn corpus_scores_micro_average() {
        let (k, r) = worked();
        let single = score_document(&k, &r);
        let doubled = score_corpus([(&k, &r), (&k, &r)]);
        assert!(close(single.avg, doubled.avg));
        let perfect = c(&[&[0, 1]]);
        let mixed = score_corpus([(&k, &r), (&perfect, &perfect)]);
        // MUC recall: (2 + 1) / (3 + 1)
        assert!(close(mixed.muc.recall, 0.75));
    }

    #[test]
    fn table_lists_every_metric() {
        let (k, r) = worked();
        let t = score_document(&k, &r).table();
        for name in ["MUC", "B3", "CEAF_e", "BLANC", "CoNLL", "AVG"] {
            assert!(t.contains(name));
        }
        assert!(t.contains("66.67"));
    }

    mod exact_assignment {
        use crate::hungarian::{max_weight_assignment, Weight};
        use num_rational::Ratio;
        use rand::{Rng, SeedableRng};
        use rand_chacha::ChaCha8Rng;

        #[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
        struct Exact(Ratio<i64>);

        impl std::ops::Add for Exact {
            type Output = Self;
            fn add(self, o: Self) -> Self {
                Exact(self.0 + o.0)
            }
        }
        impl std::ops::Sub for Exact {
            type Output = Self;
            fn sub(self, o: Self) -> Self {
                Exact(self.0 - o.0)
            }
        }
        impl std::ops::Neg for Exact {
            type Output = Self;
            fn neg(self) -> Self {
                Exact(-self.0)
            }
        }
        impl Weight for Exact {
            fn zero() -> Self {
                Exact(Ratio::from_integer(0))
            }
        }

        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for pos in 0..=p.len() {
                    let mut q = p.clone();
                    q.insert(pos, n - 1);
                    out.push(q);
                }
            }
            out
        }

        fn random_partition(rng: &mut ChaCha8Rng, k: usize, max_clusters: usize) -> Vec<usize> {
            (0..k).map(|_| rng.gen_range(0..max_clusters)).collect()
        }

        #[test]
        fn hungarian_matches_permutation_search_exactly() {
            let mut rng = ChaCha8Rng::seed_from_u64(2024);
            for _ in 0..200 {
                let k = rng.gen_range(1..=12);
                let key = random_partition(&mut rng, k, 6);
                let resp = random_partition(&mut rng, k, 6);
                let kc: Vec<usize> = {
                    let mut v = key.clone();
                    v.sort_unstable();
                    v.dedup();
                    v
                };
                let rc: Vec<usize> = {
                    let mut v = resp.clone();
                    v.sort_unstable();
                    v.dedup();
                    v
                };
                let size = |labels: &[usize], c: usize| labels.iter().filter(|&&l| l == c).count() as i64;
                let sim: Vec<Vec<Exact>> = kc
                    .iter()
                    .map(|&a| {
                        rc.iter()
                            .map(|&b| {
                                let inter = (0..k).filter(|&m| key[m] == a && resp[m] == b).count() as i64;
                                Exact(Ratio::new(2 * inter, size(&key, a) + size(&resp, b)))
                            })
                            .collect()
                    })
                    .collect();
                let n = kc.len().max(rc.len());
                let at = |i: usize, j: usize| {
                    if i < kc.len() && j < rc.len() {
                        sim[i][j]
                    } else {
                        Exact::zero()
                    }
                };
                let brute = permutations(n)
                    .into_iter()
                    .map(|perm| {
                        perm.iter()
                            .enumerate()
                            .fold(Exact::zero(), |acc, (i, &j)| acc + at(i, j))
                    })
                    .fold(Exact::zero(), |best, v| if v > best { v } else { best });
                assert_eq!(max_weight_assignment(&sim).total, brute);
            }
        }
    }
}
