//! Hashed linear-path fingerprints and set-level diversity statistics.

use std::collections::BTreeSet;

use super::MetricError;
use crate::graph::AtomGraph;
use crate::vocabulary::{BondOrder, Element};

pub const FINGERPRINT_BITS: usize = 2048;
pub const MAX_PATH_BONDS: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fingerprint {
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn empty() -> Self {
        Fingerprint {
            words: vec![0; FINGERPRINT_BITS / 64],
        }
    }

    pub fn set(&mut self, bit: usize) {
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Intersection over union; two empty prints count as identical.
    pub fn tanimoto(&self, other: &Fingerprint) -> f64 {
        let (mut and, mut or) = (0u32, 0u32);
        for (a, b) in self.words.iter().zip(&other.words) {
            and += (a & b).count_ones();
            or += (a | b).count_ones();
        }
        if or == 0 {
            1.0
        } else {
            and as f64 / or as f64
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn fingerprint(g: &AtomGraph) -> Fingerprint {
    let elements: Vec<Element> = g.atoms().iter().map(|a| a.spec.element).collect();
    fingerprint_parts(&elements, g.bonds())
}

/// Every simple path of 0 to `MAX_PATH_BONDS` bonds is spelled as
/// alternating element symbols and bond characters, read in whichever
/// direction sorts first, and hashed to one bit.
pub fn fingerprint_parts(elements: &[Element], bonds: &[(usize, usize, BondOrder)]) -> Fingerprint {
    let n = elements.len();
    let mut adj: Vec<Vec<(usize, BondOrder)>> = vec![Vec::new(); n];
    for &(a, b, o) in bonds {
        adj[a].push((b, o));
        adj[b].push((a, o));
    }
    let mut fp = Fingerprint::empty();
    let mut path = Vec::new();
    let mut orders = Vec::new();
    for start in 0..n {
        path.push(start);
        walk(elements, &adj, &mut path, &mut orders, &mut fp);
        path.pop();
    }
    fp
}

fn walk(
    elements: &[Element],
    adj: &[Vec<(usize, BondOrder)>],
    path: &mut Vec<usize>,
    orders: &mut Vec<BondOrder>,
    fp: &mut Fingerprint,
) {
    let spell = |rev: bool| {
        let mut s = String::new();
        let k = path.len();
        for x in 0..k {
            let i = if rev { k - 1 - x } else { x };
            s.push_str(elements[path[i]].symbol());
            if x + 1 < k {
                s.push(orders[if rev { k - 2 - x } else { x }].symbol());
            }
        }
        s
    };
    let word = spell(false).min(spell(true));
    fp.set((fnv1a(word.as_bytes()) % FINGERPRINT_BITS as u64) as usize);
    if orders.len() == MAX_PATH_BONDS {
        return;
    }
    let last = *path.last().unwrap();
    for &(next, o) in &adj[last] {
        if path.contains(&next) {
            continue;
        }
        path.push(next);
        orders.push(o);
        walk(elements, adj, path, orders, fp);
        path.pop();
        orders.pop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SetStatistics {
    /// Mean pairwise `1 - tanimoto`.
    #[serde(rename = "diversity(1-tanimoto)")]
    pub diversity: f64,
    pub uniqueness: f64,
    pub novelty: f64,
}

/// `codes` are canonical codes of the samples, `training` those of the
/// training set.
pub fn diversity_uniqueness_novelty(
    fingerprints: &[Fingerprint],
    codes: &[Vec<u8>],
    training: &BTreeSet<Vec<u8>>,
) -> Result<SetStatistics, MetricError> {
    let k = fingerprints.len();
    if k < 2 {
        return Err(MetricError::TooFew(k));
    }
    if codes.len() != k {
        return Err(MetricError::Binning(k, codes.len()));
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            sum += 1.0 - fingerprints[i].tanimoto(&fingerprints[j]);
        }
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let distinct: BTreeSet<&Vec<u8>> = codes.iter().collect();
    let novel = codes.iter().filter(|c| !training.contains(*c)).count();
    Ok(SetStatistics {
        diversity: sum / pairs,
        uniqueness: distinct.len() as f64 / k as f64,
        novelty: novel as f64 / k as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use BondOrder::*;
    use Element::*;

    #[test]
    fn relabeling_does_not_change_print() {
        let a = fingerprint_parts(&[C, N, O, C], &[(0, 1, Single), (1, 2, Double), (1, 3, Single)]);
        let b = fingerprint_parts(&[O, C, N, C], &[(2, 0, Double), (3, 2, Single), (1, 2, Single)]);
        assert_eq!(a, b);
        let c = fingerprint_parts(&[C, N, O, C], &[(0, 1, Single), (1, 2, Single), (1, 3, Single)]);
        assert_ne!(a, c);
    }

    #[test]
    fn path_count_for_chain() {
        let fp = fingerprint_parts(&[C, N, C], &[(0, 1, Single), (1, 2, Double)]);
        let mut expect = Fingerprint::empty();
        for w in ["C", "N", "C-N", "C=N", "C-N=C"] {
            expect.set((fnv1a(w.as_bytes()) % FINGERPRINT_BITS as u64) as usize);
        }
        assert_eq!(fp, expect);
    }

    #[test]
    fn set_statistics() {
        let x = fingerprint_parts(&[C, C], &[(0, 1, Single)]);
        let codes = vec![vec![1u8], vec![1u8], vec![1u8]];
        let train: BTreeSet<Vec<u8>> = [vec![1u8]].into_iter().collect();
        let s = diversity_uniqueness_novelty(&[x.clone(), x.clone(), x.clone()], &codes, &train).unwrap();
        assert_eq!((s.diversity, s.uniqueness, s.novelty), (0.0, 1.0 / 3.0, 0.0));

        let mut p = Fingerprint::empty();
        let mut q = Fingerprint::empty();
        p.set(3);
        q.set(7);
        assert_eq!(p.tanimoto(&q), 0.0);
        let s = diversity_uniqueness_novelty(&[p, q], &[vec![1], vec![2]], &BTreeSet::new()).unwrap();
        assert_eq!((s.diversity, s.uniqueness, s.novelty), (1.0, 1.0, 1.0));
        assert!(diversity_uniqueness_novelty(&[x], &[vec![1]], &train).is_err());
    }
}
