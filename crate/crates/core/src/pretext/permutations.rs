use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::seed;

/// Minimum candidate-pool size when sampling random permutations.
pub const MIN_POOL: usize = 1000;
/// Candidate pool size relative to the requested count.
pub const POOL_FACTOR: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PermutationSet {
    cells: usize,
    seed: u64,
    perms: Vec<Vec<usize>>,
    min_hamming: usize,
}

pub fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

fn factorial(n: usize) -> Option<usize> {
    (1..=n).try_fold(1usize, |acc, v| acc.checked_mul(v))
}

/// All permutations of `0..n` in lexicographic order.
fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..n).collect();
    let mut out = vec![current.clone()];
    loop {
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            return out;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).expect("successor exists");
        current.swap(i - 1, j);
        current[i..].reverse();
        out.push(current.clone());
    }
}

fn min_pairwise(perms: &[Vec<usize>]) -> usize {
    let mut best = usize::MAX;
    for i in 0..perms.len() {
        for j in i + 1..perms.len() {
            best = best.min(hamming(&perms[i], &perms[j]));
        }
    }
    if perms.len() < 2 {
        0
    } else {
        best
    }
}

impl PermutationSet {
    /// Greedy max-min Hamming selection.
    ///
    /// The candidate pool holds every permutation when `g!` is at most
    /// `max(10 P, 1000)`, otherwise that many distinct seeded random ones.
    /// The first pick is a seeded random candidate; each later pick maximizes
    /// the distance to its nearest already-chosen permutation, with ties going
    /// to the earliest candidate.
    pub fn generate(cells: usize, count: usize, seed: u64) -> Result<Self> {
        if cells < 2 {
            return Err(Error::invalid("permutation sets need at least 2 cells"));
        }
        if count == 0 {
            return Err(Error::invalid("permutation count must be positive"));
        }
        let pool_size = (POOL_FACTOR * count).max(MIN_POOL);
        let total = factorial(cells);
        if total.is_some_and(|t| count > t) {
            return Err(Error::invalid(format!(
                "cannot choose {count} distinct permutations of {cells} cells ({} exist)",
                total.unwrap_or(usize::MAX)
            )));
        }
        let mut rng = seed::rng_for(seed, "permutation-set");
        let pool: Vec<Vec<usize>> = match total {
            Some(t) if t <= pool_size => all_permutations(cells),
            _ => {
                let mut seen = HashSet::with_capacity(pool_size);
                let mut pool = Vec::with_capacity(pool_size);
                let mut p: Vec<usize> = (0..cells).collect();
                while pool.len() < pool_size {
                    p.shuffle(&mut rng);
                    if seen.insert(p.clone()) {
                        pool.push(p.clone());
                    }
                }
                pool
            }
        };
        let mut chosen = vec![false; pool.len()];
        let mut nearest = vec![usize::MAX; pool.len()];
        let mut picks = Vec::with_capacity(count);
        let mut pick = rng.random_range(0..pool.len());
        loop {
            chosen[pick] = true;
            picks.push(pick);
            if picks.len() == count {
                break;
            }
            let mut best: Option<(usize, usize)> = None;
            for (i, cand) in pool.iter().enumerate() {
                if chosen[i] {
                    continue;
                }
                nearest[i] = nearest[i].min(hamming(cand, &pool[pick]));
                if best.is_none_or(|(_, d)| nearest[i] > d) {
                    best = Some((i, nearest[i]));
                }
            }
            pick = best.expect("pool larger than count").0;
        }
        let perms: Vec<Vec<usize>> = picks.into_iter().map(|i| pool[i].clone()).collect();
        let min_hamming = min_pairwise(&perms);
        Ok(PermutationSet {
            cells,
            seed,
            perms,
            min_hamming,
        })
    }

    pub fn from_perms(cells: usize, seed: u64, perms: Vec<Vec<usize>>) -> Result<Self> {
        if perms.is_empty() {
            return Err(Error::invalid("permutation set is empty"));
        }
        let mut seen = HashSet::new();
        for p in &perms {
            let mut sorted = p.clone();
            sorted.sort_unstable();
            if sorted != (0..cells).collect::<Vec<_>>() {
                return Err(Error::invalid(format!("{p:?} is not a permutation of 0..{cells}")));
            }
            if !seen.insert(p.clone()) {
                return Err(Error::invalid(format!("duplicate permutation {p:?}")));
            }
        }
        let min_hamming = min_pairwise(&perms);
        Ok(PermutationSet {
            cells,
            seed,
            perms,
            min_hamming,
        })
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn len(&self) -> usize {
        self.perms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perms.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&self, index: usize) -> &[usize] {
        &self.perms[index]
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    pub fn min_hamming(&self) -> usize {
        self.min_hamming
    }

    /// First line `g P seed`, then one space-separated permutation per line.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {} {}\n", self.cells, self.perms.len(), self.seed);
        for p in &self.perms {
            let line: Vec<String> = p.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("permutation file: {m}"));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| bad("empty".into()))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(format!("header `{header}` must be `g P seed`")));
        }
        let parse = |s: &str| s.parse::<u64>().map_err(|e| bad(format!("`{s}`: {e}")));
        let (cells, count, seed) = (parse(fields[0])? as usize, parse(fields[1])? as usize, parse(fields[2])?);
        let perms = lines
            .map(|l| l.split_whitespace().map(|v| parse(v).map(|x| x as usize)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        if perms.len() != count {
            return Err(bad(format!("header declares {count} permutations, found {}", perms.len())));
        }
        Self::from_perms(cells, seed, perms)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_text(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_of_s4_has_min_distance_two() {
        let set = PermutationSet::generate(4, 24, 1).unwrap();
        assert_eq!(set.len(), 24);
        let mut sorted = set.perms().to_vec();
        sorted.sort();
        assert_eq!(sorted, all_permutations(4));
        // Brute force: a transposition is the closest distinct pair.
        assert_eq!(set.min_hamming(), 2);
    }

    #[test]
    fn two_of_nine_are_maximally_distant() {
        for s in 0..5 {
            let set = PermutationSet::generate(9, 2, s).unwrap();
            assert_eq!(hamming(set.get(0), set.get(1)), 9);
        }
    }

    #[test]
    fn too_many_permutations_fail() {
        assert!(PermutationSet::generate(3, 7, 0).is_err());
        assert!(PermutationSet::generate(3, 6, 0).is_ok());
    }

    #[test]
    fn text_roundtrip_and_validation() {
        let set = PermutationSet::generate(5, 30, 8).unwrap();
        let back = PermutationSet::from_text(&set.to_text()).unwrap();
        assert_eq!(back, set);
        assert!(PermutationSet::from_text("3 1 0\n0 0 1\n").is_err());
        assert!(PermutationSet::from_text("3 2 0\n0 1 2\n0 1 2\n").is_err());
        assert!(PermutationSet::from_text("3 2 0\n0 1 2\n").is_err());
    }

    #[test]
    fn lexicographic_enumeration() {
        let p = all_permutations(3);
        assert_eq!(p, vec![vec![0, 1, 2], vec![0, 2, 1], vec![1, 0, 2], vec![1, 2, 0], vec![2, 0, 1], vec![2, 1, 0]]);
    }
}
