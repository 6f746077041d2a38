//! METEOR with exact and stem matching; no synonym stage.
//!
//! Two words can align when their English Snowball stems agree (identical
//! words always do). The alignment maximizes matches, then minimizes
//! chunks, then maximizes exact matches, found by exhaustive branch and
//! bound search.

use std::collections::HashMap;

use rust_stemmers::{Algorithm, Stemmer};

/// Search nodes visited before settling for the best alignment so far.
pub const SEARCH_BUDGET: u64 = 20_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alignment {
    pub matches: usize,
    pub chunks: usize,
    pub exact: usize,
}

impl Alignment {
    /// Lexicographic preference: more matches, fewer chunks, more exact.
    pub fn better_than(&self, other: &Alignment) -> bool {
        (self.matches, std::cmp::Reverse(self.chunks), self.exact)
            > (other.matches, std::cmp::Reverse(other.chunks), other.exact)
    }
}

pub fn stem_all(tokens: &[&str]) -> Vec<String> {
    let stemmer = Stemmer::create(Algorithm::English);
    tokens.iter().map(|t| stemmer.stem(t).into_owned()).collect()
}

/// Score from alignment statistics and sentence lengths.
pub fn score_from(a: Alignment, gen_len: usize, ref_len: usize) -> f64 {
    if a.matches == 0 || gen_len == 0 || ref_len == 0 {
        return 0.0;
    }
    let m = a.matches as f64;
    let p = m / gen_len as f64;
    let r = m / ref_len as f64;
    let f = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (a.chunks as f64 / m).powi(3);
    f * (1.0 - penalty)
}

struct Search<'a> {
    gen: &'a [&'a str],
    rf: &'a [&'a str],
    gen_class: Vec<usize>,
    ref_by_class: Vec<Vec<usize>>,
    /// `suffix[i][c]`: generated words of class `c` at positions `>= i`.
    suffix: Vec<Vec<usize>>,
    ref_free: Vec<usize>,
    used: Vec<bool>,
    target: usize,
    best: Option<Alignment>,
    nodes: u64,
}

impl Search<'_> {
    fn match_bound(&self, i: usize) -> usize {
        self.suffix[i].iter().zip(&self.ref_free).map(|(&g, &r)| g.min(r)).sum()
    }

    fn run(&mut self, i: usize, prev: Option<usize>, cur: Alignment) {
        self.nodes += 1;
        if self.nodes > SEARCH_BUDGET && self.best.is_some() {
            return;
        }
        if cur.matches + self.match_bound(i) < self.target {
            return;
        }
        if let Some(best) = self.best {
            let exact_cap = cur.exact + (self.gen.len() - i);
            if cur.chunks > best.chunks || (cur.chunks == best.chunks && exact_cap <= best.exact) {
                return;
            }
        }
        if i == self.gen.len() {
            if self.best.is_none_or(|b| cur.better_than(&b)) {
                self.best = Some(cur);
            }
            return;
        }
        let class = self.gen_class[i];
        // Continuing the current chunk first finds good bounds early.
        let mut order: Vec<usize> = self.ref_by_class[class].iter().copied().filter(|&j| !self.used[j]).collect();
        if let Some(p) = prev {
            if let Some(k) = order.iter().position(|&j| j == p + 1) {
                order[..=k].rotate_right(1);
            }
        }
        for j in order {
            self.used[j] = true;
            self.ref_free[class] -= 1;
            let next = Alignment {
                matches: cur.matches + 1,
                chunks: cur.chunks + usize::from(prev.is_none_or(|p| p + 1 != j)),
                exact: cur.exact + usize::from(self.gen[i] == self.rf[j]),
            };
            self.run(i + 1, Some(j), next);
            self.used[j] = false;
            self.ref_free[class] += 1;
        }
        self.run(i + 1, None, cur);
    }
}

/// Best alignment of `gen` against `rf` over whitespace tokens.
pub fn align(gen: &[&str], rf: &[&str]) -> Alignment {
    let gs = stem_all(gen);
    let rs = stem_all(rf);
    let mut classes: HashMap<&str, usize> = HashMap::new();
    for s in gs.iter().chain(&rs) {
        let n = classes.len();
        classes.entry(s.as_str()).or_insert(n);
    }
    let k = classes.len();
    let gen_class: Vec<usize> = gs.iter().map(|s| classes[s.as_str()]).collect();
    let mut ref_by_class = vec![Vec::new(); k];
    for (j, s) in rs.iter().enumerate() {
        ref_by_class[classes[s.as_str()]].push(j);
    }
    let mut suffix = vec![vec![0usize; k]; gen.len() + 1];
    for i in (0..gen.len()).rev() {
        suffix[i] = suffix[i + 1].clone();
        suffix[i][gen_class[i]] += 1;
    }
    let ref_free: Vec<usize> = ref_by_class.iter().map(Vec::len).collect();
    let target = suffix[0].iter().zip(&ref_free).map(|(&g, &r)| g.min(r)).sum();
    let mut search = Search {
        gen,
        rf,
        gen_class,
        ref_by_class,
        suffix,
        ref_free,
        used: vec![false; rf.len()],
        target,
        best: None,
        nodes: 0,
    };
    search.run(0, None, Alignment { matches: 0, chunks: 0, exact: 0 });
    if search.nodes > SEARCH_BUDGET {
        log::warn!("alignment search budget exhausted ({} x {} tokens)", gen.len(), rf.len());
    }
    search.best.expect("the search always reaches a leaf")
}

/// Sentence-level METEOR over whitespace tokens. Empty input scores 0.
pub fn meteor_lite(generated: &str, reference: &str) -> f64 {
    let g: Vec<&str> = generated.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if g.is_empty() || r.is_empty() {
        return 0.0;
    }
    score_from(align(&g, &r), g.len(), r.len())
}
