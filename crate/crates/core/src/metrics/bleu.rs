//! Corpus-level BLEU with clipped n-gram counts.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct BleuScore {
    /// Cumulative BLEU-1..n.
    pub cumulative: Vec<f64>,
    /// Modified precisions p1..pn.
    pub precisions: Vec<f64>,
    /// Clipped matched n-gram totals per order.
    pub matched: Vec<u64>,
    /// Generated n-gram totals per order.
    pub totals: Vec<u64>,
    pub brevity_penalty: f64,
    pub gen_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<'t, 'a>(tokens: &'t [&'a str], n: usize) -> HashMap<&'t [&'a str], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Whitespace tokenization; no case folding.
pub fn tokenize(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

/// BLEU over paired sentences, one reference per generated sentence.
/// A precision with no generated n-grams is 0, and cumulative scores from
/// that order upward are 0.
pub fn bleu<G, R>(generated: &[G], references: &[R], max_n: usize) -> Result<BleuScore>
where
    G: AsRef<str>,
    R: AsRef<str>,
{
    if generated.is_empty() {
        return Err(Error::Config("BLEU needs at least one sentence pair".into()));
    }
    if generated.len() != references.len() {
        return Err(Error::Config(format!(
            "BLEU got {} generated and {} reference sentences",
            generated.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Config("BLEU order must be at least 1".into()));
    }
    let mut matched = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let (mut c, mut r) = (0usize, 0usize);
    for (g, rf) in generated.iter().zip(references) {
        let gt = tokenize(g.as_ref());
        let rt = tokenize(rf.as_ref());
        c += gt.len();
        r += rt.len();
        for n in 1..=max_n {
            let rc = ngram_counts(&rt, n);
            for (gram, count) in ngram_counts(&gt, n) {
                matched[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += gt.len().saturating_sub(n - 1) as u64;
        }
    }
    let precisions: Vec<f64> = matched
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let mut cumulative = Vec::with_capacity(max_n);
    let mut log_sum = 0.0;
    let mut dead = false;
    for (k, &p) in precisions.iter().enumerate() {
        if p == 0.0 {
            dead = true;
        }
        if dead {
            cumulative.push(0.0);
        } else {
            log_sum += p.ln();
            cumulative.push(bp * (log_sum / (k + 1) as f64).exp());
        }
    }
    Ok(BleuScore {
        cumulative,
        precisions,
        matched,
        totals,
        brevity_penalty: bp,
        gen_len: c,
        ref_len: r,
    })
}
