//! Brute-force reference scorers. Every n-gram table is materialised as a plain list and
//! matched by removal; LCS comes from the recursive definition. Nothing here calls into the
//! library under test.

#![allow(dead_code)]

use std::collections::HashMap;

pub fn chars(s: &str) -> Vec<String> {
    s.chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_string())
        .collect()
}

pub fn ngrams<T: Clone>(tokens: &[T], n: usize) -> Vec<Vec<T>> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].to_vec()).collect()
}

/// Size of the multiset intersection, by removing each matched reference n-gram.
pub fn clipped_matches<T: PartialEq + Clone>(cand: &[Vec<T>], refs: &[Vec<T>]) -> usize {
    let mut pool = refs.to_vec();
    let mut matched = 0;
    for g in cand {
        if let Some(i) = pool.iter().position(|x| x == g) {
            pool.remove(i);
            matched += 1;
        }
    }
    matched
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn rouge_n(c: &[String], r: &[String], n: usize) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let cg = ngrams(c, n);
    let rg = ngrams(r, n);
    if cg.is_empty() && rg.is_empty() {
        return if c == r { 1.0 } else { 0.0 };
    }
    if cg.is_empty() || rg.is_empty() {
        return 0.0;
    }
    let m = clipped_matches(&cg, &rg) as f64;
    f1(m / cg.len() as f64, m / rg.len() as f64)
}

/// Exponential recursion straight from the definition.
pub fn lcs_recursive<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (Some((x, ra)), Some((y, rb))) => {
            if x == y {
                1 + lcs_recursive(ra, rb)
            } else {
                lcs_recursive(ra, b).max(lcs_recursive(a, rb))
            }
        }
        _ => 0,
    }
}

/// Same recursion, memoised on suffix positions, for inputs too long for the plain version.
pub fn lcs_memo<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut HashMap<(usize, usize), usize>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(&v) = memo.get(&(i, j)) {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo.insert((i, j), v);
        v
    }
    go(a, b, 0, 0, &mut HashMap::new())
}

pub fn lcs(a: &[String], b: &[String]) -> usize {
    if a.len() <= 8 && b.len() <= 8 {
        lcs_recursive(a, b)
    } else {
        lcs_memo(a, b)
    }
}

pub fn rouge_l(c: &[String], r: &[String]) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = lcs(c, r) as f64;
    f1(l / c.len() as f64, l / r.len() as f64)
}

pub fn bleu(c: &[String], r: &[String], n: usize) -> f64 {
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let eps = 1e-9;
    let mut product = 1.0f64;
    let mut orders = 0;
    for k in 1..=n {
        let cg = ngrams(c, k);
        if cg.is_empty() {
            break;
        }
        let m = clipped_matches(&cg, &ngrams(r, k)) as f64;
        let total = cg.len() as f64;
        product *= if m == 0.0 { eps / (total + eps) } else { m / total };
        orders += 1;
    }
    let bp = if c.len() >= r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    bp * product.powf(1.0 / orders as f64)
}

pub fn chrf(c: &str, r: &str) -> f64 {
    let c: Vec<char> = c.chars().filter(|x| !x.is_whitespace()).collect();
    let r: Vec<char> = r.chars().filter(|x| !x.is_whitespace()).collect();
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let mut fs = Vec::new();
    for n in 1..=6 {
        let cg = ngrams(&c, n);
        let rg = ngrams(&r, n);
        if cg.is_empty() && rg.is_empty() {
            continue;
        }
        if cg.is_empty() || rg.is_empty() {
            fs.push(0.0);
            continue;
        }
        let m = clipped_matches(&cg, &rg) as f64;
        let (p, rc) = (m / cg.len() as f64, m / rg.len() as f64);
        fs.push(if p + rc == 0.0 {
            0.0
        } else {
            5.0 * p * rc / (4.0 * p + rc)
        });
    }
    fs.iter().sum::<f64>() / fs.len() as f64
}

/// The eight scores in report column order.
pub fn all_scores(cand: &str, reference: &str) -> [f64; 8] {
    let c = chars(cand);
    let r = chars(reference);
    [
        rouge_n(&c, &r, 1),
        rouge_n(&c, &r, 2),
        rouge_l(&c, &r),
        bleu(&c, &r, 1),
        bleu(&c, &r, 2),
        bleu(&c, &r, 3),
        bleu(&c, &r, 4),
        chrf(cand, reference),
    ]
}

/// Small mixed alphabet (CJK, ASCII, astral, whitespace) so random pairs share n-grams.
pub const ALPHABET: &[char] = &['苗', '族', '古', '歌', '贵', 'a', 'b', '1', '𠀀', '𝒜', ' ', '，'];

pub fn random_string(rng: &mut impl FnMut(usize) -> usize, max_len: usize) -> String {
    let len = rng(max_len + 1);
    (0..len).map(|_| ALPHABET[rng(ALPHABET.len())]).collect()
}
