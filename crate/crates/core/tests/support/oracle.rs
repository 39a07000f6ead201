//! Independent reference implementations used by the integration and
//! acceptance tests. Nothing here calls into the library's algorithms.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

const PREC: u64 = 320;

fn one() -> BigInt {
    BigInt::one() << PREC
}

fn fixed_to_f64(x: &BigInt) -> f64 {
    // keep 64 significant bits before the float conversion
    let shift = (x.bits() as i64 - 64).max(0) as u64;
    let head = (x >> shift).to_f64().unwrap();
    head * 2f64.powi(shift as i32 - PREC as i32)
}

fn fixed_div(a: &BigInt, b: &BigInt) -> BigInt {
    (a << PREC) / b
}

/// `atanh(num/den)` in fixed point, for `|num/den| <= 1/3`.
fn atanh_fixed(num: &BigInt, den: &BigInt) -> BigInt {
    let y = fixed_div(num, den);
    let y2 = (&y * &y) >> PREC;
    let mut power = y.clone();
    let mut sum = BigInt::zero();
    let mut k = 1u64;
    while !power.is_zero() {
        sum += &power / BigInt::from(k);
        power = (&power * &y2) >> PREC;
        k += 2;
    }
    sum
}

fn ln2_fixed() -> BigInt {
    atanh_fixed(&BigInt::from(1), &BigInt::from(3)) * 2
}

/// Natural log of the positive rational `p/q` in fixed point.
fn ln_fixed(p: &BigInt, q: &BigInt) -> BigInt {
    assert!(p.is_positive() && q.is_positive());
    let mut e = p.bits() as i64 - q.bits() as i64;
    let (mut p2, mut q2) = (p.clone(), q.clone());
    if e >= 0 {
        q2 <<= e as u64;
    } else {
        p2 <<= (-e) as u64;
    }
    // bring p2/q2 into [1, 2)
    if p2 < q2 {
        p2 <<= 1u64;
        e -= 1;
    }
    let y_num = &p2 - &q2;
    let y_den = &p2 + &q2;
    ln2_fixed() * BigInt::from(e) + atanh_fixed(&y_num, &y_den) * 2
}

pub fn ln_ratio(p: u64, q: u64) -> f64 {
    fixed_to_f64(&ln_fixed(&BigInt::from(p), &BigInt::from(q)))
}

/// NPMI from document counts with every logarithm evaluated to ~100 digits.
pub fn npmi_high_precision(n_i: u64, n_j: u64, n_ij: u64, n: u64) -> f64 {
    if n_ij == 0 {
        return -1.0;
    }
    if n_ij == n {
        return 1.0;
    }
    let pmi = ln_fixed(&BigInt::from(n_ij * n), &(BigInt::from(n_i) * BigInt::from(n_j)));
    let h = ln_fixed(&BigInt::from(n), &BigInt::from(n_ij));
    fixed_to_f64(&fixed_div(&pmi, &h)).clamp(-1.0, 1.0)
}

/// NPMI with both logarithms taken in base `base`.
pub fn npmi_in_base(n_i: u64, n_j: u64, n_ij: u64, n: u64, base: u64) -> f64 {
    if n_ij == 0 {
        return -1.0;
    }
    if n_ij == n {
        return 1.0;
    }
    let lb = ln_fixed(&BigInt::from(base), &BigInt::one());
    let pmi = fixed_div(
        &ln_fixed(&BigInt::from(n_ij * n), &(BigInt::from(n_i) * BigInt::from(n_j))),
        &lb,
    );
    let h = fixed_div(&ln_fixed(&BigInt::from(n), &BigInt::from(n_ij)), &lb);
    fixed_to_f64(&fixed_div(&pmi, &h)).clamp(-1.0, 1.0)
}

/// `exp(x)` in fixed point for a rational `x`.
fn exp_fixed(x: &BigRational) -> BigInt {
    let mut m = 0u64;
    let mut r = x.clone();
    let bound = BigRational::new(BigInt::one(), BigInt::from(256));
    while r.abs() > bound {
        r /= BigInt::from(2);
        m += 1;
    }
    let rf = fixed_div(r.numer(), r.denom());
    let mut term = one();
    let mut sum = one();
    let mut k = 1u64;
    while !term.is_zero() {
        term = ((&term * &rf) >> PREC) / BigInt::from(k);
        sum += &term;
        k += 1;
    }
    for _ in 0..m {
        sum = (&sum * &sum) >> PREC;
    }
    sum
}

/// Softmax of `sims / t` with exact rational inputs and ~90-digit arithmetic.
pub fn softmax_high_precision(sims: &[f64], t: f64) -> Vec<f64> {
    let t = BigRational::from_float(t).unwrap();
    let es: Vec<BigInt> = sims
        .iter()
        .map(|&s| exp_fixed(&(BigRational::from_float(s).unwrap() / &t)))
        .collect();
    let z: BigInt = es.iter().sum();
    es.iter().map(|e| fixed_to_f64(&fixed_div(e, &z))).collect()
}

/// Dense reference encoder: every pre-activation, ReLU, then keep the `k`
/// largest by a full sort (ties to the lower index).
pub fn dense_encode(d_model: usize, w_enc: &[f32], b_enc: &[f32], x: &[f32], top_k: Option<usize>) -> Vec<f64> {
    let d_sae = b_enc.len();
    let mut pre = vec![0.0f64; d_sae];
    for c in 0..d_model {
        for (r, p) in pre.iter_mut().enumerate() {
            *p += w_enc[r * d_model + c] as f64 * x[c] as f64;
        }
    }
    let mut code: Vec<f64> = pre.iter().zip(b_enc).map(|(p, &b)| (p + b as f64).max(0.0)).collect();
    if let Some(k) = top_k {
        let mut order: Vec<usize> = (0..d_sae).collect();
        order.sort_by(|&a, &b| code[b].partial_cmp(&code[a]).unwrap().then(a.cmp(&b)));
        for &i in &order[k.min(d_sae)..] {
            code[i] = 0.0;
        }
    }
    code
}

pub fn dense_decode(d_sae: usize, w_dec: &[f32], b_dec: &[f32], code: &[f64]) -> Vec<f64> {
    b_dec
        .iter()
        .enumerate()
        .map(|(r, &b)| b as f64 + (0..d_sae).map(|c| w_dec[r * d_sae + c] as f64 * code[c]).sum::<f64>())
        .collect()
}

/// Joint counts by testing every latent pair against every document.
pub fn nested_loop_cooccurrence(sets: &[Vec<u32>], min_freq: f64) -> BTreeMap<(u32, u32), u32> {
    let n = sets.len() as f64;
    let lookup: Vec<HashSet<u32>> = sets.iter().map(|s| s.iter().copied().collect()).collect();
    let all: BTreeSet<u32> = sets.iter().flatten().copied().collect();
    let freq_ok = |l: u32| lookup.iter().filter(|s| s.contains(&l)).count() as f64 / n >= min_freq;
    let latents: Vec<u32> = all.into_iter().filter(|&l| freq_ok(l)).collect();
    let mut out = BTreeMap::new();
    for (a, &i) in latents.iter().enumerate() {
        for &j in &latents[a + 1..] {
            let c = lookup.iter().filter(|s| s.contains(&i) && s.contains(&j)).count() as u32;
            if c > 0 {
                out.insert((i, j), c);
            }
        }
    }
    out
}

/// Average precision as an exact fraction.
pub fn average_precision_exact(flags: &[bool], n_relevant: usize) -> BigRational {
    let mut sum = BigRational::zero();
    let mut hits = 0i64;
    for (r, &f) in flags.iter().enumerate() {
        if f {
            hits += 1;
            sum += BigRational::new(BigInt::from(hits), BigInt::from(r as i64 + 1));
        }
    }
    sum / BigRational::from_integer(BigInt::from(n_relevant as i64))
}

pub fn precision_at_k_exact(flags: &[bool], k: usize) -> BigRational {
    let hits = (0..k).filter(|&i| flags.get(i).copied().unwrap_or(false)).count();
    BigRational::new(BigInt::from(hits as i64), BigInt::from(k as i64))
}

pub fn to_f64(r: &BigRational) -> f64 {
    let scaled = (r.numer() << PREC) / r.denom();
    fixed_to_f64(&scaled)
}

/// Truncated, normalized rank-biased overlap in exact rational arithmetic,
/// recomputing each prefix intersection from scratch.
pub fn rbo_exact(a: &[String], b: &[String], p: BigRational, depth: usize) -> BigRational {
    let depth = depth.min(a.len().max(b.len()));
    let mut num = BigRational::zero();
    let mut den = BigRational::zero();
    let mut w = BigRational::one();
    for d in 1..=depth {
        let pa: HashSet<&String> = a.iter().take(d).collect();
        let pb: HashSet<&String> = b.iter().take(d).collect();
        let overlap = pa.intersection(&pb).count() as i64;
        num += &w * BigRational::new(BigInt::from(overlap), BigInt::from(d as i64));
        den += &w;
        w *= &p;
    }
    num / den
}

/// Fused scores by direct summation, ranking-list order, 1-based ranks.
pub fn rrf_scores(rankings: &[Vec<String>], k: f64) -> BTreeMap<String, f64> {
    let docs: BTreeSet<&String> = rankings.iter().flatten().collect();
    docs.into_iter()
        .map(|d| {
            let mut s = 0.0;
            for r in rankings {
                if let Some(pos) = r.iter().position(|x| x == d) {
                    s += 1.0 / (k + (pos + 1) as f64);
                }
            }
            (d.clone(), s)
        })
        .collect()
}

/// Every permutation of `0..n`, lexicographic.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
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
    out.sort();
    out
}

/// Best matched mass over all permutations of a square matrix.
pub fn brute_force_assignment(m: &[Vec<f64>]) -> (Vec<usize>, f64) {
    permutations(m.len())
        .into_iter()
        .map(|p| {
            let mass = p.iter().enumerate().map(|(r, &c)| m[r][c]).sum::<f64>();
            (p, mass)
        })
        .fold(
            (vec![], f64::NEG_INFINITY),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        )
}

/// Pair-counting adjusted Rand index with exact integer arithmetic.
pub fn ari_exact(a: &[usize], b: &[usize]) -> f64 {
    let mut table: BTreeMap<(usize, usize), i64> = BTreeMap::new();
    let mut ra: BTreeMap<usize, i64> = BTreeMap::new();
    let mut rb: BTreeMap<usize, i64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let c2 = |x: i64| BigRational::from_integer(BigInt::from(x * (x - 1) / 2));
    let index: BigRational = table.values().map(|&c| c2(c)).sum();
    let sa: BigRational = ra.values().map(|&c| c2(c)).sum();
    let sb: BigRational = rb.values().map(|&c| c2(c)).sum();
    let total = c2(a.len() as i64);
    let expected = &sa * &sb / total;
    let max = (&sa + &sb) / BigRational::from_integer(BigInt::from(2));
    if max == expected {
        return 1.0;
    }
    to_f64(&((index - &expected) / (max - expected)))
}

#[cfg(test)]
mod self_checks {
    use super::*;

    #[test]
    fn logs_and_exps() {
        assert!((ln_ratio(2, 1) - std::f64::consts::LN_2).abs() < 1e-16);
        assert!((ln_ratio(1, 10) + std::f64::consts::LN_10).abs() < 1e-15);
        assert!((ln_ratio(7, 7)).abs() < 1e-300);
        let e = fixed_to_f64(&exp_fixed(&BigRational::from_integer(BigInt::one())));
        assert!((e - std::f64::consts::E).abs() < 1e-15);
        let w = softmax_high_precision(&[0.9, 0.8], 0.2);
        assert!((w[0] - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn brute_force_perms() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(5).len(), 120);
    }
}
