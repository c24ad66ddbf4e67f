// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the crate's numerical code: matrices are plain
//! `Vec<Vec<f64>>` and every loop is written out.

#![allow(dead_code)]

use std::collections::HashMap;

pub type Mat = Vec<Vec<f64>>;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `cos(a, b)` straight from the definition.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

pub fn to_rows(m: &nalgebra::DMatrix<f64>) -> Mat {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let k = b.len();
    let m = if k == 0 { 0 } else { b[0].len() };
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Orthogonal projector onto the row space of `rows`, built by modified
/// Gram–Schmidt. Rows whose residual falls below `tol` times the largest
/// row norm are treated as dependent.
pub fn row_space_projector(rows: &Mat, tol: f64) -> Mat {
    let h = rows.first().map_or(0, Vec::len);
    let scale = rows.iter().map(|r| norm(r)).fold(0.0, f64::max);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in rows {
        let mut v = r.clone();
        // two passes keep the basis orthogonal to working precision
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&v, q);
                for i in 0..h {
                    v[i] -= c * q[i];
                }
            }
        }
        let n = norm(&v);
        if n > tol * scale {
            basis.push(v.iter().map(|x| x / n).collect());
        }
    }
    let mut p = vec![vec![0.0; h]; h];
    for q in &basis {
        for i in 0..h {
            for j in 0..h {
                p[i][j] += q[i] * q[j];
            }
        }
    }
    p
}

/// Two-pass population variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mut mean = 0.0;
    for x in xs {
        mean += x;
    }
    mean /= n;
    let mut v = 0.0;
    for x in xs {
        v += (x - mean) * (x - mean);
    }
    v / n
}

/// Central finite difference of `f` at `x` along coordinate `i`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, eps: f64) -> f64 {
    let mut plus = x.to_vec();
    let mut minus = x.to_vec();
    plus[i] += eps;
    minus[i] -= eps;
    (f(&plus) - f(&minus)) / (2.0 * eps)
}

/// Outcome of [`search_oracle`].
#[derive(Debug, Clone, PartialEq)]
pub enum OracleResult {
    Found(Vec<String>),
    Exhausted,
}

/// Step-by-step best-first concept search over a plain edge list.
///
/// `edges` are `(parent, child)` in file order, `embeddings` maps each id to
/// an (unnormalized) direction and `latents` is the corpus.
pub fn search_oracle(
    edges: &[(String, String)],
    embeddings: &HashMap<String, Vec<f64>>,
    latents: &[Vec<f64>],
    initial: &[&str],
    thr0: f64,
    step: f64,
    target: usize,
) -> OracleResult {
    let succ = |c: &str| -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (p, s) in edges {
            if p == c && !out.contains(s) {
                out.push(s.clone());
            }
        }
        out
    };
    let v = |c: &str| -> f64 {
        let e = &embeddings[c];
        let n = norm(e);
        let unit: Vec<f64> = e.iter().map(|x| x / n).collect();
        let proj: Vec<f64> = latents.iter().map(|l| dot(&unit, l)).collect();
        variance(&proj)
    };
    // eligible successors of c with their gains, in edge order
    let es = |c: &str, thr: f64, cf: &[String]| -> (Vec<String>, Vec<f64>, Vec<f64>) {
        let mut ids = Vec::new();
        let mut gains = Vec::new();
        let mut all = Vec::new();
        for s in succ(c) {
            if cf.contains(&s) {
                continue;
            }
            let g = v(&s) - v(c);
            all.push(g);
            if g > thr {
                ids.push(s);
                gains.push(g);
            }
        }
        (ids, gains, all)
    };

    let mut cf: Vec<String> = initial.iter().map(|s| (*s).to_owned()).collect();
    let mut k = 0usize;
    let mut min_vg = f64::INFINITY;
    while cf.len() < target {
        let thr = thr0 - k as f64 * step;
        k += 1;
        let before = cf.len();
        // open entries: (concept, avg, eligible successors)
        let mut open: Vec<(String, f64, Vec<String>)> = Vec::new();
        let mut close: Vec<String> = Vec::new();
        let mut seeds = Vec::new();
        for c in &cf {
            let (ids, gains, all) = es(c, thr, &cf);
            for g in all {
                min_vg = min_vg.min(g);
            }
            if !ids.is_empty() {
                let avg = gains.iter().sum::<f64>() / gains.len() as f64;
                seeds.push((c.clone(), avg, ids));
            }
        }
        open.extend(seeds);
        while !open.is_empty() {
            let mut best = 0;
            for i in 1..open.len() {
                let (ref id, avg, _) = open[i];
                let (ref bid, bavg, _) = open[best];
                if avg > bavg || (avg == bavg && id < bid) {
                    best = i;
                }
            }
            let (c, _, succs) = open.remove(best);
            let mut added = Vec::new();
            for s in succs {
                if !cf.contains(&s) {
                    cf.push(s.clone());
                    added.push(s);
                }
            }
            close.push(c);
            for s in added {
                if close.contains(&s) || open.iter().any(|(o, _, _)| *o == s) {
                    continue;
                }
                let (ids, gains, all) = es(&s, thr, &cf);
                for g in all {
                    min_vg = min_vg.min(g);
                }
                if !ids.is_empty() {
                    let avg = gains.iter().sum::<f64>() / gains.len() as f64;
                    open.push((s, avg, ids));
                }
            }
        }
        if cf.len() == before {
            // nothing left to add from the current set
            let stuck = cf.iter().all(|c| succ(c).iter().all(|s| cf.contains(s)));
            if stuck || thr < min_vg - step {
                return OracleResult::Exhausted;
            }
        }
    }
    cf.truncate(target);
    OracleResult::Found(cf)
}
