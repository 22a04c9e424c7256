//! Reference computations for integration tests. Nothing here calls into the
//! policy or reward code it is used to check.

#![allow(dead_code)]

use fairrank::Ranking;

/// All permutations of `0..m` in lexicographic order.
pub fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn go(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        let m = used.len();
        if prefix.len() == m {
            out.push(prefix.clone());
            return;
        }
        for i in 0..m {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                go(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), &mut vec![false; m], &mut out);
    out
}

pub fn rankings(m: usize) -> Vec<Ranking> {
    permutations(m).into_iter().map(|p| Ranking::new(p).unwrap()).collect()
}

/// Sequential-choice probability of `order`: at each position the chosen item
/// wins with weight `exp(score)` among those not yet placed.
pub fn pl_probability(scores: &[f64], order: &[usize]) -> f64 {
    let mut p = 1.0;
    for (pos, &item) in order.iter().enumerate() {
        let denom: f64 = order[pos..].iter().map(|&j| scores[j].exp()).sum();
        p *= scores[item].exp() / denom;
    }
    p
}

/// Top-K utility: enrollment inside the cutoff minus enrollment outside it.
pub fn utility(order: &[usize], e: &[f64], k: usize) -> f64 {
    let top: f64 = order[..k].iter().map(|&i| e[i]).sum();
    let rest: f64 = order[k..].iter().map(|&i| e[i]).sum();
    top - rest
}

/// Shannon entropy in nats with `0 ln 0 = 0`.
pub fn shannon(w: &[f64]) -> f64 {
    w.iter().filter(|&&x| x > 0.0).map(|&x| -x * x.ln()).sum()
}

pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (norm(a) * norm(b))
}
