//! Independent reference implementations shared by the integration tests.
//! Everything here is written from the model definitions directly, without
//! going through the library's inference, kernel or solver code.
#![allow(dead_code)]

use cardkernel::training::Norm;
use cardkernel::{Bag, BagLabel, CardinalitySpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Linear-space count potential, straight from the definitions.
pub fn potential(spec: &CardinalitySpec, positive: bool, c: usize, m: usize) -> f64 {
    let ratio = c as f64 / m as f64;
    match spec {
        CardinalitySpec::Normal { mu, sigma } => {
            let centre = if positive { *mu } else { 0.0 };
            (-(ratio - centre).powi(2) / (2.0 * sigma * sigma)).exp()
        }
        CardinalitySpec::RatioConstrained { rho } => {
            let meets = c as f64 >= rho * m as f64 - 1e-12;
            if meets == positive {
                1.0
            } else {
                0.0
            }
        }
        CardinalitySpec::Uniform => 1.0,
        CardinalitySpec::Tabular { log_pos, log_neg } => {
            if positive {
                log_pos[c].exp()
            } else {
                log_neg[c].exp()
            }
        }
    }
}

/// Quantities of one bag by summing over all `2^m` labelings in linear space.
#[derive(Debug, Clone)]
pub struct Enumerated {
    pub z_pos: f64,
    pub z_neg: f64,
    pub posterior: f64,
    pub cond_pos: Vec<f64>,
    pub cond_neg: Vec<f64>,
    pub marginals: Vec<f64>,
    /// Best `ln C(c) + sum of selected weights` per label, `-inf` if none allowed.
    pub map_pos: f64,
    pub map_neg: f64,
    /// `a_c = sum over labelings with c positives of exp(sum w)`.
    pub counts: Vec<f64>,
}

pub fn enumerate(weights: &[f64], spec: &CardinalitySpec) -> Enumerated {
    let m = weights.len();
    assert!(m <= 16, "reference enumeration is for small bags");
    let mut z = [0.0f64; 2];
    let mut with_one = vec![[0.0f64; 2]; m];
    let mut map = [f64::NEG_INFINITY; 2];
    let mut counts = vec![0.0; m + 1];
    for mask in 0u32..(1 << m) {
        let on: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let c = on.len();
        let s: f64 = on.iter().map(|&i| weights[i]).sum();
        let unary = s.exp();
        counts[c] += unary;
        for (side, positive) in [(0, true), (1, false)] {
            let pot = potential(spec, positive, c, m);
            if pot == 0.0 {
                continue;
            }
            let joint = pot * unary;
            z[side] += joint;
            for &i in &on {
                with_one[i][side] += joint;
            }
            map[side] = map[side].max(pot.ln() + s);
        }
    }
    let total = z[0] + z[1];
    let cond = |side: usize| -> Vec<f64> {
        if z[side] == 0.0 {
            vec![f64::NAN; m]
        } else {
            with_one.iter().map(|a| a[side] / z[side]).collect()
        }
    };
    Enumerated {
        z_pos: z[0],
        z_neg: z[1],
        posterior: z[0] / total,
        cond_pos: cond(0),
        cond_neg: cond(1),
        marginals: with_one.iter().map(|a| (a[0] + a[1]) / total).collect(),
        map_pos: map[0],
        map_neg: map[1],
        counts,
    }
}

/// `|a - b| / max(|a|, |b|, 1)`, exact for equal values including infinities.
pub fn log_rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if !(a.is_finite() && b.is_finite()) {
        f64::INFINITY
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }
}

/// `|a - b| / max(|a|, |b|)`, zero for two zeros.
pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else if !(a.is_finite() && b.is_finite()) {
        f64::INFINITY
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn worst(a: &[f64], b: &[f64], f: fn(f64, f64) -> f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).fold(0.0, f64::max)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn random_bag(rng: &mut ChaCha8Rng, id: &str, m: usize, d: usize) -> Bag {
    Bag::from_rows(id, (0..m).map(|_| gaussian(rng, d, 1.0)).collect(), None).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Unnormalized marginal-weighted bag kernel written as a plain double sum.
pub fn direct_bag_kernel(
    p: &Bag,
    q: &Bag,
    mp: &[f64],
    mq: &[f64],
    identity: bool,
    k: impl Fn(&[f64], &[f64]) -> f64,
) -> f64 {
    let mut total = 0.0;
    for (x, a) in p.instances().iter().zip(mp) {
        for (y, b) in q.instances().iter().zip(mq) {
            let w = if identity { a * b + (1.0 - a) * (1.0 - b) } else { a * b };
            total += w * k(x.features(), y.features());
        }
    }
    total
}

/// Dual objective `sum a - 1/2 a' Q a` with `Q_ij = y_i y_j K_ij`.
pub fn dual_objective(k: &[Vec<f64>], y: &[f64], a: &[f64]) -> f64 {
    let n = a.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * y[i] * y[j] * k[i][j];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Projection onto `{0 <= a <= C, y'a = 0}` by bisection on the multiplier.
fn project(v: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |nu: f64| -> Vec<f64> { v.iter().zip(y).map(|(vi, yi)| (vi - nu * yi).clamp(0.0, c)).collect() };
    let resid = |nu: f64| -> f64 { at(nu).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let (mut lo, mut hi) = (-1e6, 1e6);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if resid(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi))
}

/// Reference dual solution by projected gradient ascent.
pub fn reference_qp(k: &[Vec<f64>], y: &[f64], c: f64, iters: usize) -> Vec<f64> {
    let n = y.len();
    let trace: f64 = (0..n).map(|i| k[i][i]).sum();
    let step = 1.0 / trace.max(1e-12);
    let mut a = vec![0.0; n];
    for _ in 0..iters {
        let grad: Vec<f64> = (0..n)
            .map(|i| 1.0 - y[i] * (0..n).map(|j| y[j] * k[i][j] * a[j]).sum::<f64>())
            .collect();
        let v: Vec<f64> = a.iter().zip(&grad).map(|(ai, g)| ai + step * g).collect();
        a = project(&v, y, c);
    }
    a
}

/// Objective through the reference enumeration.
pub fn reference_objective(bags: &[Bag], theta: &[f64], spec: &CardinalitySpec, lambda: f64, norm: Norm) -> f64 {
    let mut total = 0.0;
    for bag in bags {
        let w: Vec<f64> = bag.instances().iter().map(|x| dot(&theta[..x.dim()], x.features())).collect();
        let e = enumerate(&w, spec);
        let z = match bag.label.unwrap() {
            BagLabel::Positive => e.z_pos,
            BagLabel::Negative => e.z_neg,
        };
        total += (z / (e.z_pos + e.z_neg)).ln();
    }
    let r: f64 = match norm {
        Norm::L2 => theta.iter().map(|t| t * t).sum(),
        Norm::L1 => theta.iter().map(|t| t.abs()).sum(),
    };
    total - lambda * r
}

/// Central difference of `f` along coordinate `j`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, theta: &[f64], j: usize, h: f64) -> f64 {
    let mut plus = theta.to_vec();
    plus[j] += h;
    let mut minus = theta.to_vec();
    minus[j] -= h;
    (f(&plus) - f(&minus)) / (2.0 * h)
}
