//! Slow, independent reference implementations used by the integration tests.

#![allow(dead_code)]

use num_complex::Complex64;

pub type Matrix = Vec<Vec<Complex64>>;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

pub fn identity(dim: usize) -> Matrix {
    (0..dim)
        .map(|i| {
            (0..dim)
                .map(|j| if i == j { c(1.0, 0.0) } else { c(0.0, 0.0) })
                .collect()
        })
        .collect()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (0..n).map(|k| a[i][k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Lifts a one-qubit matrix onto wire `q` of an `n`-qubit register (wire q = bit q).
pub fn lift(single: [[Complex64; 2]; 2], q: usize, n: usize) -> Matrix {
    let dim = 1 << n;
    let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            // Identity on every other wire.
            if (i & !(1 << q)) == (j & !(1 << q)) {
                *cell = single[(i >> q) & 1][(j >> q) & 1];
            }
        }
    }
    m
}

pub fn rx(theta: f64) -> [[Complex64; 2]; 2] {
    let (s, co) = (theta / 2.0).sin_cos();
    [[c(co, 0.0), c(0.0, -s)], [c(0.0, -s), c(co, 0.0)]]
}

pub fn rz(theta: f64) -> [[Complex64; 2]; 2] {
    let (s, co) = (theta / 2.0).sin_cos();
    [[c(co, -s), c(0.0, 0.0)], [c(0.0, 0.0), c(co, s)]]
}

pub fn cnot(control: usize, target: usize, n: usize) -> Matrix {
    let dim = 1 << n;
    let mut m = vec![vec![c(0.0, 0.0); dim]; dim];
    for j in 0..dim {
        let i = if j >> control & 1 == 1 {
            j ^ (1 << target)
        } else {
            j
        };
        m[i][j] = c(1.0, 0.0);
    }
    m
}

/// Whole-circuit unitary of angle encoding followed by the layered ansatz,
/// written out from the circuit description without the simulator's gate list.
pub fn circuit_unitary(
    features: &[f64],
    params: &[f64],
    n: usize,
    layers: usize,
    strong: bool,
) -> Matrix {
    let mut u = identity(1 << n);
    let push = |g: Matrix, u: &mut Matrix| *u = matmul(&g, u);
    for (q, &x) in features.iter().enumerate() {
        push(lift(rx(x), q, n), &mut u);
    }
    let per = if strong { 2 } else { 1 };
    for l in 0..layers {
        for q in 0..n {
            let base = (l * n + q) * per;
            push(lift(rx(params[base]), q, n), &mut u);
            if strong {
                push(lift(rz(params[base + 1]), q, n), &mut u);
            }
        }
        let r = if strong { l % (n - 1) + 1 } else { 1 };
        for q in 0..n {
            push(cnot(q, (q + r) % n, n), &mut u);
        }
    }
    u
}

/// `⟨Z_q⟩` for every wire after applying `u` to `|0…0⟩`.
pub fn z_expectations(u: &Matrix, n: usize) -> Vec<f64> {
    let probs: Vec<f64> = u.iter().map(|row| row[0].norm_sqr()).collect();
    (0..n)
        .map(|q| {
            probs
                .iter()
                .enumerate()
                .map(|(b, p)| if b >> q & 1 == 0 { *p } else { -*p })
                .sum()
        })
        .collect()
}

pub fn dense_vqc(
    features: &[f64],
    params: &[f64],
    n: usize,
    layers: usize,
    strong: bool,
) -> Vec<f64> {
    z_expectations(&circuit_unitary(features, params, n, layers, strong), n)
}

/// Central finite differences of a vector-valued function: `out[k][i] = ∂f_i/∂x_k`.
pub fn finite_difference(
    x: &[f64],
    h: f64,
    mut f: impl FnMut(&[f64]) -> Vec<f64>,
) -> Vec<Vec<f64>> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + h;
            let plus = f(&x);
            x[k] = orig - h;
            let minus = f(&x);
            x[k] = orig;
            plus.iter()
                .zip(&minus)
                .map(|(p, m)| (p - m) / (2.0 * h))
                .collect()
        })
        .collect()
}

/// GAE written as the explicit truncated sum
/// `A_t = Σ_k (γλ)^k δ_{t+k}`, stopping after a terminal step.
pub fn gae_by_sum(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap: f64,
    gamma: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let next_value = |t: usize| if t + 1 < n { values[t + 1] } else { bootstrap };
    let delta: Vec<f64> = (0..n)
        .map(|t| {
            let live = if dones[t] { 0.0 } else { 1.0 };
            rewards[t] + gamma * live * next_value(t) - values[t]
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut sum = 0.0;
            let mut w = 1.0;
            for k in t..n {
                sum += w * delta[k];
                if dones[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            sum
        })
        .collect()
}

/// Plain discounted return, cut at terminal steps.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            g = 0.0;
        }
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}
