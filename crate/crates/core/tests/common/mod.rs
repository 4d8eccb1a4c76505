//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use panelshift::Design;

/// Inverse of a small symmetric positive-definite matrix by Gauss–Jordan
/// elimination with partial pivoting.
pub fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..k).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..k {
        let pivot = (col..k).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs())).unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        for v in m[col].iter_mut() {
            *v /= p;
        }
        for r in 0..k {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    let pivot_row = m[col].clone();
                    for (v, pv) in m[r].iter_mut().zip(&pivot_row) {
                        *v -= f * pv;
                    }
                }
            }
        }
    }
    m.into_iter().map(|r| r[k..].to_vec()).collect()
}

pub fn gram(design: &Design, rows: &[usize]) -> Vec<Vec<f64>> {
    let k = design.cols();
    let mut g = vec![vec![0.0; k]; k];
    for &i in rows {
        let x = design.row(i);
        for a in 0..k {
            for b in 0..k {
                g[a][b] += x[a] * x[b];
            }
        }
    }
    g
}

/// β̂ = (X'X)⁻¹ X'y over the given rows.
pub fn normal_equations_rows(design: &Design, y: &[f64], rows: &[usize]) -> Vec<f64> {
    let k = design.cols();
    let inv = invert(&gram(design, rows));
    let mut xty = vec![0.0; k];
    for &i in rows {
        for (a, v) in design.row(i).iter().enumerate() {
            xty[a] += v * y[i];
        }
    }
    (0..k).map(|a| (0..k).map(|b| inv[a][b] * xty[b]).sum()).collect()
}

pub fn normal_equations(design: &Design, y: &[f64]) -> Vec<f64> {
    let rows: Vec<usize> = (0..design.rows()).collect();
    normal_equations_rows(design, y, &rows)
}

/// Cook's distance by refitting without observation `i`:
/// `(β̂ − β̂₍ᵢ₎)' X'X (β̂ − β̂₍ᵢ₎) / (k s²)`.
pub fn leave_one_out_cooks(design: &Design, y: &[f64], i: usize) -> f64 {
    let n = design.rows();
    let k = design.cols();
    let all: Vec<usize> = (0..n).collect();
    let rest: Vec<usize> = (0..n).filter(|&r| r != i).collect();
    let beta = normal_equations_rows(design, y, &all);
    let beta_i = normal_equations_rows(design, y, &rest);
    let sse: f64 = (0..n)
        .map(|r| {
            let fit: f64 = design.row(r).iter().zip(&beta).map(|(x, b)| x * b).sum();
            (y[r] - fit).powi(2)
        })
        .sum();
    let s2 = sse / (n - k) as f64;
    let g = gram(design, &all);
    let d: Vec<f64> = beta.iter().zip(&beta_i).map(|(a, b)| a - b).collect();
    let quad: f64 = (0..k).map(|a| (0..k).map(|b| d[a] * g[a][b] * d[b]).sum::<f64>()).sum();
    quad / (k as f64 * s2)
}

/// P(X ≥ wins) for X ~ Binomial(trials, 1/2).
pub fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut pmf = 0.5f64.powi(trials as i32);
    let mut tail = 0.0;
    for k in 0..=trials {
        if k >= wins {
            tail += pmf;
        }
        pmf *= (trials - k) as f64 / (k + 1) as f64;
    }
    tail.min(1.0)
}
