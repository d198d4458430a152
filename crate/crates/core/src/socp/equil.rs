//! Ruiz equilibration of problem data before solving.
//!
//! Badly scaled data (costs or constraint entries orders of magnitude apart)
//! degrades the conditioning of the reduced Newton system and biases the
//! homogeneous embedding toward tiny values of tau, which inflates the
//! scaled residuals. Iterative row/column rescaling toward unit infinity
//! norms, with one shared scale per second-order cone block so that cone
//! membership is preserved, plus a scalar cost normalization, keeps both
//! effects in check. Solutions map back exactly:
//!
//! ```text
//!   x = D xs,   y = rho_c E ys,   z = rho_c D^{-1} zs
//! ```

use super::{ConicProblem, CscMatrix};

pub struct Equilibration {
    /// Per-variable column scales (user order).
    pub d: Vec<f64>,
    /// Per-row scales.
    pub e: Vec<f64>,
    /// Cost scalar: the scaled cost is D c / rho_c.
    pub rho_c: f64,
}

impl Equilibration {
    /// Computes scales for `prob` and returns the scaled copy of (c, A, b).
    pub fn compute(prob: &ConicProblem) -> (Equilibration, Vec<f64>, CscMatrix, Vec<f64>) {
        let n = prob.n_vars();
        let m = prob.n_rows();
        let mut d = vec![1.0; n];
        let mut e = vec![1.0; m];

        // SOC block membership in user order: blocks of columns that must
        // share one scale.
        let mut soc_groups: Vec<(usize, usize)> = Vec::new();
        {
            let mut at = 0usize;
            for blk in &prob.cones {
                if let super::ConeBlock::Soc(dim) = *blk {
                    soc_groups.push((at, dim));
                }
                at += blk.dim();
            }
        }

        let mut col_max = vec![0.0f64; n];
        let mut row_max = vec![0.0f64; m];
        for _ in 0..10 {
            col_max.fill(0.0);
            row_max.fill(0.0);
            for j in 0..n {
                let (rows, vals) = prob.a.col(j);
                for (&r, &v) in rows.iter().zip(vals) {
                    let s = (v * e[r] * d[j]).abs();
                    col_max[j] = col_max[j].max(s);
                    row_max[r] = row_max[r].max(s);
                }
            }
            let mut done = true;
            for j in 0..n {
                if col_max[j] > 0.0 {
                    let f = 1.0 / col_max[j].sqrt();
                    if (f - 1.0).abs() > 1e-3 {
                        done = false;
                    }
                    d[j] *= f;
                }
            }
            // Re-impose one scale per SOC block (geometric mean).
            for &(at, dim) in &soc_groups {
                let mut logsum = 0.0;
                for j in at..at + dim {
                    logsum += d[j].ln();
                }
                let g = (logsum / dim as f64).exp();
                for j in at..at + dim {
                    d[j] = g;
                }
            }
            for i in 0..m {
                if row_max[i] > 0.0 {
                    let f = 1.0 / row_max[i].sqrt();
                    if (f - 1.0).abs() > 1e-3 {
                        done = false;
                    }
                    e[i] *= f;
                }
            }
            if done {
                break;
            }
        }

        // Scaled data.
        let mut c_s: Vec<f64> = prob.c.iter().zip(&d).map(|(c, d)| c * d).collect();
        let rho_c = {
            let norm = c_s.iter().fold(0.0f64, |mx, &v| mx.max(v.abs()));
            if norm > 0.0 {
                norm
            } else {
                1.0
            }
        };
        for v in c_s.iter_mut() {
            *v /= rho_c;
        }
        let b_s: Vec<f64> = prob.b.iter().zip(&e).map(|(b, e)| b * e).collect();
        let mut triplets = Vec::with_capacity(prob.a.nnz());
        for j in 0..n {
            let (rows, vals) = prob.a.col(j);
            for (&r, &v) in rows.iter().zip(vals) {
                triplets.push((r, j, v * e[r] * d[j]));
            }
        }
        let a_s = CscMatrix::from_triplets(m, n, triplets);
        (Equilibration { d, e, rho_c }, c_s, a_s, b_s)
    }
}
