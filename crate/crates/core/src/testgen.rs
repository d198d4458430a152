//! Seeded random problem generators for tests and benchmarks.
//!
//! Everything here is deterministic in the seed, so failures reproduce
//! exactly. The conic generators construct problems with *known* outcomes by
//! building the certificate first and deriving the data from it:
//!
//! - known optimum: pick a strictly complementary primal-dual pair
//!   (x*, y*, z*) cone by cone, then set b := A x* and c := A'y* + z*, which
//!   makes x* optimal with objective c'x* by strong duality;
//! - infeasible: include a row that forces a negative sum of cone-nonnegative
//!   quantities, which carries an explicit Farkas certificate;
//! - unbounded: build A orthogonal to an interior ray d with c'd < 0, and a
//!   feasible base point, so the objective decreases without bound along d.

use crate::socp::{ConeBlock, ConicProblem, CscMatrix};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A random cone program with a certified optimal solution.
pub struct KnownSocp {
    pub problem: ConicProblem,
    pub optimal_objective: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

fn names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

/// Random cone structure plus a strictly complementary (x, z) pair on it.
/// Free variables get z = 0; each nonnegative variable is active on exactly
/// one side; each SOC block is boundary-boundary, interior-zero, or
/// zero-interior.
fn random_structure(rng: &mut ChaCha8Rng) -> (Vec<ConeBlock>, Vec<f64>, Vec<f64>) {
    let mut cones = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();

    let n_free = rng.gen_range(0..=2);
    if n_free > 0 {
        cones.push(ConeBlock::Free(n_free));
        for _ in 0..n_free {
            x.push(rng.gen_range(-1.0..1.0));
            z.push(0.0);
        }
    }

    let n_nonneg = rng.gen_range(1..=6);
    cones.push(ConeBlock::NonNeg(n_nonneg));
    for _ in 0..n_nonneg {
        if rng.gen_bool(0.5) {
            x.push(0.0);
            z.push(rng.gen_range(0.1..1.0));
        } else {
            x.push(rng.gen_range(0.1..1.0));
            z.push(0.0);
        }
    }

    let n_socs = rng.gen_range(1..=3);
    for _ in 0..n_socs {
        let d = rng.gen_range(2..=4);
        cones.push(ConeBlock::Soc(d));
        let mut tail: Vec<f64> = (1..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut norm: f64 = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 0.1 {
            tail[0] += 0.5;
            norm = tail.iter().map(|v| v * v).sum::<f64>().sqrt();
        }
        match rng.gen_range(0..3) {
            0 => {
                // Both on the boundary, complementary: z = alpha * (x0, -x1).
                let alpha = rng.gen_range(0.2..1.0);
                x.push(norm);
                z.push(alpha * norm);
                for t in &tail {
                    x.push(*t);
                    z.push(-alpha * t);
                }
            }
            1 => {
                // x strictly interior, z = 0.
                x.push(norm + rng.gen_range(0.2..1.0));
                z.push(0.0);
                for t in &tail {
                    x.push(*t);
                    z.push(0.0);
                }
            }
            _ => {
                // x = 0, z strictly interior.
                x.push(0.0);
                z.push(norm + rng.gen_range(0.2..1.0));
                for t in &tail {
                    x.push(0.0);
                    z.push(*t);
                }
            }
        }
    }
    (cones, x, z)
}

/// Dense-ish random constraint matrix with no empty rows.
fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> CscMatrix {
    let mut triplets = Vec::new();
    for i in 0..m {
        let mut any = false;
        for j in 0..n {
            if rng.gen_bool(0.7) {
                triplets.push((i, j, rng.gen_range(-1.0..1.0)));
                any = true;
            }
        }
        if !any {
            triplets.push((i, i % n, rng.gen_range(0.5..1.0)));
        }
    }
    CscMatrix::from_triplets(m, n, triplets)
}

/// A feasible, bounded cone program whose optimal objective is known by
/// construction.
pub fn random_socp_with_known_optimum(seed: u64) -> KnownSocp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cones, x, z) = random_structure(&mut rng);
    let n = x.len();
    let m = rng.gen_range(1..=(2 * n / 3).max(1));
    let a = random_matrix(&mut rng, m, n);
    let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut b = vec![0.0; m];
    a.mul_vec(&x, &mut b);
    let mut c = vec![0.0; n];
    a.mul_vec_t(&y, &mut c);
    for j in 0..n {
        c[j] += z[j];
    }
    let optimal_objective = c.iter().zip(&x).map(|(c, x)| c * x).sum();
    let problem = ConicProblem {
        c,
        a,
        b,
        cones,
        var_names: names(n),
    };
    KnownSocp {
        problem,
        optimal_objective,
        x,
        y,
        z,
    }
}

/// A cone program that is primal infeasible with an explicit Farkas row:
/// the sum of all cone-nonnegative quantities is forced to equal -1.
pub fn random_infeasible_socp(seed: u64) -> ConicProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cones, x, _z) = random_structure(&mut rng);
    let n = x.len();
    let m_extra = rng.gen_range(0..=3);
    let m = 1 + m_extra;

    let mut triplets = Vec::new();
    // Row 0: nonneg variables and SOC head entries with +1 coefficients.
    let mut at = 0usize;
    for blk in &cones {
        match *blk {
            ConeBlock::Free(d) => at += d,
            ConeBlock::NonNeg(d) => {
                for j in at..at + d {
                    triplets.push((0, j, 1.0));
                }
                at += d;
            }
            ConeBlock::Soc(d) => {
                triplets.push((0, at, 1.0));
                at += d;
            }
        }
    }
    for i in 1..m {
        for j in 0..n {
            if rng.gen_bool(0.5) {
                triplets.push((i, j, rng.gen_range(-1.0..1.0)));
            }
        }
        triplets.push((i, i % n, rng.gen_range(0.5..1.0)));
    }
    let a = CscMatrix::from_triplets(m, n, triplets);
    let mut b: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
    b[0] = -1.0;
    // Keep the dual feasible (c = A'y + z with z in K*) so the only valid
    // certificate is primal infeasibility; a fully random objective could
    // make the problem dual infeasible as well, and then either certificate
    // would be a correct answer.
    let y: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut z = vec![0.0; n];
    let mut at = 0usize;
    for blk in &cones {
        match *blk {
            ConeBlock::Free(d) => at += d,
            ConeBlock::NonNeg(d) => {
                for zj in &mut z[at..at + d] {
                    *zj = rng.gen_range(0.0..1.0);
                }
                at += d;
            }
            ConeBlock::Soc(d) => {
                let mut norm = 0.0f64;
                for j in at + 1..at + d {
                    z[j] = rng.gen_range(-1.0..1.0);
                    norm += z[j] * z[j];
                }
                z[at] = norm.sqrt() + rng.gen_range(0.0..0.5);
                at += d;
            }
        }
    }
    let mut c = vec![0.0; n];
    a.mul_vec_t(&y, &mut c);
    for j in 0..n {
        c[j] += z[j];
    }
    ConicProblem {
        c,
        a,
        b,
        cones,
        var_names: names(n),
    }
}

/// A feasible cone program whose objective is unbounded below along an
/// interior ray.
pub fn random_unbounded_socp(seed: u64) -> ConicProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cones, base, _z) = random_structure(&mut rng);
    let n = base.len();

    // Interior ray d.
    let mut dir = vec![0.0; n];
    let mut at = 0usize;
    for blk in &cones {
        match *blk {
            ConeBlock::Free(d) => {
                for j in at..at + d {
                    dir[j] = rng.gen_range(-1.0..1.0);
                }
                at += d;
            }
            ConeBlock::NonNeg(d) => {
                for j in at..at + d {
                    dir[j] = rng.gen_range(0.2..1.0);
                }
                at += d;
            }
            ConeBlock::Soc(d) => {
                let mut norm = 0.0f64;
                for j in at + 1..at + d {
                    dir[j] = rng.gen_range(-1.0..1.0);
                    norm += dir[j] * dir[j];
                }
                dir[at] = norm.sqrt() + rng.gen_range(0.2..1.0);
                at += d;
            }
        }
    }
    let dd: f64 = dir.iter().map(|v| v * v).sum();

    // Rows orthogonal to the ray; feasibility from a strictly interior base
    // point (reuse the structure's x with zeros nudged inward).
    let mut x0 = base;
    let mut at = 0usize;
    for blk in &cones {
        match *blk {
            ConeBlock::Free(d) => at += d,
            ConeBlock::NonNeg(d) => {
                for j in at..at + d {
                    x0[j] += 0.3;
                }
                at += d;
            }
            ConeBlock::Soc(d) => {
                let norm: f64 = x0[at + 1..at + d].iter().map(|v| v * v).sum::<f64>().sqrt();
                x0[at] = norm + 0.3;
                at += d;
            }
        }
    }

    let m = rng.gen_range(1..=(n / 2).max(1));
    let mut triplets = Vec::new();
    for i in 0..m {
        let mut row: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rd: f64 = row.iter().zip(&dir).map(|(r, d)| r * d).sum();
        for (r, d) in row.iter_mut().zip(&dir) {
            *r -= rd / dd * d;
        }
        for (j, &v) in row.iter().enumerate() {
            if v.abs() > 1e-12 {
                triplets.push((i, j, v));
            }
        }
    }
    let a = CscMatrix::from_triplets(m, n, triplets);
    let mut b = vec![0.0; m];
    a.mul_vec(&x0, &mut b);

    // Cost decreasing along the ray: c'd = -1 exactly.
    let mut c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let cd: f64 = c.iter().zip(&dir).map(|(c, d)| c * d).sum();
    for (cj, dj) in c.iter_mut().zip(&dir) {
        *cj -= (cd + 1.0) / dd * dj;
    }
    ConicProblem {
        c,
        a,
        b,
        cones,
        var_names: names(n),
    }
}
