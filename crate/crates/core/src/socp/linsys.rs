//! Sparse symmetric quasi-definite linear algebra: an unpivoted signed LDL'
//! factorization with a fill-reducing ordering.
//!
//! The full three-block interior-point KKT matrix has a known sign pattern
//! (positive pivots on variable rows, negative on equality rows), so no
//! symmetric pivoting is needed; pivots that collapse toward zero or cross
//! their expected sign are bumped to a signed per-row floor and the error is
//! left to iterative refinement at the caller. Factoring the full system
//! rather than a condensed Schur form keeps every equation's residual at
//! backward-stability level even when the conic scaling blocks blow up near
//! convergence.
//!
//! The nonzero pattern is static across interior-point iterations, so the
//! symbolic work (ordering, elimination tree, column counts) happens once in
//! [`analyze`] and each iteration only refills values and refactorizes.

/// Upper-triangle sparse symmetric pattern in CSC form (diagonal entries
/// required, rows sorted ascending within a column, no duplicates).
pub struct SymPattern {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
}

/// Output of the one-time symbolic analysis: fill-reducing permutation, the
/// permuted pattern, the slot map from caller (natural) entry order into the
/// permuted value array, and the elimination-tree structure of L.
pub struct Symbolic {
    n: usize,
    /// perm[new] = old row index.
    pub(super) perm: Vec<usize>,
    /// Permuted upper pattern.
    pcolptr: Vec<usize>,
    prowidx: Vec<usize>,
    /// Natural entry slot -> permuted value slot.
    map: Vec<usize>,
    /// Elimination tree over permuted indices (-1 at roots).
    parent: Vec<isize>,
    /// Column pointers of L (strict lower triangle), sized from the symbolic
    /// column counts.
    pub(super) l_colptr: Vec<usize>,
}

/// Numeric LDL' factor; L is unit lower triangular with the static pattern
/// implied by the symbolic analysis. Owns its data so callers can hold a
/// factor alongside the [`Symbolic`] it came from; solves take the symbolic
/// by reference.
pub struct Factor {
    pub(super) l_rowidx: Vec<usize>,
    pub(super) l_values: Vec<f64>,
    pub(super) d: Vec<f64>,
    /// Number of pivots that hit the magnitude floor (diagnostic).
    #[allow(dead_code)]
    pub bumped: usize,
}

/// Reverse Cuthill-McKee ordering on the symmetric adjacency of an upper
/// pattern. Returns perm with perm[new] = old.
fn rcm_order(n: usize, colptr: &[usize], rowidx: &[usize]) -> Vec<usize> {
    // Build full adjacency (excluding self loops).
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for c in 0..n {
        for p in colptr[c]..colptr[c + 1] {
            let r = rowidx[p];
            if r != c {
                adj[r].push(c);
                adj[c].push(r);
            }
        }
    }
    for l in adj.iter_mut() {
        l.sort_unstable();
        l.dedup();
    }
    let deg: Vec<usize> = adj.iter().map(|l| l.len()).collect();

    let bfs = |start: usize, visited: &[bool]| -> Vec<usize> {
        // Level-ordered BFS with neighbors visited in ascending degree.
        let mut seen = visited.to_vec();
        let mut order = Vec::new();
        let mut queue = std::collections::VecDeque::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = adj[u].iter().copied().filter(|&v| !seen[v]).collect();
            nbrs.sort_unstable_by_key(|&v| deg[v]);
            for v in nbrs {
                seen[v] = true;
                queue.push_back(v);
            }
        }
        order
    };

    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        // Lowest-degree unvisited seed.
        let mut seed = usize::MAX;
        for i in 0..n {
            if !visited[i] && (seed == usize::MAX || deg[i] < deg[seed]) {
                seed = i;
            }
        }
        if seed == usize::MAX {
            break;
        }
        // One pseudo-peripheral refinement: jump to a lowest-degree node of
        // the farthest BFS level.
        let first = bfs(seed, &visited);
        let seed = *first.last().unwrap();
        let comp = bfs(seed, &visited);
        for &u in &comp {
            visited[u] = true;
            order.push(u);
        }
    }
    order.reverse();
    order
}

/// One-time analysis: ordering, permuted pattern, slot map, elimination tree
/// and L column counts.
pub fn analyze(pattern: &SymPattern) -> Symbolic {
    let n = pattern.n;
    debug_assert_eq!(pattern.colptr.len(), n + 1);
    let perm = rcm_order(n, &pattern.colptr, &pattern.rowidx);
    let mut iperm = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        iperm[old] = new;
    }

    // Permute entries into upper triangle of the new ordering.
    let nnz = pattern.rowidx.len();
    let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(nnz); // (col, row, nat_slot)
    for c in 0..n {
        for p in pattern.colptr[c]..pattern.colptr[c + 1] {
            let r = pattern.rowidx[p];
            let (a, b) = {
                let (pr, pc) = (iperm[r], iperm[c]);
                if pr <= pc {
                    (pr, pc)
                } else {
                    (pc, pr)
                }
            };
            entries.push((b, a, p));
        }
    }
    entries.sort_unstable();
    let mut pcolptr = vec![0usize; n + 1];
    let mut prowidx = vec![0usize; nnz];
    let mut map = vec![0usize; nnz];
    for (slot, &(c, r, nat)) in entries.iter().enumerate() {
        pcolptr[c + 1] += 1;
        prowidx[slot] = r;
        map[nat] = slot;
    }
    for c in 0..n {
        pcolptr[c + 1] += pcolptr[c];
    }

    // Elimination tree and L column counts on the permuted pattern.
    let mut parent = vec![-1isize; n];
    let mut flag = vec![usize::MAX; n];
    let mut lnz = vec![0usize; n];
    for k in 0..n {
        flag[k] = k;
        for p in pcolptr[k]..pcolptr[k + 1] {
            let mut i = prowidx[p];
            while flag[i] != k {
                if parent[i] == -1 {
                    parent[i] = k as isize;
                }
                lnz[i] += 1;
                flag[i] = k;
                i = parent[i] as usize;
            }
        }
    }
    let mut l_colptr = vec![0usize; n + 1];
    for i in 0..n {
        l_colptr[i + 1] = l_colptr[i] + lnz[i];
    }

    Symbolic {
        n,
        perm,
        pcolptr,
        prowidx,
        map,
        parent,
        l_colptr,
    }
}

impl Symbolic {
    /// Number of stored entries the caller must supply values for, in the
    /// natural entry order given to [`analyze`].

    /// Numeric factorization. `values` are aligned with the natural entry
    /// order of the analyzed pattern. Per natural row r, `signs[r]` gives
    /// the expected pivot sign; a pivot below the detection threshold
    /// `eps[r]` (in the signed sense, so wrong-sign pivots always trip it)
    /// is replaced outright by the much larger `delta[r]` with the expected
    /// sign. Replacing rather than clamping caps the growth of every later
    /// division at 1/delta, which keeps the factorization usable as a
    /// preconditioner for iterative refinement; clamping at the detection
    /// level would allow growth near 1/eps, past the point refinement can
    /// recover.
    pub fn factorize(&self, values: &[f64], signs: &[i8], eps: &[f64], delta: &[f64]) -> Factor {
        let n = self.n;
        debug_assert_eq!(values.len(), self.map.len());
        debug_assert_eq!(signs.len(), n);
        debug_assert_eq!(eps.len(), n);
        debug_assert_eq!(delta.len(), n);
        let mut pvalues = vec![0.0; values.len()];
        for (nat, &slot) in self.map.iter().enumerate() {
            pvalues[slot] = values[nat];
        }

        let lnnz = self.l_colptr[n];
        let mut l_rowidx = vec![0usize; lnnz];
        let mut l_values = vec![0.0; lnnz];
        let mut lnext: Vec<usize> = self.l_colptr[..n].to_vec();
        let mut d = vec![0.0; n];
        let mut y = vec![0.0; n];
        let mut pattern = vec![0usize; n];
        let mut walk = vec![0usize; n];
        let mut flag = vec![usize::MAX; n];
        let mut bumped = 0usize;

        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in self.pcolptr[k]..self.pcolptr[k + 1] {
                let entry = self.prowidx[p];
                y[entry] += pvalues[p];
                let mut len = 0;
                let mut i = entry;
                while flag[i] != k {
                    walk[len] = i;
                    len += 1;
                    flag[i] = k;
                    debug_assert!(self.parent[i] >= 0);
                    i = self.parent[i] as usize;
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = walk[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for &i in &pattern[top..n] {
                let yi = y[i];
                y[i] = 0.0;
                for p in self.l_colptr[i]..lnext[i] {
                    y[l_rowidx[p]] -= l_values[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                l_rowidx[lnext[i]] = k;
                l_values[lnext[i]] = lki;
                lnext[i] += 1;
            }
            let want = signs[self.perm[k]] as f64;
            if !(d[k] * want >= eps[self.perm[k]]) {
                d[k] = want * delta[self.perm[k]];
                bumped += 1;
            }
        }

        Factor {
            l_rowidx,
            l_values,
            d,
            bumped,
        }
    }
}

impl Factor {
    /// Solves M x = rhs in place; `rhs` is in natural (caller) order. `sym`
    /// must be the analysis this factor was produced from.
    pub fn solve_in_place(&self, sym: &Symbolic, rhs: &mut [f64]) {
        let n = sym.n;
        debug_assert_eq!(rhs.len(), n);
        let mut b = vec![0.0; n];
        for k in 0..n {
            b[k] = rhs[sym.perm[k]];
        }
        // Forward substitution L y = b.
        for j in 0..n {
            let xj = b[j];
            if xj != 0.0 {
                for p in sym.l_colptr[j]..sym.l_colptr[j + 1] {
                    b[self.l_rowidx[p]] -= self.l_values[p] * xj;
                }
            }
        }
        for j in 0..n {
            b[j] /= self.d[j];
        }
        // Backward substitution L' x = y.
        for j in (0..n).rev() {
            let mut acc = b[j];
            for p in sym.l_colptr[j]..sym.l_colptr[j + 1] {
                acc -= self.l_values[p] * b[self.l_rowidx[p]];
            }
            b[j] = acc;
        }
        for k in 0..n {
            rhs[sym.perm[k]] = b[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Builds an upper pattern + natural values from dense rows (upper part
    /// of a symmetric matrix; zeros skipped except diagals).
    fn from_dense(rows: &[&[f64]]) -> (SymPattern, Vec<f64>) {
        let n = rows.len();
        let mut colptr = vec![0usize; n + 1];
        let mut rowidx = Vec::new();
        let mut values = Vec::new();
        for c in 0..n {
            for r in 0..=c {
                if rows[r][c] != 0.0 || r == c {
                    rowidx.push(r);
                    values.push(rows[r][c]);
                    colptr[c + 1] += 1;
                }
            }
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        (SymPattern { n, colptr, rowidx }, values)
    }

    fn residual(rows: &[&[f64]], x: &[f64], b: &[f64]) -> f64 {
        rows.iter()
            .zip(b)
            .map(|(r, &bi)| {
                let ax: f64 = r.iter().zip(x).map(|(a, v)| a * v).sum();
                (ax - bi).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn solves_positive_definite() {
        let rows: &[&[f64]] = &[&[4.0, 1.0, 0.0], &[1.0, 3.0, -1.0], &[0.0, -1.0, 2.0]];
        let (pat, vals) = from_dense(rows);
        let sym = analyze(&pat);
        let f = sym.factorize(&vals, &[1, 1, 1], &[1e-13; 3], &[2e-7; 3]);
        assert_eq!(f.bumped, 0);
        let mut x = vec![1.0, -2.0, 0.5];
        let b = x.clone();
        f.solve_in_place(&sym, &mut x);
        assert!(residual(rows, &x, &b) < 1e-12);
    }

    #[test]
    fn solves_quasi_definite_saddle_system() {
        // [ H A'; A -d ] pattern: the full KKT shape, variables first.
        let rows: &[&[f64]] = &[
            &[2.0, 0.0, 1.0, 1.0],
            &[0.0, 1.5, 0.0, 2.0],
            &[1.0, 0.0, -1e-9, 0.0],
            &[1.0, 2.0, 0.0, -1e-9],
        ];
        let (pat, vals) = from_dense(rows);
        let sym = analyze(&pat);
        let f = sym.factorize(&vals, &[1, 1, -1, -1], &[1e-13; 4], &[2e-7; 4]);
        let b = vec![1.0, 0.0, -1.0, 2.0];
        let mut x = b.clone();
        f.solve_in_place(&sym, &mut x);
        assert!(residual(rows, &x, &b) < 1e-6, "{:?}", x);
    }

    #[test]
    fn zero_pivot_is_bumped_not_divided() {
        // Second pivot would be exactly zero without the bump.
        let rows: &[&[f64]] = &[&[1.0, 1.0], &[1.0, 1.0]];
        let (pat, vals) = from_dense(rows);
        let sym = analyze(&pat);
        let f = sym.factorize(&vals, &[1, 1], &[1e-8; 2], &[1e-4; 2]);
        assert_eq!(f.bumped, 1);
        let mut x = vec![1.0, 1.0];
        f.solve_in_place(&sym, &mut x);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrong_sign_pivot_is_bumped() {
        let rows: &[&[f64]] = &[&[-1.0]];
        let (pat, vals) = from_dense(rows);
        let sym = analyze(&pat);
        let f = sym.factorize(&vals, &[1], &[1e-10; 1], &[1e-6; 1]);
        assert_eq!(f.bumped, 1);
    }

    #[test]
    fn refactorize_with_new_values_reuses_symbolic() {
        let rows1: &[&[f64]] = &[&[4.0, 1.0, 0.0], &[1.0, 3.0, -1.0], &[0.0, -1.0, 2.0]];
        let rows2: &[&[f64]] = &[&[5.0, 2.0, 0.0], &[2.0, 6.0, 1.0], &[0.0, 1.0, 3.0]];
        let (pat, vals1) = from_dense(rows1);
        let (_, vals2) = from_dense(rows2);
        let sym = analyze(&pat);
        for (rows, vals) in [(rows1, vals1), (rows2, vals2)] {
            let f = sym.factorize(&vals, &[1, 1, 1], &[1e-13; 3], &[2e-7; 3]);
            let mut x = vec![1.0, 2.0, 3.0];
            let b = x.clone();
            f.solve_in_place(&sym, &mut x);
            assert!(residual(rows, &x, &b) < 1e-12);
        }
    }

    #[test]
    fn large_sparse_tree_structured_system_is_accurate() {
        // Path-graph Laplacian plus identity: tridiagonal SPD, the shape a
        // radial network produces; checks ordering, etree, and solves on a
        // nontrivially sized instance.
        let n = 500;
        let mut colptr = vec![0usize; n + 1];
        let mut rowidx = Vec::new();
        let mut values = Vec::new();
        for c in 0..n {
            if c > 0 {
                rowidx.push(c - 1);
                values.push(-1.0);
                colptr[c + 1] += 1;
            }
            rowidx.push(c);
            values.push(3.0);
            colptr[c + 1] += 1;
        }
        for c in 0..n {
            colptr[c + 1] += colptr[c];
        }
        let pat = SymPattern { n, colptr, rowidx };
        let sym = analyze(&pat);
        let f = sym.factorize(&values, &vec![1i8; n], &vec![1e-13; n], &vec![2e-7; n]);
        assert_eq!(f.bumped, 0);
        let xstar: Vec<f64> = (0..n).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        // b = M x*.
        let mut b = vec![0.0; n];
        for i in 0..n {
            b[i] = 3.0 * xstar[i];
            if i > 0 {
                b[i] -= xstar[i - 1];
            }
            if i + 1 < n {
                b[i] -= xstar[i + 1];
            }
        }
        let mut x = b.clone();
        f.solve_in_place(&sym, &mut x);
        let err = x
            .iter()
            .zip(&xstar)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-10, "max err {err}");
    }
    #[test]
    fn solves_random_saddle_with_soc_blocks() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        // Interior-point KKT shape: 7 diagonal variable entries, dense
        // blocks of 3, 2, 2, then 9 equality rows coupling every variable
        // with a small negative regularization diagonal. A value-blind
        // ordering may pivot an equality row early, where its diagonal is
        // just the regularization; the kernel's contract is bounded element
        // growth at this delta plus convergence under refinement.
        let n = 14;
        let m = 9;
        let dim = n + m;
        let delta = 1e-8;
        let mut dense = vec![vec![0.0f64; dim]; dim];
        for j in 0..7 {
            dense[j][j] = rng.gen_range(0.5..2.0) + delta;
        }
        let mut at = 7;
        for d in [3usize, 2, 2] {
            let mut b = vec![vec![0.0f64; d]; d];
            for r in 0..d {
                for c in 0..d {
                    b[r][c] = rng.gen_range(-1.0..1.0);
                }
            }
            for r in 0..d {
                for c in 0..d {
                    let mut acc = if r == c { 1.0 + delta } else { 0.0 };
                    for k in 0..d {
                        acc += b[k][r] * b[k][c];
                    }
                    dense[at + r][at + c] = acc;
                }
            }
            at += d;
        }
        for i in 0..m {
            for j in 0..n {
                if rng.gen_bool(0.7) {
                    let v = rng.gen_range(-1.0..1.0);
                    dense[n + i][j] = v;
                    dense[j][n + i] = v;
                }
            }
            dense[n + i][n + i] = -delta;
        }
        let rows: Vec<&[f64]> = dense.iter().map(|r| r.as_slice()).collect();
        let (pat, vals) = from_dense(&rows);
        let sym = analyze(&pat);
        let mut signs = vec![1i8; n];
        signs.extend(std::iter::repeat(-1i8).take(m));
        let f = sym.factorize(&vals, &signs, &vec![1e-13; dim], &vec![2e-7; dim]);
        assert_eq!(f.bumped, 0, "no pivot should need bumping");
        let b: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut x = b.clone();
        f.solve_in_place(&sym, &mut x);
        assert!(
            residual(&rows, &x, &b) < 1e-6,
            "single-pass residual {}",
            residual(&rows, &x, &b)
        );
        // Two refinement passes must reach near machine precision.
        for _ in 0..2 {
            let mut e = vec![0.0f64; dim];
            for r in 0..dim {
                let ax: f64 = rows[r].iter().zip(&x).map(|(a, v)| a * v).sum();
                e[r] = b[r] - ax;
            }
            f.solve_in_place(&sym, &mut e);
            for j in 0..dim {
                x[j] += e[j];
            }
        }
        assert!(
            residual(&rows, &x, &b) < 1e-11,
            "refined residual {}",
            residual(&rows, &x, &b)
        );
    }
}
