//! Cone-wise operations for the interior-point solver: the internal variable
//! layout (free, then nonnegative, then second-order blocks), Jordan-algebra
//! products, Nesterov-Todd scaling, and step-to-boundary computations.
//!
//! "Conic" vectors below exclude the free section: index 0 of a conic vector
//! is the first nonnegative variable.

use super::{ConeBlock, ConicProblem, CscMatrix};

/// Internal layout after permuting variables to [free | nonneg | soc...].
#[derive(Debug, Clone)]
pub struct Layout {
    pub n: usize,
    pub n_free: usize,
    pub n_nonneg: usize,
    pub soc_dims: Vec<usize>,
    /// permutation: internal index -> user index
    pub to_user: Vec<usize>,
}

impl Layout {
    pub fn of(prob: &ConicProblem) -> Layout {
        let mut free = Vec::new();
        let mut nonneg = Vec::new();
        let mut socs: Vec<Vec<usize>> = Vec::new();
        let mut at = 0usize;
        for block in &prob.cones {
            match *block {
                ConeBlock::Free(d) => free.extend(at..at + d),
                ConeBlock::NonNeg(d) => nonneg.extend(at..at + d),
                ConeBlock::Soc(d) => socs.push((at..at + d).collect()),
            }
            at += block.dim();
        }
        let n_free = free.len();
        let n_nonneg = nonneg.len();
        let soc_dims: Vec<usize> = socs.iter().map(|s| s.len()).collect();
        let mut to_user = free;
        to_user.append(&mut nonneg);
        for s in socs {
            to_user.extend(s);
        }
        Layout {
            n: at,
            n_free,
            n_nonneg,
            soc_dims,
            to_user,
        }
    }

    pub fn n_conic(&self) -> usize {
        self.n - self.n_free
    }

    /// Barrier degree: one per nonnegative variable, one per SOC block.
    pub fn degree(&self) -> usize {
        self.n_nonneg + self.soc_dims.len()
    }

    /// SOC block ranges within a conic vector: (offset, dim).
    pub fn soc_ranges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let mut at = self.n_nonneg;
        self.soc_dims.iter().map(move |&d| {
            let r = (at, d);
            at += d;
            r
        })
    }

    /// Permutes user-order cost and constraint data into the internal order.
    pub fn permute(&self, c_user: &[f64], a_user: &CscMatrix) -> (Vec<f64>, CscMatrix) {
        let mut c = vec![0.0; self.n];
        for (internal, &user) in self.to_user.iter().enumerate() {
            c[internal] = c_user[user];
        }
        let mut triplets = Vec::with_capacity(a_user.nnz());
        for (internal, &user) in self.to_user.iter().enumerate() {
            let (rows, vals) = a_user.col(user);
            for (&r, &v) in rows.iter().zip(vals) {
                triplets.push((r, internal, v));
            }
        }
        let a = CscMatrix::from_triplets(a_user.n_rows, self.n, triplets);
        (c, a)
    }

    /// Scatters an internal-order vector back to user order.
    pub fn to_user_order(&self, internal: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, &user) in self.to_user.iter().enumerate() {
            out[user] = internal[i];
        }
        out
    }

    /// The cone unit element e (conic sections only): ones on the
    /// nonnegative part, (1, 0, ...) per SOC block.
    pub fn unit(&self) -> Vec<f64> {
        let mut e = vec![0.0; self.n_conic()];
        e[..self.n_nonneg].fill(1.0);
        for (at, _) in self.soc_ranges() {
            e[at] = 1.0;
        }
        e
    }

    /// Checks strict interior membership of a conic vector.
    #[allow(dead_code)] // diagnostic helper, exercised by tests
    pub fn is_interior(&self, u: &[f64]) -> bool {
        if u[..self.n_nonneg].iter().any(|&v| v <= 0.0) {
            return false;
        }
        for (at, d) in self.soc_ranges() {
            let head = u[at];
            let rest = norm2(&u[at + 1..at + d]);
            if head <= rest {
                return false;
            }
        }
        true
    }
}

#[allow(dead_code)] // used by is_interior
pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Jordan product u o v per cone block: elementwise on the nonnegative part,
/// (u'v, u0 v1 + v0 u1) on each SOC block.
pub fn jordan_prod(layout: &Layout, u: &[f64], v: &[f64], out: &mut [f64]) {
    for i in 0..layout.n_nonneg {
        out[i] = u[i] * v[i];
    }
    for (at, d) in layout.soc_ranges() {
        let (u0, v0) = (u[at], v[at]);
        out[at] = dot(&u[at..at + d], &v[at..at + d]);
        for k in at + 1..at + d {
            out[k] = u0 * v[k] + v0 * u[k];
        }
    }
}

/// Nesterov-Todd scaling point for the conic sections. W maps the dual space
/// to the scaled space; lambda = W z = W^{-1} x is the scaled point.
#[derive(Debug, Clone)]
pub struct Scaling {
    /// Nonnegative part: W = diag(w), w_i = sqrt(x_i / z_i).
    pub w_nn: Vec<f64>,
    /// Per SOC block: (eta, wbar) with wbar0^2 - |wbar1|^2 = 1; the block map
    /// is eta * [wbar0, wbar1'; wbar1, I + wbar1 wbar1'/(1 + wbar0)].
    pub socs: Vec<(f64, Vec<f64>)>,
    /// lambda = W z, full conic length.
    pub lam: Vec<f64>,
}

impl Scaling {
    /// Fails (None) when either point is not strictly interior.
    pub fn compute(layout: &Layout, x: &[f64], z: &[f64]) -> Option<Scaling> {
        let nn = layout.n_nonneg;
        let mut w_nn = vec![0.0; nn];
        for i in 0..nn {
            if x[i] <= 0.0 || z[i] <= 0.0 {
                return None;
            }
            w_nn[i] = (x[i] / z[i]).sqrt();
        }
        let mut socs = Vec::with_capacity(layout.soc_dims.len());
        for (at, d) in layout.soc_ranges() {
            let xs = &x[at..at + d];
            let zs = &z[at..at + d];
            let rho_x = xs[0] * xs[0] - dot(&xs[1..], &xs[1..]);
            let rho_z = zs[0] * zs[0] - dot(&zs[1..], &zs[1..]);
            if rho_x <= 0.0 || rho_z <= 0.0 || xs[0] <= 0.0 || zs[0] <= 0.0 {
                return None;
            }
            let (sx, sz) = (rho_x.sqrt(), rho_z.sqrt());
            // gamma^2 = (1 + xbar'zbar)/2 with the ordinary dot product.
            let xz = dot(xs, zs) / (sx * sz);
            let gamma = ((1.0 + xz) / 2.0).sqrt();
            let mut wbar = vec![0.0; d];
            wbar[0] = (xs[0] / sx + zs[0] / sz) / (2.0 * gamma);
            for k in 1..d {
                wbar[k] = (xs[k] / sx - zs[k] / sz) / (2.0 * gamma);
            }
            let eta = (rho_x / rho_z).powf(0.25);
            socs.push((eta, wbar));
        }
        let mut s = Scaling {
            w_nn,
            socs,
            lam: vec![0.0; layout.n_conic()],
        };
        let mut lam = vec![0.0; layout.n_conic()];
        s.apply_w(layout, z, &mut lam);
        s.lam = lam;
        Some(s)
    }

    /// out = W u.
    pub fn apply_w(&self, layout: &Layout, u: &[f64], out: &mut [f64]) {
        for i in 0..layout.n_nonneg {
            out[i] = self.w_nn[i] * u[i];
        }
        for (bi, (at, d)) in layout.soc_ranges().enumerate() {
            let (eta, wbar) = &self.socs[bi];
            soc_householder(*eta, wbar, 1.0, &u[at..at + d], &mut out[at..at + d]);
        }
    }

    /// out = W^{-1} u.
    pub fn apply_w_inv(&self, layout: &Layout, u: &[f64], out: &mut [f64]) {
        for i in 0..layout.n_nonneg {
            out[i] = u[i] / self.w_nn[i];
        }
        for (bi, (at, d)) in layout.soc_ranges().enumerate() {
            let (eta, wbar) = &self.socs[bi];
            soc_householder(1.0 / *eta, wbar, -1.0, &u[at..at + d], &mut out[at..at + d]);
        }
    }

    /// out = lambda \ d (Jordan division by the scaled point).
    pub fn div_lam(&self, layout: &Layout, rhs: &[f64], out: &mut [f64]) {
        for i in 0..layout.n_nonneg {
            out[i] = rhs[i] / self.lam[i];
        }
        for (at, d) in layout.soc_ranges() {
            let l = &self.lam[at..at + d];
            let r = &rhs[at..at + d];
            let det = l[0] * l[0] - dot(&l[1..], &l[1..]);
            let u0 = (l[0] * r[0] - dot(&l[1..], &r[1..])) / det;
            out[at] = u0;
            for k in 1..d {
                out[at + k] = (r[k] - u0 * l[k]) / l[0];
            }
        }
    }
}

/// Applies scale * [w0, s*w1'; s*w1, I + w1 w1'/(1 + w0)] to u. With s = 1
/// this is the NT block map W/eta; with s = -1 and scale = 1/eta it is its
/// inverse (hyperbolic Householder identity, checked in tests).
fn soc_householder(scale: f64, wbar: &[f64], s: f64, u: &[f64], out: &mut [f64]) {
    let d = wbar.len();
    let w0 = wbar[0];
    let w1u1 = dot(&wbar[1..], &u[1..]);
    out[0] = scale * (w0 * u[0] + s * w1u1);
    let coef = s * u[0] + w1u1 / (1.0 + w0);
    for k in 1..d {
        out[k] = scale * (u[k] + coef * wbar[k]);
    }
}

/// Largest step alpha with u + alpha*du staying in the cone (conic sections
/// only); returns f64::INFINITY when unblocked. `u` must be strictly interior.
pub fn step_to_boundary(layout: &Layout, u: &[f64], du: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..layout.n_nonneg {
        if du[i] < 0.0 {
            alpha = alpha.min(-u[i] / du[i]);
        }
    }
    for (at, d) in layout.soc_ranges() {
        let us = &u[at..at + d];
        let ds = &du[at..at + d];
        alpha = alpha.min(soc_step(us, ds));
    }
    alpha
}

/// Step to the boundary of one SOC block: smallest positive root of
/// q(a) = c0 + 2 c1 a + c2 a^2, where q(a) = (u0+a d0)^2 - |u1+a d1|^2.
fn soc_step(u: &[f64], d: &[f64]) -> f64 {
    let c0 = u[0] * u[0] - dot(&u[1..], &u[1..]);
    let c1 = u[0] * d[0] - dot(&u[1..], &d[1..]);
    let c2 = d[0] * d[0] - dot(&d[1..], &d[1..]);
    debug_assert!(c0 > 0.0, "step from non-interior SOC point");
    if c2 >= 0.0 && c1 >= 0.0 {
        return f64::INFINITY; // q increasing from q(0) > 0
    }
    if c2 == 0.0 {
        return -c0 / (2.0 * c1); // c1 < 0 here
    }
    let disc = c1 * c1 - c0 * c2;
    if disc < 0.0 {
        return f64::INFINITY; // no real crossing (c2 > 0)
    }
    let sq = disc.sqrt();
    // Cancellation-free forms of the smallest positive root.
    let alpha = if c1 <= 0.0 {
        c0 / (-c1 + sq)
    } else {
        -(sq + c1) / c2
    };
    if alpha < 0.0 {
        f64::INFINITY
    } else {
        alpha
    }
}
