//! Conic relaxation of optimal power flow on switched distribution networks.
//!
//! Builds the branch-flow program — power balance, voltage drop, and one
//! rotated-cone constraint `l_ij v_i >= P_ij^2 + Q_ij^2` per closed line —
//! over any [`Network`], solves it with the interior-point solver, and checks
//! whether the relaxation is exact. Besides the general solve there are two
//! specialized entry points used by reconfiguration: the minimum injection of
//! a single-substation subtree, and the minimum remaining injection with one
//! substation pinned to a prescribed value.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::netmodel::{BusId, BusKind, ModelError, Network};
use crate::powerflow::{self, OperatingPoint, DEFAULT_EXACTNESS_TOL};
use crate::socp::{
    solve, ConicProblem, ProblemBuilder, ProblemError, SolveStatus, SolverSettings,
};

/// How bus voltage magnitudes enter the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoltageModel {
    /// Every bus pinned at its (required equal) voltage bounds, reactive
    /// injections unconstrained. The regime in which the relaxation is
    /// provably exact.
    Fixed,
    /// Buses whose bounds coincide (typically substations) are pinned; the
    /// rest get box constraints, and reactive bounds from the bus data apply.
    Boxed,
}

/// Solve configuration: voltage treatment plus solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfConfig {
    pub voltage: VoltageModel,
    pub solver: SolverSettings,
}

impl Default for OpfConfig {
    fn default() -> Self {
        OpfConfig {
            voltage: VoltageModel::Boxed,
            solver: SolverSettings::default(),
        }
    }
}

impl OpfConfig {
    /// Fixed-voltage, free-reactive configuration.
    pub fn fixed_voltage() -> Self {
        OpfConfig {
            voltage: VoltageModel::Fixed,
            ..Default::default()
        }
    }

    pub fn with_solver(mut self, solver: SolverSettings) -> Self {
        self.solver = solver;
        self
    }
}

/// An atom a custom objective encoding may reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Atom {
    /// Real injection of a substation bus.
    SubstationP(BusId),
    /// One of the encoding's auxiliary free scalars.
    Aux(usize),
    /// Coordinate `offset` of the encoding's `block`-th second-order cone.
    ConeVar { block: usize, offset: usize },
}

/// A convex cost supplied as an epigraph: auxiliary scalars and cones tied to
/// the substation injections by equality rows, with a linear objective over
/// the atoms. `eval` computes the same cost directly from injections so
/// callers can compare candidate configurations without assembling a program.
#[derive(Clone)]
pub struct CustomObjective {
    /// Declared convex in the substation injections.
    pub convex: bool,
    /// Declared nondecreasing in each substation injection.
    pub nondecreasing: bool,
    /// Number of auxiliary free scalars the encoding introduces.
    pub n_aux: usize,
    /// Dimensions of auxiliary second-order cones (each >= 2).
    pub soc_dims: Vec<usize>,
    /// Equality rows `sum(coeff * atom) = rhs`.
    pub rows: Vec<(Vec<(Atom, f64)>, f64)>,
    /// Linear objective over atoms.
    pub cost: Vec<(Atom, f64)>,
    /// Direct evaluation of the cost at given substation injections.
    pub eval: Arc<dyn Fn(&[(BusId, f64)]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for CustomObjective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomObjective")
            .field("convex", &self.convex)
            .field("nondecreasing", &self.nondecreasing)
            .field("n_aux", &self.n_aux)
            .field("soc_dims", &self.soc_dims)
            .field("rows", &self.rows.len())
            .field("cost", &self.cost)
            .finish()
    }
}

/// Cost over substation injections.
#[derive(Debug, Clone)]
pub enum Objective {
    /// Unit cost on every substation: total injected power.
    Aggregate,
    /// Nonnegative cost per listed substation.
    Linear(Vec<(BusId, f64)>),
    /// User-supplied epigraph encoding.
    Custom(CustomObjective),
}

impl Objective {
    /// Two-substation linear cost, the common reconfiguration form.
    pub fn linear_pair(s0: BusId, c0: f64, s1: BusId, c1: f64) -> Self {
        Objective::Linear(vec![(s0, c0), (s1, c1)])
    }

    /// Evaluates the cost at the given substation injections.
    pub fn value(&self, injections: &[(BusId, f64)]) -> f64 {
        match self {
            Objective::Aggregate => injections.iter().map(|&(_, p)| p).sum(),
            Objective::Linear(coeffs) => coeffs
                .iter()
                .map(|&(id, c)| {
                    c * injections
                        .iter()
                        .find(|&&(b, _)| b == id)
                        .map_or(0.0, |&(_, p)| p)
                })
                .sum(),
            Objective::Custom(custom) => (custom.eval)(injections),
        }
    }
}

/// Where each model quantity lives in the assembled variable vector.
///
/// Per-line entries are `None` for open lines, which carry no variables.
/// `n_model_vars` counts injections, flows, currents, and non-pinned voltages
/// (auxiliary cone coordinates and slacks excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct SopfLayout {
    pub p: Vec<usize>,
    pub q: Vec<usize>,
    pub v: Vec<VoltageVar>,
    pub flow_p: Vec<Option<usize>>,
    pub flow_q: Vec<Option<usize>>,
    pub l: Vec<Option<usize>>,
    pub n_model_vars: usize,
}

/// A bus voltage is either a program variable or pinned to a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VoltageVar {
    Var(usize),
    Fixed(f64),
}

/// Convergence counters and problem dimensions of one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub n_vars: usize,
    pub n_rows: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub gap: f64,
}

/// Outcome of an optimal solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpfResult {
    pub x: OperatingPoint,
    pub objective: f64,
    /// True when every closed line attains its cone with equality at 1e-6
    /// relative tolerance.
    pub exact: bool,
    pub status: SolveStatus,
    pub stats: SolveStats,
}

impl OpfResult {
    /// Substation injections of the solved point, in bus order.
    pub fn substation_injections(&self, net: &Network) -> Vec<(BusId, f64)> {
        net.substations()
            .map(|bus| {
                let i = net.bus_index(bus.id).expect("substation indexed");
                (bus.id, self.x.p[i])
            })
            .collect()
    }
}

/// Errors from assembly and solving.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum OpfError {
    #[error("network has no substation")]
    NoSubstation,
    #[error("expected exactly one substation, found {0}")]
    MultipleSubstations(usize),
    #[error("bus {0} is not a substation")]
    NotSubstation(BusId),
    #[error("fixed-voltage mode needs v_min == v_max at bus {0}")]
    VoltageNotFixed(BusId),
    #[error("objective: {0}")]
    BadObjective(String),
    #[error("no feasible operating point (certified)")]
    Infeasible,
    #[error("objective unbounded below (certified)")]
    Unbounded,
    #[error("solver failed to converge: {0:?}")]
    Numerical(SolveStatus),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Assembles the conic relaxation for `net` under `cfg` with objective `obj`.
///
/// Returns the program plus the variable map. Requires at least one
/// substation.
pub fn assemble_sopf(
    net: &Network,
    obj: &Objective,
    cfg: &OpfConfig,
) -> Result<(ConicProblem, SopfLayout), OpfError> {
    let (problem, layout) = assemble_with_pin(net, obj, cfg, None)?;
    Ok((problem, layout))
}

fn assemble_with_pin(
    net: &Network,
    obj: &Objective,
    cfg: &OpfConfig,
    pin: Option<(BusId, f64)>,
) -> Result<(ConicProblem, SopfLayout), OpfError> {
    if net.substations().next().is_none() {
        return Err(OpfError::NoSubstation);
    }
    let nb = net.n_buses();
    let nl = net.n_lines();
    let mut builder = ProblemBuilder::new();

    // Injections.
    let mut p = Vec::with_capacity(nb);
    let mut q = Vec::with_capacity(nb);
    for bus in net.buses() {
        p.push(builder.free(format!("p{}", bus.id.0)));
        q.push(builder.free(format!("q{}", bus.id.0)));
    }
    // Voltages: pinned wherever the bounds coincide; fixed mode requires that
    // everywhere.
    let mut v = Vec::with_capacity(nb);
    for bus in net.buses() {
        if bus.v_min == bus.v_max {
            v.push(VoltageVar::Fixed(bus.v_min));
        } else if cfg.voltage == VoltageModel::Fixed {
            return Err(OpfError::VoltageNotFixed(bus.id));
        } else {
            v.push(VoltageVar::Var(builder.free(format!("v{}", bus.id.0))));
        }
    }
    // Flows and currents per closed line, each with its rotated-cone block
    // (l + v_i, 2P, 2Q, l - v_i) in a second-order cone of dimension 4.
    let mut flow_p = vec![None; nl];
    let mut flow_q = vec![None; nl];
    let mut l = vec![None; nl];
    let mut cone_links: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
    for (e, line) in net.lines().iter().enumerate() {
        if !line.is_closed() {
            continue;
        }
        let tag = format!("{}_{}", line.from.0, line.to.0);
        flow_p[e] = Some(builder.free(format!("P{tag}")));
        flow_q[e] = Some(builder.free(format!("Q{tag}")));
        l[e] = Some(builder.free(format!("l{tag}")));
        let w = builder.soc(&format!("w{tag}"), 4);
        cone_links.push((e, w));
    }
    let n_model_vars = builder.n_vars() - 4 * cone_links.len();

    // Power balance: p_i = sum_out P - sum_in (P - l r), likewise reactive.
    let mut p_terms: Vec<Vec<(usize, f64)>> = (0..nb).map(|i| vec![(p[i], 1.0)]).collect();
    let mut q_terms: Vec<Vec<(usize, f64)>> = (0..nb).map(|i| vec![(q[i], 1.0)]).collect();
    for (e, line) in net.lines().iter().enumerate() {
        if !line.is_closed() {
            continue;
        }
        let fi = net.bus_index(line.from)?;
        let ti = net.bus_index(line.to)?;
        let (pe, qe, le) = (flow_p[e].unwrap(), flow_q[e].unwrap(), l[e].unwrap());
        p_terms[fi].push((pe, -1.0));
        q_terms[fi].push((qe, -1.0));
        p_terms[ti].push((pe, 1.0));
        p_terms[ti].push((le, -line.r));
        q_terms[ti].push((qe, 1.0));
        q_terms[ti].push((le, -line.x));
    }
    for i in 0..nb {
        builder.row(&p_terms[i], 0.0);
        builder.row(&q_terms[i], 0.0);
    }

    // Voltage drop and cone links per closed line.
    for (e, w) in &cone_links {
        let line = &net.lines()[*e];
        let fi = net.bus_index(line.from)?;
        let ti = net.bus_index(line.to)?;
        let (pe, qe, le) = (flow_p[*e].unwrap(), flow_q[*e].unwrap(), l[*e].unwrap());
        // v_from - v_to - 2 r P - 2 x Q + |z|^2 l = 0, pinned voltages on the
        // right-hand side.
        let mut terms = vec![(pe, -2.0 * line.r), (qe, -2.0 * line.x), (le, line.z2())];
        let mut rhs = 0.0;
        match v[fi] {
            VoltageVar::Var(idx) => terms.push((idx, 1.0)),
            VoltageVar::Fixed(val) => rhs -= val,
        }
        match v[ti] {
            VoltageVar::Var(idx) => terms.push((idx, -1.0)),
            VoltageVar::Fixed(val) => rhs += val,
        }
        builder.row(&terms, rhs);
        // w0 = l + v_from, w1 = 2P, w2 = 2Q, w3 = l - v_from.
        let (w0, w1, w2, w3) = (w.start, w.start + 1, w.start + 2, w.start + 3);
        match v[fi] {
            VoltageVar::Var(idx) => {
                builder.row(&[(w0, 1.0), (le, -1.0), (idx, -1.0)], 0.0);
                builder.row(&[(w3, 1.0), (le, -1.0), (idx, 1.0)], 0.0);
            }
            VoltageVar::Fixed(val) => {
                builder.row(&[(w0, 1.0), (le, -1.0)], val);
                builder.row(&[(w3, 1.0), (le, -1.0)], -val);
            }
        }
        builder.row(&[(w1, 1.0), (pe, -2.0)], 0.0);
        builder.row(&[(w2, 1.0), (qe, -2.0)], 0.0);
    }

    // Operating limits. A pinned pair collapses to one equality row;
    // otherwise each finite bound gets a nonnegative slack.
    let upper = |builder: &mut ProblemBuilder, var: usize, limit: f64, tag: &str| {
        let s = builder.nonneg(format!("s_{tag}"));
        builder.row(&[(var, 1.0), (s, 1.0)], limit);
    };
    let lower = |builder: &mut ProblemBuilder, var: usize, limit: f64, tag: &str| {
        let s = builder.nonneg(format!("s_{tag}"));
        builder.row(&[(var, 1.0), (s, -1.0)], limit);
    };
    for (i, bus) in net.buses().iter().enumerate() {
        let id = bus.id.0;
        if bus.p_min == bus.p_max {
            builder.row(&[(p[i], 1.0)], bus.p_min);
        } else {
            lower(&mut builder, p[i], bus.p_min, &format!("p{id}lo"));
            upper(&mut builder, p[i], bus.p_max, &format!("p{id}hi"));
        }
        if cfg.voltage == VoltageModel::Boxed {
            let q_hi = bus.q_max.map(|m| m + bus.shunt_cap);
            match (bus.q_min, q_hi) {
                (Some(a), Some(b)) if a == b => {
                    builder.row(&[(q[i], 1.0)], a);
                }
                (qmin, qmax) => {
                    if let Some(a) = qmin {
                        lower(&mut builder, q[i], a, &format!("q{id}lo"));
                    }
                    if let Some(b) = qmax {
                        upper(&mut builder, q[i], b, &format!("q{id}hi"));
                    }
                }
            }
            if let VoltageVar::Var(idx) = v[i] {
                lower(&mut builder, idx, bus.v_min, &format!("v{id}lo"));
                upper(&mut builder, idx, bus.v_max, &format!("v{id}hi"));
            }
        }
    }
    for (e, line) in net.lines().iter().enumerate() {
        if let (Some(le), Some(cap)) = (l[e], line.l_max) {
            upper(&mut builder, le, cap, &format!("l{e}cap"));
        }
    }

    // Pinned substation injection (used by the fixed-injection variant).
    if let Some((bus_id, value)) = pin {
        let bus = net.bus(bus_id)?;
        if bus.kind != BusKind::Substation {
            return Err(OpfError::NotSubstation(bus_id));
        }
        let i = net.bus_index(bus_id)?;
        builder.row(&[(p[i], 1.0)], value);
    }

    apply_objective(net, obj, &mut builder, &p)?;

    let layout = SopfLayout {
        p,
        q,
        v,
        flow_p,
        flow_q,
        l,
        n_model_vars,
    };
    Ok((builder.build(), layout))
}

fn apply_objective(
    net: &Network,
    obj: &Objective,
    builder: &mut ProblemBuilder,
    p: &[usize],
) -> Result<(), OpfError> {
    let sub_p = |id: BusId| -> Result<usize, OpfError> {
        let bus = net.bus(id)?;
        if bus.kind != BusKind::Substation {
            return Err(OpfError::NotSubstation(id));
        }
        Ok(p[net.bus_index(id)?])
    };
    match obj {
        Objective::Aggregate => {
            for bus in net.substations() {
                let idx = p[net.bus_index(bus.id)?];
                builder.add_cost(idx, 1.0);
            }
        }
        Objective::Linear(coeffs) => {
            if coeffs.is_empty() {
                return Err(OpfError::BadObjective("empty linear cost".into()));
            }
            for &(id, c) in coeffs {
                if !(c >= 0.0) {
                    return Err(OpfError::BadObjective(format!(
                        "coefficient {c} on bus {id} is negative or NaN"
                    )));
                }
                builder.add_cost(sub_p(id)?, c);
            }
        }
        Objective::Custom(custom) => {
            let aux: Vec<usize> = (0..custom.n_aux)
                .map(|k| builder.free(format!("obj_aux{k}")))
                .collect();
            let cones: Vec<std::ops::Range<usize>> = custom
                .soc_dims
                .iter()
                .enumerate()
                .map(|(k, &dim)| builder.soc(&format!("obj_w{k}"), dim))
                .collect();
            let resolve = |atom: &Atom| -> Result<usize, OpfError> {
                match *atom {
                    Atom::SubstationP(id) => sub_p(id),
                    Atom::Aux(k) => aux.get(k).copied().ok_or_else(|| {
                        OpfError::BadObjective(format!("aux index {k} out of range"))
                    }),
                    Atom::ConeVar { block, offset } => {
                        let range = cones.get(block).ok_or_else(|| {
                            OpfError::BadObjective(format!("cone block {block} out of range"))
                        })?;
                        if offset >= range.len() {
                            return Err(OpfError::BadObjective(format!(
                                "cone offset {offset} out of range for block {block}"
                            )));
                        }
                        Ok(range.start + offset)
                    }
                }
            };
            for (terms, rhs) in &custom.rows {
                let mut resolved = Vec::with_capacity(terms.len());
                for (atom, coeff) in terms {
                    resolved.push((resolve(atom)?, *coeff));
                }
                builder.row(&resolved, *rhs);
            }
            for (atom, coeff) in &custom.cost {
                builder.add_cost(resolve(atom)?, *coeff);
            }
        }
    }
    Ok(())
}

/// Reads the model quantities out of a solver point. Tiny negative currents
/// within solver tolerance are clamped to zero.
fn extract_point(net: &Network, layout: &SopfLayout, x: &[f64]) -> OperatingPoint {
    let mut op = OperatingPoint::flat(net);
    for i in 0..net.n_buses() {
        op.p[i] = x[layout.p[i]];
        op.q[i] = x[layout.q[i]];
        op.v[i] = match layout.v[i] {
            VoltageVar::Var(idx) => x[idx],
            VoltageVar::Fixed(val) => val,
        };
    }
    for e in 0..net.n_lines() {
        if let (Some(pe), Some(qe), Some(le)) = (layout.flow_p[e], layout.flow_q[e], layout.l[e]) {
            op.flow_p[e] = x[pe];
            op.flow_q[e] = x[qe];
            op.l[e] = x[le].max(0.0);
        }
    }
    op
}

/// Solves the relaxation and reports the operating point, objective, and
/// exactness. Infeasibility and unboundedness are certified errors.
pub fn solve_opf(net: &Network, obj: &Objective, cfg: &OpfConfig) -> Result<OpfResult, OpfError> {
    solve_assembled(net, obj, cfg, None)
}

fn solve_assembled(
    net: &Network,
    obj: &Objective,
    cfg: &OpfConfig,
    pin: Option<(BusId, f64)>,
) -> Result<OpfResult, OpfError> {
    let (problem, layout) = assemble_with_pin(net, obj, cfg, pin)?;
    let sol = solve(&problem, &cfg.solver)?;
    match sol.status {
        SolveStatus::Optimal => {}
        SolveStatus::Infeasible => return Err(OpfError::Infeasible),
        SolveStatus::Unbounded => return Err(OpfError::Unbounded),
        status => return Err(OpfError::Numerical(status)),
    }
    let raw = extract_point(net, &layout, &sol.x);
    let (x, objective) = polish(net, obj, raw, sol.objective);
    let exact = powerflow::exactness(net, &x, DEFAULT_EXACTNESS_TOL)
        .map(|r| r.is_exact())
        .unwrap_or(false);
    Ok(OpfResult {
        x,
        objective,
        exact,
        status: sol.status,
        stats: SolveStats {
            iterations: sol.iterations,
            n_vars: problem.n_vars(),
            n_rows: problem.n_rows(),
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            gap: sol.gap,
        },
    })
}

/// The interior-point iterate stops short of the cone boundary by the duality
/// gap divided by the (possibly small) dual pressure on each cone, so a
/// converged solve can leave currents a few parts in 1e7 above `(P^2+Q^2)/v`.
/// Rebuilding the point from its flows removes that slack exactly. The
/// rebuilt point is kept only when it stays feasible and leaves the objective
/// unchanged to solver accuracy — a genuinely inexact relaxation (where the
/// padded current is load-bearing, e.g. propping up a voltage floor) fails
/// that re-check and is reported as inexact rather than masked.
fn polish(
    net: &Network,
    obj: &Objective,
    raw: OperatingPoint,
    raw_objective: f64,
) -> (OperatingPoint, f64) {
    const FEAS_TOL: f64 = 1e-7;
    let Ok(rebuilt) = powerflow::rebuild_from_flows(net, &raw) else {
        return (raw, raw_objective);
    };
    let Ok(report) = powerflow::residuals(net, &rebuilt) else {
        return (raw, raw_objective);
    };
    let injections: Vec<(BusId, f64)> = net
        .substations()
        .map(|bus| {
            let i = net.bus_index(bus.id).expect("substation indexed");
            (bus.id, rebuilt.p[i])
        })
        .collect();
    let objective = obj.value(&injections);
    let drift = (objective - raw_objective).abs();
    if report.injection_violation <= FEAS_TOL
        && report.voltage_violation <= FEAS_TOL
        && report.line_flow_violation <= FEAS_TOL
        && drift <= 1e-6 * raw_objective.abs().max(1.0)
    {
        (rebuilt, objective)
    } else {
        (raw, raw_objective)
    }
}

/// Minimum real injection at `root`, the unique substation of `sub`.
///
/// The returned result's `objective` is the minimum injection; callers that
/// rank candidate configurations map [`OpfError::Infeasible`] to an infinite
/// cost flag rather than dropping the candidate silently.
pub fn min_injection(sub: &Network, root: BusId, cfg: &OpfConfig) -> Result<OpfResult, OpfError> {
    let n_subs = sub.substations().count();
    if n_subs == 0 {
        return Err(OpfError::NoSubstation);
    }
    if n_subs > 1 {
        return Err(OpfError::MultipleSubstations(n_subs));
    }
    if sub.bus(root)?.kind != BusKind::Substation {
        return Err(OpfError::NotSubstation(root));
    }
    solve_opf(sub, &Objective::Linear(vec![(root, 1.0)]), cfg)
}

/// Minimum total injection of the remaining substations with `pinned`'s
/// injection held at `p0`. The result's `objective` is that minimum.
///
/// Errors with [`OpfError::Infeasible`] when `p0` lies outside the feasible
/// projection.
pub fn solve_opf_fixed_p0(
    net: &Network,
    pinned: BusId,
    p0: f64,
    cfg: &OpfConfig,
) -> Result<OpfResult, OpfError> {
    let others: Vec<(BusId, f64)> = net
        .substations()
        .filter(|b| b.id != pinned)
        .map(|b| (b.id, 1.0))
        .collect();
    if others.is_empty() {
        return Err(OpfError::MultipleSubstations(1));
    }
    solve_assembled(net, &Objective::Linear(others), cfg, Some((pinned, p0)))
}
