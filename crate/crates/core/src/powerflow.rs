//! Operating points for the relaxed branch-flow model: residual evaluation,
//! relaxation exactness, and voltage-angle recovery.
//!
//! An [`OperatingPoint`] stores net injections `(p, q)` and squared voltage
//! magnitudes `v` per bus, plus sending-end flows `(P, Q)` and squared current
//! magnitudes `l` per line, each oriented with the line's stored `from -> to`
//! direction. Reverse-orientation flows are never stored; they are derived on
//! demand as `S_ji = -S_ij + l_ij * z_ij`.
//!
//! Open lines are ignored by every evaluation here; their entries are
//! conventionally zero but are not read.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::netmodel::{BusId, LineKey, Network};

/// Denominator floor for the relative second-order-cone gap.
pub const SOC_GAP_FLOOR: f64 = 1e-12;

/// Default tolerance for declaring the conic relaxation exact on a line.
pub const DEFAULT_EXACTNESS_TOL: f64 = 1e-6;

/// Tolerance on the complex Ohm's-law residual accepted by angle recovery.
pub const OHM_TOL: f64 = 1e-6;

/// Errors raised by operating-point evaluation and angle recovery.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PowerFlowError {
    /// Vector lengths do not match the network's bus/line counts.
    #[error("operating point has {buses} bus and {lines} line entries, network has {want_buses}/{want_lines}")]
    DimensionMismatch {
        buses: usize,
        lines: usize,
        want_buses: usize,
        want_lines: usize,
    },
    /// A squared current magnitude is negative.
    #[error("line {0} has negative squared current {1}")]
    NegativeCurrent(LineKey, f64),
    /// A squared voltage magnitude is not strictly positive.
    #[error("bus {0} has non-positive squared voltage {1}")]
    NonPositiveVoltage(BusId, f64),
    /// Angle recovery requires a radial network.
    #[error("angle recovery requires a radial network")]
    NotRadial,
    /// Angle recovery requires an exact point; these lines have conic slack.
    #[error("relaxation is not exact on {0:?}")]
    NotExact(Vec<LineKey>),
    /// The operation needs voltage angles but the point has none.
    #[error("operating point carries no voltage angles")]
    AnglesMissing,
    /// A serialized point references an id absent from the network.
    #[error("unknown id in serialized operating point: {0}")]
    UnknownId(String),
}

/// One solution of the relaxed branch-flow model on a given network.
///
/// All vectors use the network's internal index order. `theta` is populated
/// only by [`recover_angles`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    /// Net active injection per bus (p.u.; negative for loads).
    pub p: Vec<f64>,
    /// Net reactive injection per bus (p.u.).
    pub q: Vec<f64>,
    /// Squared voltage magnitude per bus (p.u.).
    pub v: Vec<f64>,
    /// Sending-end active flow per line, oriented `from -> to` (p.u.).
    pub flow_p: Vec<f64>,
    /// Sending-end reactive flow per line, oriented `from -> to` (p.u.).
    pub flow_q: Vec<f64>,
    /// Squared current magnitude per line (p.u.).
    pub l: Vec<f64>,
    /// Voltage angle per bus (radians), if recovered.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta: Option<Vec<f64>>,
}

impl OperatingPoint {
    /// An all-zero point with flat unit voltages, sized for `net`.
    pub fn flat(net: &Network) -> Self {
        OperatingPoint {
            p: vec![0.0; net.n_buses()],
            q: vec![0.0; net.n_buses()],
            v: vec![1.0; net.n_buses()],
            flow_p: vec![0.0; net.n_lines()],
            flow_q: vec![0.0; net.n_lines()],
            l: vec![0.0; net.n_lines()],
            theta: None,
        }
    }

    /// Checks index sets against `net` and the sign invariants `l >= 0`,
    /// `v > 0`.
    pub fn validate(&self, net: &Network) -> Result<(), PowerFlowError> {
        let nb = net.n_buses();
        let nl = net.n_lines();
        let bus_lens = [self.p.len(), self.q.len(), self.v.len()];
        let line_lens = [self.flow_p.len(), self.flow_q.len(), self.l.len()];
        let theta_ok = self.theta.as_ref().map_or(true, |t| t.len() == nb);
        if bus_lens.iter().any(|&m| m != nb) || line_lens.iter().any(|&m| m != nl) || !theta_ok {
            return Err(PowerFlowError::DimensionMismatch {
                buses: bus_lens[0],
                lines: line_lens[0],
                want_buses: nb,
                want_lines: nl,
            });
        }
        for (i, line) in net.lines().iter().enumerate() {
            if line.is_closed() && self.l[i] < 0.0 {
                return Err(PowerFlowError::NegativeCurrent(line.key(), self.l[i]));
            }
        }
        for (i, bus) in net.buses().iter().enumerate() {
            if self.v[i] <= 0.0 {
                return Err(PowerFlowError::NonPositiveVoltage(bus.id, self.v[i]));
            }
        }
        Ok(())
    }

    /// Sending-end flow seen from bus `at` on line `line`: the stored flow if
    /// `at` is the `from` end, otherwise the derived reverse flow
    /// `(-P + l r, -Q + l x)`.
    pub fn flow_from(&self, net: &Network, line: usize, at: BusId) -> (f64, f64) {
        let ln = &net.lines()[line];
        if ln.from == at {
            (self.flow_p[line], self.flow_q[line])
        } else {
            (
                -self.flow_p[line] + self.l[line] * ln.r,
                -self.flow_q[line] + self.l[line] * ln.x,
            )
        }
    }

    /// Serializes to a map representation keyed by external bus and line ids.
    pub fn to_keyed(&self, net: &Network) -> Result<KeyedOperatingPoint, PowerFlowError> {
        self.validate(net)?;
        let mut out = KeyedOperatingPoint::default();
        for (i, bus) in net.buses().iter().enumerate() {
            let key = bus.id.0;
            out.p.insert(key, self.p[i]);
            out.q.insert(key, self.q[i]);
            out.v.insert(key, self.v[i]);
            if let Some(t) = &self.theta {
                out.theta.insert(key, t[i]);
            }
        }
        for (i, line) in net.lines().iter().enumerate() {
            let key = format!("{}-{}", line.from.0, line.to.0);
            out.flow_p.insert(key.clone(), self.flow_p[i]);
            out.flow_q.insert(key.clone(), self.flow_q[i]);
            out.l.insert(key, self.l[i]);
        }
        Ok(out)
    }
}

/// JSON form of an [`OperatingPoint`]: bus quantities keyed by external bus
/// id, line quantities keyed by `"from-to"`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeyedOperatingPoint {
    pub p: BTreeMap<u32, f64>,
    pub q: BTreeMap<u32, f64>,
    pub v: BTreeMap<u32, f64>,
    pub flow_p: BTreeMap<String, f64>,
    pub flow_q: BTreeMap<String, f64>,
    pub l: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub theta: BTreeMap<u32, f64>,
}

impl KeyedOperatingPoint {
    /// Rebinds the keyed form to `net`'s internal index order.
    pub fn to_indexed(&self, net: &Network) -> Result<OperatingPoint, PowerFlowError> {
        let nb = net.n_buses();
        let nl = net.n_lines();
        if self.p.len() != nb || self.flow_p.len() != nl {
            return Err(PowerFlowError::DimensionMismatch {
                buses: self.p.len(),
                lines: self.flow_p.len(),
                want_buses: nb,
                want_lines: nl,
            });
        }
        let mut x = OperatingPoint::flat(net);
        x.theta = if self.theta.is_empty() { None } else { Some(vec![0.0; nb]) };
        for (&id, &val) in &self.p {
            let i = net
                .bus_index(BusId(id))
                .map_err(|_| PowerFlowError::UnknownId(format!("bus {id}")))?;
            x.p[i] = val;
            x.q[i] = *self.q.get(&id).ok_or_else(|| PowerFlowError::UnknownId(format!("bus {id} q")))?;
            x.v[i] = *self.v.get(&id).ok_or_else(|| PowerFlowError::UnknownId(format!("bus {id} v")))?;
            if let (Some(t), Some(val)) = (&mut x.theta, self.theta.get(&id)) {
                t[i] = *val;
            }
        }
        for (key, &val) in &self.flow_p {
            let (a, b) = parse_line_key(key)?;
            let i = net
                .find_line(a, b)
                .map_err(|_| PowerFlowError::UnknownId(format!("line {key}")))?;
            x.flow_p[i] = val;
            x.flow_q[i] = *self.flow_q.get(key).ok_or_else(|| PowerFlowError::UnknownId(format!("line {key} flow_q")))?;
            x.l[i] = *self.l.get(key).ok_or_else(|| PowerFlowError::UnknownId(format!("line {key} l")))?;
        }
        x.validate(net)?;
        Ok(x)
    }
}

fn parse_line_key(key: &str) -> Result<(BusId, BusId), PowerFlowError> {
    let bad = || PowerFlowError::UnknownId(format!("line key {key:?}"));
    let (a, b) = key.split_once('-').ok_or_else(bad)?;
    let a: u32 = a.parse().map_err(|_| bad())?;
    let b: u32 = b.parse().map_err(|_| bad())?;
    Ok((BusId(a), BusId(b)))
}

/// Worst-case residuals and constraint violations of a point, all nonnegative.
///
/// Equation residuals are absolute; the conic gap is relative,
/// `(l v - P^2 - Q^2) / max(l v, 1e-12)`, and reported by magnitude. The
/// violation fields measure how far the point exceeds injection, voltage, and
/// line-flow limits (zero when feasible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// Max absolute active power-balance residual over buses.
    pub max_p_balance: f64,
    /// Max absolute reactive power-balance residual over buses.
    pub max_q_balance: f64,
    /// Max absolute voltage-drop residual over closed lines.
    pub max_voltage_drop: f64,
    /// Max |relative conic gap| over closed lines.
    pub max_soc_gap: f64,
    /// Signed relative conic gap per line (0 for open lines).
    pub soc_gap: Vec<f64>,
    /// Max violation of injection bounds over buses.
    pub injection_violation: f64,
    /// Max violation of voltage-magnitude bounds over buses.
    pub voltage_violation: f64,
    /// Max violation of squared-current limits over closed lines.
    pub line_flow_violation: f64,
}

/// Evaluates all model residuals and constraint violations of `x` on `net`.
///
/// Only closed lines enter the sums; open lines contribute nothing and their
/// gap entries are zero.
pub fn residuals(net: &Network, x: &OperatingPoint) -> Result<ResidualReport, PowerFlowError> {
    x.validate(net)?;
    let nb = net.n_buses();
    let mut p_bal = vec![0.0f64; nb];
    let mut q_bal = vec![0.0f64; nb];
    for i in 0..nb {
        p_bal[i] = -x.p[i];
        q_bal[i] = -x.q[i];
    }
    let mut max_voltage_drop = 0.0f64;
    let mut max_soc_gap = 0.0f64;
    let mut soc_gap = vec![0.0f64; net.n_lines()];
    let mut line_flow_violation = 0.0f64;
    for (e, line) in net.lines().iter().enumerate() {
        if !line.is_closed() {
            continue;
        }
        let fi = net.bus_index(line.from).expect("line endpoints indexed");
        let ti = net.bus_index(line.to).expect("line endpoints indexed");
        let (pf, qf, l) = (x.flow_p[e], x.flow_q[e], x.l[e]);
        // Sending end counts the full flow; receiving end gets it net of losses.
        p_bal[fi] += pf;
        q_bal[fi] += qf;
        p_bal[ti] -= pf - l * line.r;
        q_bal[ti] -= qf - l * line.x;
        let drop = x.v[fi] - 2.0 * (line.r * pf + line.x * qf) + l * line.z2() - x.v[ti];
        max_voltage_drop = max_voltage_drop.max(drop.abs());
        let lv = l * x.v[fi];
        let gap = (lv - pf * pf - qf * qf) / lv.max(SOC_GAP_FLOOR);
        soc_gap[e] = gap;
        max_soc_gap = max_soc_gap.max(gap.abs());
        if let Some(l_max) = line.l_max {
            line_flow_violation = line_flow_violation.max(l - l_max);
        }
    }
    let mut injection_violation = 0.0f64;
    let mut voltage_violation = 0.0f64;
    for (i, bus) in net.buses().iter().enumerate() {
        injection_violation = injection_violation
            .max(bus.p_min - x.p[i])
            .max(x.p[i] - bus.p_max);
        // Shunt capacitance widens the reactive range at the top.
        if let Some(q_min) = bus.q_min {
            injection_violation = injection_violation.max(q_min - x.q[i]);
        }
        if let Some(q_max) = bus.q_max {
            injection_violation = injection_violation.max(x.q[i] - (q_max + bus.shunt_cap));
        }
        voltage_violation = voltage_violation
            .max(bus.v_min - x.v[i])
            .max(x.v[i] - bus.v_max);
    }
    Ok(ResidualReport {
        max_p_balance: p_bal.iter().fold(0.0f64, |m, r| m.max(r.abs())),
        max_q_balance: q_bal.iter().fold(0.0f64, |m, r| m.max(r.abs())),
        max_voltage_drop,
        max_soc_gap,
        soc_gap,
        injection_violation,
        voltage_violation,
        line_flow_violation: line_flow_violation.max(0.0),
    })
}

/// Outcome of an exactness check: either every closed line attains the conic
/// constraint with equality (within tolerance), or the slack lines are listed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactnessReport {
    /// Tolerance the relative gap was compared against.
    pub tol: f64,
    /// Lines whose |relative gap| exceeds `tol`, in network order.
    pub slack_lines: Vec<LineKey>,
}

impl ExactnessReport {
    /// True when no line has conic slack (vacuously true with no lines).
    pub fn is_exact(&self) -> bool {
        self.slack_lines.is_empty()
    }
}

/// Classifies the relaxation as exact or lists the lines with conic slack.
///
/// `tol` bounds the relative gap; pass [`DEFAULT_EXACTNESS_TOL`] for the
/// standard threshold. The slack set shrinks monotonically as `tol` grows.
pub fn exactness(
    net: &Network,
    x: &OperatingPoint,
    tol: f64,
) -> Result<ExactnessReport, PowerFlowError> {
    let report = residuals(net, x)?;
    let slack_lines = net
        .lines()
        .iter()
        .enumerate()
        .filter(|(e, line)| line.is_closed() && report.soc_gap[*e].abs() > tol)
        .map(|(_, line)| line.key())
        .collect();
    Ok(ExactnessReport { tol, slack_lines })
}

/// Recovers voltage angles of an exact point on a radial network.
///
/// Each connected component's substation is pinned to angle zero and angles
/// propagate outward: across line `(i, j)` with sending-end flow `S_ij`,
/// `theta_i - theta_j = angle(v_i - conj(z_ij) * S_ij)`. The recovered angles
/// are checked against complex Ohm's law on every closed line before being
/// returned.
pub fn recover_angles(net: &Network, x: &OperatingPoint) -> Result<OperatingPoint, PowerFlowError> {
    let report = net.validate_radial();
    if !report.is_radial() {
        return Err(PowerFlowError::NotRadial);
    }
    let exact = exactness(net, x, DEFAULT_EXACTNESS_TOL)?;
    if !exact.is_exact() {
        return Err(PowerFlowError::NotExact(exact.slack_lines));
    }
    let adjacency = net.closed_adjacency();
    let mut theta = vec![0.0f64; net.n_buses()];
    let mut seen = vec![false; net.n_buses()];
    let mut queue = std::collections::VecDeque::new();
    for sub in net.substations() {
        let root = net.bus_index(sub.id).expect("substation indexed");
        if !seen[root] {
            seen[root] = true;
            queue.push_back(root);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &(e, j) in &adjacency[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            let line = &net.lines()[e];
            let fi = net.bus_index(line.from).expect("line endpoints indexed");
            // angle(v_from - conj(z) S) in the line's stored orientation.
            let re = x.v[fi] - line.r * x.flow_p[e] - line.x * x.flow_q[e];
            let im = line.x * x.flow_p[e] - line.r * x.flow_q[e];
            let diff = im.atan2(re);
            theta[j] = if fi == i { theta[i] - diff } else { theta[i] + diff };
            queue.push_back(j);
        }
    }
    let mut out = x.clone();
    out.theta = Some(theta);
    let worst = ohm_residual(net, &out)?;
    debug_assert!(worst <= OHM_TOL, "angle recovery left Ohm residual {worst}");
    Ok(out)
}

/// Max complex Ohm's-law mismatch `|V_i - V_j - z_ij I_ij|` over closed lines,
/// with `I_ij = conj(S_ij / V_i)` built from the recovered phasors.
pub fn ohm_residual(net: &Network, x: &OperatingPoint) -> Result<f64, PowerFlowError> {
    x.validate(net)?;
    let theta = x.theta.as_ref().ok_or(PowerFlowError::AnglesMissing)?;
    let mut worst = 0.0f64;
    for (e, line) in net.lines().iter().enumerate() {
        if !line.is_closed() {
            continue;
        }
        let fi = net.bus_index(line.from).expect("line endpoints indexed");
        let ti = net.bus_index(line.to).expect("line endpoints indexed");
        let (vf_re, vf_im) = polar(x.v[fi].sqrt(), theta[fi]);
        let (vt_re, vt_im) = polar(x.v[ti].sqrt(), theta[ti]);
        // I = conj(S / V_from); with V = a+bi and S = P+Qi:
        // S/V = (S * conj(V)) / |V|^2.
        let vsq = x.v[fi];
        let s_re = x.flow_p[e];
        let s_im = x.flow_q[e];
        let i_re = (s_re * vf_re + s_im * vf_im) / vsq;
        let i_im = -(s_im * vf_re - s_re * vf_im) / vsq;
        let zi_re = line.r * i_re - line.x * i_im;
        let zi_im = line.r * i_im + line.x * i_re;
        let mis_re = vf_re - vt_re - zi_re;
        let mis_im = vf_im - vt_im - zi_im;
        worst = worst.max((mis_re * mis_re + mis_im * mis_im).sqrt());
    }
    Ok(worst)
}

fn polar(mag: f64, angle: f64) -> (f64, f64) {
    (mag * angle.cos(), mag * angle.sin())
}

/// Lines whose angle difference breaks the stability bound
/// `|theta_i - theta_j| < atan(x/r)`.
///
/// Requires a point with recovered angles.
pub fn check_angle_bound(net: &Network, x: &OperatingPoint) -> Result<Vec<LineKey>, PowerFlowError> {
    x.validate(net)?;
    let theta = x.theta.as_ref().ok_or(PowerFlowError::AnglesMissing)?;
    let mut violating = Vec::new();
    for line in net.lines() {
        if !line.is_closed() {
            continue;
        }
        let fi = net.bus_index(line.from).expect("line endpoints indexed");
        let ti = net.bus_index(line.to).expect("line endpoints indexed");
        let bound = (line.x / line.r).atan();
        if (theta[fi] - theta[ti]).abs() >= bound {
            violating.push(line.key());
        }
    }
    Ok(violating)
}

/// Builds an exact operating point from prescribed sending-end flows by
/// propagating voltages from the substations and deriving injections from the
/// balance equations. Useful for constructing consistent test points; the
/// result satisfies every model equation by construction.
pub fn point_from_flows(
    net: &Network,
    flow_p: &[f64],
    flow_q: &[f64],
    v_root: f64,
) -> Result<OperatingPoint, PowerFlowError> {
    propagate_from_flows(net, flow_p, flow_q, &vec![v_root; net.n_buses()])
}

/// Rebuilds a consistent point from the flows of `x`: currents from cone
/// equality, voltages from the drop equation (each substation keeps its value
/// in `x`), injections from the balance equations. This polishes a
/// nearly-exact relaxation solution into one satisfying every model equation
/// to rounding; whether the result is still feasible must be checked by the
/// caller.
pub fn rebuild_from_flows(net: &Network, x: &OperatingPoint) -> Result<OperatingPoint, PowerFlowError> {
    x.validate(net)?;
    propagate_from_flows(net, &x.flow_p, &x.flow_q, &x.v)
}

fn propagate_from_flows(
    net: &Network,
    flow_p: &[f64],
    flow_q: &[f64],
    root_v: &[f64],
) -> Result<OperatingPoint, PowerFlowError> {
    if flow_p.len() != net.n_lines() || flow_q.len() != net.n_lines() || root_v.len() != net.n_buses()
    {
        return Err(PowerFlowError::DimensionMismatch {
            buses: root_v.len(),
            lines: flow_p.len(),
            want_buses: net.n_buses(),
            want_lines: net.n_lines(),
        });
    }
    // A forest suffices: BFS from every substation still reaches each bus at
    // most once, so multi-root networks (e.g. a feeder with both ends fed)
    // propagate cleanly as long as the closed lines contain no cycle.
    if !net.validate_radial().is_forest() {
        return Err(PowerFlowError::NotRadial);
    }
    let adjacency = net.closed_adjacency();
    let mut x = OperatingPoint::flat(net);
    x.flow_p.copy_from_slice(flow_p);
    x.flow_q.copy_from_slice(flow_q);
    // Flood one component at a time from a single root. Seeding several roots
    // of the same component at once would let the fronts meet across a line
    // that then never gets its current assigned; with one root per component
    // every line is crossed exactly once, so the drop and cone equalities hold
    // on all of them and any extra root's voltage is derived, not prescribed.
    let mut seen = vec![false; net.n_buses()];
    let mut queue = std::collections::VecDeque::new();
    for sub in net.substations() {
        let root = net.bus_index(sub.id).expect("substation indexed");
        if !seen[root] {
            seen[root] = true;
            x.v[root] = root_v[root];
            queue.push_back(root);
            flood(net, &adjacency, flow_p, flow_q, &mut x, &mut seen, &mut queue)?;
        }
    }
    for i in 0..net.n_buses() {
        if !seen[i] {
            // Unreached bus: keep its prescribed voltage, zero injection.
            x.v[i] = root_v[i];
        }
    }
    // Injections follow from the balance equations.
    for (e, line) in net.lines().iter().enumerate() {
        if !line.is_closed() {
            continue;
        }
        let fi = net.bus_index(line.from).expect("line endpoints indexed");
        let ti = net.bus_index(line.to).expect("line endpoints indexed");
        x.p[fi] += x.flow_p[e];
        x.q[fi] += x.flow_q[e];
        x.p[ti] -= x.flow_p[e] - x.l[e] * line.r;
        x.q[ti] -= x.flow_q[e] - x.l[e] * line.x;
    }
    Ok(x)
}

/// Breadth-first sweep assigning current and voltage across every line the
/// front crosses, starting from whatever roots are already queued.
fn flood(
    net: &Network,
    adjacency: &[Vec<(usize, usize)>],
    flow_p: &[f64],
    flow_q: &[f64],
    x: &mut OperatingPoint,
    seen: &mut [bool],
    queue: &mut std::collections::VecDeque<usize>,
) -> Result<(), PowerFlowError> {
    while let Some(i) = queue.pop_front() {
        for &(e, j) in &adjacency[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            let line = &net.lines()[e];
            let fi = net.bus_index(line.from).expect("line endpoints indexed");
            if fi == i {
                // Sending end reached first: current follows from the cone
                // equality, voltage from the drop equation.
                x.l[e] = (flow_p[e] * flow_p[e] + flow_q[e] * flow_q[e]) / x.v[i];
                x.v[j] = x.v[i] - 2.0 * (line.r * flow_p[e] + line.x * flow_q[e])
                    + x.l[e] * line.z2();
            } else {
                // Receiving end reached first: solve l v_from = P^2 + Q^2 with
                // v_from = v_to + 2(rP + xQ) - l z^2, a quadratic in l.
                let s2 = flow_p[e] * flow_p[e] + flow_q[e] * flow_q[e];
                let b = x.v[i] + 2.0 * (line.r * flow_p[e] + line.x * flow_q[e]);
                let z2 = line.z2();
                // z^2 l^2 - b l + s2 = 0; the physical branch is the small root.
                let disc = b * b - 4.0 * z2 * s2;
                if disc < 0.0 || b <= 0.0 {
                    return Err(PowerFlowError::NonPositiveVoltage(line.from, b));
                }
                let l = 2.0 * s2 / (b + disc.sqrt());
                x.l[e] = l;
                x.v[j] = b - l * z2;
                if x.v[j] <= 0.0 {
                    return Err(PowerFlowError::NonPositiveVoltage(line.from, x.v[j]));
                }
            }
            queue.push_back(j);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{BaseUnits, Bus, BusKind, Line, SwitchState};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bus(id: u32, kind: BusKind) -> Bus {
        let p_max = if kind == BusKind::Substation { 10.0 } else { 0.0 };
        Bus {
            id: BusId(id),
            kind,
            p_min: -10.0,
            p_max,
            q_min: None,
            q_max: None,
            v_min: 0.8,
            v_max: 1.2,
            shunt_cap: 0.0,
        }
    }

    fn two_bus() -> Network {
        Network::new(
            BaseUnits::default(),
            vec![bus(0, BusKind::Substation), bus(1, BusKind::Load)],
            vec![Line {
                from: BusId(0),
                to: BusId(1),
                r: 0.01,
                x: 0.02,
                switch: SwitchState::Closed,
                l_max: None,
            }],
        )
        .unwrap()
    }

    /// v1 from the drop equation with P=0.1, Q=0, r=0.01, x=0.02, l=0.01:
    /// 1 - 2*0.001 + 0.01*0.0005 = 0.998005.
    fn two_bus_point() -> OperatingPoint {
        OperatingPoint {
            p: vec![0.1, -(0.1 - 0.01 * 0.01)],
            q: vec![0.0, 0.01 * 0.02],
            v: vec![1.0, 0.998005],
            flow_p: vec![0.1],
            flow_q: vec![0.0],
            l: vec![0.01],
            theta: None,
        }
    }

    #[test]
    fn flat_zero_point_has_zero_residuals() {
        let net = two_bus();
        let x = OperatingPoint::flat(&net);
        let r = residuals(&net, &x).unwrap();
        assert_eq!(r.max_p_balance, 0.0);
        assert_eq!(r.max_q_balance, 0.0);
        assert_eq!(r.max_voltage_drop, 0.0);
        assert_eq!(r.max_soc_gap, 0.0);
        assert_eq!(r.injection_violation, 0.0);
        assert_eq!(r.voltage_violation, 0.0);
        assert_eq!(r.line_flow_violation, 0.0);
    }

    #[test]
    fn two_bus_fixture_is_exact_with_zero_residuals() {
        let net = two_bus();
        let x = two_bus_point();
        let r = residuals(&net, &x).unwrap();
        assert_abs_diff_eq!(r.max_p_balance, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.max_q_balance, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.max_voltage_drop, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(r.max_soc_gap, 0.0, epsilon = 1e-15);
        assert!(exactness(&net, &x, DEFAULT_EXACTNESS_TOL).unwrap().is_exact());
    }

    #[test]
    fn soc_gap_grows_linearly_in_current_perturbation() {
        let net = two_bus();
        let x = two_bus_point();
        let delta = 1e-7;
        let mut bumped = x.clone();
        bumped.l[0] += delta;
        let gap = residuals(&net, &bumped).unwrap().soc_gap[0];
        // d(gap)/dl at exactness is (P^2+Q^2)/(l^2 v) = 1/l here.
        let predicted = delta / x.l[0];
        assert_abs_diff_eq!(gap, predicted, epsilon = delta);
        assert!(gap > 0.0);
    }

    #[test]
    fn inflated_current_shows_up_as_slack_line() {
        let net = two_bus();
        let mut x = two_bus_point();
        x.l[0] += 1e-3;
        let report = exactness(&net, &x, DEFAULT_EXACTNESS_TOL).unwrap();
        assert!(!report.is_exact());
        assert_eq!(report.slack_lines, vec![net.lines()[0].key()]);
        // A loose enough tolerance accepts the same point.
        assert!(exactness(&net, &x, 1.0).unwrap().is_exact());
    }

    #[test]
    fn exactness_is_monotone_in_tolerance() {
        let net = two_bus();
        let mut x = two_bus_point();
        x.l[0] += 5e-4;
        let tight = exactness(&net, &x, 1e-8).unwrap();
        let mid = exactness(&net, &x, 1e-3).unwrap();
        let loose = exactness(&net, &x, 1e-1).unwrap();
        assert!(tight.slack_lines.len() >= mid.slack_lines.len());
        assert!(mid.slack_lines.len() >= loose.slack_lines.len());
    }

    #[test]
    fn angles_match_complex_arithmetic_oracle() {
        let net = two_bus();
        let x = recover_angles(&net, &two_bus_point()).unwrap();
        let theta = x.theta.as_ref().unwrap();
        assert_eq!(theta[0], 0.0);
        // Oracle: V1 = V0 - z * conj(S/V0) with V0 = 1, S = 0.1.
        // V1 = 1 - (0.01 + 0.02i) * 0.1 = 0.999 - 0.002i.
        let v1_re: f64 = 0.999;
        let v1_im: f64 = -0.002;
        assert_abs_diff_eq!(theta[1], v1_im.atan2(v1_re), epsilon = 1e-12);
        assert_abs_diff_eq!(
            x.v[1].sqrt(),
            (v1_re * v1_re + v1_im * v1_im).sqrt(),
            epsilon = 1e-12
        );
        assert!(ohm_residual(&net, &x).unwrap() <= OHM_TOL);
    }

    #[test]
    fn zero_flow_recovers_zero_angles() {
        let net = two_bus();
        let mut x = OperatingPoint::flat(&net);
        x.v = vec![1.0, 1.0];
        let recovered = recover_angles(&net, &x).unwrap();
        assert_eq!(recovered.theta.unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn angle_recovery_rejects_slack_points() {
        let net = two_bus();
        let mut x = two_bus_point();
        x.l[0] += 1e-3;
        match recover_angles(&net, &x) {
            Err(PowerFlowError::NotExact(lines)) => {
                assert_eq!(lines, vec![net.lines()[0].key()])
            }
            other => panic!("expected NotExact, got {other:?}"),
        }
    }

    #[test]
    fn angle_recovery_rejects_meshed_networks() {
        let line = |a: u32, b: u32| Line {
            from: BusId(a),
            to: BusId(b),
            r: 0.01,
            x: 0.02,
            switch: SwitchState::Closed,
            l_max: None,
        };
        let net = Network::new(
            BaseUnits::default(),
            vec![
                bus(0, BusKind::Substation),
                bus(1, BusKind::Load),
                bus(2, BusKind::Load),
            ],
            vec![line(0, 1), line(1, 2), line(2, 0)],
        )
        .unwrap();
        let x = OperatingPoint::flat(&net);
        assert_eq!(recover_angles(&net, &x), Err(PowerFlowError::NotRadial));
    }

    #[test]
    fn dimension_mismatch_is_detected() {
        let net = two_bus();
        let mut x = OperatingPoint::flat(&net);
        x.p.push(0.0);
        assert!(matches!(
            residuals(&net, &x),
            Err(PowerFlowError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sign_invariants_are_enforced() {
        let net = two_bus();
        let mut x = OperatingPoint::flat(&net);
        x.l[0] = -1e-9;
        assert!(matches!(
            x.validate(&net),
            Err(PowerFlowError::NegativeCurrent(..))
        ));
        let mut x = OperatingPoint::flat(&net);
        x.v[1] = 0.0;
        assert!(matches!(
            x.validate(&net),
            Err(PowerFlowError::NonPositiveVoltage(..))
        ));
    }

    #[test]
    fn reverse_flow_is_derived_not_stored() {
        let net = two_bus();
        let x = two_bus_point();
        let (pf, qf) = x.flow_from(&net, 0, BusId(0));
        assert_eq!((pf, qf), (0.1, 0.0));
        let (pr, qr) = x.flow_from(&net, 0, BusId(1));
        assert_abs_diff_eq!(pr, -0.1 + 0.01 * 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(qr, 0.01 * 0.02, epsilon = 1e-15);
    }

    #[test]
    fn keyed_serialization_round_trips() {
        let net = two_bus();
        let x = recover_angles(&net, &two_bus_point()).unwrap();
        let keyed = x.to_keyed(&net).unwrap();
        let json = serde_json::to_string(&keyed).unwrap();
        let parsed: KeyedOperatingPoint = serde_json::from_str(&json).unwrap();
        let back = parsed.to_indexed(&net).unwrap();
        assert_eq!(back, x);
        assert!(json.contains("\"0-1\""));
    }

    #[test]
    fn constraint_violations_are_measured() {
        let mut buses = vec![bus(0, BusKind::Substation), bus(1, BusKind::Load)];
        buses[1].p_max = -0.05;
        buses[1].p_min = -0.2;
        let net = Network::new(
            BaseUnits::default(),
            buses,
            vec![Line {
                from: BusId(0),
                to: BusId(1),
                r: 0.01,
                x: 0.02,
                switch: SwitchState::Closed,
                l_max: Some(0.005),
            }],
        )
        .unwrap();
        let x = two_bus_point();
        let r = residuals(&net, &x).unwrap();
        // p[1] = -0.0999 respects [-0.2, -0.05]; v fine; l 0.01 > 0.005.
        assert_abs_diff_eq!(r.injection_violation, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.line_flow_violation, 0.005, epsilon = 1e-12);
        let mut tight = x;
        tight.v[1] = 0.79;
        assert!(tight.v[1] < 0.8);
        let r = residuals(&net, &tight).unwrap();
        assert_abs_diff_eq!(r.voltage_violation, 0.01, epsilon = 1e-12);
    }

    /// Random radial network with random flows; the constructed point must be
    /// exact, conserve energy, and admit angles satisfying Ohm's law.
    fn random_tree_case(seed: u64) -> (Network, OperatingPoint) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..10usize);
        let mut buses = vec![bus(1, BusKind::Substation)];
        let mut lines = Vec::new();
        for i in 2..=n as u32 {
            buses.push(bus(i, BusKind::Load));
            let parent = rng.gen_range(1..i);
            // Random orientation exercises both propagation directions.
            let (from, to) = if rng.gen_bool(0.5) { (parent, i) } else { (i, parent) };
            lines.push(Line {
                from: BusId(from),
                to: BusId(to),
                r: rng.gen_range(0.002..0.03),
                x: rng.gen_range(0.005..0.06),
                switch: SwitchState::Closed,
                l_max: None,
            });
        }
        let net = Network::new(BaseUnits::default(), buses, lines).unwrap();
        let flow_p: Vec<f64> = (0..net.n_lines()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let flow_q: Vec<f64> = (0..net.n_lines()).map(|_| rng.gen_range(-0.1..0.1)).collect();
        let x = point_from_flows(&net, &flow_p, &flow_q, 1.0).unwrap();
        (net, x)
    }

    #[test]
    fn constructed_points_are_exact_and_recoverable() {
        for seed in 0..60 {
            let (net, x) = random_tree_case(seed);
            let r = residuals(&net, &x).unwrap();
            assert!(r.max_p_balance < 1e-12, "seed {seed}");
            assert!(r.max_q_balance < 1e-12, "seed {seed}");
            assert!(r.max_voltage_drop < 1e-12, "seed {seed}");
            assert!(r.max_soc_gap < 1e-9, "seed {seed}");
            let recovered = recover_angles(&net, &x).unwrap();
            assert!(
                ohm_residual(&net, &recovered).unwrap() <= OHM_TOL,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn energy_balance_telescopes_to_line_losses() {
        for seed in 0..30 {
            let (net, x) = random_tree_case(seed);
            let total_injection: f64 = x.p.iter().sum();
            let total_loss: f64 = net
                .lines()
                .iter()
                .enumerate()
                .map(|(e, line)| x.l[e] * line.r)
                .sum();
            assert_abs_diff_eq!(total_injection, total_loss, epsilon = 1e-12);
        }
    }

    proptest! {
        /// Widening the tolerance never adds slack lines.
        #[test]
        fn slack_set_shrinks_with_tolerance(
            bump in 0.0f64..2e-3,
            tol_lo in 1e-9f64..1e-4,
            ratio in 1.0f64..1e4,
        ) {
            let net = two_bus();
            let mut x = two_bus_point();
            x.l[0] += bump;
            let tol_hi = tol_lo * ratio;
            let lo = exactness(&net, &x, tol_lo).unwrap();
            let hi = exactness(&net, &x, tol_hi).unwrap();
            prop_assert!(hi.slack_lines.len() <= lo.slack_lines.len());
            for key in &hi.slack_lines {
                prop_assert!(lo.slack_lines.contains(key));
            }
        }
    }
}
