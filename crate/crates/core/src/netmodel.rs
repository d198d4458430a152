//! Radial distribution network model.
//!
//! A [`Network`] is a set of buses (substations and loads) joined by lines,
//! each line carrying a sectionalizing or tie switch. Power-flow quantities
//! are expressed in per-unit on the network's [`BaseUnits`]; voltage bounds
//! are stored as squared magnitudes so the branch-flow equations stay linear
//! in them.
//!
//! The module owns the purely structural operations: radiality validation,
//! path finding over closed lines, splitting a tree at a line, and the
//! virtual-substation split that reduces a loop through a single substation
//! to the canonical two-substation form.

use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;

/// External bus identifier as it appears in data files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BusId(pub u32);

impl fmt::Display for BusId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A line named by its stored endpoints, for reports and result maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LineKey(pub BusId, pub BusId);

impl fmt::Display for LineKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BusKind {
    Substation,
    Load,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchState {
    Closed,
    Open,
}

/// Bus data in per-unit. `v_min`/`v_max` are squared voltage magnitudes.
///
/// Real-power bounds follow the injection convention: loads have
/// `p_max <= 0` (zero-demand buses are permitted and can be listed via
/// [`Network::zero_demand_buses`]), substations have `p_max > 0`. A shunt
/// capacitor adds a controllable reactive injection in `[0, shunt_cap]`
/// on top of the bus's `q` bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: BusId,
    pub kind: BusKind,
    pub p_min: f64,
    pub p_max: f64,
    /// `None` means unbounded below/above.
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    pub v_min: f64,
    pub v_max: f64,
    pub shunt_cap: f64,
}

/// Line data in per-unit. `r >= 0`, `x > 0`; `l_max` bounds the squared
/// current magnitude when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: BusId,
    pub to: BusId,
    pub r: f64,
    pub x: f64,
    pub switch: SwitchState,
    pub l_max: Option<f64>,
}

impl Line {
    pub fn key(&self) -> LineKey {
        LineKey(self.from, self.to)
    }

    /// Squared impedance magnitude `r^2 + x^2`.
    pub fn z2(&self) -> f64 {
        self.r * self.r + self.x * self.x
    }

    pub fn is_closed(&self) -> bool {
        self.switch == SwitchState::Closed
    }

    pub fn touches(&self, bus: BusId) -> bool {
        self.from == bus || self.to == bus
    }

    pub fn other_end(&self, bus: BusId) -> Option<BusId> {
        if self.from == bus {
            Some(self.to)
        } else if self.to == bus {
            Some(self.from)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseUnits {
    pub v_base_kv: f64,
    pub s_base_mva: f64,
}

impl BaseUnits {
    /// Impedance base in ohms, `V_base^2 / S_base`.
    pub fn z_base_ohm(&self) -> f64 {
        self.v_base_kv * self.v_base_kv / self.s_base_mva
    }
}

impl Default for BaseUnits {
    /// A generic 12 kV / 1 MVA distribution base.
    fn default() -> Self {
        BaseUnits {
            v_base_kv: 12.0,
            s_base_mva: 1.0,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error("duplicate bus id {0}")]
    DuplicateBus(BusId),
    #[error("line {0} references unknown bus")]
    UnknownEndpoint(LineKey),
    #[error("line {0} joins a bus to itself")]
    SelfLoop(LineKey),
    #[error("duplicate line between {0}")]
    DuplicateLine(LineKey),
    #[error("line {0} has non-positive reactance")]
    BadReactance(LineKey),
    #[error("line {0} has negative resistance")]
    BadResistance(LineKey),
    #[error("line {0} has non-positive current limit")]
    BadCurrentLimit(LineKey),
    #[error("bus {0} has inverted or invalid bounds")]
    BadBounds(BusId),
    #[error("bus {0}: substation must have positive injection capacity")]
    SubstationCapacity(BusId),
    #[error("bus {0}: load must not have positive injection capacity")]
    LoadInjects(BusId),
    #[error("unknown bus {0}")]
    NoSuchBus(BusId),
    #[error("no line between {0}")]
    NoSuchLine(LineKey),
    #[error("no path of closed lines between {0} and {1}")]
    NoPath(BusId, BusId),
    #[error("line {0} is not on the given path")]
    NotOnPath(LineKey),
    #[error("line {0} is open")]
    LineOpen(LineKey),
    #[error("removing line {0} does not disconnect the component (it lies on a cycle)")]
    NotABridge(LineKey),
    #[error("closing tie {tie} does not create a loop through substation {substation}")]
    NotALoopThroughSubstation { substation: BusId, tie: LineKey },
    #[error("tie {0} must be open before a virtual split")]
    TieNotOpen(LineKey),
    #[error("bus {0} is not a substation")]
    NotASubstation(BusId),
}

/// One step of a [`Path`]: a line index into `Network::lines` plus the
/// direction it is traversed in (`forward` means from `line.from` to
/// `line.to`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathStep {
    pub line: usize,
    pub forward: bool,
}

/// A simple path over closed lines. `buses` has one more entry than `steps`;
/// step `k` joins `buses[k]` to `buses[k + 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub buses: Vec<BusId>,
    pub steps: Vec<PathStep>,
}

impl Path {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn reversed(&self) -> Path {
        Path {
            buses: self.buses.iter().rev().copied().collect(),
            steps: self
                .steps
                .iter()
                .rev()
                .map(|s| PathStep {
                    line: s.line,
                    forward: !s.forward,
                })
                .collect(),
        }
    }

    pub fn contains_line(&self, line: usize) -> bool {
        self.steps.iter().any(|s| s.line == line)
    }

    pub fn contains_bus(&self, bus: BusId) -> bool {
        self.buses.contains(&bus)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RadialityViolation {
    /// A connected component of the closed-line subgraph contains a cycle.
    Cycle { component: Vec<BusId> },
    /// A component is served by more than one substation.
    MultipleSubstations { component: Vec<BusId>, substations: Vec<BusId> },
    /// A component has no substation at all.
    NoSubstation { component: Vec<BusId> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialityReport {
    pub violations: Vec<RadialityViolation>,
}

impl RadialityReport {
    /// Operationally radial: a forest whose every component has exactly one
    /// substation.
    pub fn is_radial(&self) -> bool {
        self.violations.is_empty()
    }

    /// No cycles among closed lines. Weaker than [`Self::is_radial`]: the
    /// two-substation tree formed by closing a tie across a virtual split is
    /// a forest but not operationally radial.
    pub fn is_forest(&self) -> bool {
        self.violations
            .iter()
            .all(|v| !matches!(v, RadialityViolation::Cycle { .. }))
    }
}

/// A distribution network. Construction validates structural invariants;
/// switch states and radiality are data, checked by [`Network::validate_radial`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub base: BaseUnits,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    #[serde(skip)]
    index: HashMap<BusId, usize>,
}

impl Network {
    pub fn new(base: BaseUnits, buses: Vec<Bus>, lines: Vec<Line>) -> Result<Self, ModelError> {
        let mut index = HashMap::with_capacity(buses.len());
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(ModelError::DuplicateBus(bus.id));
            }
            if !(bus.p_min <= bus.p_max) || !(bus.v_min <= bus.v_max) || !(bus.v_min > 0.0) {
                return Err(ModelError::BadBounds(bus.id));
            }
            if let (Some(lo), Some(hi)) = (bus.q_min, bus.q_max) {
                if !(lo <= hi) {
                    return Err(ModelError::BadBounds(bus.id));
                }
            }
            if !(bus.shunt_cap >= 0.0) {
                return Err(ModelError::BadBounds(bus.id));
            }
            match bus.kind {
                BusKind::Substation if !(bus.p_max > 0.0) => {
                    return Err(ModelError::SubstationCapacity(bus.id))
                }
                BusKind::Load if bus.p_max > 0.0 => return Err(ModelError::LoadInjects(bus.id)),
                _ => {}
            }
        }
        let mut seen = HashSet::with_capacity(lines.len());
        for line in &lines {
            let key = line.key();
            if !index.contains_key(&line.from) || !index.contains_key(&line.to) {
                return Err(ModelError::UnknownEndpoint(key));
            }
            if line.from == line.to {
                return Err(ModelError::SelfLoop(key));
            }
            let unordered = if line.from.0 <= line.to.0 {
                (line.from, line.to)
            } else {
                (line.to, line.from)
            };
            if !seen.insert(unordered) {
                return Err(ModelError::DuplicateLine(key));
            }
            if !(line.x > 0.0) {
                return Err(ModelError::BadReactance(key));
            }
            if !(line.r >= 0.0) {
                return Err(ModelError::BadResistance(key));
            }
            if let Some(l_max) = line.l_max {
                if !(l_max > 0.0) {
                    return Err(ModelError::BadCurrentLimit(key));
                }
            }
        }
        Ok(Network {
            base,
            buses,
            lines,
            index,
        })
    }

    /// Rebuilds the id index after deserialization.
    pub fn reindex(mut self) -> Result<Self, ModelError> {
        let buses = std::mem::take(&mut self.buses);
        let lines = std::mem::take(&mut self.lines);
        Network::new(self.base, buses, lines)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_lines(&self) -> usize {
        self.lines.len()
    }

    pub fn bus_index(&self, id: BusId) -> Result<usize, ModelError> {
        self.index.get(&id).copied().ok_or(ModelError::NoSuchBus(id))
    }

    pub fn bus(&self, id: BusId) -> Result<&Bus, ModelError> {
        self.bus_index(id).map(|i| &self.buses[i])
    }

    /// Finds the line between `a` and `b` in either orientation.
    pub fn find_line(&self, a: BusId, b: BusId) -> Result<usize, ModelError> {
        self.lines
            .iter()
            .position(|l| (l.from == a && l.to == b) || (l.from == b && l.to == a))
            .ok_or(ModelError::NoSuchLine(LineKey(a, b)))
    }

    pub fn substations(&self) -> impl Iterator<Item = &Bus> {
        self.buses.iter().filter(|b| b.kind == BusKind::Substation)
    }

    /// Load buses whose demand bound is exactly zero (tolerated deviations
    /// from the strict negative-injection assumption).
    pub fn zero_demand_buses(&self) -> Vec<BusId> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Load && b.p_min == 0.0 && b.p_max == 0.0)
            .map(|b| b.id)
            .collect()
    }

    /// Sum of load demands (positive number, per-unit).
    pub fn total_demand(&self) -> f64 {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Load)
            .map(|b| -b.p_max)
            .sum()
    }

    /// Returns a copy with one switch state changed.
    pub fn with_switch(&self, line: usize, state: SwitchState) -> Network {
        let mut out = self.clone();
        out.lines[line].switch = state;
        out
    }

    /// Adjacency over closed lines: for each bus index, `(line index, neighbor bus index)`.
    pub(crate) fn closed_adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for (li, line) in self.lines.iter().enumerate() {
            if !line.is_closed() {
                continue;
            }
            let fi = self.index[&line.from];
            let ti = self.index[&line.to];
            adj[fi].push((li, ti));
            adj[ti].push((li, fi));
        }
        adj
    }

    /// Checks that the closed-line subgraph is a forest and that every
    /// connected component contains exactly one substation.
    pub fn validate_radial(&self) -> RadialityReport {
        let adj = self.closed_adjacency();
        let mut seen = vec![false; self.buses.len()];
        let mut violations = Vec::new();
        for start in 0..self.buses.len() {
            if seen[start] {
                continue;
            }
            let mut component = Vec::new();
            let mut n_edges = 0usize;
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                component.push(u);
                for &(_, v) in &adj[u] {
                    n_edges += 1;
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            n_edges /= 2;
            let mut ids: Vec<BusId> = component.iter().map(|&i| self.buses[i].id).collect();
            ids.sort();
            let substations: Vec<BusId> = component
                .iter()
                .filter(|&&i| self.buses[i].kind == BusKind::Substation)
                .map(|&i| self.buses[i].id)
                .collect();
            if n_edges >= component.len() {
                violations.push(RadialityViolation::Cycle {
                    component: ids.clone(),
                });
            }
            match substations.len() {
                0 => violations.push(RadialityViolation::NoSubstation { component: ids }),
                1 => {}
                _ => violations.push(RadialityViolation::MultipleSubstations {
                    component: ids,
                    substations,
                }),
            }
        }
        RadialityReport { violations }
    }

    /// Shortest path from `a` to `b` over closed lines (BFS). `find_path(a, a)`
    /// is the empty path at `a`.
    pub fn find_path(&self, a: BusId, b: BusId) -> Result<Path, ModelError> {
        let ai = self.bus_index(a)?;
        let bi = self.bus_index(b)?;
        if ai == bi {
            return Ok(Path {
                buses: vec![a],
                steps: Vec::new(),
            });
        }
        let adj = self.closed_adjacency();
        let mut prev: Vec<Option<(usize, usize)>> = vec![None; self.buses.len()];
        let mut seen = vec![false; self.buses.len()];
        seen[ai] = true;
        let mut queue = VecDeque::from([ai]);
        'bfs: while let Some(u) = queue.pop_front() {
            for &(li, v) in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = Some((u, li));
                    if v == bi {
                        break 'bfs;
                    }
                    queue.push_back(v);
                }
            }
        }
        if !seen[bi] {
            return Err(ModelError::NoPath(a, b));
        }
        let mut buses = vec![b];
        let mut steps = Vec::new();
        let mut cur = bi;
        while let Some((u, li)) = prev[cur] {
            let forward = self.index[&self.lines[li].from] == u;
            steps.push(PathStep { line: li, forward });
            buses.push(self.buses[u].id);
            cur = u;
        }
        buses.reverse();
        steps.reverse();
        Ok(Path { buses, steps })
    }

    /// Buses reachable from `start` over closed lines, excluding traversal of
    /// line `skip`.
    fn reach(&self, start: usize, skip: Option<usize>) -> Vec<usize> {
        let adj = self.closed_adjacency();
        let mut seen = vec![false; self.buses.len()];
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let mut out = Vec::new();
        while let Some(u) = queue.pop_front() {
            out.push(u);
            for &(li, v) in &adj[u] {
                if Some(li) == skip || seen[v] {
                    continue;
                }
                seen[v] = true;
                queue.push_back(v);
            }
        }
        out
    }

    /// Restriction of the network to a set of bus indices: keeps those buses
    /// and every line with both endpoints inside the set.
    fn subnetwork(&self, bus_indices: &[usize]) -> Network {
        let keep: HashSet<usize> = bus_indices.iter().copied().collect();
        let buses: Vec<Bus> = {
            let mut sorted = bus_indices.to_vec();
            sorted.sort_unstable();
            sorted.iter().map(|&i| self.buses[i].clone()).collect()
        };
        let lines: Vec<Line> = self
            .lines
            .iter()
            .filter(|l| keep.contains(&self.index[&l.from]) && keep.contains(&self.index[&l.to]))
            .cloned()
            .collect();
        Network::new(self.base, buses, lines).expect("subnetwork of valid network is valid")
    }

    /// Splits the tree at a path line. Returns the two components as
    /// networks, the first containing the path's start bus.
    ///
    /// The line must be closed, lie on `path`, and be a bridge of its
    /// component (true on any tree).
    pub fn split_at_line(&self, path: &Path, line: usize) -> Result<(Network, Network), ModelError> {
        let key = self.lines[line].key();
        if !path.contains_line(line) {
            return Err(ModelError::NotOnPath(key));
        }
        if !self.lines[line].is_closed() {
            return Err(ModelError::LineOpen(key));
        }
        let fi = self.index[&self.lines[line].from];
        let ti = self.index[&self.lines[line].to];
        let from_side = self.reach(fi, Some(line));
        if from_side.contains(&ti) {
            return Err(ModelError::NotABridge(key));
        }
        let to_side = self.reach(ti, Some(line));
        let start = self.bus_index(path.buses[0])?;
        let (first, second) = if from_side.contains(&start) {
            (from_side, to_side)
        } else {
            (to_side, from_side)
        };
        Ok((self.subnetwork(&first), self.subnetwork(&second)))
    }

    /// Reduces a loop through substation `s` to two-substation form: `s` is
    /// duplicated into a virtual twin `s'` with identical bounds, and the
    /// cycle is cut open at `s` by re-homing one cycle line endpoint to `s'`.
    ///
    /// `tie` must be an open line whose closure would create a cycle through
    /// `s`. Returns the rewritten network (tie still open) and the id of `s'`.
    pub fn virtual_split(&self, s: BusId, tie: usize) -> Result<(Network, BusId), ModelError> {
        let bus_s = self.bus(s)?;
        if bus_s.kind != BusKind::Substation {
            return Err(ModelError::NotASubstation(s));
        }
        let tie_line = &self.lines[tie];
        let key = tie_line.key();
        let not_a_loop = ModelError::NotALoopThroughSubstation {
            substation: s,
            tie: key,
        };
        if tie_line.is_closed() {
            return Err(ModelError::TieNotOpen(key));
        }
        // The cycle created by closing the tie is tie + find_path(from, to).
        // It passes through s iff s lies on that path.
        let path = self
            .find_path(tie_line.from, tie_line.to)
            .map_err(|_| not_a_loop.clone())?;
        if !path.contains_bus(s) {
            return Err(not_a_loop);
        }

        let twin_id = BusId(self.buses.iter().map(|b| b.id.0).max().unwrap_or(0) + 1);
        let mut twin = bus_s.clone();
        twin.id = twin_id;
        let mut buses = self.buses.clone();
        buses.push(twin);

        let mut lines = self.lines.clone();
        if tie_line.from == s || tie_line.to == s {
            // The tie itself lands on s: re-home its s endpoint.
            let l = &mut lines[tie];
            if l.from == s {
                l.from = twin_id;
            } else {
                l.to = twin_id;
            }
        } else {
            // s is interior to the path: re-home the path line on the
            // tie-`to` side of s.
            let pos = path.buses.iter().position(|&b| b == s).expect("s on path");
            let step = path.steps[pos]; // joins buses[pos] = s to buses[pos + 1]
            let l = &mut lines[step.line];
            if l.from == s {
                l.from = twin_id;
            } else {
                l.to = twin_id;
            }
        }
        let net = Network::new(self.base, buses, lines)?;
        Ok((net, twin_id))
    }

    /// [`Network::virtual_split`] followed by closing the tie: the single
    /// tree spanning both twin substations, on which reconfiguration
    /// algorithms operate. Returns the joined network and the twin's id.
    pub fn joined_tree(&self, s: BusId, tie: usize) -> Result<(Network, BusId), ModelError> {
        let (split, twin) = self.virtual_split(s, tie)?;
        Ok((split.with_switch(tie, SwitchState::Closed), twin))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: u32, kind: BusKind, p: (f64, f64)) -> Bus {
        Bus {
            id: BusId(id),
            kind,
            p_min: p.0,
            p_max: p.1,
            q_min: None,
            q_max: None,
            v_min: 0.9409,
            v_max: 1.0609,
            shunt_cap: 0.0,
        }
    }

    fn line(from: u32, to: u32, switch: SwitchState) -> Line {
        Line {
            from: BusId(from),
            to: BusId(to),
            r: 0.01,
            x: 0.02,
            switch,
            l_max: None,
        }
    }

    fn base() -> BaseUnits {
        BaseUnits {
            v_base_kv: 12.0,
            s_base_mva: 1.0,
        }
    }

    /// Three buses on a line with one substation.
    fn three_bus() -> Network {
        Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
            ],
        )
        .unwrap()
    }

    #[test]
    fn radial_tree_passes() {
        assert!(three_bus().validate_radial().is_radial());
    }

    #[test]
    fn closed_cycle_is_flagged() {
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
                line(2, 0, SwitchState::Closed),
            ],
        )
        .unwrap();
        let report = net.validate_radial();
        assert!(!report.is_radial());
        assert!(matches!(
            report.violations[0],
            RadialityViolation::Cycle { .. }
        ));
    }

    #[test]
    fn open_tie_keeps_forest_radial() {
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
                line(2, 0, SwitchState::Open),
            ],
        )
        .unwrap();
        assert!(net.validate_radial().is_radial());
    }

    #[test]
    fn two_substations_in_one_component_flagged() {
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Substation, (0.0, 10.0)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
            ],
        )
        .unwrap();
        let report = net.validate_radial();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            RadialityViolation::MultipleSubstations { .. }
        ));
    }

    #[test]
    fn component_without_substation_flagged() {
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
                bus(3, BusKind::Load, (-0.2, -0.2)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(2, 3, SwitchState::Closed),
            ],
        )
        .unwrap();
        let report = net.validate_radial();
        assert_eq!(report.violations.len(), 1);
        assert!(matches!(
            report.violations[0],
            RadialityViolation::NoSubstation { .. }
        ));
    }

    #[test]
    fn path_identity_is_empty() {
        let net = three_bus();
        let p = net.find_path(BusId(1), BusId(1)).unwrap();
        assert!(p.is_empty());
        assert_eq!(p.buses, vec![BusId(1)]);
    }

    #[test]
    fn adjacent_path_single_step() {
        let net = three_bus();
        let p = net.find_path(BusId(0), BusId(1)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.buses, vec![BusId(0), BusId(1)]);
        assert!(p.steps[0].forward);
    }

    #[test]
    fn path_reversal_maps_to_reversed_bus_list() {
        let net = three_bus();
        let p = net.find_path(BusId(0), BusId(2)).unwrap();
        let r = p.reversed();
        assert_eq!(r.buses, vec![BusId(2), BusId(1), BusId(0)]);
        assert_eq!(r, net.find_path(BusId(2), BusId(0)).unwrap());
    }

    #[test]
    fn no_path_across_open_switch() {
        let mut net = three_bus();
        net = net.with_switch(1, SwitchState::Open);
        assert_eq!(
            net.find_path(BusId(0), BusId(2)),
            Err(ModelError::NoPath(BusId(0), BusId(2)))
        );
    }

    #[test]
    fn split_three_bus_line() {
        let net = three_bus();
        let path = net.find_path(BusId(0), BusId(2)).unwrap();
        let (a, b) = net.split_at_line(&path, 1).unwrap();
        let ids = |n: &Network| {
            let mut v: Vec<u32> = n.buses().iter().map(|b| b.id.0).collect();
            v.sort_unstable();
            v
        };
        assert_eq!(ids(&a), vec![0, 1]);
        assert_eq!(ids(&b), vec![2]);
        assert_eq!(a.n_lines(), 1);
        assert_eq!(b.n_lines(), 0);
    }

    #[test]
    fn split_rejects_off_path_line() {
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
                bus(3, BusKind::Load, (-0.2, -0.2)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
                line(1, 3, SwitchState::Closed),
            ],
        )
        .unwrap();
        let path = net.find_path(BusId(0), BusId(2)).unwrap();
        assert_eq!(
            net.split_at_line(&path, 2),
            Err(ModelError::NotOnPath(LineKey(BusId(1), BusId(3))))
        );
    }

    #[test]
    fn virtual_split_duplicates_substation() {
        // 0 - 1 - 2 with open tie 2 - 0: loop through substation 0.
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
                line(2, 0, SwitchState::Open),
            ],
        )
        .unwrap();
        let (split, twin) = net.virtual_split(BusId(0), 2).unwrap();
        assert_eq!(twin, BusId(3));
        assert_eq!(split.n_buses(), 4);
        assert_eq!(split.bus(twin).unwrap().kind, BusKind::Substation);
        assert_eq!(split.bus(twin).unwrap().p_max, 10.0);
        // Tie now lands on the twin; closing it yields a two-substation tree
        // (a forest, though not operationally radial).
        let joined = split.with_switch(2, SwitchState::Closed);
        let report = joined.validate_radial();
        assert!(report.is_forest());
        assert!(!report.is_radial());
        assert!(matches!(
            report.violations[..],
            [RadialityViolation::MultipleSubstations { .. }]
        ));
        let p = joined.find_path(BusId(0), twin).unwrap();
        assert_eq!(p.buses, vec![BusId(0), BusId(1), BusId(2), BusId(3)]);
    }

    #[test]
    fn virtual_split_preserves_totals() {
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
                line(2, 0, SwitchState::Open),
            ],
        )
        .unwrap();
        let (split, _) = net.virtual_split(BusId(0), 2).unwrap();
        assert_eq!(split.total_demand(), net.total_demand());
        let mut z_before: Vec<(f64, f64)> = net.lines().iter().map(|l| (l.r, l.x)).collect();
        let mut z_after: Vec<(f64, f64)> = split.lines().iter().map(|l| (l.r, l.x)).collect();
        z_before.sort_by(|a, b| a.partial_cmp(b).unwrap());
        z_after.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(z_before, z_after);
    }

    #[test]
    fn virtual_split_rejects_two_substation_tie() {
        // 0 and 3 are distinct substations; tie 2-3 closes a path between
        // them, not a loop through 0.
        let net = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
                bus(2, BusKind::Load, (-0.2, -0.2)),
                bus(3, BusKind::Substation, (0.0, 10.0)),
            ],
            vec![
                line(0, 1, SwitchState::Closed),
                line(1, 2, SwitchState::Closed),
                line(2, 3, SwitchState::Open),
            ],
        )
        .unwrap();
        let err = net.virtual_split(BusId(0), 2).unwrap_err();
        assert!(matches!(
            err,
            ModelError::NotALoopThroughSubstation { .. }
        ));
    }

    #[test]
    fn duplicate_bus_rejected() {
        let err = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(0, BusKind::Load, (-0.1, -0.1)),
            ],
            vec![],
        )
        .unwrap_err();
        assert_eq!(err, ModelError::DuplicateBus(BusId(0)));
    }

    #[test]
    fn zero_reactance_rejected() {
        let err = Network::new(
            base(),
            vec![
                bus(0, BusKind::Substation, (0.0, 10.0)),
                bus(1, BusKind::Load, (-0.1, -0.1)),
            ],
            vec![Line {
                from: BusId(0),
                to: BusId(1),
                r: 0.01,
                x: 0.0,
                switch: SwitchState::Closed,
                l_max: None,
            }],
        )
        .unwrap_err();
        assert_eq!(err, ModelError::BadReactance(LineKey(BusId(0), BusId(1))));
    }
}
