//! Bundled benchmark feeders.
//!
//! The main entry is [`sce56`]: a 56-bus 12 kV radial feeder with a single
//! substation (bus 1), one normally-open tie line (32, 1) that creates a loop
//! 1-2-4-20-23-25-26-32-1 when closed, fixed real demand at each load, and
//! four 0.6 Mvar shunt capacitors. Impedances are given in ohms and converted
//! to per-unit on the 12 kV / 1 MVA base.

use crate::netmodel::{BaseUnits, Bus, BusId, BusKind, Line, LineKey, Network, SwitchState};

/// Line list: (from, to, R ohms, X ohms). The last entry is the
/// normally-open tie.
const SCE56_LINES: [(u32, u32, f64, f64); 56] = [
    (1, 2, 0.160, 0.388),
    (2, 3, 0.824, 0.315),
    (2, 4, 0.144, 0.349),
    (4, 5, 1.026, 0.421),
    (4, 6, 0.741, 0.466),
    (4, 7, 0.528, 0.468),
    (7, 8, 0.358, 0.314),
    (8, 9, 2.032, 0.798),
    (8, 10, 0.502, 0.441),
    (10, 11, 0.372, 0.327),
    (11, 12, 1.431, 0.999),
    (11, 13, 0.429, 0.377),
    (13, 14, 0.671, 0.257),
    (13, 15, 0.457, 0.401),
    (15, 16, 1.008, 0.385),
    (15, 17, 0.153, 0.134),
    (17, 18, 0.971, 0.722),
    (18, 19, 1.885, 0.721),
    (4, 20, 0.138, 0.334),
    (20, 21, 0.251, 0.096),
    (21, 22, 1.818, 0.695),
    (20, 23, 0.225, 0.542),
    (23, 24, 0.127, 0.028),
    (23, 25, 0.284, 0.687),
    (25, 26, 0.171, 0.414),
    (26, 27, 0.414, 0.386),
    (27, 28, 0.210, 0.196),
    (28, 29, 0.395, 0.369),
    (29, 30, 0.248, 0.232),
    (30, 31, 0.279, 0.260),
    (26, 32, 0.205, 0.495),
    (32, 33, 0.263, 0.073),
    (32, 34, 0.071, 0.171),
    (34, 35, 0.625, 0.273),
    (34, 36, 0.510, 0.209),
    (36, 37, 2.018, 0.829),
    (34, 38, 1.062, 0.406),
    (38, 39, 0.610, 0.238),
    (39, 40, 2.349, 0.964),
    (34, 41, 0.115, 0.278),
    (41, 42, 0.159, 0.384),
    (42, 43, 0.934, 0.383),
    (42, 44, 0.506, 0.163),
    (42, 45, 0.095, 0.195),
    (42, 46, 1.915, 0.769),
    (41, 47, 0.157, 0.379),
    (47, 48, 1.641, 0.670),
    (47, 49, 0.081, 0.196),
    (49, 50, 1.727, 0.709),
    (49, 51, 0.112, 0.270),
    (51, 52, 0.674, 0.275),
    (51, 53, 0.070, 0.170),
    (53, 54, 2.041, 0.780),
    (53, 55, 0.813, 0.334),
    (53, 56, 0.141, 0.340),
    (32, 1, 0.085, 0.278),
];

/// Peak real demand (bus, MW). Buses absent from this list have zero demand.
const SCE56_LOADS: [(u32, f64); 43] = [
    (3, 0.057),
    (5, 0.121),
    (6, 0.049),
    (7, 0.053),
    (8, 0.047),
    (9, 0.068),
    (10, 0.048),
    (11, 0.067),
    (12, 0.094),
    (14, 0.057),
    (16, 0.053),
    (17, 0.057),
    (18, 0.112),
    (19, 0.087),
    (22, 0.063),
    (24, 0.135),
    (25, 0.100),
    (27, 0.048),
    (28, 0.038),
    (29, 0.044),
    (31, 0.053),
    (32, 0.223),
    (33, 0.123),
    (34, 0.067),
    (35, 0.094),
    (36, 0.097),
    (37, 0.281),
    (38, 0.117),
    (39, 0.131),
    (40, 0.030),
    (41, 0.046),
    (42, 0.054),
    (43, 0.083),
    (44, 0.057),
    (45, 0.0),
    (46, 0.134),
    (47, 0.045),
    (48, 0.196),
    (50, 0.045),
    (52, 0.315),
    (54, 0.061),
    (55, 0.055),
    (56, 0.130),
];

/// Shunt capacitors (bus, Mvar).
const SCE56_SHUNTS: [(u32, f64); 4] = [(19, 0.6), (21, 0.6), (30, 0.6), (53, 0.6)];

pub const SCE56_SUBSTATION: BusId = BusId(1);

/// Knobs for building the feeder. Defaults match the benchmark operating
/// conditions: substation voltage pinned at 1 p.u., load voltages in
/// [0.97, 1.03] p.u., and reactive power at each load controllable within
/// 10 percent of its real demand.
#[derive(Debug, Clone)]
pub struct Sce56Options {
    /// Reactive bound as a fraction of each load's real demand.
    pub q_ratio: f64,
    /// Load-bus voltage magnitude bounds, per-unit (not squared).
    pub v_min_pu: f64,
    pub v_max_pu: f64,
    /// Substation voltage magnitude, held fixed.
    pub substation_v_pu: f64,
    /// Substation real-injection capacity, per-unit.
    pub substation_p_max: f64,
}

impl Default for Sce56Options {
    fn default() -> Self {
        Sce56Options {
            q_ratio: 0.1,
            v_min_pu: 0.97,
            v_max_pu: 1.03,
            substation_v_pu: 1.0,
            substation_p_max: 10.0,
        }
    }
}

pub fn sce56() -> Network {
    sce56_with(&Sce56Options::default())
}

pub fn sce56_with(opts: &Sce56Options) -> Network {
    let base = BaseUnits {
        v_base_kv: 12.0,
        s_base_mva: 1.0,
    };
    let z_base = base.z_base_ohm();
    let demand = |id: u32| -> f64 {
        SCE56_LOADS
            .iter()
            .find(|&&(b, _)| b == id)
            .map(|&(_, mw)| mw / base.s_base_mva)
            .unwrap_or(0.0)
    };
    let shunt = |id: u32| -> f64 {
        SCE56_SHUNTS
            .iter()
            .find(|&&(b, _)| b == id)
            .map(|&(_, mvar)| mvar / base.s_base_mva)
            .unwrap_or(0.0)
    };
    let buses: Vec<Bus> = (1..=56)
        .map(|id| {
            if BusId(id) == SCE56_SUBSTATION {
                Bus {
                    id: BusId(id),
                    kind: BusKind::Substation,
                    p_min: 0.0,
                    p_max: opts.substation_p_max,
                    q_min: None,
                    q_max: None,
                    v_min: opts.substation_v_pu * opts.substation_v_pu,
                    v_max: opts.substation_v_pu * opts.substation_v_pu,
                    shunt_cap: 0.0,
                }
            } else {
                let p = demand(id);
                Bus {
                    id: BusId(id),
                    kind: BusKind::Load,
                    p_min: -p,
                    p_max: -p,
                    q_min: Some(-opts.q_ratio * p),
                    q_max: Some(opts.q_ratio * p),
                    v_min: opts.v_min_pu * opts.v_min_pu,
                    v_max: opts.v_max_pu * opts.v_max_pu,
                    shunt_cap: shunt(id),
                }
            }
        })
        .collect();
    let n_lines = SCE56_LINES.len();
    let lines: Vec<Line> = SCE56_LINES
        .iter()
        .enumerate()
        .map(|(i, &(from, to, r_ohm, x_ohm))| Line {
            from: BusId(from),
            to: BusId(to),
            r: r_ohm / z_base,
            x: x_ohm / z_base,
            switch: if i == n_lines - 1 {
                SwitchState::Open
            } else {
                SwitchState::Closed
            },
            l_max: None,
        })
        .collect();
    Network::new(base, buses, lines).expect("bundled feeder data is valid")
}

/// The loop closed by the sce56 tie, as line keys in path order from the
/// substation back to itself.
pub fn sce56_loop() -> Vec<LineKey> {
    [
        (1, 2),
        (2, 4),
        (4, 20),
        (20, 23),
        (23, 25),
        (25, 26),
        (26, 32),
        (32, 1),
    ]
    .iter()
    .map(|&(a, b)| LineKey(BusId(a), BusId(b)))
    .collect()
}

/// Baseline aggregate substation injection (MW) when each loop line is the
/// one left open, used as a regression reference for the loop sweep. The
/// minimum is at (20, 23).
pub fn sce56_baseline_sweep_mw() -> Vec<(LineKey, f64)> {
    sce56_loop()
        .into_iter()
        .zip([3.8857, 3.8845, 3.8719, 3.8718, 3.8719, 3.8721, 3.8755, 3.9550])
        .collect()
}
