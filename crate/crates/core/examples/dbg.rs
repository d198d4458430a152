use ofr_core::datasets;
use ofr_core::netmodel::BusId;
use ofr_core::opf::{self, Objective, OpfConfig};
use ofr_core::powerflow;

fn main() {
    let net = datasets::sce56();
    let (joined, _twin) = net.joined_tree(BusId(1), 55).unwrap();
    let cfg = OpfConfig::default();
    let res = opf::solve_opf(&joined, &Objective::Aggregate, &cfg).unwrap();
    println!("objective {:.9}  exact {}", res.objective, res.exact);
    let rep = powerflow::residuals(&joined, &res.x).unwrap();
    println!(
        "p_bal {:.3e} q_bal {:.3e} drop {:.3e} soc {:.3e}",
        rep.max_p_balance, rep.max_q_balance, rep.max_voltage_drop, rep.max_soc_gap
    );
    println!(
        "inj_vio {:.3e} v_vio {:.3e} line_vio {:.3e}",
        rep.injection_violation, rep.voltage_violation, rep.line_flow_violation
    );
    match powerflow::rebuild_from_flows(&joined, &res.x) {
        Ok(rb) => {
            let rr = powerflow::residuals(&joined, &rb).unwrap();
            println!(
                "rebuilt: inj {:.3e} v {:.3e} line {:.3e} soc {:.3e}",
                rr.injection_violation, rr.voltage_violation, rr.line_flow_violation, rr.max_soc_gap
            );
            let raw_obj = res.objective;
            let mut inj = 0.0;
            for (i, b) in joined.buses().iter().enumerate() {
                if b.p_max > 0.0 {
                    inj += rb.p[i];
                }
            }
            println!("rebuilt obj {:.9} raw {:.9} drift {:.3e}", inj, raw_obj, (inj - raw_obj).abs());
        }
        Err(e) => println!("rebuild failed: {e}"),
    }
    // worst raw lines
    let rep2 = powerflow::residuals(&joined, &res.x).unwrap();
    let mut idx: Vec<usize> = (0..joined.n_lines()).collect();
    idx.sort_by(|&a, &b| rep2.soc_gap[b].abs().partial_cmp(&rep2.soc_gap[a].abs()).unwrap());
    for &i in idx.iter().take(4) {
        let ln = &joined.lines()[i];
        println!(
            "raw line {}-{} r {:.5} x {:.5} P {:.6e} Q {:.6e} l {:.6e} gap {:.3e}",
            ln.from.0, ln.to.0, ln.r, ln.x, res.x.flow_p[i], res.x.flow_q[i], res.x.l[i], rep2.soc_gap[i]
        );
    }
    if let Ok(rb) = powerflow::rebuild_from_flows(&joined, &res.x) {
        let rr = powerflow::residuals(&joined, &rb).unwrap();
        let mut jdx: Vec<usize> = (0..joined.n_lines()).collect();
        jdx.sort_by(|&a, &b| rr.soc_gap[b].abs().partial_cmp(&rr.soc_gap[a].abs()).unwrap());
        for &i in jdx.iter().take(4) {
            let ln = &joined.lines()[i];
            println!(
                "rb  line {}-{} r {:.5} x {:.5} P {:.6e} Q {:.6e} l {:.6e} gap {:.3e}",
                ln.from.0, ln.to.0, ln.r, ln.x, rb.flow_p[i], rb.flow_q[i], rb.l[i], rr.soc_gap[i]
            );
        }
    }
}
