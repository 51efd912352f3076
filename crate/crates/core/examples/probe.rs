use microvasc_core::scenario::ScenarioConfig;
use microvasc_core::{build_mesh, core_hematocrit, trace_core_boundary};

fn main() {
    let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
    cfg.robot.ring_count = 0;
    cfg.solver.picard_max_iterations = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    cfg.solver.picard_relaxation = 1.0;
    let mesh0 = build_mesh(&cfg).unwrap();
    let flow = microvasc_core::flow::solve_flow(&mesh0, &cfg).unwrap();
    let boundary = trace_core_boundary(&flow, &mesh0, &cfg).unwrap();
    let hct = core_hematocrit(&cfg, &flow, &mesh0, &boundary);
    let mut mesh = mesh0;
    mesh.retag_core(&boundary);
    let sol = microvasc_core::oxygen::solve_with_capacity(&mesh, &flow, &boundary, hct.h, &cfg).unwrap();
    let cmin = sol.c.iter().cloned().fold(f64::INFINITY, f64::min);
    let cmax = sol.c.iter().cloned().fold(0.0, f64::max);
    eprintln!("after {} its: c in [{:.3e},{:.3e}], min_frac={:.3e}, tissue={:.3e}", 
        sol.coupling.iterations, cmin, cmax, sol.min_c_fraction, sol.tissue_uptake);
    // radial profile at mid
    let kmid = mesh.nz/2;
    for ir in (0..mesh.nr).step_by(6) {
        eprintln!("r={:.2}um C={:.4e} {:?}", mesh.r.centers[ir]*1e6, sol.c[mesh.idx(ir,kmid)], mesh.region_at(ir,kmid));
    }
}
