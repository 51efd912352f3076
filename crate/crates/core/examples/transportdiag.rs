use microvasc_core::scenario::ScenarioConfig;
use microvasc_core::{build_mesh, core_hematocrit, trace_core_boundary};

fn main() {
    let preset = std::env::args().nth(1).unwrap_or_else(|| "low_demand".into());
    let rings: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(10);
    let pumps: bool = std::env::args()
        .nth(3)
        .map(|s| s != "nopumps")
        .unwrap_or(true);
    let n_d: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3e21);

    let mut cfg = ScenarioConfig::preset(&preset).unwrap();
    cfg.robot.ring_count = rings;
    cfg.robot.pumps = pumps;
    cfg.robot.site_density = n_d;

    let t0 = std::time::Instant::now();
    let mesh = build_mesh(&cfg).unwrap();
    let flow = microvasc_core::flow::solve_flow(&mesh, &cfg).unwrap();
    let boundary = trace_core_boundary(&flow, &mesh, &cfg).unwrap();
    let hct = core_hematocrit(&cfg, &flow, &mesh, &boundary);
    let mut mesh = mesh;
    mesh.retag_core(&boundary);
    eprintln!(
        "flow {:?}: v_avg={:.4e}, h={:.4}, h range [{:.4},{:.4}]",
        t0.elapsed(),
        flow.v_avg,
        hct.h,
        hct.profile.iter().cloned().fold(f64::INFINITY, f64::min),
        hct.profile.iter().cloned().fold(0.0, f64::max),
    );

    let t1 = std::time::Instant::now();
    let sol =
        microvasc_core::oxygen::solve_with_capacity(&mesh, &flow, &boundary, hct.h, &cfg).unwrap();
    eprintln!(
        "coupled {:?}: iters={} converged={} c_change={:.2e} s_change={:.2e}",
        t1.elapsed(),
        sol.coupling.iterations,
        sol.coupling.converged,
        sol.coupling.c_change,
        sol.coupling.s_change
    );
    let uptake: f64 = sol.ring_uptake.iter().sum();
    let e = cfg.tissue.reaction_energy;
    let robots = (rings * cfg.robot.robots_per_ring).max(1) as f64;
    eprintln!(
        "uptake={:.4e}/s  aggregate={:.2} pW  per-robot={:.2} pW",
        uptake,
        uptake * e / 6.0 * 1e12,
        uptake * e / 6.0 / robots * 1e12
    );
    eprint!("ring powers pW/robot: ");
    for u in &sol.ring_uptake {
        eprint!("{:.1} ", u * e / 6.0 / cfg.robot.robots_per_ring as f64 * 1e12);
    }
    eprintln!();
    eprintln!(
        "release={:.3e}/s tissue={:.3e}/s min_c_frac={:.2e}",
        sol.release_total, sol.tissue_uptake, sol.min_c_fraction
    );
    let s_end = *sol.sat.s.last().unwrap();
    let dev = sol
        .sat
        .s
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let kin = microvasc_core::rbc::Kinetics::new(&cfg);
            let a = kin.pressure_ratio(sol.c_interface[sol.sat_grid.slice[i]]);
            (s - kin.hill_equilibrium(a)).abs()
        })
        .fold(0.0_f64, f64::max);
    eprintln!("S(L)={:.4}  max|S-Seq|={:.3e}", s_end, dev);
    let audit = microvasc_core::oxygen::species_balance_audit(&sol, &mesh, &flow, &cfg);
    eprintln!(
        "audit: in_pl={:.3e} in_diff={:.3e} in_bound={:.3e} out_pl={:.3e} out_bound={:.3e} rel_resid={:.3e}",
        audit.inflow_plasma,
        audit.inflow_diffusive,
        audit.inflow_bound,
        audit.outflow_plasma,
        audit.outflow_bound,
        audit.relative_residual
    );
    // wall concentration at mid-vessel for the Krogh comparison
    let kmid = mesh.nz / 2;
    let c_wall = sol.c[mesh.idx(mesh.ir_lumen, kmid)];
    eprintln!("c at first tissue cell mid-vessel = {:.4e}", c_wall);
}
