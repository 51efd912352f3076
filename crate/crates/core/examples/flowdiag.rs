use microvasc_core::{build_mesh, scenario::ScenarioConfig};

fn main() {
    let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
    let rings: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    cfg.robot.ring_count = rings;
    cfg.solver.flow_max_iterations = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3000);
    let mesh = build_mesh(&cfg).unwrap();
    eprintln!("mesh nr={} nz={} cells={}", mesh.nr, mesh.nz, mesh.nr * mesh.nz);
    let t0 = std::time::Instant::now();
    match microvasc_core::flow::solve_flow(&mesh, &cfg) {
        Ok(f) => {
            let w = microvasc_core::flow::wall_force(&f, &mesh, &cfg);
            eprintln!(
                "converged in {} iters, res={:.3e}, v_avg={:.6e}, div={:.2e}, {:?}",
                f.iterations,
                f.residual,
                f.v_avg,
                f.div_max,
                t0.elapsed()
            );
            eprintln!(
                "force = {:.4e} N, coefficient = {:.4e} m^3, per robot = {:.3e} N",
                w.total, w.coefficient, w.per_robot
            );
        }
        Err(e) => eprintln!("FAILED after {:?}: {e}", t0.elapsed()),
    }
}
