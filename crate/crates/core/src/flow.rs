//! Steady incompressible viscous flow in the lumen under an imposed pressure
//! difference, with no-slip walls and robots.
//!
//! At capillary scales the Reynolds number is ~4e-3, so inertia is dropped
//! and the solver handles the Stokes limit: conservative finite volumes on a
//! staggered grid in axisymmetric (r, z) coordinates. The pressure is
//! obtained from the Schur complement D A^-1 D^T with conjugate gradients;
//! the two symmetric momentum blocks are factored once, so every CG step is
//! a pair of banded back-substitutions. This stays robust on the strongly
//! anisotropic cells near the robot faces, where segregated
//! pressure-correction sweeps crawl.

use crate::mesh::AxiMesh;
use crate::numeric::Banded;
use crate::scenario::ScenarioConfig;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("pressure solve did not converge: divergence residual {residual:.3e} after {iterations} iterations")]
    NonConvergence { iterations: usize, residual: f64 },
}

/// Converged flow solution on the staggered lumen grid.
///
/// `vz` lives on axial faces (`nrl x (nz+1)`), `vr` on radial faces
/// (`(nrl+1) x nz`), `p` on cell centers; all restricted to the lumen block
/// of the mesh (robot interiors carry zeros).
#[derive(Debug, Clone)]
pub struct FlowField {
    pub nrl: usize,
    pub nz: usize,
    pub vz: Vec<f64>,
    pub vr: Vec<f64>,
    pub p: Vec<f64>,
    /// Volumetric flow through the vessel, m^3/s.
    pub flow_rate: f64,
    /// Mean speed over the full vessel cross section pi R^2.
    pub v_avg: f64,
    pub converged: bool,
    pub iterations: usize,
    pub residual: f64,
    /// Worst cell-wise mass imbalance relative to the inlet flux.
    pub div_max: f64,
}

impl FlowField {
    #[inline]
    pub fn vz_at(&self, ir: usize, kf: usize) -> f64 {
        self.vz[ir + kf * self.nrl]
    }
    #[inline]
    pub fn vr_at(&self, irf: usize, kz: usize) -> f64 {
        self.vr[irf + kz * (self.nrl + 1)]
    }
    #[inline]
    pub fn p_at(&self, ir: usize, kz: usize) -> f64 {
        self.p[ir + kz * self.nrl]
    }

    /// Volume flux through the axial face of cell column `ir` at z-face `kf`.
    pub fn face_flux_z(&self, mesh: &AxiMesh, ir: usize, kf: usize) -> f64 {
        if ir >= self.nrl {
            return 0.0;
        }
        self.vz_at(ir, kf) * 2.0 * PI * mesh.r.centers[ir] * mesh.r.widths[ir]
    }

    /// Volume flux through the radial face `irf` of cell row `kz`.
    pub fn face_flux_r(&self, mesh: &AxiMesh, irf: usize, kz: usize) -> f64 {
        if irf > self.nrl {
            return 0.0;
        }
        self.vr_at(irf, kz) * 2.0 * PI * mesh.r.faces[irf] * mesh.z.widths[kz]
    }

    /// Stream function value (volume flux / 2 pi) at radius `r` on z-face `kf`.
    pub fn psi_at(&self, mesh: &AxiMesh, kf: usize, r: f64) -> f64 {
        let mut psi = 0.0;
        for ir in 0..self.nrl {
            let (r0, r1) = (mesh.r.faces[ir], mesh.r.faces[ir + 1]);
            let v = self.vz_at(ir, kf);
            if r >= r1 {
                psi += v * mesh.r.centers[ir] * mesh.r.widths[ir];
            } else if r > r0 {
                psi += v * 0.5 * (r * r - r0 * r0);
                break;
            } else {
                break;
            }
        }
        psi
    }

    /// Radius where the stream function reaches `target` on z-face `kf`.
    pub fn radius_for_psi(&self, mesh: &AxiMesh, kf: usize, target: f64) -> Option<f64> {
        if target <= 0.0 {
            return None;
        }
        let mut psi = 0.0;
        for ir in 0..self.nrl {
            let v = self.vz_at(ir, kf);
            let d_psi = v * mesh.r.centers[ir] * mesh.r.widths[ir];
            if psi + d_psi >= target {
                if v <= 0.0 {
                    return Some(mesh.r.faces[ir]);
                }
                let r0 = mesh.r.faces[ir];
                let rr = (r0 * r0 + 2.0 * (target - psi) / v).sqrt();
                return Some(rr.min(mesh.r.faces[ir + 1]));
            }
            psi += d_psi;
        }
        None
    }

    /// Volumetric flow through the cross section at z-face `kf`.
    pub fn cross_flow(&self, mesh: &AxiMesh, kf: usize) -> f64 {
        2.0 * PI * self.psi_at(mesh, kf, mesh.r.faces[self.nrl])
    }
}

struct Layout<'a> {
    mesh: &'a AxiMesh,
    nrl: usize,
    nz: usize,
}

impl<'a> Layout<'a> {
    fn fluid(&self, ir: usize, kz: usize) -> bool {
        ir < self.nrl && self.mesh.region_at(ir, kz).is_fluid()
    }
    fn vz_id(&self, ir: usize, kf: usize) -> usize {
        ir + kf * self.nrl
    }
    fn vr_id(&self, irf: usize, kz: usize) -> usize {
        irf + kz * (self.nrl + 1)
    }
    fn p_id(&self, ir: usize, kz: usize) -> usize {
        ir + kz * self.nrl
    }
    fn vz_active(&self, ir: usize, kf: usize) -> bool {
        if kf == 0 {
            self.fluid(ir, 0)
        } else if kf == self.nz {
            self.fluid(ir, self.nz - 1)
        } else {
            self.fluid(ir, kf - 1) && self.fluid(ir, kf)
        }
    }
    fn vr_active(&self, irf: usize, kz: usize) -> bool {
        irf > 0 && irf < self.nrl && self.fluid(irf - 1, kz) && self.fluid(irf, kz)
    }
}

/// Solve the steady Stokes problem on the lumen block of `mesh` with the
/// pressure difference `dP * L` imposed between inlet and outlet.
pub fn solve_flow(mesh: &AxiMesh, cfg: &ScenarioConfig) -> Result<FlowField, FlowError> {
    let lay = Layout {
        mesh,
        nrl: mesh.ir_lumen,
        nz: mesh.nz,
    };
    let (nrl, nz) = (lay.nrl, lay.nz);
    let eta = cfg.fluid.viscosity;
    let p_in = cfg.pressure_gradient * cfg.vessel_length;
    let p_out = 0.0;
    let rf = &mesh.r.faces;
    let rc = &mesh.r.centers;
    let dr = &mesh.r.widths;
    let zf = &mesh.z.faces;
    let zc = &mesh.z.centers;
    let dz = &mesh.z.widths;

    let n_vz = nrl * (nz + 1);
    let n_vr = (nrl + 1) * nz;
    let n_p = nrl * nz;

    // --- symmetric z-momentum block ---
    let mut a_vz = Banded::zeros(n_vz, nrl, nrl);
    for kf in 0..=nz {
        for ir in 0..nrl {
            let id = lay.vz_id(ir, kf);
            if !lay.vz_active(ir, kf) {
                a_vz.set(id, id, 1.0);
                continue;
            }
            let dz_cv = if kf == 0 {
                zc[0] - zf[0]
            } else if kf == nz {
                zf[nz] - zc[nz - 1]
            } else {
                zc[kf] - zc[kf - 1]
            };
            let mut diag = 0.0;
            // radial neighbors: walls sit on faces between nodes
            let north_area = 2.0 * PI * rf[ir + 1] * dz_cv;
            if ir + 1 == nrl {
                diag += eta * north_area / (rf[nrl] - rc[ir]);
            } else if lay.vz_active(ir + 1, kf) {
                let c = eta * north_area / (rc[ir + 1] - rc[ir]);
                diag += c;
                a_vz.add(id, lay.vz_id(ir + 1, kf), -c);
            } else {
                diag += eta * north_area / (rf[ir + 1] - rc[ir]);
            }
            if ir > 0 {
                let south_area = 2.0 * PI * rf[ir] * dz_cv;
                if lay.vz_active(ir - 1, kf) {
                    let c = eta * south_area / (rc[ir] - rc[ir - 1]);
                    diag += c;
                    a_vz.add(id, lay.vz_id(ir - 1, kf), -c);
                } else {
                    diag += eta * south_area / (rc[ir] - rf[ir]);
                }
            }
            // axial neighbors sit on faces; solid faces pin the node to zero
            let a_cross = 2.0 * PI * rc[ir] * dr[ir];
            if kf < nz {
                let c = eta * a_cross / dz[kf];
                diag += c;
                a_vz.add(id, lay.vz_id(ir, kf + 1), -c);
            }
            if kf > 0 {
                let c = eta * a_cross / dz[kf - 1];
                diag += c;
                a_vz.add(id, lay.vz_id(ir, kf - 1), -c);
            }
            a_vz.add(id, id, diag);
        }
    }
    let lu_vz = a_vz.factor();

    // --- symmetric r-momentum block ---
    let mut a_vr = Banded::zeros(n_vr, nrl + 1, nrl + 1);
    for kz in 0..nz {
        for irf in 0..=nrl {
            let id = lay.vr_id(irf, kz);
            if !lay.vr_active(irf, kz) {
                a_vr.set(id, id, 1.0);
                continue;
            }
            let dr_cv = rc[irf] - rc[irf - 1];
            let mut diag = 0.0;
            let north_area = 2.0 * PI * rc[irf] * dz[kz];
            {
                let c = eta * north_area / dr[irf];
                diag += c;
                a_vr.add(id, lay.vr_id(irf + 1, kz), -c);
            }
            let south_area = 2.0 * PI * rc[irf - 1] * dz[kz];
            {
                let c = eta * south_area / dr[irf - 1];
                diag += c;
                a_vr.add(id, lay.vr_id(irf - 1, kz), -c);
            }
            let a_cross = 2.0 * PI * rf[irf] * dr_cv;
            if kz + 1 < nz {
                if lay.vr_active(irf, kz + 1) {
                    let c = eta * a_cross / (zc[kz + 1] - zc[kz]);
                    diag += c;
                    a_vr.add(id, lay.vr_id(irf, kz + 1), -c);
                } else {
                    diag += eta * a_cross / (zf[kz + 1] - zc[kz]);
                }
            }
            // outlet is traction-free: no axial link past the last row
            if kz == 0 {
                diag += eta * a_cross / (zc[0] - zf[0]);
            } else if lay.vr_active(irf, kz - 1) {
                let c = eta * a_cross / (zc[kz] - zc[kz - 1]);
                diag += c;
                a_vr.add(id, lay.vr_id(irf, kz - 1), -c);
            } else {
                diag += eta * a_cross / (zc[kz] - zf[kz]);
            }
            // axisymmetric curvature term
            diag += eta * 2.0 * PI * dr_cv * dz[kz] / rf[irf];
            a_vr.add(id, id, diag);
        }
    }
    let lu_vr = a_vr.factor();

    // boundary-pressure part of the momentum right-hand side
    let mut f_vz = vec![0.0; n_vz];
    for ir in 0..nrl {
        let a_cross = 2.0 * PI * rc[ir] * dr[ir];
        if lay.vz_active(ir, 0) {
            f_vz[lay.vz_id(ir, 0)] = p_in * a_cross;
        }
        if lay.vz_active(ir, nz) {
            f_vz[lay.vz_id(ir, nz)] = -p_out * a_cross;
        }
    }
    let f_vr = vec![0.0; n_vr];

    // divergence operator: D v = net volume outflow per fluid cell;
    // the pressure gradient in the momentum equations is D^T p.
    let grad_z = |p: &[f64], ir: usize, kf: usize| -> f64 {
        let a = 2.0 * PI * rc[ir] * dr[ir];
        let pw = if kf == 0 { 0.0 } else { p[lay.p_id(ir, kf - 1)] };
        let pe = if kf == nz { 0.0 } else { p[lay.p_id(ir, kf)] };
        (pw - pe) * a
    };
    let grad_r = |p: &[f64], irf: usize, kz: usize| -> f64 {
        let a = 2.0 * PI * rf[irf] * dz[kz];
        (p[lay.p_id(irf - 1, kz)] - p[lay.p_id(irf, kz)]) * a
    };
    let apply_div = |vz: &[f64], vr: &[f64], out: &mut [f64]| {
        for kz in 0..nz {
            for ir in 0..nrl {
                let id = lay.p_id(ir, kz);
                out[id] = if !lay.fluid(ir, kz) {
                    0.0
                } else {
                    let a_z = 2.0 * PI * rc[ir] * dr[ir];
                    vz[lay.vz_id(ir, kz + 1)] * a_z - vz[lay.vz_id(ir, kz)] * a_z
                        + vr[lay.vr_id(ir + 1, kz)] * 2.0 * PI * rf[ir + 1] * dz[kz]
                        - vr[lay.vr_id(ir, kz)] * 2.0 * PI * rf[ir] * dz[kz]
                };
            }
        }
    };
    // velocities for a given cell-pressure vector: v = A^-1 (f + D^T p)
    let velocities = |p: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut bz = f_vz.clone();
        for kf in 0..=nz {
            for ir in 0..nrl {
                if lay.vz_active(ir, kf) {
                    bz[lay.vz_id(ir, kf)] += grad_z(p, ir, kf);
                }
            }
        }
        lu_vz.solve(&mut bz);
        let mut br = f_vr.clone();
        for kz in 0..nz {
            for irf in 1..nrl {
                if lay.vr_active(irf, kz) {
                    br[lay.vr_id(irf, kz)] += grad_r(p, irf, kz);
                }
            }
        }
        lu_vr.solve(&mut br);
        (bz, br)
    };
    // Schur matrix-vector product S q = D A^-1 D^T q
    let apply_schur = |q: &[f64], out: &mut [f64]| {
        let mut bz = vec![0.0; n_vz];
        for kf in 0..=nz {
            for ir in 0..nrl {
                if lay.vz_active(ir, kf) {
                    bz[lay.vz_id(ir, kf)] = grad_z(q, ir, kf);
                }
            }
        }
        lu_vz.solve(&mut bz);
        let mut br = vec![0.0; n_vr];
        for kz in 0..nz {
            for irf in 1..nrl {
                if lay.vr_active(irf, kz) {
                    br[lay.vr_id(irf, kz)] = grad_r(q, irf, kz);
                }
            }
        }
        lu_vr.solve(&mut br);
        apply_div(&bz, &br, out);
    };

    // preconditioned CG on S p = -D A^-1 f, pressure-mass preconditioner
    let precond: Vec<f64> = (0..n_p)
        .map(|id| {
            let (ir, kz) = (id % nrl, id / nrl);
            if lay.fluid(ir, kz) {
                eta / (2.0 * PI * rc[ir] * dr[ir] * dz[kz])
            } else {
                0.0
            }
        })
        .collect();

    let mut p = vec![0.0; n_p];
    for kz in 0..nz {
        for ir in 0..nrl {
            if lay.fluid(ir, kz) {
                p[lay.p_id(ir, kz)] = p_in + (p_out - p_in) * zc[kz] / cfg.vessel_length;
            }
        }
    }
    let mut r = vec![0.0; n_p];
    {
        let (vz0, vr0) = velocities(&p);
        apply_div(&vz0, &vr0, &mut r);
        for v in r.iter_mut() {
            *v = -*v;
        }
    }
    let q_scale = {
        // Poiseuille estimate of the volumetric flow, as a residual scale
        let rr = cfg.vessel_radius;
        (cfg.pressure_gradient * rr.powi(4) * PI / (8.0 * eta)).abs()
    };
    let tol_abs = (cfg.solver.flow_tolerance * q_scale).max(1e-300);

    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(a, b)| a * b).collect();
    let mut d = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut sd = vec![0.0; n_p];
    let mut iterations = 0;
    let mut converged = r.iter().all(|v| v.abs() <= tol_abs);

    let max_it = cfg.solver.flow_max_iterations.min(10 * n_p + 100);
    while !converged && iterations < max_it {
        iterations += 1;
        apply_schur(&d, &mut sd);
        let dsd: f64 = d.iter().zip(&sd).map(|(a, b)| a * b).sum();
        if dsd <= 0.0 {
            break;
        }
        let alpha = rz / dsd;
        for i in 0..n_p {
            p[i] += alpha * d[i];
            r[i] -= alpha * sd[i];
        }
        if r.iter().all(|v| v.abs() <= tol_abs) {
            converged = true;
            break;
        }
        for i in 0..n_p {
            z[i] = r[i] * precond[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n_p {
            d[i] = z[i] + beta * d[i];
        }
    }

    let (vz, vr) = velocities(&p);
    let residual = r.iter().fold(0.0_f64, |m, v| m.max(v.abs())) / q_scale.max(1e-300);

    let mut field = FlowField {
        nrl,
        nz,
        vz,
        vr,
        p,
        flow_rate: 0.0,
        v_avg: 0.0,
        converged,
        iterations,
        residual,
        div_max: 0.0,
    };
    field.flow_rate = field.cross_flow(mesh, 0);
    field.v_avg = field.flow_rate / (PI * cfg.vessel_radius * cfg.vessel_radius);

    // mass-imbalance audit
    let q_ref = field.flow_rate.abs().max(1e-30);
    let mut worst = 0.0_f64;
    for kz in 0..nz {
        for ir in 0..nrl {
            if !lay.fluid(ir, kz) {
                continue;
            }
            let m = field.face_flux_z(mesh, ir, kz + 1) - field.face_flux_z(mesh, ir, kz)
                + field.face_flux_r(mesh, ir + 1, kz)
                - field.face_flux_r(mesh, ir, kz);
            worst = worst.max(m.abs());
        }
    }
    field.div_max = worst / q_ref;

    if !converged {
        return Err(FlowError::NonConvergence {
            iterations,
            residual,
        });
    }
    Ok(field)
}

/// Net axial force the flow exerts on the robot rings, from pressure on the
/// exposed annular end faces and viscous shear on the plasma-facing cylinder.
#[derive(Debug, Clone, Copy)]
pub struct WallForce {
    /// Total axial force on the aggregate, N.
    pub total: f64,
    pub per_robot: f64,
    /// Proportionality coefficient total / pressure gradient, m^3.
    pub coefficient: f64,
}

pub fn wall_force(flow: &FlowField, mesh: &AxiMesh, cfg: &ScenarioConfig) -> WallForce {
    let eta = cfg.fluid.viscosity;
    let mut f = 0.0;
    let Some(band0) = mesh.ir_band0 else {
        return WallForce {
            total: 0.0,
            per_robot: 0.0,
            coefficient: 0.0,
        };
    };
    let ir_top = band0 - 1; // last fluid cell under the robot face
    let r_face = mesh.r.faces[band0];
    for ring in &mesh.rings {
        // shear drag on the plasma-facing cylinder
        for kz in ring.kz0..ring.kz1 {
            let vbar = 0.5 * (flow.vz_at(ir_top, kz) + flow.vz_at(ir_top, kz + 1));
            let tau = eta * vbar / (r_face - mesh.r.centers[ir_top]);
            f += tau * 2.0 * PI * r_face * mesh.z.widths[kz];
        }
    }
    // pressure on the exposed upstream / downstream annular faces
    let first = mesh.rings.first().unwrap();
    let last = mesh.rings.last().unwrap();
    for ir in band0..mesh.ir_lumen {
        let area = 2.0 * PI * mesh.r.centers[ir] * mesh.r.widths[ir];
        f += flow.p_at(ir, first.kz0 - 1) * area;
        f -= flow.p_at(ir, last.kz1) * area;
    }
    let robots = (mesh.rings.len() * cfg.robot.robots_per_ring) as f64;
    WallForce {
        total: f,
        per_robot: f / robots,
        coefficient: f / cfg.pressure_gradient.max(1e-300),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;
    use crate::scenario::ScenarioConfig;

    fn robot_free_cfg() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        cfg.robot.ring_count = 0;
        cfg
    }

    #[test]
    fn zero_pressure_gradient_gives_zero_velocity() {
        let mut cfg = robot_free_cfg();
        cfg.pressure_gradient = 0.0;
        let mesh = build_mesh(&cfg).unwrap();
        let flow = solve_flow(&mesh, &cfg).unwrap();
        assert!(flow.vz.iter().all(|v| *v == 0.0));
        assert!(flow.vr.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn robot_free_flow_matches_poiseuille() {
        let cfg = robot_free_cfg();
        let mesh = build_mesh(&cfg).unwrap();
        let flow = solve_flow(&mesh, &cfg).unwrap();
        // mean speed 0.2 mm/s within 0.5%
        assert!(
            (flow.v_avg / 2e-4 - 1.0).abs() < 5e-3,
            "v_avg = {:.6e}",
            flow.v_avg
        );
        // profile in L2 within 0.5%
        let k_mid = mesh.nz / 2;
        let mut num = 0.0;
        let mut den = 0.0;
        for ir in 0..flow.nrl {
            let r = mesh.r.centers[ir];
            let exact = cfg.pressure_gradient * (cfg.vessel_radius.powi(2) - r * r)
                / (4.0 * cfg.fluid.viscosity);
            let got = flow.vz_at(ir, k_mid);
            let w = r * mesh.r.widths[ir];
            num += (got - exact).powi(2) * w;
            den += exact * exact * w;
        }
        let l2 = (num / den).sqrt();
        assert!(l2 < 5e-3, "L2 profile error = {l2:.3e}");
        assert!(flow.div_max < 1e-8, "div = {:.3e}", flow.div_max);
    }

    #[test]
    fn cross_section_flux_is_conserved() {
        let cfg = ScenarioConfig::preset("low_demand").unwrap();
        let mesh = build_mesh(&cfg).unwrap();
        let flow = solve_flow(&mesh, &cfg).unwrap();
        let q0 = flow.cross_flow(&mesh, 0);
        for kf in 0..=mesh.nz {
            let q = flow.cross_flow(&mesh, kf);
            assert!(
                (q / q0 - 1.0).abs() < 1e-6,
                "flux drift {:.3e} at face {kf}",
                q / q0 - 1.0
            );
        }
    }

    #[test]
    fn stokes_solution_is_linear_in_the_gradient() {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        cfg.robot.ring_count = 1;
        // keep this test quick: relax the 1-ring face constraint
        cfg.solver.face_spacing = 0.05e-6;
        let mesh = build_mesh(&cfg).unwrap();
        let f1 = solve_flow(&mesh, &cfg).unwrap();
        let w1 = wall_force(&f1, &mesh, &cfg);
        cfg.pressure_gradient *= 2.0;
        let f2 = solve_flow(&mesh, &cfg).unwrap();
        let w2 = wall_force(&f2, &mesh, &cfg);
        assert!((f2.flow_rate / f1.flow_rate - 2.0).abs() < 1e-3);
        assert!(
            (w2.total / w1.total - 2.0).abs() < 1e-3,
            "force ratio {}",
            w2.total / w1.total
        );
    }
}
