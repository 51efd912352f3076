//! Steady 2-D axisymmetric convection-diffusion-reaction solve for oxygen,
//! coupled to the 1-D cell saturation transport.
//!
//! The plasma/tissue concentration field C carries the red-cell release
//! source in the core component, a Michaelis-Menten sink in the tissue, and
//! the robot uptake according to the chosen design. Within the core the
//! free oxygen lives in the plasma fraction (1-h), so advective fluxes carry
//! (1-h) C there. The C field and the saturation S(z) are advanced
//! alternately under relaxation until both stop moving.

use crate::flow::FlowField;
use crate::mesh::{shell_thickness, AxiMesh, CoreBoundary, Region};
use crate::numeric::{power_law_coeff, Banded, FactoredBanded};
use crate::rbc::{advance_saturation, Kinetics, SaturationGrid, SaturationState};
use crate::scenario::ScenarioConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("saturation solve failed: {0}")]
    Saturation(#[from] crate::rbc::SaturationError),
    #[error("negative prescribed robot flux {0:.3e}")]
    InvalidFlux(f64),
    #[error("capacity-cap adjustment did not settle after {0} rounds")]
    CapacityLoop(usize),
}

/// Oxygen handling of one robot ring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RingMode {
    /// Pumps absorbing everything: zero concentration on the plasma faces.
    Absorb,
    /// Pumps running at a prescribed uniform uptake flux, molecule/m^2/s.
    Flux(f64),
    /// Pumps off: the surface exchanges nothing.
    Inert,
    /// No pumps: oxygen diffuses freely into the interior and reacts there.
    Interior,
}

/// Per-ring oxygen modes for the robot design in a config.
pub fn ring_modes(cfg: &ScenarioConfig) -> Result<Vec<RingMode>, TransportError> {
    let mode = if cfg.robot.pumps {
        RingMode::Absorb
    } else {
        RingMode::Interior
    };
    Ok(vec![mode; cfg.robot.ring_count])
}

/// Picard iteration bookkeeping.
#[derive(Debug, Clone, Copy)]
pub struct CouplingState {
    pub iterations: usize,
    pub c_change: f64,
    pub s_change: f64,
    pub converged: bool,
}

/// Converged (or last-iterate) coupled oxygen/saturation solution.
#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub c: Vec<f64>,
    pub sat: SaturationState,
    pub sat_grid: SaturationGrid,
    /// Core-component hematocrit used by the solve.
    pub h: f64,
    pub coupling: CouplingState,
    /// Oxygen absorbed per ring, molecule/s (upstream ring first).
    pub ring_uptake: Vec<f64>,
    pub ring_modes: Vec<RingMode>,
    /// Oxygen released by cells, molecule/s.
    pub release_total: f64,
    /// Oxygen consumed by tissue, molecule/s.
    pub tissue_uptake: f64,
    /// Minimum concentration seen on prescribed-flux robot faces.
    pub min_face_c: f64,
    /// Most negative raw concentration before clamping, as a fraction of C_in.
    pub min_c_fraction: f64,
    /// Plasma concentration on the core boundary per axial cell.
    pub c_interface: Vec<f64>,
}

/// Michaelis-Menten consumption rate density, molecule/m^3/s.
#[inline]
pub fn mm_rate(c: f64, q_max: f64, k_half: f64) -> f64 {
    let c = c.max(0.0);
    q_max * c / (k_half + c)
}

/// Tissue oxygen consumption rate density at concentration `c`.
pub fn tissue_sink_rate(c: f64, cfg: &ScenarioConfig) -> f64 {
    let q_max = 6.0 * cfg.tissue.power_demand / cfg.tissue.reaction_energy;
    mm_rate(c, q_max, cfg.tissue.half_concentration)
}

/// Robot power generation density (W/m^3) at concentration `c` for local
/// site density `n_d`.
pub fn robot_power_density(c: f64, n_d: f64, cfg: &ScenarioConfig) -> f64 {
    cfg.tissue.reaction_energy
        * n_d
        * cfg.robot.site_rate
        * c.max(0.0)
        / (cfg.robot.half_concentration + c.max(0.0))
}

/// Local reaction-site density inside a robot cell at radius `r`,
/// accounting for shell placement.
pub fn site_density_at(r: f64, mesh: &AxiMesh, cfg: &ScenarioConfig) -> f64 {
    let f = cfg.robot.shell_fraction;
    if f <= 0.0 || f >= 1.0 {
        return cfg.robot.site_density;
    }
    let t = shell_thickness(cfg);
    if r <= mesh.robot_inner_radius + t {
        cfg.robot.site_density / f
    } else {
        0.0
    }
}


/// Volume-weighted core-cell samples per axial cell, for averaging the
/// red-cell unloading rate over the cross section of the cell component.
pub struct CoreSampler {
    offsets: Vec<usize>,
    cells: Vec<usize>,
    weights: Vec<f64>,
}

impl CoreSampler {
    pub fn new(mesh: &AxiMesh) -> CoreSampler {
        let mut offsets = Vec::with_capacity(mesh.nz + 1);
        let mut cells = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for kz in 0..mesh.nz {
            let start = cells.len();
            let mut total = 0.0;
            for ir in 0..mesh.ir_lumen {
                if mesh.region_at(ir, kz) == Region::CoreFluid {
                    cells.push(mesh.idx(ir, kz));
                    let v = mesh.volume(ir, kz);
                    weights.push(v);
                    total += v;
                }
            }
            for w in weights[start..].iter_mut() {
                *w /= total;
            }
            offsets.push(cells.len());
        }
        CoreSampler {
            offsets,
            cells,
            weights,
        }
    }

    /// Partial-pressure ratios of the samples for a concentration field.
    pub fn ratios(&self, kin: &Kinetics, c: &[f64]) -> Vec<f64> {
        self.cells.iter().map(|&i| kin.pressure_ratio(c[i])).collect()
    }

    /// Cross-section average of the unloading rate in slice `kz` at
    /// saturation `s`, over precomputed ratios.
    pub fn mean_rate(&self, kin: &Kinetics, ratios: &[f64], kz: usize, s: f64) -> f64 {
        let mut acc = 0.0;
        for j in self.offsets[kz]..self.offsets[kz + 1] {
            acc += self.weights[j] * kin.unloading_rate(ratios[j], s);
        }
        acc
    }
}

struct Assembled {
    matrix: Banded,
    k_frozen: Vec<f64>,
    /// frozen red-cell buffering rate per slice, 1/s
    beta: Vec<f64>,
    /// (ring, fluid cell, conductance) of zero-concentration robot faces.
    absorb_faces: Vec<(usize, usize, f64)>,
    /// (ring, fluid cell, area, half distance) of prescribed-flux faces.
    flux_faces: Vec<(usize, usize, f64, f64)>,
}

struct Coupler<'a> {
    mesh: &'a AxiMesh,
    cfg: &'a ScenarioConfig,
    modes: Vec<RingMode>,
    /// cell activity (false for excluded robot interiors)
    active: Vec<bool>,
    /// advective face fluxes including the core porosity of the upwind cell
    fz: Vec<f64>, // (nr) x (nz+1)
    fr: Vec<f64>, // (nr+1) x (nz)
    q_sink_max: Vec<f64>,
    k_half: Vec<f64>,
    diffusion: Vec<f64>,
}

impl<'a> Coupler<'a> {
    fn new(
        mesh: &'a AxiMesh,
        flow: &'a FlowField,
        cfg: &'a ScenarioConfig,
        h: f64,
        modes: Vec<RingMode>,
    ) -> Result<Coupler<'a>, TransportError> {
        for m in &modes {
            if let RingMode::Flux(phi) = m {
                if *phi < 0.0 {
                    return Err(TransportError::InvalidFlux(*phi));
                }
            }
        }
        let (nr, nz) = (mesh.nr, mesh.nz);
        let mut active = vec![true; nr * nz];
        let mut q_sink_max = vec![0.0; nr * nz];
        let mut k_half = vec![0.0; nr * nz];
        let mut diffusion = vec![cfg.oxygen.diffusion; nr * nz];
        for kz in 0..nz {
            for ir in 0..nr {
                let i = mesh.idx(ir, kz);
                match mesh.region_at(ir, kz) {
                    Region::Tissue => {
                        q_sink_max[i] = 6.0 * cfg.tissue.power_demand / cfg.tissue.reaction_energy;
                        k_half[i] = cfg.tissue.half_concentration;
                    }
                    Region::RobotInterior => {
                        let ring = mesh.ring_of(kz).expect("robot cell outside rings");
                        if modes[ring] == RingMode::Interior {
                            let n_d = site_density_at(mesh.r.centers[ir], mesh, cfg);
                            q_sink_max[i] = 6.0 * n_d * cfg.robot.site_rate;
                            k_half[i] = cfg.robot.half_concentration;
                            diffusion[i] = cfg.robot_interior_diffusion();
                        } else {
                            active[i] = false;
                        }
                    }
                    _ => {}
                }
            }
        }
        // porosity-weighted advective fluxes; the core boundary is a
        // streamline, so the upwind cell's porosity applies
        let porosity = |ir: usize, kz: usize| -> f64 {
            if mesh.region_at(ir, kz) == Region::CoreFluid {
                1.0 - h
            } else {
                1.0
            }
        };
        let mut fz = vec![0.0; nr * (nz + 1)];
        for kf in 0..=nz {
            for ir in 0..mesh.ir_lumen {
                let f = flow.face_flux_z(mesh, ir, kf);
                let up = if f >= 0.0 {
                    if kf == 0 {
                        porosity(ir, 0)
                    } else {
                        porosity(ir, kf - 1)
                    }
                } else if kf == nz {
                    porosity(ir, nz - 1)
                } else {
                    porosity(ir, kf)
                };
                fz[ir + kf * nr] = f * up;
            }
        }
        let mut fr = vec![0.0; (nr + 1) * nz];
        for kz in 0..nz {
            for irf in 1..mesh.ir_lumen {
                let f = flow.face_flux_r(mesh, irf, kz);
                let up = if f >= 0.0 {
                    porosity(irf - 1, kz)
                } else {
                    porosity(irf, kz)
                };
                fr[irf + kz * (nr + 1)] = f * up;
            }
        }
        Ok(Coupler {
            mesh,
            cfg,
            modes,
            active,
            fz,
            fr,
            q_sink_max,
            k_half,
            diffusion,
        })
    }

    /// Robot ring owning the cell, when it is a robot cell.
    fn robot_ring(&self, ir: usize, kz: usize) -> Option<usize> {
        if self.mesh.region_at(ir, kz) == Region::RobotInterior {
            self.mesh.ring_of(kz)
        } else {
            None
        }
    }

    /// A face between a fluid cell and an excluded robot cell, classified by
    /// the ring mode (tissue-robot faces are sealed).
    fn plasma_face_mode(&self, ir_n: usize, kz_n: usize, from_fluid: bool) -> Option<RingMode> {
        let ring = self.robot_ring(ir_n, kz_n)?;
        if !from_fluid {
            return None;
        }
        Some(self.modes[ring])
    }

    fn assemble(&self, c_freeze: &[f64], beta_slice: &[f64]) -> Assembled {
        let mesh = self.mesh;
        let (nr, nz) = (mesh.nr, mesh.nz);
        let n = nr * nz;
        let mut m = Banded::zeros(n, nr, nr);
        let mut k_frozen = vec![0.0; n];
        let mut absorb_faces = Vec::new();
        let mut flux_faces = Vec::new();
        let rc = &mesh.r.centers;
        let rf = &mesh.r.faces;
        let dr = &mesh.r.widths;
        let zc = &mesh.z.centers;
        let dz = &mesh.z.widths;

        for kz in 0..nz {
            for ir in 0..nr {
                let id = mesh.idx(ir, kz);
                if !self.active[id] {
                    m.set(id, id, 1.0);
                    continue;
                }
                let is_fluid = mesh.region_at(ir, kz).is_fluid();
                let mut diag = 0.0;

                // radial faces; the vessel wall is sealed over robot rings
                for (nbv, irf) in [(ir.checked_sub(1), ir), (Some(ir + 1), ir + 1)] {
                    let area = 2.0 * PI2 * rf[irf] * dz[kz];
                    if area == 0.0 {
                        continue;
                    }
                    let Some(irn) = nbv else { continue };
                    if irn >= nr {
                        continue; // tissue outer: zero flux
                    }
                    // sealed wall between lumen and tissue over the rings
                    if irf == mesh.ir_lumen && mesh.ring_of(kz).is_some() {
                        continue;
                    }
                    let nid = mesh.idx(irn, kz);
                    let dist_own = (rc[ir] - rf[irf]).abs();
                    let dist_nb = (rc[irn] - rf[irf]).abs();
                    if self.active[nid] {
                        let cond = area / (dist_own / self.diffusion[id] + dist_nb / self.diffusion[nid]);
                        // outflow from this cell through the face
                        let fl = self.fr[irf + kz * (nr + 1)] * if irn > ir { 1.0 } else { -1.0 };
                        let a_nb = power_law_coeff(cond, fl);
                        diag += a_nb + fl;
                        m.add(id, nid, -a_nb);
                    } else if let Some(mode) = self.plasma_face_mode(irn, kz, is_fluid) {
                        match mode {
                            RingMode::Absorb => {
                                let cond = self.diffusion[id] * area / dist_own;
                                diag += cond;
                                absorb_faces.push((self.mesh.ring_of(kz).unwrap(), id, cond));
                            }
                            RingMode::Flux(_) => {
                                let ring = self.mesh.ring_of(kz).unwrap();
                                flux_faces.push((ring, id, area, dist_own / self.diffusion[id]));
                            }
                            _ => {}
                        }
                    }
                }

                // axial faces
                for dir in [-1i64, 1] {
                    let kn = kz as i64 + dir;
                    let kf = if dir < 0 { kz } else { kz + 1 };
                    let area = 2.0 * PI2 * rc[ir] * dr[ir];
                    let fl_raw = self.fz[ir + kf * nr] * dir as f64; // outflow if >0
                    if kn < 0 {
                        // inlet: Dirichlet for the lumen (the a_b * C_in part
                        // lands on the right-hand side), sealed for tissue
                        if is_fluid {
                            let cond = self.diffusion[id] * area / (zc[kz] - mesh.z.faces[0]);
                            let a_b = power_law_coeff(cond, fl_raw);
                            diag += a_b + fl_raw;
                        }
                        continue;
                    }
                    if kn >= nz as i64 {
                        // outlet: advective outflow only for the lumen
                        if is_fluid {
                            diag += fl_raw.max(0.0);
                        }
                        continue;
                    }
                    let kn = kn as usize;
                    let nid = mesh.idx(ir, kn);
                    // robot-robot axial faces between differently handled
                    // rings stay sealed
                    // robots exchange oxygen with the plasma only through
                    // the inner cylindrical surface: the annular end faces of
                    // the aggregate are sealed, and robot-robot boundaries
                    // are continuous with the interiors
                    if self.active[nid] {
                        let own_robot = mesh.region_at(ir, kz) == Region::RobotInterior;
                        let nb_robot = mesh.region_at(ir, kn) == Region::RobotInterior;
                        if own_robot != nb_robot {
                            continue; // fluid <-> robot end face
                        }
                        let dist_own = (zc[kz] - mesh.z.faces[kf]).abs();
                        let dist_nb = (zc[kn] - mesh.z.faces[kf]).abs();
                        let cond = area / (dist_own / self.diffusion[id] + dist_nb / self.diffusion[nid]);
                        let a_nb = power_law_coeff(cond, fl_raw);
                        diag += a_nb + fl_raw;
                        m.add(id, nid, -a_nb);
                    }
                }

                // red-cell buffering: implicit damping that cancels at the
                // fixed point but keeps the violent release source stable
                if mesh.region_at(ir, kz) == Region::CoreFluid && beta_slice[kz] > 0.0 {
                    diag += beta_slice[kz] * mesh.volume(ir, kz);
                }
                // linearized consumption: implicit frozen slope, exact at the
                // previous iterate so the fixed point is the true MM rate
                if self.q_sink_max[id] > 0.0 {
                    let kf = self.q_sink_max[id] / (self.k_half[id] + c_freeze[id].max(0.0));
                    k_frozen[id] = kf;
                    diag += kf * mesh.volume(ir, kz);
                }

                m.add(id, id, diag);
            }
        }
        Assembled {
            matrix: m,
            k_frozen,
            beta: beta_slice.to_vec(),
            absorb_faces,
            flux_faces,
        }
    }

    /// Right-hand side for the current saturation rates and previous iterate.
    fn rhs(
        &self,
        asm: &Assembled,
        c_prev: &[f64],
        release_slice: &[f64],
    ) -> Vec<f64> {
        let mesh = self.mesh;
        let (nr, nz) = (mesh.nr, mesh.nz);
        let mut b = vec![0.0; nr * nz];
        let c_in = self.cfg.oxygen.inlet_concentration;

        for kz in 0..nz {
            for ir in 0..nr {
                let id = mesh.idx(ir, kz);
                if !self.active[id] {
                    continue;
                }
                let region = mesh.region_at(ir, kz);
                // inlet Dirichlet
                if kz == 0 && region.is_fluid() {
                    let area = 2.0 * PI2 * mesh.r.centers[ir] * mesh.r.widths[ir];
                    let fl = -self.fz[ir]; // outflow through the inlet face
                    let cond =
                        self.diffusion[id] * area / (mesh.z.centers[0] - mesh.z.faces[0]);
                    let a_b = power_law_coeff(cond, fl);
                    b[id] += a_b * c_in;
                }
                // red-cell release density over the core cells of a slice
                if region == Region::CoreFluid {
                    if release_slice[kz] != 0.0 {
                        b[id] += release_slice[kz] * mesh.volume(ir, kz);
                    }
                    if asm.beta[kz] > 0.0 {
                        b[id] += asm.beta[kz] * c_prev[id] * mesh.volume(ir, kz);
                    }
                }
                // MM linearization correction term
                if asm.k_frozen[id] > 0.0 {
                    let r_exact = mm_rate(c_prev[id], self.q_sink_max[id], self.k_half[id]);
                    b[id] += (asm.k_frozen[id] * c_prev[id].max(0.0) - r_exact)
                        * mesh.volume(ir, kz);
                }
            }
        }
        // prescribed robot flux extraction
        for &(ring, cell, area, _) in &asm.flux_faces {
            if let RingMode::Flux(phi) = self.modes[ring] {
                b[cell] -= phi * area;
            }
        }
        b
    }

    /// Plasma concentration on the core boundary per axial cell.
    fn interface_c(&self, boundary: &CoreBoundary, c: &[f64]) -> Vec<f64> {
        let mesh = self.mesh;
        let mut out = vec![0.0; mesh.nz];
        for kz in 0..mesh.nz {
            let r_t = boundary.at(mesh.z.centers[kz]);
            let rc = &mesh.r.centers;
            let mut val = c[mesh.idx(0, kz)];
            for ir in 0..mesh.ir_lumen - 1 {
                if r_t >= rc[ir] && r_t <= rc[ir + 1] {
                    let t = (r_t - rc[ir]) / (rc[ir + 1] - rc[ir]);
                    val = c[mesh.idx(ir, kz)] * (1.0 - t) + c[mesh.idx(ir + 1, kz)] * t;
                    break;
                }
                if r_t > rc[ir + 1] {
                    val = c[mesh.idx(ir + 1, kz)];
                }
            }
            out[kz] = val.max(0.0);
        }
        out
    }
}

const PI2: f64 = std::f64::consts::PI;

/// Alternate the 2-D concentration solve and the 1-D saturation solve under
/// relaxation until both relative-change norms fall below the tolerance.
pub fn solve_coupled(
    mesh: &AxiMesh,
    flow: &FlowField,
    boundary: &CoreBoundary,
    h: f64,
    cfg: &ScenarioConfig,
    modes: Vec<RingMode>,
) -> Result<TransportSolution, TransportError> {
    let coupler = Coupler::new(mesh, flow, cfg, h, modes)?;
    let kin = Kinetics::new(cfg);
    let sampler = CoreSampler::new(mesh);
    let grid = SaturationGrid::new(mesh, boundary, cfg.solver.saturation_points);
    let c_in = cfg.oxygen.inlet_concentration;
    let relax = cfg.solver.picard_relaxation;
    let n = mesh.nr * mesh.nz;

    let mut c = vec![0.0; n];
    for i in 0..n {
        if coupler.active[i] {
            c[i] = c_in;
        }
    }
    let s_inlet = kin.hill_equilibrium(kin.pressure_ratio(c_in));
    let mut sat = SaturationState {
        s: vec![s_inlet; grid.len()],
        dsdt: vec![0.0; grid.len()],
        s_inlet,
    };

    let ratios0 = sampler.ratios(&kin, &c);
    let beta0 = buffering_per_slice(&grid, &kin, &sampler, &ratios0, &c, &sat, h, cfg, mesh.nz);
    let mut asm = coupler.assemble(&c, &beta0);
    let mut factored: FactoredBanded = asm.matrix.clone().factor();
    let mut c_freeze = c.clone();
    let mut coupling = CouplingState {
        iterations: 0,
        c_change: f64::INFINITY,
        s_change: f64::INFINITY,
        converged: false,
    };

    let mut prev_dc: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut refresh_next = false;
    for it in 0..cfg.solver.picard_max_iterations {
        coupling.iterations = it + 1;
        // release from the current saturation and core concentrations
        let ratios = sampler.ratios(&kin, &c);
        let rates = rates_on_grid(&grid, &kin, &sampler, &ratios, &sat);
        let release_slice = release_per_slice(&grid, mesh, &rates, h, cfg);

        // refresh the frozen linearizations when the field has moved
        let drift = c
            .iter()
            .zip(&c_freeze)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        if it > 0 && (it < 4 || it % 6 == 0 || drift > 0.2 * c_in || refresh_next) {
            let beta = buffering_per_slice(&grid, &kin, &sampler, &ratios, &c, &sat, h, cfg, mesh.nz);
            asm = coupler.assemble(&c, &beta);
            factored = asm.matrix.clone().factor();
            c_freeze = c.clone();
            refresh_next = false;
        }

        let c_old = c.clone();
        let s_old = sat.s.clone();
        let mut b = coupler.rhs(&asm, &c, &release_slice);
        factored.solve(&mut b);
        let mut c_change = 0.0_f64;
        for i in 0..n {
            if coupler.active[i] {
                c_change = c_change.max((b[i] - c[i]).abs());
                c[i] = b[i];
            }
        }

        // saturation update with the new concentration field, under-relaxed
        let ratios = sampler.ratios(&kin, &c);
        let rate_fn =
            |i: usize, sv: f64| sampler.mean_rate(&kin, &ratios, grid.slice[i], sv);
        let new_sat = advance_saturation(&grid, &kin, cfg, &rate_fn, Some(&sat.s))?;
        let mut s_change = 0.0_f64;
        for i in 0..grid.len() {
            s_change = s_change.max((new_sat.s[i] - sat.s[i]).abs());
            sat.s[i] += relax * (new_sat.s[i] - sat.s[i]);
        }
        sat.dsdt = (0..grid.len()).map(|i| rate_fn(i, sat.s[i])).collect();

        coupling.c_change = c_change / c_in;
        coupling.s_change = s_change;
        if std::env::var_os("MICROVASC_TRACE").is_some() {
            eprintln!(
                "  picard {:3}: dC={:.3e} dS={:.3e}",
                it + 1,
                coupling.c_change,
                coupling.s_change
            );
        }
        if coupling.c_change < cfg.solver.picard_tolerance
            && coupling.s_change < cfg.solver.picard_tolerance
        {
            coupling.converged = true;
            break;
        }

        // Aitken extrapolation of the joint iterate: the alternation has one
        // slow, nearly linear mode, so a measured contraction ratio lets us
        // jump ahead along it
        let dc_now: Vec<f64> = c.iter().zip(&c_old).map(|(a, b)| a - b).collect();
        let ds_now: Vec<f64> = sat.s.iter().zip(&s_old).map(|(a, b)| a - b).collect();
        if let Some((pdc, pds)) = &prev_dc {
            if it >= 4 && it % 4 == 0 {
                let scale_c = 1.0 / (c_in * c_in);
                let num: f64 = dc_now.iter().zip(pdc).map(|(a, b)| a * b).sum::<f64>() * scale_c
                    + ds_now.iter().zip(pds).map(|(a, b)| a * b).sum::<f64>();
                let den: f64 = pdc.iter().map(|a| a * a).sum::<f64>() * scale_c
                    + pds.iter().map(|a| a * a).sum::<f64>();
                let rho = if den > 0.0 { num / den } else { 0.0 };
                if rho > 0.3 && rho < 0.995 {
                    let gain = (rho / (1.0 - rho)).min(40.0);
                    for i in 0..n {
                        if coupler.active[i] {
                            c[i] = (c[i] + gain * dc_now[i]).max(0.0);
                        }
                    }
                    for i in 0..grid.len() {
                        sat.s[i] = (sat.s[i] + gain * ds_now[i]).clamp(0.0, 1.0);
                    }
                    refresh_next = true;
                }
            }
        }
        prev_dc = Some((dc_now, ds_now));
    }

    // final bookkeeping
    let c_if = coupler.interface_c(boundary, &c);
    let ratios = sampler.ratios(&kin, &c);
    let rates = rates_on_grid(&grid, &kin, &sampler, &ratios, &sat);
    let release_total = total_release(&grid, &rates, h, cfg);

    let mut min_c = 0.0_f64;
    for i in 0..n {
        if coupler.active[i] {
            min_c = min_c.min(c[i]);
        }
    }
    for v in c.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }

    let mut ring_uptake = vec![0.0; mesh.rings.len()];
    for &(ring, cell, cond) in &asm.absorb_faces {
        ring_uptake[ring] += cond * c[cell];
    }
    let mut min_face_c = f64::INFINITY;
    for &(ring, cell, area, resist) in &asm.flux_faces {
        if let RingMode::Flux(phi) = coupler.modes[ring] {
            ring_uptake[ring] += phi * area;
            min_face_c = min_face_c.min(c[cell] - phi * resist);
        }
    }
    if asm.flux_faces.is_empty() {
        min_face_c = f64::NAN;
    }
    for kz in 0..mesh.nz {
        for ir in 0..mesh.nr {
            let id = mesh.idx(ir, kz);
            if coupler.active[id] && mesh.region_at(ir, kz) == Region::RobotInterior {
                let ring = mesh.ring_of(kz).unwrap();
                ring_uptake[ring] +=
                    mm_rate(c[id], coupler.q_sink_max[id], coupler.k_half[id]) * mesh.volume(ir, kz);
            }
        }
    }
    let mut tissue_uptake = 0.0;
    for kz in 0..mesh.nz {
        for ir in 0..mesh.nr {
            let id = mesh.idx(ir, kz);
            if mesh.region_at(ir, kz) == Region::Tissue {
                tissue_uptake += mm_rate(c[id], coupler.q_sink_max[id], coupler.k_half[id])
                    * mesh.volume(ir, kz);
            }
        }
    }

    Ok(TransportSolution {
        c,
        sat,
        sat_grid: grid,
        h,
        coupling,
        ring_uptake,
        ring_modes: coupler.modes,
        release_total,
        tissue_uptake,
        min_face_c,
        min_c_fraction: min_c / c_in,
        c_interface: c_if,
    })
}


/// Implicit damping rate for the core cells: the sensitivity of the slice
/// release rate to the local plasma concentration, h C_max d<dS/dt>/dC.
/// Added to the matrix diagonal and cancelled through the right-hand side,
/// it leaves the fixed point untouched while making the cell buffering
/// implicit.
fn buffering_per_slice(
    grid: &SaturationGrid,
    kin: &Kinetics,
    sampler: &CoreSampler,
    ratios: &[f64],
    c: &[f64],
    sat: &SaturationState,
    h: f64,
    cfg: &ScenarioConfig,
    nz: usize,
) -> Vec<f64> {
    // sensitivity of the mean rate to a uniform shift of the slice's core
    // concentration, via perturbed partial-pressure ratios
    let mut c_ref = vec![0.0; nz];
    for kz in 0..nz {
        let mut m = 0.0;
        for j in sampler.offsets[kz]..sampler.offsets[kz + 1] {
            m = f64::max(m, c[sampler.cells[j]]);
        }
        c_ref[kz] = m;
    }
    let mut num = vec![0.0; nz];
    let mut den = vec![0.0; nz];
    for i in 0..grid.len() {
        let kz = grid.slice[i];
        let dc = (1e-4 * c_ref[kz]).max(1e15);
        let da = kin.pressure_ratio(dc);
        let mut rp = 0.0;
        let mut rm = 0.0;
        for j in sampler.offsets[kz]..sampler.offsets[kz + 1] {
            rp += sampler.weights[j] * kin.unloading_rate(ratios[j] + da, sat.s[i]);
            rm += sampler.weights[j]
                * kin.unloading_rate((ratios[j] - da).max(0.0), sat.s[i]);
        }
        num[kz] += (rp - rm) / (2.0 * dc) * grid.dz[i];
        den[kz] += grid.dz[i];
    }
    (0..nz)
        .map(|kz| {
            let slope = if den[kz] > 0.0 { num[kz] / den[kz] } else { 0.0 };
            (h * cfg.rbc.max_concentration * slope).max(0.0)
        })
        .collect()
}

fn rates_on_grid(
    grid: &SaturationGrid,
    kin: &Kinetics,
    sampler: &CoreSampler,
    ratios: &[f64],
    sat: &SaturationState,
) -> Vec<f64> {
    (0..grid.len())
        .map(|i| sampler.mean_rate(kin, ratios, grid.slice[i], sat.s[i]))
        .collect()
}

/// Release source per axial cell: - h C_max <dS/dt> integrated over the core
/// cross-section, expressed per unit core volume of that slice (so that
/// distributing it over the tagged core cells reproduces the 1-D sink
/// exactly).
fn release_per_slice(
    grid: &SaturationGrid,
    mesh: &AxiMesh,
    rates: &[f64],
    h: f64,
    cfg: &ScenarioConfig,
) -> Vec<f64> {
    let mut total = vec![0.0; mesh.nz]; // molecule/s per slice
    for i in 0..grid.len() {
        total[grid.slice[i]] -= h * cfg.rbc.max_concentration * rates[i] * grid.area[i] * grid.dz[i];
    }
    // convert to molecule/s per m^3 of tagged core volume
    let mut v_core = vec![0.0; mesh.nz];
    for kz in 0..mesh.nz {
        for ir in 0..mesh.ir_lumen {
            if mesh.region_at(ir, kz) == Region::CoreFluid {
                v_core[kz] += mesh.volume(ir, kz);
            }
        }
    }
    // the rhs() distributes density * V_cell, so return per-volume density
    total
        .iter()
        .zip(&v_core)
        .map(|(t, v)| if *v > 0.0 { t / v } else { 0.0 })
        .collect()
}

fn total_release(grid: &SaturationGrid, rates: &[f64], h: f64, cfg: &ScenarioConfig) -> f64 {
    -(0..grid.len())
        .map(|i| h * cfg.rbc.max_concentration * rates[i] * grid.area[i] * grid.dz[i])
        .sum::<f64>()
}

/// Run the coupled solve for the configured design, enforcing the per-robot
/// capacity bound 6 N r by switching over-drawing rings from the
/// zero-concentration condition to a capped uniform flux.
pub fn solve_with_capacity(
    mesh: &AxiMesh,
    flow: &FlowField,
    boundary: &CoreBoundary,
    h: f64,
    cfg: &ScenarioConfig,
) -> Result<TransportSolution, TransportError> {
    let mut modes = ring_modes(cfg)?;
    let cap_per_robot = 6.0 * cfg.derived().sites_per_robot * cfg.robot.site_rate;
    for round in 0..=mesh.rings.len() + 1 {
        let sol = solve_coupled(mesh, flow, boundary, h, cfg, modes.clone())?;
        if !cfg.robot.pumps {
            return Ok(sol);
        }
        let mut changed = false;
        for (k, ring) in mesh.rings.iter().enumerate() {
            if modes[k] != RingMode::Absorb {
                continue;
            }
            let per_robot = sol.ring_uptake[k] / cfg.robot.robots_per_ring as f64;
            if per_robot > cap_per_robot * (1.0 + 1e-9) {
                let area = ring_face_area(mesh, ring);
                let phi = cap_per_robot * cfg.robot.robots_per_ring as f64 / area;
                modes[k] = RingMode::Flux(phi);
                changed = true;
            }
        }
        if !changed {
            return Ok(sol);
        }
        if round == mesh.rings.len() + 1 {
            break;
        }
    }
    Err(TransportError::CapacityLoop(mesh.rings.len() + 1))
}

/// Plasma-facing area of one ring: its stretch of the inner cylinder (the
/// annular end faces of the aggregate do not exchange oxygen).
pub fn ring_face_area(mesh: &AxiMesh, ring: &crate::mesh::Ring) -> f64 {
    2.0 * PI2 * mesh.robot_inner_radius * (mesh.z.faces[ring.kz1] - mesh.z.faces[ring.kz0])
}

/// Conservation ledger of a converged solution.
#[derive(Debug, Clone, Copy)]
pub struct BalanceReport {
    /// Advected free oxygen entering at the inlet (plasma and sleeve).
    pub inflow_plasma: f64,
    /// Diffusive free-oxygen inflow across the inlet plane.
    pub inflow_diffusive: f64,
    /// Cell-bound oxygen entering at the inlet.
    pub inflow_bound: f64,
    pub outflow_plasma: f64,
    pub outflow_bound: f64,
    pub robot_uptake: f64,
    pub tissue_uptake: f64,
    pub release: f64,
    pub residual: f64,
    pub relative_residual: f64,
}

pub fn species_balance_audit(
    sol: &TransportSolution,
    mesh: &AxiMesh,
    flow: &FlowField,
    cfg: &ScenarioConfig,
) -> BalanceReport {
    let kin = Kinetics::new(cfg);
    let c_in = cfg.oxygen.inlet_concentration;
    let h = sol.h;
    let porosity = |ir: usize, kz: usize| -> f64 {
        if mesh.region_at(ir, kz) == Region::CoreFluid {
            1.0 - h
        } else {
            1.0
        }
    };
    let mut inflow_plasma = 0.0;
    let mut inflow_diffusive = 0.0;
    let mut outflow_plasma = 0.0;
    for ir in 0..mesh.ir_lumen {
        let f_in = flow.face_flux_z(mesh, ir, 0) * porosity(ir, 0);
        inflow_plasma += f_in * c_in;
        let area = 2.0 * PI2 * mesh.r.centers[ir] * mesh.r.widths[ir];
        let cond = cfg.oxygen.diffusion * area / (mesh.z.centers[0] - mesh.z.faces[0]);
        // the matrix used power-law damping for this conductance
        let a_b = power_law_coeff(cond, -f_in);
        inflow_diffusive += (a_b - f_in.max(0.0)) * (c_in - sol.c[mesh.idx(ir, 0)]);
        let f_out = flow.face_flux_z(mesh, ir, mesh.nz) * porosity(ir, mesh.nz - 1);
        outflow_plasma += f_out * sol.c[mesh.idx(ir, mesh.nz - 1)];
    }
    // bound ledger from the 1-D grid
    let grid = &sol.sat_grid;
    let q = grid.q_core;
    let hcm = h * cfg.rbc.max_concentration;
    let s_in = kin.hill_equilibrium(kin.pressure_ratio(c_in));
    let cond0 = cfg.rbc.heme_diffusion * grid.area[0] / grid.z[0];
    let a_w = power_law_coeff(cond0, -q);
    let inflow_bound = hcm * (q * s_in + (a_w - q) * (s_in - sol.sat.s[0]));
    let outflow_bound = hcm * q * sol.sat.s[grid.len() - 1];

    let robot_uptake: f64 = sol.ring_uptake.iter().sum();
    let inflow = inflow_plasma + inflow_diffusive + inflow_bound;
    let residual =
        inflow - outflow_plasma - outflow_bound - robot_uptake - sol.tissue_uptake;
    BalanceReport {
        inflow_plasma,
        inflow_diffusive,
        inflow_bound,
        outflow_plasma,
        outflow_bound,
        robot_uptake,
        tissue_uptake: sol.tissue_uptake,
        release: sol.release_total,
        residual,
        relative_residual: residual / inflow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    #[test]
    fn sink_rate_limits() {
        let cfg = ScenarioConfig::preset("low_demand").unwrap();
        // saturated tissue sink: 6 P_max / e = 6e21 molecule/m^3/s
        let sat = tissue_sink_rate(1e30, &cfg);
        assert!((sat / 6e21 - 1.0).abs() < 1e-8);
        assert_eq!(tissue_sink_rate(0.0, &cfg), 0.0);
        // robot power density at C = 1e22 is about 0.99% of the maximum
        let p = robot_power_density(1e22, cfg.robot.site_density, &cfg);
        let pmax = cfg.tissue.reaction_energy * cfg.robot.site_density * cfg.robot.site_rate;
        assert!((p / pmax - 1e22 / 1.01e24).abs() < 1e-12);
    }

    #[test]
    fn ring_modes_follow_the_design() {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        assert!(ring_modes(&cfg).unwrap().iter().all(|m| *m == RingMode::Absorb));
        cfg.robot.pumps = false;
        assert!(ring_modes(&cfg)
            .unwrap()
            .iter()
            .all(|m| *m == RingMode::Interior));
    }
}
