//! Axisymmetric computational domain: vessel lumen, robot rings on the wall
//! and the surrounding tissue annulus, on a boundary-fitted tensor-product
//! grid in (r, z). Robots are axis-aligned rectangles in the (r, z) plane, so
//! every robot surface coincides with a grid line. Grading refines the grid
//! toward the plasma-facing robot surfaces.

use crate::flow::FlowField;
use crate::scenario::ScenarioConfig;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("mesh needs {needed} cells, budget is {budget}")]
    BudgetExceeded { needed: usize, budget: usize },
    #[error("streamline left the domain while tracing the cell core boundary at z = {z:.3e}")]
    StreamlineLost { z: f64 },
}

/// Region occupied by a cell. Tags partition the domain; the core/sleeve
/// split is provisional (straight line at the inlet gap) until
/// [`AxiMesh::retag_core`] applies a traced boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    CoreFluid,
    PlasmaSleeve,
    RobotInterior,
    Tissue,
}

impl Region {
    pub fn is_fluid(self) -> bool {
        matches!(self, Region::CoreFluid | Region::PlasmaSleeve)
    }
}

/// One axis of the tensor grid: `faces` has `n + 1` entries.
#[derive(Debug, Clone)]
pub struct Axis1D {
    pub faces: Vec<f64>,
    pub centers: Vec<f64>,
    pub widths: Vec<f64>,
}

impl Axis1D {
    fn from_faces(faces: Vec<f64>) -> Axis1D {
        let centers = faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let widths = faces.windows(2).map(|w| w[1] - w[0]).collect();
        Axis1D {
            faces,
            centers,
            widths,
        }
    }
    pub fn len(&self) -> usize {
        self.widths.len()
    }
    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }
}

/// Axial span of one robot ring, as a half-open cell index range.
#[derive(Debug, Clone, Copy)]
pub struct Ring {
    pub kz0: usize,
    pub kz1: usize,
}

#[derive(Debug, Clone)]
pub struct AxiMesh {
    pub r: Axis1D,
    pub z: Axis1D,
    pub nr: usize,
    pub nz: usize,
    pub region: Vec<Region>,
    /// Number of radial cells inside the vessel (centers below R).
    pub ir_lumen: usize,
    /// First radial cell of the robot band, if rings are present.
    pub ir_band0: Option<usize>,
    /// Radial cell index range of the reactive shell, when shell placement is
    /// active: cells `ir_band0 .. ir_shell_end` carry the scaled site density.
    pub ir_shell_end: Option<usize>,
    pub rings: Vec<Ring>,
    pub vessel_radius: f64,
    pub robot_inner_radius: f64,
}

impl AxiMesh {
    #[inline]
    pub fn idx(&self, ir: usize, kz: usize) -> usize {
        ir + kz * self.nr
    }

    #[inline]
    pub fn region_at(&self, ir: usize, kz: usize) -> Region {
        self.region[self.idx(ir, kz)]
    }

    pub fn is_robot(&self, ir: usize, kz: usize) -> bool {
        self.region_at(ir, kz) == Region::RobotInterior
    }

    /// Exact volume of cell (ir, kz): 2 pi r dr dz.
    #[inline]
    pub fn volume(&self, ir: usize, kz: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.r.centers[ir] * self.r.widths[ir] * self.z.widths[kz]
    }

    /// Ring index owning axial cell `kz`, if any.
    pub fn ring_of(&self, kz: usize) -> Option<usize> {
        self.rings.iter().position(|r| kz >= r.kz0 && kz < r.kz1)
    }

    /// Re-classify fluid cells into core and sleeve using a traced boundary.
    pub fn retag_core(&mut self, boundary: &CoreBoundary) {
        for kz in 0..self.nz {
            let rc = boundary.at(self.z.centers[kz]);
            for ir in 0..self.nr {
                let i = self.idx(ir, kz);
                if self.region[i].is_fluid() {
                    self.region[i] = if self.r.centers[ir] < rc {
                        Region::CoreFluid
                    } else {
                        Region::PlasmaSleeve
                    };
                }
            }
        }
    }

    /// Cross-section area of the core component per axial cell.
    pub fn core_area(&self, boundary: &CoreBoundary) -> Vec<f64> {
        self.z
            .centers
            .iter()
            .map(|&z| {
                let rc = boundary.at(z);
                std::f64::consts::PI * rc * rc
            })
            .collect()
    }
}

/// Graded spacing over [x0, x1], from h0 at the left end to h1 at the right,
/// growth ratio at most `g`, interior spacing capped at `hmax`. Returns the
/// face positions including both ends.
fn graded(x0: f64, x1: f64, h0: f64, h1: f64, hmax: f64, g: f64) -> Vec<f64> {
    let len = x1 - x0;
    assert!(len > 0.0);
    let hmin = h0.min(h1);
    if len <= 1.5 * hmin {
        return vec![x0, x1];
    }
    let mut left = Vec::new();
    let mut right = Vec::new();
    let (mut hl, mut hr) = (h0, h1);
    let (mut sl, mut sr) = (0.0, 0.0);
    while sl + sr + hl.max(hr) < len {
        if hl <= hr {
            left.push(hl);
            sl += hl;
            hl = (hl * g).min(hmax);
        } else {
            right.push(hr);
            sr += hr;
            hr = (hr * g).min(hmax);
        }
    }
    let rem = len - sl - sr;
    let h_mid = 0.5 * (hl + hr);
    let k = (rem / h_mid).round().max(1.0) as usize;
    for _ in 0..k {
        left.push(rem / k as f64);
    }
    let mut faces = Vec::with_capacity(left.len() + right.len() + 1);
    faces.push(x0);
    let mut x = x0;
    for h in &left {
        x += h;
        faces.push(x);
    }
    for h in right.iter().rev() {
        x += h;
        faces.push(x);
    }
    let n = faces.len();
    faces[n - 1] = x1; // absorb rounding
    faces
}

fn append_segment(faces: &mut Vec<f64>, seg: Vec<f64>) {
    debug_assert!((faces.last().unwrap() - seg[0]).abs() < 1e-15);
    faces.extend_from_slice(&seg[1..]);
}

/// Thickness of the reactive shell implied by a volume fraction: the shell
/// sits against the plasma-facing cylinder at r = R - size.
pub fn shell_thickness(cfg: &ScenarioConfig) -> f64 {
    let f = cfg.robot.shell_fraction;
    if f <= 0.0 || f >= 1.0 {
        return 0.0;
    }
    let ri = cfg.vessel_radius - cfg.robot.size;
    let ro = cfg.vessel_radius;
    (ri * ri + f * (ro * ro - ri * ri)).sqrt() - ri
}

pub fn build_mesh(cfg: &ScenarioConfig) -> Result<AxiMesh, MeshError> {
    let rr = cfg.vessel_radius;
    let rt = cfg.tissue_radius;
    let length = cfg.vessel_length;
    let nrings = cfg.robot.ring_count;
    let size = cfg.robot.size;
    let g = cfg.solver.mesh_growth;
    let hface = cfg.face_spacing();

    // radial faces
    let mut rf = vec![0.0];
    if nrings > 0 {
        let ri = rr - size;
        // open lumen, gently refined toward the robot face
        let sleeve = 0.6e-6_f64.min(0.5 * ri);
        append_segment(
            &mut rf,
            graded(
                0.0,
                ri - sleeve,
                cfg.solver.lumen_spacing,
                0.5 * cfg.solver.lumen_spacing,
                cfg.solver.lumen_spacing,
                g,
            ),
        );
        append_segment(
            &mut rf,
            graded(ri - sleeve, ri, 0.5 * cfg.solver.lumen_spacing, 0.04e-6, 0.5e-6, g),
        );
        // robot band: fine next to the plasma-facing cylinder, where the
        // interior reaction layer sits, growing toward the wall
        let t_shell = shell_thickness(cfg);
        if t_shell > 0.0 && t_shell < size {
            let hs = (t_shell / 5.0).min(0.02e-6);
            append_segment(&mut rf, graded(ri, ri + t_shell, hs, hs, hs, g));
            append_segment(&mut rf, graded(ri + t_shell, rr, hs, 0.1e-6, 0.1e-6, g));
        } else {
            append_segment(&mut rf, graded(ri, rr, 0.02e-6, 0.1e-6, 0.1e-6, g));
        }
    } else {
        append_segment(
            &mut rf,
            graded(0.0, rr, cfg.solver.lumen_spacing, 0.1e-6, cfg.solver.lumen_spacing, g),
        );
    }
    let ir_lumen = rf.len() - 1;
    append_segment(&mut rf, graded(rr, rt, 0.18e-6, cfg.solver.tissue_spacing, cfg.solver.tissue_spacing, g));

    // axial faces
    let mut zf = vec![0.0];
    let mut rings = Vec::new();
    if nrings > 0 {
        let band0 = 0.5 * (length - nrings as f64 * size);
        append_segment(
            &mut zf,
            graded(0.0, band0, cfg.solver.axial_spacing, hface, cfg.solver.axial_spacing, g),
        );
        let per_ring = (size / hface).ceil() as usize;
        for k in 0..nrings {
            let kz0 = zf.len() - 1;
            let z0 = band0 + k as f64 * size;
            let z1 = band0 + (k + 1) as f64 * size;
            for j in 1..=per_ring {
                zf.push(z0 + (z1 - z0) * j as f64 / per_ring as f64);
            }
            rings.push(Ring {
                kz0,
                kz1: zf.len() - 1,
            });
        }
        let band1 = band0 + nrings as f64 * size;
        append_segment(
            &mut zf,
            graded(band1, length, hface, cfg.solver.axial_spacing, cfg.solver.axial_spacing, g),
        );
    } else {
        append_segment(
            &mut zf,
            graded(0.0, length, cfg.solver.axial_spacing, cfg.solver.axial_spacing, cfg.solver.axial_spacing, g),
        );
    }

    let r = Axis1D::from_faces(rf);
    let z = Axis1D::from_faces(zf);
    let (nr, nz) = (r.len(), z.len());
    if nr * nz > cfg.solver.cell_budget {
        return Err(MeshError::BudgetExceeded {
            needed: nr * nz,
            budget: cfg.solver.cell_budget,
        });
    }

    let ri = rr - size;
    let ir_band0 = if nrings > 0 {
        Some(r.centers.iter().position(|&rc| rc > ri).unwrap())
    } else {
        None
    };
    let t_shell = shell_thickness(cfg);
    let ir_shell_end = if nrings > 0 && t_shell > 0.0 {
        Some(
            r.centers
                .iter()
                .position(|&rc| rc > ri + t_shell)
                .unwrap_or(ir_lumen),
        )
    } else {
        None
    };

    let gap = cfg.inlet_gap();
    let mut region = vec![Region::Tissue; nr * nz];
    for kz in 0..nz {
        let in_ring = rings.iter().any(|rg| kz >= rg.kz0 && kz < rg.kz1);
        for ir in 0..nr {
            let rc = r.centers[ir];
            region[ir + kz * nr] = if rc > rr {
                Region::Tissue
            } else if in_ring && rc > ri {
                Region::RobotInterior
            } else if rc < rr - gap {
                Region::CoreFluid
            } else {
                Region::PlasmaSleeve
            };
        }
    }

    Ok(AxiMesh {
        r,
        z,
        nr,
        nz,
        region,
        ir_lumen,
        ir_band0,
        ir_shell_end,
        rings,
        vessel_radius: rr,
        robot_inner_radius: if nrings > 0 { ri } else { rr },
    })
}

/// The cell-core boundary R_cell(z), a streamline of the solved flow,
/// piecewise linear between axial faces.
#[derive(Debug, Clone)]
pub struct CoreBoundary {
    pub z_faces: Vec<f64>,
    pub r_cell: Vec<f64>,
    /// Volumetric flow inside the boundary, m^3/s (constant along z).
    pub core_flow: f64,
}

impl CoreBoundary {
    pub fn at(&self, z: f64) -> f64 {
        let zs = &self.z_faces;
        match zs.binary_search_by(|v| v.partial_cmp(&z).unwrap()) {
            Ok(i) => self.r_cell[i],
            Err(i) => {
                if i == 0 {
                    self.r_cell[0]
                } else if i >= zs.len() {
                    *self.r_cell.last().unwrap()
                } else {
                    let t = (z - zs[i - 1]) / (zs[i] - zs[i - 1]);
                    self.r_cell[i - 1] * (1.0 - t) + self.r_cell[i] * t
                }
            }
        }
    }
}

/// Trace the streamline through (z = 0, r = R - inlet gap) across every
/// axial station of the solved flow.
pub fn trace_core_boundary(
    flow: &FlowField,
    mesh: &AxiMesh,
    cfg: &ScenarioConfig,
) -> Result<CoreBoundary, MeshError> {
    let r_in = cfg.vessel_radius - cfg.inlet_gap();
    let psi_target = flow.psi_at(mesh, 0, r_in);
    let mut r_cell = Vec::with_capacity(mesh.nz + 1);
    for k in 0..=mesh.nz {
        match flow.radius_for_psi(mesh, k, psi_target) {
            Some(rc) => r_cell.push(rc),
            None => {
                return Err(MeshError::StreamlineLost {
                    z: mesh.z.faces[k],
                })
            }
        }
    }
    Ok(CoreBoundary {
        z_faces: mesh.z.faces.clone(),
        r_cell,
        core_flow: 2.0 * std::f64::consts::PI * psi_target,
    })
}

/// Hematocrit of the cell-carrying core component.
#[derive(Debug, Clone)]
pub struct CoreHematocrit {
    /// Value used by the transport solve (from the inlet station).
    pub h: f64,
    /// Re-derived value at every axial face; constant up to tracing error.
    pub profile: Vec<f64>,
}

/// h = H (R^2 v_avg)/(R_cell^2 v_avg_cell), evaluated from flow fluxes
/// (equivalently H * Q_total / Q_core at each axial station).
pub fn core_hematocrit(
    cfg: &ScenarioConfig,
    flow: &FlowField,
    mesh: &AxiMesh,
    boundary: &CoreBoundary,
) -> CoreHematocrit {
    let mut profile = Vec::with_capacity(mesh.nz + 1);
    for k in 0..=mesh.nz {
        let q_total = 2.0 * std::f64::consts::PI
            * flow.psi_at(mesh, k, mesh.r.faces[mesh.ir_lumen]);
        let q_core = 2.0 * std::f64::consts::PI * flow.psi_at(mesh, k, boundary.r_cell[k]);
        profile.push(cfg.hematocrit * q_total / q_core);
    }
    CoreHematocrit {
        h: profile[0],
        profile,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    #[test]
    fn graded_fills_interval_exactly() {
        let f = graded(0.0, 1.0, 0.01, 0.1, 0.2, 1.2);
        assert_eq!(f[0], 0.0);
        assert_eq!(*f.last().unwrap(), 1.0);
        for w in f.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn default_ten_ring_mesh_is_in_the_node_budget() {
        let cfg = ScenarioConfig::preset("low_demand").unwrap();
        let m = build_mesh(&cfg).unwrap();
        let nodes = (m.nr + 1) * (m.nz + 1);
        assert!(
            (10_000..=30_000).contains(&nodes),
            "nodes = {nodes} (nr = {}, nz = {})",
            m.nr,
            m.nz
        );
        // robot band spans 10 um axially at r in [3, 4] um
        let band: Vec<_> = m.rings.iter().collect();
        assert_eq!(band.len(), 10);
        let z0 = m.z.faces[band[0].kz0];
        let z1 = m.z.faces[band[9].kz1];
        assert!((z1 - z0 - 10e-6).abs() < 1e-12);
        assert!((m.robot_inner_radius - 3e-6).abs() < 1e-12);
        // plasma-facing spacing constraint
        for ring in &m.rings {
            for kz in ring.kz0..ring.kz1 {
                assert!(m.z.widths[kz] <= 0.1e-6 + 1e-12);
            }
        }
        let band0 = m.ir_band0.unwrap();
        for ir in band0..m.ir_lumen {
            assert!(m.r.widths[ir] <= 0.1e-6 + 1e-12);
        }
    }

    #[test]
    fn one_ring_mesh_meets_the_fine_face_constraint() {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        cfg.robot.ring_count = 1;
        let m = build_mesh(&cfg).unwrap();
        let ring = m.rings[0];
        // spacing along the plasma-facing cylinder
        for kz in ring.kz0..ring.kz1 {
            assert!(m.z.widths[kz] <= 0.01e-6 + 1e-12);
        }
        // the interior reaction layer stays resolved
        let band0 = m.ir_band0.unwrap();
        assert!(m.r.widths[band0] <= 0.025e-6 + 1e-12);
        for ir in band0..m.ir_lumen {
            assert!(m.r.widths[ir] <= 0.1e-6 + 1e-12, "dr = {}", m.r.widths[ir]);
        }
    }

    #[test]
    fn robot_free_mesh_has_no_robot_cells() {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        cfg.robot.ring_count = 0;
        let m = build_mesh(&cfg).unwrap();
        assert!(m.rings.is_empty());
        assert!(m.region.iter().all(|r| *r != Region::RobotInterior));
        assert_eq!(m.robot_inner_radius, cfg.vessel_radius);
    }

    #[test]
    fn lumen_volume_matches_cylinder_minus_robots() {
        let cfg = ScenarioConfig::preset("low_demand").unwrap();
        let m = build_mesh(&cfg).unwrap();
        let mut v_fluid = 0.0;
        let mut v_robot = 0.0;
        for kz in 0..m.nz {
            for ir in 0..m.nr {
                match m.region_at(ir, kz) {
                    Region::CoreFluid | Region::PlasmaSleeve => v_fluid += m.volume(ir, kz),
                    Region::RobotInterior => v_robot += m.volume(ir, kz),
                    Region::Tissue => {}
                }
            }
        }
        let pi = std::f64::consts::PI;
        let v_cyl = pi * cfg.vessel_radius.powi(2) * cfg.vessel_length;
        let v_ring = pi
            * (cfg.vessel_radius.powi(2) - (cfg.vessel_radius - cfg.robot.size).powi(2))
            * cfg.robot.size
            * cfg.robot.ring_count as f64;
        assert!((v_fluid - (v_cyl - v_ring)).abs() < 0.005 * v_cyl);
        assert!((v_robot - v_ring).abs() < 0.005 * v_ring);
    }

    #[test]
    fn mesh_is_deterministic() {
        let cfg = ScenarioConfig::preset("high_demand").unwrap();
        let a = build_mesh(&cfg).unwrap();
        let b = build_mesh(&cfg).unwrap();
        assert_eq!(a.r.faces, b.r.faces);
        assert_eq!(a.z.faces, b.z.faces);
        assert_eq!(a.region, b.region);
    }

    #[test]
    fn cell_budget_is_enforced() {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        cfg.solver.cell_budget = 100;
        assert!(matches!(
            build_mesh(&cfg),
            Err(MeshError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn shell_thickness_matches_the_site_conservation_geometry() {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        cfg.robot.shell_fraction = 0.02;
        let t = shell_thickness(&cfg);
        // 1/50th of the robot volume nearest the plasma face is about 23 nm
        assert!((t - 23.3e-9).abs() < 0.5e-9, "t = {t:e}");
        let m = build_mesh(&cfg).unwrap();
        let i0 = m.ir_band0.unwrap();
        let i1 = m.ir_shell_end.unwrap();
        assert!(i1 > i0);
        // shell cells sit inside [ri, ri + t]
        assert!(m.r.faces[i1] <= 3e-6 + t + 1e-12);
    }
}
