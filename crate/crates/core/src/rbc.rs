//! Hemoglobin saturation physics: the Hill equilibrium curve, the lumped
//! unloading kinetics of red cells, and the 1-D axial transport of the cell
//! saturation S(z) through the core fluid component.

use crate::mesh::{AxiMesh, CoreBoundary};
use crate::numeric::{power_law_coeff, solve_tridiag};
use crate::scenario::ScenarioConfig;
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SaturationError {
    #[error("1-D saturation solve stalled at relative change {0:.3e}")]
    NonConvergence(f64),
}

/// Saturation state bounds: the unloading function has a (1-S)^(-1/n)
/// singularity, so S is clamped away from both ends before evaluation.
pub const S_CLAMP: f64 = 1e-9;

/// Red-cell oxygen kinetics evaluated from scenario parameters.
#[derive(Debug, Clone, Copy)]
pub struct Kinetics {
    pub hill_n: f64,
    pub p_half: f64,
    pub henry: f64,
    pub t_unload: f64,
}

impl Kinetics {
    pub fn new(cfg: &ScenarioConfig) -> Kinetics {
        Kinetics {
            hill_n: cfg.rbc.hill_exponent,
            p_half: cfg.rbc.p_half,
            henry: cfg.oxygen.henry_ratio,
            t_unload: cfg.rbc.unloading_time,
        }
    }

    /// Equilibrium saturation a^n / (1 + a^n).
    pub fn hill_equilibrium(&self, a: f64) -> f64 {
        if a <= 0.0 {
            return 0.0;
        }
        let an = a.powf(self.hill_n);
        an / (1.0 + an)
    }

    /// Partial pressure ratio a = H_O2 C / P_half for a plasma concentration.
    pub fn pressure_ratio(&self, c: f64) -> f64 {
        self.henry * c.max(0.0) / self.p_half
    }

    /// Saturation unloading function s(a, S); S is clamped to
    /// [S_CLAMP, 1 - S_CLAMP] to avoid the singular endpoint.
    pub fn unloading_function(&self, a: f64, s: f64) -> f64 {
        let n = self.hill_n;
        let s = s.clamp(S_CLAMP, 1.0 - S_CLAMP);
        let t1 = 2.0 * (1.0 - s) / (n + 1.0) * a.powf(n + 1.0);
        let t2 = -2.0 * s * a;
        let t3 = 2.0 * n / (n + 1.0) * s.powf(1.0 + 1.0 / n) / (1.0 - s).powf(1.0 / n);
        t1 + t2 + t3
    }

    /// Rate of change of cell saturation at partial pressure ratio `a`.
    ///
    /// Below equilibrium concentration the cell unloads (rate < 0); if the
    /// plasma is above the cell's equilibrium the sign flips so saturation
    /// increases, which keeps the evaluation stable near equilibrium.
    pub fn unloading_rate(&self, a: f64, s: f64) -> f64 {
        let s_eq = self.hill_equilibrium(a);
        let mag = self.unloading_function(a, s).max(0.0).sqrt() / self.t_unload;
        if s > s_eq {
            -mag
        } else if s < s_eq {
            mag
        } else {
            0.0
        }
    }
}

/// 1-D axial grid for the saturation solve: each axial mesh cell is split
/// into enough sub-cells to reach the configured node count, so sources map
/// exactly between the 1-D and 2-D grids.
#[derive(Debug, Clone)]
pub struct SaturationGrid {
    pub z: Vec<f64>,
    pub dz: Vec<f64>,
    /// Parent axial cell in the 2-D mesh.
    pub slice: Vec<usize>,
    /// Core cross-section area pi R_cell^2 per node.
    pub area: Vec<f64>,
    /// Mean core speed q_core / area per node.
    pub v_cell: Vec<f64>,
    /// Volumetric flow of the core component, m^3/s.
    pub q_core: f64,
}

impl SaturationGrid {
    pub fn new(mesh: &AxiMesh, boundary: &CoreBoundary, points: usize) -> SaturationGrid {
        let h_target = mesh.z.faces.last().unwrap() / points as f64;
        let mut z = Vec::new();
        let mut dz = Vec::new();
        let mut slice = Vec::new();
        let mut area = Vec::new();
        let mut v_cell = Vec::new();
        let q = boundary.core_flow;
        for kz in 0..mesh.nz {
            let w = mesh.z.widths[kz];
            let m = (w / h_target).ceil().max(1.0) as usize;
            for j in 0..m {
                let zj = mesh.z.faces[kz] + w * (j as f64 + 0.5) / m as f64;
                let rc = boundary.at(zj);
                let a = PI * rc * rc;
                z.push(zj);
                dz.push(w / m as f64);
                slice.push(kz);
                area.push(a);
                v_cell.push(q / a);
            }
        }
        SaturationGrid {
            z,
            dz,
            slice,
            area,
            v_cell,
            q_core: q,
        }
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }
    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Saturation S(z) and its local rate of change on a [`SaturationGrid`].
#[derive(Debug, Clone)]
pub struct SaturationState {
    pub s: Vec<f64>,
    pub dsdt: Vec<f64>,
    pub s_inlet: f64,
}

impl SaturationState {
    /// Length-weighted mean of dS/dt over the sub-nodes of each axial cell.
    pub fn rate_per_slice(&self, grid: &SaturationGrid, nz: usize) -> Vec<f64> {
        let mut num = vec![0.0; nz];
        let mut den = vec![0.0; nz];
        for i in 0..grid.len() {
            num[grid.slice[i]] += self.dsdt[i] * grid.dz[i];
            den[grid.slice[i]] += grid.dz[i];
        }
        num.iter().zip(&den).map(|(n, d)| n / d).collect()
    }
}

/// Solve the steady 1-D advection-diffusion-reaction equation for S(z):
/// q dS/dz - d/dz (D_heme A dS/dz) = A <dS/dt>, inlet Dirichlet at the
/// equilibrium with the inlet concentration, zero diffusive flux at the
/// outlet. `rate` evaluates the cross-section-averaged unloading rate
/// <dS/dt> at a 1-D node for a trial saturation.
pub fn advance_saturation(
    grid: &SaturationGrid,
    kin: &Kinetics,
    cfg: &ScenarioConfig,
    rate: impl Fn(usize, f64) -> f64,
    s_init: Option<&[f64]>,
) -> Result<SaturationState, SaturationError> {
    let n = grid.len();
    let q = grid.q_core;
    let d_heme = cfg.rbc.heme_diffusion;
    let s_inlet = kin.hill_equilibrium(kin.pressure_ratio(cfg.oxygen.inlet_concentration));

    let mut s: Vec<f64> = match s_init {
        Some(v) => v.to_vec(),
        None => vec![s_inlet; n],
    };

    let mut lo = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    let mut last_change = f64::INFINITY;

    for _ in 0..80 {
        for i in 0..n {
            let vol = grid.area[i] * grid.dz[i];
            // damped Newton linearization of the kinetic source
            let f0 = rate(i, s[i]);
            let h = 1e-7;
            let fp = rate(i, (s[i] + h).min(1.0));
            let lambda = ((fp - f0) / h).min(0.0);

            let mut d = -lambda * vol;
            let mut b = (f0 - lambda * s[i]) * vol;

            // east face
            if i + 1 < n {
                let a_face = 0.5 * (grid.area[i] + grid.area[i + 1]);
                let cond = d_heme * a_face / (grid.z[i + 1] - grid.z[i]);
                let a_e = power_law_coeff(cond, q);
                up[i] = -a_e;
                d += a_e + q;
            } else {
                // outlet: advective outflow only
                d += q;
                up[i] = 0.0;
            }
            // west face
            if i > 0 {
                let a_face = 0.5 * (grid.area[i] + grid.area[i - 1]);
                let cond = d_heme * a_face / (grid.z[i] - grid.z[i - 1]);
                let a_w = power_law_coeff(cond, -q);
                lo[i] = -a_w;
                d += a_w - q;
            } else {
                // inlet Dirichlet on the boundary face
                let cond = d_heme * grid.area[0] / (grid.z[0] - 0.0);
                let a_w = power_law_coeff(cond, -q);
                d += a_w - q;
                b += a_w * s_inlet;
                lo[i] = 0.0;
            }
            diag[i] = d;
            rhs[i] = b;
        }
        solve_tridiag(&lo, &diag, &up, &mut rhs);
        let mut change = 0.0_f64;
        for i in 0..n {
            let new = rhs[i].clamp(0.0, 1.0);
            change = change.max((new - s[i]).abs());
            s[i] = new;
        }
        last_change = change;
        if change < 1e-12 {
            break;
        }
    }
    if last_change > 1e-8 {
        return Err(SaturationError::NonConvergence(last_change));
    }

    let dsdt: Vec<f64> = (0..n).map(|i| rate(i, s[i])).collect();
    Ok(SaturationState { s, dsdt, s_inlet })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn kin() -> Kinetics {
        Kinetics::new(&ScenarioConfig::preset("low_demand").unwrap())
    }

    #[test]
    fn hill_identities() {
        let k = kin();
        assert_eq!(k.hill_equilibrium(0.0), 0.0);
        assert!((k.hill_equilibrium(1.0) - 0.5).abs() < 1e-15);
        // frozen high-precision evaluation of the Hill curve at a = 2
        assert!((k.hill_equilibrium(2.0) - 0.86663144262317856).abs() < 1e-14);
        // monotone, saturating
        assert!(k.hill_equilibrium(10.0) > k.hill_equilibrium(2.0));
        assert!(k.hill_equilibrium(1e6) > 0.9999);
    }

    #[test]
    fn pressure_ratio_matches_henrys_law() {
        let k = kin();
        // 1e22 molecule/m^3 is 1600 Pa
        assert!((k.pressure_ratio(1e22) * k.p_half - 1600.0).abs() < 1e-9);
        assert_eq!(k.pressure_ratio(0.0), 0.0);
        let c_half = k.p_half / k.henry;
        assert!((c_half - 2.1875e22).abs() < 1e9);
        assert!((k.pressure_ratio(c_half) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unloading_function_vanishes_at_equilibrium() {
        let k = kin();
        for a in [0.5, 1.0, 2.0] {
            let s = k.unloading_function(a, k.hill_equilibrium(a));
            assert!(s.abs() < 1e-10, "s({a}) = {s:e}");
        }
        // pseudo-random sweep of the same identity
        let mut state = 0x9e3779b97f4a7c15u64;
        for _ in 0..100 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            let a = 3.0 * (state >> 11) as f64 / (1u64 << 53) as f64;
            let s = k.unloading_function(a, k.hill_equilibrium(a));
            assert!(s.abs() < 1e-9, "s({a}) = {s:e}");
        }
    }

    #[test]
    fn unloading_function_sign_and_divergence() {
        let k = kin();
        // below equilibrium saturation the function is positive
        for i in 1..30 {
            let a = 0.1 * i as f64;
            for j in 1..20 {
                let s_eq = k.hill_equilibrium(a);
                let s = s_eq * j as f64 / 20.0 * 0.99;
                assert!(k.unloading_function(a, s) > 0.0, "a={a} s={s}");
            }
        }
        // diverges toward S -> 1 (clamped evaluation stays finite but large)
        let huge = k.unloading_function(1.0, 1.0 - 1e-12);
        assert!(huge > 1e2);
    }

    #[test]
    fn rate_sign_follows_equilibrium_contract() {
        let k = kin();
        assert_eq!(k.unloading_rate(1.0, 0.5), 0.0);
        // frozen oracle value: s(0, 0.97) = 5.1297190193884042
        let r = k.unloading_rate(0.0, 0.97);
        assert!((r + 5.1297190193884042f64.sqrt() / k.t_unload).abs() < 1e-9);
        // loading branch
        assert!(k.unloading_rate(1.0, 0.3) > 0.0);
        // pointwise sign contract on a grid
        for i in 0..40 {
            let a = 0.075 * (i + 1) as f64;
            for j in 1..40 {
                let s = j as f64 / 40.0;
                let want = (k.hill_equilibrium(a) - s).signum();
                let got = k.unloading_rate(a, s);
                if (k.hill_equilibrium(a) - s).abs() > 1e-12 {
                    assert_eq!(got.signum(), want, "a={a} s={s}");
                }
            }
        }
    }

    #[test]
    fn integrating_the_rate_decays_to_zero_in_deoxygenated_plasma() {
        // RK4 on dS/dt = -(1/t_u) sqrt(s(0, S)) from S = 0.97
        let k = kin();
        let mut s = 0.97;
        let dt = 1e-4;
        let mut t = 0.0;
        while t < 1.0 {
            let f = |x: f64| k.unloading_rate(0.0, x.clamp(0.0, 1.0));
            let k1 = f(s);
            let k2 = f(s + 0.5 * dt * k1);
            let k3 = f(s + 0.5 * dt * k2);
            let k4 = f(s + dt * k3);
            let s_new = s + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            assert!(s_new <= s + 1e-12, "S must decay monotonically");
            s = s_new.max(0.0);
            t += dt;
        }
        assert!(s < 0.05, "S after 1 s = {s}");
    }
}
