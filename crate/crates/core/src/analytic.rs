//! Closed-form reference models, independent of the PDE machinery: isolated
//! sphere absorber, pump benefit with the capacity cap, reactive-shell
//! placement, Krogh tissue cylinder and Poiseuille hydraulics. These back the
//! validation suite and the quick `verify` command.

use crate::scenario::ScenarioConfig;
use std::f64::consts::PI;

/// Poiseuille solution for the robot-free straight tube.
#[derive(Debug, Clone, Copy)]
pub struct Poiseuille {
    pub v_avg: f64,
    pub flow_rate: f64,
    radius: f64,
    gradient: f64,
    viscosity: f64,
}

pub fn poiseuille(cfg: &ScenarioConfig) -> Poiseuille {
    let r = cfg.vessel_radius;
    let v_avg = cfg.pressure_gradient * r * r / (8.0 * cfg.fluid.viscosity);
    Poiseuille {
        v_avg,
        flow_rate: v_avg * PI * r * r,
        radius: r,
        gradient: cfg.pressure_gradient,
        viscosity: cfg.fluid.viscosity,
    }
}

impl Poiseuille {
    pub fn velocity(&self, r: f64) -> f64 {
        self.gradient * (self.radius * self.radius - r * r) / (4.0 * self.viscosity)
    }
    /// Fraction of the volumetric flow inside radius `s`.
    pub fn flow_fraction(&self, s: f64) -> f64 {
        let (r2, s2) = (self.radius * self.radius, s * s);
        s2 * (2.0 * r2 - s2) / (r2 * r2)
    }
}

/// Radius of the sphere with the same volume as one robot.
pub fn sphere_radius(volume: f64) -> f64 {
    (3.0 * volume / (4.0 * PI)).cbrt()
}

/// Power of a fully absorbing sphere of radius `a` in still fluid with
/// ambient concentration `c`: collection rate 4 pi D a C, six O2 per
/// reaction.
pub fn sphere_absorption_power(a: f64, c: f64, cfg: &ScenarioConfig) -> f64 {
    4.0 * PI * cfg.oxygen.diffusion * a * c * cfg.tissue.reaction_energy / 6.0
}

/// Fraction of the fully-absorbing power that free diffusion delivers for a
/// sphere with linearized consumption (diffusion length mu).
pub fn f_mu(a: f64, mu: f64) -> f64 {
    1.0 - (mu / a) * (a / mu).tanh()
}

/// Isolated spherical robot with linearized reaction kinetics.
#[derive(Debug, Clone, Copy)]
pub struct SphereModel {
    pub radius: f64,
    pub gamma: f64,
    pub mu: f64,
}

impl SphereModel {
    pub fn new(cfg: &ScenarioConfig) -> SphereModel {
        let d = cfg.derived();
        SphereModel {
            radius: sphere_radius(cfg.robot.volume),
            gamma: d.gamma,
            mu: d.mu,
        }
    }

    /// Benefit of pumps G = 1/f_mu, and the value after the reaction-site
    /// capacity bound N r e is applied at ambient concentration `c`.
    pub fn pump_benefit(&self, c: f64, cfg: &ScenarioConfig) -> PumpBenefit {
        let p_full = sphere_absorption_power(self.radius, c, cfg);
        let f = f_mu(self.radius, self.mu);
        let p_free = f * p_full;
        let p_cap = cfg.derived().max_robot_power;
        PumpBenefit {
            f_mu: f,
            uncapped: 1.0 / f,
            capped: p_full.min(p_cap) / p_free,
            power_full: p_full,
            power_free: p_free,
            power_cap: p_cap,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PumpBenefit {
    pub f_mu: f64,
    pub uncapped: f64,
    pub capped: f64,
    pub power_full: f64,
    pub power_free: f64,
    pub power_cap: f64,
}

/// Steady reaction-diffusion solve for a sphere with radially varying
/// linear consumption gamma(r), concentration `c_inf` far away and free
/// diffusion through the surface. Returns the total absorption rate,
/// molecule/s. The exterior Laplace solution is folded into a Robin
/// condition at the surface, so only the interior needs a grid.
pub fn sphere_uptake(
    a: f64,
    d: f64,
    c_inf: f64,
    gamma: impl Fn(f64) -> f64,
    fine_from: f64,
) -> f64 {
    // radial faces, with a breakpoint and refinement at the start of the
    // reactive zone [fine_from, a]
    let coarse = a / 200.0;
    let mut faces = vec![0.0];
    if fine_from > coarse && fine_from < a * (1.0 - 1e-9) {
        let n_coarse = (fine_from / coarse).round().max(1.0) as usize;
        for i in 1..=n_coarse {
            faces.push(fine_from * i as f64 / n_coarse as f64);
        }
        let n_fine = ((a - fine_from) / coarse).ceil().max(40.0) as usize;
        for i in 1..=n_fine {
            faces.push(fine_from + (a - fine_from) * i as f64 / n_fine as f64);
        }
    } else {
        for i in 1..=240 {
            faces.push(a * i as f64 / 240.0);
        }
    }
    let n = faces.len() - 1;
    let centers: Vec<f64> = faces.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();

    let mut lo = vec![0.0; n];
    let mut up = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for i in 0..n {
        let vol = 4.0 / 3.0 * PI * (faces[i + 1].powi(3) - faces[i].powi(3));
        let mut dd = gamma(centers[i]) * vol;
        if i + 1 < n {
            let g = d * 4.0 * PI * faces[i + 1].powi(2) / (centers[i + 1] - centers[i]);
            up[i] = -g;
            dd += g;
        } else {
            // series conductance: half cell to the surface, then the exterior
            let g_int = d * 4.0 * PI * a * a / (a - centers[i]);
            let g_ext = 4.0 * PI * d * a;
            let g = 1.0 / (1.0 / g_int + 1.0 / g_ext);
            dd += g;
            rhs[i] += g * c_inf;
        }
        if i > 0 {
            let g = d * 4.0 * PI * faces[i].powi(2) / (centers[i] - centers[i - 1]);
            lo[i] = -g;
            dd += g;
        }
        diag[i] = dd;
    }
    crate::numeric::solve_tridiag(&lo, &diag, &up, &mut rhs);
    let mut uptake = 0.0;
    for i in 0..n {
        let vol = 4.0 / 3.0 * PI * (faces[i + 1].powi(3) - faces[i].powi(3));
        uptake += gamma(centers[i]) * rhs[i] * vol;
    }
    uptake
}

/// Power ratio of a sphere with its reaction sites confined to an outer
/// shell of thickness `t` (site count conserved) versus uniform placement.
pub fn shell_benefit(a: f64, mu: f64, t: f64) -> f64 {
    assert!(t > 0.0 && t <= a);
    let d = 1.0;
    let gamma = d / (mu * mu);
    let c_inf = 1.0;
    let inner = a - t;
    // same grid for both solves so discretization error cancels in the ratio
    let uniform = sphere_uptake(a, d, c_inf, |_| gamma, inner);
    let scale = a.powi(3) / (a.powi(3) - inner.powi(3));
    let shell = sphere_uptake(
        a,
        d,
        c_inf,
        |r| if r >= inner { gamma * scale } else { 0.0 },
        inner,
    );
    shell / uniform
}

/// Krogh cylinder: constant consumption density q in R <= r <= R_tissue, no
/// axial diffusion, zero flux at the outer radius, matched to the wall
/// concentration. Clipped at zero where the formula goes negative.
#[derive(Debug, Clone, Copy)]
pub struct KroghProfile {
    pub c_wall: f64,
    /// Consumption rate density, molecule/m^3/s.
    pub q: f64,
    pub r_wall: f64,
    pub r_outer: f64,
    pub diffusion: f64,
}

pub fn krogh_profile(cfg: &ScenarioConfig, c_wall: f64) -> KroghProfile {
    KroghProfile {
        c_wall,
        q: 6.0 * cfg.tissue.power_demand / cfg.tissue.reaction_energy,
        r_wall: cfg.vessel_radius,
        r_outer: cfg.tissue_radius,
        diffusion: cfg.oxygen.diffusion,
    }
}

impl KroghProfile {
    fn raw(&self, r: f64) -> f64 {
        let (d, q) = (self.diffusion, self.q);
        self.c_wall + q / (4.0 * d) * (r * r - self.r_wall * self.r_wall)
            - q * self.r_outer * self.r_outer / (2.0 * d) * (r / self.r_wall).ln()
    }

    pub fn concentration(&self, r: f64) -> f64 {
        self.raw(r).max(0.0)
    }

    /// Distance from the vessel wall at which the profile reaches zero.
    pub fn zero_crossing(&self) -> Option<f64> {
        if self.raw(self.r_outer) > 0.0 {
            return None;
        }
        let (mut lo, mut hi) = (self.r_wall, self.r_outer);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.raw(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi) - self.r_wall)
    }

    /// Diffusive influx through the vessel wall implied by the profile.
    pub fn wall_influx_per_length(&self) -> f64 {
        // -D C'(R) * 2 pi R
        let dc = self.q / (2.0 * self.diffusion)
            * (self.r_wall - self.r_outer * self.r_outer / self.r_wall);
        -self.diffusion * dc * 2.0 * PI * self.r_wall
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::ScenarioConfig;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::preset("low_demand").unwrap()
    }

    #[test]
    fn poiseuille_reference_speeds() {
        let c = cfg();
        let p = poiseuille(&c);
        assert!((p.v_avg - 2e-4).abs() < 1e-12);
        assert_eq!(p.velocity(c.vessel_radius), 0.0);
        let mut fast = c.clone();
        fast.pressure_gradient = 5e5;
        assert!((poiseuille(&fast).v_avg - 1e-3).abs() < 1e-12);
    }

    #[test]
    fn sphere_power_hits_the_reference_values() {
        let c = cfg();
        let a = sphere_radius(c.robot.volume);
        assert!((a - 6.4037547636904669e-7).abs() < 1e-15);
        let p3 = sphere_absorption_power(a, 3e22, &c);
        let p7 = sphere_absorption_power(a, 7e22, &c);
        assert!((p3 / 320e-12 - 1.0).abs() < 0.02, "{p3:e}");
        assert!((p7 / 750e-12 - 1.0).abs() < 0.02, "{p7:e}");
        assert_eq!(sphere_absorption_power(a, 0.0, &c), 0.0);
    }

    #[test]
    fn pump_benefit_with_and_without_the_capacity_cap() {
        let mut c = cfg();
        let hi = SphereModel::new(&c);
        assert!((hi.mu - 0.33333333333333333e-6).abs() < 1e-18);
        let g_hi = hi.pump_benefit(3e22, &c);
        assert!((g_hi.uncapped - 1.9946980507219286).abs() < 1e-9);
        c.robot.site_density = 6e19;
        let lo = SphereModel::new(&c);
        assert!((lo.gamma - 360.0).abs() < 1e-9);
        let g_lo = lo.pump_benefit(3e22, &c);
        assert!((g_lo.uncapped - 41.841981442141038).abs() < 1e-6);
        assert!((g_lo.capped - 34.317182324056519).abs() < 1e-6);
        // f_mu monotone in a/mu
        assert!(f_mu(1.0, 0.1) > f_mu(1.0, 0.2));
        assert!(f_mu(1e4, 1.0) > 0.999);
    }

    #[test]
    fn radial_solver_reproduces_f_mu() {
        // uptake of the uniformly reactive sphere against the closed form
        for (a, mu) in [(6.4e-7, 3.33e-7), (6.4e-7, 2.36e-6), (1e-6, 3e-7)] {
            let d = 2e-9;
            let gamma = d / (mu * mu);
            let got = sphere_uptake(a, d, 1e22, |_| gamma, a);
            let want = 4.0 * PI * d * a * 1e22 * f_mu(a, mu);
            assert!(
                (got / want - 1.0).abs() < 5e-3,
                "a={a:e} mu={mu:e}: {got:e} vs {want:e}"
            );
        }
    }

    #[test]
    fn shell_benefit_limits_and_reference_points() {
        let a = sphere_radius(1.1e-18);
        // uniform limit
        assert!((shell_benefit(a, 0.33e-6, a) - 1.0).abs() < 1e-6);
        // thin shell at the optimum ratio a/mu = 3.5: about +12%
        let r_opt = shell_benefit(a, a / 3.5, a / 400.0);
        assert!((r_opt - 1.1237711135222603).abs() < 0.01, "{r_opt}");
        // high capacity ~ +10%, low capacity < +1%
        let r_hi = shell_benefit(a, 0.33333333333333333e-6, a / 400.0);
        let r_lo = shell_benefit(a, 2.3570226039551584e-6, a / 400.0);
        assert!((r_hi - 1.1003117800151839).abs() < 0.01, "{r_hi}");
        assert!(r_lo < 1.01 && r_lo > 1.0, "{r_lo}");
        // both extremes of a/mu lose the benefit
        assert!(shell_benefit(a, a / 0.05, a / 400.0) < 1.02);
        assert!(shell_benefit(a, a / 40.0, a / 400.0) < 1.05);
    }

    #[test]
    fn krogh_profile_shape_and_balance() {
        let mut c = cfg();
        let k0 = krogh_profile(&c, 5e22);
        // q = 0 limit: constant profile
        let mut nc = c.clone();
        nc.tissue.power_demand = 1e-30;
        let flat = krogh_profile(&nc, 5e22);
        assert!((flat.concentration(2e-5) - 5e22).abs() < 1.0);
        // low demand keeps oxygen everywhere
        assert!(k0.zero_crossing().is_none());
        // high demand runs out ~10 um from the wall
        c.tissue.power_demand = 6e4;
        let k1 = krogh_profile(&c, 4.3e22);
        let x = k1.zero_crossing().unwrap();
        assert!((8e-6..12e-6).contains(&x), "crossing at {x:e}");
        // flux balance: wall influx equals the consumption integral
        let mut consumed = 0.0;
        let n = 40_000;
        for i in 0..n {
            let r = k0.r_wall + (k0.r_outer - k0.r_wall) * (i as f64 + 0.5) / n as f64;
            consumed += k0.q * 2.0 * PI * r * (k0.r_outer - k0.r_wall) / n as f64;
        }
        let influx = k0.wall_influx_per_length();
        assert!((influx / consumed - 1.0).abs() < 1e-6);
    }
}
