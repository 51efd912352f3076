//! Run configuration: every physical and numerical parameter of a scenario.
//!
//! All quantities are SI; concentrations are molecule/m^3. A scenario file is
//! UTF-8 `key = value` lines with `#` comments; unknown keys are rejected.
//! The named presets `low_demand` and `high_demand` select the two standard
//! operating points (slow flow / basal tissue demand and fast flow / high
//! tissue demand).

use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`")]
    Parse { key: String, value: String },
    #[error("unknown preset `{0}` (expected low_demand or high_demand)")]
    UnknownPreset(String),
    #[error("key `{key}` = {value}: {reason}")]
    Invalid {
        key: &'static str,
        value: f64,
        reason: String,
    },
}

/// How robots with pumps run their surface pumps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PumpMode {
    /// Absorb every molecule reaching the surface (zero surface concentration).
    FullAbsorb,
    /// All pumps run at the same prescribed area flux.
    UniformFlux,
    /// Alternate rings switch pumps on and off in counterphase.
    DutyCycle,
}

impl PumpMode {
    fn parse(s: &str) -> Option<PumpMode> {
        match s {
            "full_absorb" => Some(PumpMode::FullAbsorb),
            "uniform_flux" => Some(PumpMode::UniformFlux),
            "duty_cycle" => Some(PumpMode::DutyCycle),
            _ => None,
        }
    }
    fn name(self) -> &'static str {
        match self {
            PumpMode::FullAbsorb => "full_absorb",
            PumpMode::UniformFlux => "uniform_flux",
            PumpMode::DutyCycle => "duty_cycle",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluidParams {
    pub density: f64,
    pub viscosity: f64,
    pub heat_capacity: f64,
    pub thermal_conductivity: f64,
    pub ambient_temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OxygenParams {
    pub diffusion: f64,
    pub inlet_concentration: f64,
    /// Henry's-law ratio partial pressure / concentration, Pa per molecule/m^3.
    pub henry_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RbcParams {
    pub p_half: f64,
    pub hill_exponent: f64,
    pub unloading_time: f64,
    pub max_concentration: f64,
    pub heme_diffusion: f64,
    /// Cell-free gap between the cell core and the wall at the inlet.
    /// Negative means "derive from the pressure gradient".
    pub inlet_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TissueParams {
    pub power_demand: f64,
    pub half_concentration: f64,
    pub reaction_energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotParams {
    pub size: f64,
    pub robots_per_ring: usize,
    pub ring_count: usize,
    pub volume: f64,
    pub site_density: f64,
    pub site_rate: f64,
    pub half_concentration: f64,
    pub pumps: bool,
    pub pump_mode: PumpMode,
    /// Fraction of robot volume holding the reaction sites, measured from the
    /// plasma-facing surface inward; 0 means uniform placement.
    pub shell_fraction: f64,
    /// Oxygen diffusion coefficient inside robot interiors (free-diffusion
    /// design). Defaults to the plasma value.
    pub interior_diffusion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub picard_tolerance: f64,
    pub picard_max_iterations: usize,
    pub picard_relaxation: f64,
    pub flow_tolerance: f64,
    pub flow_max_iterations: usize,
    /// Mesh spacing on plasma-facing robot surfaces; negative selects the
    /// default (0.1 um for multi-ring aggregates, 0.01 um for one ring).
    pub face_spacing: f64,
    pub lumen_spacing: f64,
    pub tissue_spacing: f64,
    pub axial_spacing: f64,
    pub mesh_growth: f64,
    pub cell_budget: usize,
    /// Minimum node count for the 1-D saturation grid.
    pub saturation_points: usize,
}

/// Validated, immutable parameter set for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub vessel_radius: f64,
    pub tissue_radius: f64,
    pub vessel_length: f64,
    pub pressure_gradient: f64,
    pub hematocrit: f64,
    pub fluid: FluidParams,
    pub oxygen: OxygenParams,
    pub rbc: RbcParams,
    pub tissue: TissueParams,
    pub robot: RobotParams,
    pub solver: SolverParams,
}

/// Quantities derived from a config that several modules need.
#[derive(Debug, Clone, Copy)]
pub struct DerivedParams {
    /// Robot-free mean flow speed dP R^2 / (8 eta).
    pub v_avg: f64,
    /// Reaction sites per robot, n_d * V_robot.
    pub sites_per_robot: f64,
    /// Power of one saturated reaction site, e * r.
    pub per_site_power: f64,
    /// Capacity bound on robot power, N * r * e.
    pub max_robot_power: f64,
    /// Linearized oxygen consumption rate 6 n_d r / K_reaction.
    pub gamma: f64,
    /// Diffusion length sqrt(D / gamma).
    pub mu: f64,
}

fn base_config() -> ScenarioConfig {
    ScenarioConfig {
        vessel_radius: 4e-6,
        tissue_radius: 4e-5,
        vessel_length: 1e-4,
        pressure_gradient: 1e5,
        hematocrit: 0.25,
        fluid: FluidParams {
            density: 1e3,
            viscosity: 1e-3,
            heat_capacity: 4200.0,
            thermal_conductivity: 0.6,
            ambient_temperature: 310.0,
        },
        oxygen: OxygenParams {
            diffusion: 2e-9,
            inlet_concentration: 7e22,
            henry_ratio: 1.6e-19,
        },
        rbc: RbcParams {
            p_half: 3500.0,
            hill_exponent: 2.7,
            unloading_time: 0.076,
            max_concentration: 1e25,
            heme_diffusion: 1.4e-11,
            inlet_gap: -1.0,
        },
        tissue: TissueParams {
            power_demand: 4e3,
            half_concentration: 1e21,
            reaction_energy: 4e-18,
        },
        robot: RobotParams {
            size: 1e-6,
            robots_per_ring: 20,
            ring_count: 10,
            volume: 1.1e-18,
            site_density: 3e21,
            site_rate: 1e6,
            half_concentration: 1e24,
            pumps: true,
            pump_mode: PumpMode::FullAbsorb,
            shell_fraction: 0.0,
            interior_diffusion: -1.0,
        },
        solver: SolverParams {
            picard_tolerance: 1e-6,
            picard_max_iterations: 200,
            picard_relaxation: 0.5,
            flow_tolerance: 1e-10,
            flow_max_iterations: 20000,
            face_spacing: -1.0,
            lumen_spacing: 0.3e-6,
            tissue_spacing: 4e-6,
            axial_spacing: 2.5e-6,
            mesh_growth: 1.12,
            cell_budget: 400_000,
            saturation_points: 1000,
        },
    }
}

impl ScenarioConfig {
    /// Named preset: `low_demand` or `high_demand`.
    pub fn preset(name: &str) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg = base_config();
        match name {
            "low_demand" => {
                cfg.pressure_gradient = 1e5;
                cfg.tissue.power_demand = 4e3;
                cfg.oxygen.inlet_concentration = 7e22;
            }
            "high_demand" => {
                cfg.pressure_gradient = 5e5;
                cfg.tissue.power_demand = 6e4;
                cfg.oxygen.inlet_concentration = 7e22;
            }
            other => return Err(ScenarioError::UnknownPreset(other.to_string())),
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Parse a scenario document. A `preset` key may appear first to select a
    /// baseline; every other key overrides one parameter.
    pub fn from_str(text: &str) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg = base_config();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(p) => &raw[..p],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ScenarioError::Syntax {
                line: lineno + 1,
                text: raw.to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            if key == "preset" {
                let tissue_keep = cfg;
                cfg = ScenarioConfig::preset(value)?;
                // presets may only appear before overrides; keep it simple by
                // applying them in file order
                drop(tissue_keep);
                continue;
            }
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<(), ScenarioError> {
        let parse_f = || -> Result<f64, ScenarioError> {
            value.parse::<f64>().map_err(|_| ScenarioError::Parse {
                key: key.to_string(),
                value: value.to_string(),
            })
        };
        let parse_u = || -> Result<usize, ScenarioError> {
            value.parse::<usize>().map_err(|_| ScenarioError::Parse {
                key: key.to_string(),
                value: value.to_string(),
            })
        };
        match key {
            "vessel_radius" => self.vessel_radius = parse_f()?,
            "tissue_radius" => self.tissue_radius = parse_f()?,
            "vessel_length" => self.vessel_length = parse_f()?,
            "pressure_gradient" => self.pressure_gradient = parse_f()?,
            "hematocrit" => self.hematocrit = parse_f()?,
            "fluid_density" => self.fluid.density = parse_f()?,
            "fluid_viscosity" => self.fluid.viscosity = parse_f()?,
            "fluid_heat_capacity" => self.fluid.heat_capacity = parse_f()?,
            "fluid_thermal_conductivity" => self.fluid.thermal_conductivity = parse_f()?,
            "ambient_temperature" => self.fluid.ambient_temperature = parse_f()?,
            "oxygen_diffusion" => self.oxygen.diffusion = parse_f()?,
            "oxygen_inlet_concentration" => self.oxygen.inlet_concentration = parse_f()?,
            "henry_ratio" => self.oxygen.henry_ratio = parse_f()?,
            "rbc_p_half" => self.rbc.p_half = parse_f()?,
            "rbc_hill_exponent" => self.rbc.hill_exponent = parse_f()?,
            "rbc_unloading_time" => self.rbc.unloading_time = parse_f()?,
            "rbc_max_concentration" => self.rbc.max_concentration = parse_f()?,
            "rbc_heme_diffusion" => self.rbc.heme_diffusion = parse_f()?,
            "rbc_inlet_gap" => self.rbc.inlet_gap = parse_f()?,
            "tissue_power_demand" => self.tissue.power_demand = parse_f()?,
            "tissue_half_concentration" => self.tissue.half_concentration = parse_f()?,
            "reaction_energy" => self.tissue.reaction_energy = parse_f()?,
            "robot_size" => self.robot.size = parse_f()?,
            "robots_per_ring" => self.robot.robots_per_ring = parse_u()?,
            "ring_count" => self.robot.ring_count = parse_u()?,
            "robot_volume" => self.robot.volume = parse_f()?,
            "site_density" => self.robot.site_density = parse_f()?,
            "site_rate" => self.robot.site_rate = parse_f()?,
            "reaction_half_concentration" => self.robot.half_concentration = parse_f()?,
            "pumps" => {
                self.robot.pumps = match value {
                    "true" | "1" | "yes" => true,
                    "false" | "0" | "no" => false,
                    _ => {
                        return Err(ScenarioError::Parse {
                            key: key.to_string(),
                            value: value.to_string(),
                        })
                    }
                }
            }
            "pump_mode" => {
                self.robot.pump_mode =
                    PumpMode::parse(value).ok_or_else(|| ScenarioError::Parse {
                        key: key.to_string(),
                        value: value.to_string(),
                    })?
            }
            "shell_fraction" => self.robot.shell_fraction = parse_f()?,
            "robot_interior_diffusion" => self.robot.interior_diffusion = parse_f()?,
            "picard_tolerance" => self.solver.picard_tolerance = parse_f()?,
            "picard_max_iterations" => self.solver.picard_max_iterations = parse_u()?,
            "picard_relaxation" => self.solver.picard_relaxation = parse_f()?,
            "flow_tolerance" => self.solver.flow_tolerance = parse_f()?,
            "flow_max_iterations" => self.solver.flow_max_iterations = parse_u()?,
            "mesh_face_spacing" => self.solver.face_spacing = parse_f()?,
            "mesh_lumen_spacing" => self.solver.lumen_spacing = parse_f()?,
            "mesh_tissue_spacing" => self.solver.tissue_spacing = parse_f()?,
            "mesh_axial_spacing" => self.solver.axial_spacing = parse_f()?,
            "mesh_growth" => self.solver.mesh_growth = parse_f()?,
            "mesh_cell_budget" => self.solver.cell_budget = parse_u()?,
            "saturation_points" => self.solver.saturation_points = parse_u()?,
            other => return Err(ScenarioError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        fn positive(key: &'static str, v: f64) -> Result<(), ScenarioError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(ScenarioError::Invalid {
                    key,
                    value: v,
                    reason: "must be strictly positive".into(),
                })
            }
        }
        positive("vessel_radius", self.vessel_radius)?;
        positive("tissue_radius", self.tissue_radius)?;
        positive("vessel_length", self.vessel_length)?;
        positive("fluid_density", self.fluid.density)?;
        positive("fluid_viscosity", self.fluid.viscosity)?;
        positive("fluid_heat_capacity", self.fluid.heat_capacity)?;
        positive("fluid_thermal_conductivity", self.fluid.thermal_conductivity)?;
        positive("ambient_temperature", self.fluid.ambient_temperature)?;
        positive("oxygen_diffusion", self.oxygen.diffusion)?;
        positive("oxygen_inlet_concentration", self.oxygen.inlet_concentration)?;
        positive("henry_ratio", self.oxygen.henry_ratio)?;
        positive("rbc_p_half", self.rbc.p_half)?;
        positive("rbc_hill_exponent", self.rbc.hill_exponent)?;
        positive("rbc_unloading_time", self.rbc.unloading_time)?;
        positive("rbc_max_concentration", self.rbc.max_concentration)?;
        positive("rbc_heme_diffusion", self.rbc.heme_diffusion)?;
        positive("tissue_power_demand", self.tissue.power_demand)?;
        positive("tissue_half_concentration", self.tissue.half_concentration)?;
        positive("reaction_energy", self.tissue.reaction_energy)?;
        positive("robot_size", self.robot.size)?;
        positive("robot_volume", self.robot.volume)?;
        positive("site_density", self.robot.site_density)?;
        positive("site_rate", self.robot.site_rate)?;
        positive("reaction_half_concentration", self.robot.half_concentration)?;
        if !(self.hematocrit > 0.0 && self.hematocrit < 1.0) {
            return Err(ScenarioError::Invalid {
                key: "hematocrit",
                value: self.hematocrit,
                reason: "hematocrit must be in (0,1)".into(),
            });
        }
        if !(self.pressure_gradient >= 0.0 && self.pressure_gradient.is_finite()) {
            return Err(ScenarioError::Invalid {
                key: "pressure_gradient",
                value: self.pressure_gradient,
                reason: "must be finite and non-negative".into(),
            });
        }
        if self.vessel_radius >= self.tissue_radius {
            return Err(ScenarioError::Invalid {
                key: "tissue_radius",
                value: self.tissue_radius,
                reason: format!(
                    "must exceed the vessel radius {:e}",
                    self.vessel_radius
                ),
            });
        }
        if self.robot.size >= self.vessel_radius {
            return Err(ScenarioError::Invalid {
                key: "robot_size",
                value: self.robot.size,
                reason: format!("must be below the vessel radius {:e}", self.vessel_radius),
            });
        }
        if self.robot.ring_count as f64 * self.robot.size > self.vessel_length {
            return Err(ScenarioError::Invalid {
                key: "ring_count",
                value: self.robot.ring_count as f64,
                reason: "aggregate longer than the modeled vessel".into(),
            });
        }
        if !(0.0..=1.0).contains(&self.robot.shell_fraction) {
            return Err(ScenarioError::Invalid {
                key: "shell_fraction",
                value: self.robot.shell_fraction,
                reason: "must lie in [0,1]".into(),
            });
        }
        if self.robot.robots_per_ring == 0 {
            return Err(ScenarioError::Invalid {
                key: "robots_per_ring",
                value: 0.0,
                reason: "must be at least 1".into(),
            });
        }
        // the robot volume must agree with the annular-segment geometry
        let r = self.vessel_radius;
        let s = self.robot.size;
        let geom = std::f64::consts::PI * (r * r - (r - s) * (r - s)) * s
            / self.robot.robots_per_ring as f64;
        if (self.robot.volume - geom).abs() > 0.01 * geom {
            return Err(ScenarioError::Invalid {
                key: "robot_volume",
                value: self.robot.volume,
                reason: format!("inconsistent with ring geometry (expected {:.4e})", geom),
            });
        }
        if !self.robot.pumps && self.robot.pump_mode != PumpMode::FullAbsorb {
            return Err(ScenarioError::Invalid {
                key: "pump_mode",
                value: 0.0,
                reason: "uniform_flux / duty_cycle require pumps".into(),
            });
        }
        if self.robot.pump_mode == PumpMode::DutyCycle && self.robot.ring_count < 2 {
            return Err(ScenarioError::Invalid {
                key: "pump_mode",
                value: self.robot.ring_count as f64,
                reason: "duty_cycle needs at least two rings".into(),
            });
        }
        if !(0.0 < self.solver.picard_relaxation && self.solver.picard_relaxation <= 1.0) {
            return Err(ScenarioError::Invalid {
                key: "picard_relaxation",
                value: self.solver.picard_relaxation,
                reason: "must lie in (0,1]".into(),
            });
        }
        if self.inlet_gap() >= self.vessel_radius || self.inlet_gap() <= 0.0 {
            return Err(ScenarioError::Invalid {
                key: "rbc_inlet_gap",
                value: self.inlet_gap(),
                reason: "cell-free gap must lie in (0, R)".into(),
            });
        }
        Ok(())
    }

    /// Cell-free gap at the inlet. When not set explicitly it interpolates
    /// linearly in the pressure gradient between the measured gaps 0.98 um at
    /// 1e5 Pa/m and 1.27 um at 5e5 Pa/m, clamped to that range.
    pub fn inlet_gap(&self) -> f64 {
        if self.rbc.inlet_gap > 0.0 {
            return self.rbc.inlet_gap;
        }
        let (g0, g1) = (0.98e-6, 1.27e-6);
        let t = ((self.pressure_gradient - 1e5) / 4e5).clamp(0.0, 1.0);
        g0 + t * (g1 - g0)
    }

    /// Diffusion coefficient inside robot interiors.
    pub fn robot_interior_diffusion(&self) -> f64 {
        if self.robot.interior_diffusion > 0.0 {
            self.robot.interior_diffusion
        } else {
            self.oxygen.diffusion
        }
    }

    /// Mesh spacing target along plasma-facing robot surfaces.
    pub fn face_spacing(&self) -> f64 {
        if self.solver.face_spacing > 0.0 {
            return self.solver.face_spacing;
        }
        if self.robot.ring_count <= 1 {
            0.01e-6
        } else {
            0.1e-6
        }
    }

    pub fn derived(&self) -> DerivedParams {
        let v_avg = self.pressure_gradient * self.vessel_radius * self.vessel_radius
            / (8.0 * self.fluid.viscosity);
        let sites = self.robot.site_density * self.robot.volume;
        let per_site = self.tissue.reaction_energy * self.robot.site_rate;
        let gamma =
            6.0 * self.robot.site_density * self.robot.site_rate / self.robot.half_concentration;
        DerivedParams {
            v_avg,
            sites_per_robot: sites,
            per_site_power: per_site,
            max_robot_power: sites * per_site,
            gamma,
            mu: (self.oxygen.diffusion / gamma).sqrt(),
        }
    }

    /// Serialize every parameter as `key = value` lines. Reloading the output
    /// reproduces the config bit-for-bit (floats use the shortest
    /// round-trippable decimal form).
    pub fn to_document(&self) -> String {
        let mut s = String::new();
        fn kv_impl(s: &mut String, k: &str, v: f64) {
            let _ = writeln!(s, "{k} = {v}");
        }
        macro_rules! kv {
            ($k:expr, $v:expr) => {
                kv_impl(&mut s, $k, $v)
            };
        }
        kv!("vessel_radius", self.vessel_radius);
        kv!("tissue_radius", self.tissue_radius);
        kv!("vessel_length", self.vessel_length);
        kv!("pressure_gradient", self.pressure_gradient);
        kv!("hematocrit", self.hematocrit);
        kv!("fluid_density", self.fluid.density);
        kv!("fluid_viscosity", self.fluid.viscosity);
        kv!("fluid_heat_capacity", self.fluid.heat_capacity);
        kv!("fluid_thermal_conductivity", self.fluid.thermal_conductivity);
        kv!("ambient_temperature", self.fluid.ambient_temperature);
        kv!("oxygen_diffusion", self.oxygen.diffusion);
        kv!("oxygen_inlet_concentration", self.oxygen.inlet_concentration);
        kv!("henry_ratio", self.oxygen.henry_ratio);
        kv!("rbc_p_half", self.rbc.p_half);
        kv!("rbc_hill_exponent", self.rbc.hill_exponent);
        kv!("rbc_unloading_time", self.rbc.unloading_time);
        kv!("rbc_max_concentration", self.rbc.max_concentration);
        kv!("rbc_heme_diffusion", self.rbc.heme_diffusion);
        kv!("rbc_inlet_gap", self.rbc.inlet_gap);
        kv!("tissue_power_demand", self.tissue.power_demand);
        kv!("tissue_half_concentration", self.tissue.half_concentration);
        kv!("reaction_energy", self.tissue.reaction_energy);
        kv!("robot_size", self.robot.size);
        let _ = writeln!(s, "robots_per_ring = {}", self.robot.robots_per_ring);
        let _ = writeln!(s, "ring_count = {}", self.robot.ring_count);
        kv!("robot_volume", self.robot.volume);
        kv!("site_density", self.robot.site_density);
        kv!("site_rate", self.robot.site_rate);
        kv!("reaction_half_concentration", self.robot.half_concentration);
        let _ = writeln!(s, "pumps = {}", self.robot.pumps);
        let _ = writeln!(s, "pump_mode = {}", self.robot.pump_mode.name());
        kv!("shell_fraction", self.robot.shell_fraction);
        kv!("robot_interior_diffusion", self.robot.interior_diffusion);
        kv!("picard_tolerance", self.solver.picard_tolerance);
        let _ = writeln!(s, "picard_max_iterations = {}", self.solver.picard_max_iterations);
        kv!("picard_relaxation", self.solver.picard_relaxation);
        kv!("flow_tolerance", self.solver.flow_tolerance);
        let _ = writeln!(s, "flow_max_iterations = {}", self.solver.flow_max_iterations);
        kv!("mesh_face_spacing", self.solver.face_spacing);
        kv!("mesh_lumen_spacing", self.solver.lumen_spacing);
        kv!("mesh_tissue_spacing", self.solver.tissue_spacing);
        kv!("mesh_axial_spacing", self.solver.axial_spacing);
        kv!("mesh_growth", self.solver.mesh_growth);
        let _ = writeln!(s, "mesh_cell_budget = {}", self.solver.cell_budget);
        let _ = writeln!(s, "saturation_points = {}", self.solver.saturation_points);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_the_two_operating_points() {
        let low = ScenarioConfig::preset("low_demand").unwrap();
        assert_eq!(low.pressure_gradient, 1e5);
        assert_eq!(low.tissue.power_demand, 4e3);
        assert_eq!(low.oxygen.inlet_concentration, 7e22);
        let high = ScenarioConfig::preset("high_demand").unwrap();
        assert_eq!(high.pressure_gradient, 5e5);
        assert_eq!(high.tissue.power_demand, 6e4);
        assert_eq!(high.oxygen.inlet_concentration, 7e22);
        assert!(ScenarioConfig::preset("medium").is_err());
    }

    #[test]
    fn zero_hematocrit_is_rejected_with_key_name() {
        let err = ScenarioConfig::from_str("hematocrit = 0").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("hematocrit"), "{msg}");
        assert!(msg.contains("(0,1)"), "{msg}");
    }

    #[test]
    fn geometric_inconsistencies_are_rejected() {
        assert!(ScenarioConfig::from_str("tissue_radius = 1e-6").is_err());
        assert!(ScenarioConfig::from_str("robot_size = 5e-6").is_err());
        assert!(ScenarioConfig::from_str("robot_volume = 2e-18").is_err());
        assert!(ScenarioConfig::from_str("ring_count = 200").is_err());
    }

    #[test]
    fn unknown_keys_and_bad_values_are_reported() {
        assert!(matches!(
            ScenarioConfig::from_str("viscosity = 1"),
            Err(ScenarioError::UnknownKey(_))
        ));
        assert!(matches!(
            ScenarioConfig::from_str("fluid_viscosity = soup"),
            Err(ScenarioError::Parse { .. })
        ));
        assert!(matches!(
            ScenarioConfig::from_str("fluid_viscosity"),
            Err(ScenarioError::Syntax { .. })
        ));
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let mut cfg = ScenarioConfig::preset("high_demand").unwrap();
        cfg.robot.site_density = 6.123456789012345e19;
        cfg.solver.picard_relaxation = 0.7300000000000001;
        let doc = cfg.to_document();
        let back = ScenarioConfig::from_str(&doc).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn derived_quantities_match_the_reference_values() {
        let cfg = ScenarioConfig::preset("low_demand").unwrap();
        let d = cfg.derived();
        assert!((d.v_avg - 2e-4).abs() < 1e-12); // 0.2 mm/s
        assert!((d.sites_per_robot - 3300.0).abs() < 1e-9);
        assert!((d.per_site_power - 4e-12).abs() < 1e-24);
        assert!((d.max_robot_power - 1.32e-8).abs() < 1e-18);
        // 13000 pW in round numbers
        assert!((d.max_robot_power / 13.0e-9 - 1.0).abs() < 0.02);

        let mut lo = cfg.clone();
        lo.robot.site_density = 6e19;
        let d = lo.derived();
        assert!((d.gamma - 360.0).abs() < 1e-9);
        assert!((d.mu - 2.357022603955158e-6).abs() < 1e-15);
        // 260 pW within 2%
        assert!((d.max_robot_power / 2.6e-10 - 1.0).abs() < 0.02);

        let mut fast = cfg.clone();
        fast.pressure_gradient = 5e5;
        assert!((fast.derived().v_avg - 1e-3).abs() < 1e-12); // 1 mm/s
    }

    #[test]
    fn inlet_gap_interpolates_between_measured_values() {
        let low = ScenarioConfig::preset("low_demand").unwrap();
        let high = ScenarioConfig::preset("high_demand").unwrap();
        assert!((low.inlet_gap() - 0.98e-6).abs() < 1e-12);
        assert!((high.inlet_gap() - 1.27e-6).abs() < 1e-12);
        let mut mid = low.clone();
        mid.pressure_gradient = 3e5;
        assert!((mid.inlet_gap() - 1.125e-6).abs() < 1e-12);
    }

    #[test]
    fn face_spacing_defaults_depend_on_ring_count() {
        let mut cfg = ScenarioConfig::preset("low_demand").unwrap();
        assert_eq!(cfg.face_spacing(), 0.1e-6);
        cfg.robot.ring_count = 1;
        assert_eq!(cfg.face_spacing(), 0.01e-6);
        cfg.solver.face_spacing = 0.05e-6;
        assert_eq!(cfg.face_spacing(), 0.05e-6);
    }
}
