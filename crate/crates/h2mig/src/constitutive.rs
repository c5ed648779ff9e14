//! Closed-form constitutive laws: van Genuchten-Mualem saturation functions,
//! phase mobilities, Henry solubility and the linear gas law, all with
//! analytic derivatives.

use thiserror::Error;

/// Universal gas constant, J/(mol K).
pub const GAS_CONSTANT: f64 = 8.314;

/// Guard against the capillary-pressure singularity at the dry end:
/// effective saturation is clamped to at least S_EPS before evaluating the
/// van Genuchten expressions.
pub const S_EPS: f64 = 1e-6;

/// Wet-end regularization band. On [S_REG_WET, 1] the saturation functions
/// are replaced by straight lines through their exact endpoint values
/// (p_c(1) = 0, k_rl(1) = 1, k_rg(1) = 0). The exact van Genuchten slopes of
/// p_c and k_rl are unbounded at full saturation, so no finite Jacobian entry
/// can represent them there and an undamped Newton step through the
/// saturation threshold systematically overshoots, flipping the cell's
/// complementarity branch back and forth. Inside the band the curves are
/// exactly linear, the local model is exact, and the iteration settles.
pub const S_REG_WET: f64 = 0.99;

/// Default slack accepted around the physical saturation range.
pub const DOMAIN_TOL: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum ConstitutiveError {
    #[error("{what} = {value} outside admissible range [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid parameter {what} = {value}: {why}")]
    Parameter {
        what: &'static str,
        value: f64,
        why: &'static str,
    },
}

/// A scalar function value together with its derivative w.r.t. liquid saturation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValDer {
    pub val: f64,
    pub der: f64,
}

/// Porous-medium parameters. `vg_m` is precomputed from `vg_n` at construction
/// and never recomputed, so derivative formulas stay bit-stable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MediumParams {
    pub permeability: f64,
    pub porosity: f64,
    pub vg_pressure: f64,
    pub vg_n: f64,
    pub vg_m: f64,
    pub s_lr: f64,
    pub s_gr: f64,
}

impl MediumParams {
    pub fn new(
        permeability: f64,
        porosity: f64,
        vg_pressure: f64,
        vg_n: f64,
        s_lr: f64,
        s_gr: f64,
    ) -> Result<Self, ConstitutiveError> {
        let check = |what: &'static str, value: f64, ok: bool, why: &'static str| {
            if ok && value.is_finite() {
                Ok(())
            } else {
                Err(ConstitutiveError::Parameter { what, value, why })
            }
        };
        check(
            "permeability",
            permeability,
            permeability > 0.0,
            "must be > 0",
        )?;
        check(
            "porosity",
            porosity,
            porosity > 0.0 && porosity < 1.0,
            "must lie in (0, 1)",
        )?;
        check("vg_pressure", vg_pressure, vg_pressure > 0.0, "must be > 0")?;
        check("vg_n", vg_n, vg_n > 1.0, "must be > 1")?;
        check("s_lr", s_lr, s_lr >= 0.0, "must be >= 0")?;
        check("s_gr", s_gr, s_gr >= 0.0, "must be >= 0")?;
        check(
            "s_lr + s_gr",
            s_lr + s_gr,
            s_lr + s_gr < 1.0,
            "residual saturations must sum below 1",
        )?;
        Ok(Self {
            permeability,
            porosity,
            vg_pressure,
            vg_n,
            vg_m: 1.0 - 1.0 / vg_n,
            s_lr,
            s_gr,
        })
    }

    /// Span of the mobile saturation range, 1 - S_lr - S_gr.
    pub fn mobile_span(&self) -> f64 {
        1.0 - self.s_lr - self.s_gr
    }
}

/// Fluid parameters. Derived fields (`henry_mass`, `gas_compressibility`,
/// `liquid_molar_density`, `chi_mass_factor`) are computed at construction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FluidParams {
    pub viscosity_liquid: f64,
    pub viscosity_gas: f64,
    pub liquid_density: f64,
    pub henry_molar: f64,
    pub henry_mass: f64,
    pub molar_mass_water: f64,
    pub molar_mass_hydrogen: f64,
    pub diffusion_coeff: f64,
    pub temperature: f64,
    pub gas_compressibility: f64,
    pub reference_gas_density: f64,
    /// Molar density of the liquid, rho_l / M_w (mol/m^3, constant).
    pub liquid_molar_density: f64,
    /// Dissolved hydrogen mass per unit molar fraction: M_h * c_l (kg/m^3).
    pub chi_mass_factor: f64,
}

impl FluidParams {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        viscosity_liquid: f64,
        viscosity_gas: f64,
        liquid_density: f64,
        henry_molar: f64,
        molar_mass_water: f64,
        molar_mass_hydrogen: f64,
        diffusion_coeff: f64,
        temperature: f64,
        reference_gas_density: f64,
    ) -> Result<Self, ConstitutiveError> {
        let fields = [
            ("viscosity_liquid", viscosity_liquid),
            ("viscosity_gas", viscosity_gas),
            ("liquid_density", liquid_density),
            ("henry_molar", henry_molar),
            ("molar_mass_water", molar_mass_water),
            ("molar_mass_hydrogen", molar_mass_hydrogen),
            ("diffusion_coeff", diffusion_coeff),
            ("temperature", temperature),
            ("reference_gas_density", reference_gas_density),
        ];
        for (what, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConstitutiveError::Parameter {
                    what,
                    value,
                    why: "must be > 0",
                });
            }
        }
        let gas_compressibility = molar_mass_hydrogen / (GAS_CONSTANT * temperature);
        // Cross-check against the tabulated gas density at atmospheric pressure.
        let rho_at_1e5 = gas_compressibility * 1e5;
        let rel = (rho_at_1e5 - reference_gas_density).abs() / reference_gas_density;
        if rel > 0.02 {
            return Err(ConstitutiveError::Parameter {
                what: "gas_compressibility * 1e5 Pa",
                value: rho_at_1e5,
                why: "disagrees with the reference gas density by more than 2%",
            });
        }
        let liquid_molar_density = liquid_density / molar_mass_water;
        Ok(Self {
            viscosity_liquid,
            viscosity_gas,
            liquid_density,
            henry_molar,
            henry_mass: henry_molar * molar_mass_hydrogen,
            molar_mass_water,
            molar_mass_hydrogen,
            diffusion_coeff,
            temperature,
            gas_compressibility,
            reference_gas_density,
            liquid_molar_density,
            chi_mass_factor: molar_mass_hydrogen * liquid_molar_density,
        })
    }
}

/// Effective saturation S_le = (s_l - S_lr)/(1 - S_lr - S_gr) with its
/// (constant) derivative. Rejects saturations outside [S_lr - tol, 1 + tol].
pub fn effective_saturation(s_l: f64, medium: &MediumParams) -> Result<ValDer, ConstitutiveError> {
    effective_saturation_with_tol(s_l, medium, DOMAIN_TOL)
}

pub fn effective_saturation_with_tol(
    s_l: f64,
    medium: &MediumParams,
    tol: f64,
) -> Result<ValDer, ConstitutiveError> {
    if !s_l.is_finite() || s_l < medium.s_lr - tol || s_l > 1.0 + tol {
        return Err(ConstitutiveError::Domain {
            what: "s_l",
            value: s_l,
            lo: medium.s_lr,
            hi: 1.0,
        });
    }
    let span = medium.mobile_span();
    Ok(ValDer {
        val: ((s_l - medium.s_lr) / span).clamp(0.0, 1.0),
        der: 1.0 / span,
    })
}

/// Effective saturation without the domain check; out-of-range inputs clamp
/// to [0, 1]. Used by assembly paths that must stay evaluable at transient
/// Newton iterates slightly outside the physical range.
pub fn effective_saturation_clamped(s_l: f64, medium: &MediumParams) -> ValDer {
    let span = medium.mobile_span();
    ValDer {
        val: ((s_l - medium.s_lr) / span).clamp(0.0, 1.0),
        der: 1.0 / span,
    }
}

fn vg_pc_raw(s: f64, medium: &MediumParams) -> f64 {
    medium.vg_pressure * (s.powf(-1.0 / medium.vg_m) - 1.0).powf(1.0 / medium.vg_n)
}

fn vg_krl_raw(s: f64, medium: &MediumParams) -> f64 {
    let w = 1.0 - (1.0 - s.powf(1.0 / medium.vg_m)).powf(medium.vg_m);
    s.sqrt() * w * w
}

fn vg_krg_raw(s: f64, medium: &MediumParams) -> f64 {
    (1.0 - s).sqrt() * (1.0 - s.powf(1.0 / medium.vg_m)).powf(2.0 * medium.vg_m)
}

/// Van Genuchten capillary pressure p_c = P_r (S_le^{-1/m} - 1)^{1/n} and
/// dp_c/ds_l. Values clamp S_le to at least S_EPS; above S_REG_WET the curve
/// continues as the straight line through (S_REG_WET, p_c(S_REG_WET)) and
/// (1, 0), so p_c(1) = 0 exactly and the slope stays finite.
pub fn capillary_pressure(s_l: f64, medium: &MediumParams) -> ValDer {
    let s_le = effective_saturation_clamped(s_l, medium);
    if s_le.val >= S_REG_WET {
        let anchor = vg_pc_raw(S_REG_WET, medium);
        return ValDer {
            val: anchor * (1.0 - s_le.val) / (1.0 - S_REG_WET),
            der: -anchor / (1.0 - S_REG_WET) * s_le.der,
        };
    }
    let m = medium.vg_m;
    let n = medium.vg_n;
    let pr = medium.vg_pressure;

    let sv = s_le.val.max(S_EPS);
    let val = vg_pc_raw(sv, medium);
    let t = sv.powf(-1.0 / m) - 1.0;
    let dpc_dsle = -(pr / (n * m)) * t.powf(1.0 / n - 1.0) * sv.powf(-1.0 / m - 1.0);

    ValDer {
        val,
        der: dpc_dsle * s_le.der,
    }
}

/// Mualem liquid relative permeability k_rl = sqrt(S_le)(1-(1-S_le^{1/m})^m)^2
/// and dk_rl/ds_l, linearized above S_REG_WET toward k_rl(1) = 1 (exact)
/// the same way as `capillary_pressure`.
pub fn rel_perm_liquid(s_l: f64, medium: &MediumParams) -> ValDer {
    let s_le = effective_saturation_clamped(s_l, medium);
    if s_le.val >= S_REG_WET {
        let anchor = vg_krl_raw(S_REG_WET, medium);
        return ValDer {
            val: 1.0 - (1.0 - anchor) * (1.0 - s_le.val) / (1.0 - S_REG_WET),
            der: (1.0 - anchor) / (1.0 - S_REG_WET) * s_le.der,
        };
    }
    let m = medium.vg_m;

    let val = vg_krl_raw(s_le.val, medium);

    let sd = s_le.val.max(S_EPS);
    let ud = sd.powf(1.0 / m);
    let wd = 1.0 - (1.0 - ud).powf(m);
    let dw = (1.0 - ud).powf(m - 1.0) * sd.powf(1.0 / m - 1.0);
    let dkrl_dsle = 0.5 / sd.sqrt() * wd * wd + 2.0 * sd.sqrt() * wd * dw;

    ValDer {
        val,
        der: dkrl_dsle * s_le.der,
    }
}

/// Mualem gas relative permeability k_rg = sqrt(1-S_le)(1-S_le^{1/m})^{2m}
/// and dk_rg/ds_l, linearized above S_REG_WET toward k_rg(1) = 0 (exact).
pub fn rel_perm_gas(s_l: f64, medium: &MediumParams) -> ValDer {
    let s_le = effective_saturation_clamped(s_l, medium);
    if s_le.val >= S_REG_WET {
        let anchor = vg_krg_raw(S_REG_WET, medium);
        return ValDer {
            val: anchor * (1.0 - s_le.val) / (1.0 - S_REG_WET),
            der: -anchor / (1.0 - S_REG_WET) * s_le.der,
        };
    }
    let m = medium.vg_m;

    let val = vg_krg_raw(s_le.val, medium);

    let sd = s_le.val.max(S_EPS);
    let ud = sd.powf(1.0 / m);
    let dkrg_dsle = -0.5 / (1.0 - sd).sqrt() * (1.0 - ud).powf(2.0 * m)
        - 2.0 * (1.0 - sd).sqrt() * (1.0 - ud).powf(2.0 * m - 1.0) * sd.powf(1.0 / m - 1.0);

    ValDer {
        val,
        der: dkrg_dsle * s_le.der,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Liquid,
    Gas,
}

/// Phase mobility k_r/mu with derivative w.r.t. s_l.
pub fn mobility(phase: Phase, s_l: f64, medium: &MediumParams, fluid: &FluidParams) -> ValDer {
    let (kr, mu) = match phase {
        Phase::Liquid => (rel_perm_liquid(s_l, medium), fluid.viscosity_liquid),
        Phase::Gas => (rel_perm_gas(s_l, medium), fluid.viscosity_gas),
    };
    ValDer {
        val: kr.val / mu,
        der: kr.der / mu,
    }
}

/// Slightly-compressible gas: rho_g = C_g p_g (derivative C_g).
pub fn gas_density(p_g: f64, fluid: &FluidParams) -> Result<f64, ConstitutiveError> {
    if !(p_g.is_finite() && p_g > 0.0) {
        return Err(ConstitutiveError::Domain {
            what: "p_g",
            value: p_g,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    Ok(fluid.gas_compressibility * p_g)
}

/// Dissolved hydrogen mass density rho_h_l = (M_h c_l) chi. The factor
/// M_h c_l keeps storage, advection and Henry's law mutually consistent with
/// the molar-fraction diffusion flux.
pub fn dissolved_hydrogen_density(
    chi_h_l: f64,
    fluid: &FluidParams,
) -> Result<f64, ConstitutiveError> {
    if !(chi_h_l.is_finite() && (0.0..=1.0).contains(&chi_h_l)) {
        return Err(ConstitutiveError::Domain {
            what: "chi_h_l",
            value: chi_h_l,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(fluid.chi_mass_factor * chi_h_l)
}

/// Molar fraction at Henry equilibrium with gas pressure p_g:
/// chi = H p_g / (M_h c_l).
pub fn henry_equilibrium_chi(p_g: f64, fluid: &FluidParams) -> f64 {
    fluid.henry_mass * p_g / fluid.chi_mass_factor
}
