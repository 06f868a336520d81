//! Physical constants and the recoil-unit conversion.
//!
//! Everything downstream works with ħ = 1 and E_r = 1: energies in recoil
//! energies, rates in E_r/ħ, times in ħ/E_r.

/// Reduced Planck constant, J·s.
pub const HBAR: f64 = 1.054_571_817e-34;

/// Atomic mass constant, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Mass of ⁸⁷Rb, kg.
pub const RB87_MASS: f64 = 86.909_180_527 * ATOMIC_MASS_UNIT;

/// E_r = ħ²π²/(2 m a_l²), in joules.
pub fn recoil_energy(mass_kg: f64, lattice_spacing_m: f64) -> f64 {
    let k = std::f64::consts::PI / lattice_spacing_m;
    HBAR * HBAR * k * k / (2.0 * mass_kg)
}

/// Converts a time in ħ/E_r to seconds.
pub fn time_to_seconds(t: f64, mass_kg: f64, lattice_spacing_m: f64) -> f64 {
    t * HBAR / recoil_energy(mass_kg, lattice_spacing_m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rb87_recoil_at_640nm() {
        // E_r/h for Rb-87 at 640 nm spacing (1280 nm light) is about 1.4 kHz.
        let er = recoil_energy(RB87_MASS, 640e-9);
        let hz = er / (2.0 * std::f64::consts::PI * HBAR);
        assert!((hz - 1400.0).abs() < 10.0, "{hz}");
    }
}
