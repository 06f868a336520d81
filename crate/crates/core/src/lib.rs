//! Transport through driven-dissipative Bose–Hubbard chains whose lattice
//! depth is modulated to restore tunneling across energy offsets.
//!
//! Units throughout: ħ = 1, energies in recoil energies E_r, rates in E_r/ħ
//! and times in ħ/E_r.

pub mod config;
pub mod effective;
pub mod error;
pub mod experiments;
pub mod fock;
pub mod lattice;
pub mod lindblad;
pub mod modulation;
pub mod ode;
pub mod quadrature;
pub mod units;

pub use error::{Error, Result};

/// Formats a float with 12 significant digits, as used in every CSV output.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    format!("{x:.11e}")
}
