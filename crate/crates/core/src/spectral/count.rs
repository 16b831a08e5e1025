//! Exact parameter accounting for full and factorized spectral weights.

use num_rational::Ratio;

use crate::error::{Error, Result};

fn check_dims(op: &'static str, dims: [u64; 4]) -> Result<()> {
    let names = ["C_in", "C_out", "modes1", "modes2"];
    for (name, d) in names.iter().zip(dims) {
        if d == 0 {
            return Err(Error::invalid(op, format!("{name} must be positive")));
        }
    }
    Ok(())
}

/// Real parameter count of a full complex weight `[C_out, C_in, M1, M2]`.
pub fn count_params_full(c_in: u64, c_out: u64, m1: u64, m2: u64) -> Result<u64> {
    check_dims("count_params_full", [c_in, c_out, m1, m2])?;
    Ok(2 * c_out * c_in * m1 * m2)
}

/// Real parameter count of the channel-mixing `[C_out, C_in]` plus spectral `[C_in, M1, M2]` factors.
pub fn count_params_scf(c_in: u64, c_out: u64, m1: u64, m2: u64) -> Result<u64> {
    check_dims("count_params_scf", [c_in, c_out, m1, m2])?;
    Ok(2 * (c_out * c_in + c_in * m1 * m2))
}

/// Factorized over full parameter count, reduced exactly.
pub fn saving_ratio(c_in: u64, c_out: u64, m1: u64, m2: u64) -> Result<Ratio<u64>> {
    Ok(Ratio::new(
        count_params_scf(c_in, c_out, m1, m2)?,
        count_params_full(c_in, c_out, m1, m2)?,
    ))
}
