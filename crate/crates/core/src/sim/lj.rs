use super::SimError;

/// Truncated-and-shifted Lennard-Jones pair law in reduced units.
///
/// Returns `(force_magnitude, potential)` where the force is `-dU/dr` of the
/// unshifted potential (positive = repulsive) and the potential is shifted
/// to vanish at the cutoff. Both are zero at and beyond the cutoff.
pub fn lj_force_energy(r: f64, cutoff: f64) -> Result<(f64, f64), SimError> {
    if !(r > 0.0) {
        return Err(SimError::Domain(format!("pair distance must be positive, got {r}")));
    }
    let table = LjTable::new(cutoff);
    let (f_over_r, u) = table.pair(r * r);
    Ok((f_over_r * r, u))
}

/// Precomputed cutoff constants for the inner force loop.
#[derive(Debug, Clone, Copy)]
pub struct LjTable {
    pub cutoff_sq: f64,
    pub shift: f64,
}

impl LjTable {
    pub fn new(cutoff: f64) -> Self {
        let ic6 = cutoff.powi(-6);
        Self {
            cutoff_sq: cutoff * cutoff,
            shift: 4.0 * (ic6 * ic6 - ic6),
        }
    }

    /// `(F(r)/r, U(r))` from the squared distance.
    #[inline]
    pub fn pair(&self, r2: f64) -> (f64, f64) {
        if r2 >= self.cutoff_sq {
            return (0.0, 0.0);
        }
        let ir2 = 1.0 / r2;
        let ir6 = ir2 * ir2 * ir2;
        let ir12 = ir6 * ir6;
        (24.0 * ir2 * (2.0 * ir12 - ir6), 4.0 * (ir12 - ir6) - self.shift)
    }
}
