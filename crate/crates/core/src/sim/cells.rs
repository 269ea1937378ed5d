//! Linked-cell force evaluation over a rank's local particles plus ghosts.
//!
//! x is not wrapped here: periodicity along x arrives as explicitly shifted
//! ghost images. y and z use the minimum-image convention.

use super::{LjTable, Particle};

struct Axis {
    origin: f64,
    width: f64,
    n: usize,
}

impl Axis {
    fn new(origin: f64, span: f64, cutoff: f64) -> Self {
        let n = ((span / cutoff).floor() as usize).max(1);
        Self {
            origin,
            width: span / n as f64,
            n,
        }
    }

    #[inline]
    fn cell(&self, v: f64) -> usize {
        let c = ((v - self.origin) / self.width).floor();
        if c < 0.0 {
            0
        } else {
            (c as usize).min(self.n - 1)
        }
    }
}

/// Distinct neighbour indices of `c` along one axis, optionally periodic.
fn neighbours(c: usize, n: usize, periodic: bool, out: &mut [usize; 3]) -> usize {
    let mut len = 0;
    let mut push = |v: usize, len: &mut usize| {
        if !out[..*len].contains(&v) {
            out[*len] = v;
            *len += 1;
        }
    };
    for d in [-1i64, 0, 1] {
        let v = c as i64 + d;
        if periodic {
            push(v.rem_euclid(n as i64) as usize, &mut len);
        } else if v >= 0 && (v as usize) < n {
            push(v as usize, &mut len);
        }
    }
    len
}

#[inline]
fn min_image(d: f64, box_length: f64) -> f64 {
    let half = 0.5 * box_length;
    if d > half {
        d - box_length
    } else if d < -half {
        d + box_length
    } else {
        d
    }
}

/// Recomputes `force` on every local particle and returns this rank's share
/// of the potential energy: local pairs count once, local–ghost pairs count
/// one half (the owning rank of the ghost counts the other half).
pub fn compute_forces(
    locals: &mut [Particle],
    ghosts: &[Particle],
    x_range: (f64, f64),
    box_length: f64,
    table: &LjTable,
) -> f64 {
    let cutoff = table.cutoff_sq.sqrt();
    let ax = Axis::new(x_range.0 - cutoff, x_range.1 - x_range.0 + 2.0 * cutoff, cutoff);
    let ay = Axis::new(0.0, box_length, cutoff);
    let az = Axis::new(0.0, box_length, cutoff);
    let ncells = ax.n * ay.n * az.n;
    let index = |p: &[f64; 3]| (ax.cell(p[0]) * ay.n + ay.cell(p[1])) * az.n + az.cell(p[2]);

    let n_local = locals.len();
    let positions: Vec<[f64; 3]> = locals
        .iter()
        .chain(ghosts.iter())
        .map(|p| p.pos)
        .collect();

    // counting sort of point indices by cell
    let mut start = vec![0usize; ncells + 1];
    let cell_of: Vec<usize> = positions.iter().map(index).collect();
    for &c in &cell_of {
        start[c + 1] += 1;
    }
    for c in 0..ncells {
        start[c + 1] += start[c];
    }
    let mut fill = start.clone();
    let mut items = vec![0usize; positions.len()];
    for (i, &c) in cell_of.iter().enumerate() {
        items[fill[c]] = i;
        fill[c] += 1;
    }

    let mut potential = 0.0;
    let (mut nx, mut ny, mut nz) = ([0; 3], [0; 3], [0; 3]);
    for i in 0..n_local {
        let pi = positions[i];
        let (cx, cy, cz) = (ax.cell(pi[0]), ay.cell(pi[1]), az.cell(pi[2]));
        let lx = neighbours(cx, ax.n, false, &mut nx);
        let ly = neighbours(cy, ay.n, true, &mut ny);
        let lz = neighbours(cz, az.n, true, &mut nz);
        let mut f = [0.0; 3];
        for &x in &nx[..lx] {
            for &y in &ny[..ly] {
                for &z in &nz[..lz] {
                    let c = (x * ay.n + y) * az.n + z;
                    for &j in &items[start[c]..start[c + 1]] {
                        if j == i {
                            continue;
                        }
                        let pj = positions[j];
                        let d = [
                            pj[0] - pi[0],
                            min_image(pj[1] - pi[1], box_length),
                            min_image(pj[2] - pi[2], box_length),
                        ];
                        let r2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                        if r2 >= table.cutoff_sq {
                            continue;
                        }
                        let (f_over_r, u) = table.pair(r2);
                        f[0] -= f_over_r * d[0];
                        f[1] -= f_over_r * d[1];
                        f[2] -= f_over_r * d[2];
                        potential += 0.5 * u;
                    }
                }
            }
        }
        locals[i].force = f;
    }
    potential
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neighbour_lists_dedupe_small_periodic_axes() {
        let mut out = [0; 3];
        assert_eq!(neighbours(0, 2, true, &mut out), 2);
        assert_eq!(neighbours(0, 1, true, &mut out), 1);
        assert_eq!(neighbours(0, 5, false, &mut out), 2);
        assert_eq!(neighbours(2, 5, true, &mut out), 3);
    }
}
