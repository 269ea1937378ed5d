use nalgebra::Vector3;

/// Upper bound on grid cells; the cell size grows to stay below it.
const MAX_CELLS: usize = 1 << 22;

/// Uniform grid over sphere bounding boxes, stored as a flattened
/// cell → sphere-index table.
#[derive(Debug, Clone)]
pub(crate) struct Grid {
    lo: Vector3<f64>,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<u32>,
    items: Vec<u32>,
    /// Slack for points that sit on a cell boundary up to rounding.
    pub eps: f64,
}

impl Grid {
    pub fn build(centers: &[Vector3<f64>], radius: f64, cell_hint: f64) -> Grid {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for c in centers {
            lo = lo.inf(c);
            hi = hi.sup(c);
        }
        if centers.is_empty() {
            lo = Vector3::zeros();
            hi = Vector3::zeros();
        }
        let extent = (hi - lo).amax() + 2.0 * radius;
        let eps = 1e-9 * (1.0 + extent + lo.amax().abs());
        lo -= Vector3::repeat(radius + eps);
        hi += Vector3::repeat(radius + eps);
        let mut cell = radius.max(cell_hint);
        let dims = loop {
            let d = [0, 1, 2].map(|a| (((hi[a] - lo[a]) / cell).ceil() as usize).max(1));
            if d[0] * d[1] * d[2] <= MAX_CELLS {
                break d;
            }
            cell *= 2.0;
        };

        let n_cells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0u32; n_cells + 1];
        let range = |c: &Vector3<f64>, a: usize| {
            let f = |v: f64| (((v - lo[a]) / cell).floor().max(0.0) as usize).min(dims[a] - 1);
            (f(c[a] - radius - eps), f(c[a] + radius + eps))
        };
        let for_cells = |c: &Vector3<f64>, f: &mut dyn FnMut(usize)| {
            let (x0, x1) = range(c, 0);
            let (y0, y1) = range(c, 1);
            let (z0, z1) = range(c, 2);
            for z in z0..=z1 {
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        f((z * dims[1] + y) * dims[0] + x);
                    }
                }
            }
        };
        for c in centers {
            for_cells(c, &mut |i| counts[i + 1] += 1);
        }
        for i in 0..n_cells {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; counts[n_cells] as usize];
        for (idx, c) in centers.iter().enumerate() {
            for_cells(c, &mut |i| {
                items[fill[i] as usize] = idx as u32;
                fill[i] += 1;
            });
        }
        Grid {
            lo,
            cell,
            dims,
            starts: counts,
            items,
            eps,
        }
    }

    fn cell_items(&self, x: usize, y: usize, z: usize) -> &[u32] {
        let i = (z * self.dims[1] + y) * self.dims[0] + x;
        &self.items[self.starts[i] as usize..self.starts[i + 1] as usize]
    }

    /// Walks the cells pierced by the ray in order, calling `visit` with each
    /// cell's spheres and the ray parameter where the ray leaves that cell.
    /// Stops when `visit` returns false.
    pub fn traverse(
        &self,
        origin: &Vector3<f64>,
        dir: &Vector3<f64>,
        t_min: f64,
        t_max: f64,
        mut visit: impl FnMut(&[u32], f64) -> bool,
    ) {
        let mut t0 = t_min;
        let mut t1 = t_max;
        for a in 0..3 {
            let lo = self.lo[a];
            let hi = lo + self.dims[a] as f64 * self.cell;
            if dir[a] == 0.0 {
                if origin[a] < lo || origin[a] > hi {
                    return;
                }
            } else {
                let inv = 1.0 / dir[a];
                let (mut ta, mut tb) = ((lo - origin[a]) * inv, (hi - origin[a]) * inv);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
            }
        }
        if t0 > t1 {
            return;
        }
        let p = origin + dir * t0;
        let mut cell = [0usize; 3];
        let mut step = [0isize; 3];
        let mut t_next = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let c = ((p[a] - self.lo[a]) / self.cell).floor();
            cell[a] = (c.max(0.0) as usize).min(self.dims[a] - 1);
            if dir[a] > 0.0 {
                step[a] = 1;
                let edge = self.lo[a] + (cell[a] + 1) as f64 * self.cell;
                t_next[a] = (edge - origin[a]) / dir[a];
                t_delta[a] = self.cell / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                let edge = self.lo[a] + cell[a] as f64 * self.cell;
                t_next[a] = (edge - origin[a]) / dir[a];
                t_delta[a] = -self.cell / dir[a];
            }
        }
        loop {
            let axis = if t_next[0] <= t_next[1] && t_next[0] <= t_next[2] {
                0
            } else if t_next[1] <= t_next[2] {
                1
            } else {
                2
            };
            let t_exit = t_next[axis].min(t1);
            if !visit(self.cell_items(cell[0], cell[1], cell[2]), t_exit) || t_exit >= t1 {
                return;
            }
            let next = cell[axis] as isize + step[axis];
            if next < 0 || next as usize >= self.dims[axis] {
                return;
            }
            cell[axis] = next as usize;
            t_next[axis] += t_delta[axis];
        }
    }
}
