/// Piecewise-linear map from a scalar in `[vmin, vmax]` to RGB, clamped
/// outside the range.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorMap {
    pub vmin: f64,
    pub vmax: f64,
    /// `(position in [0, 1], rgb)` sorted by position.
    stops: Vec<(f64, [u8; 3])>,
}

impl Default for ColorMap {
    fn default() -> Self {
        Self::blue_white_red(0.0, 3.0)
    }
}

impl ColorMap {
    pub fn blue_white_red(vmin: f64, vmax: f64) -> Self {
        Self {
            vmin,
            vmax,
            stops: vec![(0.0, [0, 0, 255]), (0.5, [255, 255, 255]), (1.0, [255, 0, 0])],
        }
    }

    /// A map through arbitrary stops; positions must start at 0, end at 1 and
    /// increase.
    pub fn with_stops(vmin: f64, vmax: f64, stops: Vec<(f64, [u8; 3])>) -> Option<Self> {
        let ok = stops.len() >= 2
            && stops.first()?.0 == 0.0
            && stops.last()?.0 == 1.0
            && stops.windows(2).all(|w| w[0].0 < w[1].0);
        ok.then_some(Self { vmin, vmax, stops })
    }

    pub fn set_range(&mut self, vmin: f64, vmax: f64) {
        self.vmin = vmin;
        self.vmax = vmax;
    }

    /// Interpolation parameter for `v`; a degenerate range maps everything to
    /// the midpoint.
    pub fn param(&self, v: f64) -> f64 {
        if self.vmax == self.vmin {
            return 0.5;
        }
        let t = (v - self.vmin) / (self.vmax - self.vmin);
        if t.is_nan() {
            0.5
        } else {
            t.clamp(0.0, 1.0)
        }
    }

    pub fn color(&self, v: f64) -> [u8; 3] {
        let t = self.param(v);
        let i = self
            .stops
            .windows(2)
            .position(|w| t <= w[1].0)
            .unwrap_or(self.stops.len() - 2);
        let (t0, c0) = self.stops[i];
        let (t1, c1) = self.stops[i + 1];
        let f = (t - t0) / (t1 - t0);
        let mut out = [0u8; 3];
        for k in 0..3 {
            let a = c0[k] as f64;
            let b = c1[k] as f64;
            out[k] = (a + (b - a) * f).round().clamp(0.0, 255.0) as u8;
        }
        out
    }
}

/// Colour for a velocity magnitude.
pub fn velocity_color(v_mag: f64, cmap: &ColorMap) -> [u8; 3] {
    cmap.color(v_mag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_and_middle() {
        let m = ColorMap::blue_white_red(1.0, 3.0);
        assert_eq!(velocity_color(1.0, &m), [0, 0, 255]);
        assert_eq!(velocity_color(3.0, &m), [255, 0, 0]);
        assert_eq!(velocity_color(2.0, &m), [255, 255, 255]);
        assert_eq!(velocity_color(-5.0, &m), [0, 0, 255]);
        assert_eq!(velocity_color(50.0, &m), [255, 0, 0]);
        assert_eq!(velocity_color(1.5, &m), [128, 128, 255]);
    }

    #[test]
    fn degenerate_range_is_midpoint() {
        let m = ColorMap::blue_white_red(2.0, 2.0);
        assert_eq!(m.color(0.0), [255, 255, 255]);
        assert_eq!(m.color(9.0), [255, 255, 255]);
    }
}
