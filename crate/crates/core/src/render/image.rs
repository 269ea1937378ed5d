use std::io::{self, BufRead, Read, Write};

use super::RenderError;

/// Colour plus depth per pixel. Colours are premultiplied RGBA; depth is
/// the distance along the pixel ray, `+∞` where nothing was hit.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub rgba: Vec<[u8; 4]>,
    pub depth: Vec<f32>,
}

pub const BACKGROUND: [u8; 4] = [0, 0, 0, 0];

impl DepthImage {
    pub fn background(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            rgba: vec![BACKGROUND; width * height],
            depth: vec![f32::INFINITY; width * height],
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn is_background(&self, i: usize) -> bool {
        self.depth[i] == f32::INFINITY
    }

    /// Binary PPM of the colour channels composited over black.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.reserve(self.pixel_count() * 3);
        for p in &self.rgba {
            out.extend_from_slice(&p[..3]);
        }
        out
    }

    pub fn write_ppm(&self, mut w: impl Write) -> io::Result<()> {
        w.write_all(&self.to_ppm())
    }
}

/// An RGB image decoded from binary PPM.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn from_ppm(bytes: &[u8]) -> Result<RgbImage, RenderError> {
        let mut cur = io::Cursor::new(bytes);
        let mut tokens = Vec::new();
        while tokens.len() < 4 {
            let mut line = String::new();
            if cur.read_line(&mut line).map_err(|e| RenderError::Format(e.to_string()))? == 0 {
                return Err(RenderError::Format("truncated PPM header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_string));
        }
        if tokens[0] != "P6" || tokens[3] != "255" {
            return Err(RenderError::Format("expected an 8-bit P6 image".into()));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| RenderError::Format(format!("bad size {s:?}")));
        let (width, height) = (parse(&tokens[1])?, parse(&tokens[2])?);
        let mut data = Vec::new();
        cur.read_to_end(&mut data).map_err(|e| RenderError::Format(e.to_string()))?;
        if data.len() != width * height * 3 {
            return Err(RenderError::Format(format!(
                "PPM body is {} bytes, expected {}",
                data.len(),
                width * height * 3
            )));
        }
        Ok(RgbImage {
            width,
            height,
            rgb: data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip() {
        let mut img = DepthImage::background(3, 2);
        img.rgba[4] = [10, 20, 30, 255];
        let ppm = img.to_ppm();
        assert!(ppm.starts_with(b"P6\n3 2\n255\n"));
        let back = RgbImage::from_ppm(&ppm).unwrap();
        assert_eq!(back.rgb[4], [10, 20, 30]);
        assert_eq!(back.rgb[0], [0, 0, 0]);
    }
}
