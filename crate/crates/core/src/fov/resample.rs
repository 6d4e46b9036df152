//! Floating-point image planes and bilinear resampling.

/// Row-major single-channel image with pixel centers at integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Plane {
        assert_eq!(data.len(), width * height);
        Plane { width, height, data }
    }

    pub fn from_u16(width: usize, height: usize, raw: &[u16]) -> Plane {
        Plane::new(width, height, raw.iter().map(|&v| v as f64).collect())
    }

    /// Rounds and clamps to the 16-bit range.
    pub fn to_u16(&self) -> Vec<u16> {
        self.data.iter().map(|&v| v.round().clamp(0.0, 65535.0) as u16).collect()
    }

    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with edge replication outside the grid.
    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        let xmax = (self.width - 1) as f64;
        let ymax = (self.height - 1) as f64;
        let x = x.clamp(0.0, xmax);
        let y = y.clamp(0.0, ymax);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let top = self.at(x0, y0) * (1.0 - fx) + self.at(x1, y0) * fx;
        let bottom = self.at(x0, y1) * (1.0 - fx) + self.at(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }

    /// Whether every pixel a bilinear lookup at `(x, y)` touches satisfies `keep`.
    pub fn taps_all(&self, x: f64, y: f64, keep: impl Fn(usize, usize) -> bool) -> bool {
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        keep(x0, y0) && (fx == 0.0 || keep(x1, y0)) && (fy == 0.0 || keep(x0, y1)) && (fx * fy == 0.0 || keep(x1, y1))
    }

    /// Rotates by `angle` radians about `(W/2, H/2)`.
    pub fn rotate(&self, angle: f64) -> Plane {
        self.rotate_where(angle, |_, _| true)
    }

    /// Rotation evaluated only at output pixels where `keep(x, y)` holds; the
    /// others are zero.
    pub fn rotate_where(&self, angle: f64, keep: impl Fn(usize, usize) -> bool) -> Plane {
        let (cx, cy) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let (s, c) = angle.sin_cos();
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                if !keep(x, y) {
                    data.push(0.0);
                    continue;
                }
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                // inverse rotation into the source
                let sx = c * dx + s * dy + cx;
                let sy = -s * dx + c * dy + cy;
                data.push(self.bilinear(sx, sy));
            }
        }
        Plane::new(self.width, self.height, data)
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Plane {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / width as f64;
        let sy = self.height as f64 / height as f64;
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            for x in 0..width {
                data.push(self.bilinear((x as f64 + 0.5) * sx - 0.5, src_y));
            }
        }
        Plane::new(width, height, data)
    }

    /// Crops the `size`×`size` square at `(x, y)`.
    pub fn crop(&self, x: usize, y: usize, size: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(size * size);
        for row in y..y + size {
            out.extend_from_slice(&self.data[row * self.width + x..row * self.width + x + size]);
        }
        out
    }
}
