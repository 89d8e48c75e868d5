//! Minimal RGB8 raster shared by the data loaders and the renderer.

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB triples.
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        Raster {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    /// RGB in [0, 1] at the nearest pixel to continuous coords (u, v),
    /// clamped to the border.
    pub fn sample_nearest(&self, u: f64, v: f64) -> [f64; 3] {
        let x = (u.round().max(0.0) as usize).min(self.width - 1);
        let y = (v.round().max(0.0) as usize).min(self.height - 1);
        let px = self.get(x, y);
        [
            px[0] as f64 / 255.0,
            px[1] as f64 / 255.0,
            px[2] as f64 / 255.0,
        ]
    }

    /// Bilinear RGB in [0, 1] (offered behind a flag at the call sites).
    pub fn sample_bilinear(&self, u: f64, v: f64) -> [f64; 3] {
        let uc = u.clamp(0.0, (self.width - 1) as f64);
        let vc = v.clamp(0.0, (self.height - 1) as f64);
        let x0 = uc.floor() as usize;
        let y0 = vc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = uc - x0 as f64;
        let fy = vc - y0 as f64;
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            let p00 = self.get(x0, y0)[c] as f64;
            let p01 = self.get(x1, y0)[c] as f64;
            let p10 = self.get(x0, y1)[c] as f64;
            let p11 = self.get(x1, y1)[c] as f64;
            *o = ((1.0 - fy) * ((1.0 - fx) * p00 + fx * p01)
                + fy * ((1.0 - fx) * p10 + fx * p11))
                / 255.0;
        }
        out
    }

    /// Crop-and-resize into a `size` x `size` float image (values in [0,1],
    /// layout [H, W, 3]) using bilinear sampling of the source region.
    pub fn crop_resize(&self, xmin: f64, ymin: f64, xmax: f64, ymax: f64, size: usize) -> Vec<f64> {
        let mut out = vec![0.0; size * size * 3];
        let sw = xmax - xmin;
        let sh = ymax - ymin;
        for oy in 0..size {
            let v = ymin + (oy as f64 + 0.5) * sh / size as f64 - 0.5;
            for ox in 0..size {
                let u = xmin + (ox as f64 + 0.5) * sw / size as f64 - 0.5;
                let px = self.sample_bilinear(u, v);
                let i = (oy * size + ox) * 3;
                out[i..i + 3].copy_from_slice(&px);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_sampling_rounds_and_clamps() {
        let mut r = Raster::new(2, 2);
        r.set(1, 1, [255, 0, 0]);
        assert_eq!(r.sample_nearest(0.9, 1.2), [1.0, 0.0, 0.0]);
        assert_eq!(r.sample_nearest(-5.0, -5.0), [0.0, 0.0, 0.0]);
        assert_eq!(r.sample_nearest(99.0, 99.0), [1.0, 0.0, 0.0]);
    }

    #[test]
    fn crop_resize_of_constant_is_constant() {
        let mut r = Raster::new(8, 8);
        for y in 0..8 {
            for x in 0..8 {
                r.set(x, y, [100, 150, 200]);
            }
        }
        let crop = r.crop_resize(1.0, 1.0, 7.0, 7.0, 4);
        for px in crop.chunks(3) {
            assert!((px[0] - 100.0 / 255.0).abs() < 1e-12);
            assert!((px[1] - 150.0 / 255.0).abs() < 1e-12);
            assert!((px[2] - 200.0 / 255.0).abs() < 1e-12);
        }
    }
}
