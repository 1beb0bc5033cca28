use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Similarity camera over the world plane: a view window centered on
/// `center`, rotated by `psi`, sampled at `zoom` pixels per world unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraPose {
    pub center: [f64; 2],
    pub psi: f64,
    pub zoom: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraPose {
    pub fn new(center: [f64; 2], psi: f64, zoom: f64, width: usize, height: usize) -> Result<Self> {
        let cam = CameraPose { center, psi, zoom, width, height };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zoom.is_finite() && self.zoom > 0.0) {
            return Err(Error::InvalidCamera(format!("zoom must be > 0, got {}", self.zoom)));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidCamera(format!(
                "image size {}x{} must be at least 1x1",
                self.width, self.height
            )));
        }
        if !(self.center.iter().all(|v| v.is_finite()) && self.psi.is_finite()) {
            return Err(Error::InvalidCamera("non-finite pose".into()));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// u = zoom · R(−psi) · (x − center) + (width/2, height/2)
    pub fn world_to_pixel(&self, x: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.psi.sin_cos();
        let d = [x[0] - self.center[0], x[1] - self.center[1]];
        [
            self.zoom * (c * d[0] + s * d[1]) + self.width as f64 / 2.0,
            self.zoom * (-s * d[0] + c * d[1]) + self.height as f64 / 2.0,
        ]
    }

    pub fn pixel_to_world(&self, u: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.psi.sin_cos();
        let d = [
            (u[0] - self.width as f64 / 2.0) / self.zoom,
            (u[1] - self.height as f64 / 2.0) / self.zoom,
        ];
        [
            self.center[0] + c * d[0] - s * d[1],
            self.center[1] + s * d[0] + c * d[1],
        ]
    }

    /// Continuous coordinates of the center of integer pixel `(x, y)`.
    pub fn pixel_center(x: usize, y: usize) -> [f64; 2] {
        [x as f64 + 0.5, y as f64 + 0.5]
    }

    pub fn check_pixel(&self, x: usize, y: usize) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(Error::PixelOutOfBounds {
                x,
                y,
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// All pixels in row-major order.
    pub fn pixels(&self) -> Vec<(usize, usize)> {
        let w = self.width;
        (0..self.pixel_count()).map(|i| (i % w, i / w)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn center_maps_to_image_middle() {
        let cam = CameraPose::new([1.5, -2.0], 0.7, 3.0, 40, 30).unwrap();
        let u = cam.world_to_pixel([1.5, -2.0]);
        assert!((u[0] - 20.0).abs() < 1e-12 && (u[1] - 15.0).abs() < 1e-12);
    }

    #[test]
    fn unit_offset_example() {
        let cam = CameraPose::new([0.0, 0.0], 0.0, 1.0, 64, 64).unwrap();
        assert_eq!(cam.world_to_pixel([1.0, 0.0]), [33.0, 32.0]);
    }

    #[test]
    fn rejects_bad_cameras() {
        assert!(CameraPose::new([0.0; 2], 0.0, 0.0, 4, 4).is_err());
        assert!(CameraPose::new([0.0; 2], 0.0, 1.0, 0, 4).is_err());
        let cam = CameraPose::new([0.0; 2], 0.0, 1.0, 4, 4).unwrap();
        assert!(cam.check_pixel(4, 0).is_err());
        assert!(cam.check_pixel(3, 3).is_ok());
    }

    proptest! {
        #[test]
        fn pixel_world_round_trip(
            cx in -10.0f64..10.0, cy in -10.0f64..10.0, psi in -4.0f64..4.0,
            zoom in 0.1f64..50.0, x in -20.0f64..20.0, y in -20.0f64..20.0,
        ) {
            let cam = CameraPose::new([cx, cy], psi, zoom, 64, 48).unwrap();
            let back = cam.pixel_to_world(cam.world_to_pixel([x, y]));
            prop_assert!((back[0] - x).abs() < 1e-12 && (back[1] - y).abs() < 1e-12);
        }
    }
}
