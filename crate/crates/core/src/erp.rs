//! Equirectangular frame geometry.
//!
//! Rows map linearly to latitude, `φ(y) = π (y/H − 1/2)`, columns to longitude.
//! The horizontal axis is periodic; the vertical axis is clamped at the poles.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use crate::error::{Error, Result};

/// Where within a pixel row latitude is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatMode {
    /// `y` is used as given; `y = 0` is exactly the pole.
    Eq1Exact,
    /// Rows are sampled at `y + 0.5`, strictly inside the open interval.
    PixelCenter,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ErpGrid {
    height: usize,
    lat_mode: LatMode,
}

impl ErpGrid {
    pub fn new(height: usize, width: usize, lat_mode: LatMode) -> Result<Self> {
        if height < 2 {
            return Err(Error::InvalidArgument(format!("ERP height must be at least 2, got {height}")));
        }
        if width != 2 * height {
            return Err(Error::InvalidArgument(format!(
                "ERP frames are 2:1, got {width}x{height}"
            )));
        }
        Ok(ErpGrid { height, lat_mode })
    }

    pub fn pixel_center(height: usize) -> Result<Self> {
        Self::new(height, 2 * height, LatMode::PixelCenter)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        2 * self.height
    }

    pub fn lat_mode(&self) -> LatMode {
        self.lat_mode
    }

    /// Latitude of row coordinate `y` in radians.
    pub fn latitude_of_row(&self, y: f64) -> Result<f64> {
        let h = self.height as f64;
        match self.lat_mode {
            LatMode::Eq1Exact => {
                if !(0.0..=h).contains(&y) {
                    return Err(Error::OutOfRange(format!("row {y} outside [0, {h}]")));
                }
                Ok(PI * (y / h - 0.5))
            }
            LatMode::PixelCenter => {
                if !(y >= 0.0 && y < h) {
                    return Err(Error::OutOfRange(format!("row {y} outside [0, {h})")));
                }
                Ok(PI * ((y + 0.5) / h - 0.5))
            }
        }
    }

    /// `cos φ` for every integer row.
    pub fn cos_lat_table(&self) -> Vec<f64> {
        (0..self.height)
            .map(|y| {
                self.latitude_of_row(y as f64)
                    .expect("integer rows are in range")
                    .cos()
                    .max(0.0)
            })
            .collect()
    }

    /// Pixel coordinates `(x, y)` of a direction on the sphere.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let h = self.height as f64;
        let y = h * (lat / PI + 0.5);
        let x = self.width() as f64 * (lon / TAU + 0.5);
        (x, y)
    }

    /// Inverse of [`ErpGrid::project`] for a real row coordinate under the
    /// literal latitude map (no pixel-centre offset).
    pub fn unproject(&self, x: f64, y: f64) -> (f64, f64) {
        let lat = PI * (y / self.height as f64 - 0.5);
        let lon = TAU * (x / self.width() as f64 - 0.5);
        (lat, lon)
    }
}

/// `x mod width` with a nonnegative result.
pub fn wrap_x(x: i64, width: usize) -> usize {
    assert!(width >= 1, "wrap_x: width must be positive");
    x.rem_euclid(width as i64) as usize
}

/// Validating form of [`ErpGrid::project`].
pub fn erp_project(lat: f64, lon: f64, grid: &ErpGrid) -> Result<(f64, f64)> {
    if !(-FRAC_PI_2..=FRAC_PI_2).contains(&lat) {
        return Err(Error::OutOfRange(format!("latitude {lat} outside [-π/2, π/2]")));
    }
    if !(-PI..PI).contains(&lon) {
        return Err(Error::OutOfRange(format!("longitude {lon} outside [-π, π)")));
    }
    Ok(grid.project(lat, lon))
}

/// Wrap a longitude into `[-π, π)`.
pub fn wrap_lon(lon: f64) -> f64 {
    (lon + PI).rem_euclid(TAU) - PI
}

/// Great-circle angle between two directions.
pub fn angular_distance(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let dlat = lat2 - lat1;
    let dlon = lon2 - lon1;
    let a = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * a.sqrt().min(1.0).asin()
}
