//! Gridbox geometry on a spherical Earth.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Longitude/latitude box `[lon1, lat1] × [lon2, lat2]` in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub lon1: f64,
    pub lat1: f64,
    pub lon2: f64,
    pub lat2: f64,
}

impl GridBox {
    pub fn new(lon1: f64, lat1: f64, lon2: f64, lat2: f64) -> Result<Self> {
        let b = Self {
            lon1,
            lat1,
            lon2,
            lat2,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = [self.lon1, self.lat1, self.lon2, self.lat2]
            .iter()
            .all(|v| v.is_finite())
            && self.lon1 < self.lon2
            && -90.0 <= self.lat1
            && self.lat1 < self.lat2
            && self.lat2 <= 90.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!("invalid gridbox {self:?}")))
        }
    }

    pub fn centroid(&self) -> (f64, f64) {
        (0.5 * (self.lon1 + self.lon2), 0.5 * (self.lat1 + self.lat2))
    }
}

/// Area in km² of the box on a sphere of radius 6371 km.
pub fn gridbox_area(b: &GridBox) -> Result<f64> {
    b.validate()?;
    Ok(box_area_formula(b))
}

pub(crate) fn box_area_formula(b: &GridBox) -> f64 {
    let (s1, s2) = (b.lat1.to_radians().sin(), b.lat2.to_radians().sin());
    std::f64::consts::PI / 180.0 * EARTH_RADIUS_KM * EARTH_RADIUS_KM * (s1 - s2).abs() * (b.lon1 - b.lon2).abs()
}

/// Haversine great-circle distance in km between two (lon, lat) points.
pub fn haversine_km(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (lon1, lat1) = (a.0.to_radians(), a.1.to_radians());
    let (lon2, lat2) = (b.0.to_radians(), b.1.to_radians());
    let h = ((lat2 - lat1) / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * ((lon2 - lon1) / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Great-circle distance between the centroids of two boxes.
pub fn centroid_distance(a: &GridBox, b: &GridBox) -> f64 {
    haversine_km(a.centroid(), b.centroid())
}

/// Reads boxes from a CSV with columns `lon1,lat1,lon2,lat2`.
pub fn load_gridboxes(path: impl AsRef<Path>) -> Result<Vec<GridBox>> {
    let data = crate::dataset::load_csv(path)?;
    let want = ["lon1", "lat1", "lon2", "lat2"];
    let cols: Vec<usize> = want
        .iter()
        .map(|name| {
            data.site_ids()
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::Parse {
                    row: 0,
                    column: 0,
                    message: format!("gridbox file lacks column {name}"),
                })
        })
        .collect::<Result<_>>()?;
    data.rows()
        .enumerate()
        .map(|(r, row)| {
            GridBox::new(row[cols[0]], row[cols[1]], row[cols[2]], row[cols[3]]).map_err(|e| {
                Error::Parse {
                    row: r + 1,
                    column: 0,
                    message: e.to_string(),
                }
            })
        })
        .collect()
}
