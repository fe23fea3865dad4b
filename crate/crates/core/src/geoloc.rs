//! Great-circle distance and nearest-warehouse lookup.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{EntityId, Warehouse};

/// IUGG mean Earth radius.
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

pub const DEFAULT_RADIUS_M: f64 = 500.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeoError {
    #[error("coordinates out of range or not finite")]
    BadCoordinates,
    #[error("search radius must be a positive number of meters")]
    BadRadius,
}

impl GeoError {
    pub fn code(&self) -> &'static str {
        match self {
            GeoError::BadCoordinates => "BAD_COORDINATES",
            GeoError::BadRadius => "BAD_RADIUS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GeoPoint {
    pub latitude_deg: f64,
    pub longitude_deg: f64,
}

impl GeoPoint {
    pub fn new(latitude_deg: f64, longitude_deg: f64) -> Result<Self, GeoError> {
        let p = Self {
            latitude_deg,
            longitude_deg,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn is_valid(&self) -> bool {
        self.latitude_deg.is_finite()
            && self.longitude_deg.is_finite()
            && (-90.0..=90.0).contains(&self.latitude_deg)
            && (-180.0..=180.0).contains(&self.longitude_deg)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(GeoError::BadCoordinates)
        }
    }
}

/// Haversine distance in kilometers.
pub fn haversine_km(a: GeoPoint, b: GeoPoint) -> Result<f64, GeoError> {
    a.validate()?;
    b.validate()?;
    let phi1 = a.latitude_deg.to_radians();
    let phi2 = b.latitude_deg.to_radians();
    // Absolute differences keep the result bit-identical under argument swap.
    let d_phi = (b.latitude_deg - a.latitude_deg).abs().to_radians();
    let d_lambda = (b.longitude_deg - a.longitude_deg).abs().to_radians();
    let h = (d_phi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (d_lambda / 2.0).sin().powi(2);
    Ok(2.0 * EARTH_RADIUS_KM * h.clamp(0.0, 1.0).sqrt().asin())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nearest {
    pub warehouse_id: EntityId,
    pub distance_m: f64,
}

/// Closest warehouse within `max_radius_m` of `user`, ties going to the
/// smallest id. Callers pass only the warehouses that should be eligible.
pub fn nearest_warehouse<'a, I>(
    user: GeoPoint,
    warehouses: I,
    max_radius_m: f64,
) -> Result<Option<Nearest>, GeoError>
where
    I: IntoIterator<Item = &'a Warehouse>,
{
    user.validate()?;
    if !(max_radius_m.is_finite() && max_radius_m > 0.0) {
        return Err(GeoError::BadRadius);
    }
    let mut best: Option<Nearest> = None;
    for w in warehouses {
        let distance_m = haversine_km(user, w.location)? * 1000.0;
        if distance_m > max_radius_m {
            continue;
        }
        let better = match &best {
            None => true,
            Some(b) => {
                distance_m < b.distance_m
                    || (distance_m == b.distance_m && w.id < b.warehouse_id)
            }
        };
        if better {
            best = Some(Nearest {
                warehouse_id: w.id,
                distance_m,
            });
        }
    }
    Ok(best)
}
