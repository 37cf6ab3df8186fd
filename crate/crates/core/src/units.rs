//! Conversions between the internal SI units and the reporting units used in
//! configs and CSV outputs (km/h, veh/km, veh/h).

pub const KMH: f64 = 1000.0 / 3600.0;
pub const VEH_PER_KM: f64 = 1.0e-3;
pub const VEH_PER_H: f64 = 1.0 / 3600.0;

#[inline]
pub fn kmh_to_mps(v: f64) -> f64 {
    v * KMH
}

#[inline]
pub fn mps_to_kmh(v: f64) -> f64 {
    v / KMH
}

#[inline]
pub fn vehkm_to_vehm(rho: f64) -> f64 {
    rho * VEH_PER_KM
}

#[inline]
pub fn vehm_to_vehkm(rho: f64) -> f64 {
    rho / VEH_PER_KM
}

#[inline]
pub fn vehh_to_vehs(q: f64) -> f64 {
    q * VEH_PER_H
}

#[inline]
pub fn vehs_to_vehh(q: f64) -> f64 {
    q / VEH_PER_H
}
