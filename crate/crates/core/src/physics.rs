//! Hardness conversion, analytical modulus estimation from grasp
//! force/width trajectories, and log-scale target normalization.

use serde::{Deserialize, Serialize};

use crate::dataset::GraspRecord;
use crate::{CoreError, Result};

/// Young's modulus of the sensor gel, pascals. Also the reference line
/// drawn in scatter reports: objects stiffer than the gel deform it
/// fully and become hard to tell apart.
pub const GELSIGHT_MODULUS_PA: f64 = 0.275e6;

/// Shore 00 to Shore A correspondence knots, assembled from published
/// durometer comparison charts (rounded to integer Shore A). Declared
/// data, not a law: tests pin the knots and monotonicity only.
pub const SHORE00_TO_A_KNOTS: [(f64, f64); 12] = [
    (0.0, 0.0),
    (30.0, 1.0),
    (45.0, 10.0),
    (55.0, 20.0),
    (62.0, 30.0),
    (70.0, 40.0),
    (77.0, 50.0),
    (83.0, 60.0),
    (88.0, 70.0),
    (92.0, 80.0),
    (95.0, 90.0),
    (100.0, 98.0),
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContactParams {
    pub sensor_modulus_pa: f64,
    pub poisson_object: f64,
    pub poisson_sensor: f64,
    pub effective_radius_m: f64,
}

impl Default for ContactParams {
    fn default() -> Self {
        ContactParams {
            sensor_modulus_pa: GELSIGHT_MODULUS_PA,
            poisson_object: 0.45,
            poisson_sensor: 0.45,
            effective_radius_m: 0.01,
        }
    }
}

impl ContactParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sensor_modulus_pa.is_finite()
            && self.sensor_modulus_pa > 0.0
            && (0.0..=0.5).contains(&self.poisson_object)
            && self.poisson_object > 0.0
            && (0.0..=0.5).contains(&self.poisson_sensor)
            && self.poisson_sensor > 0.0
            && self.effective_radius_m.is_finite()
            && self.effective_radius_m > 0.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid contact parameters: {self:?}")))
        }
    }

    /// Combined contact modulus of object and sensor:
    /// 1/E* = (1 - nu_o^2)/E_o + (1 - nu_s^2)/E_s.
    pub fn effective_modulus(&self, object_modulus_pa: f64) -> f64 {
        let co = (1.0 - self.poisson_object.powi(2)) / object_modulus_pa;
        let cs = (1.0 - self.poisson_sensor.powi(2)) / self.sensor_modulus_pa;
        1.0 / (co + cs)
    }

    /// Force at indentation depth d for a sphere-on-plane contact.
    pub fn hertz_force(&self, object_modulus_pa: f64, d_m: f64) -> f64 {
        if d_m <= 0.0 {
            return 0.0;
        }
        (4.0 / 3.0)
            * self.effective_modulus(object_modulus_pa)
            * self.effective_radius_m.sqrt()
            * d_m.powf(1.5)
    }

    /// Indentation depth at which the contact force reaches `force_n`.
    pub fn indentation_at_force(&self, object_modulus_pa: f64, force_n: f64) -> f64 {
        let e_star = self.effective_modulus(object_modulus_pa);
        (force_n / ((4.0 / 3.0) * e_star * self.effective_radius_m.sqrt())).powf(2.0 / 3.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModulusBounds {
    pub log10_min: f64,
    pub log10_max: f64,
}

impl Default for ModulusBounds {
    fn default() -> Self {
        ModulusBounds {
            log10_min: 3.0,
            log10_max: 12.0,
        }
    }
}

impl ModulusBounds {
    pub fn validate(&self) -> Result<()> {
        if self.log10_min.is_finite() && self.log10_max.is_finite() && self.log10_min < self.log10_max
        {
            Ok(())
        } else {
            Err(CoreError::Config(format!("invalid modulus bounds: {self:?}")))
        }
    }

    pub fn floor_pa(&self) -> f64 {
        10f64.powf(self.log10_min)
    }

    pub fn ceil_pa(&self) -> f64 {
        10f64.powf(self.log10_max)
    }

    pub fn clamp_pa(&self, y_pa: f64) -> f64 {
        y_pa.clamp(self.floor_pa(), self.ceil_pa())
    }
}

/// Gent's relation between Shore A hardness and Young's modulus:
/// E = 0.0981 (56 + 7.62336 S) / (0.137505 (254 - 2.54 S))  [MPa].
/// Singular at S = 100, so the domain is [0, 100).
pub fn gent_shore_a_to_young(shore_a: f64) -> Result<f64> {
    if !shore_a.is_finite() || !(0.0..100.0).contains(&shore_a) {
        return Err(CoreError::OutOfRangeHardness(shore_a));
    }
    let numerator = 0.0981 * (56.0 + 7.62336 * shore_a);
    let denominator = 0.137505 * (254.0 - 2.54 * shore_a);
    Ok(1e6 * numerator / denominator)
}

/// Monotone piecewise-linear interpolation over [`SHORE00_TO_A_KNOTS`].
pub fn shore00_to_shore_a(shore_00: f64) -> Result<f64> {
    if !shore_00.is_finite() || !(0.0..=100.0).contains(&shore_00) {
        return Err(CoreError::OutOfRangeHardness(shore_00));
    }
    let knots = &SHORE00_TO_A_KNOTS;
    for pair in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if shore_00 <= x1 {
            let t = (shore_00 - x0) / (x1 - x0);
            return Ok((y0 + t * (y1 - y0)).min(100.0 - f64::EPSILON));
        }
    }
    unreachable!("domain check guarantees a bracketing knot pair");
}

/// Hardness on either Shore scale, as found in source datasets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Hardness {
    ShoreA(f64),
    Shore00(f64),
}

impl Hardness {
    pub fn to_young_pa(self) -> Result<f64> {
        match self {
            Hardness::ShoreA(s) => gent_shore_a_to_young(s),
            Hardness::Shore00(s) => gent_shore_a_to_young(shore00_to_shore_a(s)?),
        }
    }
}

/// Indentation depths from a width trajectory: half the width decrease
/// relative to the first sample (two symmetric contacts on a parallel
/// gripper), floored at zero.
pub fn indentations(width_m: &[f64]) -> Vec<f64> {
    let w0 = width_m[0];
    width_m.iter().map(|&w| ((w0 - w) / 2.0).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HertzEstimate {
    pub pascals: f64,
    /// Set when the fit was stiffer than the sensor alone allows; the
    /// value is then the upper clamp.
    pub non_physical: bool,
}

/// Least-squares fit of F = (4/3) E* sqrt(R) d^{3/2} over samples with
/// positive indentation, then recovery of the object modulus from the
/// effective one. Result clamped into `bounds`.
pub fn hertz_fit(
    grasp: &GraspRecord,
    params: &ContactParams,
    bounds: &ModulusBounds,
) -> Result<HertzEstimate> {
    let d = indentations(&grasp.width_m);
    let mut num = 0.0; // sum F_i d_i^{3/2}
    let mut den = 0.0; // sum d_i^3
    let mut positive = 0usize;
    for (&di, &fi) in d.iter().zip(&grasp.force_n) {
        if di > 0.0 {
            positive += 1;
            num += fi * di.powf(1.5);
            den += di.powi(3);
        }
    }
    if positive < 2 {
        return Err(CoreError::InsufficientIndentation);
    }
    let e_star = 0.75 * num / (params.effective_radius_m.sqrt() * den);
    if !(e_star > 0.0) {
        // zero or negative force everywhere: softest answer we can give
        return Ok(HertzEstimate {
            pascals: bounds.floor_pa(),
            non_physical: false,
        });
    }
    let sensor_compliance = (1.0 - params.poisson_sensor.powi(2)) / params.sensor_modulus_pa;
    let object_compliance = 1.0 / e_star - sensor_compliance;
    if object_compliance <= 0.0 {
        return Ok(HertzEstimate {
            pascals: bounds.ceil_pa(),
            non_physical: true,
        });
    }
    let e_object = (1.0 - params.poisson_object.powi(2)) / object_compliance;
    Ok(HertzEstimate {
        pascals: bounds.clamp_pa(e_object),
        non_physical: false,
    })
}

/// Least-squares fit of F = k d through the origin, converted to a
/// modulus via E = k L / A with L = 2R and A = pi R^2.
pub fn elastic_fit(
    grasp: &GraspRecord,
    params: &ContactParams,
    bounds: &ModulusBounds,
) -> Result<f64> {
    let d = indentations(&grasp.width_m);
    let mut num = 0.0; // sum F_i d_i
    let mut den = 0.0; // sum d_i^2
    let mut positive = 0usize;
    for (&di, &fi) in d.iter().zip(&grasp.force_n) {
        if di > 0.0 {
            positive += 1;
            num += fi * di;
            den += di * di;
        }
    }
    if positive < 2 {
        return Err(CoreError::InsufficientIndentation);
    }
    let k = num / den;
    let r = params.effective_radius_m;
    let e = k * (2.0 * r) / (std::f64::consts::PI * r * r);
    Ok(bounds.clamp_pa(e))
}

/// log10 then min-max over `bounds`, clamped into [0,1].
pub fn normalize_young(y_pa: f64, bounds: &ModulusBounds) -> Result<f64> {
    if !(y_pa.is_finite() && y_pa > 0.0) {
        return Err(CoreError::NonPositiveModulus(y_pa));
    }
    let n = (y_pa.log10() - bounds.log10_min) / (bounds.log10_max - bounds.log10_min);
    Ok(n.clamp(0.0, 1.0))
}

/// Inverse of [`normalize_young`]; the input is clamped into [0,1] first
/// so raw model outputs always map to an in-range modulus.
pub fn denormalize_young(normalized: f64, bounds: &ModulusBounds) -> f64 {
    let n = normalized.clamp(0.0, 1.0);
    10f64.powf(bounds.log10_min + n * (bounds.log10_max - bounds.log10_min))
}
