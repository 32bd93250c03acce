//! Attack-resource arithmetic.
//!
//! `i(x) = a * (scale * x)^exponent - (quad * x)^2 - offset` gives the
//! inflation one cluster of `x` relays achieves once co-measurement losses
//! are accounted for. The number of dedicated servers needed to control a
//! share `p` percent of a network with total bandwidth `b`, when each server
//! offers `d`, is `ceil(2 * b * (p / 100) / (d * i(x)))`.

use alloc::vec::Vec;

use libm::pow;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const X_MIN: u32 = 1;
pub const X_MAX: u32 = 120;

/// Coefficients of the fitted inflation curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InflationModel {
    pub a: f64,
    pub scale: f64,
    pub exponent: f64,
    pub quad: f64,
    pub offset: f64,
}

impl Default for InflationModel {
    fn default() -> Self {
        Self {
            a: 0.758_951_38,
            scale: 1.449_953_14,
            exponent: 0.968_371_48,
            quad: 0.037_147_58,
            offset: 0.076_724_55,
        }
    }
}

impl InflationModel {
    /// Evaluates the curve at any real `x` without a domain check.
    pub fn eval(&self, x: f64) -> f64 {
        let q = self.quad * x;
        self.a * pow(self.scale * x, self.exponent) - q * q - self.offset
    }

    /// Evaluates the curve on the integer domain `[1, 120]`.
    pub fn inflation(&self, x: u32) -> Result<f64> {
        check_x(x)?;
        Ok(self.eval(f64::from(x)))
    }

    fn to_array(self) -> [f64; 5] {
        [self.a, self.scale, self.exponent, self.quad, self.offset]
    }

    fn from_array(p: [f64; 5]) -> Self {
        Self { a: p[0], scale: p[1], exponent: p[2], quad: p[3], offset: p[4] }
    }
}

fn check_x(x: u32) -> Result<()> {
    if (X_MIN..=X_MAX).contains(&x) {
        Ok(())
    } else {
        Err(Error::ClusterSizeDomain(i64::from(x)))
    }
}

/// The fitted curve with its published coefficients.
pub fn inflation_curve(x: u32) -> Result<f64> {
    InflationModel::default().inflation(x)
}

/// Inputs to the server count. `b` and `d` are in bytes per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResourceQuery {
    pub x: u32,
    pub b: f64,
    pub p: f64,
    pub d: f64,
}

impl ResourceQuery {
    pub fn validate(&self) -> Result<()> {
        check_x(self.x)?;
        check_network(self.b, self.p, self.d)
    }

    /// Pre-ceiling quotient.
    pub fn raw_servers(&self) -> Result<f64> {
        self.validate()?;
        let i = inflation_curve(self.x)?;
        Ok(2.0 * self.b * (self.p / 100.0) / (self.d * i))
    }
}

fn check_network(b: f64, p: f64, d: f64) -> Result<()> {
    let positive = |name, v: f64| {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::OutOfRange { name, value: v, min: 0.0, max: f64::INFINITY })
        }
    };
    positive("b", b)?;
    positive("d", d)?;
    if !(1.0..=100.0).contains(&p) {
        return Err(Error::OutOfRange { name: "p", value: p, min: 1.0, max: 100.0 });
    }
    Ok(())
}

pub fn servers_required(q: &ResourceQuery) -> Result<u64> {
    Ok(libm::ceil(q.raw_servers()?) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterPlan {
    pub x: u32,
    pub servers: u64,
    /// Relays per server times servers.
    pub total_relays: u64,
    pub objective: u64,
}

impl ClusterPlan {
    pub fn at(x: u32, b: f64, p: f64, d: f64) -> Result<Self> {
        let servers = servers_required(&ResourceQuery { x, b, p, d })?;
        Ok(Self { x, servers, total_relays: u64::from(x) * servers, objective: u64::from(x) + servers })
    }
}

/// Every point of the integer grid.
pub fn cluster_grid(b: f64, p: f64, d: f64) -> Result<Vec<ClusterPlan>> {
    check_network(b, p, d)?;
    (X_MIN..=X_MAX).map(|x| ClusterPlan::at(x, b, p, d)).collect()
}

/// Minimises `x + s` over the whole grid; ties go to the smallest `x`.
pub fn optimize_cluster(b: f64, p: f64, d: f64) -> Result<ClusterPlan> {
    let grid = cluster_grid(b, p, d)?;
    Ok(grid
        .into_iter()
        .reduce(|best, c| if c.objective < best.objective { c } else { best })
        .expect("grid is nonempty"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub model: InflationModel,
    pub mse: f64,
    pub evaluations: u64,
}

pub const FIT_STEP_TOLERANCE: f64 = 1e-9;
pub const FIT_MAX_EVALUATIONS: u64 = 100_000;

fn mse(p: &[f64; 5], samples: &[(f64, f64)]) -> f64 {
    let m = InflationModel::from_array(*p);
    let sum: f64 = samples
        .iter()
        .map(|&(x, y)| {
            let r = m.eval(x) - y;
            r * r
        })
        .sum();
    let v = sum / samples.len() as f64;
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Coordinate descent: probe each coefficient up and down by its step,
/// keep improvements, halve every step after a sweep with none.
fn descend(start: [f64; 5], samples: &[(f64, f64)], budget: u64) -> ([f64; 5], f64, u64) {
    let mut p = start;
    let mut best = mse(&p, samples);
    let mut evals = 1;
    let mut steps: [f64; 5] = core::array::from_fn(|i| 0.05 * libm::fabs(p[i]).max(1e-3));
    while evals + 10 <= budget && steps.iter().any(|s| *s >= FIT_STEP_TOLERANCE) {
        let mut improved = false;
        for i in 0..5 {
            for dir in [1.0, -1.0] {
                let mut trial = p;
                trial[i] += dir * steps[i];
                let v = mse(&trial, samples);
                evals += 1;
                if v < best {
                    best = v;
                    p = trial;
                    improved = true;
                    steps[i] *= 1.5;
                    break;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
        }
    }
    (p, best, evals)
}

/// Least-squares refit of the curve's five coefficients.
///
/// Starts from the published coefficients and four scaled variants that
/// share one evaluation budget.
pub fn refit_curve(samples: &[(f64, f64)]) -> Result<CurveFit> {
    let mut xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if samples.len() < 5 || xs.len() < 3 || samples.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::UnderdeterminedFit);
    }
    let base = InflationModel::default().to_array();
    let starts = [1.0, 0.9, 1.1, 0.75, 1.25].map(|f| {
        let mut s = base;
        s[0] *= f;
        s[3] *= 2.0 - f;
        s
    });
    let mut best: Option<CurveFit> = None;
    let mut total = 0;
    for start in starts {
        let (p, v, evals) = descend(start, samples, FIT_MAX_EVALUATIONS / starts.len() as u64);
        total += evals;
        if best.is_none_or(|b| v < b.mse) {
            best = Some(CurveFit { model: InflationModel::from_array(p), mse: v, evaluations: 0 });
        }
    }
    let mut fit = best.expect("at least one start");
    fit.evaluations = total;
    Ok(fit)
}
