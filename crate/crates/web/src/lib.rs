//! wasm-bindgen exports for `www/index.html`. Each export returns a JSON
//! string; the plain functions underneath are what native code and tests call.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use rpg_core::analysis;
use rpg_core::dynamics::StepPolicy;
use rpg_core::model::{mhz_to_angular, DecayRates, PhysicalParams, ProtocolRatios};

/// Largest grid the page may request in one call.
pub const MAX_POINTS: usize = 400;

#[derive(Debug, Serialize, PartialEq)]
pub struct Curve {
    pub x_label: String,
    pub y_label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Serialize, PartialEq)]
pub struct Schedule {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub total: f64,
    /// `(t, Ω_e(t)/2π)` in µs and MHz over the Raman stage.
    pub raman: Curve,
}

fn check_grid(lo: f64, hi: f64, n: usize) -> rpg_core::Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && hi > lo) || !(2..=MAX_POINTS).contains(&n) {
        return Err(rpg_core::Error::InvalidInput(format!("grid [{lo}, {hi}] with {n} points (2..={MAX_POINTS})")));
    }
    Ok((0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect())
}

fn params(omega_e_mhz: f64, omega_c_over_omega_e: f64) -> rpg_core::Result<PhysicalParams> {
    let ratios = ProtocolRatios { omega_c_over_omega_e, ..ProtocolRatios::default() };
    PhysicalParams::from_ratios(mhz_to_angular(omega_e_mhz), &ratios, DecayRates::none())
}

pub fn schedule(omega_e_mhz: f64, samples: usize) -> rpg_core::Result<Schedule> {
    let p = params(omega_e_mhz, ProtocolRatios::default().omega_c_over_omega_e)?;
    let s = p.schedule()?;
    let env = s.raman_envelope(&p);
    let t = check_grid(0.0, s.t2.max(f64::MIN_POSITIVE), samples)?;
    let y = t.iter().map(|&t| env.evaluate(t) / (2.0 * std::f64::consts::PI)).collect();
    Ok(Schedule {
        t1: s.t1,
        t2: s.t2,
        t3: s.t3,
        total: s.total(),
        raman: Curve { x_label: "t (us)".into(), y_label: "Omega_e/2pi (MHz)".into(), x: t, y },
    })
}

/// Which input and axis a transfer curve scans.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scan {
    /// `00A` retention against `Ω_c/Ω_e`.
    Retention,
    /// `10A` transfer against `δ/Ω_e`.
    Detuning,
    /// `01A` transfer against `V/Ω_e` with `δ = V`.
    Blockade,
}

impl Scan {
    pub fn parse(name: &str) -> rpg_core::Result<Self> {
        match name {
            "retention" => Ok(Self::Retention),
            "detuning" => Ok(Self::Detuning),
            "blockade" => Ok(Self::Blockade),
            _ => Err(rpg_core::Error::InvalidInput(format!("unknown scan `{name}`; use retention, detuning or blockade"))),
        }
    }
}

/// Closed-system population curve, coarse steps for interactivity.
pub fn transfer_curve(scan: Scan, omega_e_mhz: f64, omega_c_over_omega_e: f64, lo: f64, hi: f64, n: usize) -> rpg_core::Result<Curve> {
    let p = params(omega_e_mhz, omega_c_over_omega_e)?;
    if !(p.omega_e > 0.0) {
        return Err(rpg_core::Error::InvalidInput("omega_e must be positive".into()));
    }
    let x = check_grid(lo, hi, n)?;
    let policy = StepPolicy { points_per_period: 20.0, ..StepPolicy::default() };
    let scaled: Vec<f64> = x.iter().map(|v| v * p.omega_e).collect();
    let (r, metric, label) = match scan {
        Scan::Retention => (analysis::retention_vs_coupling_ratio(&p, &x, false, &policy)?, "retention", "Omega_c/Omega_e"),
        Scan::Detuning => (analysis::transfer_vs_delta(&p, &scaled, false, &policy)?, "transfer", "delta/Omega_e"),
        Scan::Blockade => (analysis::transfer_vs_v(&p, &scaled, false, &policy)?, "transfer", "V/Omega_e"),
    };
    let y = r.metric(metric).unwrap_or_default().to_vec();
    Ok(Curve { x_label: label.into(), y_label: metric.into(), x, y })
}

/// `V/2π` in MHz against spacing for `C6/2π` in MHz·µm⁶.
pub fn vdw(c6_mhz: f64, lo: f64, hi: f64, n: usize) -> rpg_core::Result<Curve> {
    let x = check_grid(lo, hi, n)?;
    let r = analysis::vdw_curve(mhz_to_angular(c6_mhz), &x)?;
    let y = r.metric("v").unwrap_or_default().iter().map(|v| v / (2.0 * std::f64::consts::PI)).collect();
    Ok(Curve { x_label: "l (um)".into(), y_label: "V/2pi (MHz)".into(), x, y })
}

fn json<T: Serialize>(r: rpg_core::Result<T>) -> Result<String, String> {
    r.map(|v| serde_json::to_string(&v).expect("serializable")).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = pulseSchedule)]
pub fn pulse_schedule_js(omega_e_mhz: f64, samples: usize) -> Result<String, String> {
    json(schedule(omega_e_mhz, samples))
}

#[wasm_bindgen(js_name = transferCurve)]
pub fn transfer_curve_js(scan: &str, omega_e_mhz: f64, omega_c_over_omega_e: f64, lo: f64, hi: f64, n: usize) -> Result<String, String> {
    json(Scan::parse(scan).and_then(|s| transfer_curve(s, omega_e_mhz, omega_c_over_omega_e, lo, hi, n)))
}

#[wasm_bindgen(js_name = vdwCurve)]
pub fn vdw_curve_js(c6_mhz: f64, lo: f64, hi: f64, n: usize) -> Result<String, String> {
    json(vdw(c6_mhz, lo, hi, n))
}
