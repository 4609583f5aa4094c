//! Physical parameters, pulse envelopes, the three-stage schedule, stage
//! Hamiltonians and collapse operators.
//!
//! All frequencies are angular (rad/µs) and times are in µs. The stage-2
//! Hamiltonian is written in a single frame in which the target Rydberg level
//! carries the shift `(V n_r − δ)`, with `n_r` the number of controls in `|r>`.

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::opalg::{embed, embed_product, matrix_unit, Matrix, Operator, SpaceLayout, StateVector, C64};

/// Level indices on each site.
pub mod levels {
    pub const GROUND_0: usize = 0;
    pub const GROUND_1: usize = 1;
    pub const RYDBERG: usize = 2;

    pub const A: usize = 0;
    pub const B: usize = 1;
    pub const E: usize = 2;
    pub const R: usize = 3;
}

use levels::*;

/// Converts a frequency quoted as `Ω/2π` in MHz into rad/µs.
pub fn mhz_to_angular(mhz: f64) -> f64 {
    2.0 * PI * mhz
}

pub fn angular_to_mhz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Which atom arrangement the protocol runs on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateModel {
    /// Two controls flanking one target; control 1 drives `|0>↔|r>`, control 2
    /// drives `|1>↔|r>`.
    Parity,
    /// One control (`|1>↔|r>`) and one target: the two-atom controlled-NOT
    /// built from the same dark-state mechanism.
    Controlled,
}

impl GateModel {
    pub fn layout(self) -> SpaceLayout {
        match self {
            Self::Parity => SpaceLayout::parity_gate(),
            Self::Controlled => SpaceLayout::controlled_gate(),
        }
    }

    /// `(site, driven ground level)` for every control atom.
    pub fn controls(self) -> &'static [(usize, usize)] {
        match self {
            Self::Parity => &[(0, GROUND_0), (1, GROUND_1)],
            Self::Controlled => &[(0, GROUND_1)],
        }
    }

    pub fn target_site(self) -> usize {
        match self {
            Self::Parity => 2,
            Self::Controlled => 1,
        }
    }

    pub fn n_qubits(self) -> usize {
        self.layout().n_sites()
    }
}

/// Decay rates in 1/µs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayRates {
    pub gamma_r: f64,
    pub gamma_big_r: f64,
    pub gamma_e: f64,
}

impl DecayRates {
    /// Cs: 126S lifetime 540 µs for both Rydberg levels, 7P lifetime 165 ns.
    pub fn cesium() -> Self {
        Self::from_lifetimes(540.0, 540.0, 0.165)
    }

    pub fn from_lifetimes(tau_r: f64, tau_big_r: f64, tau_e: f64) -> Self {
        let rate = |tau: f64| if tau.is_infinite() { 0.0 } else { 1.0 / tau };
        Self { gamma_r: rate(tau_r), gamma_big_r: rate(tau_big_r), gamma_e: rate(tau_e) }
    }

    pub fn none() -> Self {
        Self { gamma_r: 0.0, gamma_big_r: 0.0, gamma_e: 0.0 }
    }
}

/// Frequency ratios that define the protocol relative to the Raman Rabi
/// frequency.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRatios {
    pub omega_c_over_omega_e: f64,
    pub delta_over_omega_e: f64,
    pub omega_r_over_omega_e: f64,
    pub v_over_omega_c: f64,
}

impl Default for ProtocolRatios {
    fn default() -> Self {
        Self { omega_c_over_omega_e: 2.5, delta_over_omega_e: 10.0, omega_r_over_omega_e: 3.0, v_over_omega_c: 2.5 }
    }
}

/// Rates, frequencies and geometry of the atom array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParams {
    pub omega_e: f64,
    pub omega_c: f64,
    pub omega_r: f64,
    pub delta_big: f64,
    pub delta_small: f64,
    pub v: f64,
    /// Adds the control–control shift `V/64` (distance `2l`) on `|rr>`.
    pub control_control: bool,
    pub gamma_r: f64,
    pub gamma_big_r: f64,
    pub gamma_e: f64,
    /// Inter-atom spacing in µm.
    pub spacing: f64,
    /// vdW coefficient in rad/µs · µm⁶, when known.
    pub c6: Option<f64>,
}

impl PhysicalParams {
    /// Builds parameters from ratios with `δ = V`. No protocol-window checks
    /// beyond non-negativity; sweeps use this to leave the operating window.
    pub fn from_ratios(omega_e: f64, ratios: &ProtocolRatios, decay: DecayRates) -> Result<Self> {
        let omega_c = ratios.omega_c_over_omega_e * omega_e;
        let v = ratios.v_over_omega_c * omega_c;
        let params = Self {
            omega_e,
            omega_c,
            omega_r: ratios.omega_r_over_omega_e * omega_e,
            delta_big: ratios.delta_over_omega_e * omega_e,
            delta_small: v,
            v,
            control_control: false,
            gamma_r: decay.gamma_r,
            gamma_big_r: decay.gamma_big_r,
            gamma_e: decay.gamma_e,
            spacing: 9.3,
            c6: None,
        };
        params.validate()?;
        Ok(params)
    }

    /// Protocol construction: `δ = V`, `Ω_r = 3Ω_e` and `Ω_c/Ω_e > 2` enforced.
    pub fn protocol(omega_e: f64, ratios: &ProtocolRatios, decay: DecayRates) -> Result<Self> {
        if (ratios.omega_r_over_omega_e - 3.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter {
                name: "omega_r_over_omega_e",
                reason: format!("protocol requires 3, got {}", ratios.omega_r_over_omega_e),
            });
        }
        if !(ratios.omega_c_over_omega_e > 2.0) {
            return Err(Error::InvalidParameter {
                name: "omega_c_over_omega_e",
                reason: format!("dark-state following requires a ratio above 2, got {}", ratios.omega_c_over_omega_e),
            });
        }
        Self::from_ratios(omega_e, ratios, decay)
    }

    /// The operating point used throughout: Ω_e/2π = 90 MHz, default ratios,
    /// Cs decay.
    pub fn cesium_default() -> Self {
        Self::protocol(mhz_to_angular(90.0), &ProtocolRatios::default(), DecayRates::cesium())
            .expect("default parameters are valid")
    }

    /// Sets `V = C6 / l⁶` (and `δ = V`).
    pub fn with_vdw(mut self, c6: f64, spacing: f64) -> Result<Self> {
        self.c6 = Some(c6);
        self.spacing = spacing;
        self.v = vdw_shift(c6, spacing)?;
        self.delta_small = self.v;
        self.validate()?;
        Ok(self)
    }

    pub fn with_decay(mut self, decay: DecayRates) -> Self {
        self.gamma_r = decay.gamma_r;
        self.gamma_big_r = decay.gamma_big_r;
        self.gamma_e = decay.gamma_e;
        self
    }

    pub fn decay(&self) -> DecayRates {
        DecayRates { gamma_r: self.gamma_r, gamma_big_r: self.gamma_big_r, gamma_e: self.gamma_e }
    }

    pub fn validate(&self) -> Result<()> {
        let fields: [(&'static str, f64); 10] = [
            ("omega_e", self.omega_e),
            ("omega_c", self.omega_c),
            ("omega_r", self.omega_r),
            ("delta_big", self.delta_big),
            ("delta_small", self.delta_small),
            ("v", self.v),
            ("gamma_r", self.gamma_r),
            ("gamma_big_r", self.gamma_big_r),
            ("gamma_e", self.gamma_e),
            ("spacing", self.spacing),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter { name, reason: format!("must be finite and non-negative, got {value}") });
            }
        }
        if !(self.spacing > 0.0) {
            return Err(Error::InvalidParameter { name: "spacing", reason: "must be positive".into() });
        }
        if let Some(c6) = self.c6 {
            if !(c6.is_finite() && c6 >= 0.0) {
                return Err(Error::InvalidParameter { name: "c6", reason: format!("must be finite and non-negative, got {c6}") });
            }
        }
        Ok(())
    }

    /// Shift of `|rr>` on the controls, zero unless enabled.
    pub fn control_control_shift(&self) -> f64 {
        if self.control_control {
            self.v / 64.0
        } else {
            0.0
        }
    }

    /// Largest angular frequency in the problem; sets the integrator step.
    pub fn max_frequency(&self) -> f64 {
        [self.delta_big, self.omega_c, self.v, self.delta_small, self.omega_r, self.omega_e]
            .into_iter()
            .fold(0.0, f64::max)
    }

    pub fn schedule(&self) -> Result<PulseSchedule> {
        PulseSchedule::from_params(self)
    }

    /// Multiplies every frequency by `factor`, leaving decay rates alone.
    pub fn scale_frequencies(&self, factor: f64) -> Self {
        let mut p = self.clone();
        p.omega_e *= factor;
        p.omega_c *= factor;
        p.omega_r *= factor;
        p.delta_big *= factor;
        p.delta_small *= factor;
        p.v *= factor;
        p
    }
}

/// `V = C6 / l⁶`.
pub fn vdw_shift(c6: f64, spacing: f64) -> Result<f64> {
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter { name: "spacing", reason: format!("must be positive, got {spacing}") });
    }
    Ok(c6 / spacing.powi(6))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseEnvelope {
    Constant { amplitude: f64, duration: f64 },
    /// `(Ω/2)(1 − cos(2πt/T))`, zero at both ends, `Ω` at `T/2`.
    RaisedCosine { peak: f64, duration: f64 },
}

impl PulseEnvelope {
    pub fn duration(&self) -> f64 {
        match *self {
            Self::Constant { duration, .. } | Self::RaisedCosine { duration, .. } => duration,
        }
    }

    /// Amplitude at stage time `t`; zero outside `[0, duration]`.
    pub fn evaluate(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration() {
            return 0.0;
        }
        match *self {
            Self::Constant { amplitude, .. } => amplitude,
            Self::RaisedCosine { peak, duration } => 0.5 * peak * (1.0 - (2.0 * PI * t / duration).cos()),
        }
    }

    /// Two-photon pulse area `∫ Ω(t)² dt / (2Δ)`; a full `|A>↔|B>` transfer
    /// needs `π`.
    pub fn raman_area(&self, delta_big: f64) -> f64 {
        let sq = match *self {
            Self::Constant { amplitude, duration } => amplitude * amplitude * duration,
            Self::RaisedCosine { peak, duration } => 3.0 * peak * peak * duration / 8.0,
        };
        sq / (2.0 * delta_big)
    }
}

/// Durations of the three protocol stages in µs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSchedule {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
}

impl PulseSchedule {
    /// `T1 = T3 = π/Ω_r`, `T2 = 16πΔ/(3Ω_e²)`. A stage whose drive is zero has
    /// nothing to time it and gets zero duration.
    pub fn from_params(params: &PhysicalParams) -> Result<Self> {
        params.validate()?;
        let t1 = if params.omega_r > 0.0 { PI / params.omega_r } else { 0.0 };
        let t2 = if params.omega_e > 0.0 { 16.0 * PI * params.delta_big / (3.0 * params.omega_e.powi(2)) } else { 0.0 };
        Self::explicit(t1, t2, t1)
    }

    pub fn explicit(t1: f64, t2: f64, t3: f64) -> Result<Self> {
        for (name, t) in [("t1", t1), ("t2", t2), ("t3", t3)] {
            if !t.is_finite() || t < 0.0 {
                return Err(Error::InvalidParameter { name, reason: format!("stage duration must be finite and non-negative, got {t}") });
            }
        }
        Ok(Self { t1, t2, t3 })
    }

    pub fn total(&self) -> f64 {
        self.t1 + self.t2 + self.t3
    }

    pub fn raman_envelope(&self, params: &PhysicalParams) -> PulseEnvelope {
        PulseEnvelope::RaisedCosine { peak: params.omega_e, duration: self.t2 }
    }
}

/// Time dependence of one Hamiltonian term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Envelope(PulseEnvelope),
    /// `e^{i·rate·t}`
    Phase { rate: f64 },
}

impl Coefficient {
    pub fn at(&self, t: f64) -> C64 {
        match *self {
            Self::Constant(c) => C64::new(c, 0.0),
            Self::Envelope(env) => C64::new(env.evaluate(t), 0.0),
            Self::Phase { rate } => Complex64::from_polar(1.0, rate * t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }
}

/// `H(t) = Σ c_k(t) O_k` with stage-local time `t`.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    layout: SpaceLayout,
    terms: Vec<(Coefficient, Operator)>,
}

impl Hamiltonian {
    pub fn new(layout: SpaceLayout) -> Self {
        Self { layout, terms: Vec::new() }
    }

    pub fn constant(op: Operator) -> Self {
        let layout = op.layout().clone();
        Self { layout, terms: vec![(Coefficient::Constant(1.0), op)] }
    }

    pub fn zero(layout: &SpaceLayout) -> Self {
        Self::new(layout.clone())
    }

    pub fn with_term(mut self, coefficient: Coefficient, op: Operator) -> Result<Self> {
        if op.layout() != &self.layout {
            return Err(Error::LayoutMismatch);
        }
        self.terms.push((coefficient, op));
        Ok(self)
    }

    pub fn layout(&self) -> &SpaceLayout {
        &self.layout
    }

    pub fn terms(&self) -> &[(Coefficient, Operator)] {
        &self.terms
    }

    pub fn at(&self, t: f64) -> Operator {
        let d = self.layout.total_dim();
        let mut m = Matrix::zeros((d, d));
        for (c, op) in &self.terms {
            let z = c.at(t);
            if z != C64::new(0.0, 0.0) {
                m.zip_mut_with(op.matrix(), |acc, &x| *acc += z * x);
            }
        }
        Operator::new(self.layout.clone(), m).expect("terms share the layout")
    }
}

/// One protocol stage.
#[derive(Clone, Debug)]
pub struct Stage {
    pub name: &'static str,
    pub hamiltonian: Hamiltonian,
    pub duration: f64,
}

/// Which frame the stage-2 Hamiltonian is written in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Frame {
    /// Time-independent shift `(V n_r − δ)` on `|R>`.
    Unified,
    /// Explicit `e^{iδt}` on the `|e><R|` coupling and `V n_r` on `|R>`.
    Rotating,
}

fn site_op(layout: &SpaceLayout, site: usize, i: usize, j: usize) -> Operator {
    let d = layout.local_dims()[site];
    embed(&matrix_unit(d, i, j), site, layout).expect("site and levels in range")
}

fn plus_dagger(op: &Operator) -> Operator {
    op.add(&op.dagger()).expect("same layout")
}

/// `Σ_k |r><r|_k`
fn rydberg_number(model: GateModel) -> Operator {
    let layout = model.layout();
    let mut n = Operator::zeros(&layout);
    for &(site, _) in model.controls() {
        n = n.add(&site_op(&layout, site, RYDBERG, RYDBERG)).expect("same layout");
    }
    n
}

fn control_control_term(params: &PhysicalParams, model: GateModel) -> Option<Operator> {
    let shift = params.control_control_shift();
    if shift == 0.0 || model.controls().len() < 2 {
        return None;
    }
    let layout = model.layout();
    let rr = matrix_unit(3, RYDBERG, RYDBERG);
    let op = embed_product(&[(0, &rr), (1, &rr)], &layout).expect("control sites");
    Some(op.scaled(C64::new(shift, 0.0)))
}

/// `(Ω_r/2)(|g_k><r|_k + h.c.)` summed over controls, plus the optional
/// control–control shift. Drives stages 1 and 3.
pub fn control_drive_hamiltonian(params: &PhysicalParams, model: GateModel) -> Operator {
    let layout = model.layout();
    let mut h = Operator::zeros(&layout);
    for &(site, ground) in model.controls() {
        let leg = plus_dagger(&site_op(&layout, site, ground, RYDBERG)).scaled(C64::new(params.omega_r / 2.0, 0.0));
        h = h.add(&leg).expect("same layout");
    }
    if let Some(cc) = control_control_term(params, model) {
        h = h.add(&cc).expect("same layout");
    }
    h
}

/// `(1/2)(|A><e| + |B><e| + h.c.)` on the target; multiplied by `Ω_e(t)`.
fn raman_leg(model: GateModel) -> Operator {
    let layout = model.layout();
    let t = model.target_site();
    let legs = site_op(&layout, t, A, E).add(&site_op(&layout, t, B, E)).expect("same layout");
    plus_dagger(&legs).scaled(C64::new(0.5, 0.0))
}

/// Stage-2 Hamiltonian as a time-dependent operator sum in the chosen frame.
pub fn raman_stage_hamiltonian(
    params: &PhysicalParams,
    model: GateModel,
    schedule: &PulseSchedule,
    frame: Frame,
) -> Hamiltonian {
    let layout = model.layout();
    let t = model.target_site();
    let r_proj = site_op(&layout, t, R, R);
    let n_r_shift = rydberg_number(model).mul(&r_proj).expect("same layout");
    let mut statics = site_op(&layout, t, E, E)
        .scaled(C64::new(-params.delta_big, 0.0))
        .add(&n_r_shift.scaled(C64::new(params.v, 0.0)))
        .expect("same layout");
    if let Some(cc) = control_control_term(params, model) {
        statics = statics.add(&cc).expect("same layout");
    }
    let e_r = site_op(&layout, t, E, R).scaled(C64::new(params.omega_c / 2.0, 0.0));

    let envelope = Coefficient::Envelope(schedule.raman_envelope(params));
    let h = Hamiltonian::new(layout).with_term(envelope, raman_leg(model)).expect("layout");
    match frame {
        Frame::Unified => {
            let statics = statics
                .add(&r_proj.scaled(C64::new(-params.delta_small, 0.0)))
                .and_then(|s| s.add(&plus_dagger(&e_r)))
                .expect("same layout");
            h.with_term(Coefficient::Constant(1.0), statics).expect("layout")
        }
        Frame::Rotating => h
            .with_term(Coefficient::Constant(1.0), statics)
            .and_then(|h| h.with_term(Coefficient::Phase { rate: params.delta_small }, e_r.clone()))
            .and_then(|h| h.with_term(Coefficient::Phase { rate: -params.delta_small }, e_r.dagger()))
            .expect("layout"),
    }
}

/// Stage-2 Hamiltonian at stage time `t ∈ [0, T2]` in the unified frame.
pub fn raman_hamiltonian(params: &PhysicalParams, model: GateModel, t: f64) -> Result<Operator> {
    let schedule = params.schedule()?;
    check_stage_time(t, schedule.t2)?;
    Ok(raman_stage_hamiltonian(params, model, &schedule, Frame::Unified).at(t))
}

/// Stage-2 Hamiltonian at stage time `t` with the explicit `e^{iδt}` phase.
pub fn rotating_frame_raman_hamiltonian(params: &PhysicalParams, model: GateModel, t: f64) -> Result<Operator> {
    let schedule = params.schedule()?;
    check_stage_time(t, schedule.t2)?;
    Ok(raman_stage_hamiltonian(params, model, &schedule, Frame::Rotating).at(t))
}

fn check_stage_time(t: f64, duration: f64) -> Result<()> {
    if !(0.0..=duration).contains(&t) {
        return Err(Error::OutsideStage { t, duration });
    }
    Ok(())
}

/// The three stages: control π pulse, shaped Raman pulse, control π pulse.
pub fn protocol_stages(params: &PhysicalParams, model: GateModel, frame: Frame) -> Result<Vec<Stage>> {
    let schedule = params.schedule()?;
    protocol_stages_with(params, model, &schedule, frame)
}

pub fn protocol_stages_with(
    params: &PhysicalParams,
    model: GateModel,
    schedule: &PulseSchedule,
    frame: Frame,
) -> Result<Vec<Stage>> {
    params.validate()?;
    let drive = Hamiltonian::constant(control_drive_hamiltonian(params, model));
    Ok(vec![
        Stage { name: "control_pi_1", hamiltonian: drive.clone(), duration: schedule.t1 },
        Stage { name: "raman", hamiltonian: raman_stage_hamiltonian(params, model, schedule, frame), duration: schedule.t2 },
        Stage { name: "control_pi_2", hamiltonian: drive, duration: schedule.t3 },
    ])
}

/// Spontaneous-decay jump operators: `√(γ_r/2)|i><r|` per control and ground
/// level, `√γ_R |e><R|` and `√(γ_e/2)|j><e|` for `j ∈ {A, B}` on the target.
/// Active in every stage.
pub fn collapse_operators(params: &PhysicalParams, model: GateModel) -> Vec<Operator> {
    let layout = model.layout();
    let t = model.target_site();
    let mut out = Vec::new();
    let half_r = C64::new((params.gamma_r / 2.0).sqrt(), 0.0);
    for &(site, _) in model.controls() {
        for ground in [GROUND_0, GROUND_1] {
            out.push(site_op(&layout, site, ground, RYDBERG).scaled(half_r));
        }
    }
    out.push(site_op(&layout, t, E, R).scaled(C64::new(params.gamma_big_r.sqrt(), 0.0)));
    let half_e = C64::new((params.gamma_e / 2.0).sqrt(), 0.0);
    for j in [A, B] {
        out.push(site_op(&layout, t, j, E).scaled(half_e));
    }
    out
}

/// Dark states of the zero-shift stage-2 target Hamiltonian.
#[derive(Clone, Debug)]
pub struct DarkStateInfo {
    /// `√2 Ω_e(t) / Ω_c`
    pub y: f64,
    /// `(|A> − |B>)/√2`
    pub d1: StateVector,
    /// `(1+y²)^{-1/2} [(|A> + |B>)/√2 − y|R>]`
    pub d2: StateVector,
}

pub fn dark_states(params: &PhysicalParams, t: f64) -> Result<DarkStateInfo> {
    if !(params.omega_c > 0.0) {
        return Err(Error::InvalidParameter { name: "omega_c", reason: "dark-state mixing ratio undefined for Ω_c = 0".into() });
    }
    let schedule = params.schedule()?;
    check_stage_time(t, schedule.t2)?;
    let y = SQRT_2 * schedule.raman_envelope(params).evaluate(t) / params.omega_c;
    let layout = SpaceLayout::new(vec![4])?;
    let h = 1.0 / SQRT_2;
    let d1 = ndarray::arr1(&[C64::new(h, 0.0), C64::new(-h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0)]);
    let n = 1.0 / (1.0 + y * y).sqrt();
    let d2 = ndarray::arr1(&[C64::new(n * h, 0.0), C64::new(n * h, 0.0), C64::new(0.0, 0.0), C64::new(-n * y, 0.0)]);
    Ok(DarkStateInfo { y, d1: StateVector::new(layout.clone(), d1)?, d2: StateVector::new(layout, d2)? })
}
