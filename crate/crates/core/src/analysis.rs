//! Ideal gates, average gate fidelity, phase-convention fitting and the
//! parameter sweeps over the protocol.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ProtocolInput, QuantumChannel, StepPolicy};
use crate::error::{Error, Result};
use crate::model::{self, levels, DecayRates, GateModel, PhysicalParams};
use crate::opalg::{dagger, kron, pauli, trace, Matrix, C64, ONE, ZERO};

/// Tolerated imaginary part of the fidelity numerator.
pub const IMAG_RESIDUE_TOL: f64 = 1e-9;

/// Orthogonal unitary operator basis with `Tr(P_j† P_k) = d δ_jk`.
#[derive(Clone, Debug)]
pub struct PauliBasis {
    dim: usize,
    elements: Vec<Matrix>,
}

impl PauliBasis {
    /// Pauli strings `{I, X, Y, Z}^⊗n`, first factor most significant, so
    /// `I⊗…⊗I` comes first.
    pub fn qubits(n: usize) -> Self {
        let mut elements = vec![Matrix::from_elem((1, 1), ONE)];
        for _ in 0..n {
            elements = elements.iter().flat_map(|e| (0..4).map(move |k| kron(e, &pauli(k)))).collect();
        }
        Self { dim: 1 << n, elements }
    }

    /// Pauli strings when `d` is a power of two, clock-and-shift operators
    /// `X^a Z^b` otherwise.
    pub fn for_dim(d: usize) -> Self {
        if d.is_power_of_two() {
            return Self::qubits(d.trailing_zeros() as usize);
        }
        let w = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / d as f64);
        let mut elements = Vec::with_capacity(d * d);
        for a in 0..d {
            for b in 0..d {
                elements.push(Matrix::from_shape_fn((d, d), |(i, j)| if i == (j + a) % d { w.powu((b * j) as u32) } else { ZERO }));
            }
        }
        Self { dim: d, elements }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn elements(&self) -> &[Matrix] {
        &self.elements
    }
}

/// Which permutation the ideal gate applies before phase corrections.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// Flip the last qubit iff the other qubits have odd parity.
    ParityX { n_qubits: usize },
    /// Flip the last qubit iff the first qubit is `1`.
    Cnot,
    Identity { n_qubits: usize },
}

impl GateKind {
    pub fn n_qubits(self) -> usize {
        match self {
            Self::ParityX { n_qubits } | Self::Identity { n_qubits } => n_qubits,
            Self::Cnot => 2,
        }
    }

    pub fn dim(self) -> usize {
        1 << self.n_qubits()
    }

    fn image(self, c: usize) -> usize {
        let n = self.n_qubits();
        let controls = c >> 1;
        match self {
            Self::ParityX { .. } => c ^ (controls.count_ones() as usize & 1),
            Self::Cnot => c ^ ((controls >> (n - 2)) & 1),
            Self::Identity { .. } => c,
        }
    }

    /// Number of phase parameters: one Z phase per control, an odd-parity
    /// sector phase when there are at least two controls, and target Z
    /// phases before and after the flip.
    pub fn n_phase_params(self) -> usize {
        let controls = self.n_qubits() - 1;
        controls + usize::from(controls >= 2) + 2
    }

    /// Labels of the phase parameters in order.
    pub fn phase_names(self) -> Vec<String> {
        let controls = self.n_qubits() - 1;
        let mut names: Vec<String> = (1..=controls).map(|k| format!("z{k}")).collect();
        if controls >= 2 {
            names.push("theta_odd".into());
        }
        names.push("zt_pre".into());
        names.push("zt_post".into());
        names
    }
}

/// Permutation gate dressed by diagonal phases: `U = D_post P D_pre`, with
/// the control and sector phases in `D_pre`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdealGate {
    pub kind: GateKind,
    pub phases: Vec<f64>,
}

impl IdealGate {
    pub fn new(kind: GateKind) -> Self {
        Self { kind, phases: vec![0.0; kind.n_phase_params()] }
    }

    pub fn parity() -> Self {
        Self::new(GateKind::ParityX { n_qubits: 3 })
    }

    pub fn cnot() -> Self {
        Self::new(GateKind::Cnot)
    }

    pub fn with_phases(kind: GateKind, phases: Vec<f64>) -> Result<Self> {
        if phases.len() != kind.n_phase_params() {
            return Err(Error::DimensionMismatch { expected: kind.n_phase_params(), found: phases.len() });
        }
        Ok(Self { kind, phases })
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    fn pre_phase(&self, c: usize) -> f64 {
        let n = self.kind.n_qubits();
        let controls = n - 1;
        let bits = |k: usize| ((c >> (n - 1 - k)) & 1) as f64;
        let mut phi: f64 = (0..controls).map(|k| self.phases[k] * bits(k)).sum();
        let mut next = controls;
        if controls >= 2 {
            phi += self.phases[next] * (((c >> 1).count_ones() & 1) as f64);
            next += 1;
        }
        phi + self.phases[next] * (c & 1) as f64
    }

    fn post_phase(&self, out: usize) -> f64 {
        self.phases[self.phases.len() - 1] * (out & 1) as f64
    }

    /// Column `c` has one entry `u_c` at row `π(c)`.
    pub fn monomial(&self) -> (Vec<usize>, Vec<C64>) {
        let d = self.dim();
        let perm: Vec<usize> = (0..d).map(|c| self.kind.image(c)).collect();
        let u = (0..d).map(|c| C64::from_polar(1.0, self.pre_phase(c) + self.post_phase(perm[c]))).collect();
        (perm, u)
    }

    pub fn unitary(&self) -> Matrix {
        let d = self.dim();
        let (perm, u) = self.monomial();
        let mut m = Matrix::zeros((d, d));
        for c in 0..d {
            m[[perm[c], c]] = u[c];
        }
        m
    }

    pub fn channel(&self) -> QuantumChannel {
        QuantumChannel::from_unitary(&self.unitary())
    }

    /// Same gate without the odd-parity sector phase, leaving only
    /// single-qubit Z phases (which can be absorbed into neighbouring
    /// single-qubit gates).
    pub fn local_only(&self) -> IdealGate {
        let mut g = self.clone();
        let controls = self.kind.n_qubits() - 1;
        if controls >= 2 {
            g.phases[controls] = 0.0;
        }
        g
    }

    /// Undoes the diagonal dressing: `Ad(D_post†) ∘ ε ∘ Ad(D_pre†)`, which is
    /// close to the bare permutation when `ε` is close to this gate.
    pub fn strip_phases(&self, channel: &QuantumChannel) -> Result<QuantumChannel> {
        let d = self.dim();
        if channel.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, found: channel.dim() });
        }
        let pre = Matrix::from_shape_fn((d, d), |(i, j)| if i == j { C64::from_polar(1.0, -self.pre_phase(i)) } else { ZERO });
        let post = Matrix::from_shape_fn((d, d), |(i, j)| if i == j { C64::from_polar(1.0, -self.post_phase(i)) } else { ZERO });
        QuantumChannel::from_unitary(&post).after(&channel.after(&QuantumChannel::from_unitary(&pre))?)
    }
}

/// `F = (Σ_j Tr[U P_j† U† ε(P_j)] + d²) / (d²(d+1))`, evaluated term by term
/// over the operator basis.
pub fn average_gate_fidelity(channel: &QuantumChannel, ideal: &Matrix) -> Result<f64> {
    let d = channel.dim();
    if ideal.dim() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, found: ideal.nrows() });
    }
    let basis = PauliBasis::for_dim(d);
    let ud = dagger(ideal);
    let mut sum = ZERO;
    for p in basis.elements() {
        let out = channel.apply(p);
        sum += trace(&ideal.dot(&dagger(p)).dot(&ud).dot(&out));
    }
    let d2 = (d * d) as f64;
    if sum.im.abs() > IMAG_RESIDUE_TOL * d2 {
        return Err(Error::Tolerance(format!("fidelity numerator has imaginary part {:e}", sum.im)));
    }
    Ok((sum.re + d2) / (d2 * (d as f64 + 1.0)))
}

/// Same value through `Σ_j Tr[U P_j† U† ε(P_j)] = d Tr(S_U† S_ε)`, using the
/// sparsity of a monomial ideal gate.
pub fn monomial_fidelity(channel: &QuantumChannel, ideal: &IdealGate) -> f64 {
    let d = channel.dim();
    let (perm, u) = ideal.monomial();
    let s = channel.superoperator();
    let mut tr = ZERO;
    for c in 0..d {
        for e in 0..d {
            let su = u[c] * u[e].conj();
            tr += su.conj() * s[[perm[c] + d * perm[e], c + d * e]];
        }
    }
    let df = d as f64;
    (df * tr.re + df * df) / (df * df * (df + 1.0))
}

/// Fidelity with the undressed gate and with the best phase dressing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseFit {
    pub ideal: IdealGate,
    pub zero_phase_fidelity: f64,
    pub fidelity: f64,
}

/// Maximizes the fidelity over the diagonal phases of `kind`: a coarse grid in
/// steps of π/2, then compass search down to 1e-10 rad. The result is
/// re-evaluated with the term-by-term formula.
pub fn optimize_phase_convention(channel: &QuantumChannel, kind: GateKind) -> Result<PhaseFit> {
    if channel.dim() != kind.dim() {
        return Err(Error::DimensionMismatch { expected: kind.dim(), found: channel.dim() });
    }
    let n = kind.n_phase_params();
    let eval = |phases: &[f64]| monomial_fidelity(channel, &IdealGate { kind, phases: phases.to_vec() });
    let zero = IdealGate::new(kind);
    let zero_phase_fidelity = average_gate_fidelity(channel, &zero.unitary())?;

    let grid = [0.0, 0.5, 1.0, 1.5].map(|x| x * std::f64::consts::PI);
    let mut best = vec![0.0; n];
    let mut best_f = eval(&best);
    let mut idx = vec![0usize; n];
    'grid: loop {
        let p: Vec<f64> = idx.iter().map(|&i| grid[i]).collect();
        let f = eval(&p);
        if f > best_f {
            best_f = f;
            best = p;
        }
        for k in 0..n {
            idx[k] += 1;
            if idx[k] < grid.len() {
                continue 'grid;
            }
            idx[k] = 0;
        }
        break;
    }

    let mut step = std::f64::consts::FRAC_PI_4;
    while step > 1e-10 {
        let mut improved = false;
        for k in 0..n {
            for sign in [1.0, -1.0] {
                let mut trial = best.clone();
                trial[k] += sign * step;
                let f = eval(&trial);
                if f > best_f {
                    best_f = f;
                    best = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    for p in &mut best {
        *p = p.rem_euclid(2.0 * std::f64::consts::PI);
    }
    let ideal = IdealGate { kind, phases: best };
    let fidelity = average_gate_fidelity(channel, &ideal.unitary())?.max(zero_phase_fidelity);
    Ok(PhaseFit { ideal, zero_phase_fidelity, fidelity })
}

// ---------------------------------------------------------------------------
// sweeps

/// Reproducibility record attached to every sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub params_hash: String,
    pub points_per_period: f64,
    /// Largest integrator step over all grid points, µs.
    pub max_step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: String,
    pub axis_values: Vec<f64>,
    /// Metric columns in output order.
    pub metrics: Vec<(String, Vec<f64>)>,
    pub fixed: BTreeMap<String, f64>,
    pub provenance: Provenance,
}

impl SweepResult {
    pub fn new(axis: &str, axis_values: Vec<f64>, template: &PhysicalParams, policy: &StepPolicy) -> Self {
        let fixed = params_record(template);
        Self {
            axis: axis.into(),
            axis_values,
            metrics: Vec::new(),
            provenance: Provenance {
                params_hash: crate::output::params_hash(template),
                points_per_period: policy.points_per_period,
                max_step: 0.0,
            },
            fixed,
        }
    }

    pub fn push_metric(&mut self, name: &str, values: Vec<f64>) -> Result<()> {
        if values.len() != self.axis_values.len() {
            return Err(Error::DimensionMismatch { expected: self.axis_values.len(), found: values.len() });
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Tolerance(format!("metric `{name}` has non-finite value {bad}")));
        }
        self.metrics.push((name.into(), values));
        Ok(())
    }

    pub fn metric(&self, name: &str) -> Option<&[f64]> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

pub fn params_record(p: &PhysicalParams) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("omega_e".into(), p.omega_e);
    m.insert("omega_c".into(), p.omega_c);
    m.insert("omega_r".into(), p.omega_r);
    m.insert("delta_big".into(), p.delta_big);
    m.insert("delta_small".into(), p.delta_small);
    m.insert("v".into(), p.v);
    m.insert("gamma_r".into(), p.gamma_r);
    m.insert("gamma_big_r".into(), p.gamma_big_r);
    m.insert("gamma_e".into(), p.gamma_e);
    m.insert("spacing".into(), p.spacing);
    m.insert("control_control".into(), f64::from(u8::from(p.control_control)));
    if let Some(c6) = p.c6 {
        m.insert("c6".into(), c6);
    }
    m
}

fn max_step(params: &[PhysicalParams], policy: &StepPolicy) -> f64 {
    params
        .iter()
        .filter_map(|p| p.schedule().ok().map(|s| (p, s)))
        .flat_map(|(p, s)| {
            let w = p.max_frequency();
            [s.t1, s.t2, s.t3].map(move |t| {
                let n = policy.steps_for(t, w);
                if n == 0 { 0.0 } else { t / n as f64 }
            })
        })
        .fold(0.0, f64::max)
}

/// Probability that the target ends in `level`, for one labelled input.
fn target_probability(p: &PhysicalParams, label: &str, level: usize, dissipative: bool, policy: &StepPolicy) -> Result<f64> {
    let out = dynamics::run_protocol(p, GateModel::Parity, &ProtocolInput::Label(label.into()), dissipative, policy)?;
    Ok(out.target_population(GateModel::Parity, level))
}

fn population_sweep(
    axis: &str,
    grid: &[f64],
    template: &PhysicalParams,
    vary: impl Fn(&PhysicalParams, f64) -> PhysicalParams + Sync,
    label: &str,
    level: usize,
    metric: &str,
    dissipative: bool,
    policy: &StepPolicy,
) -> Result<SweepResult> {
    let points: Vec<PhysicalParams> = grid.iter().map(|&x| vary(template, x)).collect();
    let values = points
        .par_iter()
        .map(|p| target_probability(p, label, level, dissipative, policy))
        .collect::<Result<Vec<_>>>()?;
    let mut res = SweepResult::new(axis, grid.to_vec(), template, policy);
    res.provenance.max_step = max_step(&points, policy);
    res.push_metric(metric, values)?;
    Ok(res)
}

/// Even-parity input `00A`: probability that the target stays in `A`
/// against `Ω_c/Ω_e`.
pub fn retention_vs_coupling_ratio(template: &PhysicalParams, ratios: &[f64], dissipative: bool, policy: &StepPolicy) -> Result<SweepResult> {
    population_sweep(
        "omega_c_over_omega_e",
        ratios,
        template,
        |p, r| PhysicalParams { omega_c: r * p.omega_e, ..p.clone() },
        "00A",
        levels::A,
        "retention",
        dissipative,
        policy,
    )
}

/// Input `10A` (no control in the Rydberg level): transfer to `B` against
/// the two-photon detuning `δ`, other parameters fixed.
pub fn transfer_vs_delta(template: &PhysicalParams, deltas: &[f64], dissipative: bool, policy: &StepPolicy) -> Result<SweepResult> {
    population_sweep(
        "delta_small",
        deltas,
        template,
        |p, d| PhysicalParams { delta_small: d, ..p.clone() },
        "10A",
        levels::B,
        "transfer",
        dissipative,
        policy,
    )
}

/// Input `01A` (both controls in the Rydberg level): transfer to `B` against
/// `V`, with `δ = V`.
pub fn transfer_vs_v(template: &PhysicalParams, vs: &[f64], dissipative: bool, policy: &StepPolicy) -> Result<SweepResult> {
    population_sweep(
        "v",
        vs,
        template,
        |p, v| PhysicalParams { v, delta_small: v, ..p.clone() },
        "01A",
        levels::B,
        "transfer",
        dissipative,
        policy,
    )
}

/// Phase-fitted fidelity of the realized gate for each parameter point.
pub fn gate_fidelities(points: &[PhysicalParams], dissipative: bool, policy: &StepPolicy) -> Result<Vec<PhaseFit>> {
    let kind = GateKind::ParityX { n_qubits: 3 };
    points
        .par_iter()
        .map(|p| {
            let ch = dynamics::extract_channel(p, GateModel::Parity, dissipative, policy)?;
            optimize_phase_convention(&ch, kind)
        })
        .collect()
}

fn fidelity_sweep(
    axis: &str,
    grid: Vec<f64>,
    template: &PhysicalParams,
    points: Vec<PhysicalParams>,
    dissipative: bool,
    policy: &StepPolicy,
) -> Result<SweepResult> {
    let fits = gate_fidelities(&points, dissipative, policy)?;
    let mut res = SweepResult::new(axis, grid, template, policy);
    res.provenance.max_step = max_step(&points, policy);
    res.push_metric("fidelity", fits.iter().map(|f| f.fidelity).collect())?;
    res.push_metric("fidelity_zero_phase", fits.iter().map(|f| f.zero_phase_fidelity).collect())?;
    Ok(res)
}

/// Fidelity against total gate time: `Ω_e` is varied with every ratio held
/// fixed, so `T_total ∝ 1/Ω_e`.
pub fn fidelity_vs_gate_time(template: &PhysicalParams, omega_e_grid: &[f64], dissipative: bool, policy: &StepPolicy) -> Result<SweepResult> {
    let points: Vec<PhysicalParams> = omega_e_grid
        .iter()
        .map(|&w| {
            if !(w > 0.0) {
                return Err(Error::InvalidParameter { name: "omega_e", reason: format!("gate-time sweep needs a positive drive, got {w}") });
            }
            Ok(template.scale_frequencies(w / template.omega_e))
        })
        .collect::<Result<_>>()?;
    let times = points.iter().map(|p| p.schedule().map(|s| s.total())).collect::<Result<Vec<_>>>()?;
    let mut res = fidelity_sweep("t_total", times, template, points, dissipative, policy)?;
    res.push_metric("omega_e", omega_e_grid.to_vec())?;
    Ok(res)
}

/// Fidelity against `V/Ω_c` with `δ = V` and `Ω_c` fixed.
pub fn blockade_scan(template: &PhysicalParams, v_over_omega_c: &[f64], dissipative: bool, policy: &StepPolicy) -> Result<SweepResult> {
    let points: Vec<PhysicalParams> = v_over_omega_c
        .iter()
        .map(|&x| {
            let v = x * template.omega_c;
            PhysicalParams { v, delta_small: v, ..template.clone() }
        })
        .collect();
    fidelity_sweep("v_over_omega_c", v_over_omega_c.to_vec(), template, points, dissipative, policy)
}

/// Smallest `V/Ω_c` in `[lo, hi]` at which the fitted fidelity reaches
/// `target`, by bisection to `tol`. Assumes `F(V)` crosses `target` once
/// inside the bracket.
pub fn blockade_for_fidelity(
    template: &PhysicalParams,
    target: f64,
    bracket: (f64, f64),
    tol: f64,
    dissipative: bool,
    policy: &StepPolicy,
) -> Result<f64> {
    let f = |x: f64| -> Result<f64> { Ok(blockade_scan(template, &[x], dissipative, policy)?.metrics[0].1[0]) };
    let (mut lo, mut hi) = bracket;
    if !(lo < hi && tol > 0.0) {
        return Err(Error::InvalidInput(format!("bad bracket [{lo}, {hi}] or tolerance {tol}")));
    }
    let (flo, fhi) = (f(lo)?, f(hi)?);
    if flo >= target || fhi < target {
        return Err(Error::InvalidInput(format!("F = {flo} at V/Ω_c = {lo} and {fhi} at {hi} do not bracket {target}")));
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if f(mid)? >= target {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `V(l) = C6 / l⁶` over a spacing grid.
pub fn vdw_curve(c6: f64, spacings: &[f64]) -> Result<SweepResult> {
    let values = spacings.iter().map(|&l| model::vdw_shift(c6, l)).collect::<Result<Vec<_>>>()?;
    let template = PhysicalParams { c6: Some(c6), ..PhysicalParams::cesium_default() };
    let mut res = SweepResult::new("spacing_um", spacings.to_vec(), &template, &StepPolicy::default());
    res.fixed = BTreeMap::from([("c6".to_string(), c6)]);
    res.push_metric("v", values)?;
    Ok(res)
}

/// Power-law fit `y ≈ a x^k` by least squares in log-log space; returns
/// `(k, a)`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let pts: Vec<(f64, f64)> = x.iter().zip(y).filter(|(a, b)| **a > 0.0 && **b > 0.0).map(|(a, b)| (a.ln(), b.ln())).collect();
    if pts.len() < 2 {
        return Err(Error::InvalidInput("log-log fit needs at least two positive points".into()));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(sx, sy), (a, b)| (sx + a / n, sy + b / n));
    let sxx: f64 = pts.iter().map(|(a, _)| (a - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidInput("log-log fit needs distinct x values".into()));
    }
    let k = sxy / sxx;
    Ok((k, (my - k * mx).exp()))
}

/// Power law of the blockade error: infidelity above the `V → ∞` floor
/// (`floor_fidelity`, taken at a large `V`) against `Ω_c/V`, over the points
/// with `V/Ω_c ≥ min_ratio`. Returns `(k, a)` of `a (Ω_c/V)^k`.
pub fn blockade_tail_fit(v_over_omega_c: &[f64], fidelity: &[f64], floor_fidelity: f64, min_ratio: f64) -> Result<(f64, f64)> {
    let (x, y): (Vec<f64>, Vec<f64>) = v_over_omega_c
        .iter()
        .zip(fidelity)
        .filter(|(r, _)| **r >= min_ratio)
        .map(|(r, f)| (1.0 / r, floor_fidelity - f))
        .unzip();
    log_log_fit(&x, &y)
}

/// Default grid of `Ω_e` values whose gate times span 0.1–2 µs.
pub fn default_gate_time_grid(template: &PhysicalParams) -> Vec<f64> {
    let t0 = template.schedule().map(|s| s.total()).unwrap_or(0.3);
    [0.1, 0.15, 0.2, 0.25, 0.3, 0.4, 0.5, 0.7, 1.0, 1.5, 2.0].iter().map(|t| template.omega_e * t0 / t).collect()
}

/// The decay-free counterpart of a template.
pub fn closed(template: &PhysicalParams) -> PhysicalParams {
    template.clone().with_decay(DecayRates::none())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::vectorize;
    use crate::opalg::{identity, max_abs_diff};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unitary(d: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let g = nalgebra::DMatrix::<C64>::from_fn(d, d, |_, _| C64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
        let q = g.qr().q();
        Matrix::from_shape_fn((d, d), |(i, j)| q[(i, j)])
    }

    #[test]
    fn pauli_basis_is_orthogonal() {
        let b = PauliBasis::qubits(3);
        assert_eq!(b.elements().len(), 64);
        assert!(max_abs_diff(&b.elements()[0], &identity(8)) == 0.0);
        for (j, pj) in b.elements().iter().enumerate() {
            for (k, pk) in b.elements().iter().enumerate() {
                let t = trace(&dagger(pj).dot(pk));
                let want = if j == k { 8.0 } else { 0.0 };
                assert!((t - C64::new(want, 0.0)).norm() < 1e-12);
            }
        }
        let w = PauliBasis::for_dim(3);
        for (j, pj) in w.elements().iter().enumerate() {
            for (k, pk) in w.elements().iter().enumerate() {
                let t = trace(&dagger(pj).dot(pk));
                assert!((t.norm() - if j == k { 3.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parity_truth_table() {
        let u = IdealGate::parity().unitary();
        assert!(max_abs_diff(&dagger(&u).dot(&u), &identity(8)) < 1e-12);
        for c in 0..8usize {
            let (c1, c2, t) = (c >> 2, (c >> 1) & 1, c & 1);
            let out = (c1 << 2) | (c2 << 1) | (t ^ (c1 ^ c2));
            assert_eq!(u[[out, c]], ONE);
        }
        let u = IdealGate::cnot().unitary();
        for (c, out) in [(0, 0), (1, 1), (2, 3), (3, 2)] {
            assert_eq!(u[[out, c]], ONE);
        }
    }

    #[test]
    fn ideal_channel_has_unit_fidelity() {
        let g = IdealGate::parity();
        assert!((average_gate_fidelity(&g.channel(), &g.unitary()).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn depolarizing_gives_one_over_d() {
        let ch = QuantumChannel::completely_depolarizing(8);
        let f = average_gate_fidelity(&ch, &IdealGate::parity().unitary()).unwrap();
        assert!((f - 0.125).abs() < 1e-14);
    }

    #[test]
    fn z_rotation_single_qubit() {
        let z = Matrix::from_shape_fn((2, 2), |(i, j)| {
            if i != j {
                ZERO
            } else {
                C64::from_polar(1.0, if i == 0 { -std::f64::consts::FRAC_PI_4 } else { std::f64::consts::FRAC_PI_4 })
            }
        });
        let f = average_gate_fidelity(&QuantumChannel::from_unitary(&z), &identity(2)).unwrap();
        assert!((f - 2.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn unitary_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [2usize, 3, 8] {
            for _ in 0..5 {
                let u = random_unitary(d, &mut rng);
                let v = random_unitary(d, &mut rng);
                let f_pro = trace(&dagger(&u).dot(&v)).norm_sqr() / (d * d) as f64;
                let want = (d as f64 * f_pro + 1.0) / (d as f64 + 1.0);
                let f = average_gate_fidelity(&QuantumChannel::from_unitary(&v), &u).unwrap();
                assert!((f - want).abs() < 1e-9, "d={d}");
            }
        }
    }

    #[test]
    fn fast_form_matches_literal() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_unitary(8, &mut rng);
        let ch = QuantumChannel::from_unitary(&v);
        let g = IdealGate::with_phases(GateKind::ParityX { n_qubits: 3 }, vec![0.3, -1.2, 2.0, 0.1, 0.7]).unwrap();
        let a = average_gate_fidelity(&ch, &g.unitary()).unwrap();
        assert!((a - monomial_fidelity(&ch, &g)).abs() < 1e-12);
    }

    #[test]
    fn even_sector_sign_is_absorbed() {
        let mut u = IdealGate::parity().unitary();
        for c in 0..8usize {
            if ((c >> 2) ^ ((c >> 1) & 1)) == 0 {
                for r in 0..8 {
                    u[[r, c]] = -u[[r, c]];
                }
            }
        }
        let fit = optimize_phase_convention(&QuantumChannel::from_unitary(&u), GateKind::ParityX { n_qubits: 3 }).unwrap();
        assert!(fit.zero_phase_fidelity < 1.0 - 1e-3);
        assert!((fit.fidelity - 1.0).abs() < 1e-12);
    }

    #[test]
    fn exact_gate_needs_no_phases() {
        let fit = optimize_phase_convention(&IdealGate::parity().channel(), GateKind::ParityX { n_qubits: 3 }).unwrap();
        assert!((fit.fidelity - 1.0).abs() < 1e-12);
        for p in &fit.ideal.phases {
            let wrapped = p.rem_euclid(2.0 * std::f64::consts::PI);
            assert!(wrapped < 1e-8 || (2.0 * std::f64::consts::PI - wrapped) < 1e-8);
        }
    }

    #[test]
    fn strip_phases_recovers_permutation() {
        let g = IdealGate::with_phases(GateKind::Cnot, vec![0.4, 1.1, -0.6]).unwrap();
        let stripped = g.strip_phases(&g.channel()).unwrap();
        assert!(max_abs_diff(stripped.superoperator(), IdealGate::cnot().channel().superoperator()) < 1e-12);
    }

    #[test]
    fn log_log_fit_recovers_exponent() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-2.0)).collect();
        let (k, a) = log_log_fit(&x, &y).unwrap();
        assert!((k + 2.0).abs() < 1e-12 && (a - 3.0).abs() < 1e-12);
    }

    #[test]
    fn vdw_curve_sixth_power() {
        let r = vdw_curve(5.0e6, &[5.0, 10.0]).unwrap();
        let v = r.metric("v").unwrap();
        assert!((v[1] - v[0] / 64.0).abs() < 1e-12 * v[0]);
        assert!(vdw_curve(0.0, &[5.0, 9.3]).unwrap().metric("v").unwrap().iter().all(|&x| x == 0.0));
    }

    proptest! {
        #[test]
        fn relabeling_symmetry(seed in 0u64..1000, perm_seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let v = random_unitary(8, &mut rng);
            let u = random_unitary(8, &mut rng);
            let mut order: Vec<usize> = (0..8).collect();
            let mut prng = ChaCha8Rng::seed_from_u64(perm_seed);
            for i in (1..8).rev() {
                order.swap(i, prng.gen_range(0..=i));
            }
            let p = Matrix::from_shape_fn((8, 8), |(i, j)| if order[j] == i { ONE } else { ZERO });
            let conj = |m: &Matrix| p.dot(m).dot(&dagger(&p));
            let ch = QuantumChannel::from_unitary(&v);
            let ch_p = QuantumChannel::from_unitary(&p).after(&ch.after(&QuantumChannel::from_unitary(&dagger(&p))).unwrap()).unwrap();
            let f = average_gate_fidelity(&ch, &u).unwrap();
            let fp = average_gate_fidelity(&ch_p, &conj(&u)).unwrap();
            prop_assert!((f - fp).abs() < 1e-9);
        }

        #[test]
        fn optimized_never_below_zero_phase(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ch = QuantumChannel::from_unitary(&random_unitary(4, &mut rng));
            let fit = optimize_phase_convention(&ch, GateKind::Cnot).unwrap();
            prop_assert!(fit.fidelity >= fit.zero_phase_fidelity);
        }
    }

    #[test]
    fn vectorization_matches_channel_apply() {
        let g = IdealGate::parity();
        let rho = crate::opalg::matrix_unit(8, 5, 2);
        let direct = g.unitary().dot(&rho).dot(&dagger(&g.unitary()));
        assert!(max_abs_diff(&g.channel().apply(&rho), &direct) < 1e-14);
        assert_eq!(vectorize(&rho)[5], ZERO);
    }
}
