//! Small density-matrix circuit simulator (up to four qubits) driven by the
//! pulse-level gate channels.
//!
//! Qubit 0 is the most significant bit of a register index. On the target
//! atom `|A>` encodes `|0>` and `|B>` encodes `|1>`.

use std::f64::consts::FRAC_1_SQRT_2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{optimize_phase_convention, GateKind, IdealGate, PhaseFit};
use crate::dynamics::{self, QuantumChannel, StepPolicy};
use crate::error::{Error, Result};
use crate::model::{GateModel, PhysicalParams, PulseSchedule};
use crate::opalg::{dagger, trace, Matrix, C64, ONE, ZERO};

pub const MAX_QUBITS: usize = 4;

/// Tolerance on `Σ p_unnormalized + leakage = 1`.
pub const BOOKKEEPING_TOL: f64 = 1e-8;

pub fn hadamard() -> Matrix {
    let h = C64::new(FRAC_1_SQRT_2, 0.0);
    Matrix::from_shape_vec((2, 2), vec![h, h, h, -h]).expect("2x2")
}

pub fn pauli_x() -> Matrix {
    Matrix::from_shape_vec((2, 2), vec![ZERO, ONE, ONE, ZERO]).expect("2x2")
}

/// `exp(−iθZ/2)`
pub fn rz(theta: f64) -> Matrix {
    Matrix::from_shape_vec((2, 2), vec![C64::from_polar(1.0, -theta / 2.0), ZERO, ZERO, C64::from_polar(1.0, theta / 2.0)])
        .expect("2x2")
}

#[derive(Clone, Debug)]
pub enum Gate {
    /// Noiseless single-qubit unitary.
    Unitary { site: usize, matrix: Matrix },
    /// Channel on `sites` in the channel's own qubit order.
    Channel { sites: Vec<usize>, channel: QuantumChannel },
}

impl Gate {
    pub fn unitary(site: usize, matrix: Matrix) -> Self {
        Self::Unitary { site, matrix }
    }

    pub fn channel(sites: &[usize], channel: QuantumChannel) -> Self {
        Self::Channel { sites: sites.to_vec(), channel }
    }

    fn sites(&self) -> Vec<usize> {
        match self {
            Self::Unitary { site, .. } => vec![*site],
            Self::Channel { sites, .. } => sites.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CircuitSpec {
    n_qubits: usize,
    gates: Vec<Gate>,
}

impl CircuitSpec {
    pub fn new(n_qubits: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::InvalidInput(format!("register size must be 1..={MAX_QUBITS}, got {n_qubits}")));
        }
        Ok(Self { n_qubits, gates: Vec::new() })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn push(&mut self, gate: Gate) -> Result<&mut Self> {
        check_sites(&gate, self.n_qubits)?;
        self.gates.push(gate);
        Ok(self)
    }

    pub fn gates(&self) -> &[Gate] {
        &self.gates
    }

    pub fn run(&self, rho0: &Matrix) -> Result<Matrix> {
        let d = 1 << self.n_qubits;
        if rho0.dim() != (d, d) {
            return Err(Error::DimensionMismatch { expected: d, found: rho0.nrows() });
        }
        let mut rho = rho0.clone();
        for g in &self.gates {
            rho = apply_gate(&rho, g, self.n_qubits)?;
        }
        Ok(rho)
    }
}

fn check_sites(gate: &Gate, n: usize) -> Result<()> {
    let sites = gate.sites();
    let mut seen = vec![false; n];
    for &s in &sites {
        if s >= n || std::mem::replace(&mut seen[s], true) {
            return Err(Error::InvalidInput(format!("gate sites {sites:?} invalid for a {n}-qubit register")));
        }
    }
    let arity = match gate {
        Gate::Unitary { matrix, .. } => matrix.nrows(),
        Gate::Channel { channel, .. } => channel.dim(),
    };
    if arity != 1 << sites.len() {
        return Err(Error::DimensionMismatch { expected: 1 << sites.len(), found: arity });
    }
    Ok(())
}

/// Splits a register index into the gate-local index (bits of `sites`, first
/// site most significant) and the index of the remaining qubits.
fn split(index: usize, sites: &[usize], n: usize) -> (usize, usize) {
    let mut local = 0;
    let mut rest = 0;
    for q in 0..n {
        let bit = (index >> (n - 1 - q)) & 1;
        if !sites.contains(&q) {
            rest = (rest << 1) | bit;
        }
    }
    for &q in sites {
        local = (local << 1) | ((index >> (n - 1 - q)) & 1);
    }
    (local, rest)
}

/// Applies a gate to an `n`-qubit density matrix by acting on the blocks
/// that share the spectator indices.
pub fn apply_gate(rho: &Matrix, gate: &Gate, n: usize) -> Result<Matrix> {
    check_sites(gate, n)?;
    let d = 1 << n;
    if rho.dim() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, found: rho.nrows() });
    }
    let sites = gate.sites();
    let k = 1 << sites.len();
    let m = d / k;
    let mut index = vec![vec![0usize; m]; k];
    for i in 0..d {
        let (a, c) = split(i, &sites, n);
        index[a][c] = i;
    }
    let mut out = Matrix::zeros((d, d));
    for c in 0..m {
        for e in 0..m {
            let block = Matrix::from_shape_fn((k, k), |(a, b)| rho[[index[a][c], index[b][e]]]);
            if block.iter().all(|z| *z == ZERO) {
                continue;
            }
            let img = match gate {
                Gate::Unitary { matrix, .. } => matrix.dot(&block).dot(&dagger(matrix)),
                Gate::Channel { channel, .. } => channel.apply(&block),
            };
            for a in 0..k {
                for b in 0..k {
                    out[[index[a][c], index[b][e]]] = img[[a, b]];
                }
            }
        }
    }
    Ok(out)
}

/// `Tr_q ρ`
pub fn partial_trace(rho: &Matrix, qubit: usize, n: usize) -> Result<Matrix> {
    if qubit >= n || n < 2 {
        return Err(Error::InvalidInput(format!("cannot trace qubit {qubit} of {n}")));
    }
    let d = 1 << n;
    let m = d / 2;
    let mut out = Matrix::zeros((m, m));
    for i in 0..d {
        for j in 0..d {
            let (bi, ri) = split(i, &[qubit], n);
            let (bj, rj) = split(j, &[qubit], n);
            if bi == bj {
                out[[ri, rj]] += rho[[i, j]];
            }
        }
    }
    Ok(out)
}

pub fn product_state(bits: &[usize]) -> Matrix {
    let n = bits.len();
    let idx = bits.iter().fold(0, |acc, &b| (acc << 1) | (b & 1));
    let d = 1 << n;
    Matrix::from_shape_fn((d, d), |(i, j)| if i == idx && j == idx { ONE } else { ZERO })
}

pub fn purity(rho: &Matrix) -> f64 {
    trace(&rho.dot(rho)).re
}

// ---------------------------------------------------------------------------
// gate channels

/// Two-atom reduction of the protocol: one control, `δ = 0`, same Raman stage.
pub fn cnot_params(rpg: &PhysicalParams) -> PhysicalParams {
    PhysicalParams { delta_small: 0.0, control_control: false, ..rpg.clone() }
}

/// Realized two-qubit gate on `(control, target)`.
pub fn cnot_channel(params: &PhysicalParams, dissipative: bool, policy: &StepPolicy) -> Result<QuantumChannel> {
    dynamics::extract_channel(params, GateModel::Controlled, dissipative, policy)
}

#[derive(Clone, Debug)]
pub struct GateRecord {
    pub channel: QuantumChannel,
    pub duration: f64,
    pub fit: PhaseFit,
    pub mean_leakage: f64,
}

/// Which fitted diagonal phases are removed from a realized gate before it
/// enters a circuit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseCorrection {
    /// Raw channel.
    None,
    /// Single-qubit Z phases only.
    Local,
    /// Every phase of the fitted family, including the odd-parity sector
    /// phase of the parity gate.
    #[default]
    Full,
}

/// Noisy RPG and CNOT channels for one per-gate duration.
#[derive(Clone, Debug)]
pub struct GateChannelSet {
    pub rpg: GateRecord,
    pub cnot: GateRecord,
    pub correction: PhaseCorrection,
}

fn record(channel: QuantumChannel, duration: f64, kind: GateKind, correction: PhaseCorrection) -> Result<GateRecord> {
    let report = channel.report();
    if !report.completely_positive || !report.trace_nonincreasing {
        return Err(Error::Tolerance(format!("extracted channel fails CP/trace checks: {report:?}")));
    }
    let fit = optimize_phase_convention(&channel, kind)?;
    let channel = match correction {
        PhaseCorrection::None => channel,
        PhaseCorrection::Local => fit.ideal.local_only().strip_phases(&channel)?,
        PhaseCorrection::Full => fit.ideal.strip_phases(&channel)?,
    };
    let mean_leakage = channel.leakage().iter().sum::<f64>() / channel.dim() as f64;
    Ok(GateRecord { channel, duration, fit, mean_leakage })
}

impl GateChannelSet {
    pub fn extract(rpg_params: &PhysicalParams, dissipative: bool, correction: PhaseCorrection, policy: &StepPolicy) -> Result<Self> {
        Self::extract_pair(rpg_params, &cnot_params(rpg_params), dissipative, correction, policy)
    }

    /// RPG and CNOT from separate parameter points (e.g. different durations).
    pub fn extract_pair(
        rpg_params: &PhysicalParams,
        cnot_params: &PhysicalParams,
        dissipative: bool,
        correction: PhaseCorrection,
        policy: &StepPolicy,
    ) -> Result<Self> {
        let (rpg, cnot) = rayon::join(
            || dynamics::extract_channel(rpg_params, GateModel::Parity, dissipative, policy),
            || cnot_channel(cnot_params, dissipative, policy),
        );
        Ok(Self {
            rpg: record(rpg?, rpg_params.schedule()?.total(), GateKind::ParityX { n_qubits: 3 }, correction)?,
            cnot: record(cnot?, cnot_params.schedule()?.total(), GateKind::Cnot, correction)?,
            correction,
        })
    }

    /// Exact gates.
    pub fn ideal() -> Self {
        let rec = |g: IdealGate| GateRecord {
            channel: g.channel(),
            duration: 0.0,
            fit: PhaseFit { ideal: g, zero_phase_fidelity: 1.0, fidelity: 1.0 },
            mean_leakage: 0.0,
        };
        Self { rpg: rec(IdealGate::parity()), cnot: rec(IdealGate::cnot()), correction: PhaseCorrection::None }
    }
}

/// Rescales every frequency so the protocol lasts `duration`. With the
/// ratios fixed the duration is proportional to `1/Ω_e`.
pub fn scale_to_duration(template: &PhysicalParams, duration: f64) -> Result<PhysicalParams> {
    if !(duration.is_finite() && duration > 0.0) {
        return Err(Error::InvalidParameter { name: "duration", reason: format!("must be positive, got {duration}") });
    }
    let current: PulseSchedule = template.schedule()?;
    let total = current.total();
    if !(total > 0.0) || current.t2 == 0.0 {
        return Err(Error::InvalidParameter { name: "omega_e", reason: "template has no Raman drive to rescale".into() });
    }
    Ok(template.scale_frequencies(total / duration))
}

pub fn scale_gate_channels(
    template: &PhysicalParams,
    duration: f64,
    dissipative: bool,
    correction: PhaseCorrection,
    policy: &StepPolicy,
) -> Result<GateChannelSet> {
    GateChannelSet::extract(&scale_to_duration(template, duration)?, dissipative, correction, policy)
}

/// Whether a stated duration applies to each gate or to the whole circuit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeBudget {
    #[default]
    PerGate,
    /// Split evenly over the multiqubit gates of each variant.
    PerCircuit,
}

impl TimeBudget {
    /// Per-gate `(rpg, cnot)` durations for a circuit using `n_rpg` parity
    /// gates in one variant and `n_cnot` CNOTs in the other.
    pub fn split(self, duration: f64, n_rpg: usize, n_cnot: usize) -> (f64, f64) {
        match self {
            Self::PerGate => (duration, duration),
            Self::PerCircuit => (duration / n_rpg as f64, duration / n_cnot as f64),
        }
    }
}

/// Gate channels for a circuit with the given gate counts under `budget`.
pub fn budget_gate_channels(
    template: &PhysicalParams,
    duration: f64,
    budget: TimeBudget,
    counts: (usize, usize),
    dissipative: bool,
    correction: PhaseCorrection,
    policy: &StepPolicy,
) -> Result<GateChannelSet> {
    let (tr, tc) = budget.split(duration, counts.0, counts.1);
    if tr == tc {
        return scale_gate_channels(template, tr, dissipative, correction, policy);
    }
    let rpg = scale_to_duration(template, tr)?;
    let cnot = cnot_params(&scale_to_duration(template, tc)?);
    GateChannelSet::extract_pair(&rpg, &cnot, dissipative, correction, policy)
}

/// Multiqubit gate counts `(rpg variant, cnot variant)`.
pub const DJ_GATE_COUNTS: (usize, usize) = (1, 2);
pub const ISING_GATE_COUNTS: (usize, usize) = (2, 2);

// ---------------------------------------------------------------------------
// circuits

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// Unnormalized outcome probabilities over the measured qubits.
    pub probabilities: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Trace lost to non-computational levels.
    pub leakage: f64,
}

impl RunReport {
    fn from_state(rho: &Matrix) -> Result<Self> {
        let probabilities: Vec<f64> = (0..rho.nrows()).map(|i| rho[[i, i]].re).collect();
        let total: f64 = probabilities.iter().sum();
        let leakage = 1.0 - total;
        if leakage < -BOOKKEEPING_TOL {
            return Err(Error::Tolerance(format!("circuit output trace {total} exceeds one")));
        }
        let normalized = probabilities.iter().map(|p| if total > 0.0 { p / total } else { 0.0 }).collect();
        Ok(Self { probabilities, normalized, leakage })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Rpg,
    Cnot,
}

pub fn deutsch_jozsa_circuit(gates: &GateChannelSet, variant: Variant) -> Result<CircuitSpec> {
    let mut c = CircuitSpec::new(3)?;
    for q in 0..3 {
        c.push(Gate::unitary(q, hadamard()))?;
    }
    match variant {
        Variant::Cnot => {
            c.push(Gate::channel(&[0, 2], gates.cnot.channel.clone()))?;
            c.push(Gate::channel(&[1, 2], gates.cnot.channel.clone()))?;
        }
        Variant::Rpg => {
            c.push(Gate::channel(&[0, 1, 2], gates.rpg.channel.clone()))?;
        }
    }
    c.push(Gate::unitary(0, hadamard()))?;
    c.push(Gate::unitary(1, hadamard()))?;
    Ok(c)
}

/// Deutsch–Jozsa for `f(x) = x₁ ⊕ x₂` with the ancilla traced out. The report
/// covers the four outcomes of `q₁q₂`; `|11>` signals a balanced function.
pub fn run_deutsch_jozsa(gates: &GateChannelSet, variant: Variant) -> Result<RunReport> {
    let rho = deutsch_jozsa_circuit(gates, variant)?.run(&product_state(&[0, 0, 1]))?;
    RunReport::from_state(&partial_trace(&rho, 2, 3)?)
}

/// `(|00> + |10>)/√2`
pub fn ising_initial_state() -> Matrix {
    let mut psi = [ZERO; 4];
    psi[0] = C64::new(FRAC_1_SQRT_2, 0.0);
    psi[2] = C64::new(FRAC_1_SQRT_2, 0.0);
    Matrix::from_shape_fn((4, 4), |(i, j)| psi[i] * psi[j].conj())
}

/// Two-qubit state after simulating `e^{−i h t Z₁Z₂}` with the given variant.
pub fn ising_state(gates: &GateChannelSet, variant: Variant, ht: f64) -> Result<Matrix> {
    let rho0 = ising_initial_state();
    match variant {
        Variant::Cnot => {
            let mut c = CircuitSpec::new(2)?;
            c.push(Gate::channel(&[0, 1], gates.cnot.channel.clone()))?;
            c.push(Gate::unitary(1, rz(2.0 * ht)))?;
            c.push(Gate::channel(&[0, 1], gates.cnot.channel.clone()))?;
            c.run(&rho0)
        }
        Variant::Rpg => {
            let mut c = CircuitSpec::new(3)?;
            c.push(Gate::channel(&[0, 1, 2], gates.rpg.channel.clone()))?;
            c.push(Gate::unitary(2, rz(2.0 * ht)))?;
            c.push(Gate::channel(&[0, 1, 2], gates.rpg.channel.clone()))?;
            let anc = product_state(&[0]);
            partial_trace(&c.run(&crate::opalg::kron(&rho0, &anc))?, 2, 3)
        }
    }
}

pub fn ising_exact_state(ht: f64) -> Matrix {
    let rho0 = ising_initial_state();
    let u = Matrix::from_shape_fn((4, 4), |(i, j)| {
        if i != j {
            return ZERO;
        }
        let zz = if (i >> 1) & 1 == i & 1 { 1.0 } else { -1.0 };
        C64::from_polar(1.0, -ht * zz)
    });
    u.dot(&rho0).dot(&dagger(&u))
}

/// `<ψ_i|ρ|ψ_i>`
pub fn overlap_with_initial(rho: &Matrix) -> f64 {
    let s = FRAC_1_SQRT_2;
    let psi = [s, 0.0, s, 0.0];
    let mut acc = ZERO;
    for i in 0..4 {
        for j in 0..4 {
            acc += rho[[i, j]] * psi[i] * psi[j];
        }
    }
    acc.re
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsingCurves {
    pub ht: Vec<f64>,
    pub exact: Vec<f64>,
    pub rpg: Vec<f64>,
    pub cnot: Vec<f64>,
    pub leakage_rpg: Vec<f64>,
    pub leakage_cnot: Vec<f64>,
}

impl IsingCurves {
    pub fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
    }
}

pub fn run_ising_dqs(gates: &GateChannelSet, ht_grid: &[f64]) -> Result<IsingCurves> {
    let rows = ht_grid
        .par_iter()
        .map(|&ht| {
            let r = ising_state(gates, Variant::Rpg, ht)?;
            let c = ising_state(gates, Variant::Cnot, ht)?;
            let e = ising_exact_state(ht);
            Ok((overlap_with_initial(&e), overlap_with_initial(&r), overlap_with_initial(&c), 1.0 - trace(&r).re, 1.0 - trace(&c).re))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IsingCurves {
        ht: ht_grid.to_vec(),
        exact: rows.iter().map(|r| r.0).collect(),
        rpg: rows.iter().map(|r| r.1).collect(),
        cnot: rows.iter().map(|r| r.2).collect(),
        leakage_rpg: rows.iter().map(|r| r.3).collect(),
        leakage_cnot: rows.iter().map(|r| r.4).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DjPoint {
    pub duration: f64,
    pub p11_rpg: f64,
    pub p11_cnot: f64,
    pub p11_rpg_normalized: f64,
    pub p11_cnot_normalized: f64,
    pub leakage_rpg: f64,
    pub leakage_cnot: f64,
}

/// `P(|11>)` against duration for both variants; `P11` is unnormalized.
pub fn deutsch_jozsa_vs_duration(
    template: &PhysicalParams,
    durations: &[f64],
    budget: TimeBudget,
    dissipative: bool,
    correction: PhaseCorrection,
    policy: &StepPolicy,
) -> Result<Vec<DjPoint>> {
    durations
        .par_iter()
        .map(|&t| {
            let gates = budget_gate_channels(template, t, budget, DJ_GATE_COUNTS, dissipative, correction, policy)?;
            let r = run_deutsch_jozsa(&gates, Variant::Rpg)?;
            let c = run_deutsch_jozsa(&gates, Variant::Cnot)?;
            Ok(DjPoint {
                duration: t,
                p11_rpg: r.probabilities[3],
                p11_cnot: c.probabilities[3],
                p11_rpg_normalized: r.normalized[3],
                p11_cnot_normalized: c.normalized[3],
                leakage_rpg: r.leakage,
                leakage_cnot: c.leakage,
            })
        })
        .collect()
}
