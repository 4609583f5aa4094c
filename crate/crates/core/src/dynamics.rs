//! Time propagation, the three-stage protocol runner and extraction of the
//! realized gate as a quantum channel on the computational subspace.
//!
//! Operators are stored densely; the integrators compile them into lists of
//! their nonzero entries before stepping. Matrix units whose evolution is
//! confined to a subset of levels are propagated on that subset only: the
//! support of `|i><j|` stays inside `S_i × S_j`, where `S_i` is the closure of
//! `i` under every Hamiltonian coupling and every jump.
//!
//! Superoperators use column stacking: `vec(X)[a + d·b] = X[a, b]`, so
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use std::collections::BTreeSet;

use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Frame, GateModel, Hamiltonian, PhysicalParams, Stage};
use crate::opalg::{
    dagger, hermitian_eigenvalues, kron, matrix_unit, trace, DensityOperator, Matrix, Operator, SpaceLayout, StateVector,
    C64, I, ZERO,
};

/// Fixed-step policy: at least `points_per_period` steps per period of the
/// fastest frequency in the problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepPolicy {
    pub points_per_period: f64,
    pub min_steps: usize,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self { points_per_period: 50.0, min_steps: 16 }
    }
}

impl StepPolicy {
    pub fn steps_for(&self, duration: f64, omega_max: f64) -> usize {
        if duration <= 0.0 {
            return 0;
        }
        let periods = duration * omega_max / (2.0 * std::f64::consts::PI);
        ((periods * self.points_per_period).ceil() as usize).max(self.min_steps)
    }

    /// Same policy with the step halved.
    pub fn refined(&self) -> Self {
        Self { points_per_period: 2.0 * self.points_per_period, min_steps: 2 * self.min_steps }
    }
}

// ---------------------------------------------------------------------------
// compiled generators

/// Nonzero pattern of a sum of operators with one value per term, restricted
/// to `rows × cols` (local indices).
#[derive(Clone, Debug)]
struct CompiledSum {
    entries: Vec<(usize, usize)>,
    values: Vec<Vec<C64>>,
}

impl CompiledSum {
    fn new(ops: &[&Matrix], rows: &[usize], cols: &[usize]) -> Self {
        let mut entries = Vec::new();
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                if ops.iter().any(|m| m[[i, j]] != ZERO) {
                    entries.push((a, b));
                }
            }
        }
        let values = ops
            .iter()
            .map(|m| entries.iter().map(|&(a, b)| m[[rows[a], cols[b]]]).collect())
            .collect();
        Self { entries, values }
    }

    fn combine(&self, coefficients: &[C64], out: &mut Vec<C64>) {
        out.clear();
        out.resize(self.entries.len(), ZERO);
        for (vals, &c) in self.values.iter().zip(coefficients) {
            if c == ZERO {
                continue;
            }
            for (o, v) in out.iter_mut().zip(vals) {
                *o += c * v;
            }
        }
    }
}

/// `dX/dt = K X + X K† + Σ L X L†` with `K = −iH − ½ Σ L†L`, for `X` supported
/// on `rows × cols`.
struct LindbladKernel {
    nr: usize,
    nc: usize,
    left: CompiledSum,
    right: CompiledSum,
    coefficients: Vec<model::Coefficient>,
    /// `(out, in, weight)` flat indices of the jump term.
    jumps: Vec<(usize, usize, C64)>,
    left_vals: Vec<C64>,
    right_vals: Vec<C64>,
    coef_buf: Vec<C64>,
}

/// `K` as a list of terms: one per Hamiltonian term (scaled by −i) plus the
/// constant anti-Hermitian part as the last entry.
fn generator_terms(h: &Hamiltonian, collapse: &[Operator]) -> (Vec<Matrix>, Vec<model::Coefficient>) {
    let d = h.layout().total_dim();
    let mut mats = Vec::new();
    let mut coefficients = Vec::new();
    for (c, op) in h.terms() {
        mats.push(op.matrix().mapv(|z| -I * z));
        coefficients.push(*c);
    }
    let mut anti = Matrix::zeros((d, d));
    for l in collapse {
        let ldl = dagger(l.matrix()).dot(l.matrix());
        anti.zip_mut_with(&ldl, |a, &x| *a -= 0.5 * x);
    }
    mats.push(anti);
    coefficients.push(model::Coefficient::Constant(1.0));
    (mats, coefficients)
}

impl LindbladKernel {
    fn new(h: &Hamiltonian, collapse: &[Operator], rows: &[usize], cols: &[usize]) -> Self {
        let (mats, coefficients) = generator_terms(h, collapse);
        let refs: Vec<&Matrix> = mats.iter().collect();
        let left = CompiledSum::new(&refs, rows, rows);
        let right = CompiledSum::new(&refs, cols, cols);
        let nc = cols.len();
        let mut jumps = Vec::new();
        for l in collapse {
            let m = l.matrix();
            let lr: Vec<(usize, usize, C64)> = entries_of(m, rows);
            let lc: Vec<(usize, usize, C64)> = entries_of(m, cols);
            for &(a, k, l1) in &lr {
                for &(b, n, l2) in &lc {
                    jumps.push((a * nc + b, k * nc + n, l1 * l2.conj()));
                }
            }
        }
        let n_terms = coefficients.len();
        Self {
            nr: rows.len(),
            nc,
            left,
            right,
            coefficients,
            jumps,
            left_vals: Vec::new(),
            right_vals: Vec::new(),
            coef_buf: vec![ZERO; n_terms],
        }
    }

    fn eval(&mut self, t: f64, x: &[C64], out: &mut [C64]) {
        for (buf, c) in self.coef_buf.iter_mut().zip(&self.coefficients) {
            *buf = c.at(t);
        }
        self.left.combine(&self.coef_buf, &mut self.left_vals);
        self.right.combine(&self.coef_buf, &mut self.right_vals);
        let nc = self.nc;
        out.iter_mut().for_each(|o| *o = ZERO);
        for (&(a, m), &k) in self.left.entries.iter().zip(&self.left_vals) {
            let src = &x[m * nc..(m + 1) * nc];
            let dst = &mut out[a * nc..(a + 1) * nc];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
        for a in 0..self.nr {
            let row = &x[a * nc..(a + 1) * nc];
            let dst = &mut out[a * nc..(a + 1) * nc];
            for (&(b, m), &k) in self.right.entries.iter().zip(&self.right_vals) {
                dst[b] += row[m] * k.conj();
            }
        }
        for &(o, i, w) in &self.jumps {
            out[o] += w * x[i];
        }
    }
}

fn entries_of(m: &Matrix, idx: &[usize]) -> Vec<(usize, usize, C64)> {
    let mut out = Vec::new();
    for (a, &i) in idx.iter().enumerate() {
        for (b, &j) in idx.iter().enumerate() {
            let v = m[[i, j]];
            if v != ZERO {
                out.push((a, b, v));
            }
        }
    }
    out
}

/// `dψ/dt = −i H ψ`
struct SchrodingerKernel {
    gen: CompiledSum,
    coefficients: Vec<model::Coefficient>,
    vals: Vec<C64>,
    coef_buf: Vec<C64>,
}

impl SchrodingerKernel {
    fn new(h: &Hamiltonian, support: &[usize]) -> Self {
        let (mats, coefficients) = generator_terms(h, &[]);
        let refs: Vec<&Matrix> = mats.iter().collect();
        let n_terms = coefficients.len();
        Self { gen: CompiledSum::new(&refs, support, support), coefficients, vals: Vec::new(), coef_buf: vec![ZERO; n_terms] }
    }

    fn eval(&mut self, t: f64, x: &[C64], out: &mut [C64]) {
        for (buf, c) in self.coef_buf.iter_mut().zip(&self.coefficients) {
            *buf = c.at(t);
        }
        self.gen.combine(&self.coef_buf, &mut self.vals);
        out.iter_mut().for_each(|o| *o = ZERO);
        for (&(a, m), &k) in self.gen.entries.iter().zip(&self.vals) {
            out[a] += k * x[m];
        }
    }
}

/// Classic fourth-order Runge–Kutta over `steps` equal steps from `t0`.
fn rk4<F>(mut rhs: F, y: &mut [C64], t0: f64, duration: f64, steps: usize, mut after_step: impl FnMut(&mut [C64])) -> Result<()>
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    if steps == 0 {
        return Ok(());
    }
    let n = y.len();
    let h = duration / steps as f64;
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
    for s in 0..steps {
        let t = t0 + s as f64 * h;
        rhs(t, y, &mut k1);
        for i in 0..n {
            tmp[i] = y[i] + k1[i] * (0.5 * h);
        }
        rhs(t + 0.5 * h, &tmp, &mut k2);
        for i in 0..n {
            tmp[i] = y[i] + k2[i] * (0.5 * h);
        }
        rhs(t + 0.5 * h, &tmp, &mut k3);
        for i in 0..n {
            tmp[i] = y[i] + k3[i] * h;
        }
        rhs(t + h, &tmp, &mut k4);
        let w = h / 6.0;
        for i in 0..n {
            y[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * w;
        }
        after_step(y);
        if s % 256 == 255 || s + 1 == steps {
            if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                return Err(Error::NonFinite { t: t + h });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// public propagators

/// RK4 integration of the Schrödinger equation over `[0, duration]`.
pub fn propagate_state(h: &Hamiltonian, psi0: &StateVector, duration: f64, steps: usize) -> Result<StateVector> {
    if psi0.layout() != h.layout() {
        return Err(Error::LayoutMismatch);
    }
    let support: Vec<usize> = (0..h.layout().total_dim()).collect();
    let mut kernel = SchrodingerKernel::new(h, &support);
    let mut y = psi0.amplitudes().to_vec();
    rk4(|t, x, o| kernel.eval(t, x, o), &mut y, 0.0, duration, steps, |_| {})?;
    StateVector::new(psi0.layout().clone(), Array1::from(y))
}

/// General linear Lindblad propagation of an arbitrary operator (not
/// necessarily Hermitian or positive). No symmetrization.
pub fn propagate_operator(h: &Hamiltonian, collapse: &[Operator], x0: &Matrix, duration: f64, steps: usize) -> Result<Matrix> {
    let d = h.layout().total_dim();
    if x0.dim() != (d, d) {
        return Err(Error::DimensionMismatch { expected: d, found: x0.nrows() });
    }
    check_collapse(h.layout(), collapse)?;
    let all: Vec<usize> = (0..d).collect();
    let mut kernel = LindbladKernel::new(h, collapse, &all, &all);
    let mut y: Vec<C64> = x0.iter().copied().collect();
    rk4(|t, x, o| kernel.eval(t, x, o), &mut y, 0.0, duration, steps, |_| {})?;
    Ok(Matrix::from_shape_vec((d, d), y).expect("square"))
}

/// Diagnostics collected while propagating a density operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    /// Largest Hermiticity deviation removed by per-step symmetrization.
    pub max_hermiticity_correction: f64,
    pub trace_deviation: f64,
    pub min_eigenvalue: f64,
}

/// Tolerated negative eigenvalue before a propagation is rejected.
pub const POSITIVITY_TOL: f64 = 1e-6;

/// RK4 integration of the Lindblad master equation
/// `ρ̇ = −i[H, ρ] + Σ (L ρ L† − ½{L†L, ρ})`, symmetrized every step.
pub fn propagate_density(
    h: &Hamiltonian,
    collapse: &[Operator],
    rho0: &DensityOperator,
    duration: f64,
    steps: usize,
) -> Result<DensityOperator> {
    propagate_density_with_report(h, collapse, rho0, duration, steps).map(|(rho, _)| rho)
}

pub fn propagate_density_with_report(
    h: &Hamiltonian,
    collapse: &[Operator],
    rho0: &DensityOperator,
    duration: f64,
    steps: usize,
) -> Result<(DensityOperator, DensityReport)> {
    let stage = Stage { name: "free", hamiltonian: h.clone(), duration };
    propagate_density_stages(&[(stage, steps)], collapse, rho0)
}

fn check_collapse(layout: &SpaceLayout, collapse: &[Operator]) -> Result<()> {
    if collapse.iter().any(|l| l.layout() != layout) {
        return Err(Error::LayoutMismatch);
    }
    Ok(())
}

fn propagate_density_stages(
    stages: &[(Stage, usize)],
    collapse: &[Operator],
    rho0: &DensityOperator,
) -> Result<(DensityOperator, DensityReport)> {
    let layout = rho0.layout().clone();
    let d = layout.total_dim();
    for (st, _) in stages {
        if st.hamiltonian.layout() != &layout {
            return Err(Error::LayoutMismatch);
        }
    }
    check_collapse(&layout, collapse)?;
    let all: Vec<usize> = (0..d).collect();
    let trace0 = rho0.trace();
    let mut y: Vec<C64> = rho0.matrix().iter().copied().collect();
    let mut report = DensityReport::default();
    for (st, steps) in stages {
        let mut kernel = LindbladKernel::new(&st.hamiltonian, collapse, &all, &all);
        let mut worst: f64 = 0.0;
        rk4(|t, x, o| kernel.eval(t, x, o), &mut y, 0.0, st.duration, *steps, |y| {
            worst = worst.max(symmetrize_flat(y, d));
        })?;
        report.max_hermiticity_correction = report.max_hermiticity_correction.max(worst);
    }
    let rho = DensityOperator::new(layout, Matrix::from_shape_vec((d, d), y).expect("square"))?;
    report.trace_deviation = (rho.trace() - trace0).abs();
    report.min_eigenvalue = rho.min_eigenvalue();
    if report.min_eigenvalue < -POSITIVITY_TOL {
        return Err(Error::PositivityViolation { min_eigenvalue: report.min_eigenvalue });
    }
    Ok((rho, report))
}

fn symmetrize_flat(y: &mut [C64], d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let ii = i * d + i;
        worst = worst.max(y[ii].im.abs());
        y[ii].im = 0.0;
        for j in (i + 1)..d {
            let (a, b) = (y[i * d + j], y[j * d + i]);
            worst = worst.max((a - b.conj()).norm());
            let avg = (a + b.conj()) * 0.5;
            y[i * d + j] = avg;
            y[j * d + i] = avg.conj();
        }
    }
    worst
}

/// Dense Liouvillian `L` with `vec(ρ̇) = L vec(ρ)` (column stacking):
/// `−i(I ⊗ H − Hᵀ ⊗ I) + Σ (L* ⊗ L − ½ I ⊗ L†L − ½ (L†L)ᵀ ⊗ I)`.
pub fn liouvillian_superoperator(h: &Operator, collapse: &[Operator]) -> Matrix {
    let d = h.dim();
    let id = crate::opalg::identity(d);
    let hm = h.matrix();
    let mut out = kron(&id, hm).mapv(|z| -I * z);
    out.zip_mut_with(&kron(&hm.t().to_owned(), &id), |o, &x| *o += I * x);
    for l in collapse {
        let lm = l.matrix();
        let ldl = dagger(lm).dot(lm);
        out += &kron(&lm.mapv(|z| z.conj()), lm);
        out.zip_mut_with(&kron(&id, &ldl), |o, &x| *o -= 0.5 * x);
        out.zip_mut_with(&kron(&ldl.t().to_owned(), &id), |o, &x| *o -= 0.5 * x);
    }
    out
}

pub fn vectorize(m: &Matrix) -> Array1<C64> {
    let d = m.nrows();
    Array1::from_shape_fn(d * m.ncols(), |k| m[[k % d, k / d]])
}

pub fn unvectorize(v: &Array1<C64>, d: usize) -> Matrix {
    Matrix::from_shape_fn((d, d), |(a, b)| v[a + d * b])
}

// ---------------------------------------------------------------------------
// protocol runner

/// Input to the protocol: a computational basis label such as `10A`, or an
/// arbitrary state on the full layout.
#[derive(Clone, Debug)]
pub enum ProtocolInput {
    Label(String),
    State(StateVector),
}

/// Parses a computational label (`c1 c2 T` for the parity gate, `c T` for the
/// two-atom gate) into per-site levels.
pub fn parse_label(model: GateModel, label: &str) -> Result<Vec<usize>> {
    let n = model.n_qubits();
    let chars: Vec<char> = label.trim().chars().collect();
    let invalid = || Error::InvalidInput(format!("unknown input `{label}`; valid labels: {}", computational_labels(model).join(", ")));
    if chars.len() != n {
        return Err(invalid());
    }
    let mut levels = Vec::with_capacity(n);
    for (k, ch) in chars.iter().enumerate() {
        let lvl = if k + 1 == n {
            match ch {
                'A' | 'a' => model::levels::A,
                'B' | 'b' => model::levels::B,
                _ => return Err(invalid()),
            }
        } else {
            match ch {
                '0' => model::levels::GROUND_0,
                '1' => model::levels::GROUND_1,
                _ => return Err(invalid()),
            }
        };
        levels.push(lvl);
    }
    Ok(levels)
}

/// Computational basis labels in channel order.
pub fn computational_labels(model: GateModel) -> Vec<String> {
    let n = model.n_qubits();
    (0..1usize << n)
        .map(|bits| {
            (0..n)
                .map(|s| {
                    let b = (bits >> (n - 1 - s)) & 1;
                    if s + 1 == n {
                        if b == 0 { 'A' } else { 'B' }
                    } else if b == 0 {
                        '0'
                    } else {
                        '1'
                    }
                })
                .collect()
        })
        .collect()
}

/// Step sizes and stage boundaries of a protocol run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Propagation {
    /// Stage boundaries `[0, T1, T1+T2, T_total]`.
    pub boundaries: Vec<f64>,
    pub steps: Vec<usize>,
    pub step_sizes: Vec<f64>,
    /// Level populations at each boundary.
    pub snapshots: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub enum FinalState {
    Pure(StateVector),
    Mixed(DensityOperator),
}

#[derive(Clone, Debug)]
pub struct ProtocolOutcome {
    pub final_state: FinalState,
    /// Populations of every level of the full layout.
    pub populations: Vec<f64>,
    /// Populations of the computational basis, channel order.
    pub computational: Vec<f64>,
    pub propagation: Propagation,
    pub density_report: Option<DensityReport>,
}

impl ProtocolOutcome {
    /// Probability that the target ends in `level` (`A` or `B`), summed over
    /// control configurations.
    pub fn target_population(&self, model: GateModel, level: usize) -> f64 {
        let layout = model.layout();
        let t = model.target_site();
        self.populations
            .iter()
            .enumerate()
            .filter(|(i, _)| layout.levels(*i)[t] == level)
            .map(|(_, p)| p)
            .sum()
    }

    pub fn leakage(&self) -> f64 {
        1.0 - self.computational.iter().sum::<f64>()
    }
}

fn plan_steps(params: &PhysicalParams, stages: &[Stage], policy: &StepPolicy) -> Vec<usize> {
    let omega = params.max_frequency();
    stages.iter().map(|s| policy.steps_for(s.duration, omega)).collect()
}

fn boundaries(stages: &[Stage]) -> Vec<f64> {
    let mut b = vec![0.0];
    for s in stages {
        b.push(b.last().copied().unwrap_or(0.0) + s.duration);
    }
    b
}

/// Runs the three stages on one input state.
pub fn run_protocol(
    params: &PhysicalParams,
    model: GateModel,
    input: &ProtocolInput,
    dissipative: bool,
    policy: &StepPolicy,
) -> Result<ProtocolOutcome> {
    let stages = model::protocol_stages(params, model, Frame::Unified)?;
    run_stages(params, model, &stages, input, dissipative, policy)
}

/// Runs explicit stages (e.g. a custom schedule or the rotating frame).
pub fn run_stages(
    params: &PhysicalParams,
    model: GateModel,
    stages: &[Stage],
    input: &ProtocolInput,
    dissipative: bool,
    policy: &StepPolicy,
) -> Result<ProtocolOutcome> {
    let layout = model.layout();
    let psi0 = match input {
        ProtocolInput::Label(label) => StateVector::from_levels(&layout, &parse_label(model, label)?)?,
        ProtocolInput::State(s) => {
            if s.layout() != &layout {
                return Err(Error::LayoutMismatch);
            }
            s.normalized()?
        }
    };
    let steps = plan_steps(params, stages, policy);
    let step_sizes = stages.iter().zip(&steps).map(|(s, &n)| if n == 0 { 0.0 } else { s.duration / n as f64 }).collect();
    let comp = layout.computational_indices();

    let (final_state, snapshots, report) = if dissipative {
        let collapse = model::collapse_operators(params, model);
        let mut rho = psi0.to_density();
        let mut snaps = vec![rho.populations()];
        let mut report = DensityReport::default();
        for (st, &n) in stages.iter().zip(&steps) {
            let (next, r) = propagate_density_stages(&[(st.clone(), n)], &collapse, &rho)?;
            report.max_hermiticity_correction = report.max_hermiticity_correction.max(r.max_hermiticity_correction);
            report.min_eigenvalue = r.min_eigenvalue;
            rho = next;
            snaps.push(rho.populations());
        }
        report.trace_deviation = (rho.trace() - 1.0).abs();
        (FinalState::Mixed(rho), snaps, Some(report))
    } else {
        let mut psi = psi0;
        let mut snaps = vec![psi.populations()];
        for (st, &n) in stages.iter().zip(&steps) {
            psi = propagate_state(&st.hamiltonian, &psi, st.duration, n)?;
            snaps.push(psi.populations());
        }
        (FinalState::Pure(psi), snaps, None)
    };
    let populations = snapshots.last().cloned().unwrap_or_default();
    let computational = comp.iter().map(|&i| populations[i]).collect();
    Ok(ProtocolOutcome {
        final_state,
        populations,
        computational,
        propagation: Propagation { boundaries: boundaries(stages), steps, step_sizes, snapshots },
        density_report: report,
    })
}

// ---------------------------------------------------------------------------
// channels

/// Tolerances for the complete-positivity and trace checks.
pub const CHOI_EIGEN_TOL: f64 = 1e-7;
pub const CHOI_HERMITIAN_TOL: f64 = 1e-9;
pub const TRACE_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelReport {
    pub choi_min_eigenvalue: f64,
    pub choi_max_eigenvalue: f64,
    pub choi_hermiticity_deviation: f64,
    pub max_output_trace: f64,
    pub completely_positive: bool,
    pub trace_nonincreasing: bool,
}

/// Linear map on `d × d` operators stored as a `d² × d²` superoperator.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumChannel {
    dim: usize,
    superop: Matrix,
    /// `1 − Tr ε(|j><j|)` for every computational basis input.
    leakage: Vec<f64>,
}

impl QuantumChannel {
    pub fn from_superoperator(dim: usize, superop: Matrix) -> Result<Self> {
        if superop.dim() != (dim * dim, dim * dim) {
            return Err(Error::DimensionMismatch { expected: dim * dim, found: superop.nrows() });
        }
        let mut ch = Self { dim, superop, leakage: Vec::new() };
        ch.leakage = (0..dim).map(|j| 1.0 - trace(&ch.apply(&matrix_unit(dim, j, j))).re).collect();
        Ok(ch)
    }

    /// `ρ ↦ U ρ U†`
    pub fn from_unitary(u: &Matrix) -> Self {
        let d = u.nrows();
        Self::from_superoperator(d, kron(&u.mapv(|z| z.conj()), u)).expect("square unitary")
    }

    /// `ρ ↦ Σ K ρ K†`
    pub fn from_kraus(ops: &[Matrix]) -> Result<Self> {
        let d = ops.first().map(|k| k.nrows()).ok_or_else(|| Error::InvalidInput("empty Kraus set".into()))?;
        let mut s = Matrix::zeros((d * d, d * d));
        for k in ops {
            if k.dim() != (d, d) {
                return Err(Error::DimensionMismatch { expected: d, found: k.nrows() });
            }
            s += &kron(&k.mapv(|z| z.conj()), k);
        }
        Self::from_superoperator(d, s)
    }

    pub fn identity(d: usize) -> Self {
        Self::from_unitary(&crate::opalg::identity(d))
    }

    /// `ρ ↦ Tr(ρ) I/d`
    pub fn completely_depolarizing(d: usize) -> Self {
        let mut s = Matrix::zeros((d * d, d * d));
        for a in 0..d {
            for c in 0..d {
                s[[a + d * a, c + d * c]] = C64::new(1.0 / d as f64, 0.0);
            }
        }
        Self::from_superoperator(d, s).expect("square")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn superoperator(&self) -> &Matrix {
        &self.superop
    }

    pub fn leakage(&self) -> &[f64] {
        &self.leakage
    }

    pub fn apply(&self, rho: &Matrix) -> Matrix {
        unvectorize(&self.superop.dot(&vectorize(rho)), self.dim)
    }

    /// `self ∘ first`
    pub fn after(&self, first: &QuantumChannel) -> Result<Self> {
        if first.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: first.dim });
        }
        Self::from_superoperator(self.dim, self.superop.dot(&first.superop))
    }

    /// `J = Σ |c><e| ⊗ ε(|c><e|)`
    pub fn choi(&self) -> Matrix {
        let d = self.dim;
        let mut j = Matrix::zeros((d * d, d * d));
        for c in 0..d {
            for e in 0..d {
                let col = c + d * e;
                for a in 0..d {
                    for b in 0..d {
                        j[[c * d + a, e * d + b]] = self.superop[[a + d * b, col]];
                    }
                }
            }
        }
        j
    }

    pub fn report(&self) -> ChannelReport {
        let choi = self.choi();
        let herm = crate::opalg::hermiticity_deviation(&choi);
        let ev = hermitian_eigenvalues(&choi);
        let max_trace = (1.0 - self.leakage.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0);
        let min_ev = ev.first().copied().unwrap_or(0.0);
        ChannelReport {
            choi_min_eigenvalue: min_ev,
            choi_max_eigenvalue: ev.last().copied().unwrap_or(0.0),
            choi_hermiticity_deviation: herm,
            max_output_trace: max_trace,
            completely_positive: herm <= CHOI_HERMITIAN_TOL && min_ev >= -CHOI_EIGEN_TOL,
            trace_nonincreasing: max_trace <= 1.0 + TRACE_TOL,
        }
    }
}

/// Smallest sets of levels closed under the stage couplings and jumps.
fn closure(seed: usize, adjacency: &[BTreeSet<usize>]) -> Vec<usize> {
    let mut seen = BTreeSet::from([seed]);
    let mut stack = vec![seed];
    while let Some(i) = stack.pop() {
        for &j in &adjacency[i] {
            if seen.insert(j) {
                stack.push(j);
            }
        }
    }
    seen.into_iter().collect()
}

fn adjacency(stages: &[Stage], collapse: &[Operator], d: usize) -> Vec<BTreeSet<usize>> {
    let mut adj = vec![BTreeSet::new(); d];
    let mut add = |m: &Matrix, symmetric: bool| {
        for i in 0..d {
            for j in 0..d {
                if m[[i, j]] != ZERO {
                    // column j feeds row i
                    adj[j].insert(i);
                    if symmetric {
                        adj[i].insert(j);
                    }
                }
            }
        }
    };
    for st in stages {
        for (_, op) in st.hamiltonian.terms() {
            add(op.matrix(), true);
        }
    }
    for l in collapse {
        add(l.matrix(), false);
    }
    adj
}

/// Propagates `|i><j|` through all stages on the restricted support.
fn propagate_matrix_unit(
    stages: &[Stage],
    steps: &[usize],
    collapse: &[Operator],
    rows: &[usize],
    cols: &[usize],
    i: usize,
    j: usize,
) -> Result<Matrix> {
    let d = stages[0].hamiltonian.layout().total_dim();
    let nc = cols.len();
    let mut y = vec![ZERO; rows.len() * nc];
    let a = rows.iter().position(|&r| r == i).expect("seed in support");
    let b = cols.iter().position(|&c| c == j).expect("seed in support");
    y[a * nc + b] = C64::new(1.0, 0.0);
    for (st, &n) in stages.iter().zip(steps) {
        let mut kernel = LindbladKernel::new(&st.hamiltonian, collapse, rows, cols);
        rk4(|t, x, o| kernel.eval(t, x, o), &mut y, 0.0, st.duration, n, |_| {})?;
    }
    let mut out = Matrix::zeros((d, d));
    for (a, &r) in rows.iter().enumerate() {
        for (b, &c) in cols.iter().enumerate() {
            out[[r, c]] = y[a * nc + b];
        }
    }
    Ok(out)
}

/// Realized gate on the computational subspace.
pub fn extract_channel(
    params: &PhysicalParams,
    model: GateModel,
    dissipative: bool,
    policy: &StepPolicy,
) -> Result<QuantumChannel> {
    let stages = model::protocol_stages(params, model, Frame::Unified)?;
    extract_channel_from_stages(params, model, &stages, dissipative, policy)
}

pub fn extract_channel_from_stages(
    params: &PhysicalParams,
    model: GateModel,
    stages: &[Stage],
    dissipative: bool,
    policy: &StepPolicy,
) -> Result<QuantumChannel> {
    let layout = model.layout();
    let comp = layout.computational_indices();
    let dc = comp.len();
    let d = layout.total_dim();
    let steps = plan_steps(params, stages, policy);
    let collapse = if dissipative { model::collapse_operators(params, model) } else { Vec::new() };
    let adj = adjacency(stages, &collapse, d);
    let supports: Vec<Vec<usize>> = comp.iter().map(|&i| closure(i, &adj)).collect();

    let mut superop = Matrix::zeros((dc * dc, dc * dc));
    let mut place = |c: usize, e: usize, out: &Matrix| {
        for a in 0..dc {
            for b in 0..dc {
                superop[[a + dc * b, c + dc * e]] = out[[comp[a], comp[b]]];
            }
        }
    };

    if !dissipative {
        // closed system: propagate kets, ε(X) = M X M† with M the projected propagator
        let kets: Vec<Result<Array1<C64>>> = comp
            .par_iter()
            .zip(supports.par_iter())
            .map(|(&i, support)| {
                let mut y: Vec<C64> = support.iter().map(|&s| if s == i { C64::new(1.0, 0.0) } else { ZERO }).collect();
                for (st, &n) in stages.iter().zip(&steps) {
                    let mut kernel = SchrodingerKernel::new(&st.hamiltonian, support);
                    rk4(|t, x, o| kernel.eval(t, x, o), &mut y, 0.0, st.duration, n, |_| {})?;
                }
                let mut full = Array1::zeros(d);
                for (&s, v) in support.iter().zip(y) {
                    full[s] = v;
                }
                Ok(full)
            })
            .collect();
        let kets = kets.into_iter().collect::<Result<Vec<_>>>()?;
        for c in 0..dc {
            for e in 0..dc {
                let out = Matrix::from_shape_fn((d, d), |(x, y)| kets[c][x] * kets[e][y].conj());
                place(c, e, &out);
            }
        }
    } else {
        let pairs: Vec<(usize, usize)> = (0..dc).flat_map(|c| (c..dc).map(move |e| (c, e))).collect();
        let outs: Vec<Result<Matrix>> = pairs
            .par_iter()
            .map(|&(c, e)| propagate_matrix_unit(stages, &steps, &collapse, &supports[c], &supports[e], comp[c], comp[e]))
            .collect();
        for (&(c, e), out) in pairs.iter().zip(outs) {
            let out = out?;
            if c != e {
                place(e, c, &dagger(&out));
            }
            place(c, e, &out);
        }
    }
    QuantumChannel::from_superoperator(dc, superop)
}

// ---------------------------------------------------------------------------

/// Piecewise-constant propagation with the exponential of the dense
/// Liouvillian, evaluated at each slice midpoint. Independent of the RK4
/// kernels; used as a reference.
pub mod reference {
    use super::*;

    /// Compressed-row sparse matrix.
    pub struct Csr {
        n: usize,
        row_ptr: Vec<usize>,
        cols: Vec<usize>,
        vals: Vec<C64>,
    }

    impl Csr {
        pub fn from_dense(m: &Matrix) -> Self {
            let n = m.nrows();
            let mut row_ptr = vec![0];
            let mut cols = Vec::new();
            let mut vals = Vec::new();
            for i in 0..n {
                for j in 0..m.ncols() {
                    let v = m[[i, j]];
                    if v != ZERO {
                        cols.push(j);
                        vals.push(v);
                    }
                }
                row_ptr.push(cols.len());
            }
            Self { n, row_ptr, cols, vals }
        }

        pub fn matvec(&self, x: &[C64], out: &mut [C64]) {
            for i in 0..self.n {
                let mut acc = ZERO;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += self.vals[k] * x[self.cols[k]];
                }
                out[i] = acc;
            }
        }

        /// Maximum absolute column sum.
        pub fn norm1(&self) -> f64 {
            let mut sums = vec![0.0; self.n];
            for (c, v) in self.cols.iter().zip(&self.vals) {
                sums[*c] += v.norm();
            }
            sums.into_iter().fold(0.0, f64::max)
        }
    }

    /// `exp(t A) v` by a Taylor series on sub-steps with `‖tA/s‖₁ ≤ 1`.
    pub fn expm_multiply(a: &Csr, v: &[C64], t: f64) -> Vec<C64> {
        let s = (a.norm1() * t.abs()).ceil().max(1.0) as usize;
        let h = t / s as f64;
        let mut x = v.to_vec();
        let mut term = vec![ZERO; x.len()];
        let mut next = vec![ZERO; x.len()];
        for _ in 0..s {
            term.copy_from_slice(&x);
            for k in 1..=80 {
                a.matvec(&term, &mut next);
                let f = h / k as f64;
                let mut tn: f64 = 0.0;
                for (tv, nv) in term.iter_mut().zip(&next) {
                    *tv = nv * f;
                    tn = tn.max(tv.norm());
                }
                let mut xn: f64 = 0.0;
                for (xv, tv) in x.iter_mut().zip(&term) {
                    *xv += tv;
                    xn = xn.max(xv.norm());
                }
                if tn <= 1e-17 * xn.max(1e-300) {
                    break;
                }
            }
        }
        x
    }

    /// `Σ c_k L_k` applied without forming the sum.
    struct Combination<'a> {
        parts: Vec<(C64, &'a Csr)>,
        buf: std::cell::RefCell<Vec<C64>>,
    }

    impl Combination<'_> {
        fn matvec(&self, x: &[C64], out: &mut [C64]) {
            out.iter_mut().for_each(|o| *o = ZERO);
            let mut buf = self.buf.borrow_mut();
            buf.resize(x.len(), ZERO);
            for (c, m) in &self.parts {
                m.matvec(x, &mut buf);
                for (o, b) in out.iter_mut().zip(buf.iter()) {
                    *o += c * b;
                }
            }
        }

        fn norm1_bound(&self) -> f64 {
            self.parts.iter().map(|(c, m)| c.norm() * m.norm1()).sum()
        }
    }

    fn expm_multiply_with(a: &Combination<'_>, v: &[C64], t: f64) -> Vec<C64> {
        let s = (a.norm1_bound() * t.abs()).ceil().max(1.0) as usize;
        let h = t / s as f64;
        let mut x = v.to_vec();
        let mut term = vec![ZERO; x.len()];
        let mut next = vec![ZERO; x.len()];
        for _ in 0..s {
            term.copy_from_slice(&x);
            for k in 1..=80 {
                a.matvec(&term, &mut next);
                let f = h / k as f64;
                let mut tn: f64 = 0.0;
                for (tv, nv) in term.iter_mut().zip(&next) {
                    *tv = nv * f;
                    tn = tn.max(tv.norm());
                }
                let mut xn: f64 = 0.0;
                for (xv, tv) in x.iter_mut().zip(&term) {
                    *xv += tv;
                    xn = xn.max(xv.norm());
                }
                if tn <= 1e-17 * xn.max(1e-300) {
                    break;
                }
            }
        }
        x
    }

    /// Propagates `rho0` through `stages`, using `slices[k]` midpoint slices
    /// for stage `k`. The generator of each slice is the dense Liouvillian of
    /// the Hamiltonian at the slice midpoint, assembled term by term.
    pub fn piecewise_exponential(stages: &[Stage], collapse: &[Operator], rho0: &Matrix, slices: &[usize]) -> Result<Matrix> {
        let d = rho0.nrows();
        if stages.len() != slices.len() {
            return Err(Error::DimensionMismatch { expected: stages.len(), found: slices.len() });
        }
        let mut v = vectorize(rho0).to_vec();
        for (st, &n) in stages.iter().zip(slices) {
            if n == 0 || st.duration == 0.0 {
                continue;
            }
            let layout = st.hamiltonian.layout();
            let dissipator = Csr::from_dense(&liouvillian_superoperator(&Operator::zeros(layout), collapse));
            let terms: Vec<(model::Coefficient, Csr)> = st
                .hamiltonian
                .terms()
                .iter()
                .map(|(c, op)| (*c, Csr::from_dense(&liouvillian_superoperator(op, &[]))))
                .collect();
            let dt = st.duration / n as f64;
            for k in 0..n {
                let t = (k as f64 + 0.5) * dt;
                let mut parts: Vec<(C64, &Csr)> = vec![(C64::new(1.0, 0.0), &dissipator)];
                parts.extend(terms.iter().map(|(c, m)| (c.at(t), m)));
                let gen = Combination { parts, buf: std::cell::RefCell::new(Vec::new()) };
                v = expm_multiply_with(&gen, &v, dt);
            }
        }
        Ok(unvectorize(&Array1::from(v), d))
    }

    /// `exp(t L) ρ` for a time-independent Hamiltonian snapshot.
    pub fn exponential(h: &Operator, collapse: &[Operator], rho0: &Matrix, t: f64) -> Matrix {
        let l = Csr::from_dense(&liouvillian_superoperator(h, collapse));
        let v = expm_multiply(&l, &vectorize(rho0).to_vec(), t);
        unvectorize(&Array1::from(v), rho0.nrows())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{levels, DecayRates, PulseSchedule};
    use crate::opalg::{max_abs_diff, pauli};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_level() -> SpaceLayout {
        SpaceLayout::qubits(1)
    }

    fn closed_default() -> PhysicalParams {
        PhysicalParams::cesium_default().with_decay(DecayRates::none())
    }

    #[test]
    fn identity_choi_spectrum_is_finite() {
        let ev = hermitian_eigenvalues(&QuantumChannel::identity(8).choi());
        assert!(ev.iter().all(|x| x.is_finite()));
        assert!((ev[63] - 8.0).abs() < 1e-12 && ev[62].abs() < 1e-12);
    }

    #[test]
    fn zero_hamiltonian_leaves_state() {
        let l = two_level();
        let psi = StateVector::new(l.clone(), ndarray::arr1(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)])).unwrap();
        let out = propagate_state(&Hamiltonian::zero(&l), &psi, 1.0, 100).unwrap();
        assert_eq!(out, psi);
    }

    #[test]
    fn resonant_rabi_inverts() {
        let l = two_level();
        let omega = 3.0;
        let h = Hamiltonian::constant(Operator::new(l.clone(), pauli(1).mapv(|z| z * (omega / 2.0))).unwrap());
        let psi = StateVector::basis(&l, 0).unwrap();
        let out = propagate_state(&h, &psi, std::f64::consts::PI / omega, 2000).unwrap();
        assert!((out.populations()[1] - 1.0).abs() < 1e-8);
        assert!((out.norm() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn exponential_decay_matches_analytic() {
        let l = two_level();
        let gamma: f64 = 2.0;
        let jump = Operator::new(l.clone(), matrix_unit(2, 0, 1).mapv(|z| z * gamma.sqrt())).unwrap();
        let rho0 = StateVector::basis(&l, 1).unwrap().to_density();
        let t = 0.7;
        let rho = propagate_density(&Hamiltonian::zero(&l), &[jump], &rho0, t, 2000).unwrap();
        assert!((rho.populations()[1] - (-gamma * t).exp()).abs() < 1e-8);
        assert!((rho.trace() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn intermediate_decay_branches_symmetrically() {
        let p = PhysicalParams { gamma_e: 50.0, ..closed_default() };
        let model = GateModel::Parity;
        let layout = model.layout();
        let collapse = model::collapse_operators(&p, model);
        let rho0 = StateVector::from_levels(&layout, &[1, 0, levels::E]).unwrap().to_density();
        let rho = propagate_density(&Hamiltonian::zero(&layout), &collapse, &rho0, 0.5, 4000).unwrap();
        let pa = rho.populations()[layout.index(&[1, 0, levels::A]).unwrap()];
        let pb = rho.populations()[layout.index(&[1, 0, levels::B]).unwrap()];
        assert!((rho.trace() - 1.0).abs() < 1e-10);
        assert!((pa - pb).abs() < 1e-12);
        assert!((pa + pb - (1.0 - (-25.0f64).exp())).abs() < 1e-8);
    }

    #[test]
    fn closed_density_matches_state() {
        let p = closed_default();
        let model = GateModel::Parity;
        let stages = model::protocol_stages(&p, model, Frame::Unified).unwrap();
        let st = &stages[1];
        let psi0 = StateVector::from_levels(&model.layout(), &[1, 0, levels::A]).unwrap();
        let n = 4000;
        let psi = propagate_state(&st.hamiltonian, &psi0, st.duration, n).unwrap();
        let rho = propagate_density(&st.hamiltonian, &[], &psi0.to_density(), st.duration, n).unwrap();
        assert!(max_abs_diff(rho.matrix(), psi.to_density().matrix()) < 1e-7);
    }

    #[test]
    fn liouvillian_matches_direct_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = SpaceLayout::new(vec![3]).unwrap();
        let rand_m = |rng: &mut ChaCha8Rng| {
            Matrix::from_shape_fn((3, 3), |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        };
        let a = rand_m(&mut rng);
        let h = Operator::new(l.clone(), &a + &dagger(&a)).unwrap();
        let jumps: Vec<Operator> = (0..2).map(|_| Operator::new(l.clone(), rand_m(&mut rng)).unwrap()).collect();
        let rho = rand_m(&mut rng);
        let lv = liouvillian_superoperator(&h, &jumps);
        let lhs = unvectorize(&lv.dot(&vectorize(&rho)), 3);
        let hm = h.matrix();
        let mut rhs = (hm.dot(&rho) - rho.dot(hm)).mapv(|z| -I * z);
        for j in &jumps {
            let jm = j.matrix();
            let jd = dagger(jm);
            let ldl = jd.dot(jm);
            rhs = rhs + jm.dot(&rho).dot(&jd) - (ldl.dot(&rho) + rho.dot(&ldl)).mapv(|z| z * 0.5);
        }
        assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        assert_eq!(crate::opalg::max_abs(&liouvillian_superoperator(&Operator::zeros(&l), &[])), 0.0);
    }

    #[test]
    fn dark_state_survives_raman_stage() {
        let p = closed_default();
        let model = GateModel::Parity;
        let layout = model.layout();
        let stages = model::protocol_stages(&p, model, Frame::Unified).unwrap();
        let h = 1.0 / 2f64.sqrt();
        let mut amps = Array1::zeros(36);
        amps[layout.index(&[2, 0, levels::A]).unwrap()] = C64::new(h, 0.0);
        amps[layout.index(&[2, 0, levels::B]).unwrap()] = C64::new(-h, 0.0);
        let psi0 = StateVector::new(layout.clone(), amps).unwrap();
        let n = StepPolicy::default().steps_for(stages[1].duration, p.max_frequency());
        let out = propagate_state(&stages[1].hamiltonian, &psi0, stages[1].duration, n).unwrap();
        assert!(psi0.inner(&out).unwrap().norm() > 1.0 - 1e-8);
    }

    #[test]
    fn zero_raman_drive_leaves_target() {
        let mut p = closed_default();
        let schedule = p.schedule().unwrap();
        p.omega_e = 0.0;
        let stages = model::protocol_stages_with(&p, GateModel::Parity, &schedule, Frame::Unified).unwrap();
        for label in ["00A", "10A", "01B"] {
            let out = run_stages(&p, GateModel::Parity, &stages, &ProtocolInput::Label(label.into()), false, &StepPolicy::default()).unwrap();
            let want = if label.ends_with('A') { levels::A } else { levels::B };
            assert!((out.target_population(GateModel::Parity, want) - 1.0).abs() < 1e-7, "{label}");
        }
    }

    #[test]
    fn labels() {
        assert_eq!(parse_label(GateModel::Parity, "10B").unwrap(), vec![1, 0, 1]);
        assert_eq!(parse_label(GateModel::Controlled, "1A").unwrap(), vec![1, 0]);
        let err = parse_label(GateModel::Parity, "2A").unwrap_err().to_string();
        assert!(err.contains("00A") && err.contains("11B"));
        assert_eq!(computational_labels(GateModel::Parity)[5], "10B");
    }

    #[test]
    fn identity_limit_channel() {
        let mut p = closed_default();
        p.omega_c = 0.0;
        p.omega_r = 0.0;
        p.v = 0.0;
        p.delta_small = 0.0;
        p.delta_big = 0.0;
        let schedule = PulseSchedule::explicit(0.01, 0.05, 0.01).unwrap();
        p.omega_e = 0.0;
        let stages = model::protocol_stages_with(&p, GateModel::Parity, &schedule, Frame::Unified).unwrap();
        for dissipative in [false, true] {
            let ch = extract_channel_from_stages(&p, GateModel::Parity, &stages, dissipative, &StepPolicy::default()).unwrap();
            assert!(max_abs_diff(ch.superoperator(), QuantumChannel::identity(8).superoperator()) < 1e-8);
        }
    }

    #[test]
    fn choi_of_depolarizing_is_scaled_identity() {
        let ch = QuantumChannel::completely_depolarizing(2);
        let j = ch.choi();
        assert!(max_abs_diff(&j, &crate::opalg::identity(4).mapv(|z| z * 0.5)) < 1e-15);
        let r = ch.report();
        assert!(r.completely_positive && r.trace_nonincreasing);
    }

    #[test]
    fn choi_matches_definition_on_random_kraus_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ks: Vec<Matrix> = (0..3)
            .map(|_| Matrix::from_shape_fn((2, 2), |_| C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))))
            .collect();
        let ch = QuantumChannel::from_kraus(&ks).unwrap();
        for c in 0..2 {
            for e in 0..2 {
                let direct: Matrix = ks.iter().map(|k| k.dot(&matrix_unit(2, c, e)).dot(&dagger(k))).fold(Matrix::zeros((2, 2)), |a, b| a + b);
                let j = ch.choi();
                for a in 0..2 {
                    for b in 0..2 {
                        assert!((j[[c * 2 + a, e * 2 + b]] - direct[[a, b]]).norm() < 1e-14);
                    }
                }
            }
        }
        assert!(ch.report().choi_min_eigenvalue > -1e-12);
    }

    #[test]
    fn expm_multiply_matches_rotation() {
        let l = two_level();
        let h = Operator::new(l, pauli(3)).unwrap();
        let rho = Matrix::from_elem((2, 2), C64::new(0.5, 0.0));
        let out = reference::exponential(&h, &[], &rho, 0.3);
        assert!((out[[0, 1]] - C64::from_polar(0.5, -0.6)).norm() < 1e-14);
    }
}
