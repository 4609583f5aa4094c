use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use rayon::prelude::*;
use serde::Serialize;

use rpg_core::analysis::{self, optimize_phase_convention, GateKind, SweepResult};
use rpg_core::circuits::{self, IsingCurves};
use rpg_core::config::RunConfig;
use rpg_core::dynamics::{self, ProtocolInput, QuantumChannel, StepPolicy};
use rpg_core::model::{levels, mhz_to_angular, GateModel, PhysicalParams};
use rpg_core::output::{params_hash, text_hash, ChannelDump, Table, VERSION};

use crate::{CliError, FigureName, ModelArg, SweepAxis, SweepMetric, TargetLevel};

type Result<T> = std::result::Result<T, CliError>;

/// Target fidelity the V(l) anchor is solved for.
const ANCHOR_FIDELITY: f64 = 0.9935;

pub struct Context {
    cfg: RunConfig,
    echo: String,
    params: PhysicalParams,
    policy: StepPolicy,
    force_closed: bool,
}

fn level_name(model: GateModel, site: usize, level: usize) -> &'static str {
    if site == model.target_site() {
        ["A", "B", "e", "R"][level]
    } else {
        ["0", "1", "r"][level]
    }
}

impl Context {
    pub fn new(cfg: RunConfig, force_closed: bool) -> Result<Self> {
        Ok(Self { echo: cfg.echo(), params: cfg.params()?, policy: cfg.policy()?, cfg, force_closed })
    }

    fn dissipative(&self, wanted: bool) -> bool {
        wanted && !self.force_closed && self.cfg.physics.decay
    }

    fn finish(&self, command: &str, body: Table) -> Table {
        let mut t = Table::new(&[]);
        t.provenance(command, &self.echo);
        t.header.extend(body.header);
        t.columns = body.columns;
        t.rows = body.rows;
        t
    }

    fn write(&self, name: &str, table: &Table) -> Result<PathBuf> {
        let dir = PathBuf::from(&self.cfg.output.dir);
        fs::create_dir_all(&dir).map_err(|source| CliError::Write { path: dir.clone(), source })?;
        let path = dir.join(name);
        fs::write(&path, table.to_csv()).map_err(|source| CliError::Write { path: path.clone(), source })?;
        Ok(path)
    }

    pub fn protocol(&self, input: &str, model: ModelArg) -> Result<()> {
        let (m, params) = match model {
            ModelArg::Parity => (GateModel::Parity, self.params.clone()),
            ModelArg::Controlled => (GateModel::Controlled, circuits::cnot_params(&self.params)),
        };
        let dissipative = self.dissipative(true);
        let out = dynamics::run_protocol(&params, m, &ProtocolInput::Label(input.to_string()), dissipative, &self.policy)?;
        let layout = m.layout();
        let label = |i: usize| -> String {
            layout.levels(i).iter().enumerate().map(|(site, &l)| level_name(m, site, l)).collect()
        };

        let mut cols = vec!["index"];
        cols.extend(if m == GateModel::Parity { vec!["c1", "c2", "target"] } else { vec!["control", "target"] });
        cols.push("population");
        let mut body = Table::new(&cols);
        body.comment(format!("input = {input}, model = {m:?}, dissipative = {dissipative}"));
        body.comment("control levels 0 1 r = 0 1 2; target levels A B e R = 0 1 2 3");
        for (i, p) in out.populations.iter().enumerate() {
            let mut row = vec![i as f64];
            row.extend(layout.levels(i).iter().map(|&l| l as f64));
            row.push(*p);
            body.push(row);
        }
        let table = self.finish(&format!("protocol --input {input}"), body);

        let input_level = dynamics::parse_label(m, input).map_err(CliError::from)?[m.target_site()];
        let flipped = if input_level == levels::A { levels::B } else { levels::A };
        println!("# {} levels, input {input}, dissipative = {dissipative}", layout.total_dim());
        for (i, p) in out.populations.iter().enumerate() {
            println!("{i:>3} {} {p:.10}", label(i));
        }
        println!("# computational populations");
        let comp = layout.computational_indices();
        for (i, p) in comp.iter().zip(&out.computational) {
            println!("{} {p:.10}", label(*i));
        }
        println!("retention P(target unchanged) = {:.10}", out.target_population(m, input_level));
        println!("flip P(target flipped) = {:.10}", out.target_population(m, flipped));
        println!("leakage = {:.3e}", out.leakage());
        let path = self.write(&format!("protocol_{input}.csv"), &table)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    pub fn figure(&self, name: FigureName, anchor: bool) -> Result<()> {
        let cmd = format!("figure {}", figure_key(name));
        let body = match name {
            FigureName::Fig2a => {
                let c = &self.cfg.sweeps.fig2a;
                let r = analysis::retention_vs_coupling_ratio(&self.params, &c.omega_c_over_omega_e.values()?, self.dissipative(c.dissipative), &self.policy)?;
                Table::from(&r)
            }
            FigureName::Fig2b => {
                let c = &self.cfg.sweeps.fig2b;
                let x = c.delta_over_omega_e.values()?;
                let d: Vec<f64> = x.iter().map(|v| v * self.params.omega_e).collect();
                let mut r = analysis::transfer_vs_delta(&self.params, &d, self.dissipative(c.dissipative), &self.policy)?;
                r.push_metric("delta_over_omega_e", x)?;
                Table::from(&r)
            }
            FigureName::Fig2c => {
                let c = &self.cfg.sweeps.fig2c;
                let x = c.v_over_omega_e.values()?;
                let v: Vec<f64> = x.iter().map(|v| v * self.params.omega_e).collect();
                let mut r = analysis::transfer_vs_v(&self.params, &v, self.dissipative(c.dissipative), &self.policy)?;
                r.push_metric("v_over_omega_e", x)?;
                Table::from(&r)
            }
            FigureName::Fig2d => self.fig2d()?,
            FigureName::Fig3a => self.fig3a()?,
            FigureName::Fig3b => self.vdw_table(&self.cfg.sweeps.fig3b.spacing_um.values()?, anchor)?,
            FigureName::Fig4c => self.dj_table(&self.cfg.circuits.dj_durations_us.values()?)?,
            FigureName::Fig5c => self.ising_table(self.cfg.circuits.ising_duration_us)?,
        };
        let table = self.finish(&cmd, body);
        let path = self.write(&format!("{}.csv", figure_file(name)), &table)?;
        println!("wrote {}", path.display());
        Ok(())
    }

    fn fig2d(&self) -> Result<Table> {
        let c = &self.cfg.sweeps.fig2d;
        let t0 = self.params.schedule()?.total();
        let times = c.t_total_us.values()?;
        if let Some(t) = times.iter().find(|t| !(**t > 0.0)) {
            return Err(rpg_core::Error::Config(format!("`sweeps.fig2d.t_total_us` must be positive, got {t}")).into());
        }
        let omegas: Vec<f64> = times.iter().map(|t| self.params.omega_e * t0 / t).collect();
        let r = analysis::fidelity_vs_gate_time(&self.params, &omegas, self.dissipative(c.dissipative), &self.policy)?;
        let f = r.metric("fidelity").unwrap_or_default();
        let mut t = Table::from(&r);
        if let Some((i, best)) = f.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
            t.comment(format!("best fidelity {best:?} at t_total = {:?} us", r.axis_values[i]));
        }
        Ok(t)
    }

    fn fig3a(&self) -> Result<Table> {
        let c = &self.cfg.sweeps.fig3a;
        let grid = c.v_over_omega_c.values()?;
        let mut all = grid.clone();
        all.push(c.floor_v_over_omega_c);
        let mut r = analysis::blockade_scan(&self.params, &all, self.dissipative(c.dissipative), &self.policy)?;
        let floor = r.metrics[0].1[grid.len()];
        r.axis_values.truncate(grid.len());
        for (_, v) in r.metrics.iter_mut() {
            v.truncate(grid.len());
        }
        let mut t = Table::from(&r);
        t.comment(format!("floor: fidelity {floor:?} at v_over_omega_c = {:?}", c.floor_v_over_omega_c));
        match analysis::blockade_tail_fit(&grid, &r.metrics[0].1, floor, 2.5) {
            Ok((k, a)) => t.comment(format!("tail fit over v_over_omega_c >= 2.5: floor - F = {a:.4e} (omega_c/v)^{k:.4}")),
            Err(e) => t.comment(format!("tail fit unavailable: {e}")),
        };
        Ok(t)
    }

    fn vdw_table(&self, spacing: &[f64], anchor: bool) -> Result<Table> {
        let c6 = self.cfg.c6()?;
        let mut r = analysis::vdw_curve(c6, spacing)?;
        let v = r.metric("v").unwrap_or_default().to_vec();
        r.push_metric("v_mhz", v.iter().map(|x| x / (2.0 * std::f64::consts::PI)).collect())?;
        r.push_metric("v_over_omega_c", v.iter().map(|x| x / self.params.omega_c).collect())?;
        let mut t = Table::from(&r);
        let l0 = self.cfg.physics.spacing_um;
        let v0 = rpg_core::model::vdw_shift(c6, l0)?;
        t.comment(format!("at spacing {l0:?} um: v = {v0:?} rad/us, v_over_omega_c = {:?}", v0 / self.params.omega_c));
        if anchor {
            let x = analysis::blockade_for_fidelity(&self.params, ANCHOR_FIDELITY, (0.5, 2.5), 1e-3, self.dissipative(true), &self.policy)?;
            let v_needed = x * self.params.omega_c;
            let l = if c6 > 0.0 { format!("{:?} um", (c6 / v_needed).powf(1.0 / 6.0)) } else { "none (c6 = 0)".into() };
            t.comment(format!("fidelity {ANCHOR_FIDELITY} needs v_over_omega_c >= {x:.4} (v = {v_needed:?} rad/us); largest spacing: {l}"));
        }
        Ok(t)
    }

    fn dj_table(&self, durations: &[f64]) -> Result<Table> {
        let c = &self.cfg.circuits;
        let dissipative = self.dissipative(c.dissipative);
        let pts = circuits::deutsch_jozsa_vs_duration(&self.params, durations, c.time_budget, dissipative, c.phase_correction, &self.policy)?;
        let mut t = Table::new(&["duration", "P11_rpg", "P11_cnot", "leakage_rpg", "leakage_cnot", "P11_rpg_normalized", "P11_cnot_normalized"]);
        t.comment(format!("params_sha256 = {}", params_hash(&self.params)));
        t.comment(format!(
            "time_budget = {:?}, phase_correction = {:?}, dissipative = {dissipative}, ancilla traced out",
            c.time_budget, c.phase_correction
        ));
        for p in pts {
            t.push(vec![p.duration, p.p11_rpg, p.p11_cnot, p.leakage_rpg, p.leakage_cnot, p.p11_rpg_normalized, p.p11_cnot_normalized]);
        }
        Ok(t)
    }

    fn ising_table(&self, duration: f64) -> Result<Table> {
        let c = &self.cfg.circuits;
        let dissipative = self.dissipative(c.dissipative);
        let gates = circuits::budget_gate_channels(
            &self.params,
            duration,
            c.time_budget,
            circuits::ISING_GATE_COUNTS,
            dissipative,
            c.phase_correction,
            &self.policy,
        )?;
        let curves = circuits::run_ising_dqs(&gates, &c.ising_ht.values()?)?;
        let mut t = Table::new(&["ht", "overlap_exact", "overlap_rpg", "overlap_cnot", "leakage_rpg", "leakage_cnot"]);
        t.comment(format!("params_sha256 = {}", params_hash(&self.params)));
        t.comment(format!(
            "duration = {duration:?} us, time_budget = {:?}, phase_correction = {:?}, dissipative = {dissipative}",
            c.time_budget, c.phase_correction
        ));
        t.comment(format!("gate fidelity rpg = {:?}, cnot = {:?}", gates.rpg.fit.fidelity, gates.cnot.fit.fidelity));
        t.comment(format!(
            "L2 distance to exact: rpg = {:?}, cnot = {:?}",
            IsingCurves::l2_distance(&curves.rpg, &curves.exact),
            IsingCurves::l2_distance(&curves.cnot, &curves.exact)
        ));
        for i in 0..curves.ht.len() {
            t.push(vec![curves.ht[i], curves.exact[i], curves.rpg[i], curves.cnot[i], curves.leakage_rpg[i], curves.leakage_cnot[i]]);
        }
        Ok(t)
    }

    pub fn dj(&self, durations: &[f64]) -> Result<()> {
        let grid = if durations.is_empty() { self.cfg.circuits.dj_durations_us.values()? } else { durations.to_vec() };
        print!("{}", self.finish("dj", self.dj_table(&grid)?).to_csv());
        Ok(())
    }

    pub fn ising(&self, duration: Option<f64>) -> Result<()> {
        let d = duration.unwrap_or(self.cfg.circuits.ising_duration_us);
        print!("{}", self.finish("ising", self.ising_table(d)?).to_csv());
        Ok(())
    }

    pub fn vdw(&self, spacing: &[f64]) -> Result<()> {
        let grid = if spacing.is_empty() { self.cfg.sweeps.fig3b.spacing_um.values()? } else { spacing.to_vec() };
        print!("{}", self.finish("vdw", self.vdw_table(&grid, false)?).to_csv());
        Ok(())
    }

    pub fn channel(&self, output: &Path, with_cnot: bool) -> Result<()> {
        #[derive(Serialize)]
        struct ChannelFile {
            generator: String,
            config_sha256: String,
            params_sha256: String,
            params: PhysicalParams,
            dissipative: bool,
            rpg: ChannelDump,
            cnot: Option<ChannelDump>,
        }

        let dissipative = self.dissipative(true);
        let dump = |ch: &QuantumChannel, kind: GateKind| -> Result<ChannelDump> {
            let fit = optimize_phase_convention(ch, kind)?;
            let phases = kind.phase_names().into_iter().zip(fit.ideal.phases.iter().copied()).collect();
            Ok(ChannelDump::new(ch, fit.zero_phase_fidelity, fit.fidelity, phases))
        };
        let rpg = dynamics::extract_channel(&self.params, GateModel::Parity, dissipative, &self.policy)?;
        let cnot = if with_cnot {
            Some(circuits::cnot_channel(&circuits::cnot_params(&self.params), dissipative, &self.policy)?)
        } else {
            None
        };
        let file = ChannelFile {
            generator: format!("rpgsim {VERSION} channel"),
            config_sha256: text_hash(&self.echo),
            params_sha256: params_hash(&self.params),
            params: self.params.clone(),
            dissipative,
            rpg: dump(&rpg, GateKind::ParityX { n_qubits: 3 })?,
            cnot: cnot.as_ref().map(|c| dump(c, GateKind::Cnot)).transpose()?,
        };
        let json = serde_json::to_string_pretty(&file).expect("channel dump serializes");
        if let Some(dir) = output.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|source| CliError::Write { path: dir.to_path_buf(), source })?;
        }
        fs::write(output, json).map_err(|source| CliError::Write { path: output.to_path_buf(), source })?;
        println!(
            "rpg: fidelity {:.6} (zero-phase {:.6}), completely positive = {}",
            file.rpg.fidelity, file.rpg.fidelity_zero_phase, file.rpg.report.completely_positive
        );
        if let Some(c) = &file.cnot {
            println!("cnot: fidelity {:.6} (zero-phase {:.6}), completely positive = {}", c.fidelity, c.fidelity_zero_phase, c.report.completely_positive);
        }
        println!("wrote {}", output.display());
        let bad = [Some(&file.rpg), file.cnot.as_ref()].into_iter().flatten().find(|d| !d.report.completely_positive || !d.report.trace_nonincreasing);
        if let Some(d) = bad {
            return Err(rpg_core::Error::Tolerance(format!("extracted channel fails CP/trace checks: {:?}", d.report)).into());
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    pub fn sweep(
        &self,
        axis: SweepAxis,
        values: &[f64],
        metric: SweepMetric,
        input: &str,
        level: TargetLevel,
        dissipative: bool,
        output: Option<&Path>,
    ) -> Result<()> {
        let dissipative = self.dissipative(dissipative);
        let p = &self.params;
        let points = values
            .iter()
            .map(|&x| {
                let q = match axis {
                    SweepAxis::OmegaCOverOmegaE => PhysicalParams { omega_c: x * p.omega_e, ..p.clone() },
                    SweepAxis::DeltaOverOmegaE => PhysicalParams { delta_big: x * p.omega_e, ..p.clone() },
                    SweepAxis::OmegaROverOmegaE => PhysicalParams { omega_r: x * p.omega_e, ..p.clone() },
                    SweepAxis::VOverOmegaC => PhysicalParams { v: x * p.omega_c, delta_small: x * p.omega_c, ..p.clone() },
                    SweepAxis::DeltaSmallOverOmegaE => PhysicalParams { delta_small: x * p.omega_e, ..p.clone() },
                    SweepAxis::OmegaEMhz => p.scale_frequencies(mhz_to_angular(x) / p.omega_e),
                    SweepAxis::SpacingUm => p.clone().with_vdw(self.cfg.c6()?, x)?,
                };
                q.validate()?;
                Ok(q)
            })
            .collect::<Result<Vec<_>>>()?;
        let axis_name = axis.to_possible_value().map(|v| v.get_name().replace('-', "_")).unwrap_or_default();
        let mut r = SweepResult::new(&axis_name, values.to_vec(), p, &self.policy);
        match metric {
            SweepMetric::Fidelity => {
                let fits = analysis::gate_fidelities(&points, dissipative, &self.policy)?;
                r.push_metric("fidelity", fits.iter().map(|f| f.fidelity).collect())?;
                r.push_metric("fidelity_zero_phase", fits.iter().map(|f| f.zero_phase_fidelity).collect())?;
            }
            SweepMetric::Population | SweepMetric::Leakage => {
                let target = match level {
                    TargetLevel::A => levels::A,
                    TargetLevel::B => levels::B,
                    TargetLevel::E => levels::E,
                    TargetLevel::R => levels::R,
                };
                let runs = points
                    .par_iter()
                    .map(|q| dynamics::run_protocol(q, GateModel::Parity, &ProtocolInput::Label(input.to_string()), dissipative, &self.policy))
                    .collect::<std::result::Result<Vec<_>, _>>()?;
                if metric == SweepMetric::Population {
                    r.push_metric("population", runs.iter().map(|o| o.target_population(GateModel::Parity, target)).collect())?;
                } else {
                    r.push_metric("leakage", runs.iter().map(|o| o.leakage()).collect())?;
                }
            }
        }
        r.push_metric("t_total", points.iter().map(|q| q.schedule().map(|s| s.total())).collect::<std::result::Result<_, _>>()?)?;
        let mut body = Table::from(&r);
        body.comment(format!("metric = {metric:?}, input = {input}, level = {level:?}, dissipative = {dissipative}"));
        let table = self.finish(&format!("sweep --axis {axis_name}"), body);
        match output {
            Some(path) => {
                fs::write(path, table.to_csv()).map_err(|source| CliError::Write { path: path.to_path_buf(), source })?;
                println!("wrote {}", path.display());
            }
            None => print!("{}", table.to_csv()),
        }
        Ok(())
    }
}

fn figure_key(name: FigureName) -> String {
    name.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default()
}

/// `fig2a` → `Fig2a`
fn figure_file(name: FigureName) -> String {
    let k = figure_key(name);
    let mut c = k.chars();
    c.next().map(|f| f.to_ascii_uppercase().to_string() + c.as_str()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn figure_files_are_capitalized() {
        assert_eq!(figure_file(FigureName::Fig4c), "Fig4c");
        assert_eq!(figure_file(FigureName::Fig2a), "Fig2a");
    }
}
