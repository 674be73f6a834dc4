//! `nqr-qip`: spectra, gate optimization, θ scans, orientation fits and
//! π/2 calibration from the command line.

mod config;

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nqr_qip::dynamics::{PulseSegment, PulseSequence};
use nqr_qip::gates::Gate;
use nqr_qip::optimize::{calibrate_pi_half, optimize_gate, Calibration};
use nqr_qip::orientation::{fit_orientation, theta_scan, ThetaScanData};
use nqr_qip::pps::{prepare_pps, GateLibrary, PpsLabel};
use nqr_qip::spectrum::{equilibrium_reference, read_spectrum};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "nqr-qip", version, about = "Spin-3/2 NQR two-qubit gate and pseudo-pure state simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// JSON run configuration; the built-in KClO3 preset is used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the optimizer seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulated readout of equilibrium or a pseudo-pure state after a circuit.
    Spectrum {
        /// `equilibrium` or `pps:<00|01|10|11>`.
        #[arg(long, default_value = "equilibrium")]
        state: StateArg,
        /// Gates applied after preparation, first to last, comma separated.
        #[arg(long, value_delimiter = ',')]
        circuit: Vec<Gate>,
    },
    /// Optimize a gate and store its pulse sequence as `<gate>.json`.
    Optimize {
        /// CNOT_a, CNOT_b, P12, P13, P24, H_ab, or `all` for the five standard gates.
        #[arg(long)]
        gate: GateArg,
    },
    /// Closed-form line frequencies over a θ range.
    Scan {
        #[arg(long, default_value_t = 0.0)]
        from_deg: f64,
        #[arg(long, default_value_t = 180.0)]
        to_deg: f64,
        #[arg(long, default_value_t = 1.0)]
        step_deg: f64,
    },
    /// Fit ν_Q, ν_0 and the θ offset to a scan CSV.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Nutation scan for the π/2 readout pulse.
    Calibrate {
        /// Defaults to the configured readout amplitude.
        #[arg(long)]
        omega1_hz: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug)]
enum StateArg {
    Equilibrium,
    Pps(PpsLabel),
}

impl FromStr for StateArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("equilibrium") {
            return Ok(Self::Equilibrium);
        }
        let bits = s.strip_prefix("pps:").ok_or_else(|| format!("expected 'equilibrium' or 'pps:<label>', got '{s}'"))?;
        PpsLabel::from_str(bits).map(Self::Pps).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Copy, Debug)]
enum GateArg {
    All,
    One(Gate),
}

impl FromStr for GateArg {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s.eq_ignore_ascii_case("all") {
            return Ok(Self::All);
        }
        match Gate::from_str(s).map_err(|e| e.to_string())? {
            Gate::Identity => Err("the identity needs no optimization".into()),
            g => Ok(Self::One(g)),
        }
    }
}

#[derive(Serialize)]
struct EquilibriumReport {
    line_order: Vec<String>,
    amplitudes: [f64; 4],
    expected: [f64; 4],
    deviation_metric: f64,
}

#[derive(Serialize)]
struct ReadoutInfo {
    omega1_hz: f64,
    duration_s: f64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn readout_pulse(cfg: &RunConfig) -> Result<PulseSequence> {
    let omega_1 = 2.0 * PI * cfg.readout_omega1_hz;
    let duration = match cfg.readout_duration_s {
        Some(d) => d,
        None => calibrate_pi_half(&cfg.system, omega_1, &cfg.acquisition)?.duration_s,
    };
    Ok(PulseSequence::new("pi_half", vec![PulseSegment::on_resonance(duration, omega_1, 0.0)])?)
}

fn cmd_spectrum(cfg: &RunConfig, out: &Path, state: StateArg, circuit: &[Gate]) -> Result<()> {
    let sys = &cfg.system;
    let acq = &cfg.acquisition;
    match state {
        StateArg::Equilibrium => {
            if !circuit.is_empty() {
                bail!("--circuit applies to pseudo-pure states only");
            }
            let pulse = readout_pulse(cfg)?;
            let spec = read_spectrum(sys, &sys.equilibrium_deviation(), &pulse, acq)?;
            let reference = equilibrium_reference(sys, &pulse, acq)?;
            let amps = nqr_qip::spectrum::peak_amplitudes(&spec, sys, Some(&reference))?;
            let expected = [1.0; 4];
            let report = EquilibriumReport {
                line_order: amps.line_order.clone(),
                amplitudes: amps.normalized()?,
                expected,
                deviation_metric: nqr_qip::pps::deviation_metric(
                    &amps,
                    &nqr_qip::spectrum::PeakAmplitudes {
                        normalized: Some(expected),
                        ..amps.clone()
                    },
                )?,
            };
            spec.write_csv(create(&out.join("spectrum.csv"))?)?;
            write_json(&out.join("amplitudes.json"), &amps)?;
            write_json(&out.join("report.json"), &report)?;
            write_json(&out.join("readout.json"), &readout_info(&pulse))?;
            println!("equilibrium: {}", fmt_pattern(&report.amplitudes));
        }
        StateArg::Pps(label) => {
            let dir = cfg.gates_dir.clone().unwrap_or_else(|| out.to_path_buf());
            let lib = GateLibrary::load_dir(&dir, &GateLibrary::required(label, circuit))
                .with_context(|| format!("loading gate sequences from {} (run `nqr-qip optimize` first)", dir.display()))?;
            let pulse = readout_pulse(cfg)?;
            let rec = prepare_pps(sys, label, &lib, circuit, &pulse, acq)?;
            rec.spectrum.write_csv(create(&out.join("spectrum.csv"))?)?;
            write_json(&out.join("amplitudes.json"), &rec.amplitudes)?;
            write_json(&out.join("report.json"), &rec.report()?)?;
            write_json(&out.join("readout.json"), &readout_info(&pulse))?;
            println!(
                "{}: {} (expected {}), deviation {:.4}",
                rec.name(),
                fmt_pattern(&rec.amplitudes.normalized()?),
                fmt_pattern(&rec.expected.normalized()?),
                rec.deviation_metric
            );
        }
    }
    Ok(())
}

fn readout_info(pulse: &PulseSequence) -> ReadoutInfo {
    let s = pulse.segments[0];
    ReadoutInfo {
        omega1_hz: s.omega_1 / (2.0 * PI),
        duration_s: s.duration,
    }
}

fn fmt_pattern(p: &[f64; 4]) -> String {
    p.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(":")
}

fn cmd_optimize(cfg: &RunConfig, out: &Path, gate: GateArg) -> Result<()> {
    let gates = match gate {
        GateArg::All => Gate::OPTIMIZED.to_vec(),
        GateArg::One(g) => vec![g],
    };
    for g in gates {
        let r = optimize_gate(&cfg.system, &g.target(), &cfg.optimizer)?;
        let path = out.join(format!("{}.json", g.label()));
        r.record().save(&path)?;
        println!(
            "{g}: fidelity {:.6}, duration {:.1} us, {} segments{}",
            r.fidelity,
            r.sequence.total_duration() * 1e6,
            r.sequence.segments.len(),
            if r.target_met { "" } else { " (target not met)" }
        );
    }
    Ok(())
}

fn cmd_scan(cfg: &RunConfig, out: &Path, from: f64, to: f64, step: f64) -> Result<()> {
    if !(step > 0.0 && from.is_finite() && to.is_finite() && to >= from) {
        bail!("scan range must satisfy from <= to with a positive step");
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    let thetas: Vec<f64> = (0..n).map(|k| (from + k as f64 * step).to_radians()).collect();
    let data = theta_scan(&cfg.system, &thetas);
    data.write_csv(create(&out.join("scan.csv"))?)?;
    println!("scan: {n} angles from {from} to {} deg", from + (n - 1) as f64 * step);
    Ok(())
}

fn cmd_fit(out: &Path, data: &Path) -> Result<()> {
    let file = File::open(data).with_context(|| format!("opening {}", data.display()))?;
    let scan = ThetaScanData::read_csv(file)?;
    let report = fit_orientation(&scan)?;
    write_json(&out.join("fit.json"), &report)?;
    println!(
        "fit: nu_Q {:.3} Hz, nu_0 {:.4} Hz, theta offset {:.5} deg, rms residual {:.3e} Hz",
        report.nu_q_hz,
        report.nu0_hz,
        report.theta_offset_rad.to_degrees(),
        report.rms_residual_hz
    );
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig, out: &Path, omega1_hz: Option<f64>) -> Result<()> {
    let hz = omega1_hz.unwrap_or(cfg.readout_omega1_hz);
    let cal: Calibration = calibrate_pi_half(&cfg.system, 2.0 * PI * hz, &cfg.acquisition)?;
    write_json(&out.join("calibration.json"), &cal)?;
    println!("pi/2 at {hz} Hz: {:.2} us", cal.duration_s * 1e6);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.global.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::paper(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.optimizer.seed = seed;
    }
    let out = &cli.global.out_dir;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match cli.command {
        Command::Spectrum { state, circuit } => cmd_spectrum(&cfg, out, state, &circuit),
        Command::Optimize { gate } => cmd_optimize(&cfg, out, gate),
        Command::Scan { from_deg, to_deg, step_deg } => cmd_scan(&cfg, out, from_deg, to_deg, step_deg),
        Command::Fit { data } => cmd_fit(out, &data),
        Command::Calibrate { omega1_hz } => cmd_calibrate(&cfg, out, omega1_hz),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
