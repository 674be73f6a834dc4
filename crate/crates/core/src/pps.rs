//! Pseudo-pure states by temporal averaging, circuits on them, and their
//! four-line readouts.
//!
//! Each state is the sum of three experiments that start from equilibrium
//! and apply one gate of an operator sum. The three FIDs are added before
//! the Fourier transform.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply, fid_trace, propagate, AcquisitionConfig, DensityMatrix, PulseSequence};
use crate::error::{Error, Result};
use crate::gates::{permute_populations, Gate};
use crate::linalg::C64;
use crate::optimize::StoredSequence;
use crate::spectrum::{equilibrium_reference, line_order, peak_amplitudes, spectrum, PeakAmplitudes, Spectrum};
use crate::spin::{Frame, Framed, SpinSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PpsLabel {
    #[serde(rename = "PPS00")]
    Pps00,
    #[serde(rename = "PPS01")]
    Pps01,
    #[serde(rename = "PPS10")]
    Pps10,
    #[serde(rename = "PPS11")]
    Pps11,
}

impl PpsLabel {
    pub const ALL: [PpsLabel; 4] = [PpsLabel::Pps00, PpsLabel::Pps01, PpsLabel::Pps10, PpsLabel::Pps11];

    /// Zero-based level index (`+3/2` first).
    pub fn level(self) -> usize {
        self as usize
    }

    pub fn from_level(level: usize) -> Option<Self> {
        Self::ALL.get(level).copied()
    }
}

impl fmt::Display for PpsLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PPS{:02b}", self.level())
    }
}

impl FromStr for PpsLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s.trim().trim_start_matches("PPS").trim_start_matches("pps").trim_start_matches('_');
        match bits {
            "00" => Ok(PpsLabel::Pps00),
            "01" => Ok(PpsLabel::Pps01),
            "10" => Ok(PpsLabel::Pps10),
            "11" => Ok(PpsLabel::Pps11),
            _ => Err(Error::Parse(format!("unknown pseudo-pure state {s:?}"))),
        }
    }
}

/// The three gates whose averaged action makes the labelled state.
pub fn operator_sum(label: PpsLabel) -> [Gate; 3] {
    match label {
        PpsLabel::Pps00 => [Gate::Identity, Gate::CnotA, Gate::CnotB],
        PpsLabel::Pps01 => [Gate::Identity, Gate::CnotA, Gate::P13],
        PpsLabel::Pps10 => [Gate::Identity, Gate::CnotB, Gate::P12],
        PpsLabel::Pps11 => [Gate::Identity, Gate::P13, Gate::P12],
    }
}

const EQUILIBRIUM_POPULATIONS: [f64; 4] = [1.0, -1.0, -1.0, 1.0];

fn perm_of(gate: Gate) -> [usize; 4] {
    let m = gate.target().matrix();
    std::array::from_fn(|i| (0..4).find(|&j| m.get(j, i).norm() > 0.5).expect("permutation gate"))
}

/// Populations of the operator sum applied to equilibrium, for the
/// permutation gates used in the sums.
pub fn summed_populations(label: PpsLabel) -> [f64; 4] {
    let mut sum = [0.0; 4];
    for g in operator_sum(label) {
        let p = permute_populations(EQUILIBRIUM_POPULATIONS, &perm_of(g));
        for k in 0..4 {
            sum[k] += p[k];
        }
    }
    sum
}

/// Signed excess of the labelled level over the uniform background.
pub fn pseudo_pure_excess(label: PpsLabel) -> f64 {
    let p = summed_populations(label);
    let k = label.level();
    let background = p.iter().enumerate().filter(|&(i, _)| i != k).map(|(_, v)| v).sum::<f64>() / 3.0;
    p[k] - background
}

/// Ratio between the pseudo-pure excess and the equilibrium population
/// contrast; readouts are divided by it so that pattern entries are 0 or 1.
pub fn pseudo_pure_gain(label: PpsLabel) -> f64 {
    pseudo_pure_excess(label).abs() / 2.0
}

/// Pulse sequences realizing gates, keyed by gate.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GateLibrary {
    sequences: BTreeMap<Gate, PulseSequence>,
}

impl GateLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, gate: Gate, seq: PulseSequence) {
        self.sequences.insert(gate, seq);
    }

    pub fn get(&self, gate: Gate) -> Result<&PulseSequence> {
        self.sequences.get(&gate).ok_or_else(|| Error::MissingGate(gate.label().to_string()))
    }

    pub fn contains(&self, gate: Gate) -> bool {
        self.sequences.contains_key(&gate)
    }

    /// Reads `<label>.json` for each requested gate from `dir`.
    pub fn load_dir(dir: &Path, gates: &[Gate]) -> Result<Self> {
        let mut lib = Self::new();
        for &g in gates {
            if g == Gate::Identity {
                continue;
            }
            let path = dir.join(format!("{}.json", g.label()));
            if !path.exists() {
                return Err(Error::MissingGate(g.label().to_string()));
            }
            lib.insert(g, StoredSequence::load(&path)?.sequence()?);
        }
        Ok(lib)
    }

    /// Gates needed to prepare `label` and run `circuit` on it.
    pub fn required(label: PpsLabel, circuit: &[Gate]) -> Vec<Gate> {
        let mut v: Vec<Gate> = operator_sum(label).into_iter().chain(circuit.iter().copied()).filter(|&g| g != Gate::Identity).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// Supplies the hat-frame propagator for each gate.
trait GateRealization {
    fn propagator(&self, gate: Gate) -> Result<Framed>;
}

struct Sequences<'a> {
    sys: &'a SpinSystem,
    lib: &'a GateLibrary,
}

impl GateRealization for Sequences<'_> {
    fn propagator(&self, gate: Gate) -> Result<Framed> {
        if gate == Gate::Identity {
            return Ok(Framed::new(Frame::Hat, Gate::Identity.target().matrix()));
        }
        propagate(self.sys, self.lib.get(gate)?)
    }
}

struct Exact;

impl GateRealization for Exact {
    fn propagator(&self, gate: Gate) -> Result<Framed> {
        Ok(Framed::new(Frame::Hat, gate.target().matrix()))
    }
}

fn prepared_state(sys: &SpinSystem, first: Gate, circuit: &[Gate], gates: &dyn GateRealization) -> Result<DensityMatrix> {
    let mut rho = apply(&sys.equilibrium_deviation(), &gates.propagator(first)?)?;
    for &g in circuit {
        rho = apply(&rho, &gates.propagator(g)?)?;
    }
    Ok(rho)
}

/// The deviation state after the operator sum and the circuit.
pub fn averaged_state(sys: &SpinSystem, label: PpsLabel, circuit: &[Gate], lib: Option<&GateLibrary>) -> Result<DensityMatrix> {
    let states = operator_sum(label)
        .iter()
        .map(|&g| match lib {
            Some(lib) => prepared_state(sys, g, circuit, &Sequences { sys, lib }),
            None => prepared_state(sys, g, circuit, &Exact),
        })
        .collect::<Result<Vec<_>>>()?;
    states[1..].iter().try_fold(states[0].clone(), |acc, s| acc.try_add(s))
}

/// One of the three experiments behind an averaged readout.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstituentRun {
    pub gate: Gate,
    pub fid: Vec<C64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub label: PpsLabel,
    pub circuit: Vec<Gate>,
    pub constituents: Vec<ConstituentRun>,
    /// Transform of the summed FID.
    pub spectrum: Spectrum,
    /// Equilibrium-normalized, divided by the pseudo-pure gain.
    pub amplitudes: PeakAmplitudes,
    pub expected: PeakAmplitudes,
    pub deviation_metric: f64,
    /// Signed excess of the prepared level (ideal permutations).
    pub signed_excess: f64,
}

/// JSON report of one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub circuit: Vec<String>,
    pub amplitudes: [f64; 4],
    pub expected: [f64; 4],
    pub line_order: Vec<String>,
    pub deviation_metric: f64,
}

impl ExperimentRecord {
    /// Name in circuit notation, e.g. `CNOT_b PPS01`.
    pub fn name(&self) -> String {
        let mut parts: Vec<String> = self.circuit.iter().rev().map(|g| g.label().to_string()).collect();
        parts.push(self.label.to_string());
        parts.join(" ")
    }

    pub fn report(&self) -> Result<ExperimentReport> {
        Ok(ExperimentReport {
            label: self.label.to_string(),
            circuit: self.circuit.iter().map(|g| g.label().to_string()).collect(),
            amplitudes: self.amplitudes.normalized()?,
            expected: self.expected.normalized()?,
            line_order: self.amplitudes.line_order.clone(),
            deviation_metric: self.deviation_metric,
        })
    }
}

/// Runs the three constituent experiments with the stored gate sequences,
/// reads each out with `pi_half`, sums the FIDs and compares the
/// normalized four-line pattern with [`expected_readout`].
pub fn prepare_pps(
    sys: &SpinSystem,
    label: PpsLabel,
    lib: &GateLibrary,
    circuit: &[Gate],
    pi_half: &PulseSequence,
    acq: &AcquisitionConfig,
) -> Result<ExperimentRecord> {
    acq.validate(sys)?;
    for g in GateLibrary::required(label, circuit) {
        lib.get(g)?;
    }
    let read = propagate(sys, pi_half)?;
    let realization = Sequences { sys, lib };
    let constituents = operator_sum(label)
        .to_vec()
        .into_par_iter()
        .map(|g| {
            let rho = prepared_state(sys, g, circuit, &realization)?;
            let fid = fid_trace(sys, &apply(&rho, &read)?, acq)?;
            Ok(ConstituentRun { gate: g, fid })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summed = vec![C64::new(0.0, 0.0); acq.n_points];
    for run in &constituents {
        for (s, v) in summed.iter_mut().zip(&run.fid) {
            *s += v;
        }
    }
    let spec = spectrum(&summed, acq.dwell);
    let reference = equilibrium_reference(sys, pi_half, acq)?;
    let amplitudes = peak_amplitudes(&spec, sys, None)?.normalize_against(&reference, pseudo_pure_gain(label))?;
    let expected = expected_readout(sys, label, circuit)?;
    let deviation_metric = deviation_metric(&amplitudes, &expected)?;
    Ok(ExperimentRecord {
        label,
        circuit: circuit.to_vec(),
        constituents,
        spectrum: spec,
        amplitudes,
        expected,
        deviation_metric,
        signed_excess: pseudo_pure_excess(label),
    })
}

/// Ideal unitary of a π/2 hard pulse: the RF alone, at unit amplitude,
/// for `π / (2√3)`.
pub fn ideal_pi_half(sys: &SpinSystem) -> Result<Framed> {
    let t = std::f64::consts::PI / (2.0 * 3f64.sqrt());
    Ok(Framed::new(Frame::Hat, sys.hat_rf(1.0, 0.0, 0.0).op.evolve(t)?))
}

/// Line moduli predicted by the closed-form signal: `|ρ_ij|` weighted by
/// the mixing factor of each line.
pub fn line_coefficients(sys: &SpinSystem, rho: &DensityMatrix) -> Result<[f64; 4]> {
    let r = rho.expect_frame(Frame::Hat)?;
    let (fp, fm) = sys.mixing();
    let by_label = |label: &str| -> f64 {
        match label {
            "nu12" => r.get(0, 1).norm() * fp,
            "nu13" => r.get(0, 2).norm() * fm,
            "nu24" => r.get(1, 3).norm() * fm,
            "nu34" => r.get(2, 3).norm() * fp,
            _ => unreachable!("four lines"),
        }
    };
    let order = line_order(sys);
    Ok(std::array::from_fn(|k| by_label(&order[k])))
}

/// Noiseless prediction: exact target unitaries, an ideal π/2 pulse and
/// the closed-form line amplitudes, normalized like the simulated readout.
pub fn expected_readout(sys: &SpinSystem, label: PpsLabel, circuit: &[Gate]) -> Result<PeakAmplitudes> {
    let read = ideal_pi_half(sys)?;
    let rho = apply(&averaged_state(sys, label, circuit, None)?, &read)?;
    let reference = PeakAmplitudes {
        line_order: line_order(sys),
        raw: line_coefficients(sys, &apply(&sys.equilibrium_deviation(), &read)?)?,
        normalized: None,
    };
    PeakAmplitudes {
        line_order: line_order(sys),
        raw: line_coefficients(sys, &rho)?,
        normalized: None,
    }
    .normalize_against(&reference, pseudo_pure_gain(label))
}

/// Root-mean-square difference of two normalized four-line patterns.
pub fn deviation_metric(measured: &PeakAmplitudes, expected: &PeakAmplitudes) -> Result<f64> {
    let m = measured.normalized()?;
    let e = expected.normalized()?;
    Ok((m.iter().zip(&e).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 4.0).sqrt())
}

/// The pattern the labelled state reads out as (`1` on two lines).
pub fn basis_pattern(label: PpsLabel) -> [f64; 4] {
    match label {
        PpsLabel::Pps00 => [1.0, 0.0, 1.0, 0.0],
        PpsLabel::Pps01 => [0.0, 0.0, 1.0, 1.0],
        PpsLabel::Pps10 => [1.0, 1.0, 0.0, 0.0],
        PpsLabel::Pps11 => [0.0, 1.0, 0.0, 1.0],
    }
}

/// Basis state reached by a permutation gate from a basis state.
pub fn permuted_label(gate: Gate, label: PpsLabel) -> Option<PpsLabel> {
    if gate == Gate::Hab {
        return None;
    }
    PpsLabel::from_level(perm_of(gate)[label.level()])
}
