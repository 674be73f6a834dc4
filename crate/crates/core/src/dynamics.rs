//! Pulse propagation and free-induction-decay synthesis in the hat frame.

use std::f64::consts::PI;

use nalgebra::{Matrix4, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, Operator, C64};
use crate::spin::{r_transform, spin3_2, Frame, Framed, SpinSystem, DIM};

/// Transverse relaxation time of ³⁵Cl in KClO₃, s. Sequences longer than
/// this are flagged.
pub const T2_BUDGET: f64 = 4.6e-3;

/// One piecewise-constant RF segment. `omega_1 = 0` is free evolution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "SegmentRecord", into = "SegmentRecord")]
pub struct PulseSegment {
    /// s
    pub duration: f64,
    /// rad/s
    pub omega_1: f64,
    /// RF phase, rad
    pub alpha: f64,
    /// Carrier offset `ω_Q - ω`, rad/s
    pub delta_wq: f64,
    /// Coil polarization azimuth, rad
    pub phi: f64,
}

/// On-disk form of a segment: ordinary frequencies.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
struct SegmentRecord {
    duration_s: f64,
    omega1_hz: f64,
    alpha_rad: f64,
    #[serde(default)]
    delta_wq_hz: f64,
    #[serde(default)]
    phi_rad: f64,
}

impl From<SegmentRecord> for PulseSegment {
    fn from(r: SegmentRecord) -> Self {
        Self {
            duration: r.duration_s,
            omega_1: 2.0 * PI * r.omega1_hz,
            alpha: r.alpha_rad,
            delta_wq: 2.0 * PI * r.delta_wq_hz,
            phi: r.phi_rad,
        }
    }
}

impl From<PulseSegment> for SegmentRecord {
    fn from(s: PulseSegment) -> Self {
        Self {
            duration_s: s.duration,
            omega1_hz: s.omega_1 / (2.0 * PI),
            alpha_rad: s.alpha,
            delta_wq_hz: s.delta_wq / (2.0 * PI),
            phi_rad: s.phi,
        }
    }
}

impl PulseSegment {
    /// Resonant pulse with the coil at φ = 0.
    pub fn on_resonance(duration: f64, omega_1: f64, alpha: f64) -> Self {
        Self {
            duration,
            omega_1,
            alpha,
            delta_wq: 0.0,
            phi: 0.0,
        }
    }

    pub fn free(duration: f64) -> Self {
        Self::on_resonance(duration, 0.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::InvalidPulse(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.omega_1 >= 0.0 && self.omega_1.is_finite()) {
            return Err(Error::InvalidPulse(format!("omega_1 must be non-negative, got {}", self.omega_1)));
        }
        if !(self.alpha.is_finite() && self.delta_wq.is_finite() && self.phi.is_finite()) {
            return Err(Error::InvalidPulse("non-finite phase or offset".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSequence {
    pub label: String,
    pub segments: Vec<PulseSegment>,
}

impl PulseSequence {
    pub fn new(label: impl Into<String>, segments: Vec<PulseSegment>) -> Result<Self> {
        let seq = Self {
            label: label.into(),
            segments,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::EmptySequence);
        }
        for s in &self.segments {
            s.validate()?;
        }
        if self.total_duration() > T2_BUDGET {
            log::warn!(
                "sequence '{}' lasts {:.1} µs, longer than T2 = {:.1} ms",
                self.label,
                self.total_duration() * 1e6,
                T2_BUDGET * 1e3
            );
        }
        Ok(())
    }

    pub fn total_duration(&self) -> f64 {
        self.segments.iter().map(|s| s.duration).sum()
    }

    pub fn exceeds_t2_budget(&self) -> bool {
        self.total_duration() > T2_BUDGET
    }

    /// Same sequence with every segment polarized at `phi`.
    pub fn with_phi(&self, phi: f64) -> Self {
        let mut out = self.clone();
        for s in &mut out.segments {
            s.phi = phi;
        }
        out
    }
}

/// Traceless Hermitian deviation density matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    op: Operator,
    frame: Frame,
}

impl DensityMatrix {
    pub fn new(op: Operator, frame: Frame) -> Result<Self> {
        if op.dim() != DIM {
            return Err(Error::DimensionMismatch {
                expected: DIM,
                found: op.dim(),
            });
        }
        let scale = op.max_norm().max(1.0);
        let herm = op.hermiticity_error();
        if herm > 1e-12 * scale {
            return Err(Error::NotHermitian(herm));
        }
        let tr = op.trace().norm();
        if tr > 1e-12 * scale {
            return Err(Error::InvalidPulse(format!("deviation matrix must be traceless, trace = {tr:.3e}")));
        }
        Ok(Self { op, frame })
    }

    pub(crate) fn new_unchecked(op: Operator, frame: Frame) -> Self {
        Self { op, frame }
    }

    /// Diagonal deviation matrix from level populations; the mean is removed.
    pub fn from_populations(populations: [f64; 4], frame: Frame) -> Self {
        let mean = populations.iter().sum::<f64>() / 4.0;
        let p: Vec<f64> = populations.iter().map(|x| x - mean).collect();
        Self::new_unchecked(Operator::real_diagonal(&p), frame)
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }

    pub fn populations(&self) -> [f64; 4] {
        let d = self.op.diagonal_entries();
        [d[0].re, d[1].re, d[2].re, d[3].re]
    }

    pub fn expect_frame(&self, frame: Frame) -> Result<&Operator> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame,
                found: self.frame,
            });
        }
        Ok(&self.op)
    }

    /// Sum of two deviation matrices in the same frame.
    pub fn try_add(&self, other: &DensityMatrix) -> Result<DensityMatrix> {
        let rhs = other.expect_frame(self.frame)?;
        Ok(Self::new_unchecked(&self.op + rhs, self.frame))
    }

    pub fn scale(&self, s: f64) -> DensityMatrix {
        Self::new_unchecked(self.op.scale(s), self.frame)
    }
}

/// Precomputed hat-frame pieces so that per-segment Hamiltonians are cheap
/// linear combinations.
#[derive(Clone, Debug)]
pub struct HatModel {
    sys: SpinSystem,
    /// `R Iz² R / 2`
    half_iz2: Operator,
    zeeman: Operator,
    /// `R |1><2| R` and `R |3><4| R`; the RF is built from these and their adjoints.
    upper: Operator,
    lower: Operator,
    fixed: [M4; 4],
}

pub(crate) type M4 = Matrix4<C64>;

fn to_m4(op: &Operator) -> M4 {
    M4::from_fn(|i, j| op.get(i, j))
}

impl HatModel {
    pub fn new(sys: &SpinSystem) -> Self {
        let r = r_transform(sys.theta);
        let (_, _, iz) = spin3_2();
        let mut e12 = Operator::zeros(DIM);
        e12.set(0, 1, c(1.0));
        let mut e34 = Operator::zeros(DIM);
        e34.set(2, 3, c(1.0));
        let half_iz2 = r.conjugate(&(&iz * &iz)).scale(0.5);
        let zeeman = r.conjugate(&sys.secular_zeeman().op);
        let upper = r.conjugate(&e12);
        let lower = r.conjugate(&e34);
        let fixed = [to_m4(&half_iz2), to_m4(&zeeman), to_m4(&upper), to_m4(&lower)];
        Self {
            sys: *sys,
            half_iz2,
            zeeman,
            upper,
            lower,
            fixed,
        }
    }

    pub fn system(&self) -> &SpinSystem {
        &self.sys
    }

    pub fn hamiltonian(&self, seg: &PulseSegment) -> Operator {
        let mut h = &self.half_iz2.scale(seg.delta_wq) + &self.zeeman;
        if seg.omega_1 != 0.0 {
            let k = -(3f64.sqrt()) / 2.0 * seg.omega_1;
            let plus = C64::from_polar(k, -(seg.phi + seg.alpha));
            let minus = C64::from_polar(k, -(seg.phi - seg.alpha));
            let a = &self.upper.scale_complex(plus) + &self.lower.scale_complex(minus);
            h = &h + &(&a + &a.adjoint());
        }
        h.hermitian_part()
    }

    /// `[R Iz² R/2, Zeeman, R|1><2|R, R|3><4|R]` as fixed-size matrices.
    pub(crate) fn parts4(&self) -> &[M4; 4] {
        &self.fixed
    }

    /// Fixed-size variant of [`Self::segment_propagator`] for inner loops.
    pub(crate) fn segment_propagator4(&self, seg: &PulseSegment) -> M4 {
        let [half_iz2, zeeman, upper, lower] = &self.fixed;
        let mut h = half_iz2 * C64::from(seg.delta_wq) + zeeman;
        if seg.omega_1 != 0.0 {
            let k = -(3f64.sqrt()) / 2.0 * seg.omega_1;
            let a = upper * C64::from_polar(k, -(seg.phi + seg.alpha)) + lower * C64::from_polar(k, -(seg.phi - seg.alpha));
            h += a + a.adjoint();
        }
        let h = (h + h.adjoint()) * C64::from(0.5);
        let eig = SymmetricEigen::new(h);
        let phases = eig.eigenvalues.map(|e| C64::from_polar(1.0, -e * seg.duration));
        let v = eig.eigenvectors;
        v * M4::from_diagonal(&phases) * v.adjoint()
    }

    pub fn segment_propagator(&self, seg: &PulseSegment) -> Result<Operator> {
        self.hamiltonian(seg).evolve(seg.duration)
    }

    /// Ordered product of segment propagators, first segment acting first.
    pub fn propagate(&self, seq: &PulseSequence) -> Result<Framed> {
        if seq.segments.is_empty() {
            return Err(Error::EmptySequence);
        }
        let mut u = Operator::identity(DIM);
        for seg in &seq.segments {
            seg.validate()?;
            u = &self.segment_propagator(seg)? * &u;
        }
        Ok(Framed::new(Frame::Hat, u))
    }
}

/// Hat-frame propagator of a pulse sequence.
pub fn propagate(sys: &SpinSystem, seq: &PulseSequence) -> Result<Framed> {
    HatModel::new(sys).propagate(seq)
}

/// `U ρ U†`.
pub fn apply(rho: &DensityMatrix, u: &Framed) -> Result<DensityMatrix> {
    let u = u.expect(rho.frame)?;
    Ok(DensityMatrix::new_unchecked(u.conjugate(&rho.op).hermitian_part(), rho.frame))
}

/// Sampling of the detected signal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionConfig {
    pub n_points: usize,
    /// s
    pub dwell: f64,
    /// Exponential apodization constant, s.
    pub decay_time: f64,
    /// Coil azimuth used for detection, rad. Should match the transmit coil.
    #[serde(default)]
    pub detection_phi: f64,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            n_points: 4096,
            dwell: 20e-6,
            decay_time: 10e-3,
            detection_phi: 0.0,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self, sys: &SpinSystem) -> Result<()> {
        if self.n_points < 512 || !self.n_points.is_power_of_two() {
            return Err(Error::InvalidAcquisition(format!(
                "n_points must be a power of two >= 512, got {}",
                self.n_points
            )));
        }
        if !(self.dwell > 0.0 && self.decay_time > 0.0) {
            return Err(Error::InvalidAcquisition("dwell and decay_time must be positive".into()));
        }
        let max_offset = sys
            .transition_frequencies()
            .iter()
            .map(|l| l.offset_hz().abs())
            .fold(0.0, f64::max);
        let half_width = 0.5 / self.dwell;
        if half_width < 1.2 * max_offset {
            return Err(Error::InvalidAcquisition(format!(
                "spectral window ±{half_width:.0} Hz does not cover lines at ±{max_offset:.0} Hz with 20% margin"
            )));
        }
        Ok(())
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_points).map(move |k| k as f64 * self.dwell)
    }

    pub fn spectral_width(&self) -> f64 {
        1.0 / self.dwell
    }
}

/// Detection operator: the hat-frame RF pattern at unit scale with α = 0,
/// restricted to the elements that rotate at +ω_Q (quadrature detection).
pub fn detection_operator(sys: &SpinSystem, phi: f64) -> Result<Operator> {
    let pattern = sys.hat_rf(-2.0 / 3f64.sqrt(), 0.0, phi).op;
    let lab = sys.hat_static(sys.omega_q).op;
    let mut d = Operator::zeros(DIM);
    for j in 0..DIM {
        for i in 0..DIM {
            if lab.get(j, j).re - lab.get(i, i).re > 0.5 * sys.omega_q {
                d.set(j, i, pattern.get(j, i));
            }
        }
    }
    Ok(d)
}

/// Signal from the trace `Tr{ρ U₀†(t) D U₀(t)}` with the laboratory-frame
/// free propagator, demodulated at ω_Q and apodized.
pub fn fid_trace(sys: &SpinSystem, rho: &DensityMatrix, acq: &AcquisitionConfig) -> Result<Vec<C64>> {
    let rho = rho.expect_frame(Frame::Hat)?;
    let (energies, vectors) = sys.hat_static(sys.omega_q).op.hermitian_part().eigh()?;
    let vt = vectors.adjoint();
    let det = detection_operator(sys, acq.detection_phi)?;
    Ok(acq
        .times()
        .map(|t| {
            let phases: Vec<C64> = energies.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
            let u0 = &(&vectors * &Operator::diagonal(&phases)) * &vt;
            let heis = &(&u0.adjoint() * &det) * &u0;
            let s = (rho * &heis).trace();
            let demod = C64::from_polar((-t / acq.decay_time).exp(), -sys.omega_q * t);
            s * demod
        })
        .collect())
}

/// Closed-form four-line signal, on the same scale as [`fid_trace`].
pub fn fid_analytic(sys: &SpinSystem, rho: &DensityMatrix, acq: &AcquisitionConfig) -> Result<Vec<C64>> {
    let rho = rho.expect_frame(Frame::Hat)?;
    let (fp, fm) = sys.mixing();
    let e = sys.energy_levels(sys.omega_q);
    // demodulated line frequencies
    let w12 = (e[0] - e[1]) - sys.omega_q;
    let w13 = (e[0] - e[2]) - sys.omega_q;
    let w24 = -(e[1] - e[3]) - sys.omega_q;
    let w34 = -(e[2] - e[3]) - sys.omega_q;
    let upper_phase = C64::from_polar(1.0, -acq.detection_phi);
    let lower_phase = C64::from_polar(1.0, acq.detection_phi);
    let a12 = rho.get(0, 1).conj() * fp * upper_phase;
    let a13 = rho.get(0, 2).conj() * fm * upper_phase;
    let a24 = rho.get(1, 3) * fm * lower_phase;
    let a34 = -rho.get(2, 3) * fp * lower_phase;
    Ok(acq
        .times()
        .map(|t| {
            let s = a12 * C64::from_polar(1.0, w12 * t)
                + a13 * C64::from_polar(1.0, w13 * t)
                + a24 * C64::from_polar(1.0, w24 * t)
                + a34 * C64::from_polar(1.0, w34 * t);
            s * (-t / acq.decay_time).exp()
        })
        .collect())
}

/// Relative RMS difference `‖a - b‖ / ‖b‖` of two sampled signals.
pub fn relative_rms(a: &[C64], b: &[C64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}
