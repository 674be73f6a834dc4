//! Static and RF Hamiltonians of a spin-3/2 nucleus under Zeeman-perturbed NQR.
//!
//! Three frames appear:
//!
//! * [`Frame::Lab`]: the laboratory frame, time dependent RF at frequency ω.
//! * [`Frame::QuadPicture`]: the interaction picture generated by
//!   `exp(i ω Iz² t / 2)`, where the secular Hamiltonian is static.
//! * [`Frame::Hat`]: the quadrupole picture rotated by `R`, in which the
//!   RF-free Hamiltonian is diagonal.
//!
//! Basis ordering is always `m = +3/2, +1/2, -1/2, -3/2`; in the hat frame
//! the same slots carry the `R`-mixed states. Energies are in rad/s (ħ = 1).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dynamics::DensityMatrix;
use crate::error::{Error, Result};
use crate::linalg::{c, magnetic_numbers, spin_operators, Operator, C64};

pub const TWO_I: u32 = 3;
pub const DIM: usize = 4;

/// Quadrupole coupling of ³⁵Cl in KClO₃, Hz.
pub const KCLO3_NU_Q_HZ: f64 = 28.1e6;
/// ³⁵Cl gyromagnetic ratio, Hz/T.
pub const CL35_GAMMA_HZ_PER_T: f64 = 4.176e6;
/// Static field of the reference setup, T.
pub const KCLO3_B0_T: f64 = 730e-6;

/// Orientation at which the four lines are evenly spaced, `cos²θ = 4/39`.
pub fn even_spacing_theta() -> f64 {
    (2.0 / 39f64.sqrt()).acos()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Frame {
    Lab,
    QuadPicture,
    Hat,
}

/// An operator together with the frame it is expressed in.
#[derive(Clone, Debug, PartialEq)]
pub struct Framed {
    pub frame: Frame,
    pub op: Operator,
}

impl Framed {
    pub fn new(frame: Frame, op: Operator) -> Self {
        Self { frame, op }
    }

    /// Borrows the operator after checking its frame.
    pub fn expect(&self, frame: Frame) -> Result<&Operator> {
        if self.frame != frame {
            return Err(Error::FrameMismatch {
                expected: frame,
                found: self.frame,
            });
        }
        Ok(&self.op)
    }

    pub fn try_add(&self, other: &Framed) -> Result<Framed> {
        let rhs = other.expect(self.frame)?;
        Ok(Framed::new(self.frame, &self.op + rhs))
    }
}

/// Physical parameters of the static problem. Angular frequencies in rad/s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    pub omega_q: f64,
    pub omega_0: f64,
    /// Angle between B₀ and the EFG symmetry axis, rad.
    pub theta: f64,
    /// Hz/T; only used to convert between field and frequency.
    pub gyromagnetic_ratio: f64,
}

impl SpinSystem {
    pub fn new(omega_q: f64, omega_0: f64, theta: f64, gyromagnetic_ratio: f64) -> Result<Self> {
        if !(omega_q > 0.0 && omega_q.is_finite()) {
            return Err(Error::InvalidSystem(format!("omega_q must be positive, got {omega_q}")));
        }
        if !(omega_0 >= 0.0 && omega_0.is_finite()) {
            return Err(Error::InvalidSystem(format!("omega_0 must be non-negative, got {omega_0}")));
        }
        if !(0.0..PI).contains(&theta) {
            return Err(Error::InvalidSystem(format!("theta must lie in [0, pi), got {theta}")));
        }
        if !(gyromagnetic_ratio > 0.0 && gyromagnetic_ratio.is_finite()) {
            return Err(Error::InvalidSystem(format!(
                "gyromagnetic ratio must be positive, got {gyromagnetic_ratio}"
            )));
        }
        if omega_0 / omega_q >= 0.1 {
            log::warn!(
                "Zeeman/quadrupole ratio {:.3} is outside the perturbative regime",
                omega_0 / omega_q
            );
        }
        Ok(Self {
            omega_q,
            omega_0,
            theta,
            gyromagnetic_ratio,
        })
    }

    /// Builds a system from ordinary frequencies (Hz) and a static field (T).
    pub fn from_field(nu_q_hz: f64, b0_tesla: f64, theta: f64, gamma_hz_per_t: f64) -> Result<Self> {
        Self::new(
            2.0 * PI * nu_q_hz,
            2.0 * PI * gamma_hz_per_t * b0_tesla,
            theta,
            gamma_hz_per_t,
        )
    }

    /// ³⁵Cl in KClO₃ at 730 µT, oriented for evenly spaced lines.
    pub fn kclo3() -> Self {
        Self::from_field(KCLO3_NU_Q_HZ, KCLO3_B0_T, even_spacing_theta(), CL35_GAMMA_HZ_PER_T)
            .expect("reference parameters are valid")
    }

    pub fn with_theta(self, theta: f64) -> Result<Self> {
        Self::new(self.omega_q, self.omega_0, theta, self.gyromagnetic_ratio)
    }

    pub fn with_omega_0(self, omega_0: f64) -> Result<Self> {
        Self::new(self.omega_q, omega_0, self.theta, self.gyromagnetic_ratio)
    }

    pub fn b0_tesla(&self) -> f64 {
        self.omega_0 / (2.0 * PI * self.gyromagnetic_ratio)
    }

    /// `(f+, f-)` mixing weights of the central states.
    pub fn mixing(&self) -> (f64, f64) {
        mixing_weights(self.theta)
    }

    /// Closed-form energies of the RF-free Hamiltonian in the hat frame,
    /// for a carrier offset `delta_wq = ω_Q - ω`. Ordered as the hat basis.
    pub fn energy_levels(&self, delta_wq: f64) -> [f64; 4] {
        let zc = self.omega_0 * self.theta.cos();
        let zk = self.omega_0 * central_splitting(self.theta);
        [
            (9.0 * delta_wq - 12.0 * zc) / 8.0,
            (delta_wq - 4.0 * zk) / 8.0,
            (delta_wq + 4.0 * zk) / 8.0,
            (9.0 * delta_wq + 12.0 * zc) / 8.0,
        ]
    }

    /// The four observable transitions, ordered `(1,2), (1,3), (2,4), (3,4)`.
    pub fn transition_frequencies(&self) -> [Transition; 4] {
        let e = self.energy_levels(self.omega_q);
        let (fp, fm) = self.mixing();
        let make = |i: usize, j: usize, weight: f64| {
            let nu: f64 = e[i - 1] - e[j - 1];
            Transition {
                levels: (i, j),
                omega: nu.abs(),
                offset: nu.abs() - self.omega_q,
                weight,
            }
        };
        [make(1, 2, fp), make(1, 3, fm), make(2, 4, fm), make(3, 4, fp)]
    }

    /// Transitions sorted by frequency, lowest first. This is the line order
    /// used for peak amplitudes.
    pub fn lines_by_frequency(&self) -> [Transition; 4] {
        let mut lines = self.transition_frequencies();
        lines.sort_by(|a, b| a.offset.total_cmp(&b.offset));
        lines
    }

    pub fn h_quadrupole(&self) -> Framed {
        let (_, _, iz) = spin3_2();
        let spin = TWO_I as f64 / 2.0;
        let op = (&(&iz * &iz) - &Operator::identity(DIM).scale(spin * (spin + 1.0) / 3.0))
            .scale(self.omega_q / 2.0);
        Framed::new(Frame::Lab, op)
    }

    pub fn h_zeeman(&self) -> Framed {
        let (ix, _, iz) = spin3_2();
        let op = (&ix.scale(self.theta.sin()) + &iz.scale(self.theta.cos())).scale(-self.omega_0);
        Framed::new(Frame::Lab, op)
    }

    /// Linearly polarized RF at angular frequency `omega` and phase `alpha`,
    /// with the coil axis at azimuth `phi`, evaluated at time `t`.
    pub fn h_rf_lab(&self, omega_1: f64, omega: f64, alpha: f64, phi: f64, t: f64) -> Framed {
        let op = polarized_ix(phi).scale(-2.0 * omega_1 * (omega * t + alpha).cos());
        Framed::new(Frame::Lab, op)
    }

    /// Full laboratory Hamiltonian at time `t`.
    pub fn h_lab(&self, omega_1: f64, omega: f64, alpha: f64, phi: f64, t: f64) -> Framed {
        let op = &(&self.h_quadrupole().op + &self.h_zeeman().op)
            + &self.h_rf_lab(omega_1, omega, alpha, phi, t).op;
        Framed::new(Frame::Lab, op)
    }

    /// Zeeman term after the secular approximation: only elements that do
    /// not rotate in the quadrupole picture survive.
    pub fn secular_zeeman(&self) -> Framed {
        let lab = self.h_zeeman().op;
        let m = magnetic_numbers(TWO_I);
        let mut op = Operator::zeros(DIM);
        for i in 0..DIM {
            for j in 0..DIM {
                if picture_harmonic(&m, i, j) == 0 {
                    op.set(i, j, lab.get(i, j));
                }
            }
        }
        Framed::new(Frame::QuadPicture, op)
    }

    /// Static part of the secular Hamiltonian, `(Δω_Q/2) Iz² + H̃_Z`.
    pub fn secular_static(&self, delta_wq: f64) -> Framed {
        let (_, _, iz) = spin3_2();
        let op = &(&iz * &iz).scale(delta_wq / 2.0) + &self.secular_zeeman().op;
        Framed::new(Frame::QuadPicture, op)
    }

    /// Time-independent quadrupole-picture Hamiltonian with RF on.
    pub fn secular_hamiltonian(&self, omega_1: f64, delta_wq: f64, alpha: f64, phi: f64) -> Framed {
        let op = &self.secular_static(delta_wq).op + &secular_rf(omega_1, alpha, phi).op;
        Framed::new(Frame::QuadPicture, op)
    }

    /// RF-free Hamiltonian in the hat frame (diagonal up to rounding).
    pub fn hat_static(&self, delta_wq: f64) -> Framed {
        let r = r_transform(self.theta);
        Framed::new(Frame::Hat, r.conjugate(&self.secular_static(delta_wq).op))
    }

    /// RF Hamiltonian in the hat frame, `R H̃_RF R⁻¹`.
    pub fn hat_rf(&self, omega_1: f64, alpha: f64, phi: f64) -> Framed {
        let r = r_transform(self.theta);
        Framed::new(Frame::Hat, r.conjugate(&secular_rf(omega_1, alpha, phi).op))
    }

    pub fn hat_hamiltonian(&self, omega_1: f64, delta_wq: f64, alpha: f64, phi: f64) -> Framed {
        let r = r_transform(self.theta);
        let h = self.secular_hamiltonian(omega_1, delta_wq, alpha, phi).op;
        Framed::new(Frame::Hat, r.conjugate(&h).hermitian_part())
    }

    /// Deviation density matrix at thermal equilibrium, `∝ Iz² - 5/4`,
    /// scaled to unit largest entry. It is diagonal in every frame used here.
    pub fn equilibrium_deviation(&self) -> DensityMatrix {
        DensityMatrix::new_unchecked(Operator::real_diagonal(&[1.0, -1.0, -1.0, 1.0]), Frame::Hat)
    }

    /// Propagator of the full laboratory Hamiltonian over `[0, duration]`,
    /// piecewise constant with the Hamiltonian sampled at each step midpoint.
    pub fn lab_propagator(
        &self,
        omega_1: f64,
        omega: f64,
        alpha: f64,
        phi: f64,
        duration: f64,
        step: f64,
    ) -> Result<Framed> {
        if !(step > 0.0 && duration >= 0.0) {
            return Err(Error::InvalidPulse(format!("bad step {step} or duration {duration}")));
        }
        let n = (duration / step).round().max(1.0) as usize;
        let dt = duration / n as f64;
        let static_part = &self.h_quadrupole().op + &self.h_zeeman().op;
        let coil = polarized_ix(phi);
        let mut u = Operator::identity(DIM);
        for k in 0..n {
            let t = (k as f64 + 0.5) * dt;
            let h = &static_part + &coil.scale(-2.0 * omega_1 * (omega * t + alpha).cos());
            u = &h.evolve(dt)? * &u;
        }
        Ok(Framed::new(Frame::Lab, u))
    }
}

/// One allowed line of the spectrum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    /// Hat-frame level pair, 1-based.
    pub levels: (usize, usize),
    /// Line frequency `|E_i - E_j|`, rad/s.
    pub omega: f64,
    /// Offset from the carrier at ω_Q, rad/s.
    pub offset: f64,
    /// Intensity weight (`f+` or `f-`).
    pub weight: f64,
}

impl Transition {
    pub fn label(&self) -> String {
        format!("nu{}{}", self.levels.0, self.levels.1)
    }

    pub fn offset_hz(&self) -> f64 {
        self.offset / (2.0 * PI)
    }

    pub fn frequency_hz(&self) -> f64 {
        self.omega / (2.0 * PI)
    }
}

/// `(Ix, Iy, Iz)` for spin 3/2.
pub fn spin3_2() -> (Operator, Operator, Operator) {
    spin_operators(TWO_I).expect("2I = 3 is valid")
}

/// `e^{-iφIz} Ix e^{iφIz} = Ix cos φ + Iy sin φ`.
pub fn polarized_ix(phi: f64) -> Operator {
    let (ix, _, iz) = spin3_2();
    let rot = Operator::diagonal(
        &iz.diagonal_entries()
            .iter()
            .map(|m| C64::from_polar(1.0, -phi * m.re))
            .collect::<Vec<_>>(),
    );
    rot.conjugate(&ix)
}

/// Multiple of ωt at which element `(i, j)` rotates in the quadrupole picture.
fn picture_harmonic(m: &[f64], i: usize, j: usize) -> i32 {
    ((m[i] * m[i] - m[j] * m[j]) / 2.0).round() as i32
}

/// `exp(i ω Iz² t / 2)`, the map into the quadrupole interaction picture.
pub fn quad_picture_unitary(omega: f64, t: f64) -> Operator {
    let m = magnetic_numbers(TWO_I);
    Operator::diagonal(&m.iter().map(|mk| C64::from_polar(1.0, omega * mk * mk * t / 2.0)).collect::<Vec<_>>())
}

/// Expresses a laboratory-frame operator in the quadrupole picture at time `t`.
pub fn tilde_transform(a: &Framed, omega: f64, t: f64) -> Result<Framed> {
    let a = a.expect(Frame::Lab)?;
    Ok(Framed::new(Frame::QuadPicture, quad_picture_unitary(omega, t).conjugate(a)))
}

/// Converts a laboratory propagator over `[t0, t1]` into the quadrupole picture.
pub fn lab_to_quad_picture(u_lab: &Framed, omega: f64, t0: f64, t1: f64) -> Result<Framed> {
    let u = u_lab.expect(Frame::Lab)?;
    let out = &(&quad_picture_unitary(omega, t1) * u) * &quad_picture_unitary(omega, t0).adjoint();
    Ok(Framed::new(Frame::QuadPicture, out))
}

/// Secular RF term. `-2ω₁cos(ωt+α)` times the rotating coil operator has a
/// static component only on elements that rotate at exactly ±ω; each keeps
/// the co-rotating half of the cosine.
pub fn secular_rf(omega_1: f64, alpha: f64, phi: f64) -> Framed {
    let coil = polarized_ix(phi);
    let m = magnetic_numbers(TWO_I);
    let mut op = Operator::zeros(DIM);
    for i in 0..DIM {
        for j in 0..DIM {
            let k = picture_harmonic(&m, i, j);
            if k.abs() == 1 {
                let phase = C64::from_polar(1.0, -(k as f64) * alpha);
                op.set(i, j, coil.get(i, j) * phase * (-omega_1));
            }
        }
    }
    Framed::new(Frame::QuadPicture, op)
}

/// `(f+, f-)`, written with cos θ so that it stays finite at θ = π/2.
pub fn mixing_weights(theta: f64) -> (f64, f64) {
    let cs = theta.cos();
    let ratio = cs / (2.0 * central_splitting(theta));
    ((0.5 + ratio).max(0.0).sqrt(), (0.5 - ratio).max(0.0).sqrt())
}

/// `√(cos²θ + 4 sin²θ)`: the central-doublet splitting in units of ω₀/2.
/// Equals `g cos θ` with `g = √(1 + 4 tan²θ)` for θ ≤ π/2.
pub fn central_splitting(theta: f64) -> f64 {
    let cs = theta.cos();
    (4.0 - 3.0 * cs * cs).sqrt()
}

/// Real symmetric involution that diagonalizes the RF-free secular Hamiltonian.
pub fn r_transform(theta: f64) -> Operator {
    let (fp, fm) = mixing_weights(theta);
    let mut r = Operator::zeros(DIM);
    r.set(0, 0, c(1.0));
    r.set(1, 1, c(fp));
    r.set(1, 2, c(fm));
    r.set(2, 1, c(fm));
    r.set(2, 2, c(-fp));
    r.set(3, 3, c(1.0));
    r
}

/// Phase-insensitive overlap `|Tr(A†B)|² / d²` of two unitaries.
pub fn unitary_fidelity(a: &Operator, b: &Operator) -> f64 {
    let d = a.dim() as f64;
    (&a.adjoint() * b).trace().norm_sqr() / (d * d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sys(theta_deg: f64) -> SpinSystem {
        SpinSystem::kclo3().with_theta(theta_deg.to_radians()).unwrap()
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(SpinSystem::new(-1.0, 0.0, 0.0, 1.0).is_err());
        assert!(SpinSystem::new(1.0, -1.0, 0.0, 1.0).is_err());
        assert!(SpinSystem::new(1.0, 0.0, PI, 1.0).is_err());
        assert!(SpinSystem::new(1.0, 0.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn quadrupole_is_diagonal_and_traceless() {
        let s = SpinSystem::new(2.0, 0.0, 0.0, 1.0).unwrap();
        let h = s.h_quadrupole().op;
        let diag: Vec<f64> = h.diagonal_entries().iter().map(|z| z.re).collect();
        for (d, m) in diag.iter().zip(magnetic_numbers(3)) {
            assert_abs_diff_eq!(*d, m * m - 1.25, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(diag.as_slice(), [1.0, -1.0, -1.0, 1.0].as_slice(), epsilon = 1e-15);
        assert!(h.trace().norm() < 1e-15);
        assert!(h.max_offdiag() == 0.0);
    }

    #[test]
    fn quadrupole_manifold_gap_is_omega_q() {
        let s = SpinSystem::kclo3();
        let h = s.h_quadrupole().op;
        let gap = h.get(0, 0).re - h.get(1, 1).re;
        assert_abs_diff_eq!(gap / (2.0 * PI), 28.1e6, epsilon = 1e-6);
    }

    #[test]
    fn zeeman_limits() {
        let (ix, _, iz) = spin3_2();
        let s0 = SpinSystem::new(10.0, 1.0, 0.0, 1.0).unwrap();
        assert!((&s0.h_zeeman().op - &iz.scale(-1.0)).max_norm() < 1e-15);
        let s90 = s0.with_theta(PI / 2.0).unwrap();
        assert!((&s90.h_zeeman().op - &ix.scale(-1.0)).max_norm() < 1e-15);
        let s = s0.with_theta(even_spacing_theta()).unwrap();
        assert_abs_diff_eq!(-s.h_zeeman().op.get(0, 0).re / 1.5, 0.32026, epsilon = 1e-5);
        assert_abs_diff_eq!(even_spacing_theta().to_degrees(), 71.3216, epsilon = 1e-4);
    }

    #[test]
    fn rf_lab_examples() {
        let s = SpinSystem::kclo3();
        let (ix, iy, _) = spin3_2();
        let w1 = 3.0;
        let h = s.h_rf_lab(w1, 5.0, 0.0, 0.0, 0.0).op;
        assert!((&h - &ix.scale(-2.0 * w1)).max_norm() < 1e-14);
        let h = s.h_rf_lab(w1, 1.0, 0.0, 0.0, PI / 2.0).op;
        assert!(h.max_norm() < 1e-14);
        let h = s.h_rf_lab(w1, 2.0, 0.3, PI / 2.0, 0.4).op;
        let want = iy.scale(-2.0 * w1 * (2.0f64 * 0.4 + 0.3).cos());
        assert!((&h - &want).max_norm() < 1e-14);
        assert!(h.is_hermitian(1e-15));
    }

    #[test]
    fn tilde_transform_examples() {
        let (ix, _, iz) = spin3_2();
        let iz_lab = Framed::new(Frame::Lab, iz.clone());
        let out = tilde_transform(&iz_lab, 7.0, 0.3).unwrap();
        assert!((&out.op - &iz).max_norm() < 1e-15);
        let iz2 = Framed::new(Frame::Lab, &iz * &iz);
        assert!((&tilde_transform(&iz2, 7.0, 0.3).unwrap().op - &(&iz * &iz)).max_norm() < 1e-15);

        // element-wise phase oracle
        let omega = 2.0;
        let t = PI / omega;
        let out = tilde_transform(&Framed::new(Frame::Lab, ix.clone()), omega, t).unwrap().op;
        let m = magnetic_numbers(3);
        for i in 0..4 {
            for j in 0..4 {
                let want = C64::from_polar(1.0, omega * t * (m[i] * m[i] - m[j] * m[j]) / 2.0) * ix.get(i, j);
                assert!((out.get(i, j) - want).norm() < 1e-14);
            }
        }
        // ωt = π flips the satellites
        assert_abs_diff_eq!(out.get(0, 1).re, -(3f64.sqrt()) / 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(out.get(1, 2).re, 1.0, epsilon = 1e-14);
        assert!(tilde_transform(&Framed::new(Frame::Hat, ix), 1.0, 1.0).is_err());
    }

    #[test]
    fn secular_examples() {
        let (ix, _, iz) = spin3_2();
        let s = SpinSystem::new(100.0, 1.0, 0.0, 1.0).unwrap();
        let h = s.secular_hamiltonian(0.0, 0.0, 0.0, 0.0).op;
        assert!((&h - &iz.scale(-1.0)).max_norm() < 1e-15);

        let s = SpinSystem::new(100.0, 0.0, 0.3, 1.0).unwrap();
        let w1 = 2.0;
        let h = s.secular_hamiltonian(w1, 0.0, 0.0, 0.0).op;
        let k = -(3f64.sqrt()) / 2.0 * w1;
        let want = Operator::from_real_rows(
            4,
            &[0., k, 0., 0., k, 0., 0., 0., 0., 0., 0., k, 0., 0., k, 0.],
        )
        .unwrap();
        assert!((&h - &want).max_norm() < 1e-14);

        let s = SpinSystem::new(100.0, 1.5, PI / 2.0, 1.0).unwrap();
        let h = s.secular_zeeman().op;
        let mut central = Operator::zeros(4);
        central.set(1, 2, c(1.0));
        central.set(2, 1, c(1.0));
        assert!((&h - &central.scale(-1.5)).max_norm() < 1e-14);
        assert_abs_diff_eq!(ix.get(1, 2).re, 1.0);
    }

    #[test]
    fn secular_rf_phases() {
        let (phi, alpha, w1) = (0.4, 1.1, 1.0);
        let h = secular_rf(w1, alpha, phi).op;
        let k = -(3f64.sqrt()) / 2.0;
        assert!((h.get(0, 1) - C64::from_polar(1.0, -(phi + alpha)) * k).norm() < 1e-14);
        assert!((h.get(1, 0) - C64::from_polar(1.0, phi + alpha) * k).norm() < 1e-14);
        assert!((h.get(2, 3) - C64::from_polar(1.0, -(phi - alpha)) * k).norm() < 1e-14);
        assert!(h.get(1, 2).norm() == 0.0);
    }

    #[test]
    fn r_transform_examples() {
        let r = r_transform(0.0);
        assert_abs_diff_eq!(r.get(1, 1).re, 1.0);
        assert_abs_diff_eq!(r.get(1, 2).re, 0.0);
        let (fp, fm) = mixing_weights(even_spacing_theta());
        assert_abs_diff_eq!(fp, (7.0f64 / 12.0).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(fm, (5.0f64 / 12.0).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(fp, 0.76376, epsilon = 1e-5);
        assert_abs_diff_eq!(fm, 0.64550, epsilon = 1e-5);
        for deg in [0.0, 10.0, 45.0, 71.3216, 90.0, 120.0, 179.0] {
            let r = r_transform(f64::to_radians(deg));
            assert!((&(&r * &r) - &Operator::identity(4)).max_norm() < 1e-13);
        }
    }

    #[test]
    fn mixing_matches_tangent_form_below_right_angle() {
        for deg in [1.0, 20.0, 45.0, 71.3216, 89.0] {
            let th = f64::to_radians(deg);
            let g = (1.0 + 4.0 * th.tan().powi(2)).sqrt();
            let (fp, fm) = mixing_weights(th);
            assert_abs_diff_eq!(fp, (0.5 + 0.5 / g).sqrt(), epsilon = 1e-13);
            assert_abs_diff_eq!(fm, (0.5 - 0.5 / g).sqrt(), epsilon = 1e-13);
            assert_abs_diff_eq!(central_splitting(th), g * th.cos(), epsilon = 1e-12);
        }
        assert_abs_diff_eq!(central_splitting(PI / 2.0), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn energy_level_examples() {
        let w0 = 3.0;
        let s = SpinSystem::new(100.0, w0, 0.0, 1.0).unwrap();
        let e = s.energy_levels(0.0);
        let want = [-12.0 * w0 / 8.0, -4.0 * w0 / 8.0, 4.0 * w0 / 8.0, 12.0 * w0 / 8.0];
        assert_abs_diff_eq!(e.as_slice(), want.as_slice(), epsilon = 1e-14);

        let s = s.with_theta(even_spacing_theta()).unwrap();
        let dw = 5.0;
        let cc = 2.0 / 39f64.sqrt();
        let e = s.energy_levels(dw);
        let want = [
            (9.0 * dw - 12.0 * w0 * cc) / 8.0,
            (dw - 24.0 * w0 * cc) / 8.0,
            (dw + 24.0 * w0 * cc) / 8.0,
            (9.0 * dw + 12.0 * w0 * cc) / 8.0,
        ];
        assert_abs_diff_eq!(e.as_slice(), want.as_slice(), epsilon = 1e-12);
    }

    #[test]
    fn energy_sum_matches_trace() {
        for deg in [5.0, 30.0, 60.0, 71.3216, 85.0, 100.0, 150.0] {
            for dw in [0.0, 2.0 * PI * 1e4, -2.0 * PI * 1e4] {
                let s = sys(deg);
                let sum: f64 = s.energy_levels(dw).iter().sum();
                assert_abs_diff_eq!(sum, 20.0 * dw / 8.0, epsilon = 1e-9 * dw.abs().max(1.0));
                let tr = s.secular_static(dw).op.trace().re;
                assert_abs_diff_eq!(sum, tr, epsilon = 1e-9 * dw.abs().max(1.0));
            }
        }
    }

    #[test]
    fn hat_static_is_diagonal_past_right_angle() {
        // the cos-signed mixing weights keep R a diagonalizer for θ > π/2
        for deg in [95.0, 120.0, 160.0] {
            let s = sys(deg);
            let h = s.hat_static(2.0 * PI * 1e4).op;
            assert!(h.max_offdiag() < 1e-12 * h.max_norm());
            let e = s.energy_levels(2.0 * PI * 1e4);
            for k in 0..4 {
                assert_abs_diff_eq!(h.get(k, k).re, e[k], epsilon = 1e-10 * e[k].abs().max(1.0));
            }
        }
    }

    #[test]
    fn transitions_at_zero_angle() {
        let s = sys(0.0);
        let t = s.transition_frequencies();
        let w0 = s.omega_0;
        // observable lines (nonzero weight) sit at ω_Q ± ω0
        let observable: Vec<_> = t.iter().filter(|l| l.weight > 1e-9).collect();
        assert_eq!(observable.len(), 2);
        let mut offs: Vec<f64> = observable.iter().map(|l| l.offset / w0).collect();
        offs.sort_by(f64::total_cmp);
        assert_abs_diff_eq!(offs.as_slice(), [-1.0, 1.0].as_slice(), epsilon = 1e-6);
    }

    #[test]
    fn transitions_at_even_spacing() {
        let s = SpinSystem::kclo3();
        let cc = s.theta.cos();
        let w0 = s.omega_0;
        let offs: Vec<f64> = s.lines_by_frequency().iter().map(|l| l.offset / (w0 * cc)).collect();
        assert_abs_diff_eq!(offs.as_slice(), [-4.5, -1.5, 1.5, 4.5].as_slice(), epsilon = 1e-6);
        let labels: Vec<_> = s.lines_by_frequency().iter().map(|l| l.levels).collect();
        assert_eq!(labels, vec![(1, 3), (3, 4), (1, 2), (2, 4)]);
    }

    #[test]
    fn transitions_collapse_without_field() {
        let s = SpinSystem::kclo3().with_omega_0(0.0).unwrap();
        for l in s.transition_frequencies() {
            assert_abs_diff_eq!(l.omega, s.omega_q, epsilon = 1e-6);
        }
    }

    #[test]
    fn hat_rf_reduces_at_zero_angle() {
        let s = SpinSystem::new(100.0, 1.0, 0.0, 1.0).unwrap();
        let hat = s.hat_rf(2.0, 0.3, 0.2).op;
        let plain = secular_rf(2.0, 0.3, 0.2).op;
        // R = diag(1, 1, -1, 1) at θ = 0
        let r = Operator::real_diagonal(&[1.0, 1.0, -1.0, 1.0]);
        assert!((&hat - &r.conjugate(&plain)).max_norm() < 1e-14);
        assert!(hat.is_hermitian(1e-13));
    }

    #[test]
    fn hat_rf_entries_at_working_point() {
        let s = SpinSystem::kclo3();
        let w1 = 1.0;
        let h = s.hat_rf(w1, 0.0, 0.0).op;
        let k = -(3f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(h.get(0, 1).re, k * 0.763763, epsilon = 1e-6);
        assert_abs_diff_eq!(h.get(0, 2).re, k * 0.645497, epsilon = 1e-6);
        assert_abs_diff_eq!(h.get(1, 3).re, k * 0.645497, epsilon = 1e-6);
        assert_abs_diff_eq!(h.get(2, 3).re, -k * 0.763763, epsilon = 1e-6);
    }

    #[test]
    fn equilibrium_properties() {
        let s = sys(0.0);
        let rho = s.equilibrium_deviation();
        assert!(rho.op().max_offdiag() == 0.0);
        assert!(rho.op().trace().norm() < 1e-15);
        let h0 = s.secular_static(0.0).op;
        assert!(h0.commutator(rho.op()).max_norm() < 1e-13);
    }

    #[test]
    fn lab_propagator_without_rf_matches_static_evolution() {
        let s = SpinSystem::new(2.0 * PI * 1e3, 2.0 * PI * 20.0, 0.7, 1.0).unwrap();
        let u = s.lab_propagator(0.0, 0.0, 0.0, 0.0, 1e-3, 1e-5).unwrap().op;
        let h = &s.h_quadrupole().op + &s.h_zeeman().op;
        let want = h.evolve(1e-3).unwrap();
        assert!((&u - &want).max_norm() < 1e-10);
    }
}
