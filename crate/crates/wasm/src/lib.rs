//! Browser bindings: simulated spectra of equilibrium and pseudo-pure states,
//! θ scans of the four line frequencies, and the perpendicular RF fraction.
//!
//! Gates are applied as exact unitaries here; pulse optimization belongs to
//! the command-line tool.

use std::f64::consts::PI;
use std::str::FromStr;

use nqr_qip::dynamics::{apply, fid_trace, AcquisitionConfig};
use nqr_qip::gates::Gate;
use nqr_qip::orientation::{b1_perp_ratio, theta_scan, GoniometerConfig};
use nqr_qip::pps::{averaged_state, ideal_pi_half, line_coefficients, pseudo_pure_gain, PpsLabel};
use nqr_qip::spectrum::{line_order, spectrum};
use nqr_qip::spin::{SpinSystem, CL35_GAMMA_HZ_PER_T, KCLO3_NU_Q_HZ};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const N_POINTS: usize = 2048;

#[derive(Debug, Serialize)]
pub struct SpectrumView {
    /// Offset from ν_Q.
    pub freq_hz: Vec<f64>,
    pub modulus: Vec<f64>,
    pub line_order: Vec<String>,
    pub line_offsets_hz: Vec<f64>,
    /// Closed-form line amplitudes relative to equilibrium.
    pub amplitudes: [f64; 4],
}

#[derive(Debug, Serialize)]
pub struct ScanView {
    pub theta_deg: Vec<f64>,
    /// One series per line, offset from ν_Q, lowest line first.
    pub offsets_hz: [Vec<f64>; 4],
}

fn system(theta_deg: f64, b0_ut: f64) -> Result<SpinSystem, String> {
    SpinSystem::from_field(KCLO3_NU_Q_HZ, b0_ut * 1e-6, theta_deg.to_radians(), CL35_GAMMA_HZ_PER_T).map_err(|e| e.to_string())
}

fn parse_circuit(circuit: &str) -> Result<Vec<Gate>, String> {
    circuit
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| Gate::from_str(s).map_err(|e| e.to_string()))
        .collect()
}

/// `state` is `equilibrium` or a two-bit label such as `01`; `circuit` is a
/// comma-separated gate list applied after preparation.
pub fn simulate_spectrum(state: &str, circuit: &str, theta_deg: f64, b0_ut: f64) -> Result<SpectrumView, String> {
    let sys = system(theta_deg, b0_ut)?;
    let gates = parse_circuit(circuit)?;
    let e = |x: nqr_qip::Error| x.to_string();
    let (rho, gain) = if state.eq_ignore_ascii_case("equilibrium") {
        if !gates.is_empty() {
            return Err("circuits apply to pseudo-pure states".into());
        }
        (sys.equilibrium_deviation(), 1.0)
    } else {
        let label = PpsLabel::from_str(state).map_err(e)?;
        (averaged_state(&sys, label, &gates, None).map_err(e)?, pseudo_pure_gain(label))
    };
    let acq = AcquisitionConfig {
        n_points: N_POINTS,
        ..AcquisitionConfig::default()
    };
    acq.validate(&sys).map_err(e)?;
    let read = ideal_pi_half(&sys).map_err(e)?;
    let after = apply(&rho, &read).map_err(e)?;
    let spec = spectrum(&fid_trace(&sys, &after, &acq).map_err(e)?, acq.dwell);
    let reference = line_coefficients(&sys, &apply(&sys.equilibrium_deviation(), &read).map_err(e)?).map_err(e)?;
    let lines = line_coefficients(&sys, &after).map_err(e)?;
    Ok(SpectrumView {
        modulus: spec.modulus(),
        freq_hz: spec.freq_hz,
        line_order: line_order(&sys),
        line_offsets_hz: sys.lines_by_frequency().iter().map(|l| l.offset_hz()).collect(),
        amplitudes: std::array::from_fn(|k| lines[k] / (reference[k] * gain)),
    })
}

pub fn scan_lines(b0_ut: f64, from_deg: f64, to_deg: f64, step_deg: f64) -> Result<ScanView, String> {
    if !(step_deg > 0.0 && to_deg >= from_deg) {
        return Err("need from <= to and a positive step".into());
    }
    let sys = system(45.0, b0_ut)?;
    let n = ((to_deg - from_deg) / step_deg + 1e-9).floor() as usize + 1;
    let theta_deg: Vec<f64> = (0..n).map(|k| from_deg + k as f64 * step_deg).collect();
    let thetas: Vec<f64> = theta_deg.iter().map(|d| d.to_radians()).collect();
    let data = theta_scan(&sys, &thetas);
    let nu_q = sys.omega_q / (2.0 * PI);
    let offsets_hz = std::array::from_fn(|k| data.points.iter().map(|p| p.freqs_hz[k] - nu_q).collect());
    Ok(ScanView { theta_deg, offsets_hz })
}

pub fn perpendicular_fraction(coil_tilt_deg: f64, delta_deg: f64, theta_deg: f64) -> f64 {
    let g = GoniometerConfig {
        theta_h: 0.0,
        phi_h: 0.0,
        coil_tilt: coil_tilt_deg.to_radians(),
        delta: delta_deg.to_radians(),
    };
    b1_perp_ratio(&g, theta_deg.to_radians())
}

fn to_js<T: Serialize>(v: Result<T, String>) -> Result<JsValue, JsValue> {
    let v = v.map_err(|e| JsValue::from_str(&e))?;
    serde_wasm_bindgen::to_value(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = spectrum)]
pub fn spectrum_js(state: &str, circuit: &str, theta_deg: f64, b0_ut: f64) -> Result<JsValue, JsValue> {
    to_js(simulate_spectrum(state, circuit, theta_deg, b0_ut))
}

#[wasm_bindgen(js_name = thetaScan)]
pub fn theta_scan_js(b0_ut: f64, from_deg: f64, to_deg: f64, step_deg: f64) -> Result<JsValue, JsValue> {
    to_js(scan_lines(b0_ut, from_deg, to_deg, step_deg))
}

#[wasm_bindgen(js_name = b1Ratio)]
pub fn b1_ratio_js(coil_tilt_deg: f64, delta_deg: f64, theta_deg: f64) -> f64 {
    perpendicular_fraction(coil_tilt_deg, delta_deg, theta_deg)
}

#[wasm_bindgen(js_name = evenSpacingTheta)]
pub fn even_spacing_theta_deg() -> f64 {
    nqr_qip::spin::even_spacing_theta().to_degrees()
}
