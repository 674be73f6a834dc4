//! Spectra of synthesized FIDs and the four normalized line amplitudes.

use std::io::Write;

use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{apply, fid_trace, propagate, AcquisitionConfig, DensityMatrix, PulseSequence};
use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::spin::SpinSystem;

/// Discrete spectrum on a centred frequency grid (Hz offset from ω_Q).
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub freq_hz: Vec<f64>,
    pub values: Vec<C64>,
}

impl Spectrum {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn modulus(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm()).collect()
    }

    pub fn bin_width(&self) -> f64 {
        if self.freq_hz.len() < 2 {
            0.0
        } else {
            self.freq_hz[1] - self.freq_hz[0]
        }
    }

    /// Index of the bin closest to `freq_hz`.
    pub fn nearest_bin(&self, freq_hz: f64) -> usize {
        let k = ((freq_hz - self.freq_hz[0]) / self.bin_width()).round();
        k.clamp(0.0, (self.len() - 1) as f64) as usize
    }

    /// Largest modulus among the bins within `radius` of `freq_hz`'s bin.
    pub fn local_max(&self, freq_hz: f64, radius: usize) -> (usize, f64) {
        let k = self.nearest_bin(freq_hz);
        let lo = k.saturating_sub(radius);
        let hi = (k + radius).min(self.len() - 1);
        (lo..=hi)
            .map(|i| (i, self.values[i].norm()))
            .fold((k, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
    }

    /// Peak position near `freq_hz`, refined by a parabola through the
    /// local-maximum bin and its neighbours.
    pub fn refined_peak(&self, freq_hz: f64, radius: usize) -> f64 {
        let (k, _) = self.local_max(freq_hz, radius);
        if k == 0 || k + 1 >= self.len() {
            return self.freq_hz[k];
        }
        let (a, b, c) = (self.values[k - 1].norm(), self.values[k].norm(), self.values[k + 1].norm());
        let denom = a - 2.0 * b + c;
        let shift = if denom.abs() > 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
        self.freq_hz[k] + shift.clamp(-0.5, 0.5) * self.bin_width()
    }

    /// Writes `freq_hz,re,im,abs` rows with 12 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "freq_hz,re,im,abs")?;
        for (f, z) in self.freq_hz.iter().zip(&self.values) {
            writeln!(w, "{:.11e},{:.11e},{:.11e},{:.11e}", f, z.re, z.im, z.norm())?;
        }
        Ok(())
    }

    /// Element-wise sum of two spectra on the same grid.
    pub fn try_add(&self, other: &Spectrum) -> Result<Spectrum> {
        if self.freq_hz != other.freq_hz {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(Spectrum {
            freq_hz: self.freq_hz.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect(),
        })
    }
}

/// Forward DFT of a sampled signal, reordered so that frequencies ascend
/// from `-1/(2·dwell)`.
pub fn spectrum(fid: &[C64], dwell: f64) -> Spectrum {
    let n = fid.len();
    let mut buf = fid.to_vec();
    if n > 0 {
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    }
    buf.rotate_right(n / 2);
    let df = 1.0 / (n as f64 * dwell);
    let freq_hz = (0..n).map(|k| (k as f64 - (n / 2) as f64) * df).collect();
    Spectrum { freq_hz, values: buf }
}

/// Moduli of the four lines, lowest frequency first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakAmplitudes {
    pub line_order: Vec<String>,
    pub raw: [f64; 4],
    pub normalized: Option<[f64; 4]>,
}

impl PeakAmplitudes {
    pub fn normalized(&self) -> Result<[f64; 4]> {
        self.normalized.ok_or(Error::MissingReference)
    }

    /// Divides line by line by a reference (usually the equilibrium readout)
    /// and by an extra `gain`.
    pub fn normalize_against(&self, reference: &PeakAmplitudes, gain: f64) -> Result<PeakAmplitudes> {
        if reference.line_order != self.line_order {
            return Err(Error::InvalidAcquisition("reference line order differs".into()));
        }
        let mut n = [0.0; 4];
        for k in 0..4 {
            if reference.raw[k] <= 0.0 {
                return Err(Error::MissingReference);
            }
            n[k] = self.raw[k] / (reference.raw[k] * gain);
        }
        Ok(PeakAmplitudes {
            normalized: Some(n),
            ..self.clone()
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Line labels in frequency order.
pub fn line_order(sys: &SpinSystem) -> Vec<String> {
    sys.lines_by_frequency().iter().map(|l| l.label()).collect()
}

/// Modulus at each predicted line position: nearest bin, then the largest
/// of it and its two neighbours.
pub fn peak_amplitudes(spec: &Spectrum, sys: &SpinSystem, reference: Option<&PeakAmplitudes>) -> Result<PeakAmplitudes> {
    if spec.is_empty() {
        return Err(Error::InvalidAcquisition("empty spectrum".into()));
    }
    let lines = sys.lines_by_frequency();
    let mut raw = [0.0; 4];
    for (k, line) in lines.iter().enumerate() {
        raw[k] = spec.local_max(line.offset_hz(), 1).1;
    }
    let amps = PeakAmplitudes {
        line_order: line_order(sys),
        raw,
        normalized: None,
    };
    match reference {
        Some(r) => amps.normalize_against(r, 1.0),
        None => Ok(amps),
    }
}

/// Spectrum after applying `pulse` to `rho`.
pub fn read_spectrum(sys: &SpinSystem, rho: &DensityMatrix, pulse: &PulseSequence, acq: &AcquisitionConfig) -> Result<Spectrum> {
    let u = propagate(sys, pulse)?;
    let read = apply(rho, &u)?;
    Ok(spectrum(&fid_trace(sys, &read, acq)?, acq.dwell))
}

/// Apply the reading pulse, acquire, transform and pick the four lines.
pub fn readout(
    sys: &SpinSystem,
    rho: &DensityMatrix,
    pulse: &PulseSequence,
    acq: &AcquisitionConfig,
    reference: Option<&PeakAmplitudes>,
) -> Result<PeakAmplitudes> {
    let spec = read_spectrum(sys, rho, pulse, acq)?;
    peak_amplitudes(&spec, sys, reference)
}

/// Raw equilibrium readout, used as the normalization reference.
pub fn equilibrium_reference(sys: &SpinSystem, pulse: &PulseSequence, acq: &AcquisitionConfig) -> Result<PeakAmplitudes> {
    readout(sys, &sys.equilibrium_deviation(), pulse, acq, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(freq: f64, decay: Option<f64>, n: usize, dwell: f64) -> Vec<C64> {
        (0..n)
            .map(|k| {
                let t = k as f64 * dwell;
                let amp = decay.map_or(1.0, |d| (-t / d).exp());
                C64::from_polar(amp, 2.0 * PI * freq * t)
            })
            .collect()
    }

    #[test]
    fn pure_tone_lands_in_one_bin() {
        let (n, dwell) = (4096, 20e-6);
        let df = 1.0 / (n as f64 * dwell);
        let f = 82.0 * df; // ~1000 Hz, on the grid
        let spec = spectrum(&tone(f, None, n, dwell), dwell);
        let m = spec.modulus();
        let k = spec.nearest_bin(f);
        assert!((spec.freq_hz[k] - f).abs() < 1e-9);
        assert!((m[k] - n as f64).abs() < 1e-6);
        let leak: f64 = m.iter().enumerate().filter(|(i, _)| *i != k).map(|(_, v)| *v).fold(0.0, f64::max);
        assert!(leak < 1e-6);
    }

    #[test]
    fn lorentzian_linewidth() {
        let (n, dwell, decay) = (4096, 20e-6, 1e-3);
        let spec = spectrum(&tone(1000.0, Some(decay), n, dwell), dwell);
        let m = spec.modulus();
        let (k, peak) = spec.local_max(1000.0, 3);
        // the modulus of a complex Lorentzian falls to 1/2 at √3 half-widths,
        // so measure the width of the squared modulus
        let half = peak * peak / 2.0;
        let mut lo = k;
        while m[lo] * m[lo] > half {
            lo -= 1;
        }
        let mut hi = k;
        while m[hi] * m[hi] > half {
            hi += 1;
        }
        let interp = |i: usize, j: usize| {
            let (a, b) = (m[i] * m[i], m[j] * m[j]);
            spec.freq_hz[i] + (half - a) / (b - a) * (spec.freq_hz[j] - spec.freq_hz[i])
        };
        let fwhm = interp(hi - 1, hi) - interp(lo, lo + 1);
        let want = 1.0 / (PI * decay);
        assert!((fwhm - want).abs() / want < 0.1, "fwhm {fwhm} vs {want}");
    }

    #[test]
    fn zero_signal_zero_spectrum() {
        let spec = spectrum(&vec![C64::new(0.0, 0.0); 512], 1e-5);
        assert!(spec.values.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn refined_peak_is_sub_bin() {
        let (n, dwell) = (4096, 20e-6);
        let f = 1234.5;
        let spec = spectrum(&tone(f, Some(10e-3), n, dwell), dwell);
        assert!((spec.refined_peak(f, 2) - f).abs() < 0.25 * spec.bin_width());
    }

    #[test]
    fn dft_is_linear() {
        let (n, dwell) = (1024, 20e-6);
        let a = tone(700.0, Some(2e-3), n, dwell);
        let b = tone(-2100.0, Some(5e-3), n, dwell);
        let sum: Vec<C64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = spectrum(&sum, dwell);
        let rhs = spectrum(&a, dwell).try_add(&spectrum(&b, dwell)).unwrap();
        for (x, y) in lhs.values.iter().zip(&rhs.values) {
            assert!((x - y).norm() < 1e-12 * n as f64);
        }
    }

    #[test]
    fn csv_has_fixed_precision() {
        let spec = spectrum(&tone(100.0, Some(1e-3), 512, 20e-6), 20e-6);
        let mut out = Vec::new();
        spec.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "freq_hz,re,im,abs");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), 4);
        assert!(row[0].starts_with("-2.50000000000e4"));
        assert_eq!(text.lines().count(), 513);
    }

    #[test]
    fn normalization_requires_reference() {
        let a = PeakAmplitudes {
            line_order: vec!["a".into(); 4],
            raw: [1.0, 2.0, 3.0, 4.0],
            normalized: None,
        };
        assert!(matches!(a.normalized(), Err(Error::MissingReference)));
        let n = a.normalize_against(&a, 1.0).unwrap().normalized().unwrap();
        assert_eq!(n, [1.0; 4]);
        let zero = PeakAmplitudes {
            raw: [0.0; 4],
            ..a.clone()
        };
        assert!(a.normalize_against(&zero, 1.0).is_err());
    }
}
