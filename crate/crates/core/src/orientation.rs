//! Goniometer geometry, θ scans of the four line frequencies, orientation
//! fits and working-point selection.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{central_splitting, even_spacing_theta, mixing_weights, SpinSystem};

/// Two-axis goniometer and coil orientation. All angles in radians.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoniometerConfig {
    /// Angle between the EFG axis and the horizontal rotation axis.
    pub theta_h: f64,
    /// Rotation about the horizontal axis.
    pub phi_h: f64,
    /// Tilt of B1 from the vertical axis.
    pub coil_tilt: f64,
    /// Angle of the B1 projection on the xz plane from B0.
    pub delta: f64,
}

impl GoniometerConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [self.theta_h, self.phi_h, self.coil_tilt, self.delta];
        if all.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidConfig("goniometer angles must be finite".into()));
        }
        if !(0.0..=PI / 2.0).contains(&self.coil_tilt) {
            return Err(Error::InvalidConfig(format!("coil_tilt must lie in [0, π/2], got {}", self.coil_tilt)));
        }
        Ok(())
    }
}

/// `θ = arccos(sin θ_h cos φ_h)`.
pub fn theta_from_goniometer(g: &GoniometerConfig) -> f64 {
    (g.theta_h.sin() * g.phi_h.cos()).clamp(-1.0, 1.0).acos()
}

/// Fraction of B1 perpendicular to B0.
pub fn b1_perp_ratio(g: &GoniometerConfig, theta: f64) -> f64 {
    let s = g.coil_tilt.sin();
    (1.0 + s * s * ((theta + g.delta).sin().powi(2) - 1.0)).max(0.0).sqrt()
}

/// Four line frequencies (same unit as the inputs), lowest first.
pub fn line_frequencies(nu_q: f64, nu_0: f64, theta: f64) -> [f64; 4] {
    let mut f = labelled_line_frequencies(nu_q, nu_0, theta);
    f.sort_by(f64::total_cmp);
    f
}

/// Line frequencies in transition order `ν12, ν13, ν24, ν34`; smooth in θ,
/// unlike the sorted set which has crossings at θ = π/2.
pub fn labelled_line_frequencies(nu_q: f64, nu_0: f64, theta: f64) -> [f64; 4] {
    let c = theta.cos();
    let k = central_splitting(theta);
    let e = [
        (9.0 * nu_q - 12.0 * nu_0 * c) / 8.0,
        (nu_q - 4.0 * nu_0 * k) / 8.0,
        (nu_q + 4.0 * nu_0 * k) / 8.0,
        (9.0 * nu_q + 12.0 * nu_0 * c) / 8.0,
    ];
    [(e[0] - e[1]).abs(), (e[0] - e[2]).abs(), (e[1] - e[3]).abs(), (e[2] - e[3]).abs()]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    /// rad
    pub theta: f64,
    /// Hz, ascending.
    pub freqs_hz: [f64; 4],
    /// Relative line intensities in the same order, when known.
    pub weights: Option<[f64; 4]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ThetaScanData {
    pub points: Vec<ScanPoint>,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    theta_deg: f64,
    f1_hz: f64,
    f2_hz: f64,
    f3_hz: f64,
    f4_hz: f64,
}

impl ThetaScanData {
    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.points.iter().enumerate() {
            if !p.theta.is_finite() || p.freqs_hz.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
                return Err(Error::InvalidScanData(format!("row {}: frequencies must be positive and finite", i + 1)));
            }
        }
        Ok(())
    }

    /// Reads `theta_deg,f1_hz,f2_hz,f3_hz,f4_hz`; further columns are ignored.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut points = Vec::new();
        for (i, row) in csv::Reader::from_reader(r).deserialize::<CsvRow>().enumerate() {
            let row = row.map_err(|e| Error::Parse(format!("scan CSV row {}: {e}", i + 1)))?;
            let mut freqs_hz = [row.f1_hz, row.f2_hz, row.f3_hz, row.f4_hz];
            freqs_hz.sort_by(f64::total_cmp);
            points.push(ScanPoint {
                theta: row.theta_deg.to_radians(),
                freqs_hz,
                weights: None,
            });
        }
        let data = Self { points };
        data.validate()?;
        Ok(data)
    }

    /// Writes the ingest columns, plus `w1..w4` when every point has weights.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let with_weights = !self.points.is_empty() && self.points.iter().all(|p| p.weights.is_some());
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["theta_deg", "f1_hz", "f2_hz", "f3_hz", "f4_hz"];
        if with_weights {
            header.extend(["w1", "w2", "w3", "w4"]);
        }
        let csv_err = |e: csv::Error| Error::Parse(e.to_string());
        out.write_record(&header).map_err(csv_err)?;
        for p in &self.points {
            let mut rec = vec![format!("{:.11e}", p.theta.to_degrees())];
            rec.extend(p.freqs_hz.iter().map(|f| format!("{f:.11e}")));
            if let (true, Some(ws)) = (with_weights, p.weights) {
                rec.extend(ws.iter().map(|v| format!("{v:.11e}")));
            }
            out.write_record(&rec).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Closed-form line frequencies and intensities of `sys` at each angle.
///
/// At θ = 0 the mixing vanishes: the two lines at `ν_Q ± ν_0` carry all the
/// intensity and the pair at `ν_Q ± 2ν_0` has zero weight.
pub fn theta_scan(sys: &SpinSystem, thetas: &[f64]) -> ThetaScanData {
    let nu_q = sys.omega_q / (2.0 * PI);
    let nu_0 = sys.omega_0 / (2.0 * PI);
    let points = thetas
        .iter()
        .map(|&theta| {
            let (fp, fm) = mixing_weights(theta);
            let c = theta.cos();
            let k = central_splitting(theta);
            // (offset, weight) per line, as in the transition table
            let mut lines = [
                ((k - 3.0 * c) / 2.0, fp),
                (-(3.0 * c + k) / 2.0, fm),
                ((k + 3.0 * c) / 2.0, fm),
                (-(k - 3.0 * c) / 2.0, fp),
            ];
            lines.sort_by(|a, b| a.0.total_cmp(&b.0));
            let freqs_hz = line_frequencies(nu_q, nu_0, theta);
            ScanPoint {
                theta,
                freqs_hz,
                weights: Some(lines.map(|l| l.1)),
            }
        })
        .collect();
    ThetaScanData { points }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub nu_q_hz: f64,
    pub nu0_hz: f64,
    pub theta_offset_rad: f64,
    pub rms_residual_hz: f64,
    pub max_residual_hz: f64,
    pub n_points: usize,
    pub iterations: usize,
}

impl FitReport {
    pub fn omega_q(&self) -> f64 {
        2.0 * PI * self.nu_q_hz
    }

    pub fn omega_0(&self) -> f64 {
        2.0 * PI * self.nu0_hz
    }
}

pub const MIN_FIT_POINTS: usize = 6;

fn residuals(data: &ThetaScanData, p: &[f64; 3]) -> DVector<f64> {
    DVector::from_iterator(
        4 * data.points.len(),
        data.points.iter().flat_map(|pt| {
            let model = line_frequencies(p[0], p[1], pt.theta + p[2]);
            (0..4).map(move |k| model[k] - pt.freqs_hz[k])
        }),
    )
}

fn cost(r: &DVector<f64>) -> f64 {
    r.norm_squared()
}

/// Least-squares estimate of `(ν_Q, ν_0, θ offset)` from a θ scan, with
/// lines matched in sorted order at each angle.
pub fn fit_orientation(data: &ThetaScanData) -> Result<FitReport> {
    data.validate()?;
    let n = data.points.len();
    if n < MIN_FIT_POINTS {
        return Err(Error::InvalidScanData(format!("need at least {MIN_FIT_POINTS} scan points, got {n}")));
    }
    let t0 = data.points[0].theta;
    if data.points.iter().all(|p| (p.theta - t0).abs() < 1e-9) {
        return Err(Error::InvalidScanData("all scan angles are equal; the fit is rank-deficient".into()));
    }

    let nu_q0 = data.points.iter().flat_map(|p| p.freqs_hz).sum::<f64>() / (4 * n) as f64;
    let guess_for_offset = |offset: f64| -> [f64; 3] {
        // outer-line spread is ν0 (κ + 3|cos θ|)
        let nu0 = data
            .points
            .iter()
            .map(|p| {
                let th = p.theta + offset;
                (p.freqs_hz[3] - p.freqs_hz[0]) / (central_splitting(th) + 3.0 * th.cos().abs())
            })
            .sum::<f64>()
            / n as f64;
        [nu_q0, nu0, offset]
    };
    let mut p = (-40..=40)
        .map(|k| guess_for_offset((k as f64 * 0.25).to_radians()))
        .min_by(|a, b| cost(&residuals(data, a)).total_cmp(&cost(&residuals(data, b))))
        .expect("non-empty grid");

    let mut r = residuals(data, &p);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    for it in 0..200 {
        iterations = it + 1;
        let steps = [1e-7 * p[0].abs().max(1.0), 1e-6 * p[1].abs().max(1e-3), 1e-7];
        let mut jac = DMatrix::<f64>::zeros(4 * n, 3);
        for j in 0..3 {
            let mut hi = p;
            let mut lo = p;
            hi[j] += steps[j];
            lo[j] -= steps[j];
            jac.set_column(j, &((residuals(data, &hi) - residuals(data, &lo)) / (2.0 * steps[j])));
        }
        let a = jac.transpose() * &jac;
        let g = jac.transpose() * &r;
        let c0 = cost(&r);
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = a.clone();
            for k in 0..3 {
                damped[(k, k)] += lambda * a[(k, k)].max(1e-300);
            }
            let Some(delta) = damped.cholesky().map(|ch| ch.solve(&(-&g))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + delta[0], p[1] + delta[1], p[2] + delta[2]];
            let rt = residuals(data, &trial);
            if cost(&rt) < c0 {
                let small = (0..3).all(|k| delta[k].abs() <= 1e-13 * trial[k].abs().max(1e-6));
                p = trial;
                r = rt;
                lambda = (lambda / 10.0).max(1e-12);
                improved = !small;
                break;
            }
            lambda *= 10.0;
        }
        if !improved || cost(&r) < 1e-24 {
            break;
        }
    }

    if !(p[1] > 0.0) {
        return Err(Error::FitFailed(format!("non-physical Zeeman frequency {}", p[1])));
    }
    let rms = (cost(&r) / r.len() as f64).sqrt();
    let max = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FitReport {
        nu_q_hz: p[0],
        nu0_hz: p[1],
        theta_offset_rad: p[2],
        rms_residual_hz: rms,
        max_residual_hz: max,
        n_points: n,
        iterations,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThetaCriterion {
    MaxB1Perp,
    MaxSensitivity,
    EvenSpacing,
}

/// Summed magnitude of `dν/dθ` over the four lines, per unit `ν_0`.
pub fn angular_sensitivity(theta: f64) -> f64 {
    let h = 1e-6;
    let hi = line_frequencies(0.0, 1.0, theta + h);
    let lo = line_frequencies(0.0, 1.0, theta - h);
    (0..4).map(|k| ((hi[k] - lo[k]) / (2.0 * h)).abs()).sum()
}

/// Working angle under one of the three selection rules.
pub fn select_theta(criterion: ThetaCriterion, g: &GoniometerConfig) -> f64 {
    match criterion {
        ThetaCriterion::MaxB1Perp => PI / 2.0 - g.delta,
        ThetaCriterion::EvenSpacing => even_spacing_theta(),
        ThetaCriterion::MaxSensitivity => {
            let grid = (1..360).map(|k| (k as f64 * 0.5).to_radians());
            grid.fold((0.0, f64::NEG_INFINITY), |best, th| {
                let s = angular_sensitivity(th);
                if s > best.1 + 1e-12 {
                    (th, s)
                } else {
                    best
                }
            })
            .0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    fn gonio(theta_h: f64, phi_h: f64) -> GoniometerConfig {
        GoniometerConfig {
            theta_h: deg(theta_h),
            phi_h: deg(phi_h),
            coil_tilt: deg(65.0),
            delta: deg(70.0),
        }
    }

    #[test]
    fn goniometer_examples() {
        assert!(theta_from_goniometer(&gonio(90.0, 0.0)).abs() < 1e-7);
        assert!((theta_from_goniometer(&gonio(90.0, 60.0)) - deg(60.0)).abs() < 1e-12);
    }

    #[test]
    fn frequency_extrema_at_multiples_of_pi() {
        let sys = SpinSystem::kclo3();
        let (nu_q, nu_0) = (sys.omega_q / (2.0 * PI), sys.omega_0 / (2.0 * PI));
        let phis: Vec<f64> = (0..=720).map(|k| deg(k as f64 * 0.5)).collect();
        let f: Vec<[f64; 4]> = phis
            .iter()
            .map(|&p| labelled_line_frequencies(nu_q, nu_0, theta_from_goniometer(&gonio(50.0, p.to_degrees()))))
            .collect();
        for line in 0..4 {
            let mut extrema = Vec::new();
            for k in 1..f.len() - 1 {
                if (f[k][line] - f[k - 1][line]) * (f[k + 1][line] - f[k][line]) <= 0.0 {
                    extrema.push(phis[k].to_degrees());
                }
            }
            assert_eq!(extrema, vec![180.0], "line {line}");
        }
    }

    #[test]
    fn b1_ratio_examples_and_bounds() {
        let mut g = gonio(0.0, 0.0);
        assert!((b1_perp_ratio(&g, deg(71.3)) - 0.707).abs() < 1e-3);
        assert!((b1_perp_ratio(&g, deg(20.0)) - 1.0).abs() < 1e-12);
        g.coil_tilt = 0.0;
        assert_eq!(b1_perp_ratio(&g, 1.0), 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let g = GoniometerConfig {
                theta_h: rng.gen_range(0.0..PI),
                phi_h: rng.gen_range(0.0..2.0 * PI),
                coil_tilt: rng.gen_range(0.0..PI / 2.0),
                delta: rng.gen_range(-PI..PI),
            };
            let r = b1_perp_ratio(&g, rng.gen_range(0.0..PI));
            assert!(r >= g.coil_tilt.cos() - 1e-12 && r <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn scan_at_zero_angle() {
        let sys = SpinSystem::kclo3();
        let p = theta_scan(&sys, &[0.0]).points[0];
        let nu_q = sys.omega_q / (2.0 * PI);
        let nu_0 = sys.omega_0 / (2.0 * PI);
        let expect = [nu_q - 2.0 * nu_0, nu_q - nu_0, nu_q + nu_0, nu_q + 2.0 * nu_0];
        for k in 0..4 {
            assert!((p.freqs_hz[k] - expect[k]).abs() < 1e-6);
        }
        let w = p.weights.unwrap();
        assert!(w[0].abs() < 1e-12 && w[3].abs() < 1e-12);
        assert!((w[1] - 1.0).abs() < 1e-12 && (w[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn scan_symmetric_about_right_angle() {
        let sys = SpinSystem::kclo3();
        for k in 0..=90 {
            let th = deg(k as f64);
            let a = theta_scan(&sys, &[th]).points[0].freqs_hz;
            let b = theta_scan(&sys, &[PI - th]).points[0].freqs_hz;
            for i in 0..4 {
                assert!((a[i] - b[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn even_spacing_identity() {
        let sys = SpinSystem::kclo3();
        let th = select_theta(ThetaCriterion::EvenSpacing, &gonio(0.0, 0.0));
        let f = theta_scan(&sys, &[th]).points[0].freqs_hz;
        let expected = 3.0 * sys.omega_0 * th.cos() / (2.0 * PI);
        for k in 0..3 {
            let s = f[k + 1] - f[k];
            assert!((s - expected).abs() / expected < 1e-3, "{s} vs {expected}");
        }
    }

    #[test]
    fn selection_rules() {
        let g = gonio(0.0, 0.0);
        assert!((select_theta(ThetaCriterion::MaxB1Perp, &g) - deg(20.0)).abs() < 1e-12);
        assert!((select_theta(ThetaCriterion::EvenSpacing, &g).to_degrees() - 71.3216).abs() < 1e-4);
        let s = select_theta(ThetaCriterion::MaxSensitivity, &g).to_degrees();
        assert!((75.0..=105.0).contains(&s), "{s}");
    }

    fn synthetic(nu_q: f64, nu_0: f64, offset: f64, noise: f64, rng: &mut ChaCha8Rng) -> ThetaScanData {
        let normal = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let points = (0..19)
            .map(|k| {
                let theta = deg(5.0 + 9.0 * k as f64);
                let mut freqs_hz = line_frequencies(nu_q, nu_0, theta + offset);
                if noise > 0.0 {
                    for f in &mut freqs_hz {
                        *f += normal.sample(rng);
                    }
                    freqs_hz.sort_by(f64::total_cmp);
                }
                ScanPoint { theta, freqs_hz, weights: None }
            })
            .collect();
        ThetaScanData { points }
    }

    #[test]
    fn fit_round_trip_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = synthetic(28.1e6, 3.0e3, 0.0, 0.0, &mut rng);
        let f = fit_orientation(&d).unwrap();
        assert!((f.nu_q_hz / 28.1e6 - 1.0).abs() < 1e-4);
        assert!((f.nu0_hz / 3.0e3 - 1.0).abs() < 1e-4);
        assert!(f.theta_offset_rad.abs() < 1e-4);
        for _ in 0..20 {
            let (q, z, o) = (rng.gen_range(20e6..35e6), rng.gen_range(1e3..6e3), deg(rng.gen_range(-5.0..5.0)));
            let f = fit_orientation(&synthetic(q, z, o, 0.0, &mut rng)).unwrap();
            assert!((f.nu_q_hz / q - 1.0).abs() < 1e-4, "{f:?}");
            assert!((f.nu0_hz / z - 1.0).abs() < 1e-4, "{f:?} vs {z}");
            assert!((f.theta_offset_rad - o).abs() < 1e-4, "{f:?} vs {o}");
        }
    }

    #[test]
    fn fit_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = synthetic(28.1e6, 3.0e3, 0.0, 10.0, &mut rng);
        let f = fit_orientation(&d).unwrap();
        assert!((f.nu_q_hz / 28.1e6 - 1.0).abs() < 1e-3);
        assert!((f.nu0_hz / 3.0e3 - 1.0).abs() < 1e-2, "{f:?}");
        assert!(f.rms_residual_hz < 20.0);
    }

    #[test]
    fn fit_preconditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut d = synthetic(28.1e6, 3.0e3, 0.0, 0.0, &mut rng);
        d.points.truncate(3);
        assert!(matches!(fit_orientation(&d), Err(Error::InvalidScanData(_))));
        let mut d = synthetic(28.1e6, 3.0e3, 0.0, 0.0, &mut rng);
        for p in &mut d.points {
            p.theta = 1.0;
        }
        assert!(matches!(fit_orientation(&d), Err(Error::InvalidScanData(_))));
    }

    #[test]
    fn csv_round_trip() {
        let sys = SpinSystem::kclo3();
        let thetas: Vec<f64> = (0..=10).map(|k| deg(k as f64 * 18.0)).collect();
        let scan = theta_scan(&sys, &thetas);
        let mut buf = Vec::new();
        scan.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("theta_deg,f1_hz,f2_hz,f3_hz,f4_hz,w1,w2,w3,w4\n"));
        let back = ThetaScanData::read_csv(buf.as_slice()).unwrap();
        for (a, b) in back.points.iter().zip(&scan.points) {
            assert!((a.theta - b.theta).abs() < 1e-12);
            for k in 0..4 {
                assert!((a.freqs_hz[k] / b.freqs_hz[k] - 1.0).abs() < 1e-11);
            }
        }
        assert!(ThetaScanData::read_csv("theta_deg,f1_hz\n1,2\n".as_bytes()).is_err());
    }
}
