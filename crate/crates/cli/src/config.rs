//! Run configuration: a JSON file in ordinary frequencies (Hz), optionally
//! starting from the `"paper"` preset.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nqr_qip::dynamics::AcquisitionConfig;
use nqr_qip::optimize::OptimizationConfig;
use nqr_qip::spin::{even_spacing_theta, SpinSystem, CL35_GAMMA_HZ_PER_T, KCLO3_B0_T, KCLO3_NU_Q_HZ};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Paper,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub nu_q_hz: Option<f64>,
    pub b0_t: Option<f64>,
    pub nu0_hz: Option<f64>,
    pub theta_deg: Option<f64>,
    pub gamma_hz_per_t: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionSection {
    pub n_points: Option<usize>,
    pub dwell_s: Option<f64>,
    pub decay_time_s: Option<f64>,
    pub detection_phi_rad: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutSection {
    pub omega1_hz: Option<f64>,
    /// Skips calibration when given.
    pub duration_s: Option<f64>,
}

/// On-disk form.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub defaults: Option<Preset>,
    #[serde(default)]
    pub system: SystemSection,
    #[serde(default)]
    pub acquisition: AcquisitionSection,
    pub optimizer: Option<OptimizationConfig>,
    #[serde(default)]
    pub readout: ReadoutSection,
    /// Directory of `<gate>.json` sequences, relative to the config file.
    pub gates_dir: Option<PathBuf>,
}

/// Validated configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub system: SpinSystem,
    pub acquisition: AcquisitionConfig,
    pub optimizer: OptimizationConfig,
    pub readout_omega1_hz: f64,
    pub readout_duration_s: Option<f64>,
    pub gates_dir: Option<PathBuf>,
}

const DEFAULT_READOUT_HZ: f64 = 25e3;

impl RunConfig {
    pub fn paper() -> Self {
        Self::resolve(RunConfigFile {
            defaults: Some(Preset::Paper),
            ..RunConfigFile::default()
        })
        .expect("preset is complete")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: RunConfigFile = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let mut cfg = Self::resolve(file)?;
        if let Some(dir) = &cfg.gates_dir {
            if dir.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.gates_dir = Some(base.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(file: RunConfigFile) -> Result<Self> {
        let paper = file.defaults == Some(Preset::Paper);
        let s = &file.system;
        let need = |v: Option<f64>, preset: f64, name: &str| -> Result<f64> {
            match (v, paper) {
                (Some(v), _) => Ok(v),
                (None, true) => Ok(preset),
                (None, false) => bail!("system.{name} is required without \"defaults\": \"paper\""),
            }
        };
        let nu_q = need(s.nu_q_hz, KCLO3_NU_Q_HZ, "nu_q_hz")?;
        let gamma = need(s.gamma_hz_per_t, CL35_GAMMA_HZ_PER_T, "gamma_hz_per_t")?;
        let theta = match s.theta_deg {
            Some(d) => d.to_radians(),
            None if paper => even_spacing_theta(),
            None => bail!("system.theta_deg is required without \"defaults\": \"paper\""),
        };
        let nu0 = match (s.b0_t, s.nu0_hz) {
            (Some(_), Some(_)) => bail!("give exactly one of system.b0_t and system.nu0_hz"),
            (Some(b0), None) => gamma * b0,
            (None, Some(nu0)) => nu0,
            (None, None) if paper => gamma * KCLO3_B0_T,
            (None, None) => bail!("give exactly one of system.b0_t and system.nu0_hz"),
        };
        let system = SpinSystem::new(2.0 * PI * nu_q, 2.0 * PI * nu0, theta, gamma)?;

        let base = AcquisitionConfig::default();
        let a = &file.acquisition;
        let acquisition = AcquisitionConfig {
            n_points: a.n_points.unwrap_or(base.n_points),
            dwell: a.dwell_s.unwrap_or(base.dwell),
            decay_time: a.decay_time_s.unwrap_or(base.decay_time),
            detection_phi: a.detection_phi_rad.unwrap_or(base.detection_phi),
        };
        acquisition.validate(&system)?;

        let optimizer = file.optimizer.unwrap_or_default();
        optimizer.validate()?;

        let readout_omega1_hz = file.readout.omega1_hz.unwrap_or(DEFAULT_READOUT_HZ);
        if !(readout_omega1_hz > 0.0 && readout_omega1_hz.is_finite()) {
            bail!("readout.omega1_hz must be positive");
        }
        if let Some(d) = file.readout.duration_s {
            if !(d > 0.0 && d.is_finite()) {
                bail!("readout.duration_s must be positive");
            }
        }
        Ok(Self {
            system,
            acquisition,
            optimizer,
            readout_omega1_hz,
            readout_duration_s: file.readout.duration_s,
            gates_dir: file.gates_dir,
        })
    }
}
