//! Config files, CSV exports and run manifests.
//!
//! The parameter file is JSON with the conventional symbol names and the
//! units they are usually quoted in:
//!
//! ```json
//! {
//!   "D": 2.87,            // zero-field splitting, GHz (cycles)
//!   "gamma_e": 2.8,       // electron gyromagnetic ratio, MHz/G (cycles)
//!   "gamma_c": 1.7,       // nuclear gyromagnetic ratio, kHz/G (cycles)
//!   "d12": 4.0,           // nuclear dipolar coupling, kHz
//!   "Azz1": 12.45,        // hyperfine coupling 1, MHz
//!   "Azz2": 2.28,         // hyperfine coupling 2, MHz
//!   "Bx": 100.0,          // transverse field, G
//!   "Bz": 5.0,            // longitudinal field, G
//!   "T2e_us": 7.0,        // electron dephasing time, us
//!   "T2n1_us": 500.0,     // nuclear dephasing times, us
//!   "T2n2_us": 700.0,
//!   "bare_couplings_times_2pi": true
//! }
//! ```
//!
//! `D`, `gamma_e` and `gamma_c` are always cycle frequencies and are
//! multiplied by 2 pi on ingestion. Whether the bare couplings `d12`,
//! `Azz1`, `Azz2` also carry the 2 pi is ambiguous in the source tables;
//! the flag selects the convention (default: they do).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::MeasuredTrace;
use crate::dynamics::{SampledField, Trajectory};
use crate::error::{Error, Result};
use crate::hamiltonian::SystemParams;
use crate::optim::OptimizationResult;
use crate::pulses::PulseShape;
use crate::robustness::{Provenance, RobustnessMap};
use crate::units;

/// On-disk parameter schema; see the module docs for units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsFile {
    #[serde(rename = "D")]
    pub d: f64,
    pub gamma_e: f64,
    pub gamma_c: f64,
    pub d12: f64,
    #[serde(rename = "Azz1")]
    pub azz1: f64,
    #[serde(rename = "Azz2")]
    pub azz2: f64,
    #[serde(rename = "Bx")]
    pub bx: f64,
    #[serde(rename = "Bz")]
    pub bz: f64,
    #[serde(rename = "T2e_us")]
    pub t2e_us: f64,
    #[serde(rename = "T2n1_us")]
    pub t2n1_us: f64,
    #[serde(rename = "T2n2_us")]
    pub t2n2_us: f64,
    #[serde(default = "default_true")]
    pub bare_couplings_times_2pi: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ParamsFile {
    fn default() -> Self {
        Self {
            d: 2.87,
            gamma_e: 2.8,
            gamma_c: 1.7,
            d12: 4.0,
            azz1: 12.45,
            azz2: 2.28,
            bx: 100.0,
            bz: 5.0,
            t2e_us: 7.0,
            t2n1_us: 500.0,
            t2n2_us: 700.0,
            bare_couplings_times_2pi: true,
        }
    }
}

impl ParamsFile {
    /// Convert to internal angular-frequency units.
    pub fn to_params(&self) -> SystemParams {
        let bare = |mhz_value: f64| {
            if self.bare_couplings_times_2pi {
                units::mhz(mhz_value)
            } else {
                mhz_value
            }
        };
        SystemParams {
            zfs: units::mhz(self.d * 1e3),
            gamma_e: units::mhz(self.gamma_e),
            gamma_c: units::khz(self.gamma_c),
            d12: bare(self.d12 * 1e-3),
            azz: [bare(self.azz1), bare(self.azz2)],
            bx: self.bx,
            bz: self.bz,
            t2e: self.t2e_us,
            t2n: [self.t2n1_us, self.t2n2_us],
        }
    }
}

pub fn load_params(path: &Path) -> Result<SystemParams> {
    let text = fs::read_to_string(path)?;
    let file: ParamsFile =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))?;
    let params = file.to_params();
    params.validate()?;
    Ok(params)
}

pub fn save_params_file(path: &Path, file: &ParamsFile) -> Result<()> {
    write_text(path, &format!("{}\n", serde_json::to_string_pretty(file).unwrap()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn write_shape_json(path: &Path, shape: &PulseShape) -> Result<()> {
    write_text(path, &format!("{}\n", serde_json::to_string_pretty(shape).unwrap()))
}

pub fn read_shape_json(path: &Path) -> Result<PulseShape> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{path:?}: {e}")))
}

pub fn write_result_json(path: &Path, result: &OptimizationResult) -> Result<()> {
    write_text(path, &format!("{}\n", serde_json::to_string_pretty(result).unwrap()))
}

/// Columns: time_us, omega_p_radus, omega_s_radus.
pub fn write_field_csv(path: &Path, field: &SampledField) -> Result<()> {
    let mut out = String::from("time_us,omega_p_radus,omega_s_radus\n");
    for i in 0..field.times.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            field.times[i], field.omega_p[i], field.omega_s[i]
        ));
    }
    write_text(path, &out)
}

pub fn read_field_csv(path: &Path) -> Result<SampledField> {
    let text = fs::read_to_string(path)?;
    let mut times = Vec::new();
    let mut omega_p = Vec::new();
    let mut omega_s = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("time_us") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(Error::Config(format!("{path:?}:{}: expected 3 columns", ln + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|e| Error::Config(format!("{path:?}:{}: {e}", ln + 1)))
        };
        times.push(parse(cols[0])?);
        omega_p.push(parse(cols[1])?);
        omega_s.push(parse(cols[2])?);
    }
    let field = SampledField {
        t_total: times.last().copied().unwrap_or(0.0),
        times,
        omega_p,
        omega_s,
    };
    field.validate()?;
    Ok(field)
}

/// Columns: time_us, pop_1..pop_8, trace, purity.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut out = String::from(
        "time_us,pop_1,pop_2,pop_3,pop_4,pop_5,pop_6,pop_7,pop_8,trace,purity\n",
    );
    for cp in &traj.checkpoints {
        let total: f64 = cp.populations.iter().sum();
        out.push_str(&format!("{}", cp.t));
        for p in cp.populations {
            out.push_str(&format!(",{p}"));
        }
        out.push_str(&format!(",{total},{}\n", cp.purity));
    }
    write_text(path, &out)
}

/// Axis header rows, the value matrix (one row per detuning), and the
/// sample table when the map is estimated.
pub fn write_map_csv(path: &Path, map: &RobustnessMap) -> Result<()> {
    let join = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = String::new();
    out.push_str(&format!("# delta_radus,{}\n", join(&map.delta_axis)));
    out.push_str(&format!("# kappa,{}\n", join(&map.kappa_axis)));
    out.push_str(&format!(
        "# provenance,{}\n",
        match map.provenance {
            Provenance::Brute => "brute",
            Provenance::Estimated => "estimated",
        }
    ));
    for i in 0..map.delta_axis.len() {
        let row: Vec<String> = (0..map.kappa_axis.len())
            .map(|j| format!("{}", map.values[(i, j)]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    if !map.samples.is_empty() {
        out.push_str("# samples\ndelta_radus,kappa,fidelity\n");
        for ((d, k), f) in &map.samples {
            out.push_str(&format!("{d},{k},{f}\n"));
        }
    }
    write_text(path, &out)
}

/// Columns: eval_index, objective.
pub fn write_convergence_csv(path: &Path, trace: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("eval_index,objective\n");
    for (i, v) in trace {
        out.push_str(&format!("{i},{v}\n"));
    }
    write_text(path, &out)
}

/// Two-column trace: time_us, volts. Lines starting with '#' are comments.
pub fn read_trace_csv(path: &Path) -> Result<MeasuredTrace> {
    let text = fs::read_to_string(path)?;
    let mut times = Vec::new();
    let mut volts = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("time_us") {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 2 {
            return Err(Error::Config(format!("{path:?}:{}: expected 2 columns", ln + 1)));
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim()
                .parse()
                .map_err(|e| Error::Config(format!("{path:?}:{}: {e}", ln + 1)))
        };
        times.push(parse(cols[0])?);
        volts.push(parse(cols[1])?);
    }
    let trace = MeasuredTrace {
        times,
        voltages: volts,
        channel: String::new(),
        gain: 1.0,
    };
    trace.validate()?;
    Ok(trace)
}

pub fn write_trace_csv(path: &Path, trace: &MeasuredTrace) -> Result<()> {
    let mut out = String::from("# time_us,volts\n");
    for (t, v) in trace.times.iter().zip(&trace.voltages) {
        out.push_str(&format!("{t},{v}\n"));
    }
    write_text(path, &out)
}

/// Run manifest: the echoed configuration, the toolkit version and the seed.
pub fn write_manifest(path: &Path, config_echo: serde_json::Value, seed: Option<u64>) -> Result<()> {
    let manifest = serde_json::json!({
        "version": crate::VERSION,
        "seed": seed,
        "config": config_echo,
    });
    write_text(path, &format!("{}\n", serde_json::to_string_pretty(&manifest).unwrap()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulses::{sample, PulseShape};

    fn tmpdir(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("nvreg-io-tests").join(name);
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn default_params_file_matches_builtin_defaults() {
        let p = ParamsFile::default().to_params();
        let want = SystemParams::default();
        assert!((p.zfs - want.zfs).abs() < 1e-9);
        assert!((p.gamma_c - want.gamma_c).abs() < 1e-15);
        assert!((p.d12 - want.d12).abs() < 1e-15);
        assert_eq!(p.bx, want.bx);
    }

    #[test]
    fn bare_coupling_convention_switch() {
        let mut f = ParamsFile::default();
        f.bare_couplings_times_2pi = false;
        let p = f.to_params();
        assert!((p.d12 - 0.004).abs() < 1e-15);
        assert!((p.azz[0] - 12.45).abs() < 1e-12);
        // the explicitly angular entries keep their 2 pi
        assert!((p.gamma_e - units::mhz(2.8)).abs() < 1e-12);
    }

    #[test]
    fn params_round_trip_through_disk() {
        let dir = tmpdir("params");
        let path = dir.join("params.json");
        save_params_file(&path, &ParamsFile::default()).unwrap();
        let p = load_params(&path).unwrap();
        assert_eq!(p, SystemParams::default());
    }

    #[test]
    fn field_csv_round_trips_exactly() {
        let dir = tmpdir("field");
        let path = dir.join("field.csv");
        let field = sample(&PulseShape::gaussian_fixed(4.0), 4.0, 101);
        write_field_csv(&path, &field).unwrap();
        let back = read_field_csv(&path).unwrap();
        assert_eq!(field, back);
    }

    #[test]
    fn trace_csv_round_trips() {
        let dir = tmpdir("trace");
        let path = dir.join("trace.csv");
        let trace = MeasuredTrace {
            times: vec![0.0, 0.5, 1.0],
            voltages: vec![0.1, -0.25, 0.7],
            channel: String::new(),
            gain: 1.0,
        };
        write_trace_csv(&path, &trace).unwrap();
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(trace.times, back.times);
        assert_eq!(trace.voltages, back.voltages);
    }

    #[test]
    fn shape_json_round_trips() {
        let dir = tmpdir("shape");
        let path = dir.join("shape.json");
        let shape = PulseShape::gaussian(1.0, 0.5, 0.7);
        write_shape_json(&path, &shape).unwrap();
        assert_eq!(read_shape_json(&path).unwrap(), shape);
    }
}
