//! Disturbance ingestion and synthesis, result export.
//!
//! Historical imbalance series are not shipped; runs either ingest a CSV
//! (`t_s,p_d_mw`, linearly interpolated onto the integration grid) or
//! synthesize a mean-reverting series from one of four archetype presets.
//! Exports are deterministic: floats carry nine significant digits and
//! re-exporting an identical result yields byte-identical files.

use crate::config::Archetype;
use crate::metrics::RelValue;
use crate::sim::RunResult;
use rand::Rng;
use rand_distr::StandardNormal;
use serde_json::{json, Map, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{path} row {row}: {message}")]
    BadRow {
        path: PathBuf,
        row: usize,
        message: String,
    },
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::File {
        path: path.to_path_buf(),
        source,
    }
}

/// One disturbance trace on the integration grid.
#[derive(Debug, Clone)]
pub struct DisturbanceSeries {
    pub id: String,
    /// Samples at `t = 0, dt, ...` [MW].
    pub samples: Vec<f64>,
    /// Intraday market index matching this dataset [EUR/MWh].
    pub intraday_index_eur_mwh: f64,
}

impl DisturbanceSeries {
    /// Population variance of the series [MW^2]; scales the agents' prior.
    pub fn variance(&self) -> f64 {
        let n = self.samples.len() as f64;
        let mean = self.samples.iter().sum::<f64>() / n;
        self.samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
    }
}

/// Maximum data hole the loader will bridge by interpolation [s]; wider
/// holes are only accepted when both endpoints carry the same value.
const MAX_GAP_S: f64 = 300.0;

/// Load a disturbance CSV (`t_s,p_d_mw`) and interpolate it onto the grid.
pub fn load_disturbance(
    path: &Path,
    horizon_s: f64,
    dt_s: f64,
    intraday_index_eur_mwh: f64,
) -> Result<DisturbanceSeries, IoError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    {
        let headers = reader.headers().map_err(|e| IoError::Malformed {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if headers.len() < 2 || &headers[0] != "t_s" || &headers[1] != "p_d_mw" {
            return Err(IoError::Malformed {
                path: path.to_path_buf(),
                message: format!("expected header t_s,p_d_mw, found {:?}", headers),
            });
        }
    }

    let mut points: Vec<(f64, f64)> = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| IoError::BadRow {
            path: path.to_path_buf(),
            row: row + 2,
            message: e.to_string(),
        })?;
        let parse = |s: &str, what: &str| {
            s.parse::<f64>().map_err(|_| IoError::BadRow {
                path: path.to_path_buf(),
                row: row + 2,
                message: format!("cannot parse {what} {s:?}"),
            })
        };
        let t = parse(&record[0], "t_s")?;
        let v = parse(&record[1], "p_d_mw")?;
        if !t.is_finite() || !v.is_finite() {
            return Err(IoError::BadRow {
                path: path.to_path_buf(),
                row: row + 2,
                message: "non-finite value".into(),
            });
        }
        if let Some(&(prev_t, prev_v)) = points.last() {
            if t <= prev_t {
                return Err(IoError::BadRow {
                    path: path.to_path_buf(),
                    row: row + 2,
                    message: format!("time not increasing: {t} after {prev_t}"),
                });
            }
            if t - prev_t > MAX_GAP_S && prev_v != v {
                return Err(IoError::BadRow {
                    path: path.to_path_buf(),
                    row: row + 2,
                    message: format!(
                        "gap of {} s (> {MAX_GAP_S} s) with changing value",
                        t - prev_t
                    ),
                });
            }
        }
        points.push((t, v));
    }

    if points.len() < 2 {
        return Err(IoError::Malformed {
            path: path.to_path_buf(),
            message: "need at least two samples".into(),
        });
    }
    let n = (horizon_s / dt_s).round() as usize;
    let t_last_needed = (n - 1) as f64 * dt_s;
    if points[0].0 > 0.0 || points.last().unwrap().0 < t_last_needed {
        return Err(IoError::Malformed {
            path: path.to_path_buf(),
            message: format!(
                "data spans [{}, {}] s but the run needs [0, {}] s",
                points[0].0,
                points.last().unwrap().0,
                t_last_needed
            ),
        });
    }

    let mut samples = Vec::with_capacity(n);
    let mut seg = 0usize;
    for i in 0..n {
        let t = i as f64 * dt_s;
        while points[seg + 1].0 < t {
            seg += 1;
        }
        let (t0, v0) = points[seg];
        let (t1, v1) = points[seg + 1];
        samples.push(v0 + (v1 - v0) * (t - t0) / (t1 - t0));
    }

    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "csv".into());
    Ok(DisturbanceSeries {
        id,
        samples,
        intraday_index_eur_mwh,
    })
}

struct OuPreset {
    sigma_mw: f64,
    tau_s: f64,
    /// Baseline offset in units of sigma, sign-flipped at mid horizon.
    flip_scale: f64,
}

fn preset(archetype: Archetype) -> OuPreset {
    match archetype {
        Archetype::Small => OuPreset {
            sigma_mw: 150.0,
            tau_s: 15.0 * 60.0,
            flip_scale: 0.0,
        },
        Archetype::Reversal => OuPreset {
            sigma_mw: 400.0,
            tau_s: 30.0 * 60.0,
            flip_scale: 2.0,
        },
        Archetype::FastLarge => OuPreset {
            sigma_mw: 800.0,
            tau_s: 5.0 * 60.0,
            flip_scale: 0.0,
        },
        Archetype::SlowLarge => OuPreset {
            sigma_mw: 800.0,
            tau_s: 30.0 * 60.0,
            flip_scale: 0.0,
        },
    }
}

/// Synthesize a disturbance: a stationary mean-reverting process around a
/// baseline that (for the reversal archetype) flips sign at mid horizon.
/// All preset amplitudes are synthetic stand-ins, not measured data.
pub fn synthesize_disturbance<R: Rng + ?Sized>(
    archetype: Archetype,
    rng: &mut R,
    horizon_s: f64,
    dt_s: f64,
    intraday_index_eur_mwh: f64,
) -> DisturbanceSeries {
    let p = preset(archetype);
    let n = (horizon_s / dt_s).round() as usize;
    let decay = (-dt_s / p.tau_s).exp();
    let noise = p.sigma_mw * (1.0 - decay * decay).sqrt();
    let flip_at = n / 2;

    let mut samples = Vec::with_capacity(n);
    // Stationary start around the initial baseline.
    let mut x = p.sigma_mw * rng.sample::<f64, _>(StandardNormal);
    for i in 0..n {
        let baseline = if i < flip_at {
            p.flip_scale * p.sigma_mw
        } else {
            -p.flip_scale * p.sigma_mw
        };
        samples.push(baseline + x);
        x = decay * x + noise * rng.sample::<f64, _>(StandardNormal);
    }
    DisturbanceSeries {
        id: archetype.id().to_string(),
        samples,
        intraday_index_eur_mwh,
    }
}

/// Nine-significant-digit float formatting used in every export.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    format!("{x:.8e}")
}

/// Round to nine significant digits (for JSON payloads).
pub fn round_sig9(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    fmt_sig9(x).parse().unwrap_or(x)
}

fn json_f64(x: f64) -> Value {
    if x.is_finite() {
        json!(round_sig9(x))
    } else {
        Value::Null
    }
}

fn json_rel(rel: &RelValue) -> Value {
    json!({
        "value": rel.value.map(round_sig9),
        "outlier_prone": rel.outlier_prone,
    })
}

fn kpis_value(kpis: &crate::metrics::RunKpis) -> Value {
    json!({
        "e_frr_pos_mwh": json_f64(kpis.e_frr_pos_mwh),
        "e_frr_neg_mwh": json_f64(kpis.e_frr_neg_mwh),
        "afrr_cost_eur": json_f64(kpis.afrr_cost_eur),
        "df_mean_hz": json_f64(kpis.df_mean_hz),
        "df_max_hz": json_f64(kpis.df_max_hz),
        "df_min_hz": json_f64(kpis.df_min_hz),
        "df_std_15min_hz": json_f64(kpis.df_std_15min_hz),
        "df_std_1min_hz": json_f64(kpis.df_std_1min_hz),
    })
}

/// JSON document with the run, reference and relative KPIs plus metadata.
pub fn kpis_json(result: &RunResult) -> Value {
    let rel = &result.rel;
    let mut relative = Map::new();
    for (name, value) in [
        ("e_frr_pos", &rel.e_frr_pos),
        ("e_frr_neg", &rel.e_frr_neg),
        ("afrr_cost", &rel.afrr_cost),
        ("df_mean", &rel.df_mean),
        ("df_max", &rel.df_max),
        ("df_min", &rel.df_min),
        ("df_std_15min", &rel.df_std_15min),
        ("df_std_1min", &rel.df_std_1min),
    ] {
        relative.insert(name.to_string(), json_rel(value));
    }
    json!({
        "meta": {
            "run_index": result.meta.run_index,
            "base_seed": result.meta.base_seed,
            "disturbance": result.meta.disturbance_id,
            "nrt_kind": result.meta.nrt_kind.to_string(),
            "delay_s": result.meta.delay_s,
            "theta_g_shape": [result.meta.theta_g_shape.0, result.meta.theta_g_shape.1],
            "theta_sigma2_shape": [result.meta.theta_sigma2_shape.0, result.meta.theta_sigma2_shape.1],
            "theta_z_shape": [result.meta.theta_z_shape.0, result.meta.theta_z_shape.1],
            "repeat": result.meta.repeat,
            "n_agents": result.meta.n_agents,
            "horizon_s": result.meta.horizon_s,
            "excluded": result.excluded,
            "failed": result.failed,
        },
        "run": kpis_value(&result.kpis),
        "reference": kpis_value(&result.ref_kpis),
        "relative": Value::Object(relative),
        "diagnostics": {
            "degenerate_bins": result.diagnostics.degenerate_bins,
            "variance_clamps": result.diagnostics.variance_clamps,
        },
    })
}

/// Write `timeseries.csv`, `agents.csv` and `kpis.json` for one run.
pub fn export_run(result: &RunResult, dir: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(file_err(dir))?;

    let ts_path = dir.join("timeseries.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&ts_path).map_err(file_err(&ts_path))?);
    writeln!(w, "t_s,freq_dev_hz,p_demand_mw,p_fcr_mw,p_afrr_mw,p_smart_mw")
        .map_err(file_err(&ts_path))?;
    for i in 0..result.freq_dev_hz.len() {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            i as f64 * result.dt_s,
            fmt_sig9(result.freq_dev_hz[i]),
            fmt_sig9(result.p_demand_mw[i]),
            fmt_sig9(result.p_fcr_mw[i]),
            fmt_sig9(result.p_afrr_mw[i]),
            fmt_sig9(result.p_smart_mw[i]),
        )
        .map_err(file_err(&ts_path))?;
    }
    w.flush().map_err(file_err(&ts_path))?;

    let ag_path = dir.join("agents.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&ag_path).map_err(file_err(&ag_path))?);
    writeln!(
        w,
        "agent,theta_g_mw,theta_t_min,theta_sigma2_mw2,theta_d,theta_w,theta_z,theta_c_eur_mwh,e_rmse,e_half,tau_active,e_eff,risk_class"
    )
    .map_err(file_err(&ag_path))?;
    for (i, (p, m)) in result
        .agent_params
        .iter()
        .zip(&result.brp_metrics)
        .enumerate()
    {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            i,
            fmt_sig9(p.theta_g_mw),
            fmt_sig9(p.theta_t_min),
            fmt_sig9(p.theta_sigma2_mw2),
            fmt_sig9(p.theta_d),
            fmt_sig9(p.theta_w),
            fmt_sig9(p.theta_z),
            fmt_sig9(p.theta_c_eur_mwh),
            fmt_sig9(m.e_rmse),
            fmt_sig9(m.e_half),
            fmt_sig9(m.tau_active),
            m.e_eff.map(fmt_sig9).unwrap_or_default(),
            m.risk_class,
        )
        .map_err(file_err(&ag_path))?;
    }
    w.flush().map_err(file_err(&ag_path))?;

    let kp_path = dir.join("kpis.json");
    let text = serde_json::to_string_pretty(&kpis_json(result)).expect("serializable");
    std::fs::write(&kp_path, text + "\n").map_err(file_err(&kp_path))?;
    Ok(())
}

pub const SUMMARY_HEADER: &str = "run_index,disturbance,nrt_kind,delay_s,theta_g_shape,theta_sigma2_shape,theta_z_shape,repeat,excluded,failed,e_frr_pos_mwh,e_frr_neg_mwh,afrr_cost_eur,df_mean_hz,df_max_hz,df_min_hz,df_std_15min_hz,df_std_1min_hz,rel_e_frr_pos,rel_e_frr_neg,rel_afrr_cost,rel_df_mean,rel_df_max,rel_df_min,rel_df_std_15min,rel_df_std_1min";

fn shape_label(shape: (f64, f64)) -> String {
    format!("{}:{}", shape.0, shape.1)
}

fn rel_cell(rel: &RelValue) -> String {
    rel.value.map(fmt_sig9).unwrap_or_default()
}

/// Ensemble summary keyed by the scenario axes, one row per run.
pub fn export_summary(results: &[RunResult], path: &Path) -> Result<(), IoError> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(file_err(path))?);
    writeln!(w, "{SUMMARY_HEADER}").map_err(file_err(path))?;
    for r in results {
        let failed = r.failed.as_deref().unwrap_or("");
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.meta.run_index,
            r.meta.disturbance_id,
            r.meta.nrt_kind,
            r.meta.delay_s,
            shape_label(r.meta.theta_g_shape),
            shape_label(r.meta.theta_sigma2_shape),
            shape_label(r.meta.theta_z_shape),
            r.meta.repeat,
            r.excluded,
            failed.replace(',', ";"),
            fmt_sig9(r.kpis.e_frr_pos_mwh),
            fmt_sig9(r.kpis.e_frr_neg_mwh),
            fmt_sig9(r.kpis.afrr_cost_eur),
            fmt_sig9(r.kpis.df_mean_hz),
            fmt_sig9(r.kpis.df_max_hz),
            fmt_sig9(r.kpis.df_min_hz),
            fmt_sig9(r.kpis.df_std_15min_hz),
            fmt_sig9(r.kpis.df_std_1min_hz),
            rel_cell(&r.rel.e_frr_pos),
            rel_cell(&r.rel.e_frr_neg),
            rel_cell(&r.rel.afrr_cost),
            rel_cell(&r.rel.df_mean),
            rel_cell(&r.rel.df_max),
            rel_cell(&r.rel.df_min),
            rel_cell(&r.rel.df_std_15min),
            rel_cell(&r.rel.df_std_1min),
        )
        .map_err(file_err(path))?;
    }
    w.flush().map_err(file_err(path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_point_constant_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "t_s,p_d_mw\n0,100\n7200,100\n").unwrap();
        let d = load_disturbance(&path, 7200.0, 1.0, 60.0).unwrap();
        assert_eq!(d.samples.len(), 7200);
        assert!(d.samples.iter().all(|v| *v == 100.0));
        assert_eq!(d.id, "d");
    }

    #[test]
    fn short_span_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "t_s,p_d_mw\n0,100\n3600,100\n").unwrap();
        let err = load_disturbance(&path, 7200.0, 1.0, 60.0).unwrap_err();
        assert!(err.to_string().contains("spans"));
    }

    #[test]
    fn changing_gap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "t_s,p_d_mw\n0,100\n7200,200\n").unwrap();
        let err = load_disturbance(&path, 7200.0, 1.0, 60.0).unwrap_err();
        assert!(err.to_string().contains("gap"));
    }

    #[test]
    fn non_monotone_time_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, "t_s,p_d_mw\n0,1\n10,2\n5,3\n").unwrap();
        assert!(load_disturbance(&path, 20.0, 1.0, 60.0).is_err());
    }

    #[test]
    fn grid_points_pass_through() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let mut text = String::from("t_s,p_d_mw\n");
        for i in 0..=30 {
            text += &format!("{},{}\n", i * 4, (i * 7) % 50);
        }
        std::fs::write(&path, text).unwrap();
        let d = load_disturbance(&path, 120.0, 1.0, 60.0).unwrap();
        for i in 0..=29 {
            assert_eq!(d.samples[i * 4], ((i * 7) % 50) as f64);
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        let d1 = synthesize_disturbance(Archetype::FastLarge, &mut a, 7200.0, 1.0, 60.0);
        let d2 = synthesize_disturbance(Archetype::FastLarge, &mut b, 7200.0, 1.0, 60.0);
        assert_eq!(d1.samples, d2.samples);
    }

    #[test]
    fn small_archetype_std_in_band() {
        let mut sum = 0.0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = synthesize_disturbance(Archetype::Small, &mut rng, 7200.0, 1.0, 60.0);
            sum += d.variance().sqrt();
        }
        let mean_std = sum / 100.0;
        assert!(
            (100.0..200.0).contains(&mean_std),
            "sample std {mean_std} out of band"
        );
    }

    #[test]
    fn reversal_archetype_flips_sign() {
        let mut flips = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = synthesize_disturbance(Archetype::Reversal, &mut rng, 7200.0, 1.0, 60.0);
            let first: f64 = d.samples[..3600].iter().sum::<f64>() / 3600.0;
            let second: f64 = d.samples[3600..].iter().sum::<f64>() / 3600.0;
            if first * second < 0.0 {
                flips += 1;
            }
        }
        assert!(flips >= 90, "only {flips}/100 realizations flipped sign");
    }

    #[test]
    fn sig9_round_trip() {
        for &x in &[0.0, 1.0, -345.678901234, 1.23e-7, 987.654321987] {
            let s = fmt_sig9(x);
            let back: f64 = s.parse().unwrap();
            assert!((back - x).abs() <= 5e-9 * x.abs().max(1e-300));
        }
    }
}
