//! Command-line front end: single runs, ensemble sweeps and aggregation of
//! exported results into box-plot and scatter records.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use smartbal::config::RunConfig;
use smartbal::io::{export_run, export_summary, fmt_sig9};
use smartbal::metrics::boxplot;
use smartbal::montecarlo::{run_ensemble, run_single};
use smartbal::sim::RunResult;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "smartbal",
    version,
    about = "Monte-Carlo simulation of smart balancing against NRT imbalance data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a single run (plus its reference) and export it.
    Run {
        /// TOML run configuration; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Accepted for interface symmetry; single runs execute serially.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Execute the configured ensemble grid on a worker pool.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads.
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Keep the aggressive parameter combination in the statistics.
        #[arg(long)]
        no_exclusion: bool,
    },
    /// Aggregate an exported ensemble into box-plot and scatter records.
    Analyze {
        /// Directory produced by `sweep`.
        #[arg(long = "in")]
        input: PathBuf,
        /// Grouping axis: nrt, kind, delay, disturbance, theta_g,
        /// theta_sigma2 or theta_z.
        #[arg(long)]
        group_by: String,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run {
            config,
            seed,
            out,
            workers: _,
        } => cmd_run(config.as_deref(), seed, &out),
        Cmd::Sweep {
            config,
            seed,
            out,
            workers,
            no_exclusion,
        } => cmd_sweep(config.as_deref(), seed, &out, workers, no_exclusion),
        Cmd::Analyze { input, group_by } => cmd_analyze(&input, &group_by),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => Ok(RunConfig::load(p)?),
        None => {
            let cfg = RunConfig::default();
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

fn cmd_run(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let result = run_single(&cfg, seed)?;
    export_run(&result, out)?;
    println!(
        "run {} ({} agents, {} s horizon, NRT {} delay {} s) -> {}",
        result.meta.run_index,
        result.meta.n_agents,
        result.meta.horizon_s,
        result.meta.nrt_kind,
        result.meta.delay_s,
        out.display()
    );
    print_kpis(&result);
    Ok(())
}

fn print_kpis(r: &RunResult) {
    let rel = |v: &smartbal::metrics::RelValue| {
        v.value
            .map(|x| format!("{:+.1}%", 100.0 * x))
            .unwrap_or_else(|| "n/a".into())
    };
    println!(
        "  E_FRR+ {:10.1} MWh ({})   E_FRR- {:10.1} MWh ({})",
        r.kpis.e_frr_pos_mwh,
        rel(&r.rel.e_frr_pos),
        r.kpis.e_frr_neg_mwh,
        rel(&r.rel.e_frr_neg)
    );
    println!(
        "  aFRR cost {:12.0} EUR ({})",
        r.kpis.afrr_cost_eur,
        rel(&r.rel.afrr_cost)
    );
    println!(
        "  df mean {:+.5} Hz  max {:+.5} Hz  min {:+.5} Hz",
        r.kpis.df_mean_hz, r.kpis.df_max_hz, r.kpis.df_min_hz
    );
    println!(
        "  df std 15min {:.5} Hz ({})   1min {:.5} Hz ({})",
        r.kpis.df_std_15min_hz,
        rel(&r.rel.df_std_15min),
        r.kpis.df_std_1min_hz,
        rel(&r.rel.df_std_1min)
    );
}

fn cmd_sweep(
    config: Option<&Path>,
    seed: u64,
    out: &Path,
    workers: usize,
    no_exclusion: bool,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if no_exclusion {
        cfg.ensemble.exclusion_rule = false;
    }
    let results = run_ensemble(&cfg, seed, workers)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for r in &results {
        if r.failed.is_none() {
            export_run(r, &out.join(format!("run_{:04}", r.meta.run_index)))?;
        }
    }
    export_summary(&results, &out.join("summary.csv"))?;
    let failed = results.iter().filter(|r| r.failed.is_some()).count();
    let excluded = results.iter().filter(|r| r.excluded).count();
    println!(
        "{} runs ({} failed, {} excluded from statistics) -> {}",
        results.len(),
        failed,
        excluded,
        out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

const REL_KPIS: [&str; 8] = [
    "rel_e_frr_pos",
    "rel_e_frr_neg",
    "rel_afrr_cost",
    "rel_df_mean",
    "rel_df_max",
    "rel_df_min",
    "rel_df_std_15min",
    "rel_df_std_1min",
];

struct SummaryRow {
    run_index: u64,
    fields: BTreeMap<String, String>,
}

impl SummaryRow {
    fn get(&self, key: &str) -> &str {
        self.fields.get(key).map(String::as_str).unwrap_or("")
    }

    fn rel(&self, key: &str) -> Option<f64> {
        let cell = self.get(key);
        if cell.is_empty() {
            None
        } else {
            cell.parse().ok()
        }
    }

    fn group_label(&self, axis: &str) -> Result<String> {
        Ok(match axis {
            "nrt" => format!("{}/{}s", self.get("nrt_kind"), self.get("delay_s")),
            "kind" => self.get("nrt_kind").to_string(),
            "delay" => format!("{}s", self.get("delay_s")),
            "disturbance" => self.get("disturbance").to_string(),
            "theta_g" => self.get("theta_g_shape").to_string(),
            "theta_sigma2" => self.get("theta_sigma2_shape").to_string(),
            "theta_z" => self.get("theta_z_shape").to_string(),
            other => bail!(
                "unknown group axis {other:?}; use nrt, kind, delay, disturbance, theta_g, theta_sigma2 or theta_z"
            ),
        })
    }
}

fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let fields: BTreeMap<String, String> = headers
            .iter()
            .cloned()
            .zip(record.iter().map(str::to_string))
            .collect();
        let run_index = fields
            .get("run_index")
            .and_then(|s| s.parse().ok())
            .context("summary row without run_index")?;
        rows.push(SummaryRow { run_index, fields });
    }
    Ok(rows)
}

fn cmd_analyze(input: &Path, group_by: &str) -> Result<()> {
    let rows = read_summary(&input.join("summary.csv"))?;
    let usable: Vec<&SummaryRow> = rows
        .iter()
        .filter(|r| r.get("failed").is_empty() && r.get("excluded") != "true")
        .collect();
    if usable.is_empty() {
        bail!("no usable (non-failed, non-excluded) runs in {}", input.display());
    }

    // Per-group box plots of the relative KPIs.
    let mut groups: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
    for row in &usable {
        groups.entry(row.group_label(group_by)?).or_default().push(row);
    }

    let csv_path = input.join(format!("boxplots_{group_by}.csv"));
    let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(
        w,
        "axis,group,kpi,n,median,q1,q3,whisker_low,whisker_high,n_outliers"
    )?;
    let mut records = Vec::new();
    for (label, members) in &groups {
        for kpi in REL_KPIS {
            let values: Vec<f64> = members.iter().filter_map(|r| r.rel(kpi)).collect();
            if values.is_empty() {
                continue;
            }
            let b = boxplot(&values)?;
            writeln!(
                w,
                "{group_by},{label},{kpi},{},{},{},{},{},{},{}",
                b.n,
                fmt_sig9(b.median),
                fmt_sig9(b.q1),
                fmt_sig9(b.q3),
                fmt_sig9(b.whisker_low),
                fmt_sig9(b.whisker_high),
                b.outliers.len()
            )?;
            records.push(serde_json::json!({
                "axis": group_by,
                "group": label,
                "kpi": kpi,
                "n": b.n,
                "median": b.median,
                "q1": b.q1,
                "q3": b.q3,
                "whisker_low": b.whisker_low,
                "whisker_high": b.whisker_high,
                "outliers": b.outliers,
            }));
        }
    }
    w.flush()?;
    let json_path = input.join(format!("boxplots_{group_by}.json"));
    std::fs::write(&json_path, serde_json::to_string_pretty(&records)? + "\n")?;

    // Per-BRP scatter records from the per-run agent exports.
    let scatter_csv = input.join("brp_scatter.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&scatter_csv)?);
    writeln!(
        w,
        "run_index,group,agent,e_rmse,e_half,tau_active,e_eff,risk_class"
    )?;
    let mut scatter_json = Vec::new();
    for row in &usable {
        let run_dir = input.join(format!("run_{:04}", row.run_index));
        let agents_path = run_dir.join("agents.csv");
        if !agents_path.exists() {
            continue;
        }
        let group = row.group_label(group_by)?;
        let mut reader = csv::Reader::from_path(&agents_path)?;
        let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let (Some(c_agent), Some(c_rmse), Some(c_half), Some(c_tau), Some(c_eff), Some(c_risk)) = (
            col("agent"),
            col("e_rmse"),
            col("e_half"),
            col("tau_active"),
            col("e_eff"),
            col("risk_class"),
        ) else {
            bail!("{} is missing expected columns", agents_path.display());
        };
        for record in reader.records() {
            let record = record?;
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                row.run_index,
                group,
                &record[c_agent],
                &record[c_rmse],
                &record[c_half],
                &record[c_tau],
                &record[c_eff],
                &record[c_risk],
            )?;
            scatter_json.push(serde_json::json!({
                "run_index": row.run_index,
                "group": group,
                "agent": record[c_agent].parse::<u64>().ok(),
                "e_rmse": record[c_rmse].parse::<f64>().ok(),
                "e_half": record[c_half].parse::<f64>().ok(),
                "tau_active": record[c_tau].parse::<f64>().ok(),
                "e_eff": record[c_eff].parse::<f64>().ok(),
                "risk_class": &record[c_risk],
            }));
        }
    }
    w.flush()?;
    std::fs::write(
        input.join("brp_scatter.json"),
        serde_json::to_string_pretty(&scatter_json)? + "\n",
    )?;

    println!(
        "{} groups over {} runs -> {}, {}",
        groups.len(),
        usable.len(),
        csv_path.display(),
        scatter_csv.display()
    );
    Ok(())
}
