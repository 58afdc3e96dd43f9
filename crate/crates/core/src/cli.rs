//! The `symtree` command line.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Provenance, RunConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::experiment::{self, BaselineKind};
use crate::learner::Breakdown;
use crate::milp::{build_milp, parse_solution, read_solution, write_mps, Counts};
use crate::sim::{iae, latency_stats, mae, Controller};
use crate::tree::{from_document, to_document, TreeModel};

#[derive(Debug, Parser)]
#[command(name = "symtree", version, about = "Symbolic decision trees for explicit MPC")]
struct Cli {
    /// JSON run configuration; canonical defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration value, e.g. `--set learn.depth=3`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Label training and test states with the MPC and write both as CSV.
    GenData {
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit the globally optimal symbolic tree.
    Train {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit report JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Fit a comparison model.
    Baseline {
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Coefficient penalty of the sparse model (default 0).
        #[arg(long)]
        lambda_m: Option<f64>,
    },
    /// Write the mixed-integer learning problem as fixed-format MPS.
    ExportMilp {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Variable/binary/row counts JSON; defaults to the MPS path with extension `.counts.json`.
        #[arg(long)]
        counts: Option<PathBuf>,
    },
    /// Decode an external solver's solution into a tree.
    ImportSol {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        sol: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model at one or more states.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "x", required = true, num_args = 1.., allow_negative_numbers = true)]
        x: Vec<f64>,
    },
    /// Closed-loop simulation of the plant.
    Simulate {
        /// `mpc`, `model:<path>` or `const:<value>`.
        #[arg(long)]
        controller: String,
        /// Trace CSV.
        #[arg(long)]
        out: PathBuf,
        /// Metrics JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Held-out data for `mae_test`.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Label in the metrics file; defaults to the controller spec.
        #[arg(long)]
        label: Option<String>,
    },
    /// Merge metrics files into one comparison table.
    Report {
        #[arg(long, required = true, num_args = 1..)]
        metrics: Vec<PathBuf>,
        /// Comparison JSON.
        #[arg(long)]
        out: PathBuf,
        /// Comparison CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on usage errors, 2 on runtime failures.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let base = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    base.with_overrides(&cli.sets)
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, &(serde_json::to_string_pretty(value).expect("serializable") + "\n"))
}

fn write_dataset(path: &Path, data: &Dataset, prov: &Provenance) -> Result<()> {
    let header = format!("# provenance: {}\n", serde_json::to_string(prov).expect("serializable"));
    write(path, &(header + &data.to_csv()))
}

fn read_model(path: &Path) -> Result<(TreeModel, Option<Value>)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_document(&text)
}

fn write_model(path: &Path, model: &TreeModel, prov: &Provenance) -> Result<()> {
    write(path, &(to_document(model, Some(prov.to_value())) + "\n"))
}

#[derive(Debug, Serialize, Deserialize)]
struct FitSummary {
    model: String,
    objective: f64,
    breakdown: Breakdown,
    subproblems_solved: usize,
    wall_time_s: f64,
    provenance: Provenance,
}

/// Metrics file; `mae_test` is null when no test set was given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MetricsDoc {
    label: String,
    iae: f64,
    mae_test: Option<f64>,
    latency_mean_s: f64,
    latency_max_s: f64,
    provenance: Provenance,
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::GenData { out_dir } => {
            let train = experiment::training_data(&cfg)?;
            let test = experiment::test_data(&cfg, &train)?;
            let prov = Provenance::new(&cfg, None);
            write_dataset(&out_dir.join("train.csv"), &train, &prov)?;
            write_dataset(&out_dir.join("test.csv"), &test, &prov)?;
            println!("wrote {} training and {} test rows to {}", train.len(), test.len(), out_dir.display());
        }
        Command::Train { train, out, report } => {
            let data = Dataset::read(&train)?;
            let prov = Provenance::new(&cfg, Some(data.sha256()));
            let fit = experiment::train_symbolic(&cfg, &data)?;
            write_model(&out, &fit.model, &prov)?;
            if let Some(path) = report {
                write_json(
                    &path,
                    &FitSummary {
                        model: out.display().to_string(),
                        objective: fit.objective,
                        breakdown: fit.breakdown,
                        subproblems_solved: fit.subproblems_solved,
                        wall_time_s: fit.wall_time.as_secs_f64(),
                        provenance: prov,
                    },
                )?;
            }
            println!("objective {:.6e}", fit.objective);
            print!("{}", fit.model.describe());
        }
        Command::Baseline {
            kind,
            train,
            out,
            lambda_m,
        } => {
            let data = Dataset::read(&train)?;
            let prov = Provenance::new(&cfg, Some(data.sha256()));
            let model = experiment::train_baseline(kind, &cfg, &data, lambda_m)?;
            write_model(&out, &model, &prov)?;
            print!("{}", model.describe());
        }
        Command::ExportMilp { train, out, counts } => {
            let start = Instant::now();
            let data = Dataset::read(&train)?;
            let art = build_milp(&data, &crate::basis::canonical_basis(), &cfg.learn)?;
            art.validate()?;
            ensure_parent(&out)?;
            write_mps(&art, &out)?;
            let c: Counts = art.counts();
            let families: serde_json::Map<String, Value> = art
                .rows_by_family()
                .into_iter()
                .map(|(f, n)| (f.to_string(), json!(n)))
                .collect();
            let counts_path = counts.unwrap_or_else(|| out.with_extension("counts.json"));
            write_json(
                &counts_path,
                &json!({
                    "variables": c.n_vars,
                    "binary": c.n_binary,
                    "constraints": c.n_rows,
                    "rows_by_family": families,
                    "provenance": Provenance::new(&cfg, Some(data.sha256())),
                }),
            )?;
            println!(
                "{} variables ({} binary), {} constraints in {:.2} s",
                c.n_vars,
                c.n_binary,
                c.n_rows,
                start.elapsed().as_secs_f64()
            );
        }
        Command::ImportSol { train, sol, out } => {
            let data = Dataset::read(&train)?;
            let art = build_milp(&data, &crate::basis::canonical_basis(), &cfg.learn)?;
            let text = std::fs::read_to_string(&sol).map_err(|e| Error::io(&sol, e))?;
            let decoded = read_solution(&art, &parse_solution(&text)?)?;
            let prov = Provenance::new(&cfg, Some(data.sha256()));
            write_model(&out, &decoded.model, &prov)?;
            println!("objective {:.6e}", decoded.objective);
            if let Some(c) = decoded.claimed_objective {
                println!("solver objective {c:.6e}");
            }
            if decoded.routing_mismatches > 0 {
                println!("{} samples routed differently from the solver's assignment", decoded.routing_mismatches);
            }
        }
        Command::Predict { model, x } => {
            let (m, _) = read_model(&model)?;
            let mut out = std::io::stdout().lock();
            for v in x {
                let y = m.predict(&[v])?;
                let _ = writeln!(out, "{v:?} {y:?}");
            }
        }
        Command::Simulate {
            controller,
            out,
            metrics,
            test,
            label,
        } => {
            let (ctrl, dataset_hash) = parse_controller(&controller, &cfg)?;
            let test_data = test.as_deref().map(Dataset::read).transpose()?;
            let trace = experiment::run_closed_loop(&cfg, &ctrl)?;
            write(&out, &trace.to_csv())?;
            let (latency_mean_s, latency_max_s) = latency_stats(&trace);
            let doc = MetricsDoc {
                label: label.unwrap_or(controller),
                iae: iae(&trace, cfg.mpc.x_sp),
                mae_test: test_data.map(|d| mae(&ctrl, &d, cfg.mpc.u_bounds)).transpose()?,
                latency_mean_s,
                latency_max_s,
                provenance: Provenance::new(&cfg, dataset_hash),
            };
            println!("iae {:.6} latency mean {:.3e} s", doc.iae, doc.latency_mean_s);
            if let Some(path) = metrics {
                write_json(&path, &doc)?;
            }
        }
        Command::Report { metrics, out, csv } => {
            let docs = metrics
                .iter()
                .map(|p| {
                    let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_str::<MetricsDoc>(&text)
                        .map_err(|e| Error::parse(p.display().to_string(), e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            let hashes: std::collections::BTreeSet<&str> =
                docs.iter().filter_map(|d| d.provenance.dataset_hash.as_deref()).collect();
            if hashes.len() > 1 {
                return Err(Error::Validation(format!(
                    "metrics come from models trained on {} different datasets",
                    hashes.len()
                )));
            }
            write_json(
                &out,
                &json!({
                    "dataset_hash": hashes.iter().next(),
                    "models": docs,
                }),
            )?;
            if let Some(path) = csv {
                let mut s = String::from("label,iae,mae_test,latency_mean_s,latency_max_s\n");
                for d in &docs {
                    s += &format!(
                        "{},{},{},{},{}\n",
                        d.label,
                        d.iae,
                        opt_num(d.mae_test),
                        d.latency_mean_s,
                        d.latency_max_s
                    );
                }
                write(&path, &s)?;
            }
            for d in &docs {
                println!("{:<24} iae {:.6}  mae_test {}", d.label, d.iae, opt_num(d.mae_test));
            }
        }
    }
    Ok(())
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn parse_controller(spec: &str, cfg: &RunConfig) -> Result<(Controller, Option<String>)> {
    if spec == "mpc" {
        return Ok((Controller::Mpc(cfg.mpc_spec()), None));
    }
    if let Some(path) = spec.strip_prefix("model:") {
        let (m, prov) = read_model(Path::new(path))?;
        let hash = prov
            .and_then(|p| p.get("dataset_hash").and_then(Value::as_str).map(str::to_string));
        return Ok((Controller::Model(m), hash));
    }
    if let Some(v) = spec.strip_prefix("const:") {
        let u = v
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad constant controller {v:?}: {e}")))?;
        return Ok((Controller::Constant(u), None));
    }
    Err(Error::Config(format!(
        "controller must be mpc, model:<path> or const:<value>, got {spec:?}"
    )))
}
