//! Diffuse domain solver CLI.
//!
//! Subcommands: `run` (single ε), `sweep` (ε list with rate fits),
//! `verify` (lemma property battery), `oracle` (sharp-interface reference
//! solve with CSV export).

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dd_core::config::{load_config, LoadedConfig};
use dd_core::harness::{run_single, run_sweep, verify_lemmas, ConvergenceReport, Coupling};
use serde_json::json;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dd", about = "Diffuse domain approximation of bulk/surface elliptic PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a single run (the first ε of the list) and write report files.
    Run {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the full ε sweep and fit convergence rates.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the profile-assumption and δ_ε-lemma property battery.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Solve the sharp-interface problem and export radial profiles.
    Oracle {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn with_pool<T>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T>
where
    T: Send,
{
    match threads {
        None | Some(0) => Ok(f()),
        Some(n) => Ok(rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building thread pool")?
            .install(f)),
    }
}

fn load(
    config: &PathBuf,
    out: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<(LoadedConfig, PathBuf)> {
    let mut lc = load_config(config)?;
    if let Some(s) = seed {
        lc.case.seed = s;
    }
    let out_dir = out.unwrap_or_else(|| PathBuf::from(&lc.out_dir));
    Ok((lc, out_dir))
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => {
            let (lc, out_dir) = load(&config, out, seed)?;
            let threads = threads.or(lc.threads);
            let eps = lc.eps_list[0];
            let h = lc.coupling_rule.h_for(eps);
            let res = with_pool(threads, || run_single(&lc.case, eps, h))??;
            let report = ConvergenceReport {
                rows: vec![res.row.clone()],
                slopes: Default::default(),
                flags: Default::default(),
            };
            let files = report.write_reports(&out_dir, lc.echo.clone())?;
            println!(
                "run eps={eps} h={h}: dofs={} iters={} residual={:.3e}",
                res.row.dofs, res.stats.iterations, res.stats.rel_residual
            );
            for (k, v) in &res.row.norms.values {
                println!("  {k} = {v:.6e}");
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Sweep {
            config,
            out,
            threads,
            seed,
        } => {
            let (lc, out_dir) = load(&config, out, seed)?;
            let threads = threads.or(lc.threads);
            if lc.eps_list.len() < 3 {
                bail!("sweep needs at least 3 epsilon values");
            }
            let report = with_pool(threads, || {
                run_sweep(&lc.case, &lc.eps_list, lc.coupling_rule)
            })??;
            let files = report.write_reports(&out_dir, lc.echo.clone())?;
            println!("{}", report.to_csv());
            for (k, fit) in &report.slopes {
                println!(
                    "slope {k}: {:.3} (fit residual {:.2e})",
                    fit.slope, fit.residual
                );
            }
            for (k, v) in &report.flags {
                println!("flag {k}: {v}");
            }
            for f in files {
                println!("wrote {}", f.display());
            }
            Ok(())
        }
        Command::Verify {
            config,
            out,
            threads,
            seed,
        } => {
            let (lc, out_dir) = load(&config, out, seed)?;
            let threads = threads.or(lc.threads);
            let rho = match lc.coupling_rule {
                Coupling::Rho(r) => r,
                Coupling::FixedH(_) => 4.0,
            };
            let props = with_pool(threads, || {
                verify_lemmas(&lc.case.geom, &lc.eps_list, rho, &lc.case.quad)
            })??;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("verify.json");
            std::fs::write(
                &path,
                serde_json::to_string_pretty(&json!({
                    "config": lc.echo,
                    "properties": props,
                }))?,
            )?;
            let mut all_ok = true;
            for p in &props {
                println!(
                    "{}: {} ({})",
                    if p.passed { "PASS" } else { "FAIL" },
                    p.name,
                    p.detail
                );
                all_ok &= p.passed;
            }
            println!("wrote {}", path.display());
            println!(
                "verify: {}",
                if all_ok {
                    "all properties passed"
                } else {
                    "failures recorded in the report"
                }
            );
            Ok(())
        }
        Command::Oracle {
            config,
            out,
            threads,
            seed,
        } => {
            let (lc, out_dir) = load(&config, out, seed)?;
            let threads = threads.or(lc.threads);
            let sharp = with_pool(threads, || lc.case.oracle_solution())??;
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join("oracle.csv");
            std::fs::write(&path, sharp.tabulate_csv())?;
            println!("sharp solve: u(0) = {}", sharp.u_center());
            for m in &sharp.modes {
                println!(
                    "mode {}: u(R) = {}, u'(R) = {}, v = {}",
                    m.k,
                    m.u.last().unwrap(),
                    m.flux,
                    m.v
                );
            }
            println!("wrote {}", path.display());
            Ok(())
        }
    }
}
