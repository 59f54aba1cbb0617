use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use seplqg::harness;
use seplqg::lqg::LqgDesign;
use seplqg::pipeline::{self, Check, PipelineConfig};
use seplqg::sysid::LtvRom;
use seplqg::trajopt::NominalTrajectory;

#[derive(Parser)]
#[command(name = "seplqg", version, about = "Separation-based output feedback for the nonlinear heat benchmark")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Pipeline configuration (JSON); defaults reproduce the benchmark.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the optimizer and Monte Carlo seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Overrides the number of Monte Carlo runs.
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Nominal trajectory to read (default: <out>/nominal.json).
    #[arg(long, global = true)]
    nominal: Option<PathBuf>,
    /// Identified model to read (default: <out>/rom.json).
    #[arg(long, global = true)]
    rom: Option<PathBuf>,
    /// Controller design to read (default: <out>/lqg.json).
    #[arg(long, global = true)]
    design: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Belief-space trajectory optimization.
    Optimize,
    /// Impulse experiments and time-varying ERA.
    Identify,
    /// Time-varying LQG gains on the identified model.
    Design,
    /// Monte Carlo closed-loop versus open-loop evaluation.
    Evaluate,
    /// First-order cost-variation check.
    Theorem1,
    /// All stages plus the complexity report.
    Pipeline,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(checks) => {
            for c in &checks {
                println!("{c}");
            }
            if checks.iter().all(|c| c.passed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn input(explicit: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(name))
}

fn run(cli: &Cli) -> seplqg::Result<Vec<Check>> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::from_json_file(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.optimize.seed = seed;
        cfg.evaluate.seed = seed;
    }
    if let Some(runs) = cli.runs {
        cfg.evaluate.n_runs = runs;
        cfg.evaluate.theorem_runs = runs;
    }
    let out = &cli.out;
    std::fs::create_dir_all(out)?;
    let plant = cfg.plant()?;
    let nominal_path = input(&cli.nominal, out, "nominal.json");
    let rom_path = input(&cli.rom, out, "rom.json");
    let design_path = input(&cli.design, out, "lqg.json");
    let load_nominal = || -> seplqg::Result<NominalTrajectory> {
        pipeline::require(&nominal_path, "seplqg optimize")?;
        NominalTrajectory::load_json(&nominal_path)
    };
    let load_design = || -> seplqg::Result<Arc<LqgDesign>> {
        pipeline::require(&design_path, "seplqg design")?;
        Ok(Arc::new(LqgDesign::load_json(&design_path)?))
    };

    match cli.command {
        Command::Optimize => {
            let nominal = optimize(&cfg, &plant, out)?;
            Ok(vec![pipeline::check_nominal(&cfg, &nominal)])
        }
        Command::Identify => {
            let identified = identify(&cfg, &plant, &load_nominal()?, out)?;
            Ok(vec![pipeline::check_rom(&cfg, &identified, None)])
        }
        Command::Design => {
            pipeline::require(&rom_path, "seplqg identify")?;
            let design = design(&cfg, LtvRom::load_json(&rom_path)?, out)?;
            Ok(vec![pipeline::check_design(&cfg, &design)])
        }
        Command::Evaluate => {
            let report = evaluate(&cfg, &plant, &load_nominal()?, &load_design()?, out)?;
            Ok(vec![pipeline::check_closed_loop(&cfg, &report)])
        }
        Command::Theorem1 => {
            let result = pipeline::theorem1(&cfg, &plant, &load_nominal()?, &load_design()?)?;
            pipeline::write_json(out.join("theorem1.json"), &result)?;
            Ok(vec![pipeline::check_theorem1(&cfg, &result)])
        }
        Command::Pipeline => {
            let nominal = optimize(&cfg, &plant, out)?;
            let identified = identify(&cfg, &plant, &nominal, out)?;
            let design = Arc::new(design(&cfg, identified.rom.clone(), out)?);
            let mut report = evaluate(&cfg, &plant, &nominal, &design, out)?;
            let result = pipeline::theorem1(&cfg, &plant, &nominal, &design)?;
            pipeline::write_json(out.join("theorem1.json"), &result)?;
            report.delta_j_samples = result.samples.clone();
            report.save_json(out.join("report.json"))?;
            let complexity = harness::complexity_report(plant.config().n_grid, identified.rom.n_r)?;
            std::fs::write(out.join("complexity.txt"), complexity.to_string())?;
            let checks = vec![
                pipeline::check_nominal(&cfg, &nominal),
                pipeline::check_rom(&cfg, &identified, Some(&design)),
                pipeline::check_closed_loop(&cfg, &report),
                pipeline::check_theorem1(&cfg, &result),
                pipeline::check_complexity(&cfg, &complexity),
            ];
            pipeline::write_json(out.join("acceptance.json"), &checks)?;
            Ok(checks)
        }
    }
}

fn optimize(cfg: &PipelineConfig, plant: &seplqg::plant::HeatPlant, out: &Path) -> seplqg::Result<NominalTrajectory> {
    let nominal = pipeline::optimize(cfg, plant)?;
    nominal.save_json(out.join("nominal.json"))?;
    pipeline::write_nominal_csv(out.join("nominal.csv"), plant, &nominal)?;
    pipeline::write_fig2_csv(out.join("fig2_nominal.csv"), plant, &nominal)?;
    Ok(nominal)
}

fn identify(
    cfg: &PipelineConfig,
    plant: &seplqg::plant::HeatPlant,
    nominal: &NominalTrajectory,
    out: &Path,
) -> seplqg::Result<pipeline::Identified> {
    let identified = pipeline::identify(cfg, plant, nominal)?;
    identified.rom.save_json(out.join("rom.json"))?;
    pipeline::write_singular_values_csv(out.join("singular_values.csv"), &identified.rom)?;
    Ok(identified)
}

fn design(cfg: &PipelineConfig, rom: LtvRom, out: &Path) -> seplqg::Result<LqgDesign> {
    let design = pipeline::design(cfg, rom)?;
    design.save_json(out.join("lqg.json"))?;
    design.write_diagnostics_csv(out.join("lqg_diagnostics.csv"))?;
    Ok(design)
}

fn evaluate(
    cfg: &PipelineConfig,
    plant: &seplqg::plant::HeatPlant,
    nominal: &NominalTrajectory,
    design: &Arc<LqgDesign>,
    out: &Path,
) -> seplqg::Result<harness::MonteCarloReport> {
    let report = pipeline::evaluate(cfg, plant, nominal, design)?;
    report.save_json(out.join("report.json"))?;
    pipeline::write_fig3_csv(out.join("fig3_errors.csv"), plant, &report)?;
    Ok(report)
}
