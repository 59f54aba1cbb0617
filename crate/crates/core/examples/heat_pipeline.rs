//! End-to-end run on the heat benchmark with a reduced optimization budget:
//! optimize the nominal, identify a 20-state model, design the LQG and
//! evaluate it by Monte Carlo. Outputs go to `out/example/`.
//!
//! ```text
//! cargo run --release --example heat_pipeline -- [iterations] [ensemble] [runs]
//! ```
//!
//! The defaults (8 iterations, 10 members, 200 runs) finish in well under a
//! minute and do not reach the temperature band; the `seplqg pipeline`
//! command runs the full budget.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use seplqg::pipeline::{self, PipelineConfig};

fn arg(i: usize, default: usize) -> usize {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

fn main() -> seplqg::Result<()> {
    let mut cfg = PipelineConfig::default();
    cfg.optimize.max_iters = arg(1, 8);
    cfg.optimize.ensemble_size = arg(2, 10);
    cfg.evaluate.n_runs = arg(3, 200);
    let out = Path::new("out/example");
    std::fs::create_dir_all(out)?;

    let plant = cfg.plant()?;
    let clock = Instant::now();
    let nominal = pipeline::optimize(&cfg, &plant)?;
    println!("optimize ({:.0} s): {}", clock.elapsed().as_secs_f64(), pipeline::check_nominal(&cfg, &nominal));
    pipeline::write_fig2_csv(out.join("fig2_nominal.csv"), &plant, &nominal)?;

    let identified = pipeline::identify(&cfg, &plant, &nominal)?;
    let design = Arc::new(pipeline::design(&cfg, identified.rom.clone())?);
    println!("identify: {}", pipeline::check_rom(&cfg, &identified, Some(&design)));

    let report = pipeline::evaluate(&cfg, &plant, &nominal, &design)?;
    println!("evaluate: {}", pipeline::check_closed_loop(&cfg, &report));
    pipeline::write_fig3_csv(out.join("fig3_errors.csv"), &plant, &report)?;
    println!("wrote {}", out.display());
    Ok(())
}
