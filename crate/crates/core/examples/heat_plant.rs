//! Simulates the heat slab under constant actuator power and prints the
//! temperature profile every ten seconds, noiseless and with one noisy run.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seplqg::plant::{simulate_nominal, HeatPlant, HeatPlantConfig, Plant};
use seplqg::rng::GaussianSampler;

fn main() -> seplqg::Result<()> {
    let plant = HeatPlant::new(HeatPlantConfig::default())?;
    let cfg = plant.config();
    let spec = plant.spec();
    println!(
        "{} nodes, dx = {:.4}, k0 = {:.3e}, max diffusion number {:.3}",
        cfg.n_grid,
        cfg.dx(),
        cfg.k0(),
        cfg.max_diffusion_number()
    );
    println!("actuators at nodes {:?}, sensors at {:?}", plant.actuator_nodes(), plant.sensor_nodes());

    let controls = vec![DVector::from_element(spec.n_u, 30.0); spec.horizon];
    let run = simulate_nominal(&plant, &plant.initial_state(), &controls)?;

    let w = GaussianSampler::new(&spec.process_noise);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut noisy = plant.initial_state();
    let mut noisy_states = vec![noisy.clone()];
    for (k, u) in controls.iter().enumerate() {
        noisy = plant.step(k, &noisy, u, &w.sample(&mut rng))?;
        noisy_states.push(noisy.clone());
    }

    let probes = [0.0, 0.2, 0.4, 0.6, 0.8, 0.9];
    print!("{:>6}", "t [s]");
    for p in probes {
        print!("  x={p:.1}L");
    }
    println!("   (noisy run at 0.4L)");
    for k in (0..=spec.horizon).step_by(40) {
        print!("{:>6.1}", cfg.time(k));
        for p in probes {
            print!("  {:>7.2}", run.states[k][cfg.node(p)]);
        }
        println!("   {:.2}", noisy_states[k][cfg.node(0.4)]);
    }
    println!("heat content at t = {} s: {:.2}", cfg.time(spec.horizon), plant.heat_content(&run.states[spec.horizon]));
    Ok(())
}
