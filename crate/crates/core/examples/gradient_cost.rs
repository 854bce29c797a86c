//! Times one residual-loss gradient on the default network.

use std::time::Instant;

use pinn_llc::network::{init_params, MlpArchitecture};
use pinn_llc::problem::{default_heat_problem, pinn_loss_and_grad, sample_inputs};

fn main() {
    let problem = default_heat_problem();
    let arch = MlpArchitecture::default_heat();
    let w = init_params(&arch, 0);
    for n in [8, 32, 256] {
        let pts = sample_inputs(&problem, n, 1);
        let reps = 2000 / n;
        let start = Instant::now();
        for _ in 0..reps {
            pinn_loss_and_grad(&problem, &arch, w.as_slice(), &pts.points).unwrap();
        }
        let per = start.elapsed().as_secs_f64() / reps as f64;
        println!("{n:>4} points: {:.3} ms per gradient", per * 1e3);
    }
}
