//! The averaging effect of transport noise, seen in the deterministic
//! limit equation: the corrector adds `(3 nu / 5) Laplacian` to the drift,
//! so raising the noise viscosity strictly accelerates energy decay while
//! the energy balance stays exact.

use cascade_lab::spde::{SpdeParams, SpdeSystem};
use cascade_lab::spectral::random_divergence_free;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let u0 = random_divergence_free(3, 2, &mut rng).unwrap();
    println!("initial field: cutoff 2, ||u0|| = {:.6}\n", u0.l2_norm());
    println!(
        "{:>6} {:>14} {:>16} {:>14}",
        "nu", "||u(T)||", "dissipated", "energy defect"
    );
    for nu in [0.0, 0.5, 1.0, 2.0, 4.0] {
        let params = SpdeParams {
            nu,
            dissipation_scale: 0.1,
            ..SpdeParams::new(1.0, nu, 2, 1e-4, 0.2).unwrap()
        };
        let system = SpdeSystem::new(params, None, None, None).unwrap();
        let run = system.run_deterministic_limit(&u0, 100).unwrap();
        println!(
            "{:>6.1} {:>14.6e} {:>16.6e} {:>14.3e}",
            nu,
            run.l2_norms.last().unwrap(),
            run.dissipation_integrals.last().unwrap(),
            run.energy_defect()
        );
    }
    println!("\nhigher noise viscosity drains the same initial energy faster;");
    println!("the defect column shows |  ||u(T)||^2 + I(T) - ||u0||^2  |");
}
