//! The dyadic shell model's two regimes side by side: with dissipation the
//! energy decays monotonically; without it the adaptive integrator rides
//! the cascade until the blow-up proxy crosses the configured threshold.

use cascade_lab::shell::{integrate, IntegrateOptions, ShellParams, ShellState, StopReason};

fn run(label: &str, params: ShellParams, amplitude: f64, opts: IntegrateOptions) {
    let mut state = ShellState::zero(params.clone());
    state.set_amplitude(params.n_min, amplitude);
    let e0 = state.energy();
    let run = integrate(&state, &opts);

    println!("{label}:");
    println!("  stop            {:?}", run.stop);
    println!("  final time      {:.6}", run.final_time());
    println!("  energy          {:.6e} -> {:.6e}", e0, run.energies.last().unwrap());
    println!("  proxy           {:.6e} -> {:.6e}", run.proxies[0], run.proxies.last().unwrap());
    println!("  monotone norm   {}", run.monotone_norm);
    println!(
        "  steps           {} accepted, {} rejected",
        run.steps_accepted, run.steps_rejected
    );
    if matches!(run.stop, StopReason::BlowUpThreshold { .. } | StopReason::StepUnderflow { .. }) {
        println!("  top shell max   {:.3e}", run.top_shell_max);
    }
    println!();
}

fn main() {
    let dissipative = ShellParams {
        n_min: 0,
        n_top: 5,
        lambda: 2.0,
        diss_exp: 1.0,
        nu_d: 1.0,
        nonlinear: true,
    };
    run(
        "dissipative branch (nu_d = 1)",
        dissipative,
        0.1,
        IntegrateOptions { t_end: 2.0, ..IntegrateOptions::default() },
    );

    let inviscid = ShellParams {
        n_min: 0,
        n_top: 29,
        lambda: 2.0,
        diss_exp: 0.0,
        nu_d: 0.0,
        nonlinear: true,
    };
    run(
        "inviscid branch (nu_d = 0)",
        inviscid,
        1.0,
        IntegrateOptions {
            t_end: 10.0,
            blow_up_threshold: Some(1e6),
            ..IntegrateOptions::default()
        },
    );
}
