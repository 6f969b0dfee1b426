//! Prints the forward-process schedule and the per-step quantities the
//! denoiser is trained and sampled with.

use diffrec::schedule::NoiseSchedule;

fn main() -> diffrec::Result<()> {
    let sched = NoiseSchedule::new(1e-4, 5e-4, 5e-3, 5)?;
    println!("{:>2} {:>14} {:>14} {:>14} {:>14} {:>12} {:>12}", "t", "1-abar", "beta", "snr", "weight", "c_xt", "c_x0");
    for t in 1..=sched.steps() {
        // t = 1 has no posterior step; the prediction is returned as is
        let (c_xt, c_x0) = match t {
            1 => ("-".to_string(), "-".to_string()),
            _ => {
                let (a, b) = sched.posterior_coefficients(t)?;
                (format!("{a:.8}"), format!("{b:.8}"))
            }
        };
        println!(
            "{t:>2} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {c_xt:>12} {c_x0:>12}",
            sched.one_minus_abar(t),
            sched.beta(t),
            sched.snr(t),
            sched.loss_weight(t)?,
        );
    }

    // a larger scale makes the corruption visible
    let loud = NoiseSchedule::new(0.5, 0.1, 0.9, 4)?;
    println!("\nscale 0.5: abar = {:?}", (1..=4).map(|t| loud.abar(t)).collect::<Vec<_>>());
    Ok(())
}
