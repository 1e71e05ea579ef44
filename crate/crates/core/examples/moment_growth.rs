//! Moment bounds of the frozen state process over long horizons.
//!
//! Windowed averages of `E|X_t|^p` should plateau, and `E sup_{s≤t} |X_s|⁴`
//! should grow no faster than a small power of `t`.
//!
//! ```text
//! cargo run --release --example moment_growth -- [T] [replicas]
//! ```

use statflow::diagnostics::{moment_tracker, MomentOptions};
use statflow::{make_tanh_model, Vector};

fn main() {
    let mut args = std::env::args().skip(1);
    let t_end: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000.0);
    let n_replicas: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(100);

    let model = make_tanh_model(1.0, 0.5, 0.5, 0.1, 1).unwrap();
    let opts = MomentOptions {
        t_end,
        n_replicas,
        ..Default::default()
    };
    let r = moment_tracker(&model, &Vector::from_element(1, 0.3), &opts).unwrap();
    for (i, p) in r.orders.iter().enumerate() {
        println!(
            "E|X|^{p}: midpoint {:.4}  terminal {:.4}  ratio {:.3}",
            r.midpoint[i], r.terminal[i], r.ratio[i]
        );
    }
    for (t, v) in r.sup4_times.iter().zip(&r.sup4_values) {
        println!("E sup |X|^4 up to t = {t:>6}: {v:.3}");
    }
    println!(
        "power-law exponent {:.3} (R^2 {:.3}), plateau: {}",
        r.sup4_exponent.unwrap_or(f64::NAN),
        r.sup4_r_squared.unwrap_or(f64::NAN),
        r.plateaus()
    );
}
