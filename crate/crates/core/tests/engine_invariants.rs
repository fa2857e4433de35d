use dupire_aad_core::{
    black_scholes_call, estimate, greeks, price, Payoff, RngKey, Scheme, SimConfig, SmileParams, VolSurface,
};

fn smile() -> VolSurface {
    VolSurface::synthetic(&SmileParams {
        n_spots: 12,
        n_times: 8,
        maturity: 1.0,
        ..SmileParams::default()
    })
    .unwrap()
}

fn config(n_paths: usize, n_steps: usize) -> SimConfig {
    SimConfig {
        maturity: 1.0,
        n_steps,
        n_paths,
        batch_size: 1024,
        key: RngKey::new(99, 0),
        ..SimConfig::default()
    }
}

#[test]
fn spot_is_a_martingale() {
    for scheme in [Scheme::Euler, Scheme::LogEuler] {
        let cfg = SimConfig {
            scheme,
            ..config(100_000, 24)
        };
        let est = estimate(&cfg, &smile(), |x| x).unwrap();
        let z = (est.mean - cfg.s0) / est.std_error;
        assert!(z.abs() < 4.0, "{scheme:?}: mean {} se {}", est.mean, est.std_error);
    }
}

#[test]
fn put_call_parity_on_common_paths() {
    let cfg = config(20_000, 16);
    let s = smile();
    for k in [80.0, 100.0, 125.0] {
        let c = price(&cfg, &s, &Payoff::call(k)).unwrap().mean;
        let p = price(&cfg, &s, &Payoff::put(k)).unwrap().mean;
        let fwd = estimate(&cfg, &s, |x| x - k).unwrap().mean;
        assert!((c - p - fwd).abs() <= 1e-9, "K = {k}: {c} - {p} vs {fwd}");
    }
}

#[test]
fn euler_and_log_euler_agree_on_fine_grid() {
    let s = smile();
    let e = price(&config(50_000, 156), &s, &Payoff::call(100.0)).unwrap();
    let cfg = SimConfig {
        scheme: Scheme::LogEuler,
        ..config(50_000, 156)
    };
    let l = price(&cfg, &s, &Payoff::call(100.0)).unwrap();
    // same draws, so the schemes differ by discretisation error only
    assert!((e.mean - l.mean).abs() < 0.5 * e.std_error, "{} vs {}", e.mean, l.mean);
}

#[test]
fn call_prices_are_decreasing_and_convex_in_strike() {
    let cfg = config(20_000, 16);
    let s = smile();
    let strikes: Vec<f64> = (0..15).map(|k| 70.0 + 5.0 * k as f64).collect();
    let c: Vec<f64> = strikes
        .iter()
        .map(|&k| price(&cfg, &s, &Payoff::call(k)).unwrap().mean)
        .collect();
    for w in c.windows(3) {
        assert!(w[1] <= w[0] && w[2] <= w[1]);
        assert!(w[0] - 2.0 * w[1] + w[2] >= -1e-12);
    }
}

#[test]
fn flat_log_euler_matches_black_scholes() {
    let s = VolSurface::flat(vec![50.0, 200.0], vec![0.0, 1.0], 0.2).unwrap();
    let cfg = SimConfig {
        scheme: Scheme::LogEuler,
        ..config(200_000, 4)
    };
    let est = price(&cfg, &s, &Payoff::call(100.0)).unwrap();
    let bs = black_scholes_call(100.0, 100.0, 0.2, 1.0).unwrap();
    assert!((bs - 7.965_567_455_405_8).abs() < 1e-10);
    assert!((est.mean - bs).abs() < 4.0 * est.std_error, "{} vs {bs}", est.mean);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let s = smile();
    let cfg = SimConfig {
        batch_size: 500,
        ..config(6000, 12)
    };
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| greeks(&cfg, &s, &Payoff::call(105.0)).unwrap())
    };
    let base = run(1);
    for threads in [4, 16] {
        let r = run(threads);
        assert_eq!(r.price.mean.to_bits(), base.price.mean.to_bits());
        assert_eq!(r.delta.to_bits(), base.delta.to_bits());
        assert!(r
            .vega_grid
            .iter()
            .zip(base.vega_grid.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(r
            .vega_se_grid
            .iter()
            .zip(base.vega_se_grid.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
