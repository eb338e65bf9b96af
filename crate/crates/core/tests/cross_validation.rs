use isodroop_core::net::LoadModel;
use isodroop_core::presets;
use isodroop_core::smallsignal;
use isodroop_core::steady_state::droop_equilibrium;
use isodroop_core::timedomain::{run, Event, EventKind, InitialCondition, Scenario};

const STEP_TIME: f64 = 0.1;

/// Trailing one-cycle mean, which removes the double-frequency ripple of the filtered power.
fn cycle_average(time: &[f64], x: &[f64], period: f64) -> Vec<(f64, f64)> {
    let dt = time[1] - time[0];
    let w = (period / dt).round() as usize;
    let mut out = Vec::new();
    let mut sum: f64 = x[..w].iter().sum();
    for i in w..x.len() {
        out.push((time[i], sum / w as f64));
        sum += x[i] - x[i - w];
    }
    out
}

/// Least-squares slope of `ln|y - target|` against time.
fn log_slope(samples: &[(f64, f64)], target: f64) -> f64 {
    let pts: Vec<(f64, f64)> = samples.iter().map(|(t, y)| (*t, (y - target).abs().ln())).collect();
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|(t, y)| (t - mt) * (y - my)).sum();
    let sxx: f64 = pts.iter().map(|(t, _)| (t - mt) * (t - mt)).sum();
    sxy / sxx
}

#[test]
fn load_step_decay_matches_the_dominant_eigenvalue() {
    let cfg = presets::two_inverter_2p2();
    let LoadModel::Resistive { resistance } = cfg.load else { unreachable!() };
    let stepped_load = LoadModel::Resistive { resistance: resistance / 1.01 };
    let mut stepped = cfg.clone();
    stepped.load = stepped_load;

    let dominant = smallsignal::analyze(&stepped).unwrap().dominant_eigenvalue;
    let target = droop_equilibrium(&stepped).unwrap().voltage_magnitudes;

    let mut scenario = Scenario::new(cfg, STEP_TIME + 0.8);
    scenario.initial = InitialCondition::Equilibrium;
    scenario.decimation = 10;
    scenario.events.push(Event { time: STEP_TIME, kind: EventKind::LoadStep(stepped_load) });
    let trace = run(&scenario).unwrap();
    let period = 1.0 / 60.0;

    for k in 0..2 {
        let avg = cycle_average(&trace.time, &trace.magnitude[k], period);
        let window: Vec<(f64, f64)> =
            avg.into_iter().filter(|(t, _)| *t >= STEP_TIME + 0.1 && *t <= STEP_TIME + 0.6).collect();
        let rate = log_slope(&window, target[k]);
        eprintln!("inverter {}: fitted {rate:.4}, dominant {:.4}", k + 1, dominant.re);
        assert!((rate - dominant.re).abs() <= 0.2 * dominant.re.abs(), "inverter {}: {rate} vs {}", k + 1, dominant.re);
    }
}
