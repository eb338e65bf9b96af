//! Built-in acceptance suite. Each criterion is a list of named checks; a criterion passes when
//! all of its checks pass.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use isodroop_core::controller::{closed_loop_blocks, default_controllers, printed_controllers, OMEGA_60HZ};
use isodroop_core::clock::wrap_pi;
use isodroop_core::net::{InverterElectrical, LoadModel, MicrogridConfig};
use isodroop_core::presets;
use isodroop_core::smallsignal::{
    analyze, apply_sweep_value, linearize, linearize_with_step, operating_point, SweepAxis, FD_RELATIVE_STEP,
};
use isodroop_core::steady_state::{
    droop_equilibrium, phase_difference_approx, phase_difference_exact, solve_brute_force, solve_closed_form,
};
use isodroop_core::timedomain::{
    inverter_pairs, measure_metrics, run, settling_time, thd, zero_crossing_frequency, Event, EventKind,
    InitialCondition, Scenario, SimulationTrace, Simulator,
};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::scenarios::builtin;

pub const CRITERION_COUNT: usize = 10;

/// Checks that cannot hold for the model as built; see the README. The suite still runs and
/// reports them.
pub const KNOWN_UNATTAINABLE: &[(usize, &str)] =
    &[(3, "small-angle approximation within 5%"), (7, "frequency within 1e-4 throughout")];

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriterionResult {
    pub id: usize,
    pub title: &'static str,
    pub checks: Vec<Check>,
    pub elapsed: Duration,
    /// Set when the criterion could not be evaluated at all.
    pub error: Option<String>,
}

impl CriterionResult {
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.checks.iter().all(|c| c.passed)
    }

    /// True when every failing check is listed in [`KNOWN_UNATTAINABLE`].
    pub fn only_known_failures(&self) -> bool {
        self.error.is_none()
            && self.checks.iter().all(|c| c.passed || KNOWN_UNATTAINABLE.iter().any(|(id, n)| *id == self.id && c.name == *n))
    }

    pub fn summary_line(&self) -> String {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        let mut line = format!("[{status}] {:>2}. {} ({:.1} s)", self.id, self.title, self.elapsed.as_secs_f64());
        if let Some(e) = &self.error {
            line.push_str(&format!(": error: {e}"));
        } else {
            let failed: Vec<String> = self.checks.iter().filter(|c| !c.passed).map(|c| format!("{}: {}", c.name, c.detail)).collect();
            if !failed.is_empty() {
                line.push_str(&format!(": {}", failed.join("; ")));
            }
        }
        line
    }
}

type Outcome = Result<Vec<Check>, String>;

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check { name: name.to_string(), passed, detail }
}

fn e2s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

const TITLES: [&str; CRITERION_COUNT] = [
    "frequency-domain identity G(jw0) = 1, Z(jw0) = R_v",
    "closed form equals nodal oracle",
    "phase-difference formula and small-angle approximation",
    "resistive load carries no reactive power",
    "two-inverter sharing scenario",
    "mismatched-line sweep",
    "plug-and-play",
    "VP-D versus full droop settling",
    "small-signal stability",
    "numerical hygiene",
];

pub fn run_criterion(id: usize) -> CriterionResult {
    assert!((1..=CRITERION_COUNT).contains(&id), "criterion {id} does not exist");
    let start = Instant::now();
    let outcome = match id {
        1 => frequency_domain_identity(),
        2 => closed_form_oracle(),
        3 => phase_difference(),
        4 => resistive_reactive_power(),
        5 => sharing_scenario(),
        6 => mismatched_lines(),
        7 => plug_and_play(),
        8 => droop_comparison(),
        9 => small_signal(),
        _ => numerical_hygiene(),
    };
    let (checks, error) = match outcome {
        Ok(c) => (c, None),
        Err(e) => (Vec::new(), Some(e)),
    };
    CriterionResult { id, title: TITLES[id - 1], checks, elapsed: start.elapsed(), error }
}

/// Runs the selected criteria, in parallel when asked, and returns them in id order.
pub fn run_suite(ids: &[usize], parallel: bool) -> Vec<CriterionResult> {
    if parallel {
        ids.par_iter().map(|id| run_criterion(*id)).collect()
    } else {
        ids.iter().map(|id| run_criterion(*id)).collect()
    }
}

fn period(cfg: &MicrogridConfig) -> f64 {
    TAU / cfg.nominal_frequency
}

/// Copy of `trace` up to and including `t_end`.
fn truncate(trace: &SimulationTrace, t_end: f64) -> SimulationTrace {
    let m = trace.time.partition_point(|t| *t <= t_end + 1e-9);
    let mut t = trace.clone();
    t.time.truncate(m);
    t.pcc_voltage.truncate(m);
    for v in t
        .capacitor_voltage
        .iter_mut()
        .chain(t.branch_current.iter_mut())
        .chain(t.inductor_current.iter_mut())
        .chain(t.magnitude.iter_mut())
        .chain(t.active_power.iter_mut())
        .chain(t.reactive_power.iter_mut())
        .chain(t.circulating_current.iter_mut())
    {
        v.truncate(m);
    }
    t
}

fn frequency_domain_identity() -> Outcome {
    let plant = InverterElectrical::default();
    let s = Complex64::new(0.0, OMEGA_60HZ);
    let mut checks = Vec::new();
    for (name, ctrl) in [("shipped controllers", default_controllers()), ("printed controllers", printed_controllers())] {
        let b = closed_loop_blocks(&plant, &ctrl, s).map_err(e2s)?;
        let g = (b.g - 1.0).norm();
        let z = (b.z - ctrl.virtual_resistance).norm();
        checks.push(check(name, g < 1e-6 && z < 1e-6, format!("|G-1| = {g:.2e}, |Z-R_v| = {z:.2e} ohm")));
    }
    Ok(checks)
}

const SIZES: [usize; 5] = [1, 2, 3, 5, 8];

/// Random resistive-branch network with a resistive or R-L load and source magnitudes near E*.
fn random_network(rng: &mut ChaCha8Rng, n: usize, inductive_load: bool) -> (MicrogridConfig, Vec<f64>) {
    let r = rng.gen_range(2.0..60.0);
    let load = if inductive_load {
        LoadModel::SeriesRl { resistance: r, inductance: rng.gen_range(1e-3..0.05) }
    } else {
        LoadModel::Resistive { resistance: r }
    };
    let mut cfg = presets::microgrid(n, load);
    for inv in cfg.inverters.iter_mut() {
        inv.branch_resistance = rng.gen_range(0.02..1.0);
        inv.virtual_resistance = rng.gen_range(0.0..1.0);
    }
    let e = (0..n).map(|_| rng.gen_range(150.0..190.0)).collect();
    (cfg, e)
}

fn closed_form_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0_f64;
    for c in 0..100 {
        let (cfg, e) = random_network(&mut rng, SIZES[c % SIZES.len()], c % 2 == 1);
        let a = solve_closed_form(&e, &cfg).map_err(e2s)?;
        let b = solve_brute_force(&e, &cfg).map_err(e2s)?;
        let rel = |x: Complex64, y: Complex64| (x - y).norm() / y.norm();
        for k in 0..a.len() {
            worst = worst.max(rel(a.current(k), b.current(k))).max(rel(a.voltage(k), b.voltage(k)));
            let sa = Complex64::new(a.active_power[k], a.reactive_power[k]);
            let sb = Complex64::new(b.active_power[k], b.reactive_power[k]);
            worst = worst.max(rel(sa, sb));
        }
        worst = worst.max(rel(a.pcc_voltage, b.pcc_voltage));
    }
    Ok(vec![check("100 random networks", worst < 1e-10, format!("max relative error {worst:.2e}"))])
}

fn phase_difference() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_exact = 0.0_f64;
    for c in 0..100 {
        let (cfg, e) = random_network(&mut rng, SIZES[c % SIZES.len()], true);
        let s = solve_brute_force(&e, &cfg).map_err(e2s)?;
        for k in 0..s.len() {
            for j in 0..s.len() {
                let d = phase_difference_exact(&s, k, j).map_err(e2s)?;
                worst_exact = worst_exact.max(wrap_pi(d - (s.current_phase[k] - s.current_phase[j])).abs());
            }
        }
    }

    // Small deviations on strongly coupled complex loads, drawn over the whole stated region.
    let mut worst_approx = 0.0_f64;
    let mut within = 0;
    let mut drawn = 0;
    while drawn < 100 {
        let n = [2, 3, 5][drawn % 3];
        let pf: f64 = rng.gen_range(0.6..0.99);
        let zabs: f64 = rng.gen_range(5.0..40.0);
        let x = zabs * (1.0 - pf * pf).sqrt();
        let mut cfg = presets::microgrid(n, LoadModel::SeriesRl { resistance: zabs * pf, inductance: x / OMEGA_60HZ });
        for inv in cfg.inverters.iter_mut() {
            inv.branch_resistance = rng.gen_range(0.05..0.5);
            inv.virtual_resistance = rng.gen_range(0.05..0.5);
        }
        let delta: Vec<f64> = (0..n).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let approx = phase_difference_approx(&cfg, delta[0], delta[1]).map_err(e2s)?;
        if approx.coupling < 50.0 {
            continue;
        }
        drawn += 1;
        let e: Vec<f64> = delta.iter().map(|d| cfg.nominal_voltage_magnitude * (1.0 + d)).collect();
        let s = solve_closed_form(&e, &cfg).map_err(e2s)?;
        let exact = phase_difference_exact(&s, 0, 1).map_err(e2s)?;
        let rel = (approx.value - exact).abs() / exact.abs();
        worst_approx = worst_approx.max(rel);
        if rel <= 0.05 {
            within += 1;
        }
    }
    Ok(vec![
        check("exact formula matches phasors", worst_exact < 1e-9, format!("max error {worst_exact:.2e} rad")),
        check(
            "small-angle approximation within 5%",
            worst_approx <= 0.05,
            format!("max relative error {:.1}%, {within}/100 cases within 5%", 100.0 * worst_approx),
        ),
    ])
}

fn resistive_reactive_power() -> Outcome {
    let mut checks = Vec::new();
    for name in ["resistive_mismatch", "case1"] {
        let file = builtin(name).map_err(e2s)?;
        let cfg = file.config();
        if !matches!(cfg.load, LoadModel::Resistive { .. }) {
            return Err(format!("{name} does not have a resistive load"));
        }
        let trace = run(&file.scenario).map_err(e2s)?;
        let m = measure_metrics(&trace, 10.0 * period(cfg)).map_err(e2s)?;
        let worst = m
            .reactive_power
            .iter()
            .zip(&cfg.inverters)
            .map(|(q, inv)| q.abs() / inv.rated_apparent_power)
            .fold(0.0_f64, f64::max);
        checks.push(check(name, worst < 0.005, format!("max |Q|/S_rated = {:.3}%", 100.0 * worst)));
    }
    Ok(checks)
}

fn sharing_scenario() -> Outcome {
    let file = builtin("sharing").map_err(e2s)?;
    let cfg = file.config();
    let trace = run(&file.scenario).map_err(e2s)?;
    let m = measure_metrics(&trace, 10.0 * period(cfg)).map_err(e2s)?;
    let eq = droop_equilibrium(cfg).map_err(e2s)?;
    let (p, q) = (m.p_share[0], m.q_share[0]);
    let dev = m.pcc_regulation_error;
    let mut amp = 0.0_f64;
    let mut phase = 0.0_f64;
    for k in 0..2 {
        let s = &eq.solution;
        for (x, a, ph) in [
            (m.voltage_phasor[k], s.voltage_amplitude[k], s.voltage_phase[k]),
            (m.current_phasor[k], s.current_amplitude[k], s.current_phase[k]),
        ] {
            amp = amp.max((x.norm() / a - 1.0).abs());
            phase = phase.max(wrap_pi(x.arg() - ph).abs());
        }
    }
    Ok(vec![
        check("P share in [1.02, 1.12]", (1.02..=1.12).contains(&p), format!("{p:.4}")),
        check("Q share in [0.83, 0.93]", (0.83..=0.93).contains(&q), format!("{q:.4}")),
        check("PCC deviation -0.5% +/- 0.5 pp", (-0.01..=0.0).contains(&dev), format!("{:.3}%", 100.0 * dev)),
        check(
            "matches droop equilibrium",
            amp < 0.01 && phase < 0.5_f64.to_radians(),
            format!("amplitude {:.3}%, phase {:.3} deg", 100.0 * amp, phase.to_degrees()),
        ),
    ])
}

fn mismatched_lines() -> Outcome {
    let base = builtin("mismatched_lines").map_err(e2s)?.scenario.config;
    let r1 = base.inverters[0].branch_resistance;
    let ratios = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];
    let mut shares = Vec::new();
    for ratio in ratios {
        let mut cfg = base.clone();
        cfg.inverters[1].branch_resistance = ratio * r1;
        let eq = droop_equilibrium(&cfg).map_err(e2s)?;
        shares.push(eq.solution.q_share(0, 1));
    }
    let at = |r: f64| shares[ratios.iter().position(|x| *x == r).unwrap()];
    let band = ratios.iter().zip(&shares).filter(|(r, _)| **r >= 0.6).all(|(_, s)| (0.9..=1.03).contains(s));
    let monotone = shares.windows(2).all(|w| w[1] < w[0]);
    let listing = ratios.iter().zip(&shares).map(|(r, s)| format!("{r}: {s:.3}")).collect::<Vec<_>>().join(", ");
    Ok(vec![
        check("Q share in [0.9, 1.03] for r2/r1 >= 0.6", band, listing.clone()),
        check("Q share 0.868 +/- 0.05 at 0.5", (at(0.5) - 0.868).abs() <= 0.05, format!("{:.3}", at(0.5))),
        check("Q share 0.735 +/- 0.07 at 0.1", (at(0.1) - 0.735).abs() <= 0.07, format!("{:.3}", at(0.1))),
        check("Q share decreases with r2/r1", monotone, listing),
    ])
}

fn plug_and_play() -> Outcome {
    let file = builtin("plug_and_play").map_err(e2s)?;
    let sc = &file.scenario;
    let cfg = &sc.config;
    let n = cfg.len();
    let t0 = period(cfg);
    let trace = run(sc).map_err(e2s)?;

    let mut connected = match &sc.initial {
        InitialCondition::Rest { connected, .. } => connected.clone(),
        InitialCondition::Equilibrium => vec![true; n],
    };
    let mut started: Vec<Option<f64>> = match &sc.initial {
        InitialCondition::Rest { active, .. } => active.iter().map(|a| a.then_some(0.0)).collect(),
        InitialCondition::Equilibrium => vec![Some(0.0); n],
    };
    // A window is judged after each connection or load step, just before the next event.
    let mut windows = Vec::new();
    for (i, e) in sc.events.iter().enumerate() {
        match &e.kind {
            EventKind::Connect(k) => {
                connected[*k] = true;
                started[*k].get_or_insert(e.time);
            }
            EventKind::Enable(k) => {
                started[*k].get_or_insert(e.time);
            }
            EventKind::Disconnect(k) => connected[*k] = false,
            _ => {}
        }
        if matches!(e.kind, EventKind::Connect(_) | EventKind::LoadStep(_)) {
            let end = sc.events.get(i + 1).map_or(sc.duration, |next| next.time);
            windows.push((e.time, end, connected.clone()));
        }
    }

    let mut p_worst = 0.0_f64;
    let mut q_worst = f64::INFINITY;
    let mut circ_worst = 0.0_f64;
    for (from, end, conn) in &windows {
        let m = measure_metrics(&truncate(&trace, *end), 10.0 * t0).map_err(e2s)?;
        if m.window_start < *from {
            return Err(format!("the window after t = {from} s is shorter than 10 cycles"));
        }
        for (p, (j, k)) in inverter_pairs(n).iter().enumerate() {
            if !(conn[*j] && conn[*k]) {
                continue;
            }
            p_worst = p_worst.max((m.p_share[p] - 1.0).abs());
            q_worst = q_worst.min(m.q_share[p].min(1.0 / m.q_share[p]));
            let rated = 2.0 * cfg.inverters[*j].rated_apparent_power.min(cfg.inverters[*k].rated_apparent_power)
                / cfg.nominal_voltage_magnitude;
            circ_worst = circ_worst.max(m.circulating_amplitude[p] / rated);
        }
    }

    // Ten-cycle zero-crossing estimates, skipping the windows that cover a unit's start-up ramp.
    let f0 = cfg.nominal_frequency / TAU;
    let deviation = |x: &[f64], from: f64| {
        zero_crossing_frequency(&trace.time, x, 10)
            .into_iter()
            .filter(|(t, _)| *t - 10.0 * t0 >= from)
            .fold(0.0_f64, |m, (_, f)| m.max((f / f0 - 1.0).abs()))
    };
    let mut f_worst = 0.0_f64;
    let mut f_where = String::from("pcc");
    for (k, s) in started.iter().enumerate() {
        if let Some(s) = s {
            let d = deviation(&trace.capacitor_voltage[k], s + 2.0 * t0);
            if d > f_worst {
                f_worst = d;
                f_where = format!("v{}", k + 1);
            }
        }
    }
    let d = deviation(&trace.pcc_voltage, 2.0 * t0);
    if d >= f_worst {
        f_worst = d;
        f_where = "pcc".into();
    }

    Ok(vec![
        check("P ratio 1 +/- 2%", p_worst <= 0.02, format!("max |P ratio - 1| = {:.2}%", 100.0 * p_worst)),
        check("Q ratio above 0.95", q_worst > 0.95, format!("min Q ratio {q_worst:.4}")),
        check("circulating current below 5% of rated", circ_worst < 0.05, format!("max {:.2e} of rated", circ_worst)),
        check("frequency within 1e-4 throughout", f_worst <= 1e-4, format!("max relative deviation {f_worst:.2e} ({f_where})")),
    ])
}

/// Largest 90% settling time over the units after the load step of a comparison run.
fn comparison_settling(name: &str) -> Result<f64, String> {
    let file = builtin(name).map_err(e2s)?;
    let sc = &file.scenario;
    let step = sc
        .events
        .iter()
        .find(|e| matches!(e.kind, EventKind::LoadStep(_)))
        .ok_or_else(|| format!("{name} has no load step"))?
        .time;
    let trace = run(sc).map_err(e2s)?;
    let final_start = sc.duration - 12.0 * period(&sc.config);
    let mut worst = 0.0_f64;
    for k in 0..sc.config.len() {
        let t = settling_time(&trace.time, &trace.branch_current[k], step, final_start, sc.config.nominal_frequency)
            .ok_or_else(|| format!("{name}: inverter {} never settles", k + 1))?;
        worst = worst.max(t);
    }
    Ok(worst)
}

fn droop_comparison() -> Outcome {
    let vpd = comparison_settling("droop_comparison")?;
    let full = comparison_settling("full_droop")?;
    Ok(vec![
        check("VP-D settles within 0.04 s", vpd <= 0.04, format!("{vpd:.4} s")),
        check("full droop settles slower", full > vpd, format!("{full:.4} s vs {vpd:.4} s")),
    ])
}

/// Trailing one-cycle mean, which removes the double-frequency ripple of the filtered power.
fn cycle_average(time: &[f64], x: &[f64], period: f64) -> Vec<(f64, f64)> {
    let w = (period / (time[1] - time[0])).round() as usize;
    let mut sum: f64 = x[..w].iter().sum();
    let mut out = Vec::with_capacity(x.len() - w);
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

/// Decay rate of each unit's magnitude after a 1% load increase from equilibrium, compared
/// with the dominant eigenvalue of the stepped configuration.
fn decay_rates(cfg: &MicrogridConfig) -> Result<(f64, Vec<f64>), String> {
    let LoadModel::Resistive { resistance } = cfg.load else {
        return Err("the decay check needs a resistive load".into());
    };
    let step = 0.1;
    let stepped_load = LoadModel::Resistive { resistance: resistance / 1.01 };
    let mut stepped = cfg.clone();
    stepped.load = stepped_load;
    let dominant = analyze(&stepped).map_err(e2s)?.dominant_eigenvalue.re;
    let target = droop_equilibrium(&stepped).map_err(e2s)?.voltage_magnitudes;
    let mut sc = Scenario::new(cfg.clone(), step + 0.8);
    sc.initial = InitialCondition::Equilibrium;
    sc.decimation = 10;
    sc.events.push(Event { time: step, kind: EventKind::LoadStep(stepped_load) });
    let trace = run(&sc).map_err(e2s)?;
    let rates = (0..cfg.len())
        .map(|k| {
            let avg = cycle_average(&trace.time, &trace.magnitude[k], period(cfg));
            let window: Vec<(f64, f64)> = avg.into_iter().filter(|(t, _)| *t >= step + 0.1 && *t <= step + 0.6).collect();
            log_slope(&window, target[k])
        })
        .collect();
    Ok((dominant, rates))
}

fn small_signal() -> Outcome {
    let file = builtin("two_inverter_2p2").map_err(e2s)?;
    let cfg = file.config();
    let report = analyze(cfg).map_err(e2s)?;
    let mut checks =
        vec![check("2.2 : 1 network stable", report.stable, format!("spectral abscissa {:.4}", report.spectral_abscissa))];

    let angles: Vec<f64> = (-5..=5).map(f64::from).collect();
    let mut worst = f64::NEG_INFINITY;
    for a in &angles {
        let r = analyze(&apply_sweep_value(cfg, SweepAxis::ClockAngle, *a).map_err(e2s)?).map_err(e2s)?;
        worst = worst.max(r.spectral_abscissa);
    }
    checks.push(check("clock angle sweep -5..5 deg stable", worst < 0.0, format!("worst abscissa {worst:.4}")));

    let pf = [1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7];
    let mut abscissa = Vec::new();
    for p in pf {
        let r = analyze(&apply_sweep_value(cfg, SweepAxis::LoadPowerFactor, p).map_err(e2s)?).map_err(e2s)?;
        abscissa.push(r.spectral_abscissa);
    }
    let monotone = abscissa.windows(2).all(|w| w[1] > w[0]);
    let listing = pf.iter().zip(&abscissa).map(|(p, a)| format!("{p}: {a:.4}")).collect::<Vec<_>>().join(", ");
    checks.push(check("abscissa rises as power factor falls", monotone, listing));

    let (dominant, rates) = decay_rates(cfg)?;
    let worst = rates.iter().map(|r| (r - dominant).abs() / dominant.abs()).fold(0.0_f64, f64::max);
    let listing = rates.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>().join(", ");
    checks.push(check(
        "decay rate matches dominant eigenvalue within 20%",
        worst <= 0.2,
        format!("fitted {listing} vs {dominant:.3} 1/s"),
    ));
    Ok(checks)
}

/// Ratio of the RK4 terminal errors at `dt` and `dt/2` on a lossless 60 Hz LC tank with the
/// bridge idle, against the analytic solution.
fn rk4_error_ratio() -> Result<f64, String> {
    let t_end = 0.1;
    let err = |dt: f64| -> Result<f64, String> {
        let mut cfg = presets::microgrid(1, LoadModel::Resistive { resistance: 24.0 });
        let l = cfg.inverters[0].filter_inductance;
        let c = 1.0 / (OMEGA_60HZ * OMEGA_60HZ * l);
        cfg.inverters[0].filter_esr = 0.0;
        cfg.inverters[0].filter_capacitance = c;
        let mut sc = Scenario::new(cfg, t_end);
        sc.time_step = dt;
        sc.initial = InitialCondition::Rest { active: vec![false], connected: vec![false] };
        sc.rk4_substeps = Some(1);
        let mut sim = Simulator::new(&sc).map_err(e2s)?;
        sim.set_continuous_state(&[0.0, 100.0, 0.0, 0.0]).map_err(e2s)?;
        for _ in 0..(t_end / dt).round() as usize {
            sim.step().map_err(e2s)?;
        }
        let w = 1.0 / (l * c).sqrt();
        let s = sim.state();
        let t = s.time;
        let v = 100.0 * (w * t).cos();
        let il = -100.0 * c * w * (w * t).sin();
        Ok(((s.capacitor_voltage(0) - v).powi(2) + ((s.inductor_current(0) - il) / (c * w)).powi(2)).sqrt())
    };
    Ok(err(2e-4)? / err(1e-4)?)
}

fn numerical_hygiene() -> Outcome {
    let mut checks = Vec::new();
    let ratio = rk4_error_ratio()?;
    checks.push(check("RK4 error ratio in [12, 20]", (12.0..=20.0).contains(&ratio), format!("{ratio:.2}")));

    let mut worst = 0.0_f64;
    for cfg in [presets::two_inverter_2p2(), presets::sharing()] {
        let point = operating_point(&cfg).map_err(e2s)?;
        let a = linearize(&point, &cfg).map_err(e2s)?.system_matrix;
        let b = linearize_with_step(&point, &cfg, 0.5 * FD_RELATIVE_STEP).map_err(e2s)?.system_matrix;
        let floor = 1e-6 * a.amax();
        worst = a.iter().zip(b.iter()).fold(worst, |w, (x, y)| w.max((x - y).abs() / x.abs().max(floor)));
    }
    checks.push(check("linearization step halving below 1e-4", worst < 1e-4, format!("{worst:.2e}")));

    let w0 = OMEGA_60HZ;
    let dt = 1e-5;
    let periods = 6;
    let time: Vec<f64> = (0..=(periods as f64 / 60.0 / dt).round() as usize).map(|i| i as f64 * dt).collect();
    let pure: Vec<f64> = time.iter().map(|t| (w0 * t).sin()).collect();
    let third: Vec<f64> = time.iter().map(|t| (w0 * t).sin() + 0.1 * (3.0 * w0 * t).sin()).collect();
    let end = *time.last().unwrap();
    let a = thd(&time, &pure, end, periods, w0).map_err(e2s)?;
    let b = thd(&time, &third, end, periods, w0).map_err(e2s)?;
    checks.push(check(
        "THD exact on synthetic signals",
        a < 1e-9 && (b - 0.1).abs() <= 1e-6,
        format!("pure {a:.1e}, 10% third harmonic {b:.7}"),
    ));

    let mut sc = Scenario::new(presets::sharing(), 0.1);
    sc.events.push(Event { time: 0.05, kind: EventKind::LoadStep(LoadModel::Resistive { resistance: 30.0 }) });
    let x = run(&sc).map_err(e2s)?;
    let y = run(&sc).map_err(e2s)?;
    let same = x.time.len() == y.time.len()
        && (0..x.len()).all(|s| x.row(s).iter().zip(y.row(s)).all(|(p, q)| p.to_bits() == q.to_bits()));
    checks.push(check("repeated runs bit-identical", same, format!("{} samples", x.len())));
    Ok(checks)
}
