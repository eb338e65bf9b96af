//! Sinusoidal steady state of the star network: closed-form phasors, an independent nodal
//! solve, phase-difference formulas and the droop fixed point.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_complex::Complex64;
use num_traits::Zero;
#[allow(unused_imports)]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::linalg::solve_complex;
use crate::net::{build_admittance, load_impedance_at, AdmittanceModel, MicrogridConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PhasorSolution {
    pub current_amplitude: Vec<f64>,
    pub current_phase: Vec<f64>,
    pub voltage_amplitude: Vec<f64>,
    pub voltage_phase: Vec<f64>,
    pub active_power: Vec<f64>,
    pub reactive_power: Vec<f64>,
    pub pcc_voltage: Complex64,
    pub intermediate: AdmittanceModel,
    pub beta: Vec<Complex64>,
    pub gamma: Vec<f64>,
    /// (E_k - E*)/E*.
    pub delta: Vec<f64>,
}

impl PhasorSolution {
    pub fn len(&self) -> usize {
        self.current_amplitude.len()
    }

    pub fn is_empty(&self) -> bool {
        self.current_amplitude.is_empty()
    }

    pub fn current(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.current_amplitude[k], self.current_phase[k])
    }

    pub fn voltage(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.voltage_amplitude[k], self.voltage_phase[k])
    }

    pub fn p_share(&self, k: usize, j: usize) -> f64 {
        self.active_power[k] / self.active_power[j]
    }

    pub fn q_share(&self, k: usize, j: usize) -> f64 {
        self.reactive_power[k] / self.reactive_power[j]
    }

    /// Complex power drawn by the load, `V I* / 2`.
    pub fn load_power(&self) -> Complex64 {
        let i: Complex64 = (0..self.len()).map(|k| self.current(k)).sum();
        self.pcc_voltage * i.conj() / 2.0
    }
}

fn check_sources(e: &[f64], config: &MicrogridConfig) -> Result<()> {
    config.validate()?;
    if e.len() != config.len() {
        return Err(Error::invalid(format!("{} source magnitudes for {} inverters", e.len(), config.len())));
    }
    if e.iter().any(|x| !(*x > 0.0) || !x.is_finite()) {
        return Err(Error::domain("source magnitudes must be positive"));
    }
    Ok(())
}

fn powers(v: Complex64, i: Complex64) -> (f64, f64) {
    let s = v * i.conj() / 2.0;
    (s.re, s.im)
}

/// Closed-form phasors for resistive branches and synchronized clocks.
///
/// `I_k = lambda_k gamma_k (lambda^T E)` at phase `arg(beta_k - alpha)`; the capacitor voltage
/// uses the general form `V_k^2 = (E_k - R_v I_k cos phi_k)^2 + (R_v I_k sin phi_k)^2`.
pub fn solve_closed_form(e: &[f64], config: &MicrogridConfig) -> Result<PhasorSolution> {
    check_sources(e, config)?;
    if config.inverters.iter().any(|i| i.line_inductance > 0.0) {
        return Err(Error::invalid("the closed form assumes resistive branches"));
    }
    if config.clocks.iter().any(|c| c.phase_offset != 0.0) {
        return Err(Error::invalid("the closed form assumes synchronized clocks"));
    }
    let adm = build_admittance(config, config.nominal_frequency)?;
    let lte: f64 = adm.lambda_v.iter().zip(e).map(|(l, e)| l.re * e).sum();
    if !(lte > 0.0) {
        return Err(Error::domain("zero total source admittance"));
    }
    let n = e.len();
    let e_star = config.nominal_voltage_magnitude;
    let mut sol = PhasorSolution {
        current_amplitude: vec![0.0; n],
        current_phase: vec![0.0; n],
        voltage_amplitude: vec![0.0; n],
        voltage_phase: vec![0.0; n],
        active_power: vec![0.0; n],
        reactive_power: vec![0.0; n],
        pcc_voltage: adm.alpha * lte,
        beta: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        delta: e.iter().map(|x| (x - e_star) / e_star).collect(),
        intermediate: adm.clone(),
    };
    for k in 0..n {
        let beta = Complex64::new(e[k] / lte, 0.0);
        let w = beta - adm.alpha;
        let gamma = w.norm();
        let phi = w.im.atan2(w.re);
        let amp = adm.lambda_v[k].re * gamma * lte;
        let rv = config.inverters[k].virtual_resistance;
        let (c, s) = (phi.cos(), phi.sin());
        let vx = e[k] - rv * amp * c;
        let vy = -rv * amp * s;
        let vamp = (vx * vx + vy * vy).sqrt();
        let psi = vy.atan2(vx);
        sol.current_amplitude[k] = amp;
        sol.current_phase[k] = phi;
        sol.voltage_amplitude[k] = vamp;
        sol.voltage_phase[k] = psi;
        sol.active_power[k] = 0.5 * vamp * amp * (psi - phi).cos();
        sol.reactive_power[k] = 0.5 * vamp * amp * (psi - phi).sin();
        sol.beta.push(beta);
        sol.gamma.push(gamma);
    }
    Ok(sol)
}

/// Nodal solve with real source magnitudes; clock offsets in `config` rotate the sources.
pub fn solve_brute_force(e: &[f64], config: &MicrogridConfig) -> Result<PhasorSolution> {
    check_sources(e, config)?;
    let sources: Vec<Complex64> =
        e.iter().zip(&config.clocks).map(|(m, c)| Complex64::from_polar(*m, c.phase_offset)).collect();
    solve_sources(&sources, config)
}

/// Dense `(N+1)`-unknown solve for branch currents and the PCC voltage, honouring line
/// inductance: `(r_k + R_vk + j w0 L_line,k) I_k + V_pcc = S_k`, `sum I_k = V_pcc / Z_L`.
pub fn solve_sources(sources: &[Complex64], config: &MicrogridConfig) -> Result<PhasorSolution> {
    let n = sources.len();
    if n != config.len() {
        return Err(Error::invalid("source count does not match the inverter count"));
    }
    let w0 = config.nominal_frequency;
    let z_l = load_impedance_at(&config.load, w0)?;
    let m = n + 1;
    let one = Complex64::new(1.0, 0.0);
    let mut a = vec![Complex64::zero(); m * m];
    let mut b = vec![Complex64::zero(); m];
    for (k, inv) in config.inverters.iter().enumerate() {
        a[k * m + k] = Complex64::new(inv.source_resistance(), w0 * inv.line_inductance);
        a[k * m + n] = one;
        b[k] = sources[k];
        a[n * m + k] = one;
    }
    a[n * m + n] = -z_l.inv();
    solve_complex(&mut a, &mut b).map_err(|_| Error::domain("singular network equations"))?;
    let adm = build_admittance(config, w0)?;
    let lte: Complex64 = adm.lambda_v.iter().zip(sources).map(|(l, s)| l * s).sum();
    let e_star = config.nominal_voltage_magnitude;
    let mut sol = PhasorSolution {
        current_amplitude: Vec::with_capacity(n),
        current_phase: Vec::with_capacity(n),
        voltage_amplitude: Vec::with_capacity(n),
        voltage_phase: Vec::with_capacity(n),
        active_power: Vec::with_capacity(n),
        reactive_power: Vec::with_capacity(n),
        pcc_voltage: b[n],
        beta: Vec::with_capacity(n),
        gamma: Vec::with_capacity(n),
        delta: sources.iter().map(|s| (s.norm() - e_star) / e_star).collect(),
        intermediate: adm.clone(),
    };
    for k in 0..n {
        let i = b[k];
        let v = sources[k] - i * config.inverters[k].virtual_resistance;
        let (p, q) = powers(v, i);
        sol.current_amplitude.push(i.norm());
        sol.current_phase.push(i.im.atan2(i.re));
        sol.voltage_amplitude.push(v.norm());
        sol.voltage_phase.push(v.im.atan2(v.re));
        sol.active_power.push(p);
        sol.reactive_power.push(q);
        let beta = if lte.norm() > 0.0 { sources[k] / lte } else { Complex64::zero() };
        sol.beta.push(beta);
        sol.gamma.push((beta - adm.alpha).norm());
    }
    Ok(sol)
}

/// Phase difference `phi_k - phi_j` from the `nu`, `xi`, `delta` expression, with the quadrant
/// taken from the numerator and denominator separately.
pub fn phase_difference_exact(solution: &PhasorSolution, k: usize, j: usize) -> Result<f64> {
    let n = solution.len();
    if k >= n || j >= n {
        return Err(Error::invalid("inverter index out of range"));
    }
    let adm = &solution.intermediate;
    let nu = adm.nu;
    let xd: f64 = adm.xi.iter().zip(&solution.delta).map(|(x, d)| x.re * d).sum();
    let a_k = (1.0 + solution.delta[k]) / (1.0 + xd);
    let a_j = (1.0 + solution.delta[j]) / (1.0 + xd);
    let num = nu.im * (solution.delta[k] - solution.delta[j]) / (1.0 + xd);
    let den = (nu.re - a_k) * (nu.re - a_j) + nu.im * nu.im;
    if den.abs() < 1e-14 {
        return Err(Error::Degenerate("phase-difference denominator vanishes".into()));
    }
    Ok(num.atan2(den))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ApproxWarning {
    /// `|Z_L lambda^T 1|` is below 10; the linearization is not meaningful.
    WeakLoadCoupling { coupling: f64 },
    /// `|Z_L lambda^T 1|` is between 10 and 50.
    ModerateLoadCoupling { coupling: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseApprox {
    pub value: f64,
    pub coupling: f64,
    pub warning: Option<ApproxWarning>,
}

/// `atan(sum_m |Z_L| sin(theta_L) / (r_m + R_vm) * (delta_k - delta_j))`.
pub fn phase_difference_approx(config: &MicrogridConfig, delta_k: f64, delta_j: f64) -> Result<PhaseApprox> {
    let z = load_impedance_at(&config.load, config.nominal_frequency)?;
    let lsum: f64 = config.inverters.iter().map(|i| 1.0 / i.source_resistance()).sum();
    let coupling = z.norm() * lsum;
    let value = (z.norm() * z.arg().sin() * lsum * (delta_k - delta_j)).atan();
    let warning = if coupling <= 10.0 {
        Some(ApproxWarning::WeakLoadCoupling { coupling })
    } else if coupling < 50.0 {
        Some(ApproxWarning::ModerateLoadCoupling { coupling })
    } else {
        None
    };
    Ok(PhaseApprox { value, coupling, warning })
}

/// Largest `|delta_k - delta_j|` keeping the linearized phase difference within `epsilon`.
/// Infinite for a resistive load.
pub fn delta_budget(config: &MicrogridConfig, epsilon: f64) -> Result<f64> {
    let z = load_impedance_at(&config.load, config.nominal_frequency)?;
    let s = z.arg().sin();
    if s <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let lsum: f64 = config.inverters.iter().map(|i| 1.0 / i.source_resistance()).sum();
    Ok(epsilon * lsum / (z.norm() * s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DroopEquilibrium {
    pub voltage_magnitudes: Vec<f64>,
    pub solution: PhasorSolution,
    pub iterations: usize,
    pub residual: f64,
}

pub const EQUILIBRIUM_TOLERANCE: f64 = 1e-10;
pub const EQUILIBRIUM_MAX_ITERATIONS: usize = 1000;
const EQUILIBRIUM_DAMPING: f64 = 0.5;

/// Fixed point of `E_k = E* - n_k (P_k(E) - P*_k)` by damped Picard iteration on the nodal
/// solve.
pub fn droop_equilibrium(config: &MicrogridConfig) -> Result<DroopEquilibrium> {
    config.validate()?;
    let mut e: Vec<f64> = config.droop.iter().map(|d| d.nominal_voltage).collect();
    let mut history = Vec::new();
    for it in 1..=EQUILIBRIUM_MAX_ITERATIONS {
        let sol = solve_brute_force(&e, config)?;
        let target: Vec<f64> = config
            .droop
            .iter()
            .zip(&sol.active_power)
            .map(|(d, p)| d.clamp(crate::droop::vpd_voltage_unclamped(*p, d)))
            .collect();
        let residual = target.iter().zip(&e).fold(0.0_f64, |m, (t, x)| m.max((t - x).abs()));
        history.push(residual);
        if !residual.is_finite() {
            break;
        }
        if residual < EQUILIBRIUM_TOLERANCE {
            return Ok(DroopEquilibrium { voltage_magnitudes: e, solution: sol, iterations: it, residual });
        }
        for (x, t) in e.iter_mut().zip(&target) {
            *x += EQUILIBRIUM_DAMPING * (t - *x);
        }
    }
    let residual = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NonConvergence {
        what: "droop equilibrium",
        iterations: history.len(),
        residual,
        history,
        last_iterate: e,
    })
}

/// Half the phasor difference of two branch currents.
pub fn circulating_current(solution: &PhasorSolution, k: usize, j: usize) -> Complex64 {
    (solution.current(k) - solution.current(j)) / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::LoadModel;
    use crate::testutil::*;
    use core::f64::consts::PI;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    fn assert_solutions_agree(a: &PhasorSolution, b: &PhasorSolution, tol: f64) {
        let scale_i = a.current_amplitude.iter().fold(0.0_f64, |m, x| m.max(*x));
        let scale_v = a.voltage_amplitude.iter().fold(0.0_f64, |m, x| m.max(*x));
        let scale_s = scale_i * scale_v;
        for k in 0..a.len() {
            assert!((a.current(k) - b.current(k)).norm() <= tol * scale_i, "I_{k}");
            assert!((a.voltage(k) - b.voltage(k)).norm() <= tol * scale_v, "V_{k}");
            assert!((a.active_power[k] - b.active_power[k]).abs() <= tol * scale_s);
            assert!((a.reactive_power[k] - b.reactive_power[k]).abs() <= tol * scale_s);
        }
        assert!((a.pcc_voltage - b.pcc_voltage).norm() <= tol * scale_v);
    }

    #[test]
    fn resistive_load_gives_zero_phases() {
        let cfg = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        let s = solve_closed_form(&[169.7, 171.0], &cfg).unwrap();
        for k in 0..2 {
            assert_eq!(s.current_phase[k], 0.0);
            assert_eq!(s.voltage_phase[k], 0.0);
        }
    }

    #[test]
    fn identical_pair_series_parallel() {
        let cfg = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        let e = 169.7;
        let s = solve_closed_form(&[e, e], &cfg).unwrap();
        for k in 0..2 {
            assert!(rel(s.current_amplitude[k], e / (0.4 + 2.0 * 24.0)) < 1e-14);
        }
    }

    #[test]
    fn rl_load_closed_form_matches_oracle() {
        let cfg = two_inverter_config(LoadModel::SeriesRl { resistance: 11.52, inductance: 0.02293 });
        let cf = solve_closed_form(&[169.7, 169.7], &cfg).unwrap();
        let bf = solve_brute_force(&[169.7, 169.7], &cfg).unwrap();
        assert_solutions_agree(&cf, &bf, 1e-10);
    }

    #[test]
    fn voltage_divider() {
        let mut cfg = n_inverter_config(1, LoadModel::Resistive { resistance: 9.0 });
        cfg.inverters[0].branch_resistance = 0.6;
        cfg.inverters[0].virtual_resistance = 0.4;
        let s = solve_brute_force(&[100.0], &cfg).unwrap();
        assert!(rel(s.current_amplitude[0], 10.0) < 1e-14);
        assert!((s.pcc_voltage - Complex64::new(90.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn reactive_load_currents_lag_by_quarter_cycle() {
        let mut cfg = n_inverter_config(2, LoadModel::Resistive { resistance: 1.0 });
        cfg.load = LoadModel::ComplexAtFrequency { impedance: Complex64::new(1e-12, 20.0), angular_frequency: cfg.nominal_frequency };
        // A load with a negligible resistive part behaves as jX.
        let s = solve_brute_force(&[169.7, 169.7], &cfg).unwrap();
        let i: Complex64 = (0..2).map(|k| s.current(k)).sum();
        let lag = s.pcc_voltage.arg() - i.arg();
        assert!((lag - PI / 2.0).abs() < 1e-9);
    }

    #[test]
    fn phase_difference_examples() {
        let cfg = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        let s = solve_closed_form(&[169.7, 172.0], &cfg).unwrap();
        assert_eq!(phase_difference_exact(&s, 0, 1).unwrap(), 0.0);
        let cfg = two_inverter_config(LoadModel::SeriesRl { resistance: 11.52, inductance: 0.02293 });
        let s = solve_closed_form(&[169.7, 169.7], &cfg).unwrap();
        assert_eq!(phase_difference_exact(&s, 0, 1).unwrap(), 0.0);
        let mut cfg = cfg;
        cfg.inverters[1].branch_resistance = 0.1;
        let s = solve_brute_force(&[169.7, 168.9], &cfg).unwrap();
        let want = s.current_phase[0] - s.current_phase[1];
        assert!((phase_difference_exact(&s, 0, 1).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn approximation_examples() {
        let cfg = two_inverter_config(LoadModel::SeriesRl { resistance: 11.52, inductance: 0.02293 });
        assert_eq!(phase_difference_approx(&cfg, 0.01, 0.01).unwrap().value, 0.0);
        let r = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        assert_eq!(phase_difference_approx(&r, 0.01, -0.01).unwrap().value, 0.0);
        // Warning when the load coupling is weak.
        let weak = two_inverter_config(LoadModel::SeriesRl { resistance: 1.0, inductance: 1e-3 });
        assert!(matches!(phase_difference_approx(&weak, 0.0, 0.001).unwrap().warning, Some(ApproxWarning::WeakLoadCoupling { .. })));
    }

    #[test]
    fn approximation_holds_for_small_coupled_deviation() {
        // Accurate when |Z_L lambda^T 1| |delta_k - xi^T delta| is small.
        let cfg = two_inverter_config(LoadModel::SeriesRl { resistance: 20.0, inductance: 0.02 });
        let e_star = cfg.nominal_voltage_magnitude;
        let (dk, dj) = (2e-4, -2e-4);
        let s = solve_closed_form(&[e_star * (1.0 + dk), e_star * (1.0 + dj)], &cfg).unwrap();
        let exact = phase_difference_exact(&s, 0, 1).unwrap();
        let approx = phase_difference_approx(&cfg, dk, dj).unwrap();
        assert!(approx.coupling >= 50.0);
        assert!(rel(approx.value, exact) < 0.05, "{} vs {exact}", approx.value);
    }

    #[test]
    fn delta_budget_examples() {
        let r = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        assert_eq!(delta_budget(&r, 0.087).unwrap(), f64::INFINITY);
        let mut cfg = two_inverter_config(LoadModel::SeriesRl { resistance: 11.52, inductance: 0.02293 });
        let b = delta_budget(&cfg, 0.087).unwrap();
        let z = Complex64::new(11.52, cfg.nominal_frequency * 0.02293);
        assert!(rel(b, 0.087 * 5.0 / (z.norm() * z.arg().sin())) < 1e-14);
        for inv in cfg.inverters.iter_mut() {
            inv.branch_resistance *= 2.0;
            inv.virtual_resistance *= 2.0;
        }
        assert!(rel(delta_budget(&cfg, 0.087).unwrap(), b / 2.0) < 1e-14);
    }

    #[test]
    fn equilibrium_at_exact_fixed_point() {
        let mut cfg = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        let e = cfg.nominal_voltage_magnitude;
        let s = solve_brute_force(&[e, e], &cfg).unwrap();
        for (d, p) in cfg.droop.iter_mut().zip(&s.active_power) {
            d.active_power_reference = *p;
        }
        let eq = droop_equilibrium(&cfg).unwrap();
        assert_eq!(eq.iterations, 1);
        assert!(eq.voltage_magnitudes.iter().all(|x| *x == e));
    }

    #[test]
    fn sharing_scenario_equilibrium() {
        let cfg = sharing_config();
        let eq = droop_equilibrium(&cfg).unwrap();
        let s = &eq.solution;
        assert!((s.p_share(0, 1) - 1.07).abs() < 0.05, "{}", s.p_share(0, 1));
        assert!((s.q_share(0, 1) - 0.88).abs() < 0.05, "{}", s.q_share(0, 1));
        let dev = s.pcc_voltage.norm() / cfg.nominal_voltage_magnitude - 1.0;
        assert!((dev + 0.005).abs() < 0.005, "{dev}");
        // Circulating current is small against the rated current of a 0.6 kVA unit.
        let rated = 2.0 * 600.0 / cfg.nominal_voltage_magnitude;
        assert!(circulating_current(s, 0, 1).norm() < 0.05 * rated);
    }

    #[test]
    fn equilibrium_non_convergence_is_reported() {
        // A droop gain this steep makes the damped iteration expand around the fixed point.
        let mut cfg = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        let e = cfg.nominal_voltage_magnitude;
        let p0 = solve_brute_force(&[e, e], &cfg).unwrap().active_power[0];
        for d in cfg.droop.iter_mut() {
            d.droop_coefficient = 1.0;
            d.active_power_reference = p0 + 0.3;
        }
        match droop_equilibrium(&cfg) {
            Err(Error::NonConvergence { history, last_iterate, .. }) => {
                assert!(!history.is_empty());
                assert_eq!(last_iterate.len(), 2);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
    }

    #[test]
    fn circulating_current_examples() {
        let cfg = two_inverter_config(LoadModel::SeriesRl { resistance: 11.52, inductance: 0.02293 });
        let s = solve_closed_form(&[169.7, 169.7], &cfg).unwrap();
        assert!(circulating_current(&s, 0, 1).norm() < 1e-12);
        let cfg = two_inverter_config(LoadModel::Resistive { resistance: 24.0 });
        let s = solve_closed_form(&[169.7, 170.5], &cfg).unwrap();
        let c = circulating_current(&s, 0, 1);
        assert!(c.norm() > 0.0 && c.im == 0.0);
    }

    fn random_resistive_config() -> impl Strategy<Value = (MicrogridConfig, Vec<f64>)> {
        let n = prop_oneof![Just(1usize), Just(2), Just(3), Just(5), Just(8)];
        (n, 2.0..60.0f64, proptest::option::of(1e-4..0.05f64))
            .prop_flat_map(|(n, rl, ind)| {
                (Just(rl), Just(ind), proptest::collection::vec((0.02..1.0f64, 0.0..1.0f64, 150.0..190.0f64), n))
            })
            .prop_map(|(rl, ind, per)| {
                let load = match ind {
                    None => LoadModel::Resistive { resistance: rl },
                    Some(l) => LoadModel::SeriesRl { resistance: rl, inductance: l },
                };
                let mut cfg = n_inverter_config(per.len(), load);
                let mut e = Vec::new();
                for (inv, (r, rv, ek)) in cfg.inverters.iter_mut().zip(per) {
                    inv.branch_resistance = r;
                    inv.virtual_resistance = rv;
                    e.push(ek);
                }
                (cfg, e)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn closed_form_equals_oracle((cfg, e) in random_resistive_config()) {
            let a = solve_closed_form(&e, &cfg).unwrap();
            let b = solve_brute_force(&e, &cfg).unwrap();
            assert_solutions_agree(&a, &b, 1e-10);
        }

        #[test]
        fn kcl_and_power_balance((cfg, e) in random_resistive_config()) {
            let s = solve_closed_form(&e, &cfg).unwrap();
            let z_l = load_impedance_at(&cfg.load, cfg.nominal_frequency).unwrap();
            let i: Complex64 = (0..s.len()).map(|k| s.current(k)).sum();
            prop_assert!((i - s.pcc_voltage / z_l).norm() <= 1e-9 * i.norm());
            let out: Complex64 = (0..s.len()).map(|k| Complex64::new(s.active_power[k], s.reactive_power[k])).sum();
            let loss: f64 = (0..s.len()).map(|k| 0.5 * s.current_amplitude[k].powi(2) * cfg.inverters[k].branch_resistance).sum();
            let rhs = s.load_power() + loss;
            prop_assert!((out - rhs).norm() <= 1e-9 * out.norm());
        }

        #[test]
        fn resistive_load_has_no_reactive_power((mut cfg, e) in random_resistive_config()) {
            cfg.load = LoadModel::Resistive { resistance: cfg.load.resistance() };
            let s = solve_closed_form(&e, &cfg).unwrap();
            for k in 0..s.len() {
                prop_assert!(s.reactive_power[k].abs() <= 1e-9 * cfg.inverters[k].rated_apparent_power);
            }
        }

        #[test]
        fn exact_phase_difference_matches_oracle((cfg, e) in random_resistive_config()) {
            let s = solve_brute_force(&e, &cfg).unwrap();
            for k in 0..s.len() {
                for j in 0..s.len() {
                    if let Ok(d) = phase_difference_exact(&s, k, j) {
                        let want = crate::clock::wrap_pi(s.current_phase[k] - s.current_phase[j]);
                        prop_assert!(crate::clock::wrap_pi(d - want).abs() < 1e-9, "{d} vs {want}");
                    }
                }
            }
        }

        #[test]
        fn raising_power_reference_raises_equilibrium(bump in 10.0..200.0f64) {
            let cfg = sharing_config();
            let base = droop_equilibrium(&cfg).unwrap();
            let mut up = cfg.clone();
            up.droop[0].active_power_reference += bump;
            let hi = droop_equilibrium(&up).unwrap();
            prop_assert!(hi.voltage_magnitudes[0] > base.voltage_magnitudes[0]);
            prop_assert!(hi.solution.active_power[0] > base.solution.active_power[0]);
        }
    }
}
