use apdsim::attacks::{build_waveform, evaluate_attack, AttackScenario};
use apdsim::countermeasures::{audit_config, monitor, AuditLimits, MonitorConfig};
use apdsim::experiments::gap_edges_exact;
use apdsim::physics::{
    click_probability, count_rate_analytic, effective_excess_bias, linear_gain, steady_state_photocurrent,
};
use apdsim::sim::{simulate_cw, simulate_trace, Record, SimConfig};
use apdsim::{ApdParams, Coupling, OpticalWaveform};
use proptest::prelude::*;

const SCAN: (f64, f64) = (1e-15, 1e-2);

fn dc(params: ApdParams) -> ApdParams {
    ApdParams { coupling: Coupling::Dc, ..params }
}

fn all_outcomes() -> SimConfig {
    SimConfig { record: Record::All, ..SimConfig::default() }
}

proptest! {
    #[test]
    fn count_rate_identity(pd in 0.0..1.0f64, mu in 0.0..50.0f64, eta in 0.0..1.0f64, f0 in 1e3..1e9f64) {
        let detect = -(-mu * eta).exp_m1();
        let lhs = detect + pd - detect * pd;
        let rhs = 1.0 - (1.0 - pd) * (-mu * eta).exp();
        prop_assert!((lhs - rhs).abs() < 1e-12);
        prop_assert!((click_probability(pd, mu * eta) - rhs).abs() < 1e-12);
        let r = count_rate_analytic(f0, pd, mu, eta);
        prop_assert!(r >= 0.0 && r <= f0 * (1.0 + 1e-12));
    }

    #[test]
    fn gain_is_monotone_in_bias(a in 40.0..70.0f64, b in 40.0..70.0f64, dt in 0.0..50.0f64) {
        let p = ApdParams::apd1();
        let t = p.ambient_temp + dt;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(linear_gain(&p, lo, t) <= linear_gain(&p, hi, t));
        prop_assert_eq!(linear_gain(&p, p.v_punch_through.min(lo), t), 0.0);
        let vb = p.v_breakdown_0 + p.temp_coeff_vb * dt;
        prop_assert_eq!(linear_gain(&p, vb.max(hi), t), p.gain_clamp);
    }

    #[test]
    fn photocurrent_is_monotone(p1 in -14.0..-2.0f64, p2 in -14.0..-2.0f64, r in 0.0..3e5f64, bias in 55.0..59.0f64) {
        let params = ApdParams { r_bias: r, ..ApdParams::apd1() };
        let t = params.ambient_temp;
        let (lo, hi) = if p1 <= p2 { (10f64.powf(p1), 10f64.powf(p2)) } else { (10f64.powf(p2), 10f64.powf(p1)) };
        let i_lo = steady_state_photocurrent(&params, lo, bias, t).unwrap();
        let i_hi = steady_state_photocurrent(&params, hi, bias, t).unwrap();
        prop_assert!(i_lo <= i_hi * (1.0 + 1e-9), "{} > {}", i_lo, i_hi);
        let i_more_bias = steady_state_photocurrent(&params, hi, bias + 0.5, t).unwrap();
        prop_assert!(i_hi <= i_more_bias * (1.0 + 1e-9));
    }

    #[test]
    fn zero_resistor_photocurrent_is_closed_form(lp in -15.0..-2.0f64, bias in 50.0..62.0f64) {
        let params = ApdParams { r_bias: 0.0, ..ApdParams::apd1() };
        let t = params.ambient_temp;
        let p = 10f64.powf(lp);
        let i = steady_state_photocurrent(&params, p, bias, t).unwrap();
        prop_assert_eq!(i, p * params.responsivity * linear_gain(&params, bias, t));
    }

    #[test]
    fn excess_bias_falls_with_photocurrent(i1 in 0.0..1e-3f64, i2 in 0.0..1e-3f64, r in 1.0..3e5f64) {
        prop_assume!(i1 != i2);
        let params = ApdParams { r_bias: r, ..ApdParams::apd1() };
        let t = params.ambient_temp;
        let (lo, hi) = if i1 < i2 { (i1, i2) } else { (i2, i1) };
        prop_assert!(effective_excess_bias(&params, hi, t) < effective_excess_bias(&params, lo, t));
        let flat = ApdParams { r_bias: 0.0, ..params };
        prop_assert_eq!(effective_excess_bias(&flat, lo, t), effective_excess_bias(&flat, hi, t));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn monte_carlo_within_three_sigma(pd in 0.0..0.05f64, eta in 0.01..0.5f64, lmu in -3.0..1.0f64, seed in any::<u64>()) {
        let params = dc(ApdParams { r_bias: 0.0, p_dark: pd, eta_0: eta, ..ApdParams::apd1() });
        let e = apdsim::physics::photon_energy(apdsim::physics::WAVELENGTH_1550);
        let mu = 10f64.powf(lmu);
        let power = mu * e / params.gate_width;
        let n = 100_000u64;
        let cw = simulate_cw(&params, power, n, seed, 0).unwrap();
        let p = 1.0 - (1.0 - pd) * (-mu * eta).exp();
        let sigma = (p * (1.0 - p) / n as f64).sqrt();
        prop_assert!((cw.clicks as f64 / n as f64 - p).abs() <= 3.0 * sigma + 1e-9 + 0.002 * p);
    }

    #[test]
    fn trace_invariants_hold(lp in -12.0..-3.0f64, ac in any::<bool>(), seed in any::<u64>()) {
        let mut params = ApdParams::apd1();
        if !ac {
            params.coupling = Coupling::Dc;
        }
        let w = OpticalWaveform::constant(10f64.powf(lp), 200e-6).unwrap();
        let trace = simulate_trace(&params, &w, seed, &all_outcomes()).unwrap();
        prop_assert!(trace.temperature_peak >= params.ambient_temp);
        prop_assert!(trace.mean_photocurrent <= trace.max_photocurrent * (1.0 + 1e-12));
        prop_assert!((trace.count_rate - trace.clicks as f64 / trace.duration).abs() <= 1e-9 * trace.count_rate);
        for o in trace.outcomes.iter().filter(|o| o.clicked) {
            let level = match params.coupling {
                Coupling::Dc => o.signal_peak,
                Coupling::Ac => o.signal_peak - o.ac_baseline,
            };
            prop_assert!(level >= params.discrimination_level);
        }
    }

    #[test]
    fn traces_are_deterministic(lp in -12.0..-4.0f64, seed in any::<u64>()) {
        let params = ApdParams::apd1();
        let scenario = AttackScenario::FakedState {
            cw_power: 10f64.powf(lp),
            trigger_pulse_energy: 20e-15,
            trigger_times: vec![30.5e-6, 60.5e-6],
        };
        let w = build_waveform(&scenario, &params, 100e-6, 50e-12).unwrap();
        let a = simulate_trace(&params, &w, seed, &all_outcomes()).unwrap();
        let b = simulate_trace(&params, &w, seed, &all_outcomes()).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }

    #[test]
    fn sinkhole_never_succeeds_against_dc(lp in -7.0..-3.7f64, guard in 0.2e-9..5e-9f64, seed in any::<u64>()) {
        let params = dc(ApdParams { r_bias: 0.0, ..ApdParams::apd1() });
        let scenario = AttackScenario::SinkHole { inter_gate_power: 10f64.powf(lp), guard_interval: guard };
        let w = build_waveform(&scenario, &params, 200e-6, 50e-12).unwrap();
        let trace = simulate_trace(&params, &w, seed, &all_outcomes()).unwrap();
        prop_assert!(!evaluate_attack(&scenario, &trace, &params).unwrap().success);
    }

    #[test]
    fn audited_configs_have_no_gap(r in 0.0..=20e3f64, frac in 0.0..1.0f64) {
        let base = ApdParams::apd1();
        let cap = base.capacitive_amplitude;
        let level = cap * (1.0 + 1e-6) + frac * (0.5 * cap - cap * 1e-6);
        let params = ApdParams { r_bias: r, discrimination_level: level, ..base };
        prop_assume!(audit_config(&params, &AuditLimits::default()).passed);
        prop_assert_eq!(gap_edges_exact(&params, SCAN).unwrap(), None);
    }

    #[test]
    fn gap_widens_with_bias_resistor(r1 in 40e3..400e3f64, r2 in 40e3..400e3f64) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let gap = |r: f64| gap_edges_exact(&ApdParams { r_bias: r, ..ApdParams::apd1() }, SCAN).unwrap();
        let width = |g: Option<(f64, Option<f64>)>| g.map_or(0.0, |(b, r)| r.unwrap_or(SCAN.1) - b);
        let (g_lo, g_hi) = (gap(lo), gap(hi));
        prop_assert!(width(g_lo) <= width(g_hi) * (1.0 + 1e-6), "{:?} {:?}", g_lo, g_hi);
        if let (Some((b_lo, _)), Some((b_hi, _))) = (g_lo, g_hi) {
            prop_assert!(b_hi <= b_lo * (1.0 + 1e-6));
        }
    }
}

#[test]
fn doubled_threshold_opens_a_gap_without_bias_resistor() {
    let base = ApdParams::apd1();
    let params = ApdParams { r_bias: 0.0, discrimination_level: 2.0 * base.capacitive_amplitude, ..base.clone() };
    assert!(gap_edges_exact(&params, SCAN).unwrap().is_some());
    let fixed = ApdParams { r_bias: 0.0, ..base };
    assert_eq!(gap_edges_exact(&fixed, SCAN).unwrap(), None);
}

#[test]
fn waveforms_conserve_energy() {
    let params = ApdParams::apd1();
    let period = params.gate_period();
    let n = 400usize;
    let total = n as f64 * period;
    let dt = 50e-12;
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);

    let cw = build_waveform(&AttackScenario::CwBlind { cw_power: 3e-6 }, &params, total, dt).unwrap();
    assert!(rel(cw.total_energy(), 3e-6 * total) < 1e-9);

    let faked = AttackScenario::FakedState {
        cw_power: 1e-5,
        trigger_pulse_energy: 2e-14,
        trigger_times: vec![10.5 * period, 20.5 * period, 30.5 * period],
    };
    let w = build_waveform(&faked, &params, total, dt).unwrap();
    assert!(rel(w.total_energy(), 1e-5 * total + 3.0 * 2e-14) < 1e-9);

    let frames = AttackScenario::thermal_frames(1.5e-3, 20e-6, 40e-6, 3);
    let AttackScenario::ThermalFrames { inter_frame_power, .. } = frames.clone() else { unreachable!() };
    let w = build_waveform(&frames, &params, total, dt).unwrap();
    assert!(rel(w.total_energy(), inter_frame_power * (total - 60e-6)) < 1e-9);

    let guard = 1e-9;
    let sink = AttackScenario::SinkHole { inter_gate_power: 2e-4, guard_interval: guard };
    let w = build_waveform(&sink, &params, total, dt).unwrap();
    let lit = total - n as f64 * (params.gate_width + 2.0 * guard);
    assert!(rel(w.total_energy(), 2e-4 * lit) < 1e-9);

    let after = AttackScenario::AfterGate { after_gate_delay: 10e-9, pulse_energy: 1e-12 };
    let w = build_waveform(&after, &params, total, dt).unwrap();
    assert!(rel(w.total_energy(), n as f64 * 1e-12) < 1e-9);
}

#[test]
fn ac_coupled_signal_has_zero_mean() {
    let params = ApdParams::apd1();
    let w = OpticalWaveform::constant(1e-6, 5000.0 * params.ac_time_constant).unwrap();
    let trace = simulate_trace(&params, &w, 1, &SimConfig::default()).unwrap();
    assert!(trace.baseline_subtracted_peak > 0.0);
    assert!(trace.baseline_subtracted_mean.abs() <= 1e-3 * trace.baseline_subtracted_peak);
}

#[test]
fn scenarios_round_trip_through_json() {
    for scenario in AttackScenario::suite(&ApdParams::apd1()) {
        let json = serde_json::to_string(&scenario).unwrap();
        assert_eq!(serde_json::from_str::<AttackScenario>(&json).unwrap(), scenario);
    }
}

#[test]
fn monitor_alarm_matches_peak_ratio() {
    let params = ApdParams::apd1();
    for power in [1e-10, 1e-6, 1e-5] {
        let w = OpticalWaveform::constant(power, 2e-3).unwrap();
        let trace = simulate_trace(&params, &w, 4, &SimConfig::default()).unwrap();
        let v = monitor(&trace, &MonitorConfig::default(), &params).unwrap();
        assert_eq!(v.alarmed, v.peak_ratio >= 1.0);
    }
}

#[test]
fn monitor_is_quiet_under_single_photon_load() {
    let params = ApdParams::apd1();
    let gates = 1_000_000.0;
    for (i, power) in [1e-12, 1e-10, 1e-9].into_iter().enumerate() {
        let w = OpticalWaveform::constant(power, gates * params.gate_period()).unwrap();
        let trace = simulate_trace(&params, &w, 11, &SimConfig { stream: i as u64, ..SimConfig::default() }).unwrap();
        let v = monitor(&trace, &MonitorConfig::default(), &params).unwrap();
        assert!(!v.alarmed, "false alarm at {power:e} W: ratio {}", v.peak_ratio);
    }
}

#[test]
fn faked_state_forced_clicks_repeat_per_seed() {
    let params = ApdParams::apd1();
    let scenario = AttackScenario::faked_state(&params, 10e-6, 20e-15, 10);
    let d = scenario.default_duration(&params);
    let w = build_waveform(&scenario, &params, d, 50e-12).unwrap();
    let run = |seed| {
        let trace = simulate_trace(&params, &w, seed, &all_outcomes()).unwrap();
        evaluate_attack(&scenario, &trace, &params).unwrap().forced_clicks
    };
    assert_eq!(run(3), run(3));
    assert_eq!(run(3), Some(10));
}
