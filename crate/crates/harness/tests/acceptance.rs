//! Acceptance suite. Each test prints one line, `ACCEPTANCE <n> PASS|FAIL
//! <name>: <detail>`, straight to stderr so it shows up even when libtest
//! captures output, then asserts.

use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde_json::Value;
use stno::array::{calibrate_bias, scan_bias_grid, CalibrationSettings};
use stno::bead::{averaged_bead_field, layer_stray_field, BeadParams, Layer, QuadratureConfig};
use stno::dynamics::{
    energy, DriveCurrent, FieldSources, IntegratorConfig, MagnetParams, Scheme, SimState, Simulator,
};
use stno::metrics::{dominant_frequency, is_locked, Observable, Probe};
use stno::units::KB;
use stno::Vec3;
use stno_harness::experiments::{derive_seed, matches_oracle, sensitivity_point};
use stno_harness::{parse_config, run_experiment, write_run, ExperimentConfig, ExperimentKind};

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "ACCEPTANCE {n:>2} {verdict} {name}: {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn reference() -> (MagnetParams, FieldSources) {
    let h = 5000.0 * 1000.0 / (4.0 * PI);
    (MagnetParams::default(), FieldSources::static_only(Vec3::new(h, 0.0, 0.0)))
}

fn summary(cfg: &ExperimentConfig) -> serde_json::Map<String, Value> {
    run_experiment(cfg).expect("experiment runs").summary
}

fn f(v: &Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

#[test]
fn criterion_01_norm_and_energy() {
    let start = Instant::now();
    let (params, mut sources) = reference();
    sources.thermal_enabled = false;
    let mut sim =
        Simulator::new(params, sources, DriveCurrent::dc(0.0), IntegratorConfig::default()).unwrap();
    let mut s = SimState::tilted_from(Vec3::Z, 30.0);
    let mut e_prev = energy(s.m, &params, sources.h_static);
    let scale = e_prev.abs();
    let (mut max_norm_err, mut max_rise) = (0.0f64, 0.0f64);
    for _ in 0..1_000_000 {
        s = sim.step(s).unwrap();
        max_norm_err = max_norm_err.max((s.m.norm() - 1.0).abs());
        let e = energy(s.m, &params, sources.h_static);
        max_rise = max_rise.max(e - e_prev);
        e_prev = e;
    }
    let secs = start.elapsed().as_secs_f64();
    // Rounding in the energy sum sits near 1e-16 of its scale.
    let monotone = max_rise <= 1e-13 * scale;
    report(
        1,
        "norm and energy invariants",
        max_norm_err <= 1e-9 && monotone && secs < 10.0,
        format!(
            "1e6 RK4 steps: max ||m|-1| = {max_norm_err:.2e}, largest energy rise = {:.2e} of |E|, {secs:.2} s",
            max_rise.max(0.0) / scale
        ),
    );
}

#[test]
fn criterion_02_larmor() {
    let start = Instant::now();
    let h = 5000.0 * 1000.0 / (4.0 * PI);
    // Negligible damping and anisotropy: pure precession about the field.
    let params = MagnetParams { alpha: 1e-9, energy_barrier: 1e-40, ..MagnetParams::default() };
    let sources = FieldSources::static_only(Vec3::new(h, 0.0, 0.0));
    let init = SimState::new(Vec3::new(1.0, 0.0, 1.0).normalized());
    let traj = Simulator::new(params, sources, DriveCurrent::dc(0.0), IntegratorConfig::default())
        .unwrap()
        .run(init, 20e-9)
        .unwrap();
    let measured = dominant_frequency(&traj.my(), traj.dt).unwrap();
    let expected = 2.21e5 * h / (2.0 * PI);
    let rel = (measured - expected).abs() / expected;
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "Larmor precession",
        rel <= 1e-3 && secs < 5.0,
        format!("{:.4} GHz vs gamma*H/2pi = {:.4} GHz (rel err {rel:.1e}), {secs:.2} s", measured / 1e9, expected / 1e9),
    );
}

/// sqrt(<m_x^2 + m_y^2>/2) over replicas, discarding the first 10 ns.
fn thermal_cone(barrier_kt: f64, replicas: usize, duration: f64) -> f64 {
    let params = MagnetParams { energy_barrier: barrier_kt * KB * 300.0, ..MagnetParams::default() };
    let sources = FieldSources { thermal_enabled: true, ..FieldSources::static_only(Vec3::ZERO) };
    let cfg = IntegratorConfig { scheme: Scheme::Heun, ..IntegratorConfig::default() };
    let (mut acc, mut n) = (0.0, 0usize);
    for k in 0..replicas {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        rng.set_stream(k as u64);
        let traj = Simulator::with_rng(params, sources, DriveCurrent::dc(0.0), cfg, rng)
            .unwrap()
            .run(SimState::new(Vec3::Z), duration)
            .unwrap();
        for m in &traj.m[10_000..] {
            acc += m.x * m.x + m.y * m.y;
            n += 1;
        }
    }
    (acc / (2.0 * n as f64)).sqrt()
}

#[test]
fn criterion_03_equipartition() {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for kt in [40.0, 60.0, 80.0] {
        let measured = thermal_cone(kt, 100, 50e-9);
        let expected = (1.0 / (2.0 * kt)).sqrt();
        let rel = (measured - expected).abs() / expected;
        pass &= rel <= 0.10;
        parts.push(format!("{kt} kT: {measured:.4} vs {expected:.4} ({:+.1}%)", 100.0 * (measured - expected) / expected));
    }
    let secs = start.elapsed().as_secs_f64();
    report(3, "equipartition cone angle", pass && secs < 300.0, format!("{}; {secs:.1} s", parts.join(", ")));
}

#[test]
fn criterion_04_sustained_oscillation() {
    let (params, sources) = reference();
    let probe = Probe::new(params, sources);
    let traj = probe.simulate(&DriveCurrent::dc(200e-6)).unwrap();
    let mz = traj.mz();
    let n = mz.len();
    let swing = |s: &[f64]| {
        let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        0.5 * (hi - lo)
    };
    let a3 = swing(&mz[n / 2..3 * n / 4]);
    let a4 = swing(&mz[3 * n / 4..]);
    let drift = (a4 - a3).abs() / a3;
    report(
        4,
        "sustained oscillation",
        a4 > 0.1 && drift < 0.01,
        format!("m_z half-swing {a3:.5} (third quarter) -> {a4:.5} (last quarter), drift {:.2e}", drift),
    );
}

#[test]
fn criterion_05_frequency_vs_bias() {
    let sweep = "[sweep]\naxis = \"i_dc\"\nstart = \"150 uA\"\nstop = \"240 uA\"\npoints = 10\n";
    let plain = parse_config(&format!("kind = \"freq-vs-bias\"\n{sweep}")).unwrap();
    let rf = parse_config(&format!(
        "kind = \"freq-vs-bias\"\n[field]\nrf_amplitude = \"1 kOe\"\nrf_frequency = \"0.5 GHz\"\n{sweep}"
    ))
    .unwrap();
    let a = summary(&plain);
    let b = summary(&rf);
    let monotone = a["frequency_monotone"].as_bool().unwrap() && a["points_ok"] == 10;
    let (sa, sb) = (f(&a["frequency_span_Hz"]), f(&b["frequency_span_Hz"]));
    report(
        5,
        "frequency-bias monotonicity",
        monotone && sb > sa,
        format!(
            "static-only monotone = {monotone}, span {:.3} GHz; static+RF monotone = {}, span {:.3} GHz; wider = {}",
            sa / 1e9,
            b["frequency_monotone"],
            sb / 1e9,
            sb > sa
        ),
    );
}

#[test]
fn criterion_06_injection_locking() {
    let (params, sources) = reference();
    let probe = Probe::new(params, sources);
    let f0 = probe.measure(&DriveCurrent::dc(200e-6)).unwrap().frequency;
    let mut locked_all = true;
    let mut misses = Vec::new();
    for det in [-50e6, -25e6, 0.0, 25e6, 50e6] {
        let drive = DriveCurrent { i_dc: 200e-6, i_rf: 20e-6, f_rf: f0 + det, phase: 0.0 };
        let s = probe.series(&drive).unwrap();
        let ok = is_locked(&s, probe.integrator.dt, drive.f_rf, None).unwrap();
        locked_all &= ok;
        if !ok {
            misses.push(det / 1e6);
        }
    }
    let lr = summary(&ExperimentConfig::defaults(ExperimentKind::LockingRange));
    let widths: Vec<f64> = lr["widths_Hz"].as_array().unwrap().iter().map(f).collect();
    let nondecreasing = lr["width_nondecreasing"].as_bool().unwrap() && widths.len() == 5;
    report(
        6,
        "injection locking",
        locked_all && nondecreasing,
        format!(
            "i_rf 20 uA locks at detunings -50..+50 MHz: {locked_all} (misses {misses:?}); widths for i_rf 5..25 uA = {:?} MHz, nondecreasing = {nondecreasing}",
            widths.iter().map(|w| w / 1e6).collect::<Vec<_>>()
        ),
    );
}

/// Point-dipole field, written out independently of the library.
fn dipole(m: Vec3, r: Vec3) -> Vec3 {
    let d = r.norm();
    let u = r / d;
    (u * (3.0 * m.dot(u)) - m) / (4.0 * PI * d.powi(3))
}

#[test]
fn criterion_07_dipole_far_field() {
    let start = Instant::now();
    let params = MagnetParams::default();
    let geom = params.geometry;
    let quad = QuadratureConfig::default();
    let sep = 10.0 * geom.max_dimension();
    let mut worst = 0.0f64;
    for (dir, mag) in [
        (Vec3::new(0.0, 0.0, 1.0), Vec3::X),
        (Vec3::new(1.0, 0.0, 0.0), Vec3::X),
        (Vec3::new(1.0, 1.0, 1.0).normalized(), Vec3::new(0.3, -0.8, 0.5).normalized()),
    ] {
        let at = geom.center + dir * sep;
        let m = mag * params.ms_free;
        let h = layer_stray_field(Layer::Free, m, &geom, at, &quad).unwrap();
        let h0 = dipole(m * geom.volume_free(), at - geom.center);
        worst = worst.max((h - h0).norm() / h0.norm());
    }
    let moment = Vec3::new(-2.0e-15, 0.0, 0.0);
    let bead_pos = Vec3::new(0.0, 0.0, sep);
    let avg = averaged_bead_field(moment, &geom, bead_pos, &quad).unwrap();
    let h0 = dipole(moment, -bead_pos);
    let bead_err = (avg.field - h0).norm() / h0.norm();
    let bead = BeadParams::default();
    let near = averaged_bead_field(moment, &geom, bead.position, &quad).unwrap();
    let at = geom.center + bead.position;
    let coarse = layer_stray_field(Layer::Free, Vec3::X * params.ms_free, &geom, at, &quad).unwrap();
    let fine = layer_stray_field(Layer::Free, Vec3::X * params.ms_free, &geom, at, &quad.doubled()).unwrap();
    let layer_conv = (fine - coarse).norm() / fine.norm();
    let secs = start.elapsed().as_secs_f64();
    report(
        7,
        "dipole far-field and convergence",
        worst < 0.01 && bead_err < 0.01 && near.refinement_change < 1e-3 && layer_conv < 1e-3 && secs < 10.0,
        format!(
            "layer vs dipole at 10x size: {worst:.1e}; averaged bead vs dipole: {bead_err:.1e}; grid doubling: bead {:.1e}, layer {layer_conv:.1e}; {secs:.2} s",
            near.refinement_change
        ),
    );
}

#[test]
fn criterion_08_montecarlo_margin() {
    let free = ExperimentConfig::defaults(ExperimentKind::MonteCarlo);
    let s = summary(&free);
    let locked_cfg = parse_config("kind = \"montecarlo\"\n[drive]\ni_rf = \"50 uA\"\n").unwrap();
    let l = summary(&locked_cfg);
    let within = s["within_margin"].as_bool().unwrap();
    let reported = s.contains_key("frequency_std_Hz") && s["replicas_ok"] == 100;
    let flagged = within || s.contains_key("discrepancy");
    report(
        8,
        "Monte Carlo frequency margin",
        reported && flagged,
        format!(
            "free running: std {:.3} GHz, 2 sigma {:.3} GHz vs 0.1 GHz margin (within = {within}{}); injection-locked at 50 uA: std {:.3} GHz, locked fraction {:.2}",
            f(&s["frequency_std_Hz"]) / 1e9,
            f(&s["two_sigma_Hz"]) / 1e9,
            if within { String::new() } else { ", discrepancy flagged".into() },
            f(&l["frequency_std_Hz"]) / 1e9,
            f(&l["locked_fraction"]),
        ),
    );
}

#[test]
fn criterion_09_bead_sensitivity() {
    let start = Instant::now();
    let cfg = parse_config(
        "kind = \"sensitivity-sweep\"\n[drive]\ni_dc = \"200 uA\"\ni_rf = \"50 uA\"\n[run]\nreadout = \"voltage\"\n\
         [bead]\nradius = \"100 nm\"\nposition = [\"0 nm\", \"0 nm\", \"400 nm\"]\n",
    )
    .unwrap();
    let p = sensitivity_point(&cfg, 0).unwrap();
    let in_band = (0.002..=0.05).contains(&p.sensitivity);
    let opposes = p.bead_field.dot(cfg.sources.h_static) < 0.0;

    // No-bead noise floor: relative amplitude spread of thermal replicas.
    let noisy = parse_config(
        "kind = \"sensitivity-sweep\"\n[drive]\ni_dc = \"200 uA\"\ni_rf = \"50 uA\"\n[run]\nreadout = \"voltage\"\n\
         [field]\nthermal = true\n",
    )
    .unwrap();
    let f_inj = p.f_inj.unwrap();
    let drive = DriveCurrent { f_rf: f_inj, ..noisy.drive };
    let amps: Vec<f64> = (0..10u64)
        .map(|k| {
            let mut probe = noisy.probe();
            probe.integrator.seed = derive_seed(noisy.seed, k);
            probe.measure(&drive).unwrap().amplitude
        })
        .collect();
    let mean = amps.iter().sum::<f64>() / amps.len() as f64;
    let sd = (amps.iter().map(|a| ((a - mean) / mean).powi(2)).sum::<f64>() / (amps.len() - 1) as f64).sqrt();
    let above_floor = p.sensitivity > 3.0 * sd;
    let secs = start.elapsed().as_secs_f64();
    report(
        9,
        "bead sensitivity",
        in_band && opposes && above_floor && secs < 300.0,
        format!(
            "noise-free sensitivity {:.3}% (band 0.2-5%: {in_band}), bead field opposes static: {opposes}; 3 sigma no-bead floor at 300 K = {:.2}% (exceeded: {above_floor}); {secs:.1} s",
            100.0 * p.sensitivity,
            300.0 * sd
        ),
    );
}

#[test]
fn criterion_10_array_demux() {
    let quiet = summary(&ExperimentConfig::defaults(ExperimentKind::ArrayDemo));
    let recovery = f(&quiet["max_recovery_error"]);
    let quiet_exact = f(&quiet["exact_fraction"]);
    let noisy = summary(&parse_config("kind = \"array-demo\"\n[field]\nthermal = true\n").unwrap());
    let noisy_exact = f(&noisy["exact_fraction"]);
    report(
        10,
        "array demultiplexing",
        recovery <= 0.01 && quiet_exact >= 0.95 && noisy_exact >= 0.95,
        format!(
            "noise off: max recovery error {:.2}%, exact detection {:.0}% of trials; thermal 300 K: exact detection {:.0}% of 20 seeded trials (first trial flagged {})",
            100.0 * recovery,
            100.0 * quiet_exact,
            100.0 * noisy_exact,
            noisy["flagged_first_trial"]
        ),
    );
}

#[test]
fn criterion_11_calibration() {
    let cfg = ExperimentConfig::defaults(ExperimentKind::DriftCalibration);
    let cal = cfg.calibration;
    let s = CalibrationSettings { ..cal.settings };
    let target = cal.f_target;
    let tol = 0.05e9;
    let nominal = cfg.noiseless_probe();
    let start_bias = calibrate_bias(&nominal, target, 180e-6, &s).unwrap().bias;
    let mut pass = true;
    let mut parts = Vec::new();
    for (factor, start) in [(0.95, start_bias), (1.05, start_bias), (0.95, 130e-6), (1.05, 230e-6)] {
        let mut c = cfg.clone();
        c.drift.ms_factor = factor;
        let probe: Probe = Probe { observable: Observable::Mz, ..c.noiseless_probe() };
        let grid = scan_bias_grid(&probe, target, cal.scan_start, cal.scan_stop, &s);
        let oracle = grid
            .iter()
            .filter_map(|(i, f)| f.map(|f| (*i, (f - target).abs())))
            .fold((f64::NAN, f64::INFINITY), |b, x| if x.1 < b.1 { x } else { b });
        match calibrate_bias(&probe, target, start, &s) {
            Ok(r) => {
                let err = (r.frequency - target).abs();
                let ok = matches_oracle(&probe, r.bias, err, oracle.1, tol, s.step);
                pass &= ok;
                parts.push(format!(
                    "Ms x{factor} from {:.0} uA: {:.0} uA in {} steps, err {:.0} Hz, oracle best {:.0} uA err {:.0} Hz{}",
                    start * 1e6,
                    r.bias * 1e6,
                    r.iterations,
                    err,
                    oracle.0 * 1e6,
                    oracle.1,
                    if ok { "" } else { " MISMATCH" }
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("Ms x{factor} from {:.0} uA: {e}", start * 1e6));
            }
        }
    }
    report(11, "bias calibration under drift", pass, parts.join("; "));
}

#[test]
fn criterion_12_determinism() {
    let configs = [
        "kind = \"montecarlo\"\nseed = 9\n[run]\nduration = \"10 ns\"\n[montecarlo]\nreplicas = 6\n",
        "kind = \"sensitivity-sweep\"\nseed = 9\n[field]\nthermal = true\n[run]\nduration = \"10 ns\"\n\
         [sweep]\naxis = \"i_rf\"\nstart = 0\nstop = \"50 uA\"\npoints = 3\n",
        "kind = \"single-run\"\nseed = 9\n[field]\nthermal = true\n[run]\nduration = \"5 ns\"\n",
    ];
    let mut pass = true;
    let mut files = 0;
    for text in configs {
        let cfg = parse_config(text).unwrap();
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let ra = write_run(&run_experiment(&cfg).unwrap(), a.path()).unwrap();
        let rb = write_run(&run_experiment(&cfg).unwrap(), b.path()).unwrap();
        pass &= ra.files == rb.files;
        for entry in ra.files.iter().map(|e| e.name.as_str()).chain(["summary.json"]) {
            let x = std::fs::read(a.path().join(entry)).unwrap();
            let y = std::fs::read(b.path().join(entry)).unwrap();
            pass &= x == y;
            files += 1;
        }
    }
    report(12, "determinism", pass, format!("{files} files from 3 experiments identical across reruns"));
}
