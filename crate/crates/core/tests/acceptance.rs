//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its verdict even when the others pass.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Poisson};

use nvspec::charge_mc::{
    build_layout_from, calibrate_coupling, inhomogeneous_linewidth, realization_convergence, realization_shifts,
    sweep, sweep_power_law, FieldTable, LayoutSpec, McRunSpec, SweepAxis,
};
use nvspec::cylfield::{
    default_correction_quad, direct_field, excited_hamiltonian, polarization_correction,
    polarization_correction_detail, PillarGeometry, PointCharge, StarkCoupling,
};
use nvspec::diffusion::{
    ensemble_inhomogeneous, empirical_sdr, late_time_exponent, sdr_analytic, sdr_distribution_check,
    wiener_trajectory, EnsembleSpec, WienerSpec,
};
use nvspec::fitkit::{fit_power_broadening, fit_saturation, FitResult};
use nvspec::linewidth_mc::{estimate_from_grid, observed_histogram, LinewidthHistogram, simulate_fwhms, simulate_grid, ScanGenSpec};
use nvspec::par::Exec;
use nvspec::ple::{accept_scan, on_resonance_time, resonance_dwell_diffusion, Direction, LineScan, ScanFilterPolicy};
use nvspec::protocol::{
    attempt_rate, attempts_until_broadening, average_pulse_power, cw_ionization_time, pi_pulse_power, rate_ceiling,
    EmitterParams, ProtocolTiming,
};
use nvspec::units::{GHZ, KHZ, MHZ, MS, NM, NS, NW, UW};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn pi_pulse() -> Outcome {
    let e = EmitterParams {
        lifetime: 11.2 * NS,
        p_sat: 5.0 * NW,
        ..EmitterParams::default()
    };
    let p = pi_pulse_power(&e, 2.0 * NS).map_err(|e| e.to_string())?;
    check(rel(p, 3.1 * UW) <= 0.01, format!("P_pi = {:.4} uW", p / UW))
}

fn ionization_and_duty() -> Outcome {
    let t = cw_ionization_time(272.7, 0.002).map_err(|e| e.to_string())?;
    let avg = average_pulse_power(3.1 * UW, 2.0 * NS, 500.0 * KHZ).map_err(|e| e.to_string())?;
    let ok = rel(t, 545.4 * MS) <= 1e-12 && rel(avg, 3.1 * NW) <= 1e-12;
    check(ok, format!("t_ion = {:.4} ms, average power = {:.4} nW", t / MS, avg / NW))
}

fn attempt_count() -> Outcome {
    let e = EmitterParams {
        purcell: 3.0,
        ..EmitterParams::default()
    };
    let t = ProtocolTiming::default();
    let b = attempts_until_broadening(&e, &t).map_err(|e| e.to_string())?;
    let ceiling = rate_ceiling(&t);
    // the attempt rate saturates at the ceiling for large Purcell factors
    let big = attempt_rate(&EmitterParams { purcell: 1e4, ..e }, &t).map_err(|e| e.to_string())?;
    let ok = (b.n_p == 1040 || b.n_p == 1041)
        && (ceiling - 450.4 * KHZ).abs() <= 0.5 * KHZ
        && (big.rate - 450.4 * KHZ).abs() <= 0.5 * KHZ;
    check(
        ok,
        format!(
            "n_p = {}, ceiling = {:.3} kHz, rate(F = 1e4) = {:.3} kHz",
            b.n_p,
            ceiling / KHZ,
            big.rate / KHZ
        ),
    )
}

fn wiener() -> Outcome {
    let tau = 0.8;
    let sigma = WienerSpec::sigma_for_sdr(41.0 * MHZ, tau);
    let spec = WienerSpec {
        sigma,
        tau,
        n_steps: 1_000_000,
        omega0: 0.0,
    };
    let traj = wiener_trajectory(&spec, 0).map_err(|e| e.to_string())?;
    let emp = empirical_sdr(&traj).map_err(|e| e.to_string())?;
    let ana = sdr_analytic(sigma, tau).map_err(|e| e.to_string())?;
    let short = WienerSpec { n_steps: 10_000, ..spec };
    let mut passed = 0;
    for seed in 0..100 {
        let tr = wiener_trajectory(&short, 1000 + seed).map_err(|e| e.to_string())?;
        let ks = sdr_distribution_check(&tr, sigma, tau).map_err(|e| e.to_string())?;
        passed += (ks.p_value >= 0.01) as usize;
    }
    check(
        rel(emp, ana) <= 0.01 && passed >= 98,
        format!(
            "SDR deviation {:.3}% at 1e6 steps, KS passed {passed}/100",
            100.0 * rel(emp, ana)
        ),
    )
}

fn ensemble() -> Outcome {
    let tau = 0.8;
    let spec = WienerSpec {
        sigma: WienerSpec::sigma_for_sdr(41.0 * MHZ, tau),
        tau,
        n_steps: 500,
        omega0: 0.0,
    };
    let ens = EnsembleSpec {
        record_every: 25,
        ..EnsembleSpec::default()
    };
    let r = ensemble_inhomogeneous(&spec, &ens, 7, Exec::Parallel).map_err(|e| e.to_string())?;
    let a = late_time_exponent(&r, 100.0).map_err(|e| e.to_string())?;
    check((0.4..=0.6).contains(&a), format!("late-time exponent {a:.3}"))
}

fn linewidth_estimator() -> Outcome {
    let policy = ScanFilterPolicy::default();
    // half-width 14 MHz, i.e. a 28 MHz FWHM
    let gamma = 14.0 * MHZ;
    let template = ScanGenSpec {
        true_gamma: gamma,
        mean_photons: 30.0,
        noise_mean: 0.0,
        span: 480.0 * MHZ,
        bin_width: 4.0 * MHZ,
        n_iterations: 6000,
    };
    let gammas: Vec<f64> = (11..=17).map(|g| g as f64 * MHZ).collect();
    let grid = simulate_grid(&gammas, &[25.0, 30.0, 35.0], &template, &policy, 1000, Exec::Parallel)
        .map_err(|e| e.to_string())?;
    let mut covered = 0;
    for r in 0..100 {
        let obs = simulate_fwhms(
            &ScanGenSpec {
                n_iterations: 600,
                ..template
            },
            &policy,
            r,
            7,
            Exec::Parallel,
        )
        .map_err(|e| e.to_string())?;
        let h = observed_histogram(&obs.fwhms, 4.0 * MHZ).map_err(|e| e.to_string())?;
        let est = estimate_from_grid(&h, &grid).map_err(|e| e.to_string())?;
        covered += (est.ci99.0 <= gamma * (1.0 + 1e-9) && est.ci99.1 >= gamma * (1.0 - 1e-9)) as usize;
    }
    let low = simulate_fwhms(
        &ScanGenSpec {
            mean_photons: 15.0,
            n_iterations: 3000,
            ..template
        },
        &policy,
        1,
        11,
        Exec::Parallel,
    )
    .map_err(|e| e.to_string())?;
    // plain 4 MHz bins; the estimator's merged underflow bin is too coarse here
    let mut edges: Vec<f64> = (0..=120).map(|k| k as f64 * 4.0 * MHZ).collect();
    edges.push(f64::INFINITY);
    let mode = LinewidthHistogram::from_fwhms(&low.fwhms, &edges, 0.0).mode();
    check(
        covered >= 95 && mode < 2.0 * gamma,
        format!(
            "ci99 covered {covered}/100, mode at 15 photons {:.1} MHz (true FWHM {:.0} MHz)",
            mode / MHZ,
            2.0 * gamma / MHZ
        ),
    )
}

/// Fraction of fits with the parameter within `k` reported standard errors
/// of the truth, and whether the seed-averaged value is unbiased at the 2σ
/// level of its own scatter.
fn coverage(fits: &[FitResult], name: &str, truth: f64, k: f64) -> (usize, bool) {
    let vals: Vec<f64> = fits.iter().map(|f| f.get(name).unwrap()).collect();
    let hits = fits
        .iter()
        .zip(&vals)
        .filter(|(f, v)| (*v - truth).abs() <= k * f.stderr(name).unwrap())
        .count();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (hits, (mean - truth).abs() <= 2.0 * sd / n.sqrt())
}

/// Linewidth measured from a Poisson-sized batch of photon frequencies drawn
/// from a Lorentzian line; the interquartile range of a Cauchy sample
/// estimates its FWHM.
fn photon_fwhm(fwhm: f64, mean_photons: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = Poisson::new(mean_photons).unwrap().sample(rng) as usize;
    let line = Cauchy::new(0.0, fwhm / 2.0).unwrap();
    let mut f: Vec<f64> = (0..n).map(|_| line.sample(rng)).collect();
    f.sort_by(f64::total_cmp);
    f[3 * n / 4] - f[n / 4]
}

fn fit_round_trips() -> Outcome {
    // 20 powers, log-spaced over 0.5..40 nW
    let powers: Vec<f64> = (0..20).map(|k| 0.5 * NW * 80f64.powf(k as f64 / 19.0)).collect();
    let (i_sat, p_sat_i) = (30.0e3, 5.1 * NW);
    let (g0, p_sat_g) = (14.2 * MHZ, 5.0 * NW);
    let sat = |p: f64| i_sat * p / (p + p_sat_i);
    let brd = |p: f64| g0 * (1.0 + p / p_sat_g).sqrt();

    let clean_i: Vec<f64> = powers.iter().map(|&p| sat(p)).collect();
    let clean_g: Vec<f64> = powers.iter().map(|&p| brd(p)).collect();
    let fs = fit_saturation(&powers, &clean_i).map_err(|e| e.to_string())?;
    let fb = fit_power_broadening(&powers, &clean_g).map_err(|e| e.to_string())?;
    let exact = rel(fs.get("I_sat").unwrap(), i_sat) <= 1e-8
        && rel(fs.get("P_sat").unwrap(), p_sat_i) <= 1e-8
        && rel(fb.get("gamma_0").unwrap(), g0) <= 1e-8
        && rel(fb.get("P_sat").unwrap(), p_sat_g) <= 1e-8;

    // intensities from photon counts in a 1 s dwell
    let window = 1.0;
    let mut sat_fits = Vec::new();
    let mut brd_fits = Vec::new();
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy_i: Vec<f64> = powers
            .iter()
            .map(|&p| Poisson::new(sat(p) * window).unwrap().sample(&mut rng) / window)
            .collect();
        sat_fits.push(fit_saturation(&powers, &noisy_i).map_err(|e| e.to_string())?);

        let noisy_g: Vec<f64> = powers.iter().map(|&p| photon_fwhm(brd(p), 2000.0, &mut rng)).collect();
        brd_fits.push(fit_power_broadening(&powers, &noisy_g).map_err(|e| e.to_string())?);
    }
    let checks = [
        ("I_sat", coverage(&sat_fits, "I_sat", i_sat, 2.0)),
        ("P_sat(I)", coverage(&sat_fits, "P_sat", p_sat_i, 2.0)),
        ("gamma_0", coverage(&brd_fits, "gamma_0", g0, 2.0)),
        ("P_sat(gamma)", coverage(&brd_fits, "P_sat", p_sat_g, 2.0)),
    ];
    let noisy_ok = checks.iter().all(|(_, (hits, unbiased))| *hits >= 90 && *unbiased);
    let summary: Vec<String> = checks
        .iter()
        .map(|(n, (hits, unbiased))| format!("{n} {hits}/100{}", if *unbiased { "" } else { " biased" }))
        .collect();
    check(
        exact && noisy_ok,
        format!("noiseless exact: {exact}, within 2 sigma: {}", summary.join(", ")),
    )
}

fn electrostatics() -> Outcome {
    let matched = PillarGeometry {
        eps_outside: 5.7,
        ..PillarGeometry::default()
    };
    let q = default_correction_quad();
    let c = PointCharge::new(1.0, 40.0 * NM, 0.3, 60.0 * NM);
    let zero = polarization_correction(&c, &matched, &q).map_err(|e| e.to_string())?;
    let zero_ok = zero.iter().all(|&v| v == 0.0);

    let geom = PillarGeometry::default();
    let on_axis = PointCharge::new(1.0, 0.0, 0.0, 10.0 * NM);
    let e = direct_field(&on_axis, &geom).map_err(|e| e.to_string())?;
    // e / (4 pi eps0 eps r^2), with the SI constants written out
    let coulomb = 1.602_176_634e-19 / (4.0 * PI * 8.854_187_8128e-12 * 5.7 * 1e-16);
    let direct_ok = rel(e[2].abs(), coulomb) <= 1e-10 && e[0] == 0.0 && e[1] == 0.0 && rel(coulomb, 2.53e6) < 0.01;

    let k = StarkCoupling::default();
    let mut eig_err: f64 = 0.0;
    for f in [[1.0e6, 2.0e6, -3.0e6], [0.0, 0.0, 5.0e5], [-4.0e5, 7.0e5, 0.0]] {
        let h = excited_hamiltonian(f, &k);
        let g = k.raw.g;
        let mid = g * (k.raw.b + k.raw.d) * f[2];
        let split = g * k.raw.a * f[0].hypot(f[1]);
        let scale = mid.abs() + split;
        eig_err = eig_err
            .max((h.e_block_eigenvalues[0] - (mid - split)).abs() / scale)
            .max((h.e_block_eigenvalues[1] - (mid + split)).abs() / scale);
    }
    let eig_ok = eig_err <= 1e-12;

    let mut halving_ok = true;
    let mut worst: f64 = 0.0;
    for (r, z) in [(100.0, 50.0), (50.0, 20.0), (10.0, 200.0)] {
        let c = PointCharge::new(1.0, r * NM, 0.0, z * NM);
        let full = polarization_correction_detail(&c, &geom, &q, 1.0).map_err(|e| e.to_string())?;
        let half = polarization_correction_detail(&c, &geom, &q, 0.5).map_err(|e| e.to_string())?;
        let diff = (full.field[2] - half.field[2]).abs();
        let bound = full.error.max(half.error);
        halving_ok &= diff <= bound;
        worst = worst.max(diff / bound.max(f64::MIN_POSITIVE));
    }
    check(
        zero_ok && direct_ok && eig_ok && halving_ok,
        format!(
            "matched eps zero: {zero_ok}, direct {:.4} MV/m, eigenvalue error {eig_err:.1e}, halving diff/estimate {worst:.2}",
            e[2].abs() / 1e6
        ),
    )
}

fn charge_scaling() -> Outcome {
    let ls = LayoutSpec::default();
    let layout = build_layout_from(&ls).map_err(|e| e.to_string())?;
    let table = FieldTable::new(&layout, true, Exec::Parallel).map_err(|e| e.to_string())?;
    let spec = McRunSpec {
        n_realizations: 1000,
        ..McRunSpec::default()
    };
    let unit = StarkCoupling::with_scale(1.0);
    let sh = realization_shifts(&layout, &table, &spec, &unit, 1, Exec::Parallel).map_err(|e| e.to_string())?;
    let scale = calibrate_coupling(&sh, spec.line_fwhm, 5.0 * GHZ).map_err(|e| e.to_string())?;
    let k = unit.scaled(scale);

    // the calibration must carry over to an independent draw
    let big = McRunSpec {
        n_realizations: 10_000,
        ..spec
    };
    let fresh = realization_shifts(&layout, &table, &big, &k, 6, Exec::Parallel).map_err(|e| e.to_string())?;
    let anchor = inhomogeneous_linewidth(&fresh, spec.line_fwhm).map_err(|e| e.to_string())?.fwhm;
    let anchor_ok = rel(anchor, 5.0 * GHZ) <= 0.05;

    let bulk = [100.0, 200.0, 500.0, 1000.0, 2000.0, 4000.0, 6000.0];
    let rows = sweep(&ls, SweepAxis::BulkCharges, &bulk, &spec, &k, 2, Exec::Parallel).map_err(|e| e.to_string())?;
    let a_bulk = sweep_power_law(&rows, true)
        .map_err(|e| e.to_string())?
        .get("a")
        .unwrap();
    let bulk_ok = (0.4..=0.6).contains(&a_bulk);

    let mut radius_exps = Vec::new();
    for r in [75.0, 125.0, 200.0] {
        let lr = LayoutSpec {
            geometry: PillarGeometry {
                radius: r * NM,
                ..ls.geometry
            },
            bulk_density_ppm: 0.0,
            n_surface: (6000.0 * r / 125.0) as usize,
            ..ls
        };
        let s = McRunSpec {
            n_bulk_charges: 0,
            ..spec
        };
        let rows = sweep(
            &lr,
            SweepAxis::SurfaceCharges,
            &[100.0, 200.0, 500.0, 1000.0, 2000.0],
            &s,
            &k,
            3,
            Exec::Parallel,
        )
        .map_err(|e| e.to_string())?;
        radius_exps.push(sweep_power_law(&rows, true).map_err(|e| e.to_string())?.get("a").unwrap());
    }
    let radius_ok = radius_exps.iter().all(|&a| a < 0.5);

    let rows = sweep(&ls, SweepAxis::TrapDensity, &[3.0, 5.0, 8.0], &big, &k, 4, Exec::Parallel)
        .map_err(|e| e.to_string())?;
    let fw: Vec<f64> = rows.iter().filter_map(|r| r.fwhm).collect();
    let (lo, hi) = fw.iter().fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let spread = (hi - lo) / lo;
    let density_ok = fw.len() == 3 && spread < 0.15;

    let sh = realization_shifts(&layout, &table, &big, &k, 5, Exec::Parallel).map_err(|e| e.to_string())?;
    let cv = realization_convergence(&sh, spec.line_fwhm, &[100, 10_000]).map_err(|e| e.to_string())?;
    let conv_ok = cv[1].rmse < cv[0].rmse;

    check(
        anchor_ok && bulk_ok && radius_ok && density_ok && conv_ok,
        format!(
            "anchor {:.3} GHz, bulk a = {a_bulk:.3}, surface a = {:?}, density spread {:.1}%, rmse {:.2e} -> {:.2e}",
            anchor / GHZ,
            radius_exps.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            100.0 * spread,
            cv[0].rmse,
            cv[1].rmse
        ),
    )
}

fn scan(pitch: f64, counts: Vec<u64>) -> LineScan {
    LineScan {
        scan_id: 0,
        t_start: 0.0,
        direction: Direction::Up,
        power: 5.0 * NW,
        scan_speed: 5.88 * GHZ,
        bin_centers: (0..counts.len()).map(|k| k as f64 * pitch).collect(),
        counts,
    }
}

fn micro_anchors() -> Outcome {
    let dwell = on_resonance_time(29.0 * MHZ, 5.88 * GHZ).map_err(|e| e.to_string())?;
    let drift = resonance_dwell_diffusion((dwell / MS * 10.0).round() / 10.0 * MS, 49.0 * MHZ);
    let timing_ok = (dwell / MS * 10.0).round() == 49.0 && (drift / MHZ * 100.0).round() == 24.0;

    let policy = ScanFilterPolicy::default();
    let three = accept_scan(&scan(4.0 * MHZ, vec![0, 1, 3, 0]), &policy);
    let two = accept_scan(&scan(4.0 * MHZ, vec![1, 2, 2, 1]), &policy);
    // 1 MHz bins with no bin above 2 reach the threshold once grouped by four
    let fine = scan(MHZ, vec![0, 1, 1, 1, 2, 0, 0, 1, 0, 0, 1, 0]);
    let coarse = fine.rebin(4.0 * MHZ).map_err(|e| e.to_string())?;
    let binning_ok =
        coarse.counts == vec![3, 3, 1] && !accept_scan(&fine, &policy) && accept_scan(&coarse, &policy);
    check(
        timing_ok && three && !two && binning_ok,
        format!(
            "dwell {:.2} ms, drift {:.3} MHz, accept(3) {three}, accept(2) {two}, rebinned {:?}",
            dwell / MS,
            drift / MHZ,
            coarse.counts
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("pi-pulse power", pi_pulse),
        ("ionization conversion and average power", ionization_and_duty),
        ("attempt count and rate ceiling", attempt_count),
        ("Wiener consistency", wiener),
        ("ensemble broadening", ensemble),
        ("linewidth estimator", linewidth_estimator),
        ("fit round-trips", fit_round_trips),
        ("electrostatics", electrostatics),
        ("charge MC scaling", charge_scaling),
        ("pipeline micro-anchors", micro_anchors),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let id = format!("{}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|x| *x == id) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = t0.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {id:>2} {name}: PASS ({d}) [{secs:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({d}) [{secs:.1} s]");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
