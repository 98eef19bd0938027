use ldlab::diffusion::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Independently coded schedule: running product of `1 - beta`.
fn oracle_alpha_bars(betas: &[f64]) -> Vec<f64> {
    let mut acc = 1.0;
    betas.iter().map(|b| {
        acc *= 1.0 - b;
        acc
    }).collect()
}

#[test]
fn long_linear_schedule_nearly_destroys_signal() {
    let s = build_schedule(1000, 1e-4, 0.02, ScheduleKind::Linear).unwrap();
    let betas: Vec<f64> = (0..1000).map(|i| 1e-4 + (0.02 - 1e-4) * i as f64 / 999.0).collect();
    let want = oracle_alpha_bars(&betas);
    assert!(want[999] < 5e-5);
    assert!((s.alpha_bar(1000) - want[999]).abs() < 1e-15);
}

#[test]
fn desk_schedule_reaches_comparable_noise_level() {
    let s = build_schedule(200, 5e-4, 0.1, ScheduleKind::Linear).unwrap();
    assert!(s.alpha_bar(200) < 5e-5);
}

#[test]
fn forward_chain_matches_recurrence_oracle() {
    let s = build_schedule(10, 0.01, 0.3, ScheduleKind::Linear).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z0 = normals(&mut rng, 5);
    let noises: Vec<Vec<f64>> = (0..10).map(|_| normals(&mut rng, 5)).collect();
    let mut z = z0.clone();
    for t in 1..=10 {
        z = forward_step(&z, t, &noises[t - 1], &s).unwrap();
    }
    let mut oracle = z0;
    for (t, n) in noises.iter().enumerate() {
        let b = 0.01 + (0.3 - 0.01) * t as f64 / 9.0;
        for (o, e) in oracle.iter_mut().zip(n) {
            *o = (1.0 - b).sqrt() * *o + b.sqrt() * e;
        }
    }
    for (a, b) in z.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_noise_gives_the_deterministic_means() {
    let s = build_schedule(4, 0.1, 0.4, ScheduleKind::Linear).unwrap();
    let z = [0.5, -2.0];
    let step = forward_step(&z, 3, &[0.0, 0.0], &s).unwrap();
    let marg = forward_sample(&z, 3, &[0.0, 0.0], &s).unwrap();
    for i in 0..2 {
        assert_eq!(step[i], (0.7f64).sqrt() * z[i]);
        assert_eq!(marg[i], s.alpha_bar(3).sqrt() * z[i]);
    }
}

#[test]
fn chained_forward_steps_match_closed_form_moments() {
    let s = build_schedule(20, 0.01, 0.2, ScheduleKind::Linear).unwrap();
    let (t, z0, n) = (12, 1.5f64, 100_000);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut sum_c, mut sq_c, mut sum_m, mut sq_m) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..n {
        let mut z = vec![z0];
        for k in 1..=t {
            z = forward_step(&z, k, &[rng.sample(StandardNormal)], &s).unwrap();
        }
        let m = forward_sample(&[z0], t, &[rng.sample(StandardNormal)], &s).unwrap()[0];
        sum_c += z[0];
        sq_c += z[0] * z[0];
        sum_m += m;
        sq_m += m * m;
    }
    let want_mean = s.alpha_bar(t).sqrt() * z0;
    let want_std = (1.0 - s.alpha_bar(t)).sqrt();
    for (sum, sq) in [(sum_c, sq_c), (sum_m, sq_m)] {
        let mean = sum / n as f64;
        let std = (sq / n as f64 - mean * mean).sqrt();
        assert!((mean - want_mean).abs() <= 0.01 * want_mean.abs(), "mean {mean} vs {want_mean}");
        assert!((std - want_std).abs() <= 0.01 * want_std, "std {std} vs {want_std}");
    }
}

#[test]
fn training_loss_matches_independent_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (normals(&mut rng, 16), normals(&mut rng, 16));
    let mut acc = 0.0;
    for i in 0..16 {
        acc += (a[i] - b[i]) * (a[i] - b[i]);
    }
    assert!((training_loss(&a, &b).unwrap() - acc / 16.0).abs() < 1e-14);
    let shifted: Vec<f64> = a.iter().map(|x| x + 1.0).collect();
    assert!((training_loss(&shifted, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn first_reverse_step_with_true_noise_recovers_z0() {
    let s = build_schedule(10, 0.02, 0.2, ScheduleKind::Linear).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (z0, eps) = (normals(&mut rng, 8), normals(&mut rng, 8));
    let z1 = forward_sample(&z0, 1, &eps, &s).unwrap();
    let back = ddpm_reverse_step(&z1, &eps, 1, &s, &normals(&mut rng, 8)).unwrap();
    for (a, b) in back.iter().zip(&z0) {
        assert!((a - b).abs() < 1e-6);
    }
    let ddim = ddim_step(&z1, &eps, 1, 0, &s).unwrap();
    for (a, b) in ddim.iter().zip(&z0) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn reverse_step_without_noise_is_the_posterior_mean() {
    let s = build_schedule(10, 0.02, 0.2, ScheduleKind::Linear).unwrap();
    let (z, e) = ([0.3, -1.0], [0.5, 0.25]);
    let got = ddpm_reverse_step(&z, &e, 6, &s, &[0.0, 0.0]).unwrap();
    for i in 0..2 {
        let mu = (z[i] - s.beta(6) / (1.0 - s.alpha_bar(6)).sqrt() * e[i]) / s.alpha(6).sqrt();
        assert!((got[i] - mu).abs() < 1e-15);
    }
}

/// Predictor that knows the pinned `z0` and returns the exact noise of `z_t`.
fn oracle_eps(z0: &[f64], z: &[f64], t: usize, s: &NoiseSchedule) -> Vec<f64> {
    let ab = s.alpha_bar(t);
    z.iter().zip(z0).map(|(zt, x)| (zt - ab.sqrt() * x) / (1.0 - ab).sqrt()).collect()
}

#[test]
fn ancestral_chain_with_oracle_recovers_z0() {
    let s = build_schedule(10, 0.02, 0.3, ScheduleKind::Linear).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let z0 = normals(&mut rng, 6);
    let mut z = normals(&mut rng, 6);
    for t in (1..=10).rev() {
        let eps = oracle_eps(&z0, &z, t, &s);
        z = ddpm_reverse_step(&z, &eps, t, &s, &[0.0; 6]).unwrap();
    }
    for (a, b) in z.iter().zip(&z0) {
        assert!((a - b).abs() <= 1e-4);
    }
}

#[test]
fn ddim_chain_with_oracle_recovers_z0() {
    let s = build_schedule(200, 5e-4, 0.1, ScheduleKind::Linear).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let z0 = normals(&mut rng, 6);
    let out = ddim_sample(normals(&mut rng, 6), &s, 50, |z, t| oracle_eps(&z0, z, t, &s)).unwrap();
    for (a, b) in out.iter().zip(&z0) {
        assert!((a - b).abs() <= 1e-4);
    }
}

#[test]
fn equal_noise_levels_leave_ddim_fixed() {
    let s = NoiseSchedule {
        kind: ScheduleKind::Linear,
        betas: vec![0.1, 0.0],
        alphas: vec![0.9, 1.0],
        alpha_bars: vec![0.9, 0.9],
    };
    assert_eq!(ddim_step(&[0.4, -0.2], &[1.0, 2.0], 2, 1, &s).unwrap(), vec![0.4, -0.2]);
}

#[test]
fn cfg_endpoints_are_exact() {
    let (c, u) = ([0.1f32, -3.7, 2.2], [1.9f32, 0.3, -0.6]);
    assert_eq!(cfg_combine(&c, &u, 1.0).unwrap(), c.to_vec());
    assert_eq!(cfg_combine(&c, &u, 0.0).unwrap(), u.to_vec());
}

#[test]
fn timestep_draws_are_uniform() {
    // χ² critical value for 199 degrees of freedom at α = 0.01
    const CRITICAL: f64 = 249.45;
    let s = build_schedule(200, 5e-4, 0.1, ScheduleKind::Linear).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut counts = vec![0usize; 201];
    for _ in 0..100_000 {
        counts[s.sample_timestep(&mut rng)] += 1;
    }
    assert_eq!(counts[0], 0);
    let expected = 100_000.0 / 200.0;
    let chi2: f64 = counts[1..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < CRITICAL, "chi2 {chi2}");
}

fn schedule_strategy() -> impl Strategy<Value = NoiseSchedule> {
    (1usize..400, 1e-5f64..0.05, 0.0f64..0.5, prop::bool::ANY).prop_map(|(t, lo, span, cos)| {
        let kind = if cos { ScheduleKind::Cosine } else { ScheduleKind::Linear };
        build_schedule(t, lo, (lo + span).min(0.999), kind).unwrap()
    })
}

proptest! {
    #[test]
    fn alpha_bars_are_running_products(s in schedule_strategy()) {
        for t in 1..=s.len() {
            prop_assert!((s.alpha_bar(t) - s.alpha_bar(t - 1) * s.alpha(t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn oracle_ddim_recovers_z0_on_any_subsequence(
        z0 in prop::collection::vec(-2.0f64..2.0, 4),
        zt in prop::collection::vec(-2.0f64..2.0, 4),
        steps in 1usize..60,
    ) {
        let s = build_schedule(100, 1e-3, 0.1, ScheduleKind::Linear).unwrap();
        let out = ddim_sample(zt, &s, steps, |z, t| oracle_eps(&z0, z, t, &s)).unwrap();
        for (a, b) in out.iter().zip(&z0) {
            prop_assert!((a - b).abs() <= 1e-4);
        }
    }

    #[test]
    fn cfg_is_affine_in_w(
        c in prop::collection::vec(-8i32..8, 5),
        u in prop::collection::vec(-8i32..8, 5),
        w_num in -64i32..64,
    ) {
        // dyadic inputs keep every intermediate exactly representable
        let c: Vec<f64> = c.iter().map(|&v| v as f64 / 4.0).collect();
        let u: Vec<f64> = u.iter().map(|&v| v as f64 / 4.0).collect();
        let w = w_num as f64 / 8.0;
        let (r0, r1, rw) = (cfg_combine(&c, &u, 0.0).unwrap(), cfg_combine(&c, &u, 1.0).unwrap(), cfg_combine(&c, &u, w).unwrap());
        for i in 0..5 {
            prop_assert_eq!(rw[i] - r0[i], w * (r1[i] - r0[i]));
        }
    }

    #[test]
    fn training_loss_is_nonnegative_and_zero_only_on_equality(
        a in prop::collection::vec(-5.0f64..5.0, 1..20),
        bump in 0usize..20,
        delta in prop_oneof![Just(0.0), 1e-3f64..1.0],
    ) {
        let mut b = a.clone();
        let i = bump % a.len();
        b[i] += delta;
        let l = training_loss(&a, &b).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert_eq!(l == 0.0, delta == 0.0);
    }
}
