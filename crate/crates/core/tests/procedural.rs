use ldlab::landmarks::validate;
use ldlab::procedural::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn eye_mass_centroids_track_landmarks_across_styles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for seed in 0..100 {
        let lm = sample_base_landmarks(seed);
        let style = StyleSpec::get(rng.random_range(0..=N_STYLES)).unwrap();
        let img = render_face(&lm, &style, 64, 64).unwrap();
        let r = measure_alignment(&img, &lm).unwrap();
        assert!(r.left_eye <= 1.0 && r.right_eye <= 1.0, "seed {seed} style {}: {r:?}", style.style_id);
        assert!(r.mean <= 1.0);
    }
}

#[test]
fn rendering_is_pure_and_styles_differ() {
    let lm = sample_base_landmarks(3);
    let a = render_face(&lm, &StyleSpec::get(4).unwrap(), 64, 64).unwrap();
    assert_eq!(a, render_face(&lm, &StyleSpec::get(4).unwrap(), 64, 64).unwrap());
    for s in 0..=N_STYLES {
        for t in s + 1..=N_STYLES {
            let x = render_face(&lm, &StyleSpec::get(s).unwrap(), 32, 32).unwrap();
            let y = render_face(&lm, &StyleSpec::get(t).unwrap(), 32, 32).unwrap();
            assert_ne!(x, y, "styles {s} and {t}");
        }
    }
    assert!(StyleSpec::get(N_STYLES + 1).is_none());
}

#[test]
fn base_faces_never_need_clamping() {
    for seed in 0..1000 {
        let lm = sample_base_landmarks(seed);
        let raw: Vec<(f64, f64)> = lm.points().iter().map(|p| (p.x, p.y)).collect();
        assert!(!validate(&raw, 68).unwrap().was_clamped(), "seed {seed}");
        assert_eq!(sample_base_landmarks(seed), lm);
    }
}

#[test]
fn desk_corpora_sizes_and_balance() {
    let dir = tempfile::tempdir().unwrap();
    let styles: Vec<usize> = (1..=N_STYLES).collect();
    let m = build_stage2_corpus(32, &styles, 0, dir.path(), 16).unwrap();
    assert_eq!(m.len(), 800);
    assert!(m.style_histogram().iter().all(|&(_, c)| c == 32));
    for r in &m.records {
        assert!(!r.landmarks_path.is_empty());
        m.load_landmarks(r).unwrap();
    }
}
