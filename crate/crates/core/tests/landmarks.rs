use ldlab::landmarks::*;
use proptest::prelude::*;

fn raw_points(n: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-0.2f64..1.2, -0.2f64..1.2), n)
}

proptest! {
    #[test]
    fn validation_is_idempotent(raw in raw_points(68)) {
        let once = validate(&raw, 68).unwrap();
        let again: Vec<(f64, f64)> = once.landmarks.points().iter().map(|p| (p.x, p.y)).collect();
        let twice = validate(&again, 68).unwrap();
        prop_assert_eq!(&twice.landmarks, &once.landmarks);
        prop_assert!(!twice.was_clamped());
    }

    #[test]
    fn interocular_distance_ignores_translation(
        raw in prop::collection::vec((0.2f64..0.8, 0.2f64..0.8), 68),
        dx in -0.2f64..0.2,
        dy in -0.2f64..0.2,
    ) {
        prop_assume!(raw[36] != raw[45]);
        let a = validate(&raw, 68).unwrap().landmarks;
        let moved: Vec<(f64, f64)> = raw.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        let b = validate(&moved, 68).unwrap().landmarks;
        prop_assert!((interocular_distance(&a).unwrap() - interocular_distance(&b).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn nearest_pixel_of_every_landmark_is_lit(
        raw in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..68),
        radius in 0.1f64..2.0,
        size in 8usize..80,
        polylines in any::<bool>(),
    ) {
        let lm = validate(&raw, raw.len()).unwrap().landmarks;
        let spec = RasterSpec { height: size, width: size, stroke_radius_px: radius, draw_polylines: polylines, ..RasterSpec::default() };
        let img = rasterize(&lm, &spec).unwrap();
        for p in lm.points() {
            let col = ((p.x * size as f64).round() as usize).min(size - 1);
            let row = ((p.y * size as f64).round() as usize).min(size - 1);
            prop_assert!(img.is_lit(row, col), "({}, {}) not lit", row, col);
        }
        prop_assert_eq!(rasterize(&lm, &spec).unwrap(), img);
    }
}

#[test]
fn hand_cases() {
    let mut pts = vec![(0.5, 0.5); 68];
    pts[36] = (0.3, 0.4);
    pts[45] = (0.7, 0.4);
    let lm = validate(&pts, 68).unwrap();
    assert!(!lm.was_clamped());
    assert!((interocular_distance(&lm.landmarks).unwrap() - 0.4).abs() < 1e-15);
    pts[45] = (0.6, 0.8);
    assert!((interocular_distance(&validate(&pts, 68).unwrap().landmarks).unwrap() - 0.5).abs() < 1e-15);
    pts[45] = pts[36];
    assert!(interocular_distance(&validate(&pts, 68).unwrap().landmarks).is_err());
    assert!(validate(&pts[..67], 68).is_err());
    pts[0] = (1.1, 0.5);
    let c = validate(&pts, 68).unwrap();
    assert!(c.was_clamped());
    assert_eq!(c.landmarks.get(0), Point::new(1.0, 0.5));
}
