use proptest::prelude::*;
use roadscan_core::io::format_labeled;
use roadscan_core::synth::{
    carve_pothole, generate_road_patch, generate_route, generate_scene, label_threshold, PotholeParams,
    PotholeRanges, RoadPatchParams, RouteParams, SceneSpec, SynthError,
};

fn params(length: f64, width: f64, spacing: f64, sigma: f64, jitter: f64, seed: u64) -> RoadPatchParams {
    RoadPatchParams { length, width, spacing, noise_sigma: sigma, jitter, seed }
}

fn spec(seed: u64, n: usize) -> SceneSpec {
    SceneSpec { patch: params(5.0, 5.0, 0.05, 0.005, 0.25, seed), n_potholes: n, ranges: PotholeRanges::default() }
}

#[test]
fn flat_patch_grid() {
    let p = generate_road_patch(&params(10.0, 10.0, 0.1, 0.0, 0.25, 3)).unwrap();
    assert_eq!(p.cloud.len(), 101 * 101);
    assert!(p.cloud.vertices().iter().all(|v| v.z == 0.0));
    assert!(p.labels().iter().all(|&l| !l));
}

#[test]
fn patch_is_deterministic() {
    let a = generate_road_patch(&params(4.0, 3.0, 0.05, 0.01, 0.25, 11)).unwrap();
    let b = generate_road_patch(&params(4.0, 3.0, 0.05, 0.01, 0.25, 11)).unwrap();
    let c = generate_road_patch(&params(4.0, 3.0, 0.05, 0.01, 0.25, 12)).unwrap();
    assert_eq!(format_labeled(&a), format_labeled(&b));
    assert_ne!(a, c);
}

#[test]
fn height_noise_matches_sigma() {
    let p = generate_road_patch(&params(10.0, 10.0, 0.05, 0.01, 0.25, 5)).unwrap();
    let z: Vec<f64> = p.cloud.vertices().iter().map(|v| v.z).collect();
    assert!(z.len() >= 10_000);
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((sd - 0.01).abs() < 0.001, "sd {sd}");
}

#[test]
fn degenerate_patch_is_rejected() {
    assert!(generate_road_patch(&params(0.0, 5.0, 0.1, 0.0, 0.0, 0)).is_err());
    assert!(generate_road_patch(&params(0.5, 0.5, 0.1, 0.0, 0.0, 0)).is_err());
    assert!(generate_road_patch(&params(5.0, 5.0, 0.1, -1.0, 0.0, 0)).is_err());
}

#[test]
fn bowl_profile() {
    let patch = generate_road_patch(&params(4.0, 4.0, 0.1, 0.0, 0.0, 0)).unwrap();
    let ph = PotholeParams { depth: 0.2, semi_axis_a: 0.9, semi_axis_b: 0.5, power: 1.5, center: [2.0, 0.0], yaw: 0.7 };
    let carved = carve_pothole(&patch, &ph, 0.0).unwrap();
    for (before, after) in patch.cloud.vertices().iter().zip(carved.cloud.vertices()) {
        let r = ph.radius(before.x, before.y);
        if r == 0.0 {
            assert_eq!(after.z, -0.2);
        } else if r >= 1.0 {
            assert_eq!(after.z, before.z);
        } else {
            assert!(after.z < 0.0);
        }
    }
    let centre = patch.cloud.vertices().iter().position(|v| v.x == 2.0 && v.y.abs() < 1e-12).unwrap();
    assert_eq!(carved.cloud.vertices()[centre].z, -0.2);
}

#[test]
fn labeled_count_matches_ellipse_area() {
    let spacing = 0.02;
    let patch = generate_road_patch(&params(3.0, 3.0, spacing, 0.0, 0.25, 1)).unwrap();
    let (d, a, b, p) = (0.1, 0.8, 0.5, 1.5);
    let ph = PotholeParams { depth: d, semi_axis_a: a, semi_axis_b: b, power: p, center: [1.5, 0.1], yaw: 0.2 };
    let carved = carve_pothole(&patch, &ph, 0.0).unwrap();
    let count = carved.labels().iter().filter(|&&l| l).count() as f64;
    let t = label_threshold(0.0);
    let area = std::f64::consts::PI * a * b * (1.0 - (t / d).powf(1.0 / p));
    let want = area / (spacing * spacing);
    assert!((count - want).abs() <= 0.05 * want, "{count} vs {want}");
}

#[test]
fn pothole_outside_patch_fails() {
    let patch = generate_road_patch(&params(2.0, 2.0, 0.1, 0.0, 0.0, 0)).unwrap();
    let ph = PotholeParams { depth: 0.1, semi_axis_a: 0.5, semi_axis_b: 0.5, power: 1.5, center: [1.8, 0.0], yaw: 0.0 };
    assert_eq!(carve_pothole(&patch, &ph, 0.0).unwrap_err(), SynthError::OutsidePatch);
}

#[test]
fn empty_scene() {
    let s = generate_scene(&spec(1, 0)).unwrap();
    assert!(s.potholes.is_empty());
    assert_eq!(s.cloud, generate_road_patch(&spec(1, 0).patch).unwrap());
}

#[test]
fn scene_is_deterministic() {
    assert_eq!(generate_scene(&spec(9, 2)).unwrap(), generate_scene(&spec(9, 2)).unwrap());
}

#[test]
fn crowded_scene_names_failed_pothole() {
    let err = generate_scene(&spec(2, 40)).unwrap_err();
    assert!(matches!(err, SynthError::Placement(i) if i > 0 && i < 40));
}

#[test]
fn route_frames_follow_the_vehicle() {
    let ph = PotholeParams { depth: 0.1, semi_axis_a: 0.5, semi_axis_b: 0.4, power: 1.5, center: [22.0, 0.3], yaw: 0.0 };
    let rp = RouteParams { potholes: vec![ph.clone()], ..RouteParams::default() };
    let frames = generate_route(&rp).unwrap();
    assert_eq!(frames.len(), 13);
    for (i, f) in frames.iter().enumerate() {
        let x0 = i as f64 * 5.0;
        assert_eq!(f.vehicle.position.x, x0);
        assert_eq!(f.cloud.cloud.sensor_origin.z, 2.0);
        let labeled = f.cloud.labels().iter().filter(|&&l| l).count();
        let covers = x0 <= 22.0 - 0.5 && 22.0 + 0.5 <= x0 + 10.0;
        assert_eq!(labeled > 0, covers, "frame {i}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn ground_truth_recomputes(seed in 0u64..10_000, n in 1usize..4) {
        let sp = spec(seed, n);
        let scene = generate_scene(&sp).unwrap();
        let patch = generate_road_patch(&sp.patch).unwrap();
        let t = sp.patch.label_threshold();
        let pts = patch.cloud.vertices();
        let mut any = vec![false; pts.len()];
        for gt in &scene.potholes {
            let want: Vec<usize> = (0..pts.len()).filter(|&i| gt.params.displacement(pts[i].x, pts[i].y) > t).collect();
            prop_assert_eq!(&gt.vertex_indices, &want);
            for &i in &want {
                any[i] = true;
                prop_assert!(gt.bbox.contains(&scene.cloud.cloud.vertices()[i]));
            }
        }
        prop_assert_eq!(scene.cloud.labels(), &any[..]);
        // label soundness
        for (i, &l) in scene.cloud.labels().iter().enumerate() {
            if l {
                prop_assert!(scene.potholes.iter().any(|gt| gt.params.radius(pts[i].x, pts[i].y) < 1.0));
            }
        }
    }

    #[test]
    fn depth_is_monotone_along_rays(
        d in 0.01f64..0.5, a in 0.1f64..2.0, b in 0.1f64..2.0, p in 1.0f64..4.0,
        yaw in -3.2f64..3.2, dir in 0.0f64..std::f64::consts::TAU,
    ) {
        let ph = PotholeParams { depth: d, semi_axis_a: a, semi_axis_b: b, power: p, center: [1.0, -2.0], yaw };
        let (dx, dy) = (dir.cos(), dir.sin());
        let mut last = f64::INFINITY;
        for k in 0..=300 {
            let s = k as f64 * 0.01;
            let v = ph.displacement(1.0 + s * dx, -2.0 + s * dy);
            prop_assert!(v <= last && v >= 0.0);
            last = v;
        }
        prop_assert_eq!(last, 0.0);
    }
}
