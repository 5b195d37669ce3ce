mod common;

use hemicap::annotate::{annotate_bbox, camera_from_object};
use hemicap::coverage::{build_hemisphere_layout, collection_rate, hit_test, HitThresholds};
use hemicap::geometry::{angular_distance, look_at_rotation, project_point, spherical_to_cartesian, Pose, UnitQuaternion, Vector3};
use hemicap::marker_pose::{estimate_homography, estimate_marker_pose};
use hemicap::metrics::variability_report;
use hemicap::simcam::{camera_looking_at, synth_observation};
use hemicap::{CameraIntrinsics, CoverageState, MarkerSpec, ObjectModel};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(range: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-range..range, -range..range, -range..range).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

fn rotation() -> impl Strategy<Value = UnitQuaternion<f64>> {
    (vec3(1.0), -3.1..3.1f64)
        .prop_filter("axis", |(a, _)| a.norm() > 1e-3)
        .prop_map(|(axis, angle)| UnitQuaternion::from_axis_angle(axis, angle))
}

fn pose() -> impl Strategy<Value = Pose<f64>> {
    (rotation(), vec3(2.0)).prop_map(|(r, t)| Pose::new(r, t))
}

fn k() -> CameraIntrinsics {
    CameraIntrinsics::new(900.0, 900.0, 640.0, 360.0, 1280, 720).unwrap()
}

proptest! {
    #[test]
    fn spherical_points_lie_on_the_sphere(r in 0.0..10.0f64, phi in 0.0..3.2f64, theta in -7.0..7.0f64) {
        let p = spherical_to_cartesian(r, phi, theta).unwrap();
        prop_assert!((p.norm() - r).abs() <= 1e-12 * (1.0 + r));
        prop_assert!((p.y - r * phi.cos()).abs() <= 1e-12 * (1.0 + r));
    }

    #[test]
    fn angular_distance_is_a_metric(a in rotation(), b in rotation(), c in rotation()) {
        let ab = angular_distance(&a, &b);
        prop_assert!((ab - angular_distance(&b, &a)).abs() < 1e-9);
        prop_assert!((ab - angular_distance(&a, &b.negated())).abs() < 1e-9);
        prop_assert!((0.0..=180.0 + 1e-9).contains(&ab));
        prop_assert!(angular_distance(&a, &c) <= ab + angular_distance(&b, &c) + 1e-7);
        prop_assert_eq!(angular_distance(&a, &a.negated()), 0.0);
    }

    #[test]
    fn pose_composed_with_inverse_projects_like_identity(p in pose(), x in vec3(1.0)) {
        let x = Vector3::new(x.x, x.y, x.z.abs() + 0.5);
        let round = p.inverse().compose(&p);
        let a = project_point(&k(), &round, x).unwrap();
        let b = project_point(&k(), &Pose::identity(), x).unwrap();
        prop_assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
    }

    #[test]
    fn look_at_is_a_rotation_towards_the_target(eye in vec3(3.0), target in vec3(3.0)) {
        prop_assume!((target - eye).norm() > 1e-3);
        let q = look_at_rotation(eye, target, Vector3::unit_y()).unwrap();
        prop_assert!((q.norm() - 1.0).abs() < 1e-12);
        let fwd = q.rotate(Vector3::unit_z());
        let want = (target - eye).try_normalize().unwrap();
        prop_assert!((fwd - want).norm() < 1e-9);
        let m = q.to_rotation_matrix();
        prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn homography_ignores_pair_order(h in proptest::array::uniform9(-1.0..1.0f64), shift in 0usize..4) {
        let src = [[0.0, 0.0], [1.0, 0.1], [0.9, 1.2], [-0.1, 0.8], [0.4, 0.5]];
        let map = |p: [f64; 2]| {
            let w = h[6] * p[0] + h[7] * p[1] + 2.0;
            [(h[0] * p[0] + h[1] * p[1] + h[2] + p[0]) / w, (h[3] * p[0] + h[4] * p[1] + h[5] + p[1]) / w]
        };
        let pairs: Vec<_> = src.iter().map(|&s| (s, map(s))).collect();
        let mut rotated = pairs.clone();
        rotated.rotate_left(shift);
        let (Ok(a), Ok(b)) = (estimate_homography(&pairs), estimate_homography(&rotated)) else {
            return Ok(());
        };
        let (na, nb) = (a.frobenius_norm(), b.frobenius_norm());
        let sign = if (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|ij| a[ij] * b[ij]).sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((a[(i, j)] / na - sign * b[(i, j)] / nb).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn estimated_pose_is_a_proper_rotation(seed in any::<u64>(), d in 0.3..1.5f64, noise in 0.0..1.0f64) {
        let spec = MarkerSpec::new(0, 0.12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gt = common::random_view(&mut rng, &k(), &spec, d, 60.0);
        let obs = synth_observation(&gt, &k(), &spec, noise, 0, &mut rng).unwrap();
        if let Ok(est) = estimate_marker_pose(&obs, &k(), &spec) {
            prop_assert!((est.rotation.norm() - 1.0).abs() < 1e-9);
            prop_assert!((est.rotation.to_rotation_matrix().determinant() - 1.0).abs() < 1e-9);
            prop_assert!(est.translation.z > 0.0);
        }
    }

    #[test]
    fn bbox_ignores_corner_order_and_contains_visible_corners(
        eye in vec3(1.0), aim in vec3(0.2), half in (0.01..0.3f64, 0.01..0.3f64, 0.01..0.3f64), perm_seed in any::<u64>()
    ) {
        let eye = Vector3::new(eye.x, eye.y, eye.z.abs() + 0.2);
        let cam = camera_looking_at(eye, aim).unwrap();
        let model = ObjectModel::with_half_extents(1, "o", Pose::identity(), Vector3::new(half.0, half.1, half.2));
        let mut shuffled = model.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        rand::seq::SliceRandom::shuffle(&mut shuffled.extent_box[..], &mut rng);
        let a = annotate_bbox(&k(), &camera_from_object(&cam, &model), &model);
        let b = annotate_bbox(&k(), &camera_from_object(&cam, &shuffled), &shuffled);
        prop_assert_eq!(a.as_ref().ok(), b.as_ref().ok());
        if let Ok(bb) = a {
            prop_assert!(bb.xmin < bb.xmax && bb.ymin < bb.ymax && bb.xmax <= 1280 && bb.ymax <= 720);
            for c in &model.extent_box {
                if let Ok([u, v]) = project_point(&k(), &cam, *c) {
                    if (0.0..=1280.0).contains(&u) && (0.0..=720.0).contains(&v) {
                        prop_assert!(bb.xmin as f64 <= u && u <= bb.xmax as f64);
                        prop_assert!(bb.ymin as f64 <= v && v <= bb.ymax as f64);
                    }
                }
            }
        }
    }

    #[test]
    fn hits_satisfy_every_threshold(
        n in 2usize..80, collected_mask in any::<u64>(), eye in vec3(1.2), px in 20.0..400.0f64
    ) {
        let layout = build_hemisphere_layout(n, 0.4f64).unwrap();
        let mut state = CoverageState::new(n);
        for i in 0..n.min(64) {
            if collected_mask >> i & 1 == 1 {
                state.mark_collected(i).unwrap();
            }
        }
        let eye = Vector3::new(eye.x, eye.y.abs() + 0.05, eye.z);
        let cam = camera_looking_at(eye, Vector3::zeros()).unwrap();
        let th = HitThresholds { center_px_radius: px, min_distance: 0.3, max_distance: 1.5 };
        if let Some(i) = hit_test(&cam, &k(), &layout, &state, &th) {
            prop_assert!(!state.is_collected(i));
            let d = eye.norm();
            prop_assert!((0.3..=1.5).contains(&d));
            let [u, v] = project_point(&k(), &cam, layout.centers[i]).unwrap();
            prop_assert!((u - 640.0).hypot(v - 360.0) <= px);
            prop_assert!(eye.dot(&layout.centers[i]) > 0.0);
        }
    }

    #[test]
    fn collection_rate_never_decreases(n in 1usize..200, order_seed in any::<u64>()) {
        let mut state = CoverageState::new(n);
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut order[..], &mut ChaCha8Rng::seed_from_u64(order_seed));
        let mut last = collection_rate(&state);
        prop_assert_eq!(last, 0.0);
        for i in order {
            state.mark_collected(i).unwrap();
            prop_assert!(state.mark_collected(i).is_err());
            let rate = collection_rate(&state);
            prop_assert!(rate > last);
            last = rate;
        }
        prop_assert_eq!(last, 100.0);
    }

    #[test]
    fn volume_is_translation_invariant_and_monotone(
        pts in proptest::collection::vec(vec3(2.0), 2..30), shift in vec3(5.0), extra in vec3(4.0)
    ) {
        let cams = |ps: &[Vector3<f64>]| -> Vec<Pose<f64>> { ps.iter().map(|p| Pose::from_translation(-*p)).collect() };
        let q = UnitQuaternion::identity();
        let base = variability_report(&cams(&pts), &q).unwrap();
        let moved: Vec<_> = pts.iter().map(|p| *p + shift).collect();
        let shifted = variability_report(&cams(&moved), &q).unwrap();
        prop_assert!((base.volume - shifted.volume).abs() <= 1e-9 * (1.0 + base.volume));
        let mut more = pts.clone();
        more.push(extra);
        let grown = variability_report(&cams(&more), &q).unwrap();
        prop_assert!(grown.volume >= base.volume - 1e-12);
    }

    #[test]
    fn distance_stats_are_rotation_invariant(pts in proptest::collection::vec(vec3(2.0), 2..30), r in rotation()) {
        let q = UnitQuaternion::identity();
        let looking = |ps: &[Vector3<f64>]| -> Vec<Pose<f64>> {
            ps.iter().filter_map(|p| camera_looking_at(*p, Vector3::zeros()).ok()).collect()
        };
        let rotated: Vec<_> = pts.iter().map(|p| r.rotate(*p)).collect();
        let (a, b) = (looking(&pts), looking(&rotated));
        prop_assume!(a.len() == pts.len() && b.len() == pts.len());
        let ra = variability_report(&a, &q).unwrap();
        let rb = variability_report(&b, &q).unwrap();
        prop_assert!((ra.distance_mean - rb.distance_mean).abs() < 1e-9);
        prop_assert!((ra.distance_std - rb.distance_std).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stored_frames_reload_bit_exact(p in pose(), ts in any::<u32>(), patch in 0usize..10) {
        use hemicap::datastore::{image_relpath, persist_frame, DatasetManifest, PLACEHOLDER_PNG};
        use hemicap::session::{FrameRecord, Mode, Session, SessionConfig};
        use hemicap::{AnnotationRecord, BoundingBox, Store};

        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let session = Session::start("prop", SessionConfig::new(10, Mode::Full), 0).unwrap();
        let session_dir = store.create_session(&DatasetManifest::from_session(&session, true)).unwrap();
        let record = FrameRecord {
            image_id: 1,
            image_ref: image_relpath(1),
            cam_from_layout: p,
            patch_index: patch,
            annotation: AnnotationRecord { image_id: 1, class_id: 1, bbox: BoundingBox { xmin: 1, ymin: 2, xmax: 3, ymax: 4 } },
            timestamp_ms: ts as u64,
        };
        persist_frame(&session_dir, PLACEHOLDER_PNG, &record).unwrap();
        let back = store.load_session("prop").unwrap();
        prop_assert_eq!(&back.frames, &vec![record]);
        let bits = |q: &Pose<f64>| [q.rotation.w, q.rotation.x, q.rotation.y, q.rotation.z, q.translation.x, q.translation.y, q.translation.z].map(f64::to_bits);
        prop_assert_eq!(bits(&back.frames[0].cam_from_layout), bits(&p));
    }
}

#[test]
fn single_precision_pipeline_agrees_with_double() {
    let k64 = k();
    let k32 = hemicap::geometry::CameraIntrinsics::<f32>::new(900.0, 900.0, 640.0, 360.0, 1280, 720).unwrap();
    let spec64 = MarkerSpec::new(0, 0.12).unwrap();
    let spec32 = hemicap::marker_pose::MarkerSpec::<f32>::new(0, 0.12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let gt = common::random_view(&mut rng, &k64, &spec64, 0.6, 50.0);
        let obs = synth_observation(&gt.cast::<f32>(), &k32, &spec32, 0.0, 0, &mut rng).unwrap();
        let est = estimate_marker_pose(&obs, &k32, &spec32).unwrap();
        assert!(angular_distance(&est.rotation.cast::<f64>(), &gt.rotation) < 0.5);
        assert!((est.translation.cast::<f64>() - gt.translation).norm() < 0.006);
        let model = ObjectModel::with_half_extents(1, "o", Pose::identity(), Vector3::new(0.05, 0.05, 0.05));
        let m32 = hemicap::annotate::ObjectModel::<f32>::with_half_extents(1, "o", Pose::identity(), Vector3::new(0.05, 0.05, 0.05));
        let b64 = annotate_bbox(&k64, &gt, &model).unwrap();
        let b32 = annotate_bbox(&k32, &gt.cast::<f32>(), &m32).unwrap();
        for (a, b) in [(b64.xmin, b32.xmin), (b64.ymin, b32.ymin), (b64.xmax, b32.xmax), (b64.ymax, b32.ymax)] {
            assert!(a.abs_diff(b) <= 1);
        }
    }
}
