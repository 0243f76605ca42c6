use evrl_core::scene::{render, Background, CameraModel, SceneObject, Vec3};
use proptest::prelude::*;

fn sixteenths(lo: i32, hi: i32) -> impl Strategy<Value = f64> {
    (lo..hi).prop_map(|k| k as f64 / 16.0)
}

fn object() -> impl Strategy<Value = SceneObject> {
    (any::<bool>(), sixteenths(8, 64), sixteenths(-32, 32), sixteenths(0, 24), sixteenths(1, 12)).prop_map(
        |(sphere, x, y, z, size)| {
            let c = Vec3::new(x, y, z);
            if sphere {
                SceneObject::sphere(c, size)
            } else {
                SceneObject::cube(c, size)
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn horizontal_translation_leaves_frame_unchanged(
        scene in prop::collection::vec(object(), 0..4),
        yaw in sixteenths(-50, 50),
        tx in sixteenths(-1600, 1600),
        ty in sixteenths(-1600, 1600),
    ) {
        let bg = Background::default();
        let cam = CameraModel::at(Vec3::ZERO, yaw).with_resolution(48, 36);
        let shift = Vec3::new(tx, ty, 0.0);
        let moved: Vec<SceneObject> = scene
            .iter()
            .map(|o| SceneObject { center: o.center + shift, ..*o })
            .collect();
        let moved_cam = CameraModel::at(shift, yaw).with_resolution(48, 36);
        let a = render(&scene, &cam, &bg);
        let b = render(&moved, &moved_cam, &bg);
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&a.values), bits(&b.values));
    }
}
