use std::time::Instant;

use adawarp::image::psnr;
use adawarp::sim::suite::{smooth_scene, two_layer_scene};
use adawarp::sim::{gt_displacement, render_gs, render_rs, SceneSpec};
use adawarp::warp::backward_warp;

#[test]
fn gt_displacement_undoes_the_shutter_on_smooth_scenes() {
    let start = Instant::now();
    for seed in 0..10 {
        let params = smooth_scene(seed);
        assert_eq!((params.height, params.width), (64, 64));
        assert!(params.velocity[0].hypot(params.velocity[1]) <= 3.0);
        let scene = SceneSpec::<f64>::from_params(&params).unwrap();
        let rs = render_rs(&scene, 1.0, 0.8).unwrap();
        let gs = render_gs(&scene, 1.0).unwrap();
        let gt = gt_displacement(&scene, 1.0, 0.8).unwrap();
        let warped = backward_warp(&rs, &gt.modulated(0)).unwrap();
        let p = psnr(&warped.interior(3).unwrap(), &gs.interior(3).unwrap()).unwrap();
        assert!(p >= 40.0, "seed {seed}: {p:.2} dB");
        // the shutter does distort the frame
        assert!(psnr(&rs, &gs).unwrap() < p);
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn zero_readout_is_a_global_shutter() {
    for seed in 0..3 {
        for params in [smooth_scene(seed), two_layer_scene(seed)] {
            let scene = SceneSpec::<f64>::from_params(&params).unwrap();
            for t in [0.0, 1.0, 2.5] {
                let rs = render_rs(&scene, t, 0.0).unwrap();
                let gs = render_gs(&scene, t).unwrap();
                assert!(rs.data().iter().zip(gs.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            let gt = gt_displacement(&scene, 1.0, 0.0).unwrap();
            assert!(gt.fields.iter().all(|&v| v.abs() < 1e-12));
        }
    }
}

#[test]
fn render_outside_the_time_span_fails() {
    let scene = SceneSpec::<f64>::from_params(&smooth_scene(0)).unwrap();
    let [_, end] = scene.params().time_span;
    assert!(render_gs(&scene, end + 1.0).is_err());
    assert!(render_rs(&scene, end, 0.8).is_err());
}
