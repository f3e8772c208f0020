use std::f64::consts::PI;

use ict_core::data::io::{decode_ppm, encode_ppm, load_image, save_image};
use ict_core::data::mask::{gen_freeform_mask, ratio, Band};
use ict_core::data::synth::{render_synth, Pose, ShapeKind, SynthSpec};
use ict_core::image::{Mask, MaskedImage, RgbImage};
use proptest::prelude::*;

/// Winding number of the {5/2} star polygon through its five outer points.
fn star_winding(pose: &Pose, x: f64, y: f64) -> i32 {
    let outer: Vec<(f64, f64)> = (0..5)
        .map(|k| {
            let a = -PI / 2.0 + pose.rotation + k as f64 * 2.0 * PI / 5.0;
            (pose.cx + pose.radius * a.cos(), pose.cy + pose.radius * a.sin())
        })
        .collect();
    let mut wn = 0;
    for k in 0..5 {
        let (x0, y0) = outer[(2 * k) % 5];
        let (x1, y1) = outer[(2 * k + 2) % 5];
        let cross = (x1 - x0) * (y - y0) - (x - x0) * (y1 - y0);
        if y0 <= y {
            if y1 > y && cross > 0.0 {
                wn += 1;
            }
        } else if y1 <= y && cross < 0.0 {
            wn -= 1;
        }
    }
    wn
}

#[test]
fn identity_pentagram_matches_winding_rasterizer() {
    for side in [32, 64, 100] {
        let spec = SynthSpec::identity(ShapeKind::Pentagram, side);
        let img = render_synth(&spec);
        let fg = spec.foreground.map(f64::from);
        let rendered = img.pixels().filter(|p| *p == fg).count();
        let oracle = (0..side * side)
            .filter(|&i| star_winding(&spec.pose, (i % side) as f64 + 0.5, (i / side) as f64 + 0.5) != 0)
            .count();
        assert_eq!(rendered, oracle, "side {side}");
        assert!(oracle > side * side / 10);
    }
}

#[test]
fn gradient_is_linear_in_x() {
    let mut spec = SynthSpec::identity(ShapeKind::Gradient, 40);
    spec.foreground = [200, 100, 0];
    spec.background = [0, 50, 250];
    let img = render_synth(&spec);
    for y in [0, 17, 39] {
        for x in 1..39 {
            for c in 0..3 {
                let d2 = img.pixel(x + 1, y)[c] - 2.0 * img.pixel(x, y)[c] + img.pixel(x - 1, y)[c];
                assert!(d2.abs() < 1e-9);
            }
        }
        assert_eq!(img.pixel(5, y), img.pixel(5, 0));
    }
}

#[test]
fn rendering_is_deterministic() {
    for kind in [ShapeKind::Pentagram, ShapeKind::Polygon(6), ShapeKind::Stripes, ShapeKind::Gradient] {
        let spec = SynthSpec::random(kind, 48, 77);
        assert_eq!(render_synth(&spec), render_synth(&spec));
    }
}

#[test]
fn mask_band_endpoints() {
    assert_eq!(gen_freeform_mask(32, 32, Band::new(0.0, 0.0), 1).unwrap(), Mask::empty(32, 32));
    assert_eq!(gen_freeform_mask(32, 32, Band::new(1.0, 1.0), 1).unwrap(), Mask::full(32, 32));
    let half = Mask::from_fn(10, 10, |_, y| y < 5);
    assert_eq!(ratio(&half), 0.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn masks_land_in_band_and_repeat(seed in any::<u64>(), large in any::<bool>(), side in 32usize..80) {
        let band = if large { Band::LARGE } else { Band::SMALL };
        let m = gen_freeform_mask(side, side, band, seed).unwrap();
        prop_assert!(band.contains(ratio(&m)));
        prop_assert_eq!(m, gen_freeform_mask(side, side, band, seed).unwrap());
    }

    #[test]
    fn masked_image_zeroes_exactly_the_hole(seed in any::<u64>()) {
        let img = RgbImage::from_fn(24, 24, |x, y| [1.0 + x as f64, 2.0 + y as f64, 3.0]);
        let mask = gen_freeform_mask(24, 24, Band::SMALL, seed).unwrap();
        let m = MaskedImage::new(&img, &mask).unwrap();
        for y in 0..24 {
            for x in 0..24 {
                let expect = if mask.get(x, y) { [0.0; 3] } else { img.pixel(x, y) };
                prop_assert_eq!(m.image().pixel(x, y), expect);
            }
        }
    }
}

#[test]
fn ppm_and_png_round_trip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let img = render_synth(&SynthSpec::random(ShapeKind::Pentagram, 33, 4));
    for name in ["a.png", "a.ppm"] {
        let p = dir.path().join(name);
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }
    let bytes = encode_ppm(&img);
    assert_eq!(decode_ppm(&bytes).unwrap(), img);
    assert!(decode_ppm(&bytes[..bytes.len() - 1]).is_err());
}
