use ict_core::image::{Mask, RgbImage};
use ict_core::metrics::{diversity, mae, psnr, ssim, MetricReport};
use ict_core::rng;
use rand::Rng;

/// Straight-loop SSIM: explicit window weights, two-pass moments.
fn ssim_reference(a: &RgbImage, b: &RgbImage) -> f64 {
    let (w, h) = a.dims();
    let y = |img: &RgbImage, x: usize, yy: usize| {
        let p = img.pixel(x, yy);
        0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
    };
    let mut weights = [[0.0f64; 11]; 11];
    let mut norm = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / 4.5).exp();
            norm += *v;
        }
    }
    let (c1, c2) = (6.5025, 58.5225);
    let mut sum = 0.0;
    let mut n = 0.0;
    for oy in 0..=h - 11 {
        for ox in 0..=w - 11 {
            let (mut ma, mut mb) = (0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = weights[i][j] / norm;
                    ma += k * y(a, ox + j, oy + i);
                    mb += k * y(b, ox + j, oy + i);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = weights[i][j] / norm;
                    let (da, db) = (y(a, ox + j, oy + i) - ma, y(b, ox + j, oy + i) - mb);
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            n += 1.0;
        }
    }
    sum / n
}

fn noisy(seed: u64, base: &RgbImage, amp: f64) -> RgbImage {
    let mut p = rng::from_seed(seed);
    RgbImage::from_fn(base.width(), base.height(), |x, y| {
        base.pixel(x, y).map(|v| (v + p.random_range(-amp..amp)).clamp(0.0, 255.0).round())
    })
}

#[test]
fn ssim_matches_reference_on_64px_pair() {
    let a = RgbImage::from_fn(64, 64, |x, y| {
        [(x * 4) as f64, (y * 3 + 20) as f64, (((x / 8 + y / 8) % 2) * 200) as f64]
    });
    let b = noisy(3, &a, 40.0);
    let got = ssim(&a, &b).unwrap();
    let want = ssim_reference(&a, &b);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    assert!(got < 1.0 && got > 0.0);
}

#[test]
fn ssim_identity_and_anticorrelation() {
    let a = noisy(9, &RgbImage::filled(32, 32, [128.0; 3]), 60.0);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    let inv = RgbImage::from_fn(32, 32, |x, y| a.pixel(x, y).map(|v| 255.0 - v));
    assert!(ssim(&a, &inv).unwrap() < 0.0);
    assert!(ssim(&RgbImage::new(10, 40), &RgbImage::new(10, 40)).is_err());
}

#[test]
fn psnr_and_mae_goldens() {
    let a = RgbImage::filled(16, 16, [100.0; 3]);
    let one = RgbImage::filled(16, 16, [101.0; 3]);
    assert!((psnr(&a, &one).unwrap() - 48.1308).abs() < 1e-3);
    assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    let (black, white) = (RgbImage::filled(4, 4, [0.0; 3]), RgbImage::filled(4, 4, [255.0; 3]));
    assert_eq!(psnr(&black, &white).unwrap(), 0.0);
    assert_eq!(mae(&black, &white).unwrap(), 1.0);
    assert!((mae(&black, &RgbImage::filled(4, 4, [51.0; 3])).unwrap() - 0.2).abs() < 1e-15);
    assert_eq!(mae(&a, &a).unwrap(), 0.0);
    assert!(psnr(&a, &RgbImage::new(8, 8)).is_err());
}

#[test]
fn symmetry_and_triangle() {
    let base = RgbImage::filled(24, 24, [120.0; 3]);
    for s in 0..10 {
        let (a, b, c) = (noisy(s, &base, 50.0), noisy(s + 100, &base, 50.0), noisy(s + 200, &base, 50.0));
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(mae(&a, &c).unwrap() <= mae(&a, &b).unwrap() + mae(&b, &c).unwrap() + 1e-15);
    }
}

fn diversity_reference(samples: &[RgbImage], mask: &Mask) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0.0;
    for i in 0..samples.len() {
        for j in 0..samples.len() {
            if i >= j {
                continue;
            }
            let (mut ss, mut n) = (0.0, 0.0);
            for y in 0..mask.height() {
                for x in 0..mask.width() {
                    if mask.get(x, y) {
                        let (p, q) = (samples[i].pixel(x, y), samples[j].pixel(x, y));
                        for c in 0..3 {
                            ss += ((p[c] - q[c]) / 255.0).powi(2);
                            n += 1.0;
                        }
                    }
                }
            }
            total += (ss / n).sqrt();
            pairs += 1.0;
        }
    }
    total / pairs
}

#[test]
fn diversity_matches_pair_enumeration() {
    let base = RgbImage::filled(20, 20, [90.0; 3]);
    let mask = Mask::from_fn(20, 20, |x, y| x > 4 && y < 13);
    let s: Vec<RgbImage> = (0..3).map(|i| noisy(i, &base, 80.0)).collect();
    let got = diversity(&s, &mask).unwrap();
    assert!((got - diversity_reference(&s, &mask)).abs() < 1e-12);
    let rev: Vec<RgbImage> = s.iter().rev().cloned().collect();
    assert!((diversity(&rev, &mask).unwrap() - got).abs() < 1e-12);

    let same = vec![base.clone(), base.clone()];
    assert_eq!(diversity(&same, &mask).unwrap(), 0.0);
    let white = RgbImage::from_fn(20, 20, |x, y| if mask.get(x, y) { [255.0; 3] } else { [0.0; 3] });
    assert_eq!(diversity(&[RgbImage::new(20, 20), white], &mask).unwrap(), 1.0);
    assert!(diversity(&s[..1], &mask).is_err());
    assert!(diversity(&s, &Mask::empty(20, 20)).is_err());
}

#[test]
fn report_serializes_infinite_psnr() {
    let a = RgbImage::filled(16, 16, [10.0; 3]);
    let r = MetricReport::compute(&a, &a).unwrap();
    let json = serde_json::to_value(&r).unwrap();
    assert_eq!(json["psnr"], "infinite");
    let back: MetricReport = serde_json::from_value(json).unwrap();
    assert_eq!(back.psnr, f64::INFINITY);
}
