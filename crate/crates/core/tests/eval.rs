use std::sync::Mutex;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqd_core::eval::*;
use vqd_core::{Clip, Error, Frame};

fn random_frame(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame {
    Frame::from_fn(w, h, |_, _, _| rng.gen())
}

fn to_u8(v: f32) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() as f64
}

fn reference_psnr(a: &Frame, b: &Frame) -> f64 {
    let n = a.data().len() as f64;
    let mse = a.data().iter().zip(b.data()).map(|(&x, &y)| (to_u8(x) - to_u8(y)).powi(2)).sum::<f64>() / n;
    if mse == 0.0 {
        100.0
    } else {
        10.0 * (255.0 * 255.0 / mse).log10()
    }
}

/// Direct per-window SSIM with a full 2-D Gaussian.
fn reference_ssim(a: &Frame, b: &Frame) -> f64 {
    let (h, w) = a.dims();
    let luma = |f: &Frame, y: usize, x: usize| {
        0.299 * to_u8(f.get(0, y, x)) + 0.587 * to_u8(f.get(1, y, x)) + 0.114 * to_u8(f.get(2, y, x))
    };
    let mut win = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = win[i][j] / total;
                    let p = luma(a, y0 + i, x0 + j);
                    let q = luma(b, y0 + i, x0 + j);
                    mx += k * p;
                    my += k * q;
                    sxx += k * p * p;
                    syy += k * q * q;
                    sxy += k * p * q;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

#[test]
fn identical_frames_hit_the_cap() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = random_frame(16, 16, &mut rng);
    assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    assert_eq!(PSNR_CAP, 100.0);
}

#[test]
fn ten_level_offset_closed_form() {
    let a = Frame::filled(32, 32, [50.0 / 255.0; 3]);
    let b = Frame::filled(32, 32, [60.0 / 255.0; 3]);
    let want = 20.0 * (255.0f64 / 10.0).log10();
    assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-6);
    assert!((want - 28.13).abs() < 0.005);
}

#[test]
fn psnr_matches_reference_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let a = random_frame(20, 12, &mut rng);
        let b = random_frame(20, 12, &mut rng);
        let (got, want) = (psnr(&a, &b).unwrap(), reference_psnr(&a, &b));
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

#[test]
fn ssim_matches_sliding_window_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for i in 0..50 {
        let a = random_frame(24, 18, &mut rng);
        // half the pairs are correlated so the score is not always near zero
        let b = if i % 2 == 0 {
            random_frame(24, 18, &mut rng)
        } else {
            Frame::from_fn(24, 18, |c, y, x| (a.get(c, y, x) + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0))
        };
        let (got, want) = (ssim(&a, &b).unwrap(), reference_ssim(&a, &b));
        assert!((got - want).abs() < 1e-6, "pair {i}: {got} vs {want}");
    }
}

#[test]
fn ssim_identity_is_exactly_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random_frame(16, 16, &mut rng);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
}

#[test]
fn inverted_checkerboard_is_anticorrelated() {
    let a = Frame::from_fn(32, 32, |_, y, x| ((x / 4 + y / 4) % 2) as f32);
    let inv = Frame::from_fn(32, 32, |c, y, x| 1.0 - a.get(c, y, x));
    let s = ssim(&a, &inv).unwrap();
    assert!(s < 0.0, "{s}");
    assert!(s >= -1.0);
}

#[test]
fn metric_errors() {
    let a = Frame::filled(16, 16, [0.5; 3]);
    let b = Frame::filled(16, 12, [0.5; 3]);
    assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
    assert!(matches!(ssim(&a, &b), Err(Error::Shape(_))));
    let small = Frame::filled(10, 16, [0.5; 3]);
    assert!(matches!(ssim(&small, &small), Err(Error::Shape(_))));
    let c1 = Clip::new(vec![a.clone(); 2]).unwrap();
    let c2 = Clip::new(vec![a.clone(); 3]).unwrap();
    assert!(matches!(clip_mean(&c1, &c2, psnr), Err(Error::Shape(_))));
    assert!(matches!(clip_mean(&Clip::default(), &Clip::default(), psnr), Err(Error::Empty(_))));
}

fn busy_clip(n: usize, side: usize, seed: u64) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Clip::new((0..n).map(|_| random_frame(side, side, &mut rng)).collect()).unwrap()
}

#[test]
fn constant_scorer_returns_its_constant() {
    let cfg = EvalProtocolConfig {
        crop_size: 16,
        ..Default::default()
    };
    for seed in 0..3 {
        let r = nr_iqa_protocol(&busy_clip(25, 20, seed), &ConstantScorer(0.5), &cfg).unwrap();
        assert_eq!(r.mean, 0.5);
    }
}

#[test]
fn paper_protocol_counts() {
    let cfg = EvalProtocolConfig::default();
    assert_eq!((cfg.frame_stride, cfg.crops_per_frame, cfg.crop_size, cfg.repetitions), (10, 20, 224, 3));
    let clip = Clip::new(vec![Frame::filled(240, 232, [0.4; 3]); 100]).unwrap();
    let seen = Mutex::new(Vec::new());
    let scorer = |c: &Frame| -> vqd_core::Result<f64> {
        seen.lock().unwrap().push(c.dims());
        Ok(1.0)
    };
    let r = nr_iqa_protocol(&clip, &scorer, &cfg).unwrap();
    assert_eq!(r.frames, (0..100).step_by(10).collect::<Vec<_>>());
    assert_eq!(r.scorer_calls_per_repetition, 200);
    assert_eq!(r.per_repetition.len(), 3);
    let seen = seen.into_inner().unwrap();
    assert_eq!(seen.len(), 600);
    assert!(seen.iter().all(|&d| d == (224, 224)));
}

/// Records the top-left pixel of every crop, which pins its position on a
/// frame whose pixels encode their coordinates.
fn positions(clip: &Clip, cfg: &EvalProtocolConfig) -> Vec<(u32, u32)> {
    let seen = Mutex::new(Vec::new());
    let scorer = |c: &Frame| -> vqd_core::Result<f64> {
        seen.lock().unwrap().push(((c.get(0, 0, 0) * 255.0).round() as u32, (c.get(1, 0, 0) * 255.0).round() as u32));
        Ok(0.0)
    };
    nr_iqa_protocol(clip, &scorer, cfg).unwrap();
    seen.into_inner().unwrap()
}

#[test]
fn crop_positions_are_seeded_and_reach_the_border() {
    let coords = Frame::from_fn(20, 20, |c, y, x| match c {
        0 => y as f32 / 255.0,
        1 => x as f32 / 255.0,
        _ => 0.0,
    });
    let clip = Clip::new(vec![coords; 11]).unwrap();
    let cfg = EvalProtocolConfig {
        crop_size: 16,
        crops_per_frame: 200,
        seed: 7,
        ..Default::default()
    };
    let a = positions(&clip, &cfg);
    assert_eq!(a, positions(&clip, &cfg));
    assert_ne!(a, positions(&clip, &EvalProtocolConfig { seed: 8, ..cfg }));
    // inclusive range: both 0 and 20 - 16 appear on each axis
    for axis in [0usize, 1] {
        let vals: Vec<u32> = a.iter().map(|p| if axis == 0 { p.0 } else { p.1 }).collect();
        assert_eq!(vals.iter().min(), Some(&0));
        assert_eq!(vals.iter().max(), Some(&4));
    }
}

#[test]
fn seed_spread_stays_within_the_crop_score_range() {
    let clip = vqd_core::dataset::synth_clips(
        &vqd_core::dataset::SynthConfig {
            clips: 1,
            frames_per_clip: 20,
            ..Default::default()
        },
        &mut ChaCha8Rng::seed_from_u64(9),
    )
    .unwrap()
    .remove(0);
    let cfg = EvalProtocolConfig {
        crop_size: 32,
        seed: 1,
        ..Default::default()
    };
    let s = GradientEnergyScorer;
    let a = nr_iqa_protocol(&clip, &s, &cfg).unwrap();
    let b = nr_iqa_protocol(&clip, &s, &EvalProtocolConfig { seed: 2, ..cfg }).unwrap();
    assert_eq!(a, nr_iqa_protocol(&clip, &s, &cfg).unwrap());
    // any average of crop scores lies between the extreme crop scores
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &t in &a.frames {
        for top in 0..=32 {
            for left in 0..=32 {
                let v = s.score(&clip.frames[t].crop(top, left, 32, 32).unwrap()).unwrap();
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let spread = (a.mean - b.mean).abs();
    println!("seed 1: {:.6}  seed 2: {:.6}  spread {spread:.6}  bound {:.6}", a.mean, b.mean, hi - lo);
    assert!(spread < hi - lo);
    assert!(a.mean >= lo && a.mean <= hi && b.mean >= lo && b.mean <= hi);
}

#[test]
fn small_frames_are_named_in_the_error() {
    let mut frames = vec![Frame::filled(32, 32, [0.0; 3]); 21];
    frames[20] = Frame::filled(32, 32, [0.0; 3]);
    let clip = Clip::new(frames).unwrap();
    let cfg = EvalProtocolConfig {
        crop_size: 33,
        ..Default::default()
    };
    match nr_iqa_protocol(&clip, &ConstantScorer(0.0), &cfg) {
        Err(Error::Shape(m)) => assert!(m.contains("frame 0"), "{m}"),
        other => panic!("{other:?}"),
    }
    let bad = EvalProtocolConfig {
        repetitions: 0,
        ..Default::default()
    };
    assert!(matches!(nr_iqa_protocol(&clip, &ConstantScorer(0.0), &bad), Err(Error::Config(_))));
}

#[test]
fn report_rows_mean_and_reproducible_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let rows: Vec<ReportRow> = ["a", "b", "c"]
        .iter()
        .enumerate()
        .map(|(i, id)| ReportRow {
            clip_id: id.to_string(),
            metric: "psnr".into(),
            value: 20.0 + i as f64 * 1.5,
        })
        .collect();
    let p1 = dir.path().join("one.csv");
    let p2 = dir.path().join("two.csv");
    save_report(&rows, &p1).unwrap();
    save_report(&rows, &p2).unwrap();
    let bytes = std::fs::read(&p1).unwrap();
    assert_eq!(bytes, std::fs::read(&p2).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("clip_id,metric,value\n"));
    let back = read_report(&p1).unwrap();
    assert_eq!(back.len(), 4);
    assert_eq!(&back[..3], &rows[..]);
    assert_eq!(back[3].clip_id, "mean");
    assert_eq!(back[3].value, 21.5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn metrics_are_symmetric(seed in any::<u64>(), w in 11usize..20, h in 11usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_frame(w, h, &mut rng);
        let b = random_frame(w, h, &mut rng);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        let s = ssim(&a, &b).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
    }

    #[test]
    fn psnr_falls_as_error_grows(seed in any::<u64>(), k in 1usize..200) {
        // the same offset on more samples is a strictly larger MSE
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Frame::from_fn(16, 16, |_, _, _| rng.gen_range(10..200) as f32 / 255.0);
        let bump = |n: usize| {
            let mut f = base.clone();
            for v in &mut f.data_mut()[..n] {
                *v += 20.0 / 255.0;
            }
            f
        };
        prop_assert!(psnr(&base, &bump(k)).unwrap() > psnr(&base, &bump(k + 1)).unwrap());
    }
}
