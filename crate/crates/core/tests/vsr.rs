use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vqd_core::autograd::Graph;
use vqd_core::degrade::DegradationConfig;
use vqd_core::resample::{upscale, ResizeMethod};
use vqd_core::vqgan::{MsVqgan, MsVqganConfig, Stage};
use vqd_core::vsr::*;
use vqd_core::{Clip, Error, Frame};

fn frame(w: usize, h: usize, rng: &mut ChaCha8Rng) -> Frame {
    Frame::from_fn(w, h, |_, _, _| rng.gen())
}

fn clip(n: usize, side: usize, seed: u64) -> Clip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Clip::new((0..n).map(|_| frame(side, side, &mut rng)).collect()).unwrap()
}

/// Tiny network with a non-zero output head, so frames actually interact.
fn live_net(seed: u64) -> VsrNet {
    let mut net = VsrNet::new(VsrConfig::tiny(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    for name in ["vsr.out.weight", "vsr.out.bias"] {
        for v in net.params.get_mut(name).unwrap().data_mut() {
            *v = rng.gen_range(-0.1..0.1);
        }
    }
    net
}

#[test]
fn x4_step_shapes() {
    let net = live_net(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = frame(64, 64, &mut rng);
    let st = net.initial_state(&f);
    let (sr, st2) = net.sr_step(&f, &f, &f, &st).unwrap();
    assert_eq!(sr.dims(), (256, 256));
    assert_eq!(st2.dims(), (64, 64));
    assert_eq!(st2.features.shape(), &[1, 16, 64, 64]);
    assert!(sr.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn mismatched_step_inputs_are_shape_errors() {
    let net = live_net(1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = frame(16, 16, &mut rng);
    let b = frame(16, 8, &mut rng);
    let st = net.initial_state(&a);
    assert!(matches!(net.sr_step(&a, &b, &a, &st), Err(Error::Shape(_))));
    assert!(matches!(net.sr_step(&b, &b, &b, &st), Err(Error::Shape(_))));
}

#[test]
fn hundred_frame_clip() {
    let net = live_net(4);
    let lr = clip(100, 64, 5);
    let sr = net.sr_clip(&lr).unwrap();
    assert_eq!((sr.len(), sr.dims()), (100, Some((256, 256))));
}

#[test]
fn zero_head_is_exact_bicubic() {
    let mut net = live_net(6);
    net.zero_residual_head();
    let lr = clip(4, 24, 7);
    let sr = net.sr_clip(&lr).unwrap();
    for (s, l) in sr.frames.iter().zip(&lr.frames) {
        let b = upscale(l, 4, ResizeMethod::Bicubic).unwrap().clamp01();
        assert_eq!(s, &b);
    }
    // a freshly built network starts there too
    let fresh = VsrNet::new(VsrConfig::tiny(), 9).unwrap();
    let f = &lr.frames[0];
    let (s, _) = fresh.sr_step(f, f, f, &fresh.initial_state(f)).unwrap();
    assert_eq!(s, upscale(f, 4, ResizeMethod::Bicubic).unwrap().clamp01());
}

#[test]
fn clip_matches_an_explicit_step_by_step_reference() {
    let net = live_net(10);
    let lr = clip(5, 16, 11);
    let sr = net.sr_clip(&lr).unwrap();
    let f = &lr.frames;
    let n = f.len();
    // first frame: prev = cur and a zero state
    let zero = RecurrentState::zeros(1, 16, 16, 16);
    let (s0, mut state) = net.sr_step(&f[0], &f[0], &f[1], &zero).unwrap();
    assert_eq!(sr.frames[0], s0);
    for t in 1..n {
        let next = &f[(t + 1).min(n - 1)];
        let (s, st) = net.sr_step(&f[t - 1], &f[t], next, &state).unwrap();
        assert_eq!(sr.frames[t], s, "frame {t}");
        state = st;
    }
    // a non-zero initial state would have changed frame 0
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let other = RecurrentState {
        features: vqd_core::Tensor::from_fn(vec![1, 16, 16, 16], |_| rng.gen_range(0.0..1.0)),
    };
    let (s0b, _) = net.sr_step(&f[0], &f[0], &f[1], &other).unwrap();
    assert_ne!(s0, s0b);
}

#[test]
fn streaming_equals_whole_clip_unroll() {
    let net = live_net(13);
    let lr = clip(20, 16, 14);
    let mut g = Graph::no_grad();
    let tensors: Vec<_> = lr.frames.iter().map(|f| f.to_tensor::<f32>()).collect();
    let nodes = net.unroll_nodes(&mut g, &tensors).unwrap();
    let batch: Vec<Frame> = nodes
        .iter()
        .map(|&id| Frame::from_tensor(&g.value(id).map(|v| v.clamp(0.0, 1.0)), 0).unwrap())
        .collect();

    let mut stream = SrStream::new(&net);
    let mut streamed = Vec::new();
    for f in &lr.frames {
        streamed.extend(stream.push(f.clone()).unwrap());
    }
    streamed.extend(stream.finish().unwrap());
    assert_eq!(streamed.len(), 20);
    for (t, (a, b)) in batch.iter().zip(&streamed).enumerate() {
        assert_eq!(a.data(), b.data(), "frame {t}");
    }
    assert_eq!(net.sr_clip(&lr).unwrap().frames, streamed);
}

#[test]
fn single_frame_and_empty_clips() {
    let net = live_net(15);
    let lr = clip(1, 16, 16);
    let sr = net.sr_clip(&lr).unwrap();
    assert_eq!((sr.len(), sr.dims()), (1, Some((64, 64))));
    let f = &lr.frames[0];
    let (s, _) = net.sr_step(f, f, f, &net.initial_state(f)).unwrap();
    assert_eq!(sr.frames[0], s);
    assert!(matches!(net.sr_clip(&Clip::new(vec![]).unwrap()), Err(Error::Empty(_))));
    let stream = SrStream::new(&net);
    assert_eq!(stream.finish().unwrap(), None);
}

#[test]
fn one_frame_lookahead_only() {
    let net = live_net(17);
    let lr = clip(8, 16, 18);
    let base = net.sr_clip(&lr).unwrap();
    for t in 0..6 {
        let mut p = lr.clone();
        for v in p.frames[t + 2].data_mut() {
            *v = 1.0 - *v;
        }
        let out = net.sr_clip(&p).unwrap();
        for s in 0..=t {
            assert_eq!(out.frames[s], base.frames[s], "frame {s} moved when frame {} changed", t + 2);
        }
        // the lookahead itself is live
        assert_ne!(out.frames[t + 1], base.frames[t + 1]);
    }
}

#[test]
fn step_input_has_no_sr_channels() {
    let net = VsrNet::new(VsrConfig::tiny(), 0).unwrap();
    let w = net.params.get("vsr.conv_in.weight").unwrap();
    // three LR frames plus the hidden state; no room for an upsampled frame
    assert_eq!(w.shape()[1], 3 * 3 + net.config().state_channels);
}

#[test]
fn paper_preset_echo() {
    let p = VsrConfig::paper();
    assert_eq!((p.stage1.steps, p.stage1.batch_size, p.stage1.lr), (300_000, 16, 1e-4));
    assert_eq!((p.stage2.steps, p.stage2.lr), (300_000, 5e-5));
    assert_eq!(p.scale, 4);
    let w = p.loss_weights;
    assert_eq!((w.l1, w.perceptual, w.gan), (1.0, 1.0, 0.1));
    let n = VsrNet::new(p, 0).unwrap().num_parameters() as f64;
    assert!((n - 1.47e6).abs() <= 0.05 * 1.47e6, "{n}");
    let mut bad = VsrConfig::tiny();
    bad.scale = 2;
    assert!(matches!(VsrNet::new(bad, 0), Err(Error::Config(_))));
}

fn toy_cfg() -> VsrConfig {
    let mut c = VsrConfig::tiny();
    c.channels = 8;
    c.state_channels = 8;
    c.res_blocks = 1;
    c.crop_size = 32;
    c.discriminator.base_channels = 8;
    c.discriminator.layers = 2;
    c
}

fn hr_clips(n: usize, seed: u64) -> Vec<Clip> {
    let cfg = vqd_core::dataset::SynthConfig {
        clips: n,
        size: 64,
        frames_per_clip: 4,
        ..Default::default()
    };
    vqd_core::dataset::synth_clips(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn degradation_model() -> MsVqgan<f32> {
    let cfg = MsVqganConfig {
        base_channels: 4,
        embed_dim: 4,
        // the default level cap is 50, so the codebook must hold at least that many
        codebook_size: 64,
        norm_groups: 2,
        res_blocks: 1,
        crop_size: 32,
        ..MsVqganConfig::tiny()
    };
    MsVqgan::new(cfg.with_stage(Stage::Stage2), 3).unwrap()
}

struct Log(Vec<VsrStepRecord>);

impl VsrObserver for Log {
    fn on_step(&mut self, r: &VsrStepRecord) -> vqd_core::Result<vqd_core::vqgan::Control> {
        self.0.push(r.clone());
        Ok(vqd_core::vqgan::Control::Continue)
    }
}

#[test]
fn stage2_toy_run_stays_finite() {
    let cfg = toy_cfg();
    let hr = hr_clips(4, 20);
    let deg = DegradationConfig::default();
    let model = degradation_model();
    let init = VsrNet::new(cfg.clone(), 21).unwrap();
    let setup = VsrTrainSetup {
        stage: 2,
        cfg: &cfg,
        degradation: &deg,
        degradation_model: Some(&model),
        init: Some(&init),
        seed: 22,
        workers: 1,
    };
    let mut log = Log(Vec::new());
    train_vsr(&hr, &setup, &mut log).unwrap();
    assert_eq!(log.0.len(), cfg.stage2.steps);
    for r in &log.0 {
        let l = &r.losses;
        assert!(l.l1.is_finite() && l.total.is_finite());
        assert!(l.perceptual.unwrap().is_finite() && l.gan.unwrap().is_finite());
        let d = r.discriminator.unwrap();
        assert!(d.discriminator.is_finite() && d.generator.is_finite(), "step {}", r.step);
    }
}

#[test]
fn stage2_requires_both_models() {
    let cfg = toy_cfg();
    let hr = hr_clips(1, 23);
    let deg = DegradationConfig::default();
    let init = VsrNet::new(cfg.clone(), 0).unwrap();
    let mut setup = VsrTrainSetup {
        stage: 2,
        cfg: &cfg,
        degradation: &deg,
        degradation_model: None,
        init: Some(&init),
        seed: 0,
        workers: 1,
    };
    assert!(matches!(train_vsr(&hr, &setup, &mut ()), Err(Error::Config(_))));
    let s1 = MsVqgan::<f32>::new(MsVqganConfig::tiny(), 0).unwrap();
    setup.degradation_model = Some(&s1);
    assert!(matches!(train_vsr(&hr, &setup, &mut ()), Err(Error::Stage { .. })));
    let model = degradation_model();
    setup.degradation_model = Some(&model);
    setup.init = None;
    assert!(matches!(train_vsr(&hr, &setup, &mut ()), Err(Error::Config(_))));
    setup.stage = 3;
    assert!(matches!(train_vsr(&hr, &setup, &mut ()), Err(Error::Config(_))));
}

#[test]
fn stage1_uses_basic_operators_only() {
    let deg = DegradationConfig::default();
    assert!(!stage_degradation(1, &deg).vqd.enable);
    assert!(stage_degradation(2, &deg).vqd.enable);
    // no model needed in stage 1 even though the config enables the stage
    let mut cfg = toy_cfg();
    cfg.stage1.steps = 2;
    let setup = VsrTrainSetup {
        stage: 1,
        cfg: &cfg,
        degradation: &deg,
        degradation_model: None,
        init: None,
        seed: 0,
        workers: 1,
    };
    let t = train_vsr(&hr_clips(1, 24), &setup, &mut ()).unwrap();
    assert_eq!(t.step, 2);
}

#[test]
fn worker_count_does_not_change_training() {
    let mut cfg = toy_cfg();
    cfg.stage1.steps = 3;
    let hr = hr_clips(3, 25);
    let deg = DegradationConfig::default();
    let run = |workers| {
        let setup = VsrTrainSetup {
            stage: 1,
            cfg: &cfg,
            degradation: &deg,
            degradation_model: None,
            init: None,
            seed: 26,
            workers,
        };
        train_vsr(&hr, &setup, &mut ()).unwrap().to_checkpoint().unwrap().to_bytes().unwrap()
    };
    assert_eq!(run(1), run(3));
}

#[test]
fn checkpoint_round_trip() {
    let net = live_net(27);
    let ck = to_checkpoint(&net, None, 1, 5).unwrap();
    let bytes = ck.to_bytes().unwrap();
    let back = vqd_core::checkpoint::Checkpoint::from_bytes(&bytes).unwrap();
    let (n2, d) = from_checkpoint(&back).unwrap();
    assert!(d.is_none());
    let lr = clip(3, 16, 28);
    assert_eq!(net.sr_clip(&lr).unwrap(), n2.sr_clip(&lr).unwrap());
    assert_eq!(to_checkpoint(&n2, None, 1, 5).unwrap().to_bytes().unwrap(), bytes);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn output_is_four_times_input(frames in 1usize..5, h in 4usize..20, w in 4usize..20, seed in any::<u64>()) {
        let net = live_net(seed % 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let lr = Clip::new((0..frames).map(|_| frame(w, h, &mut rng)).collect()).unwrap();
        let sr = net.sr_clip(&lr).unwrap();
        prop_assert_eq!(sr.len(), frames);
        prop_assert_eq!(sr.dims(), Some((4 * h, 4 * w)));
        for f in &sr.frames {
            prop_assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn frames_beyond_lookahead_never_matter(seed in any::<u64>(), t in 0usize..3) {
        let net = live_net(seed % 5);
        let lr = clip(6, 8, seed);
        let base = net.sr_clip(&lr).unwrap();
        let mut p = lr.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for f in &mut p.frames[t + 2..] {
            *f = frame(8, 8, &mut rng);
        }
        let out = net.sr_clip(&p).unwrap();
        prop_assert_eq!(&out.frames[..=t], &base.frames[..=t]);
    }
}
