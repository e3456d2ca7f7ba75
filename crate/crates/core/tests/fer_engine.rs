use std::time::Instant;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vitalcam_core::fer::format::encode_layers;
use vitalcam_core::fer::ops::{conv2d, depthwise_conv2d, pointwise_conv2d, softmax, Padding};
use vitalcam_core::fer::reference::{random_model, reference_layers, zero_head_model, REFERENCE_PARAM_COUNT};
use vitalcam_core::fer::{
    classify, evaluate, load_model, save_model, Classifier, Emotion, EmotionDistribution, FerError, LayerKind, Model,
    Tensor,
};
use vitalcam_core::frame::GrayPlane;
use vitalcam_core::synth::generate_face_set;

/// Zero-pads explicitly, then correlates with no bounds checks. Leading pad
/// is `floor(total / 2)` where `total = max((out - 1) * s + k - in, 0)`.
fn pad(t: &Tensor, k: usize, s: usize, padding: Padding) -> (Tensor, usize, usize) {
    let (h, w, c) = t.shape();
    let (oh, ow, top, left, ph, pw) = match padding {
        Padding::Valid => ((h - k) / s + 1, (w - k) / s + 1, 0, 0, h, w),
        Padding::Same => {
            let oh = h.div_ceil(s);
            let ow = w.div_ceil(s);
            let th = ((oh - 1) * s + k).saturating_sub(h);
            let tw = ((ow - 1) * s + k).saturating_sub(w);
            (oh, ow, th / 2, tw / 2, h + th, w + tw)
        }
    };
    let padded = Tensor::from_fn(ph, pw, c, |y, x, ch| {
        if y >= top && y - top < h && x >= left && x - left < w {
            t.at(y - top, x - left, ch)
        } else {
            0.0
        }
    });
    (padded, oh, ow)
}

fn oracle_conv(t: &Tensor, wts: &[f32], n: usize, k: usize, bias: Option<&[f32]>, s: usize, p: Padding) -> Tensor {
    let m = t.channels();
    let (padded, oh, ow) = pad(t, k, s, p);
    Tensor::from_fn(oh, ow, n, |oy, ox, o| {
        let mut acc = bias.map_or(0.0, |b| b[o] as f64);
        for i in 0..m {
            for ky in 0..k {
                for kx in 0..k {
                    let w = wts[((o * m + i) * k + ky) * k + kx] as f64;
                    acc += w * padded.at(oy * s + ky, ox * s + kx, i);
                }
            }
        }
        acc
    })
}

fn oracle_depthwise(t: &Tensor, wts: &[f32], k: usize, s: usize, p: Padding) -> Tensor {
    let (padded, oh, ow) = pad(t, k, s, p);
    Tensor::from_fn(oh, ow, t.channels(), |oy, ox, c| {
        let mut acc = 0.0;
        for ky in 0..k {
            for kx in 0..k {
                acc += wts[(c * k + ky) * k + kx] as f64 * padded.at(oy * s + ky, ox * s + kx, c);
            }
        }
        acc
    })
}

fn oracle_pointwise(t: &Tensor, wts: &[f32], n: usize, s: usize) -> Tensor {
    let m = t.channels();
    let (h, w, _) = t.shape();
    Tensor::from_fn((h - 1) / s + 1, (w - 1) / s + 1, n, |y, x, o| {
        (0..m).map(|i| wts[o * m + i] as f64 * t.at(y * s, x * s, i)).sum()
    })
}

fn random_tensor(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> Tensor {
    Tensor::from_fn(h, w, c, |_, _, _| rng.random_range(-2.0..2.0))
}

fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

struct Config {
    h: usize,
    w: usize,
    m: usize,
    n: usize,
    k: usize,
    s: usize,
    p: Padding,
}

fn random_configs(seed: u64, count: usize) -> Vec<Config> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let c = Config {
            h: rng.random_range(1..10),
            w: rng.random_range(1..10),
            m: rng.random_range(1..5),
            n: rng.random_range(1..5),
            k: [1, 3, 5][rng.random_range(0..3)],
            s: rng.random_range(1..4),
            p: if rng.random() { Padding::Same } else { Padding::Valid },
        };
        if c.p == Padding::Valid && (c.h < c.k || c.w < c.k) {
            continue;
        }
        out.push(c);
    }
    out
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let configs = random_configs(10, 150);
    let mut worst: f64 = 0.0;
    for c in &configs {
        let t = random_tensor(&mut rng, c.h, c.w, c.m);
        let wts = random_weights(&mut rng, c.n * c.m * c.k * c.k);
        let bias = random_weights(&mut rng, c.n);
        let got = conv2d(&t, &wts, c.n, c.k, Some(&bias), c.s, c.p).unwrap();
        let want = oracle_conv(&t, &wts, c.n, c.k, Some(&bias), c.s, c.p);
        worst = worst.max(got.max_abs_diff(&want));
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn spec_example_random_5x5x2() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let t = random_tensor(&mut rng, 5, 5, 2);
    let wts = random_weights(&mut rng, 2 * 2 * 9);
    let got = conv2d(&t, &wts, 2, 3, None, 1, Padding::Same).unwrap();
    assert!(got.max_abs_diff(&oracle_conv(&t, &wts, 2, 3, None, 1, Padding::Same)) <= 1e-6);
}

#[test]
fn depthwise_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for c in &random_configs(11, 150) {
        let t = random_tensor(&mut rng, c.h, c.w, c.m);
        let wts = random_weights(&mut rng, c.m * c.k * c.k);
        let got = depthwise_conv2d(&t, &wts, c.k, None, c.s, c.p).unwrap();
        worst = worst.max(got.max_abs_diff(&oracle_depthwise(&t, &wts, c.k, c.s, c.p)));
    }
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn pointwise_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for c in &random_configs(12, 150) {
        let t = random_tensor(&mut rng, c.h, c.w, c.m);
        let wts = random_weights(&mut rng, c.n * c.m);
        let got = pointwise_conv2d(&t, &wts, c.n, None, c.s).unwrap();
        worst = worst.max(got.max_abs_diff(&oracle_pointwise(&t, &wts, c.n, c.s)));
    }
    assert!(worst <= 1e-5, "{worst}");
}

/// Depthwise `K` then pointwise `P` equals a full conv with
/// `W[n][m][ky][kx] = P[n][m] * K[m][ky][kx]`.
#[test]
fn separable_equals_merged_full_conv() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for c in &random_configs(13, 120) {
        let t = random_tensor(&mut rng, c.h, c.w, c.m);
        let kd = random_weights(&mut rng, c.m * c.k * c.k);
        let pw = random_weights(&mut rng, c.n * c.m);
        let sep = pointwise_conv2d(
            &depthwise_conv2d(&t, &kd, c.k, None, c.s, c.p).unwrap(),
            &pw,
            c.n,
            None,
            1,
        )
        .unwrap();
        let mut merged = vec![0.0f32; c.n * c.m * c.k * c.k];
        for o in 0..c.n {
            for i in 0..c.m {
                for j in 0..c.k * c.k {
                    merged[(o * c.m + i) * c.k * c.k + j] = pw[o * c.m + i] * kd[i * c.k * c.k + j];
                }
            }
        }
        let full = conv2d(&t, &merged, c.n, c.k, None, c.s, c.p).unwrap();
        worst = worst.max(sep.max_abs_diff(&full));
    }
    assert!(worst <= 1e-5, "{worst}");
}

fn random_face(rng: &mut ChaCha8Rng) -> GrayPlane {
    GrayPlane::from_fn(48, 48, |_, _| rng.random_range(0..=255) as f64)
}

#[test]
fn reference_param_count_is_frozen() {
    let m = random_model(0);
    assert_eq!(m.param_count(), REFERENCE_PARAM_COUNT);
    assert_eq!(REFERENCE_PARAM_COUNT, 56_951);
    assert!((50_000..=70_000).contains(&m.param_count()));
}

#[test]
fn zero_head_gives_uniform() {
    let m = zero_head_model(3);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let d = classify(&m, &random_face(&mut rng)).unwrap();
        for p in d.probabilities {
            assert!((p - 1.0 / 7.0).abs() < 1e-12);
        }
    }
}

#[test]
fn outputs_are_distributions() {
    let m = random_model(4);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        let d = classify(&m, &random_face(&mut rng)).unwrap();
        assert!((d.sum() - 1.0).abs() <= 1e-6);
        assert!(d.probabilities.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn forward_is_deterministic() {
    let m = random_model(5);
    let face = random_face(&mut ChaCha8Rng::seed_from_u64(8));
    let a = classify(&m, &face).unwrap();
    let b = classify(&m, &face).unwrap();
    assert_eq!(a.probabilities.map(f64::to_bits), b.probabilities.map(f64::to_bits));
}

#[test]
fn ferw_round_trip_is_bit_stable() {
    let m = random_model(9);
    let bytes = save_model(&m);
    let loaded = load_model(&bytes).unwrap();
    assert_eq!(loaded, m);
    assert_eq!(save_model(&loaded), bytes);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..10 {
        let face = random_face(&mut rng);
        let a = classify(&m, &face).unwrap().probabilities.map(f64::to_bits);
        let b = classify(&loaded, &face).unwrap().probabilities.map(f64::to_bits);
        assert_eq!(a, b);
    }
}

#[test]
fn ferw_corruption() {
    let bytes = save_model(&random_model(1));
    let mut bad = bytes.clone();
    bad[0] ^= 0xff;
    assert_eq!(load_model(&bad), Err(FerError::BadMagic));
    // Layer 0 header ends at 12 + 33; cut a few bytes into its payload.
    assert_eq!(
        load_model(&bytes[..50]),
        Err(FerError::TruncatedFile { layer: Some(0) })
    );
}

/// Every single-field perturbation of the reference graph must fail the
/// shape check. Kernel deltas are odd so the kernel leaves the odd values;
/// batch norm's kernel field carries epsilon and is skipped.
#[test]
fn shape_checker_rejects_single_field_mutations() {
    let base = reference_layers(0, false);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tried = 0;
    for i in 0..base.len() {
        let kind = base[i].kind().unwrap();
        for field in 0..5 {
            for _ in 0..4 {
                let mut layers = base.clone();
                let h = &mut layers[i].header;
                let windowed = matches!(
                    kind,
                    LayerKind::Conv | LayerKind::DepthwiseConv | LayerKind::PointwiseConv | LayerKind::MaxPool
                );
                match field {
                    0 if kind != LayerKind::BatchNorm => {
                        let d: i64 = [-3, -1, 1, 3][rng.random_range(0..4)];
                        h.kernel = (h.kernel as i64 + d).max(0) as u32;
                    }
                    1 => {
                        let d: i64 = [-2, -1, 1, 2, 5][rng.random_range(0..5)];
                        h.in_channels = (h.in_channels as i64 + d).max(0) as u32;
                    }
                    2 => {
                        let d: i64 = [-2, -1, 1, 2, 5][rng.random_range(0..5)];
                        h.out_channels = (h.out_channels as i64 + d).max(0) as u32;
                    }
                    3 if windowed => h.stride = 0,
                    4 if windowed => h.padding = rng.random_range(2..100),
                    _ => continue,
                }
                if layers[i] == base[i] {
                    continue;
                }
                tried += 1;
                let via_model = Model::new(layers.clone());
                assert!(
                    matches!(via_model, Err(FerError::ShapeCheckFailed { .. })),
                    "layer {i} ({kind:?}) field {field} accepted"
                );
                let via_file = load_model(&encode_layers(&layers));
                assert!(matches!(via_file, Err(FerError::ShapeCheckFailed { .. })));
            }
        }
    }
    assert!(tried > 300, "{tried}");
}

#[test]
fn classify_within_time_budget() {
    let m = random_model(2);
    let face = random_face(&mut ChaCha8Rng::seed_from_u64(12));
    classify(&m, &face).unwrap();
    let mut times: Vec<f64> = (0..5)
        .map(|_| {
            let t = Instant::now();
            classify(&m, &face).unwrap();
            t.elapsed().as_secs_f64()
        })
        .collect();
    times.sort_by(f64::total_cmp);
    assert!(times[2] <= 0.22, "median {:.4}s", times[2]);
}

#[test]
fn random_model_accuracy_near_chance() {
    let set = generate_face_set(700, 99).unwrap();
    let e = evaluate(&random_model(17), &set.samples).unwrap();
    assert!((0.08..=0.22).contains(&e.accuracy), "{}", e.accuracy);
    for row in e.matrix {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
    }
}

struct Lookup(Vec<(Vec<u64>, usize)>);

impl Classifier for Lookup {
    fn classify(&self, face: &GrayPlane) -> Result<EmotionDistribution, FerError> {
        let key: Vec<u64> = face.values().iter().map(|v| v.to_bits()).collect();
        let label = self.0.iter().find(|(k, _)| *k == key).map(|(_, l)| *l).unwrap();
        Ok(EmotionDistribution::one_hot(Emotion::ALL[label]))
    }
}

#[test]
fn oracle_stub_on_face_set_is_identity() {
    let set = generate_face_set(70, 3).unwrap();
    let table = set
        .samples
        .iter()
        .map(|(f, l)| (f.values().iter().map(|v| v.to_bits()).collect(), *l))
        .collect();
    let e = evaluate(&Lookup(table), &set.samples).unwrap();
    assert_eq!(e.accuracy, 1.0);
    for (i, row) in e.matrix.iter().enumerate() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert_eq!(row[i], 1.0);
    }
}

#[test]
fn face_set_is_deterministic_balanced_and_separated() {
    let a = generate_face_set(700, 5).unwrap();
    assert_eq!(a, generate_face_set(700, 5).unwrap());
    let mut counts = [0usize; 7];
    for (_, l) in &a.samples {
        counts[*l] += 1;
    }
    assert_eq!(counts, [100; 7]);

    let sub = &a.samples[..70];
    let dist = |x: &GrayPlane, y: &GrayPlane| {
        x.values()
            .iter()
            .zip(y.values())
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for i in 0..sub.len() {
        for j in i + 1..sub.len() {
            let d = dist(&sub[i].0, &sub[j].0);
            if sub[i].1 == sub[j].1 {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                nx += 1;
            }
        }
    }
    assert!(inter / nx as f64 > intra / ni as f64);
}

proptest! {
    #[test]
    fn softmax_shift_invariant(logits in prop::collection::vec(-30.0f64..30.0, 7), c in -500.0f64..500.0) {
        let a = softmax(&Tensor::new(1, 1, 7, logits.clone()).unwrap());
        let b = softmax(&Tensor::new(1, 1, 7, logits.iter().map(|v| v + c).collect()).unwrap());
        prop_assert!(a.max_abs_diff(&b) <= 1e-9);
    }
}
