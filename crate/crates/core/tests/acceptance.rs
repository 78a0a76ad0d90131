//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails. `cargo test --test acceptance -- 3 7`
//! runs a subset.

mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use facemark::bioeval::{
    embed_images, pair_scores, tar_at_far, train_embedder, welch_t_test, student_t_two_sided_p, EmbedderConfig,
    LabeledImage, PairConfig, PairingMode, ScoreSet, SourceTag,
};
use facemark::imageops::{dct8x8, decode_ppm, encode_ppm, idct8x8, jpeg_roundtrip, psnr, Image};
use facemark::msgcodec::random_message;
use facemark::pipeline::config::{ConfigMap, SweepSpec, TrainConfig, VerifyConfig};
use facemark::pipeline::synth::{identities, textures, TextureParams};
use facemark::pipeline::{evaluate_watermark, run_sweep, run_verification, train_watermark, SWEEP_HEADER};
use facemark::tensorgrad::{finite_diff_check, BnMode, Bound, Graph, NodeId, ParamSet, RunningStats, Tensor, TensorError};
use facemark::watermarknet::{
    build_model, decode_logits_batch, encode_batch, load_model, save_model, EncoderOutput, WatermarkConfig,
    WatermarkModel,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Collects sub-checks of one criterion.
#[derive(Default)]
struct Report {
    notes: Vec<String>,
    failures: Vec<String>,
}

impl Report {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        let what = what.into();
        if ok {
            self.notes.push(what);
        } else {
            self.failures.push(what);
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

fn main() {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, fn(&mut Report)); 8] = [
        (1, "gradient correctness", gradients),
        (2, "oracle equivalence", oracles),
        (3, "toy watermark training", toy_training),
        (4, "robustness trend", robustness),
        (5, "JPEG codec", jpeg_codec),
        (6, "statistics", statistics),
        (7, "verification harness", verification),
        (8, "determinism & formats", determinism),
    ];
    let mut failed = 0;
    for (n, name, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let mut report = Report::default();
        let outcome = panic::catch_unwind(AssertUnwindSafe(|| run(&mut report)));
        if let Err(e) = outcome {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            report.failures.push(format!("panicked: {msg}"));
        }
        let ok = report.failures.is_empty();
        failed += usize::from(!ok);
        let detail = if ok { report.notes.join("; ") } else { report.failures.join("; ") };
        println!(
            "criterion {n} {name}: {} ({:.1}s) — {detail}",
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

// ---------------------------------------------------------------------------
// 1. Gradients

const GRAD_TOL: f64 = 1e-4;
const CASES: usize = 20;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

// mse against a fixed pseudo-random target of the output's shape, so every
// output element carries a distinct upstream gradient.
fn head(g: &mut Graph, out: NodeId) -> Result<NodeId, TensorError> {
    let shape = g.value(out).shape().to_vec();
    let target = rand_tensor(&mut ChaCha8Rng::seed_from_u64(99), &shape, -1.0, 1.0);
    let t = g.input(target)?;
    g.mse_loss(out, t)
}

fn run_case<F>(params: Vec<(&str, Tensor)>, build: F) -> f64
where
    F: FnMut(&mut Graph, &Bound) -> Result<NodeId, TensorError>,
{
    let mut set = ParamSet::new();
    for (n, t) in params {
        set.insert(n, t).unwrap();
    }
    let report = finite_diff_check(&mut set, build, GRAD_TOL).unwrap();
    if report.passed() {
        report.max_rel_error()
    } else {
        f64::INFINITY
    }
}

fn op_cases(r: &mut Report, name: &str, mut case: impl FnMut(&mut ChaCha8Rng) -> f64) {
    let mut worst: f64 = 0.0;
    for seed in 0..CASES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + name.len() as u64);
        worst = worst.max(case(&mut rng));
    }
    r.check(worst <= GRAD_TOL, format!("{name} {worst:.1e}"));
}

fn gradients(r: &mut Report) {
    let start = Instant::now();
    op_cases(r, "conv2d", |rng| {
        let (n, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let stride = rng.gen_range(1..3);
        let (oh, ow) = (rng.gen_range(1..5), rng.gen_range(1..5));
        // Padding may not exceed what keeps the input non-empty.
        let max_pad = (k / 2).min(((oh.min(ow) - 1) * stride + k - 1) / 2);
        let pad = rng.gen_range(0..=max_pad);
        let h = (oh - 1) * stride + k - 2 * pad;
        let w = (ow - 1) * stride + k - 2 * pad;
        run_case(
            vec![
                ("x", rand_tensor(rng, &[n, ci, h, w], -1.0, 1.0)),
                ("w", rand_tensor(rng, &[co, ci, k, k], -1.0, 1.0)),
                ("b", rand_tensor(rng, &[co], -1.0, 1.0)),
            ],
            |g, b| {
                let y = g.conv2d(b.node("x")?, b.node("w")?, b.node("b")?, stride, pad)?;
                head(g, y)
            },
        )
    });
    for train in [true, false] {
        op_cases(r, if train { "batchnorm2d/train" } else { "batchnorm2d/infer" }, |rng| {
            let (n, c, h, w) = (rng.gen_range(2..4), rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(2..4));
            let stats = RunningStats {
                mean: (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                var: (0..c).map(|_| rng.gen_range(0.5..2.0)).collect(),
            };
            run_case(
                vec![
                    ("x", rand_tensor(rng, &[n, c, h, w], -2.0, 2.0)),
                    ("gamma", rand_tensor(rng, &[c], 0.5, 1.5)),
                    ("beta", rand_tensor(rng, &[c], -0.5, 0.5)),
                ],
                |g, b| {
                    let mut s = stats.clone();
                    let mode = if train {
                        BnMode::Train {
                            stats: &mut s,
                            momentum: 0.1,
                        }
                    } else {
                        BnMode::Infer(&stats)
                    };
                    let y = g.batchnorm2d(b.node("x")?, b.node("gamma")?, b.node("beta")?, mode, 1e-5)?;
                    head(g, y)
                },
            )
        });
    }
    op_cases(r, "relu", |rng| {
        let n = rng.gen_range(1..30);
        // Keep inputs away from the kink.
        let data = (0..n).map(|_| rng.gen_range(0.05..1.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect();
        run_case(vec![("x", Tensor::new(vec![n], data).unwrap())], |g, b| {
            let y = g.relu(b.node("x")?);
            head(g, y)
        })
    });
    op_cases(r, "sigmoid", |rng| {
        let n = rng.gen_range(1..30);
        run_case(vec![("x", rand_tensor(rng, &[n], -6.0, 6.0))], |g, b| {
            let y = g.sigmoid(b.node("x")?);
            head(g, y)
        })
    });
    op_cases(r, "affine", |rng| {
        let (n, f, o) = (rng.gen_range(1..4), rng.gen_range(1..6), rng.gen_range(1..6));
        run_case(
            vec![
                ("x", rand_tensor(rng, &[n, f], -1.0, 1.0)),
                ("w", rand_tensor(rng, &[o, f], -1.0, 1.0)),
                ("b", rand_tensor(rng, &[o], -1.0, 1.0)),
            ],
            |g, b| {
                let y = g.affine(b.node("x")?, b.node("w")?, b.node("b")?)?;
                head(g, y)
            },
        )
    });
    op_cases(r, "global_avg_pool", |rng| {
        let s = [rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5)];
        run_case(vec![("x", rand_tensor(rng, &s, -1.0, 1.0))], |g, b| {
            let y = g.global_avg_pool(b.node("x")?)?;
            head(g, y)
        })
    });
    op_cases(r, "concat_channels", |rng| {
        let (n, h, w) = (rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4));
        let (ca, cb) = (rng.gen_range(1..4), rng.gen_range(1..4));
        run_case(
            vec![
                ("a", rand_tensor(rng, &[n, ca, h, w], -1.0, 1.0)),
                ("b", rand_tensor(rng, &[n, cb, h, w], -1.0, 1.0)),
            ],
            |g, b| {
                let y = g.concat_channels(b.node("a")?, b.node("b")?)?;
                head(g, y)
            },
        )
    });
    op_cases(r, "add", |rng| {
        let s = [rng.gen_range(1..3), rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..4)];
        run_case(
            vec![("a", rand_tensor(rng, &s, -1.0, 1.0)), ("b", rand_tensor(rng, &s, -1.0, 1.0))],
            |g, b| {
                let y = g.add(b.node("a")?, b.node("b")?)?;
                head(g, y)
            },
        )
    });
    op_cases(r, "scale", |rng| {
        let f = rng.gen_range(-3.0..3.0);
        let n = rng.gen_range(1..20);
        run_case(vec![("x", rand_tensor(rng, &[n], -1.0, 1.0))], |g, b| {
            let y = g.scale(b.node("x")?, f);
            head(g, y)
        })
    });
    op_cases(r, "sum", |rng| {
        let n = rng.gen_range(1..20);
        run_case(vec![("x", rand_tensor(rng, &[n], -1.0, 1.0))], |g, b| {
            // Square first so the gradient depends on x.
            let x = b.node("x")?;
            let s = g.sum(x);
            let t = g.input(Tensor::scalar(0.3))?;
            g.mse_loss(s, t)
        })
    });
    op_cases(r, "mse_loss", |rng| {
        let s = [rng.gen_range(1..4), rng.gen_range(1..6)];
        run_case(
            vec![("a", rand_tensor(rng, &s, -1.0, 1.0)), ("b", rand_tensor(rng, &s, -1.0, 1.0))],
            |g, b| g.mse_loss(b.node("a")?, b.node("b")?),
        )
    });
    op_cases(r, "bce_logits_loss", |rng| {
        let (n, l) = (rng.gen_range(1..4), rng.gen_range(1..8));
        let targets: Vec<u8> = (0..n * l).map(|_| rng.gen_range(0..2)).collect();
        run_case(vec![("z", rand_tensor(rng, &[n, l], -5.0, 5.0))], |g, b| {
            g.bce_logits_loss(b.node("z")?, &targets)
        })
    });
    op_cases(r, "softmax_cross_entropy", |rng| {
        let (n, k) = (rng.gen_range(1..5), rng.gen_range(2..7));
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        run_case(vec![("z", rand_tensor(rng, &[n, k], -4.0, 4.0))], |g, b| {
            g.softmax_cross_entropy(b.node("z")?, &labels)
        })
    });
    op_cases(r, "crop", |rng| {
        let (h, w) = (rng.gen_range(2..7), rng.gen_range(2..7));
        let (ch, cw) = (rng.gen_range(1..=h), rng.gen_range(1..=w));
        let (top, left) = (rng.gen_range(0..=h - ch), rng.gen_range(0..=w - cw));
        run_case(vec![("x", rand_tensor(rng, &[2, 2, h, w], -1.0, 1.0))], |g, b| {
            let y = g.crop(b.node("x")?, top, left, ch, cw)?;
            head(g, y)
        })
    });
    op_cases(r, "resize_bilinear", |rng| {
        let (h, w) = (rng.gen_range(1..9), rng.gen_range(1..9));
        let (oh, ow) = (rng.gen_range(1..12), rng.gen_range(1..12));
        run_case(vec![("x", rand_tensor(rng, &[1, 2, h, w], -1.0, 1.0))], |g, b| {
            let y = g.resize_bilinear(b.node("x")?, oh, ow)?;
            head(g, y)
        })
    });
    // The straight-through estimator is biased by design (its forward value
    // ignores the input); its contract is an identity backward pass.
    let mut st_ok = true;
    for seed in 0..CASES as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..20);
        let mut g = Graph::new();
        let x = g.param(rand_tensor(&mut rng, &[n], 0.0, 1.0)).unwrap();
        let y = g.straight_through(x, rand_tensor(&mut rng, &[n], 0.0, 1.0)).unwrap();
        let loss = head(&mut g, y).unwrap();
        g.backward(loss).unwrap();
        st_ok &= g.grad(x) == g.grad(y);
    }
    r.check(st_ok, "straight_through passes gradients unchanged");

    for output in [EncoderOutput::Sigmoid, EncoderOutput::SkipSigmoid] {
        let worst = composite_check(output);
        r.check(worst <= GRAD_TOL, format!("encode→decode ({output}) {worst:.1e}"));
    }
    let elapsed = start.elapsed();
    r.check(elapsed < Duration::from_secs(60), format!("{:.1}s < 60s", elapsed.as_secs_f64()));
}

// ℓ_recons + λ·ℓ_decode through both networks at 16×16, L=4; each network's
// parameters are checked with the other one held fixed.
fn composite_check(output: EncoderOutput) -> f64 {
    let cfg = WatermarkConfig {
        msg_len: 4,
        base_channels: 4,
        encoder_blocks: 2,
        decoder_blocks: 2,
        image_channels: 3,
        output,
    };
    let model = build_model(cfg, 5).unwrap();
    let imgs: Vec<Image> = textures(2, 16, 3, &TextureParams::default());
    let refs: Vec<&Image> = imgs.iter().collect();
    let x = Image::batch_tensor(&refs).unwrap();
    let msgs = vec![random_message(1, 4).unwrap(), random_message(2, 4).unwrap()];
    let targets: Vec<u8> = msgs.iter().flat_map(|m| m.bits().to_vec()).collect();
    let lambda = 1.0;
    let mut worst: f64 = 0.0;
    for check_encoder in [true, false] {
        let mut params = if check_encoder { model.encoder_params().clone() } else { model.decoder_params().clone() };
        let report = finite_diff_check(
            &mut params,
            |g, bound| {
                let mut m = model.clone();
                let other = if check_encoder { m.decoder_params().bind(g)? } else { m.encoder_params().bind(g)? };
                let bm = if check_encoder {
                    facemark::watermarknet::BoundModel {
                        encoder: bound.clone(),
                        decoder: other,
                    }
                } else {
                    facemark::watermarknet::BoundModel {
                        encoder: other,
                        decoder: bound.clone(),
                    }
                };
                let err = |e: facemark::watermarknet::WatermarkError| TensorError::InvalidArgument(e.to_string());
                let xi = g.input(x.clone())?;
                let y = m.encode_node(g, &bm, xi, &msgs, true).map_err(err)?;
                let logits = m.decode_node(g, &bm, y, true).map_err(err)?;
                let rec = g.mse_loss(y, xi)?;
                let dec = g.bce_logits_loss(logits, &targets)?;
                let dec = g.scale(dec, lambda);
                g.add(rec, dec)
            },
            GRAD_TOL,
        )
        .unwrap();
        worst = worst.max(if report.passed() { report.max_rel_error() } else { f64::INFINITY });
    }
    worst
}

// ---------------------------------------------------------------------------
// 2. Oracles

fn naive_conv(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Vec<f64> {
    let [n, ci, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [co, _, k, _] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (wd + 2 * pad - k) / stride + 1;
    let (xd, wdt) = (x.data(), w.data());
    let mut out = Vec::with_capacity(n * co * oh * ow);
    for s in 0..n {
        for o in 0..co {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((s * ci + c) * h + iy as usize) * wd + ix as usize]
                                    * wdt[((o * ci + c) * k + ky) * k + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

/// Enumerates every distinct imposter score (plus the sentinel above the
/// maximum) and counts directly.
fn brute_tar_at_far(genuine: &[f64], imposter: &[f64], far: f64) -> Option<(f64, f64, f64)> {
    let n = imposter.len() as f64;
    if n * far < 1.0 - 1e-9 {
        return None;
    }
    let far_at = |t: f64| imposter.iter().filter(|&&s| s >= t).count() as f64 / n;
    let max = imposter.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sentinel = max.next_up();
    let tau = imposter
        .iter()
        .copied()
        .filter(|&t| far_at(t) <= far)
        .fold(sentinel, f64::min);
    let tar = genuine.iter().filter(|&&s| s >= tau).count() as f64 / genuine.len() as f64;
    Some((tar, tau, far_at(tau)))
}

fn oracles(r: &mut Report) {
    let mut worst: f64 = 0.0;
    for case in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let (n, ci, co) = (rng.gen_range(1..3), rng.gen_range(1..5), rng.gen_range(1..5));
        let k = [1, 3, 5, 7][rng.gen_range(0..4)];
        let pad = rng.gen_range(0..=k / 2);
        let stride = rng.gen_range(1..3);
        let (oh, ow) = (rng.gen_range(1..7), rng.gen_range(1..7));
        let h = (oh - 1) * stride + k - 2 * pad;
        let w = (ow - 1) * stride + k - 2 * pad;
        if h == 0 || w == 0 {
            continue;
        }
        let x = rand_tensor(&mut rng, &[n, ci, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, &[co, ci, k, k], -1.0, 1.0);
        let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g = Graph::new();
        let (xn, wn) = (g.input(x.clone()).unwrap(), g.input(wt.clone()).unwrap());
        let bn = g.input(Tensor::new(vec![co], b.clone()).unwrap()).unwrap();
        let y = g.conv2d(xn, wn, bn, stride, pad).unwrap();
        let want = naive_conv(&x, &wt, &b, stride, pad);
        let got = g.value(y).data();
        assert_eq!(got.len(), want.len());
        for (a, e) in got.iter().zip(&want) {
            worst = worst.max((a - e).abs());
        }
    }
    r.check(worst <= 1e-12, format!("conv2d vs naive loops on 100 cases, max |Δ| {worst:.1e}"));

    let mut mismatches = 0;
    for case in 0..1000u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + case);
        // Coarse grids force ties.
        let levels = [4.0, 20.0, 1e6][rng.gen_range(0..3)];
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| (rng.gen::<f64>() * levels).round() / levels).collect() };
        let gcount = 1 + (case as usize % 50);
        let icount = 1 + ((case as usize * 7) % 50);
        let set = ScoreSet {
            mode: PairingMode::OriginalOriginal,
            genuine: draw(gcount),
            imposter: draw(icount),
            skipped_identities: 0,
        };
        let far = [0.01, 0.05, 0.1, 0.25, 0.5, 1.0][case as usize % 6];
        let got = tar_at_far(&set, far).ok().map(|t| (t.tar, t.tau, t.achieved_far));
        let want = brute_tar_at_far(&set.genuine, &set.imposter, far);
        mismatches += usize::from(got != want);
    }
    r.check(mismatches == 0, format!("tar_at_far vs brute force on 1000 sets, {mismatches} mismatches"));
}

// ---------------------------------------------------------------------------
// 3. Toy watermark training (models are shared with later criteria)

/// Desk-scale training setup. p_aug is overridden per criterion.
const TOY_CONFIG: &str = "\
msg_len = 16
lambda = 1
steps = 2000
batch_size = 16
image_size = 32
base_channels = 16
encoder_blocks = 4
decoder_blocks = 7
lr = 0.003
log_interval = 250
seed = 7
";

const TRAIN_SEED: u64 = 100;
const HELDOUT_SEED: u64 = 200;

fn toy_config(p_aug: f64) -> TrainConfig {
    let mut map = ConfigMap::parse(TOY_CONFIG).unwrap();
    map.set("p_aug", p_aug);
    TrainConfig::from_map(&map).unwrap()
}

fn train_textures() -> Vec<Image> {
    textures(256, 32, TRAIN_SEED, &TextureParams::default())
}

fn heldout_textures() -> &'static [Image] {
    static H: OnceLock<Vec<Image>> = OnceLock::new();
    H.get_or_init(|| textures(64, 32, HELDOUT_SEED, &TextureParams::default()))
}

struct Trained {
    model: WatermarkModel,
    elapsed: Duration,
}

fn plain_model() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| {
        let start = Instant::now();
        let out = train_watermark(&toy_config(0.0), &train_textures(), None).unwrap();
        Trained {
            model: out.model,
            elapsed: start.elapsed(),
        }
    })
}

fn augmented_model() -> &'static Trained {
    static M: OnceLock<Trained> = OnceLock::new();
    M.get_or_init(|| {
        let start = Instant::now();
        let out = train_watermark(&toy_config(0.5), &train_textures(), None).unwrap();
        Trained {
            model: out.model,
            elapsed: start.elapsed(),
        }
    })
}

fn toy_training(r: &mut Report) {
    let t = plain_model();
    let eval = evaluate_watermark(&t.model, heldout_textures(), 3).unwrap();
    r.check(eval.mean_bit_acc >= 0.95, format!("held-out bit accuracy {:.4} ≥ 0.95", eval.mean_bit_acc));
    r.check(eval.mean_psnr >= 28.0, format!("mean PSNR {:.2} dB ≥ 28", eval.mean_psnr));
    let mins = t.elapsed.as_secs_f64() / 60.0;
    r.check(mins <= 15.0, format!("training {mins:.1} min ≤ 15"));
}

// ---------------------------------------------------------------------------
// 4. Robustness trend

fn robustness(r: &mut Report) {
    let t = augmented_model();
    r.note(format!("trained in {:.1} min", t.elapsed.as_secs_f64() / 60.0));
    let msg = random_message(11, 16).unwrap();
    let spec = SweepSpec::default();
    let rows = run_sweep(&t.model, heldout_textures(), &msg, &spec).unwrap();
    let identity = rows.iter().find(|row| row.kind.name() == "identity").unwrap().mean_bit_acc;
    r.note(format!("identity {identity:.3}"));
    let worst_excess = rows
        .iter()
        .map(|row| row.mean_bit_acc - identity)
        .fold(f64::NEG_INFINITY, f64::max);
    r.check(
        rows.iter().all(|row| row.mean_bit_acc.is_finite()) && worst_excess <= 0.03,
        format!("no cell beats identity by more than 0.03 (max excess {worst_excess:+.3})"),
    );
    let jpeg: Vec<(f64, f64)> = rows
        .iter()
        .filter(|row| row.kind.name() == "jpeg")
        .map(|row| (row.factor, row.mean_bit_acc))
        .collect();
    let mut monotone = true;
    for &(q1, a1) in &jpeg {
        for &(q2, a2) in &jpeg {
            if q1 > q2 && a1 < a2 - 0.03 {
                monotone = false;
            }
        }
    }
    let shape: Vec<String> = jpeg.iter().map(|(q, a)| format!("q{q}:{a:.3}")).collect();
    r.check(monotone, format!("JPEG accuracy monotone within 0.03 [{}]", shape.join(" ")));
}

// ---------------------------------------------------------------------------
// 5. JPEG

fn reference_jpeg(img: &Image, quality: u8) -> Image {
    use image::codecs::jpeg::JpegEncoder;
    use image::ImageEncoder;
    let (h, w) = (img.height(), img.width());
    let mut rgb = Vec::with_capacity(3 * h * w);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                rgb.push((img.pixel(c, y, x) * 255.0).round() as u8);
            }
        }
    }
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .write_image(&rgb, w as u32, h as u32, image::ExtendedColorType::Rgb8)
        .unwrap();
    let decoded = image::load_from_memory(&buf).unwrap().to_rgb8();
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, p) in decoded.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f64::from(p[c]) / 255.0;
        }
    }
    Image::new(3, h, w, data).unwrap()
}

fn jpeg_codec(r: &mut Report) {
    let mut ours: Vec<f64> = Vec::new();
    let mut reference: Vec<f64> = Vec::new();
    for seed in 0..10 {
        let img = common::natural_image(seed, 64, 64);
        ours.push(psnr(&img, &jpeg_roundtrip(&img, 100).unwrap()).unwrap());
        reference.push(psnr(&img, &reference_jpeg(&img, 100)).unwrap());
    }
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    r.check(min(&reference) >= 40.0, format!("reference codec q100 min PSNR {:.2} dB", min(&reference)));
    r.check(min(&ours) >= 40.0, format!("q100 min PSNR {:.2} dB ≥ 40 on 10 natural images", min(&ours)));

    let gray = Image::filled(3, 24, 24, 128.0 / 255.0).unwrap();
    let exact = (1..=100u8).all(|q| jpeg_roundtrip(&gray, q).unwrap() == gray);
    r.check(exact, "mid-gray exact at q=1..100");

    // Orthonormality: basis images via the transform of unit vectors.
    let mut worst: f64 = 0.0;
    let basis: Vec<[f64; 64]> = (0..64)
        .map(|i| {
            let mut e = [0.0; 64];
            e[i] = 1.0;
            dct8x8(&e)
        })
        .collect();
    for i in 0..64 {
        for j in 0..64 {
            let dot: f64 = (0..64).map(|k| basis[i][k] * basis[j][k]).sum();
            worst = worst.max((dot - f64::from(u8::from(i == j))).abs());
        }
        let mut e = [0.0; 64];
        e[i] = 1.0;
        let back = idct8x8(&dct8x8(&e));
        for k in 0..64 {
            worst = worst.max((back[k] - e[k]).abs());
        }
    }
    r.check(worst <= 1e-9, format!("DCT orthonormality |Δ| {worst:.1e}"));
}

// ---------------------------------------------------------------------------
// 6. Statistics

fn statistics(r: &mut Report) {
    // Reference values: scipy.stats.ttest_ind(equal_var=False) and
    // scipy.stats.t.sf(|t|, df)·2.
    let w = welch_t_test(&[1.0, 2.0, 3.0, 4.0], &[2.0, 3.0, 4.0, 5.0]).unwrap();
    let (t_ref, df_ref, p_ref) = (-1.0954451150103324, 6.0, 0.3153335962012296);
    r.check(
        (w.t - t_ref).abs() <= 1e-4 && (w.df - df_ref).abs() <= 1e-9 && (w.p - p_ref).abs() <= 1e-4,
        format!("t {:.4}, df {}, p {:.4}", w.t, w.df, w.p),
    );
    let extreme = [
        (8.0, 20.0, 1.1656628271488505e-07),
        (12.0, 30.0, 5.580185415199261e-13),
        (7.5, 57.3, 4.532567475606097e-10),
        (20.0, 10.0, 2.1460623172042465e-09),
        (6.2, 198.0, 3.224472743519344e-09),
        (2.5, 3.5, 0.07569464380949005),
    ];
    let mut worst: f64 = 0.0;
    for (t, df, p) in extreme {
        let got = student_t_two_sided_p(t, df);
        let got_neg = student_t_two_sided_p(-t, df);
        worst = worst.max(((got - p) / p).abs()).max(((got_neg - p) / p).abs());
    }
    r.check(worst <= 1e-8, format!("extreme-t p-values down to 5.6e-13, max relative error {worst:.1e}"));
}

// ---------------------------------------------------------------------------
// 7. Verification harness

fn verification(r: &mut Report) {
    let people = identities(50, 4, 32, 21);
    let data: Vec<LabeledImage> = people
        .iter()
        .map(|(id, img)| LabeledImage {
            image: img.clone(),
            identity: id.clone(),
        })
        .collect();
    let embedder = train_embedder(
        &data,
        &EmbedderConfig {
            seed: 3,
            ..EmbedderConfig::default()
        },
    )
    .unwrap();
    let first = embedder.loss_history[0];
    let last = *embedder.loss_history.last().unwrap();
    r.check(last < first, format!("embedder loss {first:.3} → {last:.3}"));

    let wm = &plain_model().model;
    let msg = random_message(5, 16).unwrap();
    let refs: Vec<&Image> = people.iter().map(|(_, img)| img).collect();
    let msgs = vec![msg; refs.len()];
    let marked: Vec<Image> = refs
        .chunks(32)
        .zip(msgs.chunks(32))
        .flat_map(|(imgs, ms)| encode_batch(wm, imgs, ms).unwrap())
        .collect();
    let mut items: Vec<(&Image, &str, SourceTag)> = people
        .iter()
        .map(|(id, img)| (img, id.as_str(), SourceTag::Original))
        .collect();
    items.extend(people.iter().zip(&marked).map(|((id, _), img)| (img, id.as_str(), SourceTag::Watermarked)));
    let embeddings = embed_images(&embedder.model, &items).unwrap();

    let cfg = VerifyConfig {
        far_targets: vec![0.005, 0.01, 0.05],
        ..VerifyConfig::default()
    };
    let baseline = pair_scores(&embeddings, PairingMode::OriginalOriginal, &PairConfig::default()).unwrap();
    let reports = run_verification(&embeddings, &PairingMode::ALL, &cfg, Some(&baseline)).unwrap();
    let at_1pct: Vec<_> = reports.iter().filter(|x| x.far_target == 0.01).collect();
    r.check(
        at_1pct.len() == 3 && at_1pct.iter().all(|x| x.error.is_none() && (0.0..=1.0).contains(&x.tar)),
        format!(
            "TAR@1% {}",
            at_1pct.iter().map(|x| format!("{}={:.3}", x.mode, x.tar)).collect::<Vec<_>>().join(" ")
        ),
    );
    for mode in PairingMode::ALL {
        let tars: Vec<f64> = reports.iter().filter(|x| x.mode == mode).map(|x| x.tar).collect();
        r.check(tars.len() == 3 && tars.windows(2).all(|w| w[0] <= w[1]), format!("{mode} TAR monotone in FAR {tars:.3?}"));
    }
    let wo = at_1pct.iter().find(|x| x.mode == PairingMode::WatermarkedOriginal).unwrap();
    let p = wo.t_test.map_or(f64::NAN, |w| w.p);
    r.check(p.is_finite() && p > 0.0 && p <= 1.0, format!("original vs watermarked genuine p = {p:.3e}"));
    r.note(format!("genuine mean shift {:+.4} (sign not asserted)", wo.mean_shift.unwrap_or(f64::NAN)));
}

// ---------------------------------------------------------------------------
// 8. Determinism & formats

const CLI_CONFIG: &str = "\
msg_len = 8
base_channels = 4
encoder_blocks = 2
decoder_blocks = 2
steps = 12
batch_size = 4
image_size = 16
p_aug = 0.5
aug_kinds = crop,resize,brightness,contrast,jpeg
log_interval = 0
embed_dim = 8
embed_channels = 4
embed_epochs = 2
embed_input_size = 16
sweep_repetitions = 2
far_targets = 0.01, 0.05
";

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                files.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    files.sort();
    files
}

// Runs the whole CLI workflow in `dir`; returns extract's stdout.
fn cli_workflow(dir: &Path, r: &mut Report) -> String {
    std::fs::write(dir.join("run.cfg"), CLI_CONFIG).unwrap();
    let steps: [&[&str]; 9] = [
        &["synth", "--config", "run.cfg", "--seed", "4", "--identities", "6", "--count", "3", "--size", "16", "faces"],
        &["train-wm", "--config", "run.cfg", "--seed", "9", "faces/manifest.csv", "wm.wmf", "--history", "wm_history.csv"],
        &["train-embedder", "--config", "run.cfg", "--seed", "9", "faces/manifest.csv", "emb.bin", "--history", "emb_history.txt"],
        &["watermark-dataset", "--config", "run.cfg", "--model", "wm.wmf", "faces/manifest.csv", "marked"],
        &["embed", "--config", "run.cfg", "--model", "emb.bin", "embeddings.txt", "faces/manifest.csv", "marked/manifest.csv"],
        &["sweep", "--config", "run.cfg", "--model", "wm.wmf", "faces/manifest.csv", "sweep.csv"],
        &["verify", "--config", "run.cfg", "embeddings.txt", "report.txt"],
        // Idempotence: the same dataset command again over its own output.
        &["watermark-dataset", "--config", "run.cfg", "--model", "wm.wmf", "faces/manifest.csv", "marked"],
        &["extract", "--config", "run.cfg", "--model", "wm.wmf", "marked/id000_00000.ppm"],
    ];
    let mut stdout = String::new();
    for args in steps {
        let out = common::facemark(args, dir);
        if !out.status.success() {
            r.check(false, format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&out.stderr)));
        }
        stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    }
    stdout
}

fn determinism(r: &mut Report) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = cli_workflow(a.path(), r);
    let marked_once = snapshot(&a.path().join("marked"));
    let out_b = cli_workflow(b.path(), r);
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    let differing: Vec<&str> = sa
        .iter()
        .zip(&sb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    r.check(
        sa.len() == sb.len() && sa.len() > 20 && differing.is_empty(),
        format!("{} output files byte-identical across reruns (differing: {differing:?})", sa.len()),
    );
    r.check(
        out_a == out_b && out_a.trim().len() == 8 && out_a.trim().chars().all(|c| c == '0' || c == '1'),
        format!("extract prints {}", out_a.trim()),
    );
    r.check(marked_once == snapshot(&a.path().join("marked")), "watermark-dataset idempotent");
    let csv = std::fs::read_to_string(a.path().join("sweep.csv")).unwrap();
    r.check(csv.lines().next() == Some(SWEEP_HEADER), "sweep CSV header exact");
    r.check(csv.lines().count() == 32, "31 sweep rows");

    // WMF1 round trip on the trained toy model: infer outputs bit-exact.
    let model = &plain_model().model;
    let path = a.path().join("toy.wmf");
    save_model(model, &path).unwrap();
    let loaded = load_model(&path).unwrap();
    let imgs: Vec<&Image> = heldout_textures()[..8].iter().collect();
    let msgs: Vec<_> = (0..8).map(|i| random_message(i, 16).unwrap()).collect();
    let enc_a = encode_batch(model, &imgs, &msgs).unwrap();
    let enc_b = encode_batch(&loaded, &imgs, &msgs).unwrap();
    let enc_refs: Vec<&Image> = enc_a.iter().collect();
    let same = enc_a == enc_b
        && decode_logits_batch(model, &enc_refs).unwrap() == decode_logits_batch(&loaded, &enc_refs).unwrap()
        && std::fs::read(&path).unwrap() == {
            let again = a.path().join("toy2.wmf");
            save_model(&loaded, &again).unwrap();
            std::fs::read(&again).unwrap()
        };
    r.check(same, "WMF1 save/load preserves infer outputs bit-exactly");

    // PPM storage is what the dataset command writes; check it is stable.
    let stored = decode_ppm(&encode_ppm(&enc_a[0])).unwrap();
    r.check(encode_ppm(&stored) == encode_ppm(&enc_a[0]), "PPM re-encoding stable");
}
