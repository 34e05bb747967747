//! End-to-end acceptance checks. Each criterion prints one PASS or FAIL line;
//! the test fails if any criterion does. Tolerances are pinned below.

mod common;

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thumbqc::bench::{self, ApproachSpec, BenchArgs};
use thumbqc_core::backbone::{interpolate_pos_embed, PositionalGrid, VisionTransformer};
use thumbqc_core::gradcheck::{suite, GradCheckReport};
use thumbqc_core::heads::{soft_vote, AttentionPool, AttentionPoolConfig, TileTransformer, TileTransformerConfig};
use thumbqc_core::imaging::{orient_landscape, resize_bilinear, tile, RasterImage, Scale};
use thumbqc_core::metrics::{auroc, ScoredSample};
use thumbqc_core::model::{Approach, ModelConfig};
use thumbqc_core::synthetic::{write_dataset, SyntheticOptions};
use thumbqc_core::training::{evaluate, prepare_slides, split_dataset, train_with, Split, TrainConfig};
use thumbqc_hpo::{hyperband_schedule, run_study, Dimension, Point, SearchSpace, StudyConfig};

const GEOMETRY_BUDGET: Duration = Duration::from_secs(1);
const RESAMPLE_TOL: f64 = 1e-6;
const POS_TOL: f64 = 1e-6;
const SOFT_VOTE_TOL: f64 = 1e-12;
const ATTENTION_SUM_TOL: f64 = 1e-9;
const PERMUTATION_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const E2E_MIN_AUROC: f64 = 0.95;
const E2E_MIN_ACCURACY: f64 = 0.90;
const E2E_MAX_EPOCHS: usize = 20;
const E2E_BUDGET: Duration = Duration::from_secs(600);
const AUROC_TOL: f64 = 1e-12;
/// Forward time of tiled L over tiled M (4x the tiles), ±30 %.
const TILE_SCALING: (f64, f64) = (4.0 * 0.7, 4.0 * 1.3);

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);
type GradSuite = (&'static str, fn(u64) -> thumbqc_core::Result<GradCheckReport>);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_image(rng: &mut impl Rng, h: usize, w: usize) -> RasterImage {
    RasterImage::from_fn(h, w, |_, _| [rng.random(), rng.random(), rng.random()])
}

fn geometry() -> Outcome {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut counts = Vec::new();
    for scale in Scale::ALL {
        let c = scale.config();
        let img = random_image(&mut rng, c.target_height, c.target_width);
        let tiles = tile(&img, scale).map_err(err)?;
        counts.push(tiles.len());
        ensure(tiles.stitch().map_err(err)? == img, || format!("{scale}: stitch differs from source"))?;
    }
    ensure(counts == [1, 2, 8, 32], || format!("tile counts {counts:?}"))?;
    for k in 0..200 {
        let (h, w) = (rng.random_range(1..60), rng.random_range(1..60));
        let img = random_image(&mut rng, h, w);
        let once = orient_landscape(&img).map_err(err)?;
        ensure(once.width() >= once.height(), || format!("case {k}: {h}x{w} not landscape after orienting"))?;
        ensure(orient_landscape(&once).map_err(err)? == once, || format!("case {k}: orienting twice changed {h}x{w}"))?;
    }
    let dt = t0.elapsed();
    ensure(dt < GEOMETRY_BUDGET, || format!("took {dt:?}"))?;
    Ok(format!("tile counts {counts:?}, round trips exact, {dt:.1?}"))
}

/// Half-pixel-centre bilinear as an explicit sum of tent weights over every
/// source pixel.
fn bilinear_oracle(img: &RasterImage, oh: usize, ow: usize) -> Vec<f64> {
    let (h, w) = img.dims();
    let coord = |d: usize, n_in: usize, n_out: usize| {
        ((d as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64)
    };
    let mut out = Vec::with_capacity(oh * ow * 3);
    for r in 0..oh {
        let sy = coord(r, h, oh);
        for c in 0..ow {
            let sx = coord(c, w, ow);
            let mut acc = [0.0f64; 3];
            for y in 0..h {
                let wy = (1.0 - (y as f64 - sy).abs()).max(0.0);
                if wy == 0.0 {
                    continue;
                }
                for x in 0..w {
                    let wx = (1.0 - (x as f64 - sx).abs()).max(0.0);
                    let p = img.pixel(y, x);
                    for ch in 0..3 {
                        acc[ch] += wy * wx * p[ch] as f64;
                    }
                }
            }
            out.extend(acc);
        }
    }
    out
}

fn resampler() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(1..40), rng.random_range(1..40));
        let img = random_image(&mut rng, h, w);
        let (oh, ow) = (rng.random_range(1..60), rng.random_range(1..60));
        let got = resize_bilinear(&img, oh, ow).map_err(err)?;
        let want = bilinear_oracle(&img, oh, ow);
        for (a, b) in got.data().iter().zip(&want) {
            worst = worst.max((*a as f64 - b).abs());
        }
    }
    ensure(worst < RESAMPLE_TOL, || format!("max abs error {worst:.3e}"))?;
    Ok(format!("50 images, max abs error {worst:.2e}"))
}

/// Corner-aligned bilinear as an explicit tent-weight sum over the old grid.
fn pos_oracle(g: &PositionalGrid, nr: usize, nc: usize) -> Array2<f64> {
    let coord = |i: usize, n_new: usize, n_old: usize| {
        if n_new == 1 {
            (n_old - 1) as f64 / 2.0
        } else {
            i as f64 * (n_old - 1) as f64 / (n_new - 1) as f64
        }
    };
    let mut out = Array2::zeros((nr * nc, g.embeddings.ncols()));
    for r in 0..nr {
        for c in 0..nc {
            let (sy, sx) = (coord(r, nr, g.rows), coord(c, nc, g.cols));
            for y in 0..g.rows {
                for x in 0..g.cols {
                    let wgt = (1.0 - (y as f64 - sy).abs()).max(0.0) * (1.0 - (x as f64 - sx).abs()).max(0.0);
                    if wgt > 0.0 {
                        let src = g.embeddings.row(y * g.cols + x).to_owned() * wgt;
                        let mut dst = out.row_mut(r * nc + c);
                        dst += &src;
                    }
                }
            }
        }
    }
    out
}

fn position_embeddings() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let grid = PositionalGrid {
        rows: 14,
        cols: 14,
        embeddings: Array2::from_shape_fn((196, 24), |_| rng.random_range(-1.0..1.0)),
        extra_tokens: Array2::from_shape_fn((1, 24), |_| rng.random_range(-1.0..1.0)),
    };
    ensure(interpolate_pos_embed(&grid, 14, 14).map_err(err)? == grid, || "identity not bit-exact".into())?;
    let big = interpolate_pos_embed(&grid, 28, 56).map_err(err)?;
    let corners = [(0, 0, 0, 0), (0, 13, 0, 55), (13, 0, 27, 0), (13, 13, 27, 55)];
    for (r, c, nr, nc) in corners {
        ensure(big.embeddings.row(nr * 56 + nc) == grid.embeddings.row(r * 14 + c), || {
            format!("corner ({r},{c}) not preserved exactly")
        })?;
    }
    ensure(big.extra_tokens == grid.extra_tokens, || "extra tokens changed".into())?;
    let oracle = pos_oracle(&grid, 28, 56);
    let worst = (&big.embeddings - &oracle).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
    ensure(worst < POS_TOL, || format!("14x14 -> 28x56 max error {worst:.3e}"))?;
    Ok(format!("identity and corners exact, 14x14 -> 28x56 max error {worst:.2e}"))
}

fn permute(x: &Array2<f64>, order: &[usize]) -> Array2<f64> {
    let mut out = x.clone();
    for (i, &j) in order.iter().enumerate() {
        out.row_mut(i).assign(&x.row(j));
    }
    out
}

fn max_diff(a: &Array1<f64>, b: &Array1<f64>) -> f64 {
    (a - b).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v))
}

fn aggregators() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut sv = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(1..40);
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-20.0..20.0)).collect();
        let want = logits.iter().map(|z| 1.0 / (1.0 + (-z).exp())).sum::<f64>() / n as f64;
        sv = sv.max((soft_vote(&logits).map_err(err)? - want).abs());
    }
    ensure(sv < SOFT_VOTE_TOL, || format!("soft vote off by {sv:.3e}"))?;

    let dim = 12;
    let mut sum_err = 0.0f64;
    let mut perm_err = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..16);
        let x = Array2::from_shape_fn((n, dim), |_| rng.random_range(-3.0..3.0));
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        order.rotate_left(n / 3);

        // identity projections: the pooled vector is a convex combination of rows
        let id = AttentionPool::identity(Array1::from_shape_fn(dim, |_| rng.random_range(-2.0..2.0)));
        let (pooled, cache) = id.forward_train(x.view()).map_err(err)?;
        let w = cache.weights().row(0).to_owned();
        sum_err = sum_err.max((w.sum() - 1.0).abs());
        ensure(w.iter().all(|&v| v >= 0.0), || "negative attention weight".into())?;
        ensure(max_diff(&pooled, &w.dot(&x)) < 1e-12, || "pooled is not the weighted sum".into())?;
        for k in 0..dim {
            let col = x.column(k);
            let (lo, hi) = col.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            ensure(pooled[k] >= lo - 1e-12 && pooled[k] <= hi + 1e-12, || format!("feature {k} outside hull"))?;
        }

        let pool = AttentionPool::new(&AttentionPoolConfig { dim, heads: 3 }, &mut rng).map_err(err)?;
        let (a, cache) = pool.forward_train(x.view()).map_err(err)?;
        for row in cache.weights().rows() {
            sum_err = sum_err.max((row.sum() - 1.0).abs());
        }
        perm_err = perm_err.max(max_diff(&a, &pool.forward(permute(&x, &order).view()).map_err(err)?));
    }
    ensure(sum_err < ATTENTION_SUM_TOL, || format!("attention weights sum off by {sum_err:.3e}"))?;
    ensure(perm_err < PERMUTATION_TOL, || format!("attention pool permutation difference {perm_err:.3e}"))?;

    let cfg = TileTransformerConfig {
        dim,
        depth: 1,
        heads: 3,
        mlp_ratio: 2.0,
        slots: 8,
    };
    let mut t = TileTransformer::new(&cfg, &mut rng).map_err(err)?;
    let x = Array2::from_shape_fn((6, dim), |_| rng.random_range(-3.0..3.0));
    let order = [3, 0, 5, 1, 4, 2];
    let sensitive = max_diff(&t.forward(x.view()).map_err(err)?, &t.forward(permute(&x, &order).view()).map_err(err)?);
    ensure(sensitive > 1e-6, || format!("transformer ignores order with positional embeddings ({sensitive:.3e})"))?;
    t.slot_pos.fill(0.0);
    let invariant = max_diff(&t.forward(x.view()).map_err(err)?, &t.forward(permute(&x, &order).view()).map_err(err)?);
    ensure(invariant < PERMUTATION_TOL, || format!("transformer without positions differs by {invariant:.3e}"))?;
    Ok(format!(
        "soft vote {sv:.1e}, weight sums {sum_err:.1e}, pool permutation {perm_err:.1e}, transformer {sensitive:.2e} vs {invariant:.1e}"
    ))
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let checks: [GradSuite; 5] = [
        ("head", suite::head),
        ("attention pool", suite::attention_pool),
        ("tile transformer", suite::tile_transformer),
        ("soft-vote path", suite::soft_vote_path),
        ("desk ViT", suite::desk_vit),
    ];
    let mut parts = Vec::new();
    for (seed, (name, check)) in checks.iter().enumerate() {
        let report = check(seed as u64 + 1).map_err(err)?;
        let worst = report.max_rel_error();
        if !report.passes(GRAD_TOL) {
            let (tensor, g) = report.worst().expect("non-empty report");
            return Err(format!(
                "{name}: {tensor} relative error {worst:.3e} (analytic {:.6e}, numeric {:.6e})",
                g.worst_analytic, g.worst_numeric
            ));
        }
        parts.push(format!("{name} {worst:.1e}"));
    }
    let dt = t0.elapsed();
    ensure(dt < GRAD_BUDGET, || format!("took {dt:?}"))?;
    Ok(format!("{}; {dt:.1?}", parts.join(", ")))
}

fn same(a: &VisionTransformer, b: &VisionTransformer) -> Vec<String> {
    let mut diffs = Vec::new();
    let mut check = |name: String, eq: bool| {
        if !eq {
            diffs.push(name);
        }
    };
    check("patch_embed".into(), a.patch_embed == b.patch_embed);
    check("cls_token".into(), a.cls_token == b.cls_token);
    check("register_tokens".into(), a.register_tokens == b.register_tokens);
    check("norm".into(), a.norm == b.norm);
    for (i, (x, y)) in a.blocks.iter().zip(&b.blocks).enumerate() {
        check(format!("blocks.{i}.norm1"), x.norm1 == y.norm1);
        check(format!("blocks.{i}.norm2"), x.norm2 == y.norm2);
        check(format!("blocks.{i}.fc1"), x.fc1 == y.fc1);
        check(format!("blocks.{i}.fc2"), x.fc2 == y.fc2);
    }
    diffs
}

fn freezing() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let records = write_dataset(dir.path(), "freeze", 6, 6, &SyntheticOptions::default()).map_err(err)?;
    let manifest = split_dataset(&records, [4.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0], 6).map_err(err)?;
    let mut cfg = TrainConfig::new(ModelConfig::desk(Approach::VitUpscaling));
    cfg.epochs = 5;
    cfg.batch_size = 1;
    cfg.learning_rate = 1e-3;
    cfg.seed = 6;
    cfg.max_steps = Some(10);
    let init = thumbqc_core::model::FixationModel::new(cfg.model.clone(), cfg.seed).map_err(err)?;
    let out = train_with(&manifest, &cfg, None, |_| {}).map_err(err)?;
    let steps = out.log.last().map(|r| r.steps).unwrap_or(0);
    ensure(steps == 10, || format!("ran {steps} steps"))?;
    let (a, b) = (&init.backbone, &out.last.backbone);
    let changed = same(a, b);
    ensure(changed.is_empty(), || format!("frozen tensors changed: {changed:?}"))?;
    ensure(a.pos_embed != b.pos_embed, || "positional embeddings did not train".into())?;
    let attn_moved = a.blocks.iter().zip(&b.blocks).all(|(x, y)| x.attn != y.attn);
    ensure(attn_moved, || "attention projections did not train".into())?;
    ensure(init.head != out.last.head, || "head did not train".into())?;
    Ok(format!("{steps} steps: attention, positions and head moved; all else bit-identical"))
}

fn end_to_end() -> Outcome {
    let t0 = Instant::now();
    let seed = 7;
    let dir = tempfile::tempdir().map_err(err)?;
    let records = write_dataset(dir.path(), "synthetic", 20, seed, &SyntheticOptions::default()).map_err(err)?;
    let manifest = split_dataset(&records, [0.4, 0.2, 0.4], seed).map_err(err)?;
    let mut model = ModelConfig::desk(Approach::TiledSoftVote);
    model.scale = Scale::L;
    let mut cfg = TrainConfig::new(model);
    cfg.epochs = 10;
    cfg.batch_size = 2;
    cfg.learning_rate = 1e-3;
    cfg.seed = seed;
    ensure(cfg.epochs <= E2E_MAX_EPOCHS, || "too many epochs".into())?;
    let out = train_with(&manifest, &cfg, None, |r| {
        eprintln!(
            "  epoch {:>2} train loss {:.3} val loss {:.3} val acc {:.3} ({:.0?})",
            r.epoch,
            r.train_loss,
            r.val_loss,
            r.val_accuracy,
            t0.elapsed()
        )
    })
    .map_err(err)?;
    let test = prepare_slides(&manifest.split(Split::Test), &out.model).map_err(err)?;
    let (_, report) = evaluate(&out.model, &test).map_err(err)?;
    let dt = t0.elapsed();
    let auc = report.auroc.unwrap_or(f64::NAN);
    let summary = format!(
        "{} test slides: AUROC {auc:.4}, accuracy {:.4} (best epoch {} of {}), {dt:.0?}",
        test.len(),
        report.accuracy,
        out.best_epoch,
        out.log.len()
    );
    ensure(auc >= E2E_MIN_AUROC && report.accuracy >= E2E_MIN_ACCURACY, || summary.clone())?;
    ensure(dt < E2E_BUDGET, || format!("{summary}; over budget"))?;
    Ok(summary)
}

fn pairwise_auroc(samples: &[ScoredSample]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for p in samples.iter().filter(|s| s.label == 1) {
        for n in samples.iter().filter(|s| s.label == 0) {
            den += 1.0;
            num += if p.score > n.score {
                1.0
            } else if p.score == n.score {
                0.5
            } else {
                0.0
            };
        }
    }
    num / den
}

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for k in 0..100 {
        let n = rng.random_range(2..120);
        let mut samples: Vec<ScoredSample> = (0..n)
            .map(|i| {
                // coarse scores so that ties are common
                let score = (rng.random_range(0..25) as f64) / 24.0;
                ScoredSample::new(format!("s{i}"), score, rng.random_range(0..2))
            })
            .collect();
        samples[0].label = 0;
        samples[1].label = 1;
        let a = auroc(&samples).map_err(err)?;
        worst = worst.max((a - pairwise_auroc(&samples)).abs());
        for f in [|x: f64| x.exp(), |x: f64| 3.0 * x - 7.0, |x: f64| x.powi(3)] {
            let moved: Vec<ScoredSample> =
                samples.iter().map(|s| ScoredSample::new(s.slide_id.clone(), f(s.score), s.label)).collect();
            let b = auroc(&moved).map_err(err)?;
            ensure(a == b, || format!("instance {k}: monotone transform changed AUROC {a} -> {b}"))?;
        }
    }
    ensure(worst < AUROC_TOL, || format!("rank vs pairwise max error {worst:.3e}"))?;
    Ok(format!("100 instances, max |rank - pairwise| {worst:.1e}, transforms exact"))
}

fn hpo() -> Outcome {
    // closed form: n = ceil((s_max + 1) eta^s / (s + 1)), rung i runs
    // floor(n / eta^i) configs at budget R eta^(i - s)
    let (r, eta) = (27u64, 3u64);
    let s_max = 3u32;
    let got = hyperband_schedule(r, eta).map_err(err)?;
    ensure(got.len() == s_max as usize + 1, || format!("{} brackets", got.len()))?;
    for (b, s) in got.iter().zip((0..=s_max).rev()) {
        let n = ((s_max as u64 + 1) * eta.pow(s)).div_ceil(s as u64 + 1);
        let want: Vec<(usize, f64)> =
            (0..=s).map(|i| ((n / eta.pow(i)) as usize, (r / eta.pow(s - i)) as f64)).collect();
        let have: Vec<(usize, f64)> = b.rungs.iter().map(|x| (x.n_configs, x.budget)).collect();
        ensure(b.s == s && have == want, || format!("bracket s={s}: {have:?} vs {want:?}"))?;
    }

    let space = SearchSpace::new(vec![
        Dimension::new("a", 0, 20, 2).map_err(err)?,
        Dimension::new("b", -10, 0, 1).map_err(err)?,
    ])
    .map_err(err)?;
    let f = |p: &Point| {
        let (a, b) = (p[0] as f64, p[1] as f64);
        -((a - 13.0).powi(2) + 2.0 * (b + 3.4).powi(2) + 0.3 * a * b)
    };
    let brute = space.grid().into_iter().max_by(|x, y| f(x).total_cmp(&f(y))).expect("non-empty grid");
    let cfg = StudyConfig {
        seed: 5,
        ..Default::default()
    };
    let run = || run_study(&space, &cfg, |p, _| Ok::<_, String>(f(p)), None).map_err(err);
    let state = run()?;
    let best = state.best_trial().map(|t| t.point.clone());
    ensure(best.as_ref() == Some(&brute), || format!("best {best:?}, brute force {brute:?}"))?;
    ensure(run()? == state, || "repeat study differs".into())?;
    Ok(format!("(27, 3) brackets exact; optimum {brute:?} over {} trials; repeat identical", state.trials.len()))
}

fn latency() -> Outcome {
    let specs: Vec<ApproachSpec> = ["xs_slides", "vit_upscaling:M", "tiled_soft_vote:M", "tiled_soft_vote:L"]
        .iter()
        .map(|s| s.parse())
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let report = bench::run(&BenchArgs {
        model: None,
        approaches: specs,
        warmup: 1,
        iterations: 5,
        seed: 0,
    })
    .map_err(err)?;
    ensure(report.threads == 1, || format!("{} threads", report.threads))?;
    let get = |a, sc| report.entry(a, sc).ok_or_else(|| format!("missing {a}:{sc}"));
    let xs = get(Approach::XsSlides, Scale::XS)?;
    let up = get(Approach::VitUpscaling, Scale::M)?;
    let tm = get(Approach::TiledSoftVote, Scale::M)?;
    let tl = get(Approach::TiledSoftVote, Scale::L)?;
    let (a, b, c) = (xs.total.median_ms, up.total.median_ms, tl.total.median_ms);
    ensure(a < b && b < c, || format!("medians XS {a:.1} ms, upscaled-M {b:.1} ms, tiled-L {c:.1} ms"))?;
    let ratio = tl.forward.median_ms / tm.forward.median_ms;
    ensure(ratio >= TILE_SCALING.0 && ratio <= TILE_SCALING.1, || format!("tiled forward L/M ratio {ratio:.2}"))?;
    Ok(format!(
        "XS {a:.1} ms < upscaled-M {b:.1} ms < tiled-L {c:.1} ms; tiled forward L/M {ratio:.2}"
    ))
}

fn determinism() -> Outcome {
    use common::{bundle, pngs, stderr, thumbqc};
    let tmp = tempfile::tempdir().map_err(err)?;
    let dir = tmp.path();
    let model = bundle(dir, Approach::TiledSoftVote, 11);
    pngs(&dir.join("in"), 4);
    let mut verdicts = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("v{k}.jsonl"));
        let o = thumbqc(&[
            "infer",
            "--model",
            model.to_str().unwrap(),
            "--input",
            dir.join("in").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure(o.status.success(), || stderr(&o))?;
        let probs: Vec<String> = common::read_jsonl(&out).iter().map(|v| v["probability_ffpe"].to_string()).collect();
        verdicts.push(probs);
    }
    ensure(verdicts[0] == verdicts[1], || format!("{:?} vs {:?}", verdicts[0], verdicts[1]))?;

    let data = dir.join("data");
    let o = thumbqc(&["preprocess", "--synthetic", "4", "--out", data.to_str().unwrap(), "--seed", "3"]);
    ensure(o.status.success(), || stderr(&o))?;
    let cfg = dir.join("train.toml");
    std::fs::write(
        &cfg,
        "seed = 5\n[data]\nmanifest = 'data/manifest.csv'\n[model]\napproach = 'xs_slides'\n[train]\nepochs = 3\nbatch_size = 2\n",
    )
    .map_err(err)?;
    let mut logs = Vec::new();
    for k in 0..2 {
        let out = dir.join(format!("run{k}"));
        let o = thumbqc(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        ensure(o.status.success(), || stderr(&o))?;
        logs.push(std::fs::read(out.join(thumbqc::train::EPOCH_LOG)).map_err(err)?);
    }
    ensure(logs[0] == logs[1], || "epoch logs differ".into())?;
    let epochs = logs[0].iter().filter(|&&b| b == b'\n').count();
    ensure(epochs == 3, || format!("{epochs} epoch records"))?;
    Ok(format!("{} verdicts identical; {epochs}-epoch logs byte-identical", verdicts[0].len()))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 11] = [
        ("geometry", geometry),
        ("resampler oracle", resampler),
        ("position-embedding interpolation", position_embeddings),
        ("aggregators", aggregators),
        ("gradient checks", gradients),
        ("freezing contract", freezing),
        ("synthetic end-to-end", end_to_end),
        ("metrics oracle", metrics),
        ("hyperparameter search", hpo),
        ("latency harness", latency),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(why) => {
                println!("FAIL {n:>2} {name}: {why}");
                failed.push(n);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
