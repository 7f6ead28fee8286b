//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::fs;
use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use decaf::dump::{read_map, write_map};
use decaf::eval::evaluate_dirs;
use decaf::fuse::{fuse_manifest, FuseOptions};
use decaf::manifest::read_manifest;
use decaf::results::SegmentEcho;
use decaf::segment::segment_map_in_process;
use decaf::synth::{write_suite, SuiteLayout};
use decaf_core::coarse::{attn_mask, mask_upscale, otsu_threshold, OtsuScope, DEFAULT_BINS};
use decaf_core::fusion::{
    complementary_fuse, contrastive_fuse, fuse, gaussian_kernel, gaussian_smooth, minmax_normalize, upsample_bilinear,
    FusionConfig, FusionInputs, Modalities, NormMode,
};
use decaf_core::grid::{Grid, GroundingMap};
use decaf_core::mask::{CellMask, Mask};
use decaf_core::metrics::{contour_accuracy, region_similarity, ObjectMode};
use decaf_core::rollout::{
    aggregate_heads, extract_grounding, head_weights, residual_mix, rollout, stack_grounding, HeadWeights, RolloutMatrix,
    RolloutOptions, SquareMatrix,
};
use decaf_core::segmenter::{render_label_video, MovingSquare, OracleSegmenter, Point, Segmenter};
use decaf_core::stack::{AttentionStack, LayerView, Modality, PromptKind};
use decaf_core::tracklet::{
    attention_binary_mask, combined_score, consistency_score, generate_point_queries, penalized_values, run_prompting,
    select_tracklets, tracklet_nms, volume_iou, Consistency, PromptingConfig, TrackletFate,
};
use decaf_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROLLOUT_TOL: f64 = 1e-6;
const FIXTURE_TOL: f64 = 1e-6;
const METRICS_TOL: f64 = 1e-6;
const E2E_MIN_JF: f64 = 0.90;
const E2E_MAX_SECONDS: f64 = 60.0;
const SUITE_SEED: u64 = 2024;
const SUITE_VIDEOS: usize = 10;

type Check = Result<String, String>;

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, name: &str, result: Check) {
        match result {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: {a} vs {b}"))
}

fn stack(layers: Vec<Vec<f32>>, heads: usize, n: usize) -> AttentionStack {
    AttentionStack {
        layers,
        first_stored_layer: 0,
        num_model_layers: None,
        num_heads: heads,
        seq_len: n,
        visual_start: 1,
        visual_count: n - 2,
        text_count: 2,
        query_index: n - 1,
        grid: Grid::new(1, 1, n - 2),
        modality: Modality::Video,
        prompt_kind: PromptKind::Object,
        frame_index: None,
        capture_notes: String::new(),
    }
}

// ---------------------------------------------------------------- rollout

/// Straightforward f64 rollout: head strengths, weighted mean, row
/// renormalization, residual mixing, left-multiplied layer by layer.
fn reference_rollout(layers: &[Vec<f32>], heads: usize, n: usize, visual: Range<usize>) -> Vec<Vec<f64>> {
    let at = |l: &Vec<f32>, h: usize, i: usize, j: usize| l[(h * n + i) * n + j] as f64;
    let mut r: Option<Vec<Vec<f64>>> = None;
    for l in layers {
        let mut w: Vec<f64> = (0..heads)
            .map(|h| {
                (0..n)
                    .map(|i| visual.clone().map(|j| at(l, h, i, j)).fold(0.0, f64::max))
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        let wmax = w.iter().copied().fold(0.0, f64::max);
        if wmax == 0.0 {
            w = vec![1.0; heads];
        } else {
            w.iter_mut().for_each(|x| *x /= wmax);
        }
        let wsum: f64 = w.iter().sum();
        let mut a = vec![vec![0.0; n]; n];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..heads).map(|h| w[h] * at(l, h, i, j)).sum::<f64>() / wsum;
            }
            let s: f64 = row.iter().sum();
            if s > 0.0 {
                row.iter_mut().for_each(|v| *v /= s);
            } else {
                row[i] = 1.0;
            }
        }
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = 0.5 * *v + if i == j { 0.5 } else { 0.0 };
            }
        }
        r = Some(match r {
            None => a,
            Some(prev) => (0..n)
                .map(|i| (0..n).map(|j| (0..n).map(|k| a[i][k] * prev[k][j]).sum()).collect())
                .collect(),
        });
    }
    r.expect("at least one layer")
}

fn random_stochastic_layer(rng: &mut ChaCha8Rng, heads: usize, n: usize, causal: bool) -> Vec<f32> {
    let mut out = vec![0f32; heads * n * n];
    for h in 0..heads {
        for i in 0..n {
            let cols = if causal { i + 1 } else { n };
            let raw: Vec<f64> = (0..cols)
                .map(|_| if rng.random_bool(0.2) { 0.0 } else { rng.random::<f64>() })
                .collect();
            let s: f64 = raw.iter().sum();
            let row = &mut out[(h * n + i) * n..(h * n + i + 1) * n];
            if s == 0.0 {
                row[i] = 1.0;
                continue;
            }
            for (o, v) in row.iter_mut().zip(&raw) {
                *o = (v / s) as f32;
            }
        }
    }
    out
}

fn criterion_rollout() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_sum = 0.0f64;
    let mut worst_entry = 0.0f64;
    for trial in 0..200 {
        let n = rng.random_range(3..=64);
        let heads = rng.random_range(1..=8);
        let layers = rng.random_range(1..=6);
        let causal = trial % 2 == 0;
        let data: Vec<Vec<f32>> = (0..layers)
            .map(|_| random_stochastic_layer(&mut rng, heads, n, causal))
            .collect();
        let s = stack(data.clone(), heads, n);
        s.validate().map_err(|e| format!("generator produced an invalid stack: {e}"))?;
        let got = rollout(
            &s,
            RolloutOptions {
                start_layer: 0,
                renormalize_rows: true,
            },
        )
        .map_err(|e| e.to_string())?;
        let want = reference_rollout(&data, heads, n, s.visual_range());
        for (i, want_row) in want.iter().enumerate() {
            let got_sum: f64 = got.matrix.row(i).iter().sum();
            let want_sum: f64 = want_row.iter().sum();
            worst_sum = worst_sum.max((got_sum - want_sum).abs()).max((got_sum - 1.0).abs());
            for (j, &w) in want_row.iter().enumerate() {
                worst_entry = worst_entry.max((got.matrix.get(i, j) - w).abs());
            }
        }
        if worst_sum > ROLLOUT_TOL || worst_entry > ROLLOUT_TOL {
            return Err(format!(
                "trial {trial} (n={n}, h={heads}, L={layers}): row-sum error {worst_sum:e}, entry error {worst_entry:e}"
            ));
        }
    }
    for (n, heads, layers) in [(3, 1, 1), (10, 3, 4), (64, 8, 6), (17, 5, 2)] {
        let mut id = vec![0f32; heads * n * n];
        for h in 0..heads {
            for i in 0..n {
                id[(h * n + i) * n + i] = 1.0;
            }
        }
        let s = stack(vec![id; layers], heads, n);
        let r = rollout(
            &s,
            RolloutOptions {
                start_layer: 0,
                renormalize_rows: true,
            },
        )
        .map_err(|e| e.to_string())?;
        ensure(r.matrix == SquareMatrix::identity(n), || {
            format!("identity stack n={n} h={heads} L={layers} is not exactly identity")
        })?;
    }
    Ok(format!(
        "200 random stacks, max row-sum deviation {worst_sum:.1e}, max entry deviation {worst_entry:.1e}; identity stacks exact"
    ))
}

// ---------------------------------------------------------------- hand fixtures

fn map1(values: Vec<f64>, frames: usize, h: usize, w: usize) -> GroundingMap {
    GroundingMap::new(Grid::new(frames, h, w), values).unwrap()
}

fn rect(h: usize, w: usize, y: Range<usize>, x: Range<usize>) -> Mask {
    Mask::from_fn(h, w, |yy, xx| y.contains(&yy) && x.contains(&xx))
}

type Fixture = (&'static str, fn() -> Result<(), String>);

fn fx_row_sum_error() -> Result<(), String> {
    let s = stack(vec![vec![0.6, 0.6, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]], 1, 4);
    match s.validate() {
        Err(Error::RowSum { layer: 0, head: 0, row: 0, .. }) => Ok(()),
        other => Err(format!("expected row-sum error at (0,0,0), got {other:?}")),
    }
}

fn fx_head_weights() -> Result<(), String> {
    // 3 tokens, visual columns 0..2: head A peaks at 0.9 per row, head B at 0.3
    let data = [
        0.9, 0.05, 0.05, 0.05, 0.9, 0.05, 0.9, 0.0, 0.1, //
        0.3, 0.3, 0.4, 0.3, 0.3, 0.4, 0.3, 0.3, 0.4,
    ];
    let w = head_weights(LayerView::new(&data, 2, 3).unwrap(), 0..2).map_err(|e| e.to_string())?;
    close(w.as_slice()[0], 1.0, FIXTURE_TOL, "w_A")?;
    close(w.as_slice()[1], 1.0 / 3.0, FIXTURE_TOL, "w_B")
}

fn fx_aggregate() -> Result<(), String> {
    let data = [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0];
    let a = aggregate_heads(LayerView::new(&data, 2, 2).unwrap(), &HeadWeights::uniform(2), true)
        .map_err(|e| e.to_string())?;
    ensure(a.data().iter().all(|&v| (v - 0.5).abs() <= FIXTURE_TOL), || format!("{:?}", a.data()))
}

fn fx_residual() -> Result<(), String> {
    let a = residual_mix(&SquareMatrix::from_vec(2, vec![1.0, 0.0, 0.5, 0.5]).unwrap());
    for (g, w) in a.data().iter().zip([1.0, 0.0, 0.25, 0.75]) {
        close(*g, w, FIXTURE_TOL, "residual")?;
    }
    Ok(())
}

fn fx_residual_uniform() -> Result<(), String> {
    for n in [2usize, 5] {
        let u = SquareMatrix::from_vec(n, vec![1.0 / n as f64; n * n]).unwrap();
        let a = residual_mix(&u);
        for i in 0..n {
            for j in 0..n {
                let want = 1.0 / (2.0 * n as f64) + if i == j { 0.5 } else { 0.0 };
                close(a.get(i, j), want, FIXTURE_TOL, "mixed uniform")?;
            }
            close(a.row(i).iter().sum(), 1.0, FIXTURE_TOL, "row sum")?;
        }
    }
    Ok(())
}

fn fx_uniform_fixed_point() -> Result<(), String> {
    // uniform R is a fixed point of the mixed uniform layer
    let u = SquareMatrix::from_vec(2, vec![0.5; 4]).unwrap();
    let fixed = residual_mix(&u).matmul(&u).unwrap();
    ensure(fixed.data().iter().all(|&v| (v - 0.5).abs() <= FIXTURE_TOL), || format!("{:?}", fixed.data()))?;
    // a rollout of k uniform layers from the identity is (1 - 2^-k) U + 2^-k I
    let n = 4;
    for k in 1..=4 {
        let s = stack(vec![vec![0.25f32; n * n]; k], 1, n);
        let r = rollout(&s, RolloutOptions { start_layer: 0, renormalize_rows: true }).map_err(|e| e.to_string())?;
        let p = 0.5f64.powi(k as i32);
        for i in 0..n {
            for j in 0..n {
                let want = (1.0 - p) / n as f64 + if i == j { p } else { 0.0 };
                close(r.matrix.get(i, j), want, FIXTURE_TOL, "uniform rollout")?;
            }
        }
    }
    Ok(())
}

fn fx_uniform_readout() -> Result<(), String> {
    let n = 6;
    let r = RolloutMatrix {
        matrix: SquareMatrix::from_vec(n, vec![1.0 / n as f64; n * n]).unwrap(),
        start_layer: 0,
    };
    let m = extract_grounding(&r, 5, 1..5, Grid::new(1, 2, 2)).map_err(|e| e.to_string())?;
    ensure(m.values().iter().all(|&v| (v - 1.0 / 6.0).abs() <= FIXTURE_TOL), || format!("{:?}", m.values()))
}

fn fx_impulse() -> Result<(), String> {
    let mut v = vec![0.0; 49];
    v[24] = 1.0;
    let s = gaussian_smooth(&map1(v, 1, 7, 7), 1.0).map_err(|e| e.to_string())?;
    let k = gaussian_kernel(1.0).map_err(|e| e.to_string())?;
    let total: f64 = k.iter().sum();
    close(total, 1.0, FIXTURE_TOL, "kernel sum")?;
    for y in 0..7 {
        for x in 0..7 {
            close(s.get(0, y, x), k[y] * k[x], FIXTURE_TOL, "impulse response")?;
        }
    }
    close(s.values().iter().sum(), 1.0, FIXTURE_TOL, "mass")
}

fn fx_minmax() -> Result<(), String> {
    let m = map1(vec![0.0, 1.0, 0.0, 10.0], 2, 1, 2);
    let pf = minmax_normalize(&m, NormMode::PerFrame);
    ensure(pf.values() == [0.0, 1.0, 0.0, 1.0], || format!("per frame {:?}", pf.values()))?;
    let gl = minmax_normalize(&m, NormMode::Global);
    close(gl.get(0, 0, 1), 0.1, FIXTURE_TOL, "global frame 0 max")?;
    close(gl.get(1, 0, 1), 1.0, FIXTURE_TOL, "global frame 1 max")
}

fn fx_contrast() -> Result<(), String> {
    let v = contrastive_fuse(&map1(vec![0.8, 0.2], 1, 1, 2), &map1(vec![0.1, 0.5], 1, 1, 2), NormMode::Global)
        .map_err(|e| e.to_string())?;
    ensure(v.values() == [1.0, 0.0], || format!("{:?}", v.values()))
}

fn fx_bilinear() -> Result<(), String> {
    let u = upsample_bilinear(&map1(vec![0.0, 1.0, 0.0, 1.0], 1, 2, 2), (2, 4)).map_err(|e| e.to_string())?;
    for y in 0..2 {
        let row: Vec<f64> = (0..4).map(|x| u.get(0, y, x)).collect();
        ensure(row.windows(2).all(|w| w[0] <= w[1]) && row[0] < row[3], || format!("row {y}: {row:?}"))?;
    }
    Ok(())
}

fn fx_complementary() -> Result<(), String> {
    let v = complementary_fuse(&map1(vec![0.2, 0.8], 1, 1, 2), &map1(vec![0.6, 0.0], 1, 1, 2), 0.5)
        .map_err(|e| e.to_string())?;
    close(v.values()[0], 0.4, FIXTURE_TOL, "cell 0")?;
    close(v.values()[1], 0.4, FIXTURE_TOL, "cell 1")
}

fn fx_multiscale() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut rand_map = |t, h, w| map1((0..t * h * w).map(|_| rng.random::<f64>()).collect(), t, h, w);
    let inputs = FusionInputs {
        video_object: Some(rand_map(3, 2, 2)),
        video_background: Some(rand_map(3, 2, 2)),
        frame_object: Some(rand_map(3, 4, 4)),
        frame_background: Some(rand_map(3, 4, 4)),
    };
    let v = fuse(&inputs, &FusionConfig::default()).map_err(|e| e.to_string())?;
    ensure(v.grid() == Grid::new(3, 4, 4), || format!("fused grid {:?}", v.grid()))
}

/// One-layer stack whose query row puts `mass` on `cells` and spreads the rest.
fn block_stack(grid: Grid, cells: &[usize], mass: f64) -> AttentionStack {
    let nv = grid.len();
    let n = nv + 2;
    let mut l = vec![0f32; n * n];
    for i in 0..n - 1 {
        l[i * n + i] = 1.0;
    }
    let q = &mut l[(n - 1) * n..];
    let rest = (1.0 - mass) / (n - cells.len()) as f64;
    for (j, v) in q.iter_mut().enumerate() {
        *v = rest as f32;
        if j >= 1 && j <= nv && cells.contains(&(j - 1)) {
            *v = (mass / cells.len() as f64) as f32;
        }
    }
    let mut s = stack(vec![l], 1, n);
    s.grid = grid;
    s
}

fn fx_block_argmax() -> Result<(), String> {
    let grid = Grid::new(1, 6, 6);
    let block = [14usize, 15, 20, 21];
    let obj = block_stack(grid, &block, 0.6);
    let bg = block_stack(grid, &[0, 5, 30, 35], 0.6);
    let opts = RolloutOptions { start_layer: 0, renormalize_rows: true };
    let inputs = FusionInputs {
        video_object: Some(stack_grounding(&obj, opts).map_err(|e| e.to_string())?),
        video_background: Some(stack_grounding(&bg, opts).map_err(|e| e.to_string())?),
        ..Default::default()
    };
    let cfg = FusionConfig { modalities: Modalities::VideoOnly, ..Default::default() };
    let v = fuse(&inputs, &cfg).map_err(|e| e.to_string())?;
    let (_, y, x) = v.argmax();
    ensure(block.contains(&(y * 6 + x)), || format!("argmax at ({y}, {x})"))
}

fn fx_otsu_two_levels() -> Result<(), String> {
    let values = [0.1, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9];
    let t = otsu_threshold(&values, DEFAULT_BINS).map_err(|e| e.to_string())?;
    ensure(t > 0.1 && t <= 0.9, || format!("threshold {t}"))?;
    let m = attn_mask(&map1(values.to_vec(), 1, 2, 4), OtsuScope::Global);
    ensure(m.data().iter().zip(values).all(|(&b, v)| b == (v == 0.9)), || format!("{:?}", m.data()))
}

fn fx_otsu_clusters() -> Result<(), String> {
    let values = [0.19, 0.2, 0.21, 0.2, 0.79, 0.8, 0.81, 0.8, 0.8];
    let m = attn_mask(&map1(values.to_vec(), 1, 1, 9), OtsuScope::Global);
    ensure(m.data().iter().zip(values).all(|(&b, v)| b == (v > 0.5)), || format!("{:?}", m.data()))
}

fn fx_otsu_present_frames() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (t, h, w) = (10, 4, 4);
    let values: Vec<f64> = (0..t * h * w)
        .map(|i| {
            let (f, c) = (i / 16, i % 16);
            let on = (3..=8).contains(&f) && [5, 6, 9, 10].contains(&c);
            if on { 0.8 + 0.2 * rng.random::<f64>() } else { 0.1 * rng.random::<f64>() }
        })
        .collect();
    let thr = otsu_threshold(&values, DEFAULT_BINS).map_err(|e| e.to_string())?;
    let m = attn_mask(&map1(values.clone(), t, h, w), OtsuScope::Global);
    ensure(m.data().iter().zip(&values).all(|(&b, &v)| b == (v >= thr)), || "mask disagrees with threshold".into())?;
    for f in 0..t {
        ensure(m.frame_is_empty(f) != (3..=8).contains(&f), || format!("frame {f}"))?;
    }
    Ok(())
}

fn fx_upscale() -> Result<(), String> {
    let cm = CellMask::from_vec(Grid::new(1, 2, 2), vec![true, false, false, true]).unwrap();
    let m = mask_upscale(&cm, (14.0, 14.0), (28, 28)).map_err(|e| e.to_string())?;
    ensure(m.len() == 1 && m[0].dims() == (28, 28), || "dims".into())?;
    ensure(m[0] == Mask::from_fn(28, 28, |y, x| (y < 14) == (x < 14)), || "pattern".into())
}

fn moving_square_video() -> (decaf_core::segmenter::LabelVideo, Vec<MovingSquare>) {
    let squares = vec![
        MovingSquare { id: 3, size: 6, start: (24, 2), velocity: (0, 0), visible: (0, 7) },
        MovingSquare { id: 7, size: 8, start: (8, 2), velocity: (0, 2), visible: (0, 7) },
    ];
    (render_label_video(8, 32, 32, &squares), squares)
}

fn fx_oracle_tracks() -> Result<(), String> {
    let (labels, squares) = moving_square_video();
    let mut seg = OracleSegmenter::new(labels);
    let fm = seg.prompt(0, &[Point { x: 5, y: 10 }]).map_err(|e| e.to_string())?;
    ensure(fm.confidence == 1.0, || "confidence".into())?;
    let frames: Vec<usize> = (0..8).collect();
    let out = seg.propagate(&frames).map_err(|e| e.to_string())?;
    for (t, fm) in out.iter().enumerate() {
        let want = Mask::from_fn(32, 32, |y, x| squares[1].contains(t, y, x));
        ensure(fm.mask == want && fm.confidence == 1.0, || format!("frame {t}"))?;
    }
    Ok(())
}

fn fx_point_queries() -> Result<(), String> {
    let q = generate_point_queries(&map1(vec![0.9, 0.1, 0.2, 0.85], 1, 2, 2), 0.8, (14.0, 14.0))
        .map_err(|e| e.to_string())?;
    ensure(q.len() == 2, || format!("{} queries", q.len()))?;
    ensure(q[0].pixel == (7, 7) && q[0].attn == 0.9, || format!("{:?}", q[0]))?;
    ensure(q[1].pixel == (21, 21) && q[1].attn == 0.85, || format!("{:?}", q[1]))
}

fn fx_volume_iou() -> Result<(), String> {
    let a = [rect(4, 4, 0..2, 0..2), rect(4, 4, 0..1, 0..2)];
    let b = [rect(4, 4, 0..2, 0..4), rect(4, 4, 0..1, 0..4)];
    close(volume_iou(&a, &b).map_err(|e| e.to_string())?, 0.5, 0.0, "volume IoU")
}

fn fx_nms_chain() -> Result<(), String> {
    // 1-D chain: IoU(a,b) = IoU(b,c) = 9/11 above 0.7, IoU(a,c) = 2/3 below
    let a = [rect(1, 14, 0..1, 0..10)];
    let b = [rect(1, 14, 0..1, 1..11)];
    let c = [rect(1, 14, 0..1, 2..12)];
    let kept = tracklet_nms(&[&a, &b, &c], &[3.0, 2.0, 1.0], 0.7).map_err(|e| e.to_string())?;
    ensure(kept == [0, 2], || format!("kept {kept:?}"))
}

fn peaked_frame() -> GroundingMap {
    map1(vec![0.9, 0.1, 0.2, 0.2], 1, 2, 2)
}

fn fx_attn_binary_mask() -> Result<(), String> {
    let m = attention_binary_mask(&peaked_frame());
    ensure(m.data() == [true, false, false, false], || format!("{:?}", m.data()))
}

fn fx_penalized() -> Result<(), String> {
    let p = penalized_values(&peaked_frame());
    ensure(p.values() == [0.9, -0.9, -0.9, -0.9], || format!("{:?}", p.values()))
}

fn fx_consistency() -> Result<(), String> {
    let v = peaked_frame();
    let pooled = map1(vec![1.0, 1.0, 0.0, 0.0], 1, 2, 2);
    let c = consistency_score(&pooled, &attention_binary_mask(&v), &penalized_values(&v)).map_err(|e| e.to_string())?;
    close(c.raw, 0.0, FIXTURE_TOL, "s_ac")
}

fn fx_combined() -> Result<(), String> {
    let full = Consistency { raw: 1.0, clamped: 1.0 };
    let s = combined_score(0.9, 0.8, full);
    close(s, 0.9, FIXTURE_TOL, "s_trk")?;
    let low = Consistency { raw: 0.2, clamped: 0.2 };
    let t = combined_score(0.8, 0.4, low);
    close(t, 1.4 / 3.0, FIXTURE_TOL, "s_trk")?;
    ensure(select_tracklets(&[s, t], 0.8) == [0], || "selection".into())
}

/// Grounding map over `moving_square_video`: per-cell coverage of region 7.
fn region7_map(spurious: Option<(usize, usize, usize)>) -> GroundingMap {
    let (labels, _) = moving_square_video();
    let mut values = Vec::new();
    for t in 0..8 {
        for cy in 0..4 {
            for cx in 0..4 {
                let mut n = 0;
                for y in cy * 8..cy * 8 + 8 {
                    for x in cx * 8..cx * 8 + 8 {
                        n += usize::from(labels.label(t, y, x) == 7);
                    }
                }
                values.push(n as f64 / 64.0);
            }
        }
    }
    if let Some((t, y, x)) = spurious {
        values[t * 16 + y * 4 + x] = 0.95;
    }
    map1(values, 8, 4, 4).with_scale((8.0, 8.0))
}

fn fx_region7_end_to_end() -> Result<(), String> {
    let (labels, _) = moving_square_video();
    let gt: Vec<Mask> = (0..8).map(|t| labels.region_mask(t, 7)).collect();
    let mut seg = OracleSegmenter::new(labels);
    let sampled: Vec<usize> = (0..8).collect();
    let out = run_prompting(&region7_map(None), &sampled, &mut seg, &PromptingConfig::default()).map_err(|e| e.to_string())?;
    ensure(out.union == gt, || "union differs from region 7".into())?;
    for (p, g) in out.union.iter().zip(&gt) {
        close(region_similarity(p, g).unwrap(), 1.0, 0.0, "J")?;
    }
    Ok(())
}

fn fx_spurious_blob() -> Result<(), String> {
    let (labels, _) = moving_square_video();
    // cell (1, 3) of frame 2 is background in every frame
    ensure((8..16).all(|y| (24..32).all(|x| labels.label(2, y, x) == 0)), || "fixture cell not background".into())?;
    let gt: Vec<Mask> = (0..8).map(|t| labels.region_mask(t, 7)).collect();
    let mut seg = OracleSegmenter::new(labels);
    let sampled: Vec<usize> = (0..8).collect();
    let out = run_prompting(&region7_map(Some((2, 1, 3))), &sampled, &mut seg, &PromptingConfig::default())
        .map_err(|e| e.to_string())?;
    let spurious = out
        .candidates
        .iter()
        .find(|c| c.seed.frame == 2 && c.seed.cell == (1, 3))
        .ok_or("no candidate from the spurious blob")?;
    let scores = spurious.scores.ok_or("spurious tracklet was not scored")?;
    close(scores.consistency.raw, 0.0, FIXTURE_TOL, "s_ac")?;
    ensure(spurious.fate == TrackletFate::BelowThreshold, || format!("fate {:?}", spurious.fate))?;
    ensure(out.union == gt, || "union differs from region 7".into())
}

fn fx_metric_examples() -> Result<(), String> {
    let a = rect(6, 6, 1..3, 1..3);
    let b = rect(6, 6, 1..3, 2..4);
    close(region_similarity(&a, &b).unwrap(), 1.0 / 3.0, FIXTURE_TOL, "J half overlap")?;
    let s = rect(64, 64, 20..30, 20..30);
    let t = rect(64, 64, 20..30, 21..31);
    close(contour_accuracy(&s, &t).unwrap(), 1.0, FIXTURE_TOL, "F shifted square")
}

fn fixtures() -> Vec<Fixture> {
    vec![
        ("row-sum error coordinates", fx_row_sum_error),
        ("head weights", fx_head_weights),
        ("head aggregation", fx_aggregate),
        ("residual mixing", fx_residual),
        ("residual mixing of uniform", fx_residual_uniform),
        ("uniform rollout", fx_uniform_fixed_point),
        ("uniform read-out", fx_uniform_readout),
        ("gaussian impulse", fx_impulse),
        ("min-max modes", fx_minmax),
        ("contrastive clamp", fx_contrast),
        ("bilinear monotone", fx_bilinear),
        ("complementary mean", fx_complementary),
        ("multi-scale output grid", fx_multiscale),
        ("object block argmax", fx_block_argmax),
        ("otsu two levels", fx_otsu_two_levels),
        ("otsu two clusters", fx_otsu_clusters),
        ("otsu frames 3-8", fx_otsu_present_frames),
        ("mask upscale", fx_upscale),
        ("oracle follows region", fx_oracle_tracks),
        ("point queries", fx_point_queries),
        ("volume IoU", fx_volume_iou),
        ("NMS chain", fx_nms_chain),
        ("attention binary mask", fx_attn_binary_mask),
        ("penalized values", fx_penalized),
        ("consistency", fx_consistency),
        ("combined score", fx_combined),
        ("region 7 end to end", fx_region7_end_to_end),
        ("spurious blob filtered", fx_spurious_blob),
        ("J and F examples", fx_metric_examples),
    ]
}

fn criterion_fixtures() -> Check {
    let all = fixtures();
    let failed: Vec<String> = all
        .iter()
        .filter_map(|(name, f)| f().err().map(|e| format!("{name} ({e})")))
        .collect();
    if failed.is_empty() {
        Ok(format!("{}/{} fixtures", all.len(), all.len()))
    } else {
        Err(failed.join("; "))
    }
}

// ---------------------------------------------------------------- Otsu

/// Exhaustive search over all 255 interior edges. Between-class variance in
/// bin units is `(n1 S0 - n0 S1)^2 / (n0 n1 N^2)`; candidates are compared by
/// cross-multiplying in u128, ties keep the lowest edge.
fn otsu_oracle(values: &[f64]) -> Option<usize> {
    let bins = 256usize;
    let bin = |v: f64| ((v * bins as f64).floor() as usize).min(bins - 1);
    let mut best: Option<(usize, u128, u128)> = None;
    for k in 1..bins {
        let (mut n0, mut n1, mut s0, mut s1) = (0u128, 0u128, 0u128, 0u128);
        for &v in values {
            let b = bin(v) as u128;
            if b < k as u128 {
                n0 += 1;
                s0 += b;
            } else {
                n1 += 1;
                s1 += b;
            }
        }
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let d = (n1 * s0).abs_diff(n0 * s1);
        let (num, den) = (d * d, n0 * n1);
        match best {
            Some((_, bn, bd)) if num * bd <= bn * den => {}
            _ => best = Some((k, num, den)),
        }
    }
    best.map(|b| b.0)
}

fn random_values(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.random_range(1..=400);
    match rng.random_range(0..4) {
        0 => (0..n).map(|_| rng.random::<f64>()).collect(),
        1 => {
            let centers: Vec<f64> = (0..rng.random_range(1..=4)).map(|_| rng.random::<f64>()).collect();
            (0..n)
                .map(|_| {
                    let c = centers[rng.random_range(0..centers.len())];
                    (c + 0.05 * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)
                })
                .collect()
        }
        2 => (0..n).map(|_| rng.random_range(0..6) as f64 / 5.0).collect(),
        _ => (0..n).map(|_| rng.random::<f64>().powi(4)).collect(),
    }
}

fn criterion_otsu() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut degenerate = 0;
    for trial in 0..1000 {
        let values = random_values(&mut rng);
        let lib = otsu_threshold(&values, 256);
        match (otsu_oracle(&values), lib) {
            (Some(k), Ok(t)) if t == k as f64 / 256.0 => {}
            (None, Err(Error::DegenerateHistogram)) => degenerate += 1,
            (want, got) => return Err(format!("trial {trial}: oracle edge {want:?}, library {got:?}")),
        }
    }
    Ok(format!("1000 value sets exact ({degenerate} degenerate)"))
}

// ---------------------------------------------------------------- NMS

fn criterion_nms() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut kept_total = 0;
    for trial in 0..500 {
        let k = rng.random_range(1..=8);
        let frames = rng.random_range(1..=3);
        let (h, w) = (6, 6);
        let tracklets: Vec<Vec<Mask>> = (0..k)
            .map(|_| {
                (0..frames)
                    .map(|_| {
                        let y0 = rng.random_range(0..h);
                        let x0 = rng.random_range(0..w);
                        let y1 = rng.random_range(y0..=h);
                        let x1 = rng.random_range(x0..=w);
                        rect(h, w, y0..y1, x0..x1)
                    })
                    .collect()
            })
            .collect();
        let scores: Vec<f64> = (0..k).map(|_| rng.random_range(0..5) as f64 * 0.25).collect();
        let thr = [0.0, 0.3, 0.5, 0.7][rng.random_range(0..4)];

        // independent volume IoU
        let iou = |a: usize, b: usize| {
            let (mut i, mut u) = (0usize, 0usize);
            for (ma, mb) in tracklets[a].iter().zip(&tracklets[b]) {
                for (&pa, &pb) in ma.data().iter().zip(mb.data()) {
                    i += usize::from(pa && pb);
                    u += usize::from(pa || pb);
                }
            }
            if u == 0 { 0.0 } else { i as f64 / u as f64 }
        };
        let ahead = |a: usize, b: usize| scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
        // S is the greedy result iff each item is in S exactly when no
        // higher-priority member of S overlaps it above the threshold
        let fixed_points: Vec<u32> = (0u32..1 << k)
            .filter(|&s| {
                (0..k).all(|i| {
                    let blocked = (0..k).any(|j| s >> j & 1 == 1 && ahead(j, i) && iou(i, j) > thr);
                    (s >> i & 1 == 1) == !blocked
                })
            })
            .collect();
        if fixed_points.len() != 1 {
            return Err(format!("trial {trial}: {} fixed points", fixed_points.len()));
        }
        let refs: Vec<&[Mask]> = tracklets.iter().map(Vec::as_slice).collect();
        let kept = tracklet_nms(&refs, &scores, thr).map_err(|e| e.to_string())?;
        let lib_set = kept.iter().fold(0u32, |s, &i| s | 1 << i);
        if lib_set != fixed_points[0] {
            return Err(format!("trial {trial}: library {lib_set:b}, oracle {:b}", fixed_points[0]));
        }
        if kept.windows(2).any(|w| !ahead(w[0], w[1])) {
            return Err(format!("trial {trial}: kept list not in priority order"));
        }
        kept_total += kept.len();
    }
    Ok(format!("500 trials exact ({kept_total} tracklets kept in total)"))
}

// ---------------------------------------------------------------- consistency

fn criterion_consistency() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut decreasing_steps = 0;
    for trial in 0..100 {
        let t = rng.random_range(1..=4);
        let (h, w) = (rng.random_range(2..=6), rng.random_range(2..=6));
        let values: Vec<f64> = (0..t * h * w)
            .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random::<f64>() })
            .collect();
        let v = map1(values, t, h, w);
        let m_attn = attention_binary_mask(&v);
        let pen = penalized_values(&v);
        let as_map = |m: &CellMask| map1(m.data().iter().map(|&b| f64::from(u8::from(b))).collect(), t, h, w);
        let c = consistency_score(&as_map(&m_attn), &m_attn, &pen).map_err(|e| e.to_string())?;
        if c.raw != 1.0 {
            return Err(format!("trial {trial}: s_ac(M_attn) = {}", c.raw));
        }
        // add sub-mean cells one at a time; each has delta_t < 0 when its frame max is positive
        let mut grown = m_attn.data().to_vec();
        let mut last = c.raw;
        let mut order: Vec<usize> = (0..grown.len()).filter(|&i| !grown[i]).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        for i in order {
            grown[i] = true;
            let pooled = as_map(&CellMask::from_vec(v.grid(), grown.clone()).unwrap());
            let s = consistency_score(&pooled, &m_attn, &pen).map_err(|e| e.to_string())?.raw;
            let delta = pen.values()[i];
            if delta < 0.0 {
                if s >= last {
                    return Err(format!("trial {trial}: adding cell {i} (delta {delta}) moved s_ac {last} -> {s}"));
                }
                decreasing_steps += 1;
            }
            last = s;
        }
    }
    Ok(format!(
        "s_ac(M_attn) = 1 exactly on 100 maps; {decreasing_steps} sub-mean additions all strictly decreasing"
    ))
}

// ---------------------------------------------------------------- metrics

struct Golden {
    name: &'static str,
    size: (usize, usize),
    pred: &'static [(usize, usize, usize, usize, bool)],
    gt: &'static [(usize, usize, usize, usize, bool)],
    j: f64,
    f: f64,
}

/// Values frozen from an independent numpy/scipy implementation that matches
/// boundaries with a Euclidean distance transform instead of dilation.
const GOLDEN: &[Golden] = &[
    Golden { name: "identical", size: (10, 10), pred: &[(2, 6, 2, 6, true)], gt: &[(2, 6, 2, 6, true)], j: 1.0, f: 1.0 },
    Golden { name: "disjoint", size: (10, 10), pred: &[(0, 3, 0, 3, true)], gt: &[(6, 9, 6, 9, true)], j: 0.0, f: 0.0 },
    Golden { name: "both empty", size: (10, 10), pred: &[], gt: &[], j: 1.0, f: 1.0 },
    Golden { name: "pred empty", size: (10, 10), pred: &[], gt: &[(2, 5, 2, 5, true)], j: 0.0, f: 0.0 },
    Golden { name: "gt empty", size: (10, 10), pred: &[(2, 5, 2, 5, true)], gt: &[], j: 0.0, f: 0.0 },
    Golden { name: "half overlap", size: (6, 6), pred: &[(1, 3, 1, 3, true)], gt: &[(1, 3, 2, 4, true)], j: 0.3333333333333333, f: 0.5 },
    Golden { name: "shift 1px", size: (64, 64), pred: &[(20, 30, 20, 30, true)], gt: &[(20, 30, 21, 31, true)], j: 0.8181818181818182, f: 1.0 },
    Golden { name: "nested", size: (20, 20), pred: &[(8, 12, 8, 12, true)], gt: &[(6, 14, 6, 14, true)], j: 0.25, f: 0.0 },
    Golden { name: "full vs full", size: (16, 16), pred: &[(0, 16, 0, 16, true)], gt: &[(0, 16, 0, 16, true)], j: 1.0, f: 1.0 },
    Golden { name: "full vs half", size: (16, 16), pred: &[(0, 16, 0, 16, true)], gt: &[(0, 16, 0, 8, true)], j: 0.5, f: 0.0 },
    Golden { name: "shift 2px", size: (64, 64), pred: &[(20, 30, 20, 30, true)], gt: &[(20, 30, 22, 32, true)], j: 0.6666666666666666, f: 0.5555555555555556 },
    Golden { name: "diagonal shift r2", size: (200, 200), pred: &[(50, 90, 50, 90, true)], gt: &[(52, 92, 52, 92, true)], j: 0.8223234624145785, f: 0.9807692307692307 },
    Golden { name: "shift 3px r2", size: (200, 200), pred: &[(50, 90, 50, 90, true)], gt: &[(50, 90, 53, 93, true)], j: 0.8604651162790697, f: 0.5256410256410257 },
    Golden { name: "ring vs square", size: (300, 300), pred: &[(100, 160, 100, 160, true), (110, 150, 110, 150, false)], gt: &[(100, 160, 100, 160, true)], j: 0.5555555555555556, f: 0.7468354430379746 },
    Golden { name: "L shape vs rect", size: (64, 64), pred: &[(10, 40, 10, 20, true), (30, 40, 20, 40, true)], gt: &[(10, 40, 10, 40, true)], j: 0.5555555555555556, f: 0.683982683982684 },
    Golden { name: "two blobs vs one", size: (64, 64), pred: &[(10, 20, 10, 20, true), (40, 50, 40, 50, true)], gt: &[(10, 20, 10, 20, true)], j: 0.5, f: 0.6666666666666666 },
    Golden { name: "non-square image", size: (32, 48), pred: &[(4, 20, 4, 30, true)], gt: &[(6, 22, 8, 34, true)], j: 0.5877862595419847, f: 0.025000000000000005 },
    Golden { name: "thin lines", size: (100, 60), pred: &[(10, 90, 20, 21, true)], gt: &[(10, 90, 21, 22, true)], j: 0.0, f: 1.0 },
    Golden { name: "single pixel", size: (64, 64), pred: &[(30, 31, 30, 31, true)], gt: &[(30, 31, 30, 31, true)], j: 1.0, f: 1.0 },
    Golden { name: "adjacent pixels", size: (64, 64), pred: &[(30, 31, 30, 31, true)], gt: &[(30, 31, 31, 32, true)], j: 0.0, f: 1.0 },
];

fn paint(size: (usize, usize), rects: &[(usize, usize, usize, usize, bool)]) -> Mask {
    let mut m = Mask::empty(size.0, size.1);
    for &(y0, y1, x0, x1, v) in rects {
        for y in y0..y1 {
            for x in x0..x1 {
                m.set(y, x, v);
            }
        }
    }
    m
}

fn criterion_metrics() -> Check {
    let mut worst = 0.0f64;
    for g in GOLDEN {
        let p = paint(g.size, g.pred);
        let t = paint(g.size, g.gt);
        let j = region_similarity(&p, &t).map_err(|e| e.to_string())?;
        let f = contour_accuracy(&p, &t).map_err(|e| e.to_string())?;
        worst = worst.max((j - g.j).abs()).max((f - g.f).abs());
        if (j - g.j).abs() > METRICS_TOL || (f - g.f).abs() > METRICS_TOL {
            return Err(format!("{}: J {j} (want {}), F {f} (want {})", g.name, g.j, g.f));
        }
    }
    Ok(format!("{} golden cases, max deviation {worst:.1e}", GOLDEN.len()))
}

// ---------------------------------------------------------------- synthetic end to end

fn run_suite(layout: &SuiteLayout, contrastive: bool, maps_dir: &Path, out_dir: &Path, jobs: usize) -> Result<(), String> {
    fs::create_dir_all(maps_dir).map_err(|e| e.to_string())?;
    fs::create_dir_all(out_dir).map_err(|e| e.to_string())?;
    let opts = FuseOptions {
        fusion: FusionConfig { contrastive, ..Default::default() },
        jobs,
        ..Default::default()
    };
    for id in &layout.ids {
        let manifest = read_manifest(&layout.manifest(id)).map_err(|e| e.to_string())?;
        let map = fuse_manifest(&manifest, &opts).map_err(|e| e.to_string())?;
        let map_path = maps_dir.join(format!("{id}.map"));
        write_map(&map, &map_path).map_err(|e| e.to_string())?;
        let map = read_map(&map_path).map_err(|e| e.to_string())?;
        let d = PromptingConfig::default();
        let echo = SegmentEcho {
            map: map_path.display().to_string(),
            frames: layout.labels_dir(id).display().to_string(),
            segmenter: "oracle (in-process)".into(),
            tau_pq: d.tau_pq,
            tau_trk: d.tau_trk,
            nms_iou: d.nms_iou,
            dedup_iou: d.dedup_iou,
        };
        let results = segment_map_in_process(&map, echo).map_err(|e| e.to_string())?;
        results.write(&out_dir.join(format!("{id}.json"))).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn subset_jf(report: &decaf_core::metrics::EvalReport, ids: &[String]) -> f64 {
    ids.iter().map(|id| report.per_sequence[id].scores.jf).sum::<f64>() / ids.len() as f64
}

struct EndToEnd {
    check: Check,
    full_dir: std::path::PathBuf,
}

fn criterion_end_to_end(root: &Path) -> EndToEnd {
    let full_dir = root.join("results_full");
    let check = (|| {
        let start = Instant::now();
        let layout = write_suite(&root.join("suite"), SUITE_SEED, SUITE_VIDEOS).map_err(|e| e.to_string())?;
        let regions: Vec<usize> = (0..SUITE_VIDEOS).map(|i| decaf::synth::generate_video(SUITE_SEED, i).squares.len()).collect();
        ensure(regions.iter().all(|r| (1..=3).contains(r)), || format!("region counts {regions:?}"))?;
        run_suite(&layout, true, &root.join("maps_full"), &full_dir, 4)?;
        run_suite(&layout, false, &root.join("maps_plain"), &root.join("results_plain"), 4)?;
        let gt = layout.gt_root();
        let full = evaluate_dirs(&full_dir, &gt, ObjectMode::Union, 4).map_err(|e| e.to_string())?;
        let plain = evaluate_dirs(&root.join("results_plain"), &gt, ObjectMode::Union, 4).map_err(|e| e.to_string())?;
        let elapsed = start.elapsed().as_secs_f64();
        let sink_full = subset_jf(&full, &layout.sink_ids);
        let sink_plain = subset_jf(&plain, &layout.sink_ids);
        let detail = format!(
            "J&F {:.4} over {} videos; sink subset {:.4} with contrast vs {:.4} without; {elapsed:.1} s",
            full.global.jf,
            layout.ids.len(),
            sink_full,
            sink_plain
        );
        ensure(full.global.jf >= E2E_MIN_JF, || format!("J&F below {E2E_MIN_JF}: {detail}"))?;
        ensure(sink_plain < sink_full, || format!("no drop without contrast: {detail}"))?;
        ensure(elapsed < E2E_MAX_SECONDS, || format!("too slow: {detail}"))?;
        Ok(detail)
    })();
    EndToEnd { check, full_dir }
}

fn criterion_determinism(root: &Path, first: &Path) -> Check {
    let layout = SuiteLayout {
        root: root.join("suite"),
        ids: (0..SUITE_VIDEOS).map(|i| format!("synth{i:02}")).collect(),
        sink_ids: Vec::new(),
    };
    // same map paths as the first run, single-threaded fusion this time
    let second = root.join("results_again");
    run_suite(&layout, true, &root.join("maps_full"), &second, 1)?;
    let mut bytes = 0;
    for id in &layout.ids {
        let a = fs::read(first.join(format!("{id}.json"))).map_err(|e| e.to_string())?;
        let b = fs::read(second.join(format!("{id}.json"))).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{id}: results differ between runs"))?;
        bytes += a.len();
    }
    Ok(format!("{} results files byte-identical ({bytes} bytes), fusion with 4 and 1 jobs", layout.ids.len()))
}

fn main() {
    let mut report = Report { failed: 0 };
    report.line("rollout stochasticity", criterion_rollout());
    report.line("hand fixtures", criterion_fixtures());
    report.line("otsu oracle", criterion_otsu());
    report.line("nms oracle", criterion_nms());
    report.line("consistency properties", criterion_consistency());
    let tmp = tempfile::tempdir().expect("temporary directory");
    let e2e = criterion_end_to_end(tmp.path());
    let e2e_ok = e2e.check.is_ok();
    report.line("synthetic end to end", e2e.check);
    report.line("metrics parity", criterion_metrics());
    let det = if e2e_ok {
        criterion_determinism(tmp.path(), &e2e.full_dir)
    } else {
        Err("end-to-end run failed, nothing to compare".into())
    };
    report.line("determinism", det);
    if report.failed > 0 {
        println!("{} criteria failed", report.failed);
        std::process::exit(1);
    }
    println!("all criteria passed");
}
