//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.
//!
//! Run with `cargo test -p obsprune-cli --test acceptance`.

use std::alloc::{GlobalAlloc, Layout, System};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use obsprune::fisher::{block_ranges, build_fisher_inverse, FisherConfig};
use obsprune::layers::{grads_from_container, layers_from_container, prunable_total, pruned_total};
use obsprune::obs::{loss_increase, saliency_group, saliency_single, update_group, update_single};
use obsprune::oracle::{dense_fisher, exhaustive_best_subset, sparse_regression_min};
use obsprune::pipeline::{run_gradual, run_oneshot, toy_train, GradualOptions, RunConfig, ToyConfig, ToyModel};
use obsprune::pruners::{Method, PrunerSpec, Target};
use obsprune::schedules::{lr_at, LrSchedule, SweepPlan};
use obsprune::solver::{solve_block, solve_global, solve_nm};
use obsprune::tensorstore::{read_container, GradientSet};

// ---------------------------------------------------------------- allocator

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

fn track(grow: usize) {
    let now = CURRENT.fetch_add(grow, Ordering::Relaxed) + grow;
    PEAK.fetch_max(now, Ordering::Relaxed);
}

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            track(layout.size());
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Ordering::Relaxed);
    }

    unsafe fn realloc(&self, ptr: *mut u8, layout: Layout, new_size: usize) -> *mut u8 {
        let p = unsafe { System.realloc(ptr, layout, new_size) };
        if !p.is_null() {
            if new_size >= layout.size() {
                track(new_size - layout.size());
            } else {
                CURRENT.fetch_sub(layout.size() - new_size, Ordering::Relaxed);
            }
        }
        p
    }
}

#[global_allocator]
static GLOBAL: Counting = Counting;

/// Peak bytes allocated on top of what was live when `f` started.
fn peak_extra<T>(f: impl FnOnce() -> T) -> (T, usize) {
    let base = CURRENT.load(Ordering::Relaxed);
    PEAK.store(base, Ordering::Relaxed);
    let out = f();
    (out, PEAK.load(Ordering::Relaxed).saturating_sub(base))
}

// ---------------------------------------------------------------- helpers

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normals(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(&mut *r)).collect()
}

fn uniform(r: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    r.random_range(lo..=hi)
}

/// Gradient rows `(I + c·A/√d) z` with Gaussian `A`, `z`.
fn correlated_grads(r: &mut ChaCha8Rng, n: usize, d: usize, c: f64) -> GradientSet {
    let mix: Vec<f64> = (0..d * d)
        .map(|k| {
            let eye = if k / d == k % d { 1.0 } else { 0.0 };
            eye + c * normals(r, 1)[0] / (d as f64).sqrt()
        })
        .collect();
    let mut rows = Vec::with_capacity(n * d);
    for _ in 0..n {
        let z = normals(r, d);
        for i in 0..d {
            rows.push((0..d).map(|k| mix[i * d + k] * z[k]).sum::<f64>());
        }
    }
    GradientSet::new("0", n, d, rows).unwrap()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

const BIN: &str = env!("CARGO_BIN_EXE_obsprune");

// ---------------------------------------------------------------- criteria

fn ac1_fisher() -> Check {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = uniform(&mut r, 1, 64);
        let n = uniform(&mut r, 1, 256);
        let b = [1, 8, 16, d][case % 4];
        let damp = [1e-2, 1e-1, 1.0][case % 3];
        let grads = correlated_grads(&mut r, n, d, 0.5);
        let inv =
            build_fisher_inverse(&grads, &FisherConfig::new(b, damp, 4096).unwrap()).map_err(|e| e.to_string())?;
        for (j, range) in block_ranges(d, b).into_iter().enumerate() {
            let bs = range.len();
            let mut f = DMatrix::<f64>::identity(bs, bs) * damp;
            for g in grads.rows() {
                let v = &g[range.clone()];
                for p in 0..bs {
                    for q in 0..bs {
                        f[(p, q)] += v[p] * v[q] / n as f64;
                    }
                }
            }
            let dense = f.try_inverse().ok_or("dense inversion failed")?;
            let scale = dense.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let ours = inv.block(j);
            for p in 0..bs {
                for q in 0..bs {
                    worst = worst.max((ours[(p, q)] - dense[(p, q)]).abs() / scale);
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(worst < 1e-8, || format!("max relative error {worst:.2e}"))?;
    ensure(secs < 10.0, || format!("took {secs:.1}s"))?;
    Ok(format!("100 instances, max rel err {worst:.1e}, {secs:.2}s"))
}

fn ac2_obs() -> Check {
    let mut r = rng(102);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let d = uniform(&mut r, 2, 24);
        let n = uniform(&mut r, 4, 64);
        let damp = [1e-3, 1e-1][case % 2];
        let grads = correlated_grads(&mut r, n, d, 0.9);
        let w = normals(&mut r, d);
        let inv =
            build_fisher_inverse(&grads, &FisherConfig::new(d, damp, 4096).unwrap()).map_err(|e| e.to_string())?;
        let i = uniform(&mut r, 0, d - 1);
        let rho = saliency_single(&w, &inv, i).map_err(|e| e.to_string())?;
        let after = update_single(&w, &inv, i).map_err(|e| e.to_string())?.apply(&w);
        worst = worst.max(rel_err(rho, loss_increase(&w, &after, &grads, damp).unwrap()));
        let size = uniform(&mut r, 1, d.min(6));
        let mut q = rand::seq::index::sample(&mut r, d, size).into_vec();
        q.sort_unstable();
        let rho = saliency_group(&w, &inv, &q).map_err(|e| e.to_string())?;
        let after = update_group(&w, &inv, &q).map_err(|e| e.to_string())?.apply(&w);
        worst = worst.max(rel_err(rho, loss_increase(&w, &after, &grads, damp).unwrap()));
    }
    ensure(worst < 1e-9, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("100 instances, single and group, max rel err {worst:.1e}"))
}

fn ac3_exhaustion() -> Check {
    let mut r = rng(103);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let d = uniform(&mut r, 1, 32);
        let grads = correlated_grads(&mut r, 48, d, 0.9);
        let w = normals(&mut r, d);
        let damp = 1e-2;
        let inv =
            build_fisher_inverse(&grads, &FisherConfig::new(d, damp, 4096).unwrap()).map_err(|e| e.to_string())?;
        let trace = solve_block(0, &w, inv.block(0), &vec![true; d]);
        let full = 0.5 * dense_fisher(&grads, damp).quad_form(&w);
        worst = worst.max(rel_err(trace.total(), full));
    }
    ensure(worst < 1e-8, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("50 blocks, max rel err {worst:.1e}"))
}

fn ac4_two_routes() -> Check {
    let start = Instant::now();
    let mut r = rng(104);
    for case in 0..200 {
        let d = uniform(&mut r, 2, 10);
        let m = uniform(&mut r, 1, 16);
        let k = uniform(&mut r, 1, 3.min(d));
        let damp = [1e-8, 1e-2][case % 2];
        let grads = correlated_grads(&mut r, m, d, 0.8);
        let w = normals(&mut r, d);
        let (q, _) = exhaustive_best_subset(&w, &dense_fisher(&grads, damp), k).map_err(|e| e.to_string())?;
        let reg = sparse_regression_min(&grads, &w, k, damp).map_err(|e| e.to_string())?;
        ensure(reg.zeros == q, || {
            format!("case {case}: regression {:?} vs exhaustive {q:?}", reg.zeros)
        })?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("200/200 supports equal, {secs:.2}s"))
}

fn ac5_greedy() -> Check {
    let mut r = rng(105);
    let mut within = 0;
    for _ in 0..200 {
        let d = uniform(&mut r, 2, 10);
        let k = uniform(&mut r, 1, 4.min(d));
        let grads = correlated_grads(&mut r, 16, d, 0.0);
        let w = normals(&mut r, d);
        let damp = 1e-2;
        let (_, best) = exhaustive_best_subset(&w, &dense_fisher(&grads, damp), k).map_err(|e| e.to_string())?;
        let inv =
            build_fisher_inverse(&grads, &FisherConfig::new(d, damp, 4096).unwrap()).map_err(|e| e.to_string())?;
        let greedy = solve_global(&w, &inv, k, &vec![true; d])
            .map_err(|e| e.to_string())?
            .predicted_loss_increase;
        if greedy <= 1.2 * best {
            within += 1;
        }
    }
    ensure(within >= 190, || format!("only {within}/200 within 1.2x"))?;
    let mut r = rng(115);
    for case in 0..100 {
        let d = uniform(&mut r, 1, 12);
        let grads = correlated_grads(&mut r, 16, d, 0.9);
        let w = normals(&mut r, d);
        let damp = 1e-3;
        let (q, best) = exhaustive_best_subset(&w, &dense_fisher(&grads, damp), 1).map_err(|e| e.to_string())?;
        let inv =
            build_fisher_inverse(&grads, &FisherConfig::new(d, damp, 4096).unwrap()).map_err(|e| e.to_string())?;
        let res = solve_global(&w, &inv, 1, &vec![true; d]).map_err(|e| e.to_string())?;
        let zeros: Vec<usize> = (0..d).filter(|&i| res.mask()[i] == 0).collect();
        ensure(zeros == q && rel_err(res.predicted_loss_increase, best) < 1e-9, || {
            format!(
                "k=1 case {case}: {zeros:?} {} vs {q:?} {best}",
                res.predicted_loss_increase
            )
        })?;
    }
    Ok(format!("{within}/200 within 1.2x; k=1, B=d exact on 100/100"))
}

fn ac6_ordering() -> Check {
    let models: Vec<ToyModel> = (0..200)
        .map(|seed| {
            let cfg = ToyConfig {
                inputs: 64,
                ..ToyConfig::new(1000 + seed, vec![8, 3])
            };
            let mut m = ToyModel::build(&cfg).unwrap();
            toy_train(&mut m, 2000, 0.2).unwrap();
            m
        })
        .collect();
    let mut lines = Vec::new();
    for s in [0.5, 0.75] {
        let mut totals = [0.0f64; 3];
        for m in &models {
            for (slot, method) in [Method::Ovit, Method::Wf, Method::Gm].into_iter().enumerate() {
                let mut run = m.clone();
                let cfg = RunConfig::new(PrunerSpec::new(method), m.data.len());
                let rep = run_oneshot(&mut run, &cfg, Target::Sparsity(s)).map_err(|e| e.to_string())?;
                totals[slot] += rep.events[0].true_delta();
            }
        }
        let [o, w, g] = totals.map(|t| t / 200.0);
        ensure(o <= w && w <= g, || format!("s={s}: ovit {o:.4} wf {w:.4} gm {g:.4}"))?;
        lines.push(format!("s={s}: {o:.3} <= {w:.3} <= {g:.3}"));
    }
    Ok(lines.join("; "))
}

fn group_nonzeros_exact(weights: &[f64], n: usize, m: usize) -> bool {
    weights.len().is_multiple_of(m) && weights.chunks(m).all(|c| c.iter().filter(|&&v| v != 0.0).count() == n)
}

fn ac7_nm() -> Check {
    let mut checked = 0;
    for stem in ["toy", "correlated"] {
        let weights = read_container(fixture(&format!("{stem}.weights.ovpt"))).map_err(|e| e.to_string())?;
        let grads =
            grads_from_container(&read_container(fixture(&format!("{stem}.grads.ovpt"))).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        for layer in layers_from_container(&weights).map_err(|e| e.to_string())? {
            let g = grads
                .get(&layer.name)
                .ok_or_else(|| format!("{stem}: no gradients for {}", layer.name))?;
            let inv =
                build_fisher_inverse(g, &FisherConfig::new(64, 1e-8, 4096).unwrap()).map_err(|e| e.to_string())?;
            for (n, m) in [(2, 4), (1, 4), (4, 8)] {
                let res = solve_nm(&layer.weights, &inv, n, m, &vec![true; layer.len()]).map_err(|e| e.to_string())?;
                ensure(group_nonzeros_exact(&res.new_weights(), n, m), || {
                    format!("{stem} layer {} {n}:{m} pattern broken", layer.name)
                })?;
                checked += 1;
            }
        }
    }
    // end to end through the binary on the bundled toy model
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = dir.path().join("nm.ovpt");
    let o = Command::new(BIN)
        .args(["prune", "--method", "ovit", "--nm", "2:4", "--weights"])
        .arg(fixture("toy.weights.ovpt"))
        .arg("--grads")
        .arg(fixture("toy.grads.ovpt"))
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let layers = layers_from_container(&read_container(&out).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
    ensure(layers.iter().all(|l| group_nonzeros_exact(&l.weights, 2, 4)), || {
        "CLI 2:4 output breaks the pattern".into()
    })?;
    let o = Command::new(BIN)
        .args(["toy", "--seed", "1", "--nm", "2:4"])
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&o.stdout);
    ensure(
        o.status.success()
            && text
                .lines()
                .filter(|l| l.starts_with("pattern\t"))
                .all(|l| l.ends_with("\t0")),
        || format!("toy 2:4 run: {text}"),
    )?;
    Ok(format!(
        "{checked} fixture layer/pattern pairs exact; CLI prune and toy 2:4 compliant"
    ))
}

fn ac8_schedule() -> Check {
    let (max, min, period) = (5e-4, 1e-5, 20usize);
    let s = LrSchedule::new(max, min, period).map_err(|e| e.to_string())?;
    // Literal values of the cyclic-linear rule at 0, T/2, T, 3T/2.
    let expected = [(0, 5e-4), (10, 2.55e-4), (20, 5e-4), (30, 2.55e-4)];
    for (t, want) in expected {
        let formula = max - (max - min) * ((t % period) as f64 / period as f64);
        let got = lr_at(&s, t);
        ensure(got.to_bits() == formula.to_bits(), || {
            format!("t={t}: {got} vs formula {formula}")
        })?;
        ensure((got - want).abs() <= 4.0 * f64::EPSILON * want, || {
            format!("t={t}: {got} vs {want}")
        })?;
    }
    for t in 0..10 * period {
        ensure(lr_at(&s, t).to_bits() == lr_at(&s, t + period).to_bits(), || {
            format!("not periodic at t={t}")
        })?;
        if t % period != period - 1 {
            ensure(lr_at(&s, t + 1) < lr_at(&s, t), || format!("not decreasing at t={t}"))?;
        }
    }
    Ok("4 anchor points exact; periodic and decreasing within cycles over t<10T".into())
}

fn ac9_sweep() -> Check {
    let targets = vec![0.5, 0.6, 0.75, 0.8, 0.9];
    let mut m = ToyModel::build(&ToyConfig::new(1, vec![16, 8, 4])).map_err(|e| e.to_string())?;
    toy_train(&mut m, 3000, 0.1).map_err(|e| e.to_string())?;
    let cfg = RunConfig::new(PrunerSpec::new(Method::Ovit), m.data.len());
    let plan = SweepPlan::new(targets.clone(), 20).map_err(|e| e.to_string())?;
    let lr = LrSchedule::new(0.1, 0.002, 20).map_err(|e| e.to_string())?;
    let (_, ckpts) = run_gradual(&mut m, &cfg, &plan, &lr, GradualOptions::default()).map_err(|e| e.to_string())?;
    ensure(ckpts.len() == targets.len(), || format!("{} checkpoints", ckpts.len()))?;
    let mut prev: Option<Vec<Vec<u8>>> = None;
    for (ck, &t) in ckpts.iter().zip(&targets) {
        let layers = layers_from_container(&ck.container).map_err(|e| e.to_string())?;
        let (z, p) = (pruned_total(&layers), prunable_total(&layers));
        ensure(ck.target == t && z == (t * p as f64).round() as usize, || {
            format!("target {t}: {z} zeros of {p}")
        })?;
        let masks: Vec<Vec<u8>> = layers.iter().map(|l| l.mask.clone()).collect();
        if let Some(prev) = &prev {
            let monotone = prev
                .iter()
                .zip(&masks)
                .all(|(a, b)| a.iter().zip(b).all(|(&x, &y)| y <= x));
            ensure(monotone, || format!("mask grew back at target {t}"))?;
        }
        prev = Some(masks);
    }
    Ok("5 checkpoints at exact sparsities, masks monotone".into())
}

fn time_solve(d: usize, b: usize) -> Result<(Duration, usize), String> {
    let mut r = rng(110 + d as u64);
    let grads = correlated_grads_wide(&mut r, 32, d);
    let w = normals(&mut r, d);
    let inv = build_fisher_inverse(&grads, &FisherConfig::new(b, 1e-4, 4096).unwrap()).map_err(|e| e.to_string())?;
    let prunable = vec![true; d];
    let mut best = Duration::MAX;
    let mut peak = 0;
    for _ in 0..5 {
        let start = Instant::now();
        let (res, extra) = peak_extra(|| solve_global(&w, &inv, d / 2, &prunable));
        best = best.min(start.elapsed());
        res.map_err(|e| e.to_string())?;
        peak = peak.max(extra);
    }
    Ok((best, peak))
}

/// Independent Gaussian rows; the d×d mixing of `correlated_grads` is too big here.
fn correlated_grads_wide(r: &mut ChaCha8Rng, n: usize, d: usize) -> GradientSet {
    let rows = normals(r, n * d);
    GradientSet::new("0", n, d, rows).unwrap()
}

fn ac10_complexity() -> Check {
    let b = 16;
    let (small_d, large_d) = (1usize << 14, 1usize << 15);
    time_solve(small_d, b)?; // warm-up
    let (t1, m1) = time_solve(small_d, b)?;
    let (t2, m2) = time_solve(large_d, b)?;
    let ratio = t2.as_secs_f64() / t1.as_secs_f64();
    let (c1, c2) = (m1 as f64 / (small_d * b) as f64, m2 as f64 / (large_d * b) as f64);
    let c = c1.max(c2);
    ensure(ratio <= 2.5, || format!("time ratio {ratio:.2} ({t1:?} -> {t2:?})"))?;
    // The constant measured at 2^14 must carry over to 2^15.
    ensure(m2 as f64 <= 1.1 * c1 * (large_d * b) as f64, || {
        format!("peak memory {m2} B exceeds {c1:.1}·d·B at d=2^15 ({c2:.1})")
    })?;
    Ok(format!(
        "time {t1:.2?} -> {t2:.2?} (x{ratio:.2}); peak extra {m1} -> {m2} B, c = {c:.1} bytes per d·B"
    ))
}

fn cli(args: &[String], threads: Option<&str>) -> Result<Vec<u8>, String> {
    let mut cmd = Command::new(BIN);
    if let Some(t) = threads {
        cmd.args(["--threads", t]);
    }
    let o = cmd.args(args).output().map_err(|e| e.to_string())?;
    let mut bytes = o.stdout;
    bytes.extend_from_slice(format!("\nexit {:?}\n", o.status.code()).as_bytes());
    Ok(bytes)
}

fn ac11_determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let f = |name: &str| fixture(name).to_string_lossy().into_owned();
    let (tw, tg, cw, cg) = (
        f("toy.weights.ovpt"),
        f("toy.grads.ovpt"),
        f("correlated.weights.ovpt"),
        f("correlated.grads.ovpt"),
    );
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let commands: Vec<(Vec<String>, Option<String>)> = vec![
        (
            s(&["toy", "--seed", "1", "--method", "ovit", "--sparsity", "0.9"]),
            None,
        ),
        (
            s(&[
                "toy",
                "--seed",
                "3",
                "--dims",
                "8x3",
                "--method",
                "wf",
                "--targets",
                "0.5,0.75",
            ]),
            None,
        ),
        (s(&["toy", "--seed", "2", "--nm", "2:4", "--recompute", "1"]), None),
        (
            s(&[
                "prune",
                "--weights",
                &cw,
                "--grads",
                &cg,
                "--method",
                "ovit",
                "--sparsity",
                "0.6",
                "--out",
                &p("o.ovpt"),
            ]),
            Some(p("o.ovpt")),
        ),
        (
            s(&[
                "prune",
                "--weights",
                &cw,
                "--grads",
                &cg,
                "--method",
                "wf",
                "--sparsity",
                "0.6",
            ]),
            None,
        ),
        (
            s(&[
                "prune",
                "--weights",
                &tw,
                "--grads",
                &tg,
                "--method",
                "gm",
                "--sparsity",
                "0.5",
                "--out",
                &p("g.ovpt"),
            ]),
            Some(p("g.ovpt")),
        ),
        (
            s(&[
                "prune",
                "--weights",
                &tw,
                "--grads",
                &tg,
                "--nm",
                "2:4",
                "--block-size",
                "16",
            ]),
            None,
        ),
        (
            s(&[
                "prune",
                "--weights",
                &tw,
                "--grads",
                &tg,
                "--sparsity",
                "0.8",
                "--recompute",
                "4",
                "--per-layer",
            ]),
            None,
        ),
        (
            s(&["eval", "--weights-before", &tw, "--weights-after", &tw, "--grads", &tg]),
            None,
        ),
        (
            s(&[
                "sweep",
                "--weights",
                &tw,
                "--targets",
                "0.5,0.6,0.75,0.8,0.9",
                "--out",
                &p("sw"),
            ]),
            Some(p("sw.0.9.ovpt")),
        ),
    ];
    for (args, artifact) in &commands {
        let mut runs = Vec::new();
        for threads in [None, None, Some("1"), Some("4")] {
            let mut out = cli(args, threads)?;
            ensure(out.ends_with(b"exit Some(0)\n"), || {
                format!("`{}` failed", args.join(" "))
            })?;
            if let Some(path) = artifact {
                out.extend(std::fs::read(path).map_err(|e| format!("{path}: {e}"))?);
            }
            runs.push(out);
        }
        ensure(runs.windows(2).all(|w| w[0] == w[1]), || {
            format!("`{}` differs between runs", args.join(" "))
        })?;
    }
    Ok(format!(
        "{} commands byte-identical over 2 runs and --threads 1/4",
        commands.len()
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("Fisher inverse vs dense inversion", ac1_fisher),
        ("OBS saliency equals applied-update loss", ac2_obs),
        ("block exhaustion equals full quadratic", ac3_exhaustion),
        ("regression and exhaustive routes agree", ac4_two_routes),
        ("greedy within 1.2x of exhaustive", ac5_greedy),
        ("method ordering on quadratic toys", ac6_ordering),
        ("N:M compliance", ac7_nm),
        ("cyclic learning-rate schedule", ac8_schedule),
        ("sweep checkpoints", ac9_sweep),
        ("solver time and memory scaling", ac10_complexity),
        ("CLI determinism", ac11_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (tag, detail) = match check() {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("AC{:<2} {tag}  {name}: {detail}", i + 1);
    }
    println!("{} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
