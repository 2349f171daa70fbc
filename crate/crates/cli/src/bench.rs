//! Timing and allocation probes for the DP kernels.
//!
//! Wall time of the marginal-loss forward/backward and of Viterbi is measured
//! over a grid of input lengths at fixed maximum duration and vocabulary, and
//! fit against a straight line in T. A separate probe measures the scorer's
//! auxiliary allocations (output lattice excluded) at V and 2V; the factored
//! form keeps them identical.

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use segword::{
    loss_and_gradient, measure_thread_allocs, score_lattice_into, viterbi, FrameFeatures,
    LabelSequence, Pooling, ScoreLattice, ScoreScratch, SegmentScorerParams,
};

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub t_grid: Vec<usize>,
    pub max_duration: usize,
    pub vocab: usize,
    pub num_labels: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for BenchSpec {
    fn default() -> Self {
        // S=64 and K=16 hold for every T in the default grid, so the DP cost
        // model is the same straight line at each point.
        BenchSpec {
            t_grid: vec![64, 128, 256, 512, 1024],
            max_duration: 64,
            vocab: 64,
            num_labels: 16,
            reps: 9,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GridPoint {
    pub t_len: usize,
    pub loss_ms: f64,
    pub viterbi_ms: f64,
    /// Fastest rep — the noise floor the fit runs on.
    pub loss_min_ms: f64,
    pub viterbi_min_ms: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LinearFit {
    /// ms per frame.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub points: Vec<GridPoint>,
    pub loss_fit: Option<LinearFit>,
    pub viterbi_fit: Option<LinearFit>,
    /// Auxiliary scoring bytes at (V, 2V), output lattice preallocated.
    pub aux_bytes: (usize, usize),
}

fn median(samples: &mut [f64]) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = samples.len();
    if n % 2 == 1 {
        samples[n / 2]
    } else {
        0.5 * (samples[n / 2 - 1] + samples[n / 2])
    }
}

/// Ordinary least squares of y against x. `None` when x has no spread.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LinearFit { slope, intercept, r_squared })
}

/// Random label sequence that can tile `t_len` rows under `max_dur`.
fn feasible_labels<R: Rng>(t_len: usize, max_dur: usize, vocab: usize, k: usize, rng: &mut R) -> LabelSequence {
    let k = k.clamp(t_len.div_ceil(max_dur), t_len);
    LabelSequence::new((0..k).map(|_| rng.random_range(0..vocab)).collect())
}

pub fn run(spec: &BenchSpec) -> BenchReport {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let cases: Vec<(usize, ScoreLattice, LabelSequence)> = spec
        .t_grid
        .iter()
        .map(|&t_len| {
            let s = spec.max_duration.min(t_len);
            let w = ScoreLattice::random(t_len, s, spec.vocab, -1.0..1.0, &mut rng);
            let labels = feasible_labels(t_len, s, spec.vocab, spec.num_labels, &mut rng);
            (t_len, w, labels)
        })
        .collect();
    // One untimed warm-up sweep, then reps round-robin over the grid: clock
    // ramp-up and other machine-state drift hit every size evenly instead of
    // being billed to whichever point runs first.
    let mut loss_samples = vec![Vec::with_capacity(spec.reps); cases.len()];
    let mut vit_samples = vec![Vec::with_capacity(spec.reps); cases.len()];
    for rep in 0..=spec.reps {
        for (i, (_, w, labels)) in cases.iter().enumerate() {
            let t0 = Instant::now();
            let (marginal, grad) = loss_and_gradient(w, labels);
            let loss_ms = t0.elapsed().as_secs_f64() * 1e3;
            assert!(marginal.loss.is_finite(), "bench lattice must be feasible");
            std::hint::black_box(&grad);
            let t0 = Instant::now();
            let v = viterbi(w);
            let vit_ms = t0.elapsed().as_secs_f64() * 1e3;
            std::hint::black_box(&v);
            if rep > 0 {
                loss_samples[i].push(loss_ms);
                vit_samples[i].push(vit_ms);
            }
        }
    }
    let points: Vec<GridPoint> = cases
        .iter()
        .enumerate()
        .map(|(i, (t_len, _, _))| GridPoint {
            t_len: *t_len,
            loss_ms: median(&mut loss_samples[i]),
            viterbi_ms: median(&mut vit_samples[i]),
            loss_min_ms: loss_samples[i].iter().copied().fold(f64::INFINITY, f64::min),
            viterbi_min_ms: vit_samples[i].iter().copied().fold(f64::INFINITY, f64::min),
        })
        .collect();
    // Medians describe typical latency; the fit uses per-point minima, which
    // shed the bursty scheduler noise that medians still soak up on a busy
    // host.
    let xs: Vec<f64> = points.iter().map(|p| p.t_len as f64).collect();
    let loss_ys: Vec<f64> = points.iter().map(|p| p.loss_min_ms).collect();
    let vit_ys: Vec<f64> = points.iter().map(|p| p.viterbi_min_ms).collect();
    BenchReport {
        loss_fit: linear_fit(&xs, &loss_ys),
        viterbi_fit: linear_fit(&xs, &vit_ys),
        aux_bytes: scoring_aux_probe(spec.vocab, spec.seed),
        points,
    }
}

/// Peak auxiliary bytes while filling a preallocated score lattice, at V and
/// at 2V. Only meaningful when the binary installs the counting allocator.
pub fn scoring_aux_probe(vocab: usize, seed: u64) -> (usize, usize) {
    (scoring_aux_bytes(vocab, seed), scoring_aux_bytes(vocab * 2, seed))
}

fn scoring_aux_bytes(vocab: usize, seed: u64) -> usize {
    let (t_len, s, f, d) = (48, 16, 12, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SegmentScorerParams::random(Pooling::Attention, f, d, vocab, &mut rng);
    let frames = FrameFeatures::new(ndarray::Array2::from_shape_fn((t_len, f), |_| {
        rng.random_range(-1.0..1.0)
    }));
    let mut out = ScoreLattice::filled(t_len, s, vocab, 0.0);
    let (stats, ()) = measure_thread_allocs(|| {
        let mut scratch = ScoreScratch::default();
        score_lattice_into(&params, &frames, &mut out, &mut scratch);
    });
    stats.peak_live_bytes
}

pub fn render(report: &BenchReport) -> String {
    let mut out = String::new();
    out.push_str("T\tloss_fwd_bwd_ms\tviterbi_ms\n");
    for p in &report.points {
        out.push_str(&format!("{}\t{:.4}\t{:.4}\n", p.t_len, p.loss_ms, p.viterbi_ms));
    }
    match (&report.loss_fit, &report.viterbi_fit) {
        (Some(lf), Some(vf)) => {
            out.push_str(&format!(
                "fit loss (per-point minima): slope {:.6} ms/frame, intercept {:.4}, R^2 {:.4}\n",
                lf.slope, lf.intercept, lf.r_squared
            ));
            out.push_str(&format!(
                "fit viterbi (per-point minima): slope {:.6} ms/frame, intercept {:.4}, R^2 {:.4}\n",
                vf.slope, vf.intercept, vf.r_squared
            ));
        }
        _ => out.push_str("fit: grid too small\n"),
    }
    let (a, b) = report.aux_bytes;
    out.push_str(&format!(
        "scoring aux peak (output excluded): {a} bytes at V, {b} bytes at 2V\n"
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_planted_line() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [2.5, 4.5, 6.5, 8.5];
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trivial_t1_grid_still_reports() {
        let spec = BenchSpec {
            t_grid: vec![1],
            reps: 1,
            ..BenchSpec::default()
        };
        let report = run(&spec);
        assert_eq!(report.points.len(), 1);
        assert!(report.loss_fit.is_none());
        let text = render(&report);
        assert!(text.contains("grid too small"));
    }

    #[test]
    fn labels_stay_feasible_at_the_grid_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let l = feasible_labels(1024, 128, 8, 8, &mut rng);
        assert_eq!(l.len(), 8);
        let l = feasible_labels(1, 1, 8, 8, &mut rng);
        assert_eq!(l.len(), 1);
    }
}
