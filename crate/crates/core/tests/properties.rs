//! Randomised invariants through the public API.

use num_complex::Complex64;
use proptest::prelude::*;

use qmutant::analysis::{confusion_and_scores, holm_correct, mann_whitney_cliffs, DetectionRecord};
use qmutant::inputs::{build_suite, InputType};
use qmutant::linalg::CMatrix;
use qmutant::metrics::{
    fidelity, hellinger_probs, hermitian_eigenvalues, jensen_shannon_probs, trace_distance,
};
use qmutant::mutate::Label;
use qmutant::sim::{run_density, sample_from, Probabilities};
use qmutant::{DensityMatrix, MetricKind};

fn weights(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len)
        .prop_filter("non-zero", |v| v.iter().sum::<f64>() > 1e-6)
}

fn distribution(n: usize) -> impl Strategy<Value = Probabilities> {
    weights(1 << n).prop_map(move |w| Probabilities::from_weights(n, w))
}

/// Σ w_k |ψ_k⟩⟨ψ_k| over three random pure states.
fn density(n: usize) -> impl Strategy<Value = DensityMatrix> {
    let dim = 1usize << n;
    (
        prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 3 * dim),
        prop::collection::vec(0.01f64..1.0, 3),
    )
        .prop_map(move |(amps, w)| {
            let total: f64 = w.iter().sum();
            let mut m = CMatrix::zeros(dim);
            for (k, chunk) in amps.chunks(dim).enumerate() {
                let v: Vec<Complex64> = chunk
                    .iter()
                    .map(|&(re, im)| Complex64::new(re, im))
                    .collect();
                let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-9);
                let v: Vec<Complex64> = v.into_iter().map(|z| z / norm).collect();
                let outer = CMatrix::outer(&v).scale(Complex64::new(w[k] / total, 0.0));
                m.add_assign(&outer);
            }
            DensityMatrix::from_matrix(n, m).unwrap()
        })
}

fn pair<T: std::fmt::Debug, S: Strategy<Value = T>>(
    s: impl Fn(usize) -> S,
) -> impl Strategy<Value = (T, T)> {
    (1usize..=3).prop_flat_map(move |n| (s(n), s(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn density_metrics_are_bounded_and_symmetric((a, b) in pair(density)) {
        let d = trace_distance(&a, &b).unwrap();
        let f = fidelity(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!((d - trace_distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((f - fidelity(&b, &a).unwrap()).abs() < 1e-10);
        prop_assert!(trace_distance(&a, &a).unwrap() < 1e-12);
        prop_assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        // Fuchs–van de Graaf
        prop_assert!(1.0 - f.sqrt() <= d + 1e-9);
        prop_assert!(d <= (1.0 - f).sqrt() + 1e-9);
    }

    #[test]
    fn distribution_metrics_are_bounded_and_symmetric((p, q) in pair(distribution)) {
        for m in [hellinger_probs, jensen_shannon_probs] {
            let v = m(&p, &q).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((v - m(&q, &p).unwrap()).abs() < 1e-12);
            prop_assert!(m(&p, &p).unwrap() < 1e-12);
        }
    }

    #[test]
    fn hellinger_obeys_the_triangle_inequality(
        (p, q, r) in (1usize..=3).prop_flat_map(|n| (distribution(n), distribution(n), distribution(n)))
    ) {
        let h = |a: &Probabilities, b: &Probabilities| hellinger_probs(a, b).unwrap();
        prop_assert!(h(&p, &r) <= h(&p, &q) + h(&q, &r) + 1e-10);
    }

    #[test]
    fn trace_distance_obeys_the_triangle_inequality(
        (a, b, c) in (1usize..=2).prop_flat_map(|n| (density(n), density(n), density(n)))
    ) {
        let d = |x: &DensityMatrix, y: &DensityMatrix| trace_distance(x, y).unwrap();
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-10);
    }

    #[test]
    fn spectrum_sums_to_the_trace(rho in (1usize..=3).prop_flat_map(density)) {
        let ev = hermitian_eigenvalues(rho.matrix()).unwrap();
        prop_assert!((ev.iter().sum::<f64>() - rho.matrix().trace().re).abs() < 1e-10);
        prop_assert!(ev.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(ev[0] > -1e-9);
    }

    #[test]
    fn sampled_counts_sum_to_the_shot_count(p in (1usize..=4).prop_flat_map(distribution), shots in 1u64..5000, seed: u64) {
        let d = sample_from(&p, shots, seed).unwrap();
        prop_assert_eq!(d.counts.values().sum::<u64>(), shots);
        prop_assert!(d.counts.keys().all(|k| k.len() == p.n_qubits() && k.chars().all(|c| c == '0' || c == '1')));
        prop_assert_eq!(sample_from(&p, shots, seed).unwrap(), d);
    }

    #[test]
    fn tie_free_cliffs_delta_is_a_rescaled_u(
        values in prop::collection::hash_set(0u32..100_000, 2..60),
        split in 1usize..59,
    ) {
        let v: Vec<f64> = values.into_iter().map(f64::from).collect();
        let k = split.min(v.len() - 1);
        let (a, b) = v.split_at(k);
        let r = mann_whitney_cliffs(a, b).unwrap();
        let nm = (a.len() * b.len()) as f64;
        prop_assert!((r.effect_size - (2.0 * r.statistic / nm - 1.0)).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn holm_keeps_order_and_never_lowers_p(p in prop::collection::vec(0.0f64..=1.0, 1..30)) {
        let adj = holm_correct(&p).unwrap();
        let mut idx: Vec<usize> = (0..p.len()).collect();
        idx.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
        for w in idx.windows(2) {
            prop_assert!(adj[w[0]] <= adj[w[1]]);
        }
        for (a, q) in adj.iter().zip(&p) {
            prop_assert!(*a >= *q && *a <= 1.0);
        }
    }

    #[test]
    fn scores_ignore_record_order_and_stay_in_range(
        flags in prop::collection::vec((any::<bool>(), any::<bool>()), 1..80),
        seed: u64,
    ) {
        let records: Vec<DetectionRecord> = flags
            .iter()
            .enumerate()
            .map(|(i, &(non_eq, detected))| DetectionRecord {
                mutant_id: format!("m{i}"),
                true_label: if non_eq { Label::NonEquivalent } else { Label::Equivalent },
                detected,
                metric: MetricKind::Hellinger,
                strategy: "noiseless".into(),
                backend: "noiseless".into(),
                input_id: "in".into(),
            })
            .collect();
        let mut shuffled = records.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = confusion_and_scores(&records).unwrap();
        prop_assert_eq!(&a, &confusion_and_scores(&shuffled).unwrap());
        prop_assert_eq!(a.confusion.total() as usize, records.len());
        for v in [a.accuracy, a.precision, a.recall, a.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn suites_have_the_documented_shape(n in 1usize..=6, seed: u64) {
        let suite = build_suite(n, seed).unwrap();
        let want = if n <= 4 { 1 << (n + 1) } else { 1 << n };
        prop_assert_eq!(suite.len(), want);
        let classical: Vec<_> = suite.inputs.iter().filter(|i| i.input_type == InputType::Classical).collect();
        prop_assert_eq!(classical.len() * 2, want);
        for input in classical {
            prop_assert!(input.prep.ops.iter().all(|op| op.kind == qmutant::GateKind::X));
            let rho = run_density(&input.prep, None).unwrap();
            let k: usize = input.prep.ops.iter().map(|op| 1usize << op.qubits[0]).sum();
            prop_assert!((rho.probabilities().get(k) - 1.0).abs() < 1e-12);
        }
        let mut ids: Vec<_> = suite.inputs.iter().map(|i| &i.id).collect();
        ids.sort();
        ids.dedup();
        prop_assert_eq!(ids.len(), want);
    }
}
