use nmo_core::analysis::{
    compute_accuracy, exact_ratio, presets, region_profile, run_sweep, AccuracyInput,
    AnalysisError, Knob, SweepBase, UNTAGGED,
};
use nmo_core::profiler::{build_trace, PhaseSet, PhaseTag, RegionTag, TagRegistry};
use nmo_core::sim::{gen_workload, run_sampling, MemoryModel, SamplerConfig, WorkloadSpec};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Signed;
use proptest::prelude::*;

fn ulp(x: f64) -> BigRational {
    let a = x.abs();
    let next = f64::from_bits(a.to_bits() + 1);
    BigRational::from_float(next).unwrap() - BigRational::from_float(a).unwrap()
}

fn accuracy_oracle(m: u64, s: u64, p: u64) -> BigRational {
    let m = BigInt::from(m);
    let est = BigInt::from(s) * BigInt::from(p);
    let one = BigRational::from_integer(1.into());
    one - BigRational::new((&m - est).abs(), m)
}

fn within_one_ulp(got: f64, exact: &BigRational) -> bool {
    (BigRational::from_float(got).unwrap() - exact).abs() <= ulp(got)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn accuracy_matches_rational_arithmetic(m in 1u64.., s in any::<u64>(), p in 1u64..) {
        let got = compute_accuracy(AccuracyInput { mem_counted: m, samples: s, period: p }).unwrap();
        prop_assert!(within_one_ulp(got, &accuracy_oracle(m, s, p)));
    }

    #[test]
    fn accuracy_near_one(m in 1_000u64..u64::MAX / 4, p in 1u64..100_000, slack in -3i64..3) {
        let s = (m / p).saturating_add_signed(slack);
        let got = compute_accuracy(AccuracyInput { mem_counted: m, samples: s, period: p }).unwrap();
        prop_assert!(within_one_ulp(got, &accuracy_oracle(m, s, p)));
        prop_assert!(got <= 1.0);
    }

    #[test]
    fn ratio_is_correctly_rounded(num in any::<u128>(), den in 1u128..) {
        let got = exact_ratio(num, den);
        let exact = BigRational::new(BigInt::from(num), BigInt::from(den));
        // Correct rounding is within half an ulp of the result.
        let err = (BigRational::from_float(got).unwrap() - &exact).abs();
        prop_assert!(err * BigInt::from(2) <= ulp(got));
    }
}

fn triad_trace(
    threads: u32,
    total_ops: u64,
    array_bytes: u64,
) -> (nmo_core::profiler::NormalizedTrace, nmo_core::sim::OpStream) {
    let spec = WorkloadSpec::stream_triad(total_ops, threads, array_bytes);
    let stream = gen_workload(&spec).unwrap();
    let run = run_sampling(
        &stream,
        &SamplerConfig::with_period(97),
        &MemoryModel::reference(),
        3,
    )
    .unwrap();
    let tags = TagRegistry::from_tags(
        spec.region_layout
            .iter()
            .map(|r| RegionTag::new(r.name.clone(), r.base_address, r.end())),
    )
    .unwrap();
    let phases = PhaseSet::new(vec![PhaseTag {
        name: "triad".into(),
        t_start: 0,
        t_end: Some(total_ops / u64::from(threads) / 2),
    }])
    .unwrap();
    let raw = run.trace_file().to_bytes();
    (
        build_trace(&raw, &tags, &phases, &run.timescale()).unwrap(),
        stream,
    )
}

#[test]
fn triad_scatter_is_ascending_per_thread_and_array() {
    let threads = 4;
    let total_ops = 1_200_000;
    let array_bytes = 1 << 20;
    let (trace, stream) = triad_trace(threads, total_ops, array_bytes);
    let profile = region_profile(&trace, None).unwrap();
    assert_eq!(profile.untagged(), 0);
    assert_eq!(profile.attributed(), trace.samples.len() as u64);

    for (ri, region) in stream.spec().region_layout.iter().enumerate() {
        for core in 0..threads {
            let slice = stream.triad_slice(core, ri);
            let addrs: Vec<u64> = trace
                .samples
                .iter()
                .filter(|s| {
                    u32::from(s.core_id) == core && s.region.as_deref() == Some(&region.name)
                })
                .map(|s| s.virtual_address)
                .collect();
            assert!(
                addrs.iter().all(|a| slice.contains(a)),
                "{} core {core}",
                region.name
            );
            // Each pass over the thread's slice is one ascending segment.
            let passes =
                stream.ops_for_core(core) / (3 * stream.triad_elements(core).count() as u64) + 1;
            let descents = addrs.windows(2).filter(|w| w[1] <= w[0]).count() as u64;
            assert!(
                descents < passes,
                "{descents} descents over {passes} passes"
            );
            assert!(addrs.len() > 100);
        }
    }
}

#[test]
fn phase_restriction_and_conservation() {
    let (trace, _) = triad_trace(2, 400_000, 1 << 18);
    let all = region_profile(&trace, None).unwrap();
    let phased = region_profile(&trace, Some("triad")).unwrap();
    let in_phase = trace.samples.iter().filter(|s| s.phase.is_some()).count() as u64;
    assert_eq!(phased.attributed() + phased.untagged(), in_phase);
    assert!(in_phase > 0 && in_phase < all.attributed());
    for stats in phased.regions.values() {
        assert_eq!(stats.access_count, stats.load_count + stats.store_count);
        assert_eq!(stats.access_count, stats.scatter.len() as u64);
        assert!(stats.scatter.windows(2).all(|w| w[0].t_ns <= w[1].t_ns));
    }
    assert!(matches!(
        region_profile(&trace, Some("bfs")),
        Err(AnalysisError::UnknownPhase(_))
    ));
}

#[test]
fn empty_trace_profile_is_zero() {
    let trace = nmo_core::profiler::NormalizedTrace {
        tags: vec![RegionTag::new("a", 0x1000, 0x2000)],
        ..Default::default()
    };
    let p = region_profile(&trace, None).unwrap();
    assert_eq!(p.regions.len(), 2);
    assert!(p
        .regions
        .values()
        .all(|r| r.access_count == 0 && r.scatter.is_empty()));
    assert!(p.regions.contains_key(UNTAGGED));
}

fn small_base() -> SweepBase {
    SweepBase {
        workload: WorkloadSpec::stream_triad(1_000_000, 2, 1 << 22),
        ..presets::collisions()
    }
}

#[test]
fn sweeps_are_reproducible() {
    let a = run_sweep(Knob::Period, &[500, 1000, 4000], &small_base(), &[1, 2, 3]).unwrap();
    let b = run_sweep(Knob::Period, &[500, 1000, 4000], &small_base(), &[1, 2, 3]).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    let keys: Vec<_> = a.rows.iter().map(|r| (r.value, r.seed)).collect();
    assert_eq!(keys[..4], [(500, 1), (500, 2), (500, 3), (1000, 1)]);
    assert_eq!(a.summaries.len(), 3);
    let s = a.summary(1000).unwrap();
    let acc: Vec<f64> = a
        .rows
        .iter()
        .filter(|r| r.value == 1000)
        .map(|r| r.accuracy)
        .collect();
    assert!((s.accuracy_mean - acc.iter().sum::<f64>() / 3.0).abs() < 1e-15);
}

#[test]
fn store_filter_counts_only_stores() {
    let mut base = small_base();
    base.sampler.filter = nmo_core::sim::FilterSpec::kinds(&[nmo_core::codec::OpKind::Store]);
    base.model = MemoryModel::ideal();
    let tab = run_sweep(Knob::Period, &[100, 200, 400], &base, &[7]).unwrap();
    // A third of triad operations are stores; accuracy is against those.
    for r in &tab.rows {
        assert!(r.accuracy > 0.95, "{r:?}");
    }
}

#[test]
fn thread_sweep_stays_in_a_band() {
    let values = [1, 2, 4, 8, 16, 32, 64, 128];
    let tab = run_sweep(Knob::Threads, &values, &presets::threads(), &[1, 2, 3]).unwrap();
    let means: Vec<f64> = tab.summaries.iter().map(|s| s.accuracy_mean).collect();
    let (lo, hi) = means
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &m| (l.min(m), h.max(m)));
    assert!(hi - lo < 0.02, "{means:?}");
    let interrupts: Vec<f64> = tab.summaries.iter().map(|s| s.interrupts_mean).collect();
    assert!(
        interrupts.windows(2).all(|w| w[0] <= w[1]),
        "{interrupts:?}"
    );
    assert!(interrupts[7] > interrupts[0]);
}
