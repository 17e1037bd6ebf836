use std::path::Path;

use streambench::planner::{plan, slot_allocation};
use streambench::workloads::{WorkloadError, WorkloadSpec, BUILTIN_NAMES};
use streambench::Exact;

fn shipped(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("workloads").join(format!("{name}.workload"))
}

#[test]
fn builtin_equals_shipped_file() {
    for name in BUILTIN_NAMES {
        let a = WorkloadSpec::builtin(name).unwrap();
        let b = WorkloadSpec::load(&shipped(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn daily_totals() {
    let e = WorkloadSpec::builtin("enrollment").unwrap();
    let a = WorkloadSpec::builtin("authentication").unwrap();
    assert!((e.rate_profile.expected_total() - 591_270.0).abs() < 1e-6);
    assert!((a.rate_profile.expected_total() - 15_480_000.0).abs() < 1e-3);
    assert_eq!(e.rate_profile.span(), 86_400.0);
    // base 150/s with two 500/s hours
    let rates: Vec<f64> = a.rate_profile.buckets().iter().map(|b| b.rate).collect();
    assert_eq!(rates.iter().filter(|&&r| r == 500.0).count(), 2);
    assert!(rates.iter().all(|&r| r == 150.0 || r == 500.0));
}

#[test]
fn slas_and_success_paths() {
    let e = WorkloadSpec::builtin("enrollment").unwrap();
    let a = WorkloadSpec::builtin("authentication").unwrap();
    assert_eq!(e.sla_ms, 600_000.0);
    assert_eq!(a.sla_ms, 1_000.0);
    assert_eq!(e.topology.success_path_latency(), 2000.0 + 3000.0 + 1500.0 + 220.0 + 14000.0 + 500.0);
    assert_eq!(a.topology.success_path_latency(), 250.0);
    assert_eq!(e.topology.processing_tasks().count(), 8);
    assert_eq!(a.topology.processing_tasks().count(), 8);
    assert_eq!(a.size_histogram.bins().len(), 1);
    assert_eq!(a.size_histogram.bins()[0].lo, 4096);
    assert_eq!(a.output_size_bytes, Some(4096));
}

#[test]
fn enrollment_histogram_mass() {
    let e = WorkloadSpec::builtin("enrollment").unwrap();
    let mb = 1_048_576u64;
    let bins = e.size_histogram.bins();
    assert_eq!(bins.first().unwrap().lo, mb);
    assert_eq!(bins.last().unwrap().hi, 5 * mb);
    let mid: f64 = bins.iter().filter(|b| b.lo >= 2 * mb && b.hi <= 3 * mb).map(|b| b.prob).sum();
    assert!((mid - 0.5).abs() < 1e-12, "{mid}");
}

#[test]
fn terminal_fractions_without_additional_checks() {
    let e = WorkloadSpec::builtin("enrollment").unwrap().with_parameter("additional_checks_pass", 0.0).unwrap();
    let p = e.topology.terminal_probabilities::<f64>();
    let pass = 0.98 * 0.95 * 0.95 * 0.92;
    assert!((p["AadhaarGeneration"] - pass).abs() < 1e-12);
    assert!((p["Rejected"] - (1.0 - pass)).abs() < 1e-12);
    let exact = e.topology.terminal_probabilities::<Exact>();
    assert_eq!(exact["AadhaarGeneration"], Exact::new(49 * 19 * 19 * 23, 50 * 20 * 20 * 25));
}

#[test]
fn desk_variants_scale_latencies_only() {
    for (full, desk) in [("enrollment", "enrollment-desk"), ("authentication", "authentication-desk")] {
        let f = WorkloadSpec::builtin(full).unwrap();
        let d = WorkloadSpec::builtin(desk).unwrap();
        assert_eq!(f.topology.tasks.len(), d.topology.tasks.len());
        for (a, b) in f.topology.tasks.iter().zip(&d.topology.tasks) {
            assert_eq!((&a.name, a.kind), (&b.name, b.kind));
            assert!((a.service_latency_ms / 100.0 - b.service_latency_ms).abs() < 1e-12, "{}", a.name);
        }
        for (a, b) in f.topology.edges.iter().zip(&d.topology.edges) {
            assert_eq!((&a.from, &a.to, a.label, a.selectivity), (&b.from, &b.to, b.label, b.selectivity));
        }
        assert_eq!(f.sla_ms / 100.0, d.sla_ms);
        // 600x shorter buckets at the same rates
        assert_eq!(d.rate_profile.span() * 600.0, f.rate_profile.span());
        assert_eq!(d.rate_profile.peak_rate(), f.rate_profile.peak_rate());
    }
}

#[test]
fn out_of_range_selectivity_names_edge() {
    let text = std::fs::read_to_string(shipped("enrollment")).unwrap().replacen("\"selectivity\": 0.98", "\"selectivity\": 1.2", 1);
    let err = WorkloadSpec::from_json(&text).unwrap_err();
    assert!(matches!(err, WorkloadError::Invalid(_)));
    assert!(err.to_string().contains("DemographicDedup->QualityCheck"), "{err}");
}

#[test]
fn planner_lower_bound_at_unit_headroom() {
    let a = WorkloadSpec::builtin("authentication").unwrap();
    let mut input = a.plan_input(1.0);
    input.headroom = 1.0;
    let p = plan(&a.topology, &input);
    // per-task ceil(500 × L / 1000) by hand
    let by_hand: u64 = [30.0, 20.0, 15.0, 40.0, 80.0, 10.0, 25.0, 30.0].iter().map(|l: &f64| (500.0 * l / 1000.0_f64).ceil() as u64).sum();
    assert_eq!(p.total_threads, by_hand);
    assert!(p.total_threads >= 125);
}

#[test]
fn calibrated_headrooms_reproduce_deployments() {
    let a = WorkloadSpec::builtin("authentication").unwrap();
    let pa = plan(&a.topology, &a.plan_input(1.0));
    assert!((pa.total_threads as i64 - 514).abs() <= 5, "{}", pa.total_threads);
    assert_eq!(pa.nodes, 19);

    let e = WorkloadSpec::builtin("enrollment").unwrap();
    let pe = plan(&e.topology, &e.plan_input(1.0));
    assert!((pe.total_threads as i64 - 475).abs() <= 5, "{}", pe.total_threads);
    assert_eq!(pe.nodes, 9);
    assert_eq!(pe.slots, 72);
    assert_eq!(slot_allocation(&pe.parallelism, &e.plan_input(1.0)), 9);
}
