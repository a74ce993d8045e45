use cdi_lab::measure::LambdaSpec;
use cdi_lab::simulate::{replica_seed, Backend, HittingTime, Simulator};

const REPLICAS: u64 = 20_000;

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn within(xs: &[f64], expected: f64) {
    let (mean, se) = mean_and_se(xs);
    assert!((mean - expected).abs() < 4.0 * se, "mean {mean} vs {expected} (se {se})");
}

#[test]
fn uniform_triple_merger_from_three() {
    // From 3 blocks the pair rate is 3/2 and the triple rate 1/2.
    let sim = Simulator::new(&LambdaSpec::uniform()).unwrap();
    let n = 100_000u64;
    let triples = (0..n)
        .filter(|&s| sim.simulate(3, None, s, Backend::DirectK).unwrap().events[0].1 == 1)
        .count() as f64;
    let p = triples / n as f64;
    assert!((p - 0.25).abs() < 4.0 * (0.25f64 * 0.75 / n as f64).sqrt(), "{p}");
}

#[test]
fn kingman_absorption_time() {
    let sim = Simulator::new(&LambdaSpec::kingman()).unwrap();
    let n = 40u64;
    let times: Vec<f64> = (0..REPLICAS)
        .map(|r| sim.simulate(n, None, replica_seed(11, r), Backend::Auto).unwrap().events.last().unwrap().0)
        .collect();
    within(&times, 2.0 * (1.0 - 1.0 / n as f64));
}

#[test]
fn kingman_tree_length() {
    let sim = Simulator::new(&LambdaSpec::kingman()).unwrap();
    let n = 40u64;
    let lengths: Vec<f64> = (0..REPLICAS)
        .map(|r| {
            let p = sim.simulate(n, None, replica_seed(12, r), Backend::Auto).unwrap();
            p.tree_length(0.0, p.events.last().unwrap().0)
        })
        .collect();
    let harmonic: f64 = (1..n).map(|k| 1.0 / k as f64).sum();
    within(&lengths, 2.0 * harmonic);
}

#[test]
fn kingman_hitting_time() {
    // Σ_{k=11}^{50} 2/(k(k-1)) = 2(1/10 - 1/50).
    let sim = Simulator::new(&LambdaSpec::kingman()).unwrap();
    let times: Vec<f64> = (0..REPLICAS)
        .map(|r| match sim.simulate(50, None, replica_seed(13, r), Backend::Auto).unwrap().hitting_time(10) {
            HittingTime::At(t) => t,
            HittingTime::NotReached => panic!("absorbed paths reach every level"),
        })
        .collect();
    within(&times, 0.16);
}

#[test]
fn horizon_stops_the_path() {
    let sim = Simulator::new(&LambdaSpec::beta(1.5).unwrap()).unwrap();
    let path = sim.simulate(10_000, Some(1e-3), 5, Backend::XBinomial).unwrap();
    assert!(!path.is_absorbed());
    assert!(path.events.last().unwrap().0 <= 1e-3);
    assert_eq!(path.count_at(1e-3), path.final_count());
    assert_eq!(path.hitting_time(1), HittingTime::NotReached);
    assert_eq!(path.count_at(0.0), 10_000);
}

#[test]
fn backends_agree_on_mean_absorption_time() {
    let sim = Simulator::new(&LambdaSpec::beta(1.5).unwrap()).unwrap();
    let n = 300u64;
    let absorb = |backend| -> Vec<f64> {
        (0..4000)
            .map(|r| sim.simulate(n, None, replica_seed(21, r), backend).unwrap().events.last().unwrap().0)
            .collect()
    };
    let (a, sa) = mean_and_se(&absorb(Backend::DirectK));
    let (b, sb) = mean_and_se(&absorb(Backend::XBinomial));
    assert!((a - b).abs() < 4.0 * (sa * sa + sb * sb).sqrt(), "{a} vs {b}");
}

#[test]
fn csv_starts_at_the_initial_count() {
    let sim = Simulator::new(&LambdaSpec::kingman()).unwrap();
    let path = sim.simulate(5, None, 1, Backend::Auto).unwrap();
    let mut buf = Vec::new();
    path.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "time,count");
    assert_eq!(lines[1], "0e0,5");
    assert_eq!(lines.len(), 2 + path.events.len());
    assert!(lines.last().unwrap().ends_with(",1"));
}
