//! How often the exact Example 1 transport meets the end-to-end pipeline
//! condition "mean CMC accuracy over 10 repetitions beats the accuracy of
//! the 1000-sample observed mean", over 2000 seeds.

use stratflow::estimate::{accuracy, cmc_estimate_map};
use stratflow::sampling::label;
use stratflow::{RngStream, Streams, TargetFunction, Testbed, TransportMap};

fn main() {
    let f = TargetFunction::JPlus(1.2);
    let fx = |x: &[f64]| f.eval(x);
    let truth = Testbed::Example1.oracle(&f).unwrap();
    let map = TransportMap::exact(Testbed::Example1).unwrap();
    let trials = 2000;
    let mut pass_runs = 0;
    for s in 0..trials {
        let mut rng = RngStream::new(s, label("obs"));
        let data = Testbed::Example1.sample_n(1000, &mut rng);
        let obs = data.iter().map(|x| f.eval(x)).sum::<f64>() / 1000.0;
        let ac_obs = accuracy(truth, obs).unwrap();
        let mut ac = 0.0;
        for k in 0..10u64 {
            let e = cmc_estimate_map(&map, &fx, 4096, &Streams::new(s).child(k)).unwrap().estimate;
            ac += accuracy(truth, e).unwrap().min(1e3) / 10.0;
        }
        pass_runs += usize::from(ac > ac_obs);
    }
    let p = pass_runs as f64 / trials as f64;
    let mut at_least_8 = 0.0;
    for k in 8..=10 {
        let c = (1..=10).product::<u64>() as f64 / ((1..=k).product::<u64>() as f64 * (1..=10 - k).product::<u64>() as f64);
        at_least_8 += c * p.powi(k as i32) * (1.0 - p).powi(10 - k as i32);
    }
    println!("exact map: condition (a) holds in {pass_runs}/{trials} = {p:.3}; P(>= 8 of 10) = {at_least_8:.3}");
}
