use longpref::corpus::TaskKind;
use longpref::reward::{fit_bt, pairwise_accuracy, FitConfig, Featurizer, LinearBt};
use longpref::rng::derive_rng;
use longpref::store::{PreferenceTriplet, Source};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Responses are comma-separated feature vectors.
#[derive(Clone)]
struct VectorFeaturizer(usize);

impl Featurizer for VectorFeaturizer {
    fn id(&self) -> String {
        format!("vector:d={}", self.0)
    }
    fn dim(&self) -> usize {
        self.0
    }
    fn features(&self, _: &str, response: &str) -> Vec<f64> {
        response.split(',').map(|x| x.parse().unwrap()).collect()
    }
}

fn encode(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(",")
}

/// Pairs labelled by a hidden weight vector; `flip` of them reversed.
fn planted(n: usize, d: usize, flip: f64, seed: u64) -> Vec<PreferenceTriplet> {
    let mut rng = derive_rng(seed, &["planted".into()]);
    let theta: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
    (0..n)
        .map(|i| {
            let a: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let score = |x: &[f64]| x.iter().zip(&theta).map(|(x, t)| x * t).sum::<f64>();
            let mut a_wins = score(&a) > score(&b);
            if rng.random_bool(flip) {
                a_wins = !a_wins;
            }
            let (w, l) = if a_wins { (a, b) } else { (b, a) };
            PreferenceTriplet::new(Some(TaskKind::Summarization), format!("p{i}"), encode(&w), encode(&l), Source::External, None)
                .unwrap()
        })
        .collect()
}

#[test]
fn noiseless_instance_is_separated() {
    let train = planted(500, 8, 0.0, 1);
    let f = VectorFeaturizer(8);
    let cfg = FitConfig { lr: 2.0, epochs: 3000, batch_size: 500, seed: 1, l2: 0.0 };
    let (params, _) = fit_bt(&train, &f, &cfg).unwrap();
    let scorer = LinearBt::new(f, params).unwrap();
    assert_eq!(pairwise_accuracy(&scorer, &train).unwrap().overall, 1.0);
}

#[test]
fn noisy_instance_generalizes() {
    let all = planted(1000, 8, 0.1, 2);
    let (train, test) = all.split_at(500);
    let f = VectorFeaturizer(8);
    let (params, report) = fit_bt(train, &f, &FitConfig { epochs: 50, ..FitConfig::default() }).unwrap();
    assert!(report.final_loss() < report.initial_loss);
    let scorer = LinearBt::new(f, params).unwrap();
    let acc = pairwise_accuracy(&scorer, test).unwrap().overall;
    assert!(acc >= 0.85, "held-out accuracy {acc}");
}
