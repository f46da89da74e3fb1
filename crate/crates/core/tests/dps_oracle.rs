//! dps_select against a brute-force score / filter / sort oracle.

use dxprompt_core::dps::{dps_select, retention_curve, DpsConfig};
use dxprompt_core::types::{Candidate, Condition, EmbeddedSample, Embedding, ImageRef, Modality, Record};
use proptest::prelude::*;

fn oracle_cos(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn oracle_score(c: &(Vec<f64>, Vec<f64>), q: &(Vec<f64>, Vec<f64>), m: Modality) -> f64 {
    match m {
        Modality::Image => oracle_cos(&c.0, &q.0),
        Modality::Text => oracle_cos(&c.1, &q.1),
        Modality::Multimodal => ((oracle_cos(&c.0, &q.0) + oracle_cos(&c.1, &q.1)) / 2.0).clamp(-1.0, 1.0),
    }
}

/// Keep score >= th (or the single best when nothing passes), ascending by
/// score, ties by pool index.
fn oracle_select(scores: &[f64], th: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = (0..scores.len()).filter(|&i| scores[i] >= th).collect();
    if kept.is_empty() {
        let mut best = 0;
        for i in 1..scores.len() {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        kept.push(best);
    }
    kept.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));
    kept
}

fn sample(v: &(Vec<f64>, Vec<f64>)) -> EmbeddedSample {
    EmbeddedSample::new(Embedding::new(v.0.clone()).unwrap(), Embedding::new(v.1.clone()).unwrap())
}

fn candidate(i: usize) -> Candidate {
    Candidate::new(Record::new(format!("c{i}"), ImageRef::new(format!("{i}.png")), vec![], Condition::Edema, (i % 2) as u8).unwrap())
}

fn nonzero_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    // a coarse grid of values so exact ties between candidates show up
    prop::collection::vec(prop_oneof![(-4i32..=4).prop_map(|v| f64::from(v) / 2.0), -1.0f64..1.0], dim)
        .prop_filter("non-zero", |v| v.iter().any(|x| *x != 0.0))
}

type Sample = (Vec<f64>, Vec<f64>);

fn pool_and_query() -> impl Strategy<Value = (Vec<Sample>, Sample)> {
    (1usize..=16, 1usize..=16).prop_flat_map(|(dg, dt)| {
        (prop::collection::vec((nonzero_vec(dg), nonzero_vec(dt)), 1..=8), (nonzero_vec(dg), nonzero_vec(dt)))
    })
}

fn modality() -> impl Strategy<Value = Modality> {
    prop_oneof![Just(Modality::Text), Just(Modality::Image), Just(Modality::Multimodal)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn matches_brute_force((pool, query) in pool_and_query(), th in -1.0f64..=1.0, m in modality(), dup in any::<bool>()) {
        let mut pool = pool;
        if dup && pool.len() > 1 {
            let last = pool.len() - 1;
            pool[last] = pool[0].clone();
        }
        let embedded: Vec<(Candidate, EmbeddedSample)> = pool.iter().enumerate().map(|(i, v)| (candidate(i), sample(v))).collect();
        let got = dps_select(&embedded, &sample(&query), &DpsConfig { threshold: th, modality: m, min_keep: 1 }).unwrap();

        let scores: Vec<f64> = pool.iter().map(|c| oracle_score(c, &query, m)).collect();
        let want = oracle_select(&scores, th);
        let got_idx: Vec<usize> = got.shots().iter().map(|s| s.original_index).collect();
        prop_assert_eq!(&got_idx, &want);
        for s in got.shots() {
            prop_assert_eq!(s.score.value(), scores[s.original_index]);
            prop_assert_eq!(&s.candidate, &embedded[s.original_index].0);
        }
        let nearest = got.nearest().unwrap();
        prop_assert!(got.shots().iter().all(|s| s.score.value() <= nearest.score.value()));
    }

    #[test]
    fn retention_is_monotone((pool, query) in pool_and_query(), m in modality()) {
        let embedded: Vec<(Candidate, EmbeddedSample)> = pool.iter().enumerate().map(|(i, v)| (candidate(i), sample(v))).collect();
        let ths = [-1.0, -0.5, 0.0, 0.5, 0.7, 0.9, 1.0];
        let curve = retention_curve(&embedded, &sample(&query), &ths, m).unwrap();
        prop_assert_eq!(curve[0].kept, pool.len());
        prop_assert!(curve.windows(2).all(|w| w[0].kept >= w[1].kept && w[0].raw_kept >= w[1].raw_kept));
        prop_assert!(curve.iter().all(|p| p.kept >= 1));
        for p in &curve {
            let n = dps_select(&embedded, &sample(&query), &DpsConfig { threshold: p.threshold, modality: m, min_keep: 1 }).unwrap().len();
            prop_assert_eq!(n, p.kept);
        }
    }
}
