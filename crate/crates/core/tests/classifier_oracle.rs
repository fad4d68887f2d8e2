use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use textpipe_core::{LabeledDoc, NaiveBayesModel, Sentiment, TokenPipeline};

/// Scores by multiplying probabilities directly rather than summing logs.
struct BruteForce {
    prior: [f64; 2],
    likelihood: BTreeMap<String, [f64; 2]>,
}

impl BruteForce {
    fn fit(docs: &[(Vec<String>, usize)], alpha: f64) -> Self {
        let vocab: BTreeSet<&String> = docs.iter().flat_map(|(t, _)| t).collect();
        let mut prior = [0.0; 2];
        let mut totals = [0.0; 2];
        for (tokens, c) in docs {
            prior[*c] += 1.0;
            totals[*c] += tokens.len() as f64;
        }
        let n = docs.len() as f64;
        let likelihood = vocab
            .iter()
            .map(|w| {
                let mut p = [0.0; 2];
                for c in 0..2 {
                    let count = docs
                        .iter()
                        .filter(|(_, dc)| *dc == c)
                        .map(|(t, _)| t.iter().filter(|x| x == w).count())
                        .sum::<usize>() as f64;
                    p[c] = (count + alpha) / (totals[c] + alpha * vocab.len() as f64);
                }
                ((*w).clone(), p)
            })
            .collect();
        BruteForce {
            prior: [prior[0] / n, prior[1] / n],
            likelihood,
        }
    }

    fn scores(&self, tokens: &[String]) -> [f64; 2] {
        let mut joint = self.prior;
        for t in tokens {
            if let Some(p) = self.likelihood.get(t) {
                joint[0] *= p[0];
                joint[1] *= p[1];
            }
        }
        [joint[0].ln(), joint[1].ln()]
    }
}

fn corpus() -> impl Strategy<Value = (Vec<(Vec<String>, usize)>, f64, usize)> {
    (2usize..=20)
        .prop_flat_map(|v| {
            let doc = (prop::collection::vec(0..v, 1..8), 0usize..2);
            (prop::collection::vec(doc, 2..=50), prop::sample::select(vec![0.5, 1.0, 2.0]), Just(v))
        })
        .prop_filter("both classes present", |(docs, _, _)| {
            docs.iter().any(|d| d.1 == 0) && docs.iter().any(|d| d.1 == 1)
        })
        .prop_map(|(docs, alpha, v)| {
            let docs = docs
                .into_iter()
                .map(|(ids, c)| (ids.into_iter().map(|i| format!("tok{}", (b'a' + i as u8) as char)).collect(), c))
                .collect();
            (docs, alpha, v)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn model_matches_brute_force((docs, alpha, _) in corpus(), probe in prop::collection::vec(0usize..25, 0..10)) {
        let pipeline = TokenPipeline::english();
        let labeled: Vec<LabeledDoc> = docs
            .iter()
            .map(|(t, c)| LabeledDoc::new(t.join(" "), Sentiment::from_index(*c).unwrap()))
            .collect();
        let model = NaiveBayesModel::train(&labeled, alpha, &pipeline).unwrap();
        let oracle = BruteForce::fit(&docs, alpha);
        model.check_invariants().unwrap();

        for class in Sentiment::ALL {
            let sum: f64 = oracle
                .likelihood
                .keys()
                .map(|w| model.log_likelihood(class, w).unwrap().exp())
                .sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
        }
        prop_assert_eq!(model.vocabulary().len(), oracle.likelihood.len());

        // training documents plus a probe that may include unseen tokens
        let mut queries: Vec<Vec<String>> = docs.iter().map(|d| d.0.clone()).collect();
        queries.push(probe.iter().map(|i| format!("tok{}", (b'a' + *i as u8) as char)).collect());
        for q in queries {
            let got = model.predict(&q);
            let want = oracle.scores(&q);
            for c in 0..2 {
                prop_assert!((got.scores[c] - want[c]).abs() < 1e-9, "class {c}: {} vs {}", got.scores[c], want[c]);
            }
            let expect = if want[1] >= want[0] { Sentiment::Positive } else { Sentiment::Negative };
            if (want[1] - want[0]).abs() > 1e-9 {
                prop_assert_eq!(got.sentiment, expect);
            }
        }
    }

    #[test]
    fn text_format_roundtrips_exactly((docs, alpha, _) in corpus()) {
        let pipeline = TokenPipeline::english();
        let labeled: Vec<LabeledDoc> = docs
            .iter()
            .map(|(t, c)| LabeledDoc::new(t.join(" "), Sentiment::from_index(*c).unwrap()))
            .collect();
        let model = NaiveBayesModel::train(&labeled, alpha, &pipeline).unwrap();
        let back = NaiveBayesModel::from_text(&model.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), model.to_text());
        prop_assert_eq!(back, model);
    }
}
