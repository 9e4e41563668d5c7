#![allow(dead_code)]

//! Shared test support: an independent retrieval oracle and instance generators.

use qsuggest::domain::{BinaryAnswerability, Embedding, LabeledExample, TemplatedQuery};
use qsuggest::retrieval::{ExampleSets, RetrievalConfig};
use qsuggest::store::SimilarityStore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inner(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Direct O(n^2) transcription of the robust retrieval pseudocode.
///
/// Admitted candidates are visited by descending query similarity (ties by
/// position). Every step scans all counters for the most similar live one.
pub fn oracle_retrieve(query: &[f64], candidates: &[LabeledExample], cfg: &RetrievalConfig) -> ExampleSets {
    let mut admitted: Vec<(f64, usize)> = Vec::new();
    for (idx, c) in candidates.iter().enumerate() {
        let s = inner(query, c.embedding.as_slice());
        if s >= cfg.theta_sim {
            admitted.push((s, idx));
        }
    }
    admitted.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let e: Vec<&LabeledExample> = admitted.iter().map(|(_, i)| &candidates[*i]).collect();
    let n = e.len();
    let mut c = vec![0i64; n];
    if n > 0 {
        c[0] = 1;
    }
    for i in 1..n {
        let mut j_star: Option<usize> = None;
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {
            if c[j] > 0 {
                let s = inner(e[i].embedding.as_slice(), e[j].embedding.as_slice());
                if s > best {
                    best = s;
                    j_star = Some(j);
                }
            }
        }
        match j_star {
            Some(j) if best >= cfg.theta_div => {
                if e[i].answerability == e[j].answerability {
                    c[j] += 1;
                } else {
                    c[j] -= 1;
                }
            }
            _ => c[i] = 1,
        }
    }
    let mut out = ExampleSets::default();
    for i in 0..n {
        if c[i] <= 0 {
            continue;
        }
        match e[i].answerability {
            BinaryAnswerability::Answerable if out.positive.len() < cfg.max_positive => out.positive.push(e[i].clone()),
            BinaryAnswerability::NotAnswerable if out.negative.len() < cfg.max_negative => {
                out.negative.push(e[i].clone())
            }
            _ => {}
        }
    }
    out
}

pub fn ids(v: &[LabeledExample]) -> Vec<String> {
    v.iter().map(|e| e.id.clone()).collect()
}

pub fn example(id: &str, v: Vec<f64>, label: BinaryAnswerability) -> LabeledExample {
    LabeledExample {
        id: id.to_string(),
        template: TemplatedQuery {
            template_text: format!("template {id}"),
            bindings: vec![],
            source_query: format!("template {id}"),
        },
        embedding: Embedding::new(v).expect("non-zero"),
        answerability: label,
        explanation: format!("explanation {id}"),
        created_at: chrono::DateTime::UNIX_EPOCH,
    }
}

pub fn unit(v: &[f64]) -> Vec<f64> {
    let n = inner(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

pub fn angle2(deg: f64) -> Vec<f64> {
    let r = deg.to_radians();
    vec![r.cos(), r.sin()]
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; enough for test geometry.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        if inner(&v, &v) > 1e-12 {
            return unit(&v);
        }
    }
}

/// A random retrieval instance: clustered candidates (with exact duplicates),
/// a query near one cluster, and a random valid config.
pub struct Instance {
    pub query: Vec<f64>,
    pub candidates: Vec<LabeledExample>,
    pub cfg: RetrievalConfig,
    pub dim: usize,
}

pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = [2, 8, 16][rng.random_range(0..3)];
    let n = rng.random_range(0..=200usize);
    let centers: Vec<Vec<f64>> = (0..rng.random_range(1..=6)).map(|_| random_unit(&mut rng, dim)).collect();
    let spread = [0.0, 0.02, 0.1, 0.4][rng.random_range(0..4)];
    let p_answerable: f64 = rng.random_range(0.1..0.9);
    let mut candidates: Vec<LabeledExample> = Vec::with_capacity(n);
    for i in 0..n {
        let label = if rng.random_bool(p_answerable) {
            BinaryAnswerability::Answerable
        } else {
            BinaryAnswerability::NotAnswerable
        };
        if i > 0 && rng.random_bool(0.15) {
            // Bit-identical duplicate of an earlier candidate.
            let mut dup = candidates[rng.random_range(0..i)].clone();
            dup.id = format!("e{i}");
            dup.answerability = label;
            candidates.push(dup);
        } else {
            let c = &centers[rng.random_range(0..centers.len())];
            let v = unit(&c.iter().map(|x| x + spread * gaussian(&mut rng)).collect::<Vec<_>>());
            candidates.push(example(&format!("e{i}"), v, label));
        }
    }
    let c = &centers[rng.random_range(0..centers.len())];
    let query = unit(&c.iter().map(|x| x + 0.1 * gaussian(&mut rng)).collect::<Vec<_>>());
    let theta_sim: f64 = rng.random_range(-0.5..0.99);
    let theta_div: f64 = rng.random_range(theta_sim..=1.0);
    let cfg = RetrievalConfig {
        theta_sim,
        theta_div,
        max_positive: rng.random_range(0..=7),
        max_negative: rng.random_range(0..=7),
        ..RetrievalConfig::default()
    };
    Instance {
        query,
        candidates,
        cfg,
        dim,
    }
}

impl Instance {
    pub fn store(&self) -> SimilarityStore {
        let mut s = SimilarityStore::in_memory(self.dim, "test").unwrap();
        for c in &self.candidates {
            s.insert(c.clone()).unwrap();
        }
        s
    }

    pub fn query_embedding(&self) -> Embedding {
        Embedding::new(self.query.clone()).unwrap()
    }
}

/// An isolated tight cluster of `m` members whose first-visited member has
/// label `seed_label`, held by `k` members in total. The rest of the visit
/// order is given by `pattern` (true = same label as the seed).
pub fn tight_cluster(m: usize, pattern: &[bool], seed_label: BinaryAnswerability) -> (Vec<f64>, Vec<LabeledExample>) {
    assert_eq!(pattern.len(), m - 1);
    let query = vec![1.0, 0.0, 0.0];
    let mut out = Vec::new();
    // Visit order follows descending query similarity, so angles increase.
    for i in 0..m {
        let a = (0.1 * i as f64).to_radians();
        let v = vec![a.cos(), a.sin(), 0.0];
        let label = if i == 0 || pattern[i - 1] { seed_label } else { seed_label.flipped() };
        out.push(example(&format!("m{i}"), v, label));
    }
    // A far-away decoy that is admitted but never joins the cluster.
    out.push(example("decoy", vec![0.7, 0.0, 0.714_142_842_854_285], BinaryAnswerability::Answerable));
    (query, out)
}
