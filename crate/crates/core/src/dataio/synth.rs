use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{FeatureMatrix, GraphDataset};
use crate::blocks::Graph;
use crate::diffcore::Tensor;
use crate::error::{invalid, Result};

/// Share of feature entries replaced by NaN or an infinity.
pub const NON_FINITE_FRACTION: f64 = 0.02;

/// Noise-free target of one feature row: `sum_{i<4} sin(x_i) + 0.5 x_4 x_5`,
/// with absent features contributing nothing.
pub fn regression_target(x: &[f64]) -> f64 {
    let waves: f64 = x.iter().take(4).map(|v| v.sin()).sum();
    let product = if x.len() >= 6 { 0.5 * x[4] * x[5] } else { 0.0 };
    waves + product
}

/// Standard-normal features with a smooth nonlinear target.
///
/// The target is computed first; afterwards `round(0.02 * n * d)` distinct
/// entries are overwritten, cycling through NaN, `+inf` and `-inf`.
pub fn synth_regression(n: usize, d: usize, noise_sigma: f64, seed: u64) -> Result<FeatureMatrix> {
    if n == 0 || d == 0 {
        return Err(invalid("synth_regression", "n and d must be at least 1"));
    }
    let noise = Normal::new(0.0, noise_sigma).map_err(|e| invalid("synth_regression", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let targets = (0..n)
        .map(|r| regression_target(&values[r * d..(r + 1) * d]) + noise.sample(&mut rng))
        .collect();
    let corrupt = (NON_FINITE_FRACTION * (n * d) as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n * d).collect();
    idx.partial_shuffle(&mut rng, corrupt);
    for (k, &i) in idx[..corrupt].iter().enumerate() {
        values[i] = [f64::NAN, f64::INFINITY, f64::NEG_INFINITY][k % 3];
    }
    FeatureMatrix::new((0..d).map(|c| format!("x{c}")).collect(), values, targets)
}

/// Node feature layout of [`synth_graphs`]: degree one-hot (capped at 4)
/// followed by a three-way random tag.
pub const SYNTH_NODE_WIDTH: usize = 8;

/// Triangles divided by node count, plus mean degree.
pub fn graph_statistic(n: usize, adj: &[Vec<usize>]) -> f64 {
    let mut triangles = 0usize;
    for u in 0..n {
        for &v in adj[u].iter().filter(|&&v| v > u) {
            triangles += adj[v].iter().filter(|&&w| w > v && adj[u].contains(&w)).count();
        }
    }
    let degree_sum: usize = adj.iter().map(Vec::len).sum();
    triangles as f64 / n as f64 + degree_sum as f64 / n as f64
}

/// Random connected graphs: a random spanning tree plus about `n / 2`
/// extra edges, stored in both directions.
pub fn synth_graphs(count: usize, nodes_range: (usize, usize), seed: u64) -> Result<GraphDataset> {
    let (lo, hi) = nodes_range;
    if count == 0 || lo == 0 || lo > hi {
        return Err(invalid("synth_graphs", format!("need count >= 1 and 1 <= min <= max, got {count}, {nodes_range:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut graphs = Vec::with_capacity(count);
    let mut targets = Vec::with_capacity(count);
    for _ in 0..count {
        let n = rng.random_range(lo..=hi);
        let mut adj = vec![Vec::new(); n];
        let link = |adj: &mut Vec<Vec<usize>>, u: usize, v: usize| {
            if u != v && !adj[u].contains(&v) {
                adj[u].push(v);
                adj[v].push(u);
            }
        };
        for v in 1..n {
            let u = rng.random_range(0..v);
            link(&mut adj, u, v);
        }
        if n > 2 {
            for _ in 0..n / 2 {
                let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
                link(&mut adj, u, v);
            }
        }
        let mut features = vec![0.0; n * SYNTH_NODE_WIDTH];
        for v in 0..n {
            features[v * SYNTH_NODE_WIDTH + adj[v].len().min(4)] = 1.0;
            features[v * SYNTH_NODE_WIDTH + 5 + rng.random_range(0..3)] = 1.0;
        }
        let edges = (0..n).flat_map(|u| adj[u].iter().map(move |&v| (u, v))).collect();
        targets.push(graph_statistic(n, &adj));
        graphs.push(Graph::new(Tensor::new(vec![n, SYNTH_NODE_WIDTH], features)?, edges, None)?);
    }
    GraphDataset::new(graphs, targets, None)
}

const ADJECTIVES: &[&str] = &[
    "old", "young", "bright", "dark", "quiet", "loud", "gentle", "proud", "weary", "noble", "strange", "golden", "silent",
    "little", "great", "cold", "warm", "honest", "cruel", "fair",
];
const NOUNS: &[&str] = &[
    "king", "queen", "knight", "river", "castle", "garden", "sword", "letter", "stranger", "mother", "father", "child",
    "city", "forest", "storm", "night", "morning", "servant", "lord", "lady", "ship", "crown", "friend", "heart",
];
const VERBS: &[&str] = &[
    "sees", "loves", "fears", "finds", "keeps", "follows", "remembers", "answers", "calls", "leaves", "guards", "praises",
    "watches", "seeks", "holds", "forgets",
];
const ADVERBS: &[&str] = &["slowly", "softly", "again", "never", "always", "truly", "boldly", "often"];
const PLACES: &[&str] = &[
    "in the hall", "by the sea", "under the hill", "at the gate", "before the dawn", "within the walls", "upon the road",
];
const SPEAKERS: &[&str] = &["KING", "QUEEN", "KNIGHT", "SERVANT", "LADY", "STRANGER"];

fn noun_phrase(rng: &mut ChaCha8Rng, out: &mut String) {
    out.push_str(if rng.random_bool(0.6) { "the " } else { "a " });
    if rng.random_bool(0.5) {
        out.push_str(ADJECTIVES.choose(rng).expect("non-empty"));
        out.push(' ');
    }
    out.push_str(NOUNS.choose(rng).expect("non-empty"));
}

fn sentence(rng: &mut ChaCha8Rng, out: &mut String) {
    let start = out.len();
    noun_phrase(rng, out);
    out.push(' ');
    if rng.random_bool(0.3) {
        out.push_str(ADVERBS.choose(rng).expect("non-empty"));
        out.push(' ');
    }
    out.push_str(VERBS.choose(rng).expect("non-empty"));
    out.push(' ');
    noun_phrase(rng, out);
    if rng.random_bool(0.4) {
        out.push(' ');
        out.push_str(PLACES.choose(rng).expect("non-empty"));
    }
    if rng.random_bool(0.25) {
        out.push_str(", and ");
        noun_phrase(rng, out);
        out.push(' ');
        out.push_str(VERBS.choose(rng).expect("non-empty"));
        out.push(' ');
        noun_phrase(rng, out);
    }
    out.push(*['.', '.', '.', '!', '?'].choose(rng).expect("non-empty"));
    let first = out[start..start + 1].to_ascii_uppercase();
    out.replace_range(start..start + 1, &first);
}

/// Play-script flavoured English built from a small grammar; at least
/// `min_bytes` long.
pub fn synth_text(min_bytes: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(min_bytes + 256);
    while out.len() < min_bytes {
        out.push_str(SPEAKERS.choose(&mut rng).expect("non-empty"));
        out.push_str(":\n");
        for _ in 0..rng.random_range(1..=3) {
            sentence(&mut rng, &mut out);
            out.push(' ');
        }
        out.pop();
        out.push_str("\n\n");
    }
    out
}
