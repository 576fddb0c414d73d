//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test -p divgen-cli --test acceptance -- P4 P8`.
//! Criteria listed in `KNOWN_FAILURES` are printed as FAIL but do not fail
//! the process unless `DIVGEN_ACCEPTANCE_STRICT=1`.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

use divgen::curation::{choose_label, final_score, replace_labels, LrMode, ReplaceOptions, SgdConfig};
use divgen::embedding::{Distance, Embedding, HashedNgramEmbedder, PrecomputedEmbedder};
use divgen::metrics::{cross_distance, label_accuracy, remote_clique_diversity, Evaluator};
use divgen::mock_lm::{demo_task, demo_test_set};
use divgen::pipeline::{
    cents, demo_backend, demo_spec, estimate_budget_for, run_generation, DataInstance, Dataset, GenerationOptions,
    LabeledText, RunMetadata,
};
use divgen::sampling::{apply_bias, apply_temperature, compute_suppression_bias, FrequencyLedger, TokenDistribution, TokenId};
use divgen::student::{evaluate_student, train_student, StudentConfig};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

type Check = Result<String, String>;

const KNOWN_FAILURES: &[(&str, &str)] = &[
    (
        "P2b",
        "after renormalization a lightly penalized token gains whenever heavier-penalized tokens lose more mass",
    ),
    (
        "P3b",
        "130 x 6922 x $0.02/1k = $17.9972, which rounds to $18.00; the expected $17.80 does not follow from the formula",
    ),
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_distribution(rng: &mut ChaCha8Rng, len: usize) -> TokenDistribution {
    // occasional exact zeros exercise the zero-mass paths
    let weights: Vec<f64> = (0..len)
        .map(|_| if rng.random_bool(0.1) { 0.0 } else { rng.random::<f64>().powi(3) + 1e-12 })
        .collect();
    TokenDistribution::from_weights(weights).unwrap()
}

fn p1() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let temps = [0.3, 0.7, 0.9, 1.3];
    let mut worst_identity = 0.0f64;
    for case in 0..1000 {
        let len = rng.random_range(2..200);
        let d = random_distribution(&mut rng, len);
        let same = apply_temperature(&d, 1.0).map_err(|e| e.to_string())?;
        for (a, b) in d.probs().iter().zip(same.probs()) {
            worst_identity = worst_identity.max((a - b).abs());
        }
        let h: Vec<f64> = temps
            .iter()
            .map(|t| apply_temperature(&d, *t).unwrap().entropy())
            .collect();
        for k in 1..h.len() {
            ensure(h[k] >= h[k - 1] - 1e-12, || {
                format!("case {case}: entropy {} at T={} below {} at T={}", h[k], temps[k], h[k - 1], temps[k - 1])
            })?;
        }
    }
    ensure(worst_identity <= 1e-9, || format!("T=1 deviates by {worst_identity:e}"))?;
    let secs = started.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("1000 distributions, max |T=1 - p| = {worst_identity:.1e}, {secs:.2}s"))
}

fn random_ledger(rng: &mut ChaCha8Rng) -> FrequencyLedger {
    let vocab = rng.random_range(1..400u32);
    let mut ledger = FrequencyLedger::new();
    for _ in 0..rng.random_range(1..60) {
        let len = rng.random_range(1..40);
        // skewed ids so some tokens dominate
        let toks: Vec<TokenId> = (0..len)
            .map(|_| TokenId((rng.random::<f64>().powi(2) * vocab as f64) as u32))
            .collect();
        ledger.record(&toks);
    }
    ledger
}

/// Independent statement of the rule: the 100 most frequent tokens (ties to
/// the lower id) get max(-7.5, -7.5 x percent of all generated tokens).
fn reference_bias(ledger: &FrequencyLedger) -> Vec<(u32, f64)> {
    let counts: HashMap<u32, u64> = ledger.iter().map(|(t, c)| (t.0, c)).collect();
    let total: u64 = counts.values().sum();
    let mut ranked: Vec<(u32, u64)> = counts.into_iter().filter(|(_, c)| *c > 0).collect();
    ranked.sort_by_key(|(t, c)| (std::cmp::Reverse(*c), *t));
    ranked.truncate(100);
    let mut out: Vec<(u32, f64)> = ranked
        .into_iter()
        .map(|(t, c)| (t, (-7.5 * (100.0 * c as f64 / total as f64)).max(-7.5)))
        .collect();
    out.sort_by_key(|(t, _)| *t);
    out
}

fn p2a() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut capped = 0;
    for case in 0..100 {
        let ledger = random_ledger(&mut rng);
        let bias = compute_suppression_bias(&ledger);
        let mut got: Vec<(u32, f64)> = bias.iter().map(|(t, w)| (t.0, w)).collect();
        got.sort_by_key(|(t, _)| *t);
        let want = reference_bias(&ledger);
        ensure(got == want, || format!("ledger {case}: bias differs from reference"))?;
        ensure(got.len() <= 100 && got.iter().all(|(_, w)| *w >= -7.5 && *w < 0.0), || {
            format!("ledger {case}: entry count or range")
        })?;
        if got.len() == 100 {
            capped += 1;
        }
    }
    Ok(format!("100 ledgers match the reference exactly ({capped} hit the 100-entry cap)"))
}

/// Literal check of "biased tokens' probabilities never increase", plus the
/// set-level statements that do hold under renormalization.
fn p2b() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut checked, mut rose, mut worst) = (0, 0, 1.0f64);
    for case in 0..100 {
        let ledger = random_ledger(&mut rng);
        let bias = compute_suppression_bias(&ledger);
        let vocab = ledger.iter().map(|(t, _)| t.0).max().unwrap_or(0) as usize + 1 + rng.random_range(0..50);
        let d = random_distribution(&mut rng, vocab);
        let after = apply_bias(&d, &bias);
        let unbiased: Vec<TokenId> = (0..vocab as u32)
            .map(TokenId)
            .filter(|t| bias.weight(*t) == 0.0 && d.prob(*t) > 0.0)
            .collect();
        for (t, _) in bias.iter() {
            let (p, q) = (d.prob(t), after.prob(t));
            checked += 1;
            if q > p * (1.0 + 1e-12) {
                rose += 1;
                worst = worst.max(q / p);
            }
            for u in &unbiased {
                ensure(q / after.prob(*u) <= p / d.prob(*u) * (1.0 + 1e-12), || {
                    format!("ledger {case}: token {} gained against unbiased token {}", t.0, u.0)
                })?;
            }
        }
        let before_mass: f64 = bias.iter().map(|(t, _)| d.prob(t)).sum();
        let after_mass: f64 = bias.iter().map(|(t, _)| after.prob(t)).sum();
        ensure(after_mass <= before_mass + 1e-12, || format!("ledger {case}: biased mass grew"))?;
    }
    let holds = "biased mass and odds against every unbiased token never rose";
    ensure(rose == 0, || {
        format!("{rose} of {checked} biased tokens rose individually (up to x{worst:.2}); {holds}")
    })?;
    Ok(format!("{checked} biased tokens, none increased; {holds}"))
}

fn p3a() -> Check {
    for n in 1..=6 {
        let b = estimate_budget_for(5600, n, 0.02);
        ensure(cents(b.per_block_cost) == 1456 && cents(b.cost) == 1456 * (n as i64 + 1), || {
            format!("n={n}: ${:.4} per block, ${:.4} total", b.per_block_cost, b.cost)
        })?;
    }
    Ok("5600 instances: $14.56 x (n+1) for n = 1..6".into())
}

fn p3b() -> Check {
    for n in 1..=6 {
        let b = estimate_budget_for(6922, n, 0.02);
        ensure(cents(b.per_block_cost) == 1780 && cents(b.cost) == 1780 * (n as i64 + 1), || {
            format!("n={n}: got ${:.4} per block (expected $17.80)", b.per_block_cost)
        })?;
    }
    Ok("6922 instances: $17.80 x (n+1)".into())
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Embedding> {
    (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

fn p4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let dim = rng.random_range(1..12);
        let (na, nb) = (rng.random_range(2..=50), rng.random_range(1..=50));
        let a = random_points(&mut rng, na, dim);
        let b = random_points(&mut rng, nb, dim);
        for d in [Distance::Cosine, Distance::Euclidean] {
            let n = a.len();
            let mut brute = 0.0;
            for i in 0..n {
                let mut row = 0.0;
                for j in 0..n {
                    if i != j {
                        row += d.between(&a[i], &a[j]);
                    }
                }
                brute += row / (n - 1) as f64;
            }
            brute /= n as f64;
            let got = remote_clique_diversity(&a, d).map_err(|e| e.to_string())?;
            let mut cross = 0.0;
            for x in &a {
                for y in &b {
                    cross += d.between(x, y);
                }
            }
            cross /= (a.len() * b.len()) as f64;
            let got_cross = cross_distance(&a, &b, d).map_err(|e| e.to_string())?;
            worst = worst.max((got - brute).abs()).max((got_cross - cross).abs());
            ensure(worst <= 1e-9, || format!("set {case}: error {worst:e}"))?;
        }
        let copies = vec![a[0].clone(); a.len()];
        let zero = remote_clique_diversity(&copies, Distance::Cosine).map_err(|e| e.to_string())?;
        ensure(zero == 0.0, || format!("set {case}: identical set has diversity {zero}"))?;
    }
    Ok(format!("50 sets x 2 distances, max error {worst:.1e}; identical sets give 0"))
}

fn p5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..10_000 {
        let s_s = if rng.random_bool(0.5) { 1.0 } else { 0.0 };
        let s_p: f64 = rng.random();
        let w: f64 = rng.random();
        let got = final_score(s_s, s_p, w).map_err(|e| e.to_string())?;
        ensure(got == s_s * w + s_p * (1.0 - w), || format!("triple {case}: {got}"))?;

        let k = rng.random_range(2..8);
        let scores: Vec<f64> = (0..k).map(|_| rng.random()).collect();
        let specified = rng.random_range(0..k);
        ensure(choose_label(specified, &scores, 1.0).unwrap() == specified, || {
            format!("case {case}: w=1 did not keep the specified label")
        })?;
        let best = scores
            .iter()
            .enumerate()
            .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
        ensure(choose_label(specified, &scores, 0.0).unwrap() == best, || {
            format!("case {case}: w=0 did not follow the proxy argmax")
        })?;
    }
    Ok("10^4 triples exact; w=1 keeps specified, w=0 follows proxy argmax".into())
}

fn generate(target: usize, seed: u64, suppression: bool, temperature: f64) -> Dataset {
    let mut task = demo_spec(target);
    task.mock = None;
    task.diversification.logit_suppression = suppression;
    task.diversification.temperature = temperature;
    let backend = demo_backend(&task).unwrap();
    run_generation(
        &task,
        &backend,
        &GenerationOptions {
            seed,
            ..Default::default()
        },
    )
    .unwrap()
}

fn p6() -> Check {
    let oracle = demo_task();
    let emb = HashedNgramEmbedder::default();
    let labels = oracle.labels().to_vec();
    let mut datasets = vec![generate(120, 6, false, 1.0), generate(120, 7, true, 1.3)];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    // arbitrary labels on held-out texts
    for k in 0..8 {
        let rows: Vec<LabeledText> = demo_test_set(10, 100 + k)
            .into_iter()
            .map(|(t, _)| LabeledText::new(t, labels[rng.random_range(0..labels.len())].clone()))
            .collect();
        datasets.push(Dataset::from_labeled("random", labels.clone(), &rows).unwrap());
    }
    for (i, ds) in datasets.iter().enumerate() {
        let (out, _) = replace_labels(ds, LrMode::OracleAll, &oracle, &emb, &ReplaceOptions::default())
            .map_err(|e| e.to_string())?;
        let acc = label_accuracy(&out, &oracle).map_err(|e| e.to_string())?;
        ensure(acc == 1.0, || format!("dataset {i}: accuracy {acc}"))?;
    }
    Ok(format!("{} datasets reach label accuracy 1.0", datasets.len()))
}

struct TextOracle {
    labels: Vec<String>,
    truth: HashMap<String, String>,
}

impl Evaluator for TextOracle {
    fn labels(&self) -> &[String] {
        &self.labels
    }

    fn predict(&self, text: &str) -> divgen::Result<String> {
        Ok(self.truth[text].clone())
    }
}

fn p7() -> Check {
    let started = Instant::now();
    let labels: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
    let dim = 16;
    let mut accs = Vec::new();
    for seed in 0..5u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + seed);
        let mut emb = PrecomputedEmbedder::new("clusters", dim);
        let mut truth = HashMap::new();
        let mut ds = Dataset::new(RunMetadata {
            task: "clusters".into(),
            labels: labels.clone(),
            ..Default::default()
        });
        let flipped: std::collections::HashSet<usize> = index::sample(&mut rng, 1000, 100).into_iter().collect();
        for i in 0..1000 {
            let k = i % 4;
            // cluster k has coordinate k >= 2.5 and every other coordinate <= 0.5
            let v: Vec<f64> = (0..dim)
                .map(|j| if j == k { 3.0 } else { 0.0 } + rng.random_range(-0.5..0.5))
                .collect();
            let text = format!("point {i}");
            emb.insert(&text, v);
            truth.insert(text.clone(), labels[k].clone());
            let specified = if flipped.contains(&i) { (k + rng.random_range(1..4)) % 4 } else { k };
            ds.instances
                .push(DataInstance::generated(format!("x{i:04}"), text, &labels[specified], 1));
        }
        let oracle = TextOracle {
            labels: labels.clone(),
            truth,
        };
        let opts = ReplaceOptions {
            seed,
            sgd: SgdConfig {
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let (out, _) = replace_labels(&ds, LrMode::Proxy { n: 180 }, &oracle, &emb, &opts).map_err(|e| e.to_string())?;
        accs.push(label_accuracy(&out, &oracle).map_err(|e| e.to_string())?);
    }
    let mean = accs.iter().sum::<f64>() / accs.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    ensure(mean >= 0.95, || format!("mean accuracy {mean:.4} from {accs:?}"))?;
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!("mean label accuracy {mean:.4} (before: 0.90), {secs:.1}s"))
}

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn p8() -> Check {
    let started = Instant::now();
    let emb = HashedNgramEmbedder::default();
    let diversity = |suppression: bool, t: f64| -> Vec<f64> {
        (0..5)
            .map(|seed| {
                let ds = generate(400, seed, suppression, t);
                let v = divgen::embedding::Embedder::embed(&emb, &ds.texts()).unwrap();
                remote_clique_diversity(&v, Distance::Cosine).unwrap()
            })
            .collect()
    };
    let (plain, sup) = (mean_se(&diversity(false, 1.0)), mean_se(&diversity(true, 1.0)));
    let (cold, hot) = (mean_se(&diversity(false, 0.3)), mean_se(&diversity(false, 1.3)));
    let secs = started.elapsed().as_secs_f64();
    let summary = format!(
        "suppression {:.4}±{:.4} vs none {:.4}±{:.4}; T=1.3 {:.4}±{:.4} vs T=0.3 {:.4}±{:.4}; {secs:.1}s",
        sup.0, sup.1, plain.0, plain.1, hot.0, hot.1, cold.0, cold.1
    );
    ensure(sup.0 - sup.1 > plain.0 + plain.1, || summary.clone())?;
    ensure(hot.0 - hot.1 > cold.0 + cold.1, || summary.clone())?;
    ensure(secs < 120.0, || summary.clone())?;
    Ok(summary)
}

fn p9() -> Check {
    let oracle = demo_task();
    let emb = HashedNgramEmbedder::default();
    let labels = oracle.labels().to_vec();
    let mut without = Vec::new();
    let mut with = Vec::new();
    for seed in 0..5u64 {
        let mut ds = generate(400, 900 + seed, false, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_noisy = (0.15 * ds.len() as f64).round() as usize;
        for i in index::sample(&mut rng, ds.len(), n_noisy) {
            let inst = &mut ds.instances[i];
            let k = labels.iter().position(|l| *l == inst.specified_label).unwrap();
            let wrong = labels[(k + rng.random_range(1..labels.len())) % labels.len()].clone();
            inst.specified_label = wrong.clone();
            inst.current_label = wrong;
        }
        let test: Vec<LabeledText> = demo_test_set(50, 5000 + seed)
            .into_iter()
            .map(|(t, l)| LabeledText::new(t, l))
            .collect();
        let cfg = StudentConfig::default();
        let before = train_student(&ds, &emb, &cfg).map_err(|e| e.to_string())?;
        without.push(evaluate_student(&before, &emb, &test).map_err(|e| e.to_string())?);
        let (fixed, _) = replace_labels(&ds, LrMode::OracleAll, &oracle, &emb, &ReplaceOptions::default())
            .map_err(|e| e.to_string())?;
        let after = train_student(&fixed, &emb, &cfg).map_err(|e| e.to_string())?;
        with.push(evaluate_student(&after, &emb, &test).map_err(|e| e.to_string())?);
    }
    let (a, b) = (mean_se(&without).0, mean_se(&with).0);
    let summary = format!("student accuracy {a:.4} without LR, {b:.4} after oracle LR");
    ensure(b >= a, || summary.clone())?;
    Ok(summary)
}

fn divgen(dir: &Path, args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_divgen"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("divgen {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p10() -> Check {
    let run = |dir: &Path| -> Result<Vec<(String, Vec<u8>)>, String> {
        divgen(dir, &["init-demo", "--dir", "demo", "--target", "200"])?;
        divgen(dir, &["generate", "--task", "demo/task.toml", "--seed", "11", "--logit-suppression", "--temperature", "1.3", "--out", "gen.jsonl", "--report", "gen.report.json"])?;
        divgen(dir, &["curate", "lr", "--dataset", "gen.jsonl", "--mode", "proxy", "--n", "90", "--seed", "5", "--task", "demo/task.toml", "--out", "lr.jsonl", "--report", "lr.report.json"])?;
        divgen(dir, &["curate", "lr", "--dataset", "gen.jsonl", "--mode", "oracle", "--task", "demo/task.toml", "--out", "oracle.jsonl", "--report", "oracle.report.json"])?;
        divgen(dir, &["metrics", "--dataset", "lr.jsonl", "--task", "demo/task.toml", "--report", "metrics.json"])?;
        ["gen.jsonl", "gen.requests.jsonl", "gen.report.json", "lr.jsonl", "lr.report.json", "oracle.jsonl", "oracle.report.json", "metrics.json"]
            .iter()
            .map(|f| fs::read(dir.join(f)).map(|b| (f.to_string(), b)).map_err(|e| format!("{f}: {e}")))
            .collect()
    };
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (ra, rb) = (run(a.path())?, run(b.path())?);
    for ((name, x), (_, y)) in ra.iter().zip(&rb) {
        ensure(x == y, || format!("{name} differs between runs"))?;
    }
    let oracle: Value = serde_json::from_slice(&ra[6].1).map_err(|e| e.to_string())?;
    ensure(oracle["label_accuracy_after"] == json!(1.0), || "oracle LR report accuracy".into())?;
    Ok(format!("{} files byte-identical across two runs", ra.len()))
}

struct Server {
    child: Child,
    addr: String,
}

fn start_server(data: &Path) -> Result<Server, String> {
    let mut child = Command::new(env!("CARGO_BIN_EXE_divgen"))
        .args(["serve", "--port", "0", "--snapshot-every", "4", "--data-dir"])
        .arg(data)
        .env_remove("DIVGEN_API_TOKEN")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let v: Value = serde_json::from_str(&line).map_err(|e| format!("serve said {line:?}: {e}"))?;
    let addr = v["listening"].as_str().ok_or("no address")?.trim_start_matches("http://").to_string();
    Ok(Server { child, addr })
}

fn http(addr: &str, method: &str, path: &str, body: Option<&Value>) -> Result<(u16, String), String> {
    let mut stream = TcpStream::connect(addr).map_err(|e| e.to_string())?;
    stream.set_read_timeout(Some(Duration::from_secs(30))).ok();
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    let req = format!(
        "{method} {path} HTTP/1.1\r\nHost: {addr}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
        payload.len()
    );
    stream.write_all(req.as_bytes()).map_err(|e| e.to_string())?;
    let mut raw = String::new();
    stream.read_to_string(&mut raw).map_err(|e| e.to_string())?;
    let (head, body) = raw.split_once("\r\n\r\n").ok_or("malformed response")?;
    let status = head
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or("no status")?;
    Ok((status, body.to_string()))
}

fn exports(addr: &str) -> Result<(String, String), String> {
    let raw = http(addr, "GET", "/tasks/emotion-demo/export?variant=raw", None)?;
    let oosf = http(addr, "GET", "/tasks/emotion-demo/export?variant=oosf", None)?;
    ensure(raw.0 == 200 && oosf.0 == 200, || "export failed".into())?;
    Ok((raw.1, oosf.1))
}

fn p11() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let task_dir = data.join("emotion-demo");
    fs::create_dir_all(&task_dir).map_err(|e| e.to_string())?;
    generate(60, 3, true, 1.0)
        .write(&task_dir.join("dataset.jsonl"))
        .map_err(|e| e.to_string())?;

    let mut server = start_server(&data)?;
    let (_, queue) = http(&server.addr, "GET", "/tasks/emotion-demo/queue?n=10", None)?;
    let queue: Value = serde_json::from_str(&queue).map_err(|e| e.to_string())?;
    let labels = ["joy", "anger", "fear", "sadness"];
    for (k, item) in queue["items"].as_array().ok_or("no queue")?.iter().enumerate() {
        let body = match k % 3 {
            0 => json!({"instance_id": item["id"], "action": "relabel", "payload": labels[k % 4]}),
            1 => json!({"instance_id": item["id"], "action": "mark_oos", "payload": true}),
            _ => json!({"instance_id": item["id"], "action": "confirm"}),
        };
        let (status, _) = http(&server.addr, "POST", "/tasks/emotion-demo/annotations", Some(&body))?;
        ensure(status == 201, || format!("annotation {k} got {status}"))?;
    }
    let before = exports(&server.addr)?;
    server.child.kill().map_err(|e| e.to_string())?; // SIGKILL
    server.child.wait().ok();

    let mut restarted = start_server(&data)?;
    let after = exports(&restarted.addr)?;
    restarted.child.kill().ok();
    restarted.child.wait().ok();
    ensure(before == after, || "exports differ after kill and restart".into())?;
    ensure(before.1.lines().count() + 3 == before.0.lines().count(), || "three instances should be filtered".into())?;

    // a write cut off mid-line by the crash is discarded on replay
    let log = task_dir.join("events.jsonl");
    let mut f = fs::OpenOptions::new().append(true).open(&log).map_err(|e| e.to_string())?;
    f.write_all(br#"{"event_id":11,"timestamp":"2026"#).map_err(|e| e.to_string())?;
    drop(f);
    let mut third = start_server(&data)?;
    let torn = exports(&third.addr)?;
    third.child.kill().ok();
    third.child.wait().ok();
    ensure(torn == before, || "torn tail changed the export".into())?;
    Ok("10 events; raw and oosf exports identical after SIGKILL restart and after a torn write".into())
}

type Criterion = (&'static str, fn() -> Check);

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 13] = [
        ("P1", p1),
        ("P2a", p2a),
        ("P2b", p2b),
        ("P3a", p3a),
        ("P3b", p3b),
        ("P4", p4),
        ("P5", p5),
        ("P6", p6),
        ("P7", p7),
        ("P8", p8),
        ("P9", p9),
        ("P10", p10),
        ("P11", p11),
    ];
    let strict = std::env::var("DIVGEN_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let mut unexpected = 0;
    for (id, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| id.starts_with(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("{id:<4} PASS  {detail}"),
            Err(detail) => match KNOWN_FAILURES.iter().find(|(k, _)| *k == id) {
                Some((_, why)) => {
                    println!("{id:<4} FAIL  {detail} [known: {why}]");
                    if strict {
                        unexpected += 1;
                    }
                }
                None => {
                    println!("{id:<4} FAIL  {detail}");
                    unexpected += 1;
                }
            },
        }
    }
    if unexpected > 0 {
        std::process::exit(1);
    }
}
