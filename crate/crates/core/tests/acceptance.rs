//! Acceptance suite. Each criterion prints one PASS or FAIL line; the
//! process exits non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::io::Cursor;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use image::{ImageFormat, RgbImage};
use ndarray::{concatenate, Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use portrait_core::allocator::{allocate, plan_allocation, Slot};
use portrait_core::dedup::{group, group_with, hamming, phash, PHash64, PairSearch};
use portrait_core::embedding::EmbeddingMatrix;
use portrait_core::evaluate::retrieval_metrics;
use portrait_core::losses::{
    br_loss, euclid_cos_gap, run_loss_check, total_loss_uncertainty, FeatureBatch, LossKind, UncertaintyParams,
    GRADIENT_TOLERANCE,
};
use portrait_core::metrics::{lts, macro_retrieval, piq, rank_gallery, IdQueries, LabelHistogram, PiqInputs};
use portrait_core::sampler::{random_epoch, BatchSampler, BatchSpec, SamplerConfig, Strategy};
use portrait_core::schema::{SampleAnnotation, Subset, TaskSchema};
use portrait_core::synth::{gen_embeddings, oracle_lts, oracle_map, CountProfile, LabeledRows, SynthSpec};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

// ---------------------------------------------------------------------------
// 1. PIQ against reference scores

/// mAP, Rank-1, gender, age, physique, height, body, arm, expression, PIQ.
const TABLE: [(&str, [f64; 10]); 9] = [
    ("Single-Task", [0.424, 0.603, 0.885, 0.717, 0.287, 0.615, 0.527, 0.634, 0.202, 0.480]),
    ("Sim-MTL", [0.314, 0.509, 0.847, 0.722, 0.472, 0.708, 0.624, 0.596, 0.183, 0.473]),
    ("FSS", [0.367, 0.541, 0.831, 0.718, 0.471, 0.692, 0.618, 0.598, 0.176, 0.479]),
    ("FSS+Triplet", [0.342, 0.525, 0.852, 0.688, 0.430, 0.680, 0.581, 0.559, 0.164, 0.457]),
    ("FSS+BR", [0.359, 0.538, 0.837, 0.740, 0.478, 0.699, 0.617, 0.600, 0.174, 0.480]),
    ("FSS+BR+Uncer.", [0.351, 0.536, 0.823, 0.685, 0.444, 0.650, 0.561, 0.530, 0.340, 0.495]),
    ("PK", [0.310, 0.514, 0.861, 0.474, 0.279, 0.525, 0.448, 0.412, 0.181, 0.389]),
    ("shuffle", [0.248, 0.448, 0.832, 0.678, 0.424, 0.635, 0.568, 0.545, 0.152, 0.425]),
    ("R50", [0.265, 0.447, 0.811, 0.715, 0.472, 0.700, 0.600, 0.584, 0.189, 0.453]),
];

fn piq_table() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for (name, r) in TABLE {
        let inputs = PiqInputs {
            macro_map: r[0],
            macro_rank1: r[1],
            appearance: [r[2], r[3], r[4], r[5]],
            posture: [r[6], r[7]],
            expression: r[8],
        };
        let value = piq(&inputs).map_err(|e| format!("{name}: {e}"))?;
        let err = (value - r[9]).abs();
        ensure(err <= 0.001, || format!("{name}: computed {value:.4}, expected {:.3}", r[9]))?;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(1), || format!("took {elapsed:?}"))?;
    Ok(format!("9 rows, max |error| {worst:.4}, {elapsed:?}"))
}

// ---------------------------------------------------------------------------
// 2. Euclidean distance versus cosine on the unit sphere

fn euclid_cosine() -> Outcome {
    let mut worst: f64 = 0.0;
    for (i, d) in [2usize, 16, 256].into_iter().enumerate() {
        let mut r = rng(200 + i as u64);
        for _ in 0..10_000 {
            let a = unit_vector(&mut r, d);
            let b = unit_vector(&mut r, d);
            let gap = euclid_cos_gap(a.view(), b.view()).map_err(|e| e.to_string())?;
            ensure(gap < 1e-9, || format!("d={d}: gap {gap:e}"))?;
            worst = worst.max(gap);
        }
    }
    Ok(format!("3 × 10000 pairs, max gap {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// 3. Batch-ranking loss

/// Direct evaluation of the batch-ranking loss from cosine similarities.
fn br_direct(f: &Array2<f64>, labels: &[Option<u64>]) -> f64 {
    let n = f.nrows();
    let cos = |i: usize, j: usize| {
        let (a, b) = (f.row(i), f.row(j));
        a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt())
    };
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i == j || labels[i].is_none() || labels[i] != labels[j] {
                continue;
            }
            let denom: f64 = (0..n).filter(|&c| c != i).map(|c| cos(i, c).exp()).sum();
            total -= (cos(i, j).exp() / denom).ln();
        }
    }
    total / n as f64
}

fn br_correctness() -> Outcome {
    let start = Instant::now();
    let zero_cases = [
        FeatureBatch::new(ndarray::array![[0.3, -2.0, 1.0], [5.0, 0.1, -0.4]], vec![Some(1), Some(1)]),
        FeatureBatch::new(ndarray::array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], vec![Some(1), Some(2), None]),
    ];
    for (i, batch) in zero_cases.into_iter().enumerate() {
        let r = br_loss(&batch.map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        ensure(r.value == 0.0 && r.grad_features.iter().all(|g| *g == 0.0), || {
            format!("zero case {i}: value {}", r.value)
        })?;
    }

    let f = ndarray::array![[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
    let labels = vec![Some(0), Some(0), Some(1)];
    let value = br_loss(&FeatureBatch::new(f.clone(), labels.clone()).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?
        .value;
    let direct = br_direct(&f, &labels);
    ensure((value - direct).abs() <= 1e-5 && (value - 0.20884).abs() <= 1e-5, || {
        format!("worked example {value} versus direct {direct}")
    })?;

    let mut r = rng(300);
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let n = r.random_range(2..=16);
        let d = r.random_range(2..=32);
        let err = run_loss_check(LossKind::Br, n, d, seed, 1e-5).map_err(|e| e.to_string())?;
        ensure(err < GRADIENT_TOLERANCE, || format!("batch {seed} (N={n}, d={d}): relative error {err:e}"))?;
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(10), || format!("took {elapsed:?}"))?;
    Ok(format!("zero cases exact, example {value:.5}, 50 batches max rel error {worst:.2e}, {elapsed:?}"))
}

// ---------------------------------------------------------------------------
// 4. LTS

fn lts_oracle() -> Outcome {
    const KS: [(u64, f64); 4] = [(1, 0.1), (2, 0.2), (5, 0.5), (9, 0.9)];
    let mut r = rng(400);
    for case in 0..500 {
        let n = r.random_range(1..=15);
        let mut counts: Vec<u64> = (0..n).map(|_| r.random_range(0..=50)).collect();
        if counts.iter().all(|&c| c == 0) {
            counts[0] = 1;
        }
        let k = KS[case % KS.len()].1;
        let hist = LabelHistogram::new(counts.clone());
        let fast = lts(&hist, k).map_err(|e| e.to_string())?;
        let slow = oracle_lts(&hist, k).map_err(|e| e.to_string())?;
        ensure(fast == slow, || format!("{counts:?} at k={k}: {fast} versus oracle {slow}"))?;
    }
    for n in 1..=30u64 {
        for (tenths, k) in KS {
            let classes = (tenths * n).div_ceil(10);
            let expected = classes as f64 / (k * n as f64);
            let value = lts(&LabelHistogram::new(vec![7; n as usize]), k).map_err(|e| e.to_string())?;
            ensure(value == expected, || format!("uniform N={n}, k={k}: {value} versus {expected}"))?;
        }
    }
    Ok("500 histograms match the exhaustive oracle; uniform closed form exact for N ≤ 30".into())
}

// ---------------------------------------------------------------------------
// 5. Macro retrieval

/// Small integer coordinates, so that similarity ties are common.
fn coarse(r: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |_| r.random_range(-2i32..=2) as f64)
}

fn macro_oracle() -> Outcome {
    let mut r = rng(500);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let ids = r.random_range(1..=5usize);
        let g = r.random_range(ids..=20);
        let dim = 3;
        let gallery = coarse(&mut r, g, dim);
        let query_count = r.random_range(1..=6);
        let query = coarse(&mut r, query_count, dim);
        let mut gallery_pids: Vec<Option<String>> = (0..g)
            .map(|i| if i < ids { Some(format!("id{i}")) } else if r.random_bool(0.2) { None } else { Some(format!("id{}", r.random_range(0..ids))) })
            .collect();
        gallery_pids.rotate_left(r.random_range(0..g));
        let query_pids: Vec<Option<String>> = (0..query_count).map(|_| Some(format!("id{}", r.random_range(0..ids)))).collect();
        let gallery_ids: Vec<String> = (0..g).map(|i| format!("g{i}")).collect();
        let query_ids: Vec<String> = (0..query_count).map(|i| format!("q{i}")).collect();

        let mut by_id: BTreeMap<String, Vec<_>> = BTreeMap::new();
        for q in 0..query_count {
            let ranked = rank_gallery(&query_ids[q], query.row(q), gallery.view(), &BTreeSet::new()).map_err(|e| e.to_string())?;
            by_id.entry(query_pids[q].clone().unwrap()).or_default().push(ranked);
        }
        let entries: Vec<IdQueries> = by_id.into_iter().map(|(person_id, results)| IdQueries { person_id, results }).collect();
        let fast = macro_retrieval(&entries, &gallery_pids).map_err(|e| format!("case {case}: {e}"))?;
        let slow = oracle_map(
            LabeledRows { image_ids: &query_ids, person_ids: &query_pids, rows: query.view() },
            LabeledRows { image_ids: &gallery_ids, person_ids: &gallery_pids, rows: gallery.view() },
            None,
        )
        .ok_or_else(|| format!("case {case}: oracle found nothing to score"))?;
        let err = (fast.macro_map - slow).abs();
        ensure(err <= 1e-12, || format!("case {case}: {} versus oracle {slow}", fast.macro_map))?;
        worst = worst.max(err);
    }

    let spec = SynthSpec { sigma_within: 0.0, seed: 5, queries_per_id: 2, ..SynthSpec::default() };
    let data = gen_embeddings(&spec, &TaskSchema::default_schema()).map_err(|e| e.to_string())?;
    let (q, g) = query_gallery(&data.embeddings, &data.split);
    let perfect = retrieval_metrics(&data.annotations, &q, &g, None).map_err(|e| e.to_string())?;
    ensure(perfect.macro_map == 1.0 && perfect.macro_rank1 == 1.0, || {
        format!("perfect clusters gave mAP {} rank-1 {}", perfect.macro_map, perfect.macro_rank1)
    })?;
    Ok(format!("100 instances, max |error| {worst:.1e}; perfect clusters score 1.0"))
}

fn query_gallery(
    embeddings: &EmbeddingMatrix,
    split: &portrait_core::schema::DatasetSplit,
) -> (EmbeddingMatrix, EmbeddingMatrix) {
    (
        embeddings.select(|id| split.subset_of(id) == Some(Subset::Query)),
        embeddings.select(|id| split.subset_of(id) == Some(Subset::Gallery)),
    )
}

// ---------------------------------------------------------------------------
// 6. Group exclusion

fn noise_image(seed: u64) -> RgbImage {
    let mut r = rng(seed);
    RgbImage::from_fn(48, 48, |_, _| image::Rgb([r.random(), r.random(), r.random()]))
}

/// A retrieval instance in which every query's ranking is isolated from the
/// others. Identity `i` lives on axis `i` and its query leans towards a
/// private axis `M + i`, where an unidentified confuser outranks the
/// relevant gallery items. Cross-identity similarities are all zero.
struct IsolatedInstance {
    annotations: Vec<SampleAnnotation>,
    query: EmbeddingMatrix,
    gallery: EmbeddingMatrix,
    images: BTreeMap<String, u64>,
}

fn isolated_instance(ids: usize, per_id: usize, seed: u64) -> IsolatedInstance {
    let dim = 2 * ids;
    let mut r = rng(seed);
    let mut annotations = Vec::new();
    let (mut q_ids, mut q_rows, mut g_ids, mut g_rows) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let axis = |a: usize, b: usize, wa: f64, wb: f64| {
        let mut v = Array1::zeros(dim);
        v[a] += wa;
        v[b] += wb;
        v
    };
    for i in 0..ids {
        let person = format!("p{i:02}");
        let mut push = |id: String, pid: Option<&str>| {
            annotations.push(SampleAnnotation { image_id: id, person_id: pid.map(str::to_string), labels: Vec::new() });
        };
        let qid = format!("{person}_q");
        push(qid.clone(), Some(&person));
        q_ids.push(qid);
        q_rows.push(axis(i, ids + i, 1.0, 0.8));
        for s in 0..per_id {
            let gid = format!("{person}_g{s}");
            push(gid.clone(), Some(&person));
            g_ids.push(gid);
            g_rows.push(axis(i, i, 1.0, r.random_range(0.0..0.05)));
        }
        let cid = format!("u{i:02}");
        push(cid.clone(), None);
        g_ids.push(cid);
        g_rows.push(axis(i, ids + i, 0.9 + r.random_range(0.0..0.05), 1.0));
    }
    let stack = |rows: &[Array1<f64>]| Array2::from_shape_fn((rows.len(), dim), |(i, j)| rows[i][j]);
    let images = q_ids.iter().chain(&g_ids).enumerate().map(|(n, id)| (id.clone(), seed * 1000 + n as u64)).collect();
    IsolatedInstance {
        annotations,
        query: EmbeddingMatrix::new(q_ids, stack(&q_rows)).expect("query rows"),
        gallery: EmbeddingMatrix::new(g_ids, stack(&g_rows)).expect("gallery rows"),
        images,
    }
}

fn group_exclusion() -> Outcome {
    let mut inst = isolated_instance(8, 4, 60);
    let baseline = retrieval_metrics(&inst.annotations, &inst.query, &inst.gallery, None).map_err(|e| e.to_string())?;

    // every query frame reappears verbatim in the gallery
    let dup_ids: Vec<String> = inst.query.ids.iter().map(|id| format!("{id}_copy")).collect();
    for (qid, did) in inst.query.ids.iter().zip(&dup_ids) {
        let original = inst.annotations.iter().find(|a| &a.image_id == qid).expect("query annotated").clone();
        inst.annotations.push(SampleAnnotation { image_id: did.clone(), ..original });
        inst.images.insert(did.clone(), inst.images[qid]);
    }
    let planted = EmbeddingMatrix::new(
        inst.gallery.ids.iter().chain(&dup_ids).cloned().collect(),
        concatenate(Axis(0), &[inst.gallery.rows.view(), inst.query.rows.view()]).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;

    let mut hashes = Vec::new();
    for (id, &image_seed) in &inst.images {
        hashes.push(PHash64::new(id.clone(), phash(&noise_image(image_seed)).map_err(|e| e.to_string())?));
    }
    let groups = group(&hashes, 10).map_err(|e| e.to_string())?;
    for (qid, did) in inst.query.ids.iter().zip(&dup_ids) {
        ensure(groups.group_of(qid) == groups.group_of(did), || format!("{qid} and its copy were not grouped"))?;
    }
    ensure(groups.num_groups() == hashes.len() - dup_ids.len(), || "unrelated frames were grouped".into())?;

    let with_groups =
        retrieval_metrics(&inst.annotations, &inst.query, &planted, Some(&groups)).map_err(|e| e.to_string())?;
    let without = retrieval_metrics(&inst.annotations, &inst.query, &planted, None).map_err(|e| e.to_string())?;
    ensure((with_groups.macro_map - baseline.macro_map).abs() <= 1e-12, || {
        format!("with groups {} versus duplicate-free {}", with_groups.macro_map, baseline.macro_map)
    })?;
    ensure(without.macro_map > baseline.macro_map, || {
        format!("without groups {} not above duplicate-free {}", without.macro_map, baseline.macro_map)
    })?;
    Ok(format!(
        "duplicate-free {:.6}, with groups {:.6}, without groups {:.6}",
        baseline.macro_map, with_groups.macro_map, without.macro_map
    ))
}

// ---------------------------------------------------------------------------
// 7. Dedup

fn components(hashes: &[u64], t: u32) -> Vec<usize> {
    let mut comp = vec![usize::MAX; hashes.len()];
    let mut next = 0;
    for s in 0..hashes.len() {
        if comp[s] != usize::MAX {
            continue;
        }
        comp[s] = next;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for v in 0..hashes.len() {
                if comp[v] == usize::MAX && (hashes[u] ^ hashes[v]).count_ones() <= t {
                    comp[v] = next;
                    queue.push_back(v);
                }
            }
        }
        next += 1;
    }
    comp
}

fn dedup_correctness() -> Outcome {
    let mut r = rng(700);
    for _ in 0..10_000 {
        let (a, b, c): (u64, u64, u64) = (r.random(), r.random(), r.random());
        let d = hamming(a, b);
        ensure(hamming(a, a) == 0 && d == hamming(b, a) && (d == 0) == (a == b), || format!("{a:x} {b:x}"))?;
        ensure(d <= hamming(a, c) + hamming(c, b), || format!("triangle {a:x} {b:x} {c:x}"))?;
    }

    // clustered hashes so that every threshold links something
    let centres: Vec<u64> = (0..20).map(|_| r.random()).collect();
    let bits: Vec<u64> = (0..200)
        .map(|_| {
            let mut h = centres[r.random_range(0..centres.len())];
            for _ in 0..r.random_range(0..8) {
                h ^= 1 << r.random_range(0..64);
            }
            h
        })
        .collect();
    let hashes: Vec<PHash64> = bits.iter().enumerate().map(|(i, &b)| PHash64::new(format!("h{i:03}"), b)).collect();
    for t in [0, 5, 10] {
        let truth = components(&bits, t);
        for search in [PairSearch::Pairwise, PairSearch::Banded] {
            let found = group_with(&hashes, t, search).map_err(|e| e.to_string())?;
            for i in 0..bits.len() {
                for j in i + 1..bits.len() {
                    let same = found.group_of(&hashes[i].image_id) == found.group_of(&hashes[j].image_id);
                    ensure(same == (truth[i] == truth[j]), || format!("t={t} {search:?}: h{i} h{j}"))?;
                }
            }
        }
    }

    for seed in 0..10 {
        let img = noise_image(7000 + seed);
        let mut png = Vec::new();
        img.write_to(&mut Cursor::new(&mut png), ImageFormat::Png).map_err(|e| e.to_string())?;
        let decoded = image::load_from_memory_with_format(&png, ImageFormat::Png).map_err(|e| e.to_string())?.to_rgb8();
        let (a, b) = (phash(&img).map_err(|e| e.to_string())?, phash(&decoded).map_err(|e| e.to_string())?);
        ensure(a == b, || format!("image {seed}: {a:016x} became {b:016x} after re-encode"))?;
    }
    Ok("metric axioms on 10000 triples; grouping matches BFS for t ∈ {0, 5, 10}; PNG round trip stable".into())
}

// ---------------------------------------------------------------------------
// 8. Allocator

fn allocator() -> Outcome {
    let plan = plan_allocation(16, &TaskSchema::default_schema(), None, None).map_err(|e| e.to_string())?;
    ensure(plan.widths() == [1, 2, 2, 1, 1, 2, 2, 2, 3], || format!("D=16 gave {:?}", plan.widths()))?;

    let mut r = rng(800);
    let mut floor_fired = 0;
    for case in 0..1000 {
        let d = r.random_range(9..=512usize);
        let w: [u64; 9] = std::array::from_fn(|_| r.random_range(1..=60));
        let alloc = allocate(d, w).map_err(|e| e.to_string())?;
        let mut next = 0;
        for slot in Slot::ALL {
            let range = alloc.range(slot);
            ensure(range.start == next && !range.is_empty(), || format!("case {case}: {slot:?} at {range:?}"))?;
            next = range.end;
        }
        ensure(next == d, || format!("case {case}: covers {next} of {d}"))?;
        let w_sum: u64 = w.iter().sum();
        let quotas: Vec<f64> = w.iter().map(|&x| d as f64 * x as f64 / w_sum as f64).collect();
        if quotas.iter().all(|&q| q >= 1.0) {
            for (n, q) in alloc.widths().iter().zip(&quotas) {
                ensure((*n as f64 - q).abs() < 1.0, || format!("case {case}: width {n} for quota {q}"))?;
            }
        } else {
            floor_fired += 1;
        }
        ensure(allocate(d, w).map_err(|e| e.to_string())? == alloc, || format!("case {case}: not deterministic"))?;
    }
    Ok(format!("D=16 example exact; 1000 instances ({floor_fired} with floor correction)"))
}

// ---------------------------------------------------------------------------
// 9. Samplers

fn samplers() -> Outcome {
    let spec = SynthSpec {
        num_ids: 40,
        counts: CountProfile::LongTail { head: 30, exponent: 1.2 },
        num_unidentified: 60,
        seed: 9,
        ..SynthSpec::default()
    };
    let data = gen_embeddings(&spec, &TaskSchema::default_schema()).map_err(|e| e.to_string())?;
    let anns = &data.annotations;
    let (p, k) = (4, 4);
    let cfg = |strategy, seed| SamplerConfig { strategy, batch_size: 24, p, k, seed };

    let mut sampler = BatchSampler::new(anns, cfg(Strategy::Pk, 1)).map_err(|e| e.to_string())?;
    let mut batches = 0;
    for epoch in 0..100 {
        for batch in sampler.next_epoch() {
            let mut per_id: BTreeMap<&str, usize> = BTreeMap::new();
            for &i in &batch.indices {
                let pid = anns[i].person_id.as_deref().ok_or_else(|| format!("epoch {epoch}: unidentified sample in PK batch"))?;
                *per_id.entry(pid).or_default() += 1;
            }
            ensure(per_id.len() == p && per_id.values().all(|&c| c == k), || format!("epoch {epoch}: composition {per_id:?}"))?;
            batches += 1;
        }
    }

    let n = anns.len();
    for seed in 0..20 {
        let mut all: Vec<usize> = random_epoch(n, &cfg(Strategy::Random, seed))
            .map_err(|e| e.to_string())?
            .into_iter()
            .flat_map(|b| b.indices)
            .collect();
        all.sort_unstable();
        ensure(all == (0..n).collect::<Vec<_>>(), || format!("seed {seed}: random epoch is not a permutation"))?;
    }

    let stream = |strategy, seed| -> Result<Vec<u8>, String> {
        let mut s = BatchSampler::new(anns, cfg(strategy, seed)).map_err(|e| e.to_string())?;
        let epochs: Vec<Vec<BatchSpec>> = (0..20).map(|_| s.next_epoch()).collect();
        serde_json::to_vec(&epochs).map_err(|e| e.to_string())
    };
    for strategy in [Strategy::Random, Strategy::Pk, Strategy::ShuffleMix] {
        ensure(stream(strategy, 3)? == stream(strategy, 3)?, || format!("{strategy:?}: streams differ for one seed"))?;
        ensure(stream(strategy, 3)? != stream(strategy, 4)?, || format!("{strategy:?}: seed has no effect"))?;
    }
    Ok(format!("{batches} PK batches over 100 epochs; permutation and byte-identical streams hold"))
}

// ---------------------------------------------------------------------------
// 10. Uncertainty weighting

fn uncertainty() -> Outcome {
    let mut r = rng(1000);
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let tasks = r.random_range(1..=7);
        let losses: Vec<f64> = (0..tasks).map(|_| r.random_range(0.01..10.0)).collect();

        let at_zero = total_loss_uncertainty(&losses, &UncertaintyParams::zeros(tasks)).map_err(|e| e.to_string())?;
        let sum: f64 = losses.iter().sum();
        ensure(at_zero.value == sum, || format!("case {case}: {} versus Σ {sum}", at_zero.value))?;

        let s: Vec<f64> = (0..tasks).map(|_| r.random_range(-2.0..2.0)).collect();
        let result = total_loss_uncertainty(&losses, &UncertaintyParams::new(s.clone())).map_err(|e| e.to_string())?;
        let grad = result.grad_aux.ok_or("no s-gradient")?;
        let eps = 1e-6;
        for i in 0..tasks {
            let value_at = |delta: f64| -> Result<f64, String> {
                let mut shifted = s.clone();
                shifted[i] += delta;
                Ok(total_loss_uncertainty(&losses, &UncertaintyParams::new(shifted)).map_err(|e| e.to_string())?.value)
            };
            let numeric = (value_at(eps)? - value_at(-eps)?) / (2.0 * eps);
            let err = (numeric - grad[i]).abs();
            ensure(err <= 1e-6, || format!("case {case}, s[{i}]: analytic {} numeric {numeric}", grad[i]))?;
            worst = worst.max(err);
        }

        let optimum: Vec<f64> = losses.iter().map(|l| l.ln()).collect();
        let at_opt = total_loss_uncertainty(&losses, &UncertaintyParams::new(optimum.clone())).map_err(|e| e.to_string())?;
        let stationary = at_opt.grad_aux.ok_or("no s-gradient")?;
        ensure(stationary.iter().all(|g| g.abs() <= 1e-12), || format!("case {case}: gradient {stationary} at s = ln L"))?;
        for i in 0..tasks {
            for delta in [-1e-3, 1e-3] {
                let mut moved = optimum.clone();
                moved[i] += delta;
                let v = total_loss_uncertainty(&losses, &UncertaintyParams::new(moved)).map_err(|e| e.to_string())?.value;
                ensure(v > at_opt.value, || format!("case {case}: s = ln L is not a minimum along s[{i}]"))?;
            }
        }
    }
    Ok(format!("200 cases; s = 0 exact, max s-gradient error {worst:.1e}, stationary at s = ln L"))
}

// ---------------------------------------------------------------------------

fn main() {
    let criteria: [Criterion; 10] = [
        ("PIQ reproduces reference scores", piq_table),
        ("Euclidean distance is a function of cosine", euclid_cosine),
        ("batch-ranking loss value and gradient", br_correctness),
        ("LTS matches the exhaustive oracle", lts_oracle),
        ("macro retrieval matches the oracle", macro_oracle),
        ("group exclusion removes duplicate inflation", group_exclusion),
        ("perceptual-hash grouping", dedup_correctness),
        ("feature-space allocation", allocator),
        ("batch samplers", samplers),
        ("uncertainty weighting", uncertainty),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|payload| {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
