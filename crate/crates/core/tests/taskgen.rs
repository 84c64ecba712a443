use std::collections::HashSet;
use std::fs;
use std::path::Path;

use cldetect::taskgen::{
    group_tasks, load_directory, make_task, mix_seed, parse_pgm, preset_sequence, similarity, synth_fake, synth_real,
    synth_stream, write_directory, Family, GeneratorSpec, GroupMode, Manifest, Patch, PresetKind, Sample, SplitSizes,
    TaskDataset, Tone, PATCH_SIDE,
};
use cldetect::Error;
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

const N: usize = PATCH_SIDE;

fn single_tone(u: i32, v: i32, amplitude: f64) -> GeneratorSpec {
    GeneratorSpec {
        name: format!("tone-{u}-{v}"),
        family: Family::GanLike,
        fingerprint: vec![Tone { u, v, amplitude }],
        noise_level: 0.0,
        seed: 9,
        capture: vec![],
    }
}

fn small() -> SplitSizes {
    SplitSizes {
        train: 31,
        val: 8,
        test: 9,
    }
}

/// |DFT| at one frequency, summed directly.
fn dft_mag(p: &Patch, u: usize, v: usize) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for r in 0..N {
        for c in 0..N {
            let arg = -std::f64::consts::TAU * ((u * r + v * c) as f64 / N as f64);
            re += p.at(r, c) * arg.cos();
            im += p.at(r, c) * arg.sin();
        }
    }
    re.hypot(im)
}

fn fingerprint_set(samples: &[Sample]) -> HashSet<Vec<u64>> {
    samples
        .iter()
        .map(|s| s.patch.pixels().iter().map(|v| v.to_bits()).collect())
        .collect()
}

#[test]
fn make_task_is_deterministic_and_sized() {
    let (gens, _) = preset_sequence(PresetKind::LongLike);
    for g in &gens {
        let a = make_task(g, small(), 5).unwrap();
        assert_eq!(a, make_task(g, small(), 5).unwrap());
        for (split, want) in [(&a.train, 31), (&a.val, 8), (&a.test, 9)] {
            assert_eq!(split.len(), want);
            let fakes = split.iter().filter(|s| s.label == 1).count() as i64;
            assert!((2 * fakes - want as i64).abs() <= 1, "{}: {fakes} fakes of {want}", g.name);
        }
    }
}

#[test]
fn different_seeds_give_disjoint_tasks() {
    let g = &preset_sequence(PresetKind::EasyLike).0[0];
    let a = make_task(g, small(), 1).unwrap();
    let b = make_task(g, small(), 2).unwrap();
    let all = |t: &TaskDataset| {
        let mut s = fingerprint_set(&t.train);
        s.extend(fingerprint_set(&t.val));
        s.extend(fingerprint_set(&t.test));
        s
    };
    let (sa, sb) = (all(&a), all(&b));
    assert_eq!(sa.len(), 48, "splits of one task overlap");
    assert!(sa.is_disjoint(&sb));
}

#[test]
fn fingerprint_tone_dominates_the_spectrum() {
    // Weakest tone used by the catalogs.
    for (u, v) in [(9, 14), (3, 9), (16, 10)] {
        let g = single_tone(u, v, 0.06);
        let fakes = synth_fake(&g, 1000, 3).unwrap();
        let reals = synth_real(1000, 4).unwrap();
        let mean = |ps: &[Patch]| ps.iter().map(|p| dft_mag(p, u as usize, v as usize)).sum::<f64>() / ps.len() as f64;
        let (f, r) = (mean(&fakes), mean(&reals));
        assert!(f >= 5.0 * r, "tone ({u},{v}): fake {f:.3} vs real {r:.3}");
    }
}

#[test]
fn real_patches_center_on_half() {
    let reals = synth_real(10_000, 21).unwrap();
    let mean = reals.iter().flat_map(|p| p.pixels()).sum::<f64>() / (10_000 * N * N) as f64;
    assert!((0.45..=0.55).contains(&mean), "mean pixel {mean}");
    assert!(reals.iter().flat_map(|p| p.pixels()).all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn zero_fingerprint_reproduces_reals_bitwise() {
    let mut g = single_tone(4, 4, 0.0);
    g.fingerprint.push(Tone { u: 1, v: 2, amplitude: 0.0 });
    assert_eq!(synth_fake(&g, 20, 77).unwrap(), synth_real(20, 77).unwrap());
}

#[test]
fn task_without_capture_reuses_the_base_generators() {
    let g = single_tone(5, 6, 0.1);
    let seed = 13;
    let stream = synth_stream(&g, 10, seed).unwrap();
    let mut reals: Vec<&Patch> = stream.iter().filter(|s| s.label == 0).map(|s| &s.patch).collect();
    let mut fakes: Vec<&Patch> = stream.iter().filter(|s| s.label == 1).map(|s| &s.patch).collect();
    let want_r = synth_real(5, mix_seed(seed, 0)).unwrap();
    let want_f = synth_fake(&g, 5, mix_seed(seed, 1)).unwrap();
    let key = |p: &&Patch| p.pixels()[0].to_bits();
    reals.sort_by_key(key);
    fakes.sort_by_key(key);
    let mut wr: Vec<&Patch> = want_r.iter().collect();
    let mut wf: Vec<&Patch> = want_f.iter().collect();
    wr.sort_by_key(key);
    wf.sort_by_key(key);
    assert_eq!(reals, wr);
    assert_eq!(fakes, wf);
}

/// Logistic regression on standardized half-spectrum magnitudes.
fn probe_accuracy(train: &[Sample], test: &[Sample]) -> f64 {
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(N);
    let feats = |p: &Patch| -> Vec<f64> {
        let mut g: Vec<Complex<f64>> = p.pixels().iter().map(|&v| Complex::new(v, 0.0)).collect();
        for row in g.chunks_mut(N) {
            fft.process(row);
        }
        let mut col = vec![Complex::new(0.0, 0.0); N];
        for c in 0..N {
            for r in 0..N {
                col[r] = g[r * N + c];
            }
            fft.process(&mut col);
            for r in 0..N {
                g[r * N + c] = col[r];
            }
        }
        (0..N)
            .flat_map(|u| (0..=N / 2).map(move |v| (u, v)))
            .map(|(u, v)| g[u * N + v].norm())
            .collect()
    };
    let xtr: Vec<Vec<f64>> = train.iter().map(|s| feats(&s.patch)).collect();
    let xte: Vec<Vec<f64>> = test.iter().map(|s| feats(&s.patch)).collect();
    let d = xtr[0].len();
    let mu: Vec<f64> = (0..d).map(|j| xtr.iter().map(|x| x[j]).sum::<f64>() / xtr.len() as f64).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (xtr.iter().map(|x| (x[j] - mu[j]).powi(2)).sum::<f64>() / xtr.len() as f64).sqrt().max(1e-9))
        .collect();
    let z = |x: &[f64]| -> Vec<f64> { (0..d).map(|j| (x[j] - mu[j]) / sd[j]).collect() };
    let ztr: Vec<Vec<f64>> = xtr.iter().map(|x| z(x)).collect();
    let mut w = vec![0.0; d + 1];
    for _ in 0..200 {
        let mut g = vec![0.0; d + 1];
        for (x, s) in ztr.iter().zip(train) {
            let m: f64 = w[d] + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-m).exp()) - s.label as f64;
            for j in 0..d {
                g[j] += err * x[j];
            }
            g[d] += err;
        }
        for j in 0..=d {
            w[j] -= 0.5 * g[j] / ztr.len() as f64 + 1e-3 * w[j];
        }
    }
    let hits = xte
        .iter()
        .zip(test)
        .filter(|(x, s)| {
            let m: f64 = w[d] + z(x).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            u8::from(m > 0.0) == s.label
        })
        .count();
    hits as f64 / test.len() as f64
}

#[test]
fn presets_are_linearly_separable_in_frequency() {
    let (gens, _) = preset_sequence(PresetKind::LongLike);
    for g in gens.iter().filter(|g| g.max_amplitude() >= 0.1) {
        let t = make_task(g, SplitSizes { train: 1200, val: 2, test: 400 }, 31).unwrap();
        let acc = probe_accuracy(&t.train, &t.test);
        assert!(acc >= 0.95, "{}: probe accuracy {acc}", g.name);
    }
}

#[test]
fn presets_have_the_expected_shape() {
    let (easy, seq) = preset_sequence(PresetKind::EasyLike);
    assert_eq!(easy.len(), 7);
    assert_eq!(seq.names.len(), 7);
    let (long, _) = preset_sequence(PresetKind::LongLike);
    assert_eq!(long.len(), 12);
    let count = |f: Family| long.iter().filter(|g| g.family == f).count();
    assert_eq!((count(Family::GanLike), count(Family::CgLike), count(Family::UnknownLike)), (5, 5, 2));
    let seeds: HashSet<u64> = long.iter().map(|g| g.seed).collect();
    assert_eq!(seeds.len(), 12);
    for g in &long {
        g.validate().unwrap();
    }
}

#[test]
fn similarity_separates_families() {
    let (gens, _) = preset_sequence(PresetKind::LongLike);
    let mut within: f64 = 0.0;
    let mut cross = f64::INFINITY;
    for a in &gens {
        for b in &gens {
            if a.name == b.name {
                continue;
            }
            let d = similarity(a, b);
            if a.family == b.family {
                within = within.max(d);
            } else {
                cross = cross.min(d);
            }
        }
    }
    assert!(within < cross, "max within-family {within} vs min cross-family {cross}");
}

fn arb_generator() -> impl Strategy<Value = GeneratorSpec> {
    prop::collection::vec((-31i32..32, 0i32..17, 0.0..0.3f64), 0..4).prop_map(|tones| GeneratorSpec {
        name: "g".into(),
        family: Family::UnknownLike,
        fingerprint: tones.into_iter().map(|(u, v, amplitude)| Tone { u, v, amplitude }).collect(),
        noise_level: 0.0,
        seed: 0,
        capture: vec![],
    })
}

proptest! {
    #[test]
    fn similarity_is_a_pseudometric(a in arb_generator(), b in arb_generator(), c in arb_generator()) {
        prop_assert_eq!(similarity(&a, &a), 0.0);
        prop_assert!(similarity(&a, &b) >= 0.0);
        prop_assert_eq!(similarity(&a, &b), similarity(&b, &a));
        prop_assert!(similarity(&a, &c) <= similarity(&a, &b) + similarity(&b, &c) + 1e-12);
    }

    #[test]
    fn grouping_partitions_the_tasks(n in 1usize..15, size in 1usize..6, greedy in any::<bool>()) {
        let (long, _) = preset_sequence(PresetKind::LongLike);
        let specs: Vec<GeneratorSpec> = long.into_iter().cycle().take(n).collect();
        let mode = if greedy { GroupMode::Greedy } else { GroupMode::PaperOrder };
        let groups = group_tasks(&specs, size, mode).unwrap();
        prop_assert_eq!(groups.len(), n.div_ceil(size));
        let mut all: Vec<usize> = groups.iter().flatten().copied().collect();
        all.sort();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(groups.iter().all(|g| !g.is_empty() && g.len() <= size));
    }

    #[test]
    fn stream_balance_is_within_one(count in 1usize..60, seed in any::<u64>()) {
        let s = synth_stream(&single_tone(2, 3, 0.1), count, seed).unwrap();
        prop_assert_eq!(s.len(), count);
        let fakes = s.iter().filter(|x| x.label == 1).count() as i64;
        prop_assert!((2 * fakes - count as i64).abs() <= 1);
    }
}

#[test]
fn grouping_long_sequence() {
    let (long, _) = preset_sequence(PresetKind::LongLike);
    for mode in [GroupMode::PaperOrder, GroupMode::Greedy] {
        let g = group_tasks(&long, 3, mode).unwrap();
        assert_eq!(g.len(), 4);
        assert!(g.iter().all(|x| x.len() == 3));
        assert_eq!(group_tasks(&long, 12, mode).unwrap().len(), 1);
        let mut one = group_tasks(&long, 50, mode).unwrap();
        assert_eq!(one.len(), 1);
        one[0].sort();
        assert_eq!(one[0], (0..12).collect::<Vec<_>>());
    }
    assert!(group_tasks(&long, 0, GroupMode::Greedy).is_err());
    assert!(group_tasks(&[], 3, GroupMode::Greedy).is_err());

    let groups = group_tasks(&long, 3, GroupMode::Greedy).unwrap();
    let (mut w, mut wn, mut c, mut cn) = (0.0, 0, 0.0, 0);
    for (gi, g) in groups.iter().enumerate() {
        for (hi, h) in groups.iter().enumerate() {
            for &a in g {
                for &b in h {
                    if a == b {
                        continue;
                    }
                    let d = similarity(&long[a], &long[b]);
                    if gi == hi {
                        w += d;
                        wn += 1;
                    } else {
                        c += d;
                        cn += 1;
                    }
                }
            }
        }
    }
    assert!(w / wn as f64 <= c / cn as f64);
}

#[test]
fn invalid_generators_are_rejected() {
    assert!(matches!(synth_fake(&single_tone(40, 1, 0.1), 1, 0), Err(Error::Config(_))));
    let mut g = single_tone(1, 1, 0.1);
    g.noise_level = -1.0;
    assert!(synth_fake(&g, 1, 0).is_err());
    assert!(synth_real(0, 0).is_err());
    assert!(make_task(&single_tone(1, 1, 0.1), SplitSizes { train: 1, val: 2, test: 2 }, 0).is_err());
}

#[test]
fn manifest_round_trips_and_materializes() {
    let m = Manifest::from_preset(PresetKind::EasyLike, small());
    let back = Manifest::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(back, m);
    let tasks = back.materialize(3).unwrap();
    assert_eq!(tasks.len(), 7);
    assert_eq!(tasks, m.materialize(3).unwrap());
    assert_ne!(tasks[0].train, m.materialize(4).unwrap()[0].train);
    assert!(matches!(m.generator("nope"), Err(Error::Config(_))));
}

#[test]
fn directory_round_trip_quantizes_to_8_bits() {
    let dir = tempfile::tempdir().unwrap();
    let task = make_task(&single_tone(3, 3, 0.1), small(), 8).unwrap();
    let path = write_directory(&task, dir.path()).unwrap();
    let back = load_directory(&path).unwrap();
    assert_eq!(back.name, task.name);
    assert_eq!(back.train.len(), task.train.len());
    let sort = |v: &[Sample]| {
        let mut v: Vec<(u8, Vec<f64>)> = v.iter().map(|s| (s.label, s.patch.pixels().to_vec())).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    };
    let q = |v: &[Sample]| -> Vec<Sample> {
        v.iter()
            .map(|s| Sample {
                label: s.label,
                patch: Patch::from_pixels(s.patch.pixels().iter().map(|p| (p * 255.0).round() / 255.0).collect())
                    .unwrap(),
            })
            .collect()
    };
    let (a, b) = (sort(&q(&task.test)), sort(&back.test));
    assert_eq!(a.len(), b.len());
    for ((la, pa), (lb, pb)) in a.iter().zip(&b) {
        assert_eq!(la, lb);
        for (x, y) in pa.iter().zip(pb) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

fn write(path: &Path, bytes: &[u8]) {
    fs::create_dir_all(path.parent().unwrap()).unwrap();
    fs::write(path, bytes).unwrap();
}

fn pgm(w: usize, h: usize) -> Vec<u8> {
    let mut b = format!("P5\n{w} {h}\n255\n").into_bytes();
    b.extend(std::iter::repeat_n(128u8, w * h));
    b
}

fn valid_layout(root: &Path) {
    for split in ["train", "val", "test"] {
        for class in ["real", "fake"] {
            write(&root.join(split).join(class).join("a.pgm"), &pgm(64, 48));
        }
    }
}

#[test]
fn ingestion_accepts_larger_images() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("ext");
    valid_layout(&root);
    let t = load_directory(&root).unwrap();
    assert_eq!(t.name, "ext");
    assert_eq!((t.train.len(), t.val.len(), t.test.len()), (2, 2, 2));
    assert!(t.train[0].patch.pixels().iter().all(|p| (p - 128.0 / 255.0).abs() < 1e-12));
}

#[test]
fn ingestion_errors_name_the_file() {
    let cases: Vec<(&str, Box<dyn Fn(&Path)>)> = vec![
        ("bad magic", Box::new(|r: &Path| write(&r.join("train/real/a.pgm"), b"P2\n32 32\n255\n0"))),
        ("truncated", Box::new(|r: &Path| write(&r.join("train/real/a.pgm"), &pgm(32, 32)[..100]))),
        ("too small", Box::new(|r: &Path| write(&r.join("train/real/a.pgm"), &pgm(16, 40)))),
        ("wrong format", Box::new(|r: &Path| write(&r.join("val/fake/b.png"), b"\x89PNG"))),
        ("empty class", Box::new(|r: &Path| {
            fs::remove_file(r.join("test/fake/a.pgm")).unwrap();
        })),
        ("missing split", Box::new(|r: &Path| fs::remove_dir_all(r.join("val")).unwrap())),
    ];
    for (what, corrupt) in cases {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("ext");
        valid_layout(&root);
        corrupt(&root);
        match load_directory(&root) {
            Err(Error::Ingestion { path, .. }) => assert!(path.starts_with(&root), "{what}: {path:?}"),
            other => panic!("{what}: expected an ingestion error, got {other:?}"),
        }
    }
    assert!(parse_pgm(b"P5\n2 2\n0\n\0\0\0\0", Path::new("x")).is_err());
}
