use std::collections::BTreeSet;
use std::path::Path;

use kbc_core::dataset::{self, Prepared, Summary};
use kbc_core::paths::SamplerConfig;
use kbc_core::synth::{generate, SynthConfig};

fn write_fixture(dir: &Path) {
    let kb = generate(&SynthConfig {
        entities: 50,
        triples_per_base: 60,
        ..Default::default()
    })
    .unwrap();
    kb.write_triples(&dir.join("triples.tsv")).unwrap();
    // Ignored: wrong extension.
    std::fs::write(dir.join("notes.md"), "not triples").unwrap();
}

fn sampler() -> SamplerConfig {
    SamplerConfig {
        max_paths_per_pair: 5,
        ..Default::default()
    }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn prepare_splits_every_pair_once_in_eight_one_one() {
    let data = tempfile::tempdir().unwrap();
    write_fixture(data.path());
    let graph = dataset::load_graph_dir(data.path()).unwrap();
    let labelled = graph.labeled_pairs().len();
    let (prep, dropped) = dataset::prepare(graph, &sampler(), None, 4).unwrap();
    let s = &prep.split;
    let n = s.len();
    let entity_pairs: BTreeSet<_> = s.iter().map(|(_, p)| (p.head, p.tail)).collect();
    assert_eq!(entity_pairs.len() + dropped, labelled);
    assert!(n >= entity_pairs.len());
    assert_eq!(s.train.len(), n * 8 / 10);
    assert_eq!(s.valid.len(), n / 10);
    assert_eq!(s.test.len(), n - n * 8 / 10 - n / 10);

    let ids: BTreeSet<u32> = s.iter().map(|(_, p)| p.id.0).collect();
    assert_eq!(ids, (0..n as u32).collect());
    for (_, p) in s.iter() {
        let set = &prep.path_sets[p.path_set];
        assert_eq!((set.head, set.tail), (p.head, p.tail));
        assert!(!set.is_empty());
        assert!(prep.graph.contains(p.head, p.label, p.tail));
    }
}

#[test]
fn prepared_cache_is_reproducible_and_round_trips() {
    let data = tempfile::tempdir().unwrap();
    write_fixture(data.path());
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let sa = dataset::prepare_dir(data.path(), a.path(), &sampler(), &[], 9).unwrap();
    let sb = dataset::prepare_dir(data.path(), b.path(), &sampler(), &[], 9).unwrap();
    assert_eq!(sa, sb);
    assert_eq!(files(a.path()), files(b.path()));

    let loaded = Prepared::load(a.path()).unwrap();
    let graph = dataset::load_graph_dir(data.path()).unwrap();
    let (fresh, dropped) = dataset::prepare(graph, &sampler(), None, 9).unwrap();
    assert_eq!(loaded.split, fresh.split);
    assert_eq!(loaded.graph.triples(), fresh.graph.triples());
    let hops = |p: &Prepared| -> Vec<_> { p.path_sets.iter().map(|s| (s.head, s.tail, s.paths.clone())).collect() };
    assert_eq!(hops(&loaded), hops(&fresh));
    let summary: Summary =
        serde_json::from_slice(&std::fs::read(a.path().join(dataset::SUMMARY_FILE)).unwrap()).unwrap();
    assert_eq!(summary, fresh.summary(dropped));
}

#[test]
fn different_seed_changes_the_split_only() {
    let data = tempfile::tempdir().unwrap();
    write_fixture(data.path());
    let load = |seed| {
        let g = dataset::load_graph_dir(data.path()).unwrap();
        dataset::prepare(g, &sampler(), None, seed).unwrap().0
    };
    let (x, y) = (load(1), load(2));
    assert_ne!(x.split.test, y.split.test);
    assert_eq!(x.path_sets, y.path_sets);
}

#[test]
fn missing_directory_error_names_the_path() {
    let err = dataset::load_graph_dir(Path::new("/nonexistent/kb")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/kb"), "{err}");
    let empty = tempfile::tempdir().unwrap();
    assert!(dataset::load_graph_dir(empty.path()).is_err());
}

#[test]
fn unknown_target_relation_is_rejected() {
    let data = tempfile::tempdir().unwrap();
    write_fixture(data.path());
    let cache = tempfile::tempdir().unwrap();
    let err = dataset::prepare_dir(data.path(), cache.path(), &sampler(), &["nope".into()], 0).unwrap_err();
    assert!(err.to_string().contains("nope"));
}
