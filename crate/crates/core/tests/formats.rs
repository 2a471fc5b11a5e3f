mod common;

use proptest::prelude::*;
use ridgemrf::experiments::{lattice_theta, top_k_edges, EdgeSet};
use ridgemrf::io::{
    export_network, load_theta, read_dataset, render_network, save_theta, write_dataset,
    NetworkFormat,
};
use ridgemrf::model::{ParamMatrix, VariateFamily};
use ridgemrf::sampler::{gibbs_chain, ChainConfig};

use common::*;
use VariateFamily::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn theta_file_round_trip_is_bitwise(seed in any::<u64>(), p in 1usize..=8, scale in 1e-6f64..1e3) {
        let mut r = rng(seed);
        let fams = mixed_families(&mut r, p);
        let theta = feasible_theta(&mut r, &fams, scale);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("theta.json");
        save_theta(&theta, &path).unwrap();
        let back = load_theta(&path).unwrap();
        prop_assert_eq!(back.families(), theta.families());
        prop_assert_eq!(back.names(), theta.names());
        for a in 0..p {
            for b in 0..p {
                prop_assert_eq!(back.get(a, b).to_bits(), theta.get(a, b).to_bits());
            }
        }
    }

    #[test]
    fn written_dataset_reads_back_identically(seed in any::<u64>(), p in 1usize..=6, n in 1usize..40) {
        let mut r = rng(seed);
        let fams = mixed_families(&mut r, p);
        let data = random_dataset(&mut r, &fams, n);
        let mut buf = Vec::new();
        write_dataset(&data, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice()).unwrap();
        prop_assert_eq!(back.families(), data.families());
        prop_assert_eq!(back.names(), data.names());
        prop_assert_eq!(back.values(), data.values());
    }
}

#[test]
fn sampled_lattice_dataset_round_trips() {
    let (theta, _) = lattice_theta();
    let cfg = ChainConfig {
        burn_in: 100,
        thinning: 5,
        ..ChainConfig::new(200, 7)
    };
    let data = gibbs_chain(&theta, &cfg).unwrap();
    let mut buf = Vec::new();
    write_dataset(&data, &mut buf).unwrap();
    let back = read_dataset(buf.as_slice()).unwrap();
    assert_eq!(back.values(), data.values());
    assert_eq!(back.names(), data.names());
}

fn edges_in_json(text: &str) -> EdgeSet {
    let doc: serde_json::Value = serde_json::from_str(text).unwrap();
    serde_json::from_value(doc["edges"].clone()).unwrap()
}

#[test]
fn exported_edges_equal_top_k() {
    let (theta, _) = lattice_theta();
    let mut r = rng(11);
    let noisy = feasible_theta(&mut r, theta.families(), 0.4);
    for k in [0, 1, 10, 36, 60] {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let written = export_network(&noisy, k, NetworkFormat::Json, &path).unwrap();
        let expected = top_k_edges(&noisy, k).unwrap();
        assert_eq!(written, expected);
        assert_eq!(edges_in_json(&std::fs::read_to_string(&path).unwrap()), expected);
    }
}

#[test]
fn single_edge_export() {
    let mut theta = ParamMatrix::zeros(vec![Bernoulli, Gaussian]);
    theta.set(0, 1, 0.5).unwrap();
    let edges = top_k_edges(&theta, 1).unwrap();
    let json = render_network(&theta, &edges, NetworkFormat::Json).unwrap();
    let parsed = edges_in_json(&json);
    assert_eq!(parsed.len(), 1);
    assert_eq!(parsed.edges[0].weight, 0.5);
    let graphml = render_network(&theta, &edges, NetworkFormat::GraphMl).unwrap();
    assert_eq!(graphml.matches("<edge ").count(), 1);
    assert!(graphml.contains("<data key=\"weight\">0.5</data>"));
    let dot = render_network(&theta, &edges, NetworkFormat::Dot).unwrap();
    assert_eq!(dot.matches(" -- ").count(), 1);
    assert!(dot.contains("V1 (bernoulli)") && dot.contains("V2 (gaussian)"));
}

#[test]
fn export_rejects_too_many_edges() {
    let theta = ParamMatrix::zeros(vec![Bernoulli; 3]);
    let dir = tempfile::tempdir().unwrap();
    assert!(export_network(&theta, 4, NetworkFormat::Dot, dir.path().join("x.dot")).is_err());
}
