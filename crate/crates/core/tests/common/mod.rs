#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use nalgebra::DVector;
use onebit_doa::geometry::C64;
use onebit_doa::net::NetArchitecture;
use onebit_doa::sim::{rng_from_seed, OneBitSnapshot};
use onebit_doa::weights::{Tensor, WeightBundle};
use rand::Rng;
use rand_distr::StandardNormal;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

pub fn oracles() -> serde_json::Value {
    let text = std::fs::read_to_string(data_path("oracles.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn complex_list(v: &serde_json::Value) -> Vec<C64> {
    v.as_array()
        .unwrap()
        .iter()
        .map(|p| C64::new(p[0].as_f64().unwrap(), p[1].as_f64().unwrap()))
        .collect()
}

/// Snapshots stored as `sample_id,y0_re,y0_im,...`.
pub fn net_inputs() -> Vec<OneBitSnapshot> {
    let text = std::fs::read_to_string(data_path("net_inputs.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let v: Vec<f64> = line.split(',').skip(1).map(|s| s.parse().unwrap()).collect();
            let y = DVector::from_fn(v.len() / 2, |n, _| C64::new(v[2 * n], v[2 * n + 1]));
            OneBitSnapshot::new(y, None).unwrap()
        })
        .collect()
}

/// Bundle with Gaussian weights, positive slopes and variances.
pub fn random_bundle(arch: NetArchitecture, seed: u64, scale: f32) -> WeightBundle {
    let mut rng = rng_from_seed(seed);
    let tensors: BTreeMap<String, Tensor> = arch
        .tensor_specs()
        .into_iter()
        .map(|(name, dims)| {
            let n: usize = dims.iter().product();
            let data = (0..n)
                .map(|_| {
                    let g: f32 = rng.sample(StandardNormal);
                    if name.ends_with("running_var") {
                        0.1 + g.abs()
                    } else {
                        scale * g
                    }
                })
                .collect();
            (name, Tensor::new(dims, data).unwrap())
        })
        .collect();
    WeightBundle::from_tensors(arch, tensors).unwrap()
}

pub fn random_onebit(n: usize, seed: u64) -> OneBitSnapshot {
    let mut rng = rng_from_seed(seed);
    let mut sign = || if rng.random::<bool>() { 1.0 } else { -1.0 };
    let y = DVector::from_fn(n, |_, _| C64::new(sign(), sign()));
    OneBitSnapshot::new(y, None).unwrap()
}
