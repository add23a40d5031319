#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use scnp_core::datagen::GenParams;
use scnp_core::dataset::{Manifest, SampleEntry};
use scnp_core::metrics::BinaryMask;
use scnp_core::model::{ConvLayer, TinyCnn, HIDDEN};
use scnp_core::tns;
use scnp_core::train::{save_checkpoint, TrainConfig};

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the `scnp` binary, optionally pinning `SCNP_THREADS`.
pub fn scnp(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_scnp"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("SCNP_THREADS", n.to_string()),
        None => cmd.env_remove("SCNP_THREADS"),
    };
    let out = cmd.output().expect("scnp runs");
    Output {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
    }
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Every file under `dir`, keyed by relative path.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Fails with the list of files that are missing or differ.
pub fn assert_same(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) {
    let differing: Vec<_> = a
        .keys()
        .chain(b.keys())
        .filter(|k| a.get(*k) != b.get(*k))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    assert!(differing.is_empty(), "files differ: {differing:?}");
}

/// Rows of a headed CSV file as column → value maps.
pub fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    lines
        .map(|l| header.iter().cloned().zip(l.split(',').map(String::from)).collect())
        .collect()
}

pub fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap_or_else(|_| panic!("{key} = {:?}", row[key]))
}

/// Writes a two-class dataset whose images are `images` scaled to 0/1 and
/// whose labels are `masks`.
pub fn write_mask_dataset(dir: &Path, images: &[BinaryMask], masks: &[BinaryMask]) {
    let (h, w) = (masks[0].height(), masks[0].width());
    let mut samples = Vec::new();
    for (i, (img, mask)) in images.iter().zip(masks).enumerate() {
        let id = format!("{i:05}");
        let entry = SampleEntry {
            image: format!("images/{id}.tns"),
            mask: format!("masks/{id}.tns"),
            id,
            components: None,
        };
        std::fs::create_dir_all(dir.join("images")).unwrap();
        std::fs::create_dir_all(dir.join("masks")).unwrap();
        tns::write(&dir.join(&entry.image), &[1, 1, h, w], &img.to_plane()).unwrap();
        tns::write(&dir.join(&entry.mask), &[1, 1, h, w], &mask.to_plane()).unwrap();
        samples.push(entry);
    }
    Manifest {
        kind: "fixture".into(),
        params: GenParams::tubular(images.len(), h.max(w), 1.0, 0),
        seed: 0,
        classes: 2,
        height: h,
        width: w,
        samples,
    }
    .write(dir)
    .unwrap();
}

/// A checkpoint whose foreground logit margin is `10·x - 5` for input `x`,
/// so a 0/1 image is predicted as itself.
pub fn write_identity_checkpoint(dir: &Path) {
    let mut l1 = ConvLayer::zeros(HIDDEN, 1, 3);
    l1.kernel.set(0, 0, 1, 1, 1.0);
    let mut l2 = ConvLayer::zeros(HIDDEN, HIDDEN, 3);
    l2.kernel.set(0, 0, 1, 1, 1.0);
    let mut l3 = ConvLayer::zeros(2, HIDDEN, 1);
    l3.kernel.set(1, 0, 0, 0, 10.0);
    l3.bias[1] = -5.0;
    let model = TinyCnn::from_layers([l1, l2, l3]).unwrap();
    save_checkpoint(dir, &model, &TrainConfig::default()).unwrap();
}
