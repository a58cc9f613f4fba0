//! Versioned binary container for datasets and checkpoints.
//!
//! Layout: magic `LCMD`, format version (u32 LE), JSON header length
//! (u32 LE), JSON header, little-endian f64 blocks, CRC32 footer over all
//! preceding bytes. The header lists every block with its own CRC32.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::build::DatasetSpec;
use super::DatasetError;
use crate::diffnum::Tensor;
use crate::scm::{InterventionTarget, PairTruth, WeakPair};

pub const MAGIC: &[u8; 4] = b"LCMD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BlockInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub crc32: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub blocks: Vec<BlockInfo>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

fn block_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * 8);
    for &v in t.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Serialize a container to bytes.
pub fn encode_container(
    mut header: ContainerHeader,
    blocks: &[(String, Tensor)],
) -> Result<Vec<u8>, DatasetError> {
    header.blocks = blocks
        .iter()
        .map(|(name, t)| {
            let (rows, cols) = match t.shape() {
                [r, c] => (*r, *c),
                other => {
                    return Err(DatasetError::Invalid(format!(
                        "block '{name}' must be rank 2, got {other:?}"
                    )))
                }
            };
            Ok(BlockInfo { name: name.clone(), rows, cols, crc32: crc32fast::hash(&block_bytes(t)) })
        })
        .collect::<Result<_, _>>()?;
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| DatasetError::Invalid(format!("header serialization: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, t) in blocks {
        out.extend_from_slice(&block_bytes(t));
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Parse a container from bytes.
pub fn decode_container(bytes: &[u8]) -> Result<(ContainerHeader, Vec<(String, Tensor)>), DatasetError> {
    if bytes.len() < 12 {
        return Err(DatasetError::Truncated);
    }
    if &bytes[0..4] != MAGIC {
        return Err(DatasetError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(DatasetError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end + 4 {
        return Err(DatasetError::Truncated);
    }
    let footer_crc = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[..bytes.len() - 4]) != footer_crc {
        // Distinguish a short file from corruption when possible: recompute
        // on the expected length below after parsing the header.
        let header: ContainerHeader = serde_json::from_slice(&bytes[12..header_end])
            .map_err(|_| DatasetError::Truncated)?;
        let payload: usize = header.blocks.iter().map(|b| b.rows * b.cols * 8).sum();
        let expected_total = header_end + payload + 4;
        if bytes.len() < expected_total {
            return Err(DatasetError::Truncated);
        }
        return Err(DatasetError::Checksum);
    }
    let header: ContainerHeader = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| DatasetError::Invalid(format!("header parse: {e}")))?;
    let payload: usize = header.blocks.iter().map(|b| b.rows * b.cols * 8).sum();
    if bytes.len() != header_end + payload + 4 {
        return Err(DatasetError::Truncated);
    }

    let mut offset = header_end;
    let mut blocks = Vec::with_capacity(header.blocks.len());
    for info in &header.blocks {
        let nbytes = info.rows * info.cols * 8;
        let raw = &bytes[offset..offset + nbytes];
        if crc32fast::hash(raw) != info.crc32 {
            return Err(DatasetError::Checksum);
        }
        let data: Vec<f64> =
            raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        blocks.push((
            info.name.clone(),
            Tensor::new(vec![info.rows, info.cols], data)
                .map_err(|e| DatasetError::Invalid(e.to_string()))?,
        ));
        offset += nbytes;
    }
    Ok((header, blocks))
}

pub fn write_container(
    path: &Path,
    header: ContainerHeader,
    blocks: &[(String, Tensor)],
) -> Result<(), DatasetError> {
    let bytes = encode_container(header, blocks)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_container(path: &Path) -> Result<(ContainerHeader, Vec<(String, Tensor)>), DatasetError> {
    let bytes = fs::read(path)?;
    decode_container(&bytes)
}

fn pairs_to_blocks(pairs: &[WeakPair]) -> Result<Vec<(String, Tensor)>, DatasetError> {
    let m = pairs.len();
    let (data_dim, n_vars) = match pairs.first() {
        Some(p) => {
            let truth = p
                .truth
                .as_ref()
                .ok_or_else(|| DatasetError::Invalid("pairs must carry ground truth".into()))?;
            (p.x.len(), truth.z.len())
        }
        None => (0, 0),
    };
    let mut x = Vec::with_capacity(m * data_dim);
    let mut x_post = Vec::with_capacity(m * data_dim);
    let mut z = Vec::with_capacity(m * n_vars);
    let mut z_post = Vec::with_capacity(m * n_vars);
    let mut noise = Vec::with_capacity(m * n_vars);
    let mut noise_post = Vec::with_capacity(m * n_vars);
    let mut target = Vec::with_capacity(m);
    for p in pairs {
        let truth = p
            .truth
            .as_ref()
            .ok_or_else(|| DatasetError::Invalid("pairs must carry ground truth".into()))?;
        x.extend_from_slice(&p.x);
        x_post.extend_from_slice(&p.x_post);
        z.extend_from_slice(&truth.z);
        z_post.extend_from_slice(&truth.z_post);
        noise.extend_from_slice(&truth.noise);
        noise_post.extend_from_slice(&truth.noise_post);
        target.push(match truth.target.as_atomic() {
            None => -1.0,
            Some(i) => i as f64,
        });
    }
    let t = |shape: Vec<usize>, data: Vec<f64>| Tensor::new(shape, data).unwrap();
    Ok(vec![
        ("x".into(), t(vec![m, data_dim], x)),
        ("x_post".into(), t(vec![m, data_dim], x_post)),
        ("z".into(), t(vec![m, n_vars], z)),
        ("z_post".into(), t(vec![m, n_vars], z_post)),
        ("noise".into(), t(vec![m, n_vars], noise)),
        ("noise_post".into(), t(vec![m, n_vars], noise_post)),
        ("target".into(), t(vec![m, 1], target)),
    ])
}

fn blocks_to_pairs(blocks: &[(String, Tensor)]) -> Result<Vec<WeakPair>, DatasetError> {
    let get = |name: &str| -> Result<&Tensor, DatasetError> {
        blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| DatasetError::Invalid(format!("missing block '{name}'")))
    };
    let x = get("x")?;
    let x_post = get("x_post")?;
    let z = get("z")?;
    let z_post = get("z_post")?;
    let noise = get("noise")?;
    let noise_post = get("noise_post")?;
    let target = get("target")?;
    let m = x.rows();
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        let tgt = target.at2(i, 0);
        let target = if tgt < 0.0 {
            InterventionTarget::empty()
        } else {
            InterventionTarget::single(tgt as usize)
        };
        out.push(WeakPair {
            x: x.row(i).to_vec(),
            x_post: x_post.row(i).to_vec(),
            truth: Some(PairTruth {
                z: z.row(i).to_vec(),
                z_post: z_post.row(i).to_vec(),
                noise: noise.row(i).to_vec(),
                noise_post: noise_post.row(i).to_vec(),
                target,
            }),
        });
    }
    Ok(out)
}

/// Write one split of weakly supervised pairs.
pub fn write_dataset(
    path: &Path,
    pairs: &[WeakPair],
    spec: &DatasetSpec,
    config_hash: Option<&str>,
) -> Result<(), DatasetError> {
    let blocks = pairs_to_blocks(pairs)?;
    let header = ContainerHeader {
        kind: "dataset".into(),
        spec: Some(spec.clone()),
        config_hash: config_hash.map(str::to_string),
        blocks: vec![],
        meta: serde_json::json!({ "pairs": pairs.len() }),
    };
    write_container(path, header, &blocks)
}

/// Read one split back; the returned header carries spec and config hash.
pub fn read_dataset(path: &Path) -> Result<(Vec<WeakPair>, DatasetSpec, ContainerHeader), DatasetError> {
    let (header, blocks) = read_container(path)?;
    if header.kind != "dataset" {
        return Err(DatasetError::Invalid(format!("container kind '{}'", header.kind)));
    }
    let spec = header
        .spec
        .clone()
        .ok_or_else(|| DatasetError::Invalid("dataset header missing spec".into()))?;
    let pairs = blocks_to_pairs(&blocks)?;
    Ok((pairs, spec, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::build::{build_toy2d, Family};
    use crate::scm::{sample_weak_pairs, IdentityDecoder, InterventionPrior};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> DatasetSpec {
        DatasetSpec { family: Family::Toy2d, n_train: 10, n_val: 10, n_test: 10, seed: 0 }
    }

    fn some_pairs(count: usize) -> Vec<WeakPair> {
        let (scm, _) = build_toy2d(0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        sample_weak_pairs(&scm, &IdentityDecoder(2), count, &InterventionPrior::uniform(2), &mut rng)
            .unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.lcmd");
        let pairs = some_pairs(1000);
        write_dataset(&path, &pairs, &spec(), Some("abc123")).unwrap();
        let (back, back_spec, header) = read_dataset(&path).unwrap();
        assert_eq!(back, pairs);
        assert_eq!(back_spec, spec());
        assert_eq!(header.config_hash.as_deref(), Some("abc123"));
    }

    #[test]
    fn empty_dataset_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.lcmd");
        write_dataset(&path, &[], &spec(), None).unwrap();
        let (back, _, header) = read_dataset(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(header.kind, "dataset");
    }

    #[test]
    fn truncated_file_is_detected() {
        let pairs = some_pairs(50);
        let header = ContainerHeader {
            kind: "dataset".into(),
            spec: Some(spec()),
            config_hash: None,
            blocks: vec![],
            meta: serde_json::Value::Null,
        };
        let bytes = encode_container(header, &pairs_to_blocks(&pairs).unwrap()).unwrap();
        for cut in [bytes.len() - 5, bytes.len() / 2, 10, 3] {
            let err = decode_container(&bytes[..cut]).unwrap_err();
            assert!(matches!(err, DatasetError::Truncated), "cut {cut}: {err:?}");
        }
    }

    #[test]
    fn corruption_is_a_checksum_error() {
        let pairs = some_pairs(50);
        let header = ContainerHeader {
            kind: "dataset".into(),
            spec: Some(spec()),
            config_hash: None,
            blocks: vec![],
            meta: serde_json::Value::Null,
        };
        let mut bytes = encode_container(header, &pairs_to_blocks(&pairs).unwrap()).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        assert!(matches!(decode_container(&bytes).unwrap_err(), DatasetError::Checksum));
    }

    #[test]
    fn wrong_magic_and_version_are_distinct_errors() {
        let pairs = some_pairs(5);
        let header = ContainerHeader {
            kind: "dataset".into(),
            spec: Some(spec()),
            config_hash: None,
            blocks: vec![],
            meta: serde_json::Value::Null,
        };
        let bytes = encode_container(header, &pairs_to_blocks(&pairs).unwrap()).unwrap();
        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_container(&bad_magic).unwrap_err(), DatasetError::BadMagic));
        let mut bad_version = bytes;
        bad_version[4] = 99;
        assert!(matches!(
            decode_container(&bad_version).unwrap_err(),
            DatasetError::VersionMismatch { found: 99, .. }
        ));
    }
}
