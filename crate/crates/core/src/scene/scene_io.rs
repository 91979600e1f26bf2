//! Binary scene file.
//!
//! Layout (all little-endian):
//!
//! | offset | size | field                      |
//! |--------|------|----------------------------|
//! | 0      | 8    | magic `RSPLATGS`           |
//! | 8      | 4    | version (u32, currently 1) |
//! | 12     | 8    | gaussian count N (u64)     |
//! | 20     | 4    | SH degree D (u32)          |
//! | 24     | 4    | embedding size E (u32)     |
//! | 28     | ...  | N records of f64           |
//!
//! Each record holds position (3), quaternion `w,x,y,z` (4), log-scale (3),
//! opacity mean (1), opacity std pre-activation (1), SH coefficients
//! `3 (D+1)^2` and the embedding (E).

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::sh::MAX_SH_DEGREE;
use crate::numerics::sh_coeff_count;
use crate::scene::{GaussianPrimitive, Scene};

pub const SCENE_MAGIC: &[u8; 8] = b"RSPLATGS";
pub const SCENE_VERSION: u32 = 1;
const HEADER_LEN: usize = 28;
/// Guards against absurd allocations from corrupt headers.
const MAX_EMBED_DIM: u32 = 1 << 16;

fn record_floats(sh_degree: usize, embed_dim: usize) -> usize {
    3 + 4 + 3 + 1 + 1 + 3 * sh_coeff_count(sh_degree) + embed_dim
}

pub fn encode_scene(scene: &Scene<f64>) -> Vec<u8> {
    let per = record_floats(scene.sh_degree(), scene.embed_dim());
    let mut out = Vec::with_capacity(HEADER_LEN + scene.len() * per * 8);
    out.extend_from_slice(SCENE_MAGIC);
    out.extend_from_slice(&SCENE_VERSION.to_le_bytes());
    out.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    out.extend_from_slice(&(scene.sh_degree() as u32).to_le_bytes());
    out.extend_from_slice(&(scene.embed_dim() as u32).to_le_bytes());
    for g in &scene.gaussians {
        let fields = g
            .position
            .iter()
            .chain(&g.rotation)
            .chain(&g.log_scale)
            .chain([&g.opacity_mean, &g.opacity_std_raw])
            .chain(&g.sh)
            .chain(&g.embedding);
        for v in fields {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn u32_at(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

pub fn decode_scene(bytes: &[u8]) -> Result<Scene<f64>> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated header: expected {HEADER_LEN} bytes, found {}", bytes.len()),
        ));
    }
    if &bytes[..8] != SCENE_MAGIC {
        return Err(Error::format(0, "bad magic"));
    }
    let version = u32_at(bytes, 8);
    if version != SCENE_VERSION {
        return Err(Error::format(8, format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let degree = u32_at(bytes, 20);
    if degree as usize > MAX_SH_DEGREE {
        return Err(Error::format(20, format!("SH degree {degree} exceeds {MAX_SH_DEGREE}")));
    }
    let embed = u32_at(bytes, 24);
    if embed > MAX_EMBED_DIM {
        return Err(Error::format(24, format!("embedding size {embed} too large")));
    }
    let (degree, embed) = (degree as usize, embed as usize);
    let per = record_floats(degree, embed);
    let expected = (per as u128 * 8).checked_mul(count as u128).map(|b| b + HEADER_LEN as u128).unwrap_or(u128::MAX);
    if expected != bytes.len() as u128 {
        return Err(Error::format(
            bytes.len().min(expected.min(u64::MAX as u128) as usize) as u64,
            format!("length mismatch: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    let mut floats = bytes[HEADER_LEN..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let sh_len = 3 * sh_coeff_count(degree);
    let mut gaussians = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let head = take(12);
        gaussians.push(GaussianPrimitive {
            position: [head[0], head[1], head[2]],
            rotation: [head[3], head[4], head[5], head[6]],
            log_scale: [head[7], head[8], head[9]],
            opacity_mean: head[10],
            opacity_std_raw: head[11],
            sh: take(sh_len),
            embedding: take(embed),
        });
    }
    Scene::with_gaussians(degree, embed, gaussians)
}

pub fn write_scene(path: impl AsRef<Path>, scene: &Scene<f64>) -> Result<()> {
    std::fs::write(path, encode_scene(scene))?;
    Ok(())
}

pub fn read_scene(path: impl AsRef<Path>) -> Result<Scene<f64>> {
    decode_scene(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_scene(n: usize, degree: usize, embed: usize, seed: u64) -> Scene<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scene = Scene::new(degree, embed).unwrap();
        for _ in 0..n {
            let mut g = GaussianPrimitive::new(degree, embed);
            g.position = [rng.random(), rng.random(), rng.random()];
            g.rotation = [rng.random(), rng.random(), rng.random(), rng.random()];
            g.log_scale = [rng.random(), rng.random(), rng.random()];
            g.opacity_mean = rng.random_range(-5.0..5.0);
            g.opacity_std_raw = rng.random_range(-5.0..5.0);
            g.sh.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            g.embedding.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            scene.push(g).unwrap();
        }
        scene
    }

    #[test]
    fn empty_scene_round_trips() {
        let scene = Scene::new(3, 8).unwrap();
        let bytes = encode_scene(&scene);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(decode_scene(&bytes).unwrap(), scene);
    }

    #[test]
    fn thousand_gaussians_round_trip_bit_exact() {
        let scene = random_scene(1000, 3, 8, 7);
        let bytes = encode_scene(&scene);
        assert_eq!(bytes.len(), HEADER_LEN + 1000 * (12 + 48 + 8) * 8);
        let back = decode_scene(&bytes).unwrap();
        assert_eq!(encode_scene(&back), bytes);
        for (a, b) in scene.gaussians.iter().zip(&back.gaussians) {
            assert_eq!(a.position.map(f64::to_bits), b.position.map(f64::to_bits));
            assert_eq!(
                a.sh.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.sh.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.scene");
        let scene = random_scene(5, 1, 2, 3);
        write_scene(&path, &scene).unwrap();
        assert_eq!(read_scene(&path).unwrap(), scene);
    }

    #[test]
    fn truncated_file_names_lengths() {
        let bytes = encode_scene(&random_scene(3, 0, 0, 1));
        let err = decode_scene(&bytes[..bytes.len() - 5]).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Format { .. }));
        assert!(msg.contains(&bytes.len().to_string()), "{msg}");
        assert!(msg.contains(&(bytes.len() - 5).to_string()), "{msg}");
    }

    #[test]
    fn bad_magic_and_version_rejected() {
        let mut bytes = encode_scene(&random_scene(1, 0, 0, 1));
        bytes[0] = b'X';
        assert!(matches!(decode_scene(&bytes), Err(Error::Format { offset: 0, .. })));
        let mut bytes = encode_scene(&random_scene(1, 0, 0, 1));
        bytes[8] = 9;
        assert!(matches!(decode_scene(&bytes), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(decode_scene(&bytes[..10]), Err(Error::Format { .. })));
    }

    #[test]
    fn huge_count_does_not_allocate() {
        let mut bytes = encode_scene(&random_scene(0, 0, 0, 1));
        bytes[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_scene(&bytes).is_err());
    }
}
