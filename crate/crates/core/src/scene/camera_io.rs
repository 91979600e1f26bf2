//! Plain-text camera sets.
//!
//! One camera per line: the nine entries of K (row-major), the world-to-camera
//! transform as 3x4 (12 numbers) or 4x4 (16 numbers, last row `0 0 0 1`),
//! then width and height. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scene::Camera;

const WITH_3X4: usize = 9 + 12 + 2;
const WITH_4X4: usize = 9 + 16 + 2;

/// Writes cameras with a 3x4 transform; floats use the shortest
/// representation that parses back to the same value.
pub fn render_camera_set(cameras: &[Camera<f64>]) -> String {
    let mut out = String::from("# K(9) W(3x4) width height\n");
    for cam in cameras {
        let k = cam.intrinsics();
        let r = cam.rotation();
        let t = cam.translation();
        let mut fields: Vec<String> = k.iter().flatten().map(|v| format!("{v:?}")).collect();
        for i in 0..3 {
            fields.extend(r[i].iter().map(|v| format!("{v:?}")));
            fields.push(format!("{:?}", t[i]));
        }
        fields.push(cam.width().to_string());
        fields.push(cam.height().to_string());
        writeln!(out, "{}", fields.join(" ")).unwrap();
    }
    out
}

fn parse_dim(token: &str, offset: u64) -> Result<usize> {
    token.parse::<usize>().map_err(|_| Error::format(offset, format!("expected a pixel dimension, found {token:?}")))
}

pub fn parse_camera_set(text: &str) -> Result<Vec<Camera<f64>>> {
    let mut cameras = Vec::new();
    let mut offset = 0u64;
    for line in text.split_inclusive('\n') {
        let line_offset = offset;
        offset += line.len() as u64;
        let content = line.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = content.split_whitespace().collect();
        if tokens.is_empty() {
            continue;
        }
        if tokens.len() != WITH_3X4 && tokens.len() != WITH_4X4 {
            return Err(Error::format(
                line_offset,
                format!("expected {WITH_3X4} or {WITH_4X4} fields, found {}", tokens.len()),
            ));
        }
        let n_float = tokens.len() - 2;
        let mut v = Vec::with_capacity(n_float);
        for tok in &tokens[..n_float] {
            v.push(tok.parse::<f64>().map_err(|_| Error::format(line_offset, format!("not a number: {tok:?}")))?);
        }
        let width = parse_dim(tokens[n_float], line_offset)?;
        let height = parse_dim(tokens[n_float + 1], line_offset)?;
        let k = [[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]];
        let w = &v[9..];
        if w.len() == 16 && (w[12] != 0.0 || w[13] != 0.0 || w[14] != 0.0 || w[15] != 1.0) {
            return Err(Error::Validation(format!("camera at byte {line_offset}: last transform row must be 0 0 0 1")));
        }
        let r = [[w[0], w[1], w[2]], [w[4], w[5], w[6]], [w[8], w[9], w[10]]];
        let t = [w[3], w[7], w[11]];
        cameras.push(Camera::new(k, r, t, width, height)?);
    }
    Ok(cameras)
}

pub fn write_camera_set(path: impl AsRef<Path>, cameras: &[Camera<f64>]) -> Result<()> {
    std::fs::write(path, render_camera_set(cameras))?;
    Ok(())
}

pub fn read_camera_set(path: impl AsRef<Path>) -> Result<Vec<Camera<f64>>> {
    parse_camera_set(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::mat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_camera_round_trips() {
        let cam = Camera::new(mat::identity3(), mat::identity3(), [0.0; 3], 1, 1).unwrap();
        let back = parse_camera_set(&render_camera_set(std::slice::from_ref(&cam))).unwrap();
        assert_eq!(back, vec![cam]);
    }

    #[test]
    fn random_cameras_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cams: Vec<_> = (0..100)
            .map(|_| {
                let eye = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let fov = rng.random_range(0.3..1.5);
                Camera::look_at(
                    eye,
                    [0.1, 0.2, 0.3],
                    [0.0, 1.0, 0.0],
                    fov,
                    rng.random_range(1..200),
                    rng.random_range(1..200),
                )
                .unwrap()
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cameras.txt");
        write_camera_set(&path, &cams).unwrap();
        let back = read_camera_set(&path).unwrap();
        assert_eq!(back.len(), 100);
        for (a, b) in cams.iter().zip(&back) {
            let pa = a.projection_matrix();
            let pb = b.projection_matrix();
            for i in 0..3 {
                for j in 0..4 {
                    assert!((pa[i][j] - pb[i][j]).abs() <= 1e-12 * pa[i][j].abs().max(1.0));
                }
            }
            assert_eq!((a.width(), a.height()), (b.width(), b.height()));
        }
    }

    #[test]
    fn four_by_four_and_comments_accepted() {
        let text = "# header\n\n1 0 0 0 1 0 0 0 1  1 0 0 0 0 1 0 0 0 0 1 2 0 0 0 1  4 3 # trailing\n";
        let cams = parse_camera_set(text).unwrap();
        assert_eq!(cams.len(), 1);
        assert_eq!(cams[0].translation(), [0.0, 0.0, 2.0]);
    }

    #[test]
    fn reflection_rejected() {
        let text = "1 0 0 0 1 0 0 0 1  -1 0 0 0 0 1 0 0 0 0 1 0 4 4\n";
        assert!(matches!(parse_camera_set(text), Err(Error::Validation(_))));
    }

    #[test]
    fn non_orthonormal_rejected() {
        let text = "1 0 0 0 1 0 0 0 1  1.01 0 0 0 0 1 0 0 0 0 1 0 4 4\n";
        assert!(matches!(parse_camera_set(text), Err(Error::Validation(_))));
    }

    #[test]
    fn malformed_lines_report_offset() {
        let text = "# c\n1 2 3\n";
        assert!(matches!(parse_camera_set(text), Err(Error::Format { offset: 4, .. })));
        let text = "1 0 0 0 1 0 0 0 1  1 0 0 0 0 1 0 0 0 0 1 x 4 4\n";
        assert!(matches!(parse_camera_set(text), Err(Error::Format { offset: 0, .. })));
    }
}
