//! ASCII graymap dumps of per-filter masks: active units black, pruned white.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::pruning::LayerMask;

pub const ACTIVE_PIXEL: u8 = 0;
pub const PRUNED_PIXEL: u8 = 255;

/// Grid for `n` units: rows is the largest divisor of `n` not above `sqrt(n)`.
pub fn raster_dims(n: usize) -> (usize, usize) {
    let mut rows = 1;
    let mut r = 1;
    while r * r <= n {
        if n % r == 0 {
            rows = r;
        }
        r += 1;
    }
    (rows, n / rows.max(1))
}

/// Unit `i` sits at row `i / cols`, column `i % cols`.
pub fn mask_raster(mask: &LayerMask) -> (usize, usize, Vec<u8>) {
    let (rows, cols) = raster_dims(mask.n_out());
    let pixels = mask
        .rows()
        .iter()
        .map(|&on| if on { ACTIVE_PIXEL } else { PRUNED_PIXEL })
        .collect();
    (rows, cols, pixels)
}

pub fn encode_pgm(rows: usize, cols: usize, pixels: &[u8]) -> String {
    let mut out = format!("P2\n{cols} {rows}\n255\n");
    for line in pixels.chunks(cols.max(1)) {
        let row: Vec<String> = line.iter().map(u8::to_string).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

pub fn mask_filename(client: usize, layer: usize, round: usize) -> String {
    format!("mask_c{client}_l{layer}_r{round}.pgm")
}

pub fn dump_sparsity_pattern(
    mask: &LayerMask,
    client: usize,
    layer: usize,
    round: usize,
    out_dir: &Path,
) -> Result<PathBuf> {
    let (rows, cols, pixels) = mask_raster(mask);
    let path = out_dir.join(mask_filename(client, layer, round));
    std::fs::write(&path, encode_pgm(rows, cols, &pixels))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruning::generate_layer_mask;

    #[test]
    fn grid_shapes() {
        assert_eq!(raster_dims(20), (4, 5));
        assert_eq!(raster_dims(50), (5, 10));
        assert_eq!(raster_dims(500), (20, 25));
        assert_eq!(raster_dims(7), (1, 7));
        assert_eq!(raster_dims(64), (8, 8));
    }

    #[test]
    fn all_active_and_all_pruned() {
        let on = LayerMask::new(vec![true; 6], 3);
        let text = encode_pgm(2, 3, &mask_raster(&on).2);
        assert_eq!(text, "P2\n3 2\n255\n0 0 0\n0 0 0\n");
        let off = LayerMask::new(vec![false; 4], 3);
        assert!(mask_raster(&off).2.iter().all(|&p| p == 255));
    }

    #[test]
    fn raster_follows_mask_rows() {
        let mask = generate_layer_mask(&[0.3, 0.1, 0.5, 0.0], &[0.2; 4], 2).unwrap();
        let (_, _, px) = mask_raster(&mask);
        assert_eq!(px, vec![0, 255, 0, 255]);
        let dir = tempfile::tempdir().unwrap();
        let path = dump_sparsity_pattern(&mask, 3, 1, 9, dir.path()).unwrap();
        assert!(path.ends_with("mask_c3_l1_r9.pgm"));
        assert_eq!(std::fs::read_to_string(path).unwrap(), "P2\n2 2\n255\n0 255\n0 255\n");
    }
}
