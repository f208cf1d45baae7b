//! Cutout copies of one susceptibility map.

use caspian::augment::{augmented_input, CutoutConfig};
use caspian::grid::{Grid, SusceptibilityMap};

fn main() -> caspian::Result<()> {
    let map = SusceptibilityMap {
        grid: Grid::filled(16, 32, 1i8),
    };
    let cfg = CutoutConfig {
        n_patches: 2,
        patch_size: 6,
        m: 3,
        seed: 7,
    };
    cfg.validate(16, 32)?;
    for copy in 1..=cfg.m {
        let x = augmented_input(&map, &cfg, 0, copy);
        println!("copy {copy}:");
        for i in 0..x.h() {
            let row: String = (0..x.w()).map(|j| if *x.grid.get(i, j) == 0 { ' ' } else { '#' }).collect();
            println!("  |{row}|");
        }
    }
    Ok(())
}
