#![allow(dead_code)]

use std::path::{Path, PathBuf};

/// A small but complete experiment: 16x16 grid with 1 m cells, tiny widths.
pub fn tiny_config(arch: &str) -> String {
    format!(
        "# tiny test experiment
grid.x = 16
grid.y = 16
grid.resolution_m = 1.0
grid.frame_rate_hz = 10
model.arch = {arch}
model.s = 1
model.f = 3
model.m = 3
model.d_h = 2
model.head_width = 3
model.aspp_branch = 2
model.aspp_width = 3
model.aspp_rates = 1,2
model.aspp_blocks = 1
model.pyramid_m = 2
train.lr = 1e-3
train.epochs = 2
train.seq_len = 3
sim.objects = 2
sim.obstacles = 1
sim.v_max = 8
sim.p_drop = 0.2
sim.p_fp = 0.01
sim.rays = 180
sim.seq_len = 6
data.heldout_every = 3
seed = 4
"
    )
}

pub fn write_config(dir: &Path, arch: &str) -> PathBuf {
    let p = dir.join(format!("{arch}.cfg"));
    std::fs::write(&p, tiny_config(arch)).unwrap();
    p
}
