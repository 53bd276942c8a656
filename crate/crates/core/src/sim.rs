//! Deterministic synthetic bird's-eye-view world.
//!
//! Axis-aligned rectangular objects move with constant velocity and bounce
//! off the world boundary. A ray-casting sensor at the grid centre observes
//! the scene; the first occupied cell on a ray blocks it. Every frame comes
//! with exact ground truth: classes, velocities and observability.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::projection::GridGeometry;
use crate::real::Real;
use crate::tensor::Tensor;

/// Cells whose object moves faster than this are labelled moving.
pub const MOVING_THRESHOLD: f64 = 2.0;
/// Object edge lengths are drawn from this range (meters).
pub const OBJECT_SIZE: (f64, f64) = (2.0, 5.0);
/// Static obstacle edge lengths (meters).
pub const OBSTACLE_SIZE: (f64, f64) = (1.0, 3.0);
const PLACEMENT_RETRIES: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum Class {
    Free = 0,
    Unknown = 1,
    Occupied = 2,
    Moving = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [Class::Free, Class::Unknown, Class::Occupied, Class::Moving];

    pub fn name(self) -> &'static str {
        match self {
            Class::Free => "free",
            Class::Unknown => "unknown",
            Class::Occupied => "occupied",
            Class::Moving => "moving",
        }
    }

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(i as usize).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub objects: usize,
    pub obstacles: usize,
    pub v_max: f64,
    /// Probability that an object does not move at all.
    pub static_fraction: f64,
    /// Probability that a visible occupied cell produces no detection.
    pub p_drop: f64,
    /// Probability of a detection on a visible free cell.
    pub p_fp: f64,
    pub rays: usize,
    pub seq_len: usize,
    /// Sensor channels: 1 = detections, 2 = detections + observed mask.
    pub channels: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            objects: 4,
            obstacles: 2,
            v_max: 12.0,
            static_fraction: 0.2,
            p_drop: 0.2,
            p_fp: 0.01,
            rays: 720,
            seq_len: 12,
            channels: 1,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |p: f64| (0.0..=1.0).contains(&p);
        if !(self.v_max >= 0.0) || !prob(self.static_fraction) || !prob(self.p_drop) || !prob(self.p_fp) {
            return Err(Error::Config("simulator rates out of range".into()));
        }
        if self.rays == 0 || self.seq_len == 0 || !(1..=2).contains(&self.channels) {
            return Err(Error::Config("simulator needs rays > 0, seq_len > 0 and 1 or 2 channels".into()));
        }
        Ok(())
    }
}

/// Axis-aligned rectangle in world meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn centered(center: [f64; 2], extent: [f64; 2]) -> Self {
        Self {
            min: [center[0] - extent[0] / 2.0, center[1] - extent[1] / 2.0],
            max: [center[0] + extent[0] / 2.0, center[1] + extent[1] / 2.0],
        }
    }

    pub fn overlaps(&self, o: &Rect) -> bool {
        self.min[0] < o.max[0] && o.min[0] < self.max[0] && self.min[1] < o.max[1] && o.min[1] < self.max[1]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn grow(&self, m: f64) -> Self {
        Self {
            min: [self.min[0] - m, self.min[1] - m],
            max: [self.max[0] + m, self.max[1] + m],
        }
    }

    /// Overlap area with another rectangle.
    pub fn intersection_area(&self, o: &Rect) -> f64 {
        let w = self.max[0].min(o.max[0]) - self.min[0].max(o.min[0]);
        let h = self.max[1].min(o.max[1]) - self.min[1].max(o.min[1]);
        if w > 0.0 && h > 0.0 {
            w * h
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Object {
    pub center: [f64; 2],
    /// Extent along x and y.
    pub extent: [f64; 2],
    pub velocity: [f64; 2],
}

impl Object {
    pub fn rect(&self) -> Rect {
        Rect::centered(self.center, self.extent)
    }

    pub fn speed(&self) -> f64 {
        self.velocity[0].hypot(self.velocity[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub objects: Vec<Object>,
    pub obstacles: Vec<Rect>,
    /// World extent in meters; the world is `[0, size[0]] x [0, size[1]]`.
    pub size: [f64; 2],
    pub rng_seed: u64,
    pub time_step: usize,
}

/// One sensor raster with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFrame {
    pub x: usize,
    pub y: usize,
    pub channels: usize,
    /// `[X, Y, S]` sensor raster.
    pub input: Vec<f32>,
    /// Per-cell [`Class`] index.
    pub gt_class: Vec<u8>,
    /// `[X, Y, 2]` velocity in m/s.
    pub gt_velocity: Vec<f32>,
    /// Per-cell weight in `[0, 1]`.
    pub observability: Vec<f32>,
}

impl GridFrame {
    pub fn cells(&self) -> usize {
        self.x * self.y
    }

    pub fn input_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::new(
            &[self.x, self.y, self.channels],
            self.input.iter().map(|&v| T::of(v as f64)).collect(),
        )
        .expect("frame raster matches its extent")
    }

    pub fn speed(&self, cell: usize) -> f64 {
        (self.gt_velocity[2 * cell] as f64).hypot(self.gt_velocity[2 * cell + 1] as f64)
    }
}

fn world_size(geom: &GridGeometry) -> [f64; 2] {
    [geom.x as f64 * geom.cell_size, geom.y as f64 * geom.cell_size]
}

/// Sensor position: the grid centre.
pub fn ego_position(geom: &GridGeometry) -> [f64; 2] {
    let s = world_size(geom);
    [s[0] / 2.0, s[1] / 2.0]
}

fn place<R: Rng>(rng: &mut R, size: [f64; 2], extent: [f64; 2], taken: &[Rect], ego: Rect) -> Option<[f64; 2]> {
    if extent[0] >= size[0] || extent[1] >= size[1] {
        return None;
    }
    for _ in 0..PLACEMENT_RETRIES {
        let c = [
            rng.gen_range(extent[0] / 2.0..size[0] - extent[0] / 2.0),
            rng.gen_range(extent[1] / 2.0..size[1] - extent[1] / 2.0),
        ];
        let r = Rect::centered(c, extent);
        if !r.overlaps(&ego) && taken.iter().all(|t| !r.overlaps(t)) {
            return Some(c);
        }
    }
    None
}

/// Seeded world with non-overlapping objects and obstacles, keeping the
/// sensor position clear.
pub fn new_world(config: &SimConfig, geom: &GridGeometry, seed: u64) -> Result<WorldState> {
    config.validate()?;
    geom.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size = world_size(geom);
    let e = ego_position(geom);
    let ego = Rect::centered(e, [0.0, 0.0]).grow(1.5);
    let mut taken: Vec<Rect> = Vec::new();

    let mut obstacles = Vec::with_capacity(config.obstacles);
    for _ in 0..config.obstacles {
        let extent = [
            rng.gen_range(OBSTACLE_SIZE.0..OBSTACLE_SIZE.1),
            rng.gen_range(OBSTACLE_SIZE.0..OBSTACLE_SIZE.1),
        ];
        let c = place(&mut rng, size, extent, &taken, ego).ok_or(Error::Placement(config.obstacles))?;
        let r = Rect::centered(c, extent);
        taken.push(r.grow(0.5));
        obstacles.push(r);
    }

    let mut objects = Vec::with_capacity(config.objects);
    for _ in 0..config.objects {
        let extent = [
            rng.gen_range(OBJECT_SIZE.0..OBJECT_SIZE.1),
            rng.gen_range(OBJECT_SIZE.0..OBJECT_SIZE.1),
        ];
        let c = place(&mut rng, size, extent, &taken, ego).ok_or(Error::Placement(config.objects))?;
        let heading = rng.gen_range(0.0..2.0 * PI);
        let speed = if rng.gen_bool(config.static_fraction) {
            0.0
        } else if config.v_max > 0.0 {
            rng.gen_range(0.0..=config.v_max)
        } else {
            0.0
        };
        taken.push(Rect::centered(c, extent).grow(0.5));
        objects.push(Object {
            center: c,
            extent,
            velocity: [speed * heading.cos(), speed * heading.sin()],
        });
    }

    Ok(WorldState {
        objects,
        obstacles,
        size,
        rng_seed: seed,
        time_step: 0,
    })
}

/// Advances every object by `velocity * dt`, reflecting at the boundary.
pub fn step_world(w: &WorldState, dt: f64) -> Result<WorldState> {
    if !(dt > 0.0) {
        return Err(crate::error::invalid("step_world", "dt must be positive"));
    }
    let mut next = w.clone();
    next.time_step += 1;
    for o in &mut next.objects {
        for a in 0..2 {
            let half = o.extent[a] / 2.0;
            let (lo, hi) = (half, w.size[a] - half);
            let mut c = o.center[a] + o.velocity[a] * dt;
            // Fold back into [lo, hi]; an object may cross several widths
            // only with absurd speeds.
            for _ in 0..8 {
                if c < lo {
                    c = 2.0 * lo - c;
                    o.velocity[a] = -o.velocity[a];
                } else if c > hi {
                    c = 2.0 * hi - c;
                    o.velocity[a] = -o.velocity[a];
                } else {
                    break;
                }
            }
            o.center[a] = c.clamp(lo, hi);
        }
    }
    Ok(next)
}

/// Owner of an occupied cell.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Owner {
    Obstacle,
    Object(usize),
}

/// Cell occupancy by dominant coverage: a cell is occupied when at least
/// half of it is covered, and belongs to the shape covering most of it.
fn rasterize(w: &WorldState, geom: &GridGeometry) -> Vec<Option<Owner>> {
    let res = geom.cell_size;
    let mut cover = vec![0.0f64; geom.cells()];
    let mut best = vec![(0.0f64, None::<Owner>); geom.cells()];
    let shapes = w
        .obstacles
        .iter()
        .map(|r| (*r, Owner::Obstacle))
        .chain(w.objects.iter().enumerate().map(|(i, o)| (o.rect(), Owner::Object(i))));
    for (r, owner) in shapes {
        let i0 = ((r.min[0] / res).floor().max(0.0)) as usize;
        let j0 = ((r.min[1] / res).floor().max(0.0)) as usize;
        let i1 = ((r.max[0] / res).ceil() as usize).min(geom.x);
        let j1 = ((r.max[1] / res).ceil() as usize).min(geom.y);
        for i in i0..i1 {
            for j in j0..j1 {
                let cell = Rect {
                    min: [i as f64 * res, j as f64 * res],
                    max: [(i + 1) as f64 * res, (j + 1) as f64 * res],
                };
                let a = cell.intersection_area(&r) / (res * res);
                let c = i * geom.y + j;
                cover[c] += a;
                if a > best[c].0 {
                    best[c] = (a, Some(owner));
                }
            }
        }
    }
    cover
        .iter()
        .zip(best)
        .map(|(&c, (_, o))| if c >= 0.5 { o } else { None })
        .collect()
}

/// Cells visited by one ray from `origin` (cell units) along `dir`, in
/// order, stopping after the first cell for which `blocked` is true.
pub fn trace_ray(origin: [f64; 2], dir: [f64; 2], geom: &GridGeometry, blocked: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut out = Vec::new();
    let mut ci = origin[0].floor() as i64;
    let mut cj = origin[1].floor() as i64;
    let step_i: i64 = if dir[0] >= 0.0 { 1 } else { -1 };
    let step_j: i64 = if dir[1] >= 0.0 { 1 } else { -1 };
    let next_boundary = |c: i64, s: i64| if s > 0 { (c + 1) as f64 } else { c as f64 };
    let mut t_max_i = if dir[0] != 0.0 {
        (next_boundary(ci, step_i) - origin[0]) / dir[0]
    } else {
        f64::INFINITY
    };
    let mut t_max_j = if dir[1] != 0.0 {
        (next_boundary(cj, step_j) - origin[1]) / dir[1]
    } else {
        f64::INFINITY
    };
    let dt_i = if dir[0] != 0.0 { (1.0 / dir[0]).abs() } else { f64::INFINITY };
    let dt_j = if dir[1] != 0.0 { (1.0 / dir[1]).abs() } else { f64::INFINITY };
    while ci >= 0 && cj >= 0 && ci < geom.x as i64 && cj < geom.y as i64 {
        let c = ci as usize * geom.y + cj as usize;
        out.push(c);
        if blocked(c) {
            break;
        }
        if t_max_i < t_max_j {
            ci += step_i;
            t_max_i += dt_i;
        } else {
            cj += step_j;
            t_max_j += dt_j;
        }
    }
    out
}

/// Ray-count based observability in `[0, 1]`.
pub fn observability(occupied: &[bool], geom: &GridGeometry, rays: usize) -> Vec<f32> {
    let e = ego_position(geom);
    let origin = [e[0] / geom.cell_size, e[1] / geom.cell_size];
    let mut hits = vec![0u32; geom.cells()];
    for k in 0..rays {
        let a = 2.0 * PI * (k as f64 + 0.5) / rays as f64;
        for c in trace_ray(origin, [a.cos(), a.sin()], geom, |c| occupied[c]) {
            hits[c] += 1;
        }
    }
    (0..geom.cells())
        .map(|c| {
            let (i, j) = (c / geom.y, c % geom.y);
            let r = ((i as f64 + 0.5 - origin[0]).hypot(j as f64 + 0.5 - origin[1])).max(0.5);
            let expected = rays as f64 / (2.0 * PI * r);
            (hits[c] as f64 / expected).clamp(0.0, 1.0) as f32
        })
        .collect()
}

/// Rasterises the world, casts the sensor rays and samples noisy
/// detections.
pub fn render_frame<R: Rng>(w: &WorldState, config: &SimConfig, geom: &GridGeometry, rng: &mut R) -> GridFrame {
    let owners = rasterize(w, geom);
    let occupied: Vec<bool> = owners.iter().map(Option::is_some).collect();
    let obs = observability(&occupied, geom, config.rays);
    let n = geom.cells();
    let mut gt_class = vec![Class::Free as u8; n];
    let mut gt_velocity = vec![0.0f32; 2 * n];
    let mut input = vec![0.0f32; n * config.channels];
    for c in 0..n {
        if let Some(Owner::Object(k)) = owners[c] {
            let o = &w.objects[k];
            gt_velocity[2 * c] = o.velocity[0] as f32;
            gt_velocity[2 * c + 1] = o.velocity[1] as f32;
        }
        gt_class[c] = match owners[c] {
            None => Class::Free,
            Some(Owner::Object(k)) if w.objects[k].speed() > MOVING_THRESHOLD => Class::Moving,
            Some(_) => Class::Occupied,
        } as u8;
        if obs[c] > 0.0 {
            let hit = if occupied[c] {
                !rng.gen_bool(config.p_drop)
            } else {
                rng.gen_bool(config.p_fp)
            };
            input[c * config.channels] = if hit { 1.0 } else { 0.0 };
            if config.channels == 2 {
                input[c * config.channels + 1] = 1.0;
            }
        } else {
            gt_class[c] = Class::Unknown as u8;
        }
    }
    GridFrame {
        x: geom.x,
        y: geom.y,
        channels: config.channels,
        input,
        gt_class,
        gt_velocity,
        observability: obs,
    }
}

/// Renders `seq_len` frames of a world, stepping it between frames.
pub fn rollout(world: WorldState, config: &SimConfig, geom: &GridGeometry) -> Result<Vec<GridFrame>> {
    let mut rng = ChaCha8Rng::seed_from_u64(world.rng_seed ^ 0x9E37_79B9_7F4A_7C15);
    let dt = 1.0 / geom.frame_rate;
    let mut w = world;
    let mut frames = Vec::with_capacity(config.seq_len);
    for t in 0..config.seq_len {
        if t > 0 {
            w = step_world(&w, dt)?;
        }
        frames.push(render_frame(&w, config, geom, &mut rng));
    }
    Ok(frames)
}

/// A pure function of `(config, geometry, seed)`.
pub fn generate_sequence(config: &SimConfig, geom: &GridGeometry, seed: u64) -> Result<Vec<GridFrame>> {
    rollout(new_world(config, geom, seed)?, config, geom)
}

/// One object crossing the scene along +x in front of the sensor; no
/// obstacles. Used to look at memory trails behind fast objects.
pub fn single_object_world(geom: &GridGeometry, speed: f64, seed: u64) -> WorldState {
    let size = world_size(geom);
    let extent = [4.0, 2.0];
    WorldState {
        objects: vec![Object {
            center: [extent[0] / 2.0 + 1.0, size[1] * 0.75],
            extent,
            velocity: [speed, 0.0],
        }],
        obstacles: Vec::new(),
        size,
        rng_seed: seed,
        time_step: 0,
    }
}

/// Cells covered by object `k` (dominant-coverage rule).
pub fn object_footprint(w: &WorldState, geom: &GridGeometry, k: usize) -> Vec<bool> {
    rasterize(w, geom)
        .into_iter()
        .map(|o| o == Some(Owner::Object(k)))
        .collect()
}
