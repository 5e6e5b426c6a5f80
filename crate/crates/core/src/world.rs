//! Seeded procedural world and the paired overhead/radar renderers.
//!
//! A world is a flat map of roads, convex building footprints, static
//! clutter points, and dynamic objects tagged as visible to only one
//! modality. Overhead renders are axis-aligned three-channel rasters; radar
//! renders are single-channel, ray-cast from the sensor with occlusion
//! behind the first building hit, range falloff, and multiplicative
//! log-normal speckle. Every render is a pure function of its arguments, and
//! raster values are quantized to 8-bit levels so on-disk round trips are
//! exact.

use ndarray::Array3;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, GridSpec, SE2Offset};
use crate::image::ImagePlane;
use crate::scalar::Real;

#[derive(Debug, Clone)]
pub struct Road {
    pub points: Vec<[f64; 2]>,
    pub width: f64,
}

/// Convex footprint, corners in counter-clockwise order.
#[derive(Debug, Clone)]
pub struct Building {
    pub corners: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    RadarOnly,
    OverheadOnly,
}

#[derive(Debug, Clone)]
pub struct DynamicObject {
    pub pos: [f64; 2],
    pub radius: f64,
    pub modality: Modality,
}

/// Procedural map; fully determined by `seed` and `extent`.
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub seed: u64,
    /// Side length of the square world, metres, centred on the origin.
    pub extent: f64,
    pub roads: Vec<Road>,
    pub buildings: Vec<Building>,
    pub clutter: Vec<[f64; 2]>,
    pub dynamics: Vec<DynamicObject>,
}

/// Radar sensing model.
#[derive(Debug, Clone, Copy)]
pub struct SensorParams {
    pub max_range: f64,
    /// Log-sigma of the multiplicative speckle; zero disables it.
    pub speckle: f64,
    pub occlusion: bool,
    /// Exponent of the `(1 - range/max_range)` sensitivity falloff.
    pub falloff: f64,
}

impl SensorParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_range > 0.0) || self.speckle < 0.0 || self.falloff < 0.0 {
            return Err(Error::invalid(
                "sensor needs positive range and nonnegative speckle/falloff",
            ));
        }
        Ok(())
    }
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            max_range: 120.0,
            speckle: 0.12,
            occlusion: true,
            falloff: 1.0,
        }
    }
}

/// Offset ranges used when drawing dataset samples.
#[derive(Debug, Clone, Copy)]
pub struct SampleParams {
    /// Bound on the artificial translation offset, pixels per axis.
    pub max_shift_px: i64,
    /// Half-range of the initial heading error around the true heading.
    pub theta0_half_range: f64,
}

impl Default for SampleParams {
    fn default() -> Self {
        Self {
            max_shift_px: 25,
            theta0_half_range: std::f64::consts::PI / 8.0,
        }
    }
}

/// One training/evaluation tuple: the image pair, the true offset, the
/// coarse initial estimate, and the radar's world position (route tag).
#[derive(Debug, Clone)]
pub struct DatasetSample<T: Real> {
    pub overhead: ImagePlane<T>,
    pub radar: ImagePlane<T>,
    pub gt_offset: SE2Offset<T>,
    pub initial_estimate: SE2Offset<T>,
    pub route_pos: [f64; 2],
}

impl WorldModel {
    /// Build a world from a seed: a main road through the centre, one or two
    /// cross roads, buildings strung along every road, clutter, and a
    /// handful of dynamic objects.
    pub fn generate(seed: u64, extent: f64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let half = extent / 2.0;
        let reach = half * 1.3;

        let mut roads = Vec::new();
        let main_dir = rng.gen_range(-0.4..0.4f64);
        roads.push(polyline_road(main_dir, 0.0, reach, 8.0, &mut rng));
        let n_cross = 1 + (rng.gen::<u64>() % 2) as usize;
        for _ in 0..n_cross {
            let dir = main_dir + std::f64::consts::FRAC_PI_2 + rng.gen_range(-0.3..0.3);
            let offset = rng.gen_range(-0.4 * half..0.4 * half);
            roads.push(polyline_road(dir, offset, reach, 6.5, &mut rng));
        }

        let mut buildings = Vec::new();
        for road in &roads {
            place_buildings_along(road, &roads, &mut buildings, &mut rng);
        }
        if buildings.is_empty() {
            // a world must offer at least one structural constraint
            buildings.push(rect_building([20.0, 15.0], 12.0, 10.0, 0.0));
        }

        let mut clutter = Vec::new();
        let n_clutter = (extent * extent / 900.0) as usize;
        for _ in 0..n_clutter {
            let p = [rng.gen_range(-half..half), rng.gen_range(-half..half)];
            if roads.iter().all(|r| dist_to_road(p, r) > r.width) {
                clutter.push(p);
            }
        }

        let mut dynamics = Vec::new();
        let n_dyn = 8 + (rng.gen::<u64>() % 8) as usize;
        for i in 0..n_dyn {
            let road = &roads[rng.gen_range(0..roads.len())];
            let t = rng.gen_range(0.0..1.0);
            let p = point_along(road, t);
            let jitter = [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)];
            dynamics.push(DynamicObject {
                pos: [p[0] + jitter[0], p[1] + jitter[1]],
                radius: rng.gen_range(1.0..2.2),
                modality: if i % 2 == 0 {
                    Modality::RadarOnly
                } else {
                    Modality::OverheadOnly
                },
            });
        }

        Self {
            seed,
            extent,
            roads,
            buildings,
            clutter,
            dynamics,
        }
    }

    /// Empty flat world (background only) for tests.
    pub fn empty(extent: f64) -> Self {
        Self {
            seed: 0,
            extent,
            roads: Vec::new(),
            buildings: Vec::new(),
            clutter: Vec::new(),
            dynamics: Vec::new(),
        }
    }

    /// Half-extent of the square region poses may be drawn from so that any
    /// image window plus the translation offset stays inside the world.
    pub fn safe_half_extent(&self, grid: &GridSpec, max_shift_px: i64) -> f64 {
        let diag_half = grid.metres_per_pixel
            * ((grid.height as f64 / 2.0).hypot(grid.width as f64 / 2.0) + 1.0);
        let shift = max_shift_px as f64 * grid.metres_per_pixel;
        self.extent / 2.0 - diag_half - shift - 2.0
    }

    /// Positions along the main road's centreline, evenly spaced over the
    /// arclength fraction window `[t0, t1]`, clipped to the safe region.
    pub fn route_positions(
        &self,
        count: usize,
        t0: f64,
        t1: f64,
        grid: &GridSpec,
        max_shift_px: i64,
    ) -> Vec<[f64; 2]> {
        let safe = self.safe_half_extent(grid, max_shift_px);
        let road = &self.roads[0];
        let total = road_length(road);
        let mut pts = Vec::with_capacity(count);
        let mut produced = 0usize;
        let mut k = 0usize;
        while produced < count {
            let f = if count == 1 {
                (t0 + t1) / 2.0
            } else {
                t0 + (t1 - t0) * (k as f64 / (count - 1).max(1) as f64)
            };
            k += 1;
            let p = point_at_arclength(road, f.clamp(0.0, 1.0) * total);
            if p[0].abs() <= safe && p[1].abs() <= safe {
                pts.push(p);
                produced += 1;
            }
            if k > count * 8 {
                // road leaves the safe box early; repeat the last position
                while produced < count {
                    pts.push(*pts.last().unwrap_or(&[0.0, 0.0]));
                    produced += 1;
                }
            }
        }
        pts
    }
}

fn polyline_road<R: Rng>(dir: f64, offset: f64, reach: f64, width: f64, rng: &mut R) -> Road {
    let n = 24;
    let (c, s) = (dir.cos(), dir.sin());
    let normal = [-s, c];
    let mut points = Vec::with_capacity(n);
    let mut wobble = 0.0f64;
    for i in 0..n {
        let t = -reach + 2.0 * reach * (i as f64 / (n - 1) as f64);
        wobble += rng.gen_range(-2.0..2.0);
        wobble = wobble.clamp(-12.0, 12.0);
        points.push([
            c * t + normal[0] * (offset + wobble),
            s * t + normal[1] * (offset + wobble),
        ]);
    }
    Road { points, width }
}

fn rect_building(centre: [f64; 2], len: f64, depth: f64, dir: f64) -> Building {
    let (c, s) = (dir.cos(), dir.sin());
    let axis = [c, s];
    let normal = [-s, c];
    let (hl, hd) = (len / 2.0, depth / 2.0);
    let corner = |a: f64, b: f64| {
        [
            centre[0] + axis[0] * a + normal[0] * b,
            centre[1] + axis[1] * a + normal[1] * b,
        ]
    };
    Building {
        corners: vec![
            corner(-hl, -hd),
            corner(hl, -hd),
            corner(hl, hd),
            corner(-hl, hd),
        ],
    }
}

fn place_buildings_along<R: Rng>(
    road: &Road,
    all_roads: &[Road],
    out: &mut Vec<Building>,
    rng: &mut R,
) {
    let total = road_length(road);
    let mut s = rng.gen_range(10.0..25.0);
    let mut side = 1.0f64;
    while s < total {
        let p = point_at_arclength(road, s);
        let dir = direction_at_arclength(road, s);
        let normal = [-dir[1], dir[0]];
        let len = rng.gen_range(8.0..18.0);
        let depth = rng.gen_range(7.0..14.0);
        let gap = rng.gen_range(2.0..6.0);
        let off = road.width / 2.0 + gap + depth / 2.0;
        let centre = [p[0] + normal[0] * off * side, p[1] + normal[1] * off * side];
        let clear = all_roads
            .iter()
            .all(|r| dist_to_road(centre, r) > r.width / 2.0 + depth / 2.0 + 1.0);
        if clear && rng.gen::<f64>() < 0.85 {
            out.push(rect_building(centre, len, depth, dir[1].atan2(dir[0])));
        }
        side = -side;
        s += rng.gen_range(22.0..38.0);
    }
}

fn road_length(road: &Road) -> f64 {
    road.points
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .sum()
}

fn point_along(road: &Road, t: f64) -> [f64; 2] {
    point_at_arclength(road, t.clamp(0.0, 1.0) * road_length(road))
}

fn point_at_arclength(road: &Road, s: f64) -> [f64; 2] {
    let mut acc = 0.0;
    for w in road.points.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if acc + seg >= s {
            let u = ((s - acc) / seg).clamp(0.0, 1.0);
            return [
                w[0][0] + u * (w[1][0] - w[0][0]),
                w[0][1] + u * (w[1][1] - w[0][1]),
            ];
        }
        acc += seg;
    }
    *road.points.last().unwrap()
}

fn direction_at_arclength(road: &Road, s: f64) -> [f64; 2] {
    let mut acc = 0.0;
    for w in road.points.windows(2) {
        let seg = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if acc + seg >= s || seg == 0.0 {
            let n = seg.max(1e-9);
            return [(w[1][0] - w[0][0]) / n, (w[1][1] - w[0][1]) / n];
        }
        acc += seg;
    }
    [1.0, 0.0]
}

fn dist_to_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let proj = [a[0] + t * ab[0], a[1] + t * ab[1]];
    (p[0] - proj[0]).hypot(p[1] - proj[1])
}

fn dist_to_road(p: [f64; 2], road: &Road) -> f64 {
    road.points
        .windows(2)
        .map(|w| dist_to_segment(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

fn point_in_convex(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross.abs() < 1e-12 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

/// Distance along `origin + t * dir` to the first crossing of any building
/// edge, or infinity.
fn first_building_hit(world: &WorldModel, origin: [f64; 2], dir: [f64; 2], t_max: f64) -> f64 {
    let mut best = f64::INFINITY;
    for b in &world.buildings {
        let n = b.corners.len();
        for i in 0..n {
            let a = b.corners[i];
            let c = b.corners[(i + 1) % n];
            let e = [c[0] - a[0], c[1] - a[1]];
            let den = dir[0] * e[1] - dir[1] * e[0];
            if den.abs() < 1e-12 {
                continue;
            }
            let dx = a[0] - origin[0];
            let dy = a[1] - origin[1];
            let t = (dx * e[1] - dy * e[0]) / den;
            let u = (dx * dir[1] - dy * dir[0]) / den;
            if t > 1e-9 && t <= t_max && (0.0..=1.0).contains(&u) && t < best {
                best = t;
            }
        }
    }
    best
}

fn check_pose_in_bounds(world: &WorldModel, pose: &SE2Offset<f64>, grid: &GridSpec) -> Result<()> {
    let radius = grid.metres_per_pixel
        * ((grid.height as f64 / 2.0).hypot(grid.width as f64 / 2.0) + 1.0);
    let half = world.extent / 2.0;
    if pose.x.abs() + radius > half || pose.y.abs() + radius > half {
        return Err(Error::OutOfBounds(format!(
            "pose ({:.1}, {:.1}) with window radius {radius:.1} leaves the {:.0} m world",
            pose.x, pose.y, world.extent
        )));
    }
    Ok(())
}

fn quantize(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

// Palette: (overhead RGB, radar reflectivity) per surface class.
const BG_RGB: [f64; 3] = [0.18, 0.26, 0.14];
const ROAD_RGB: [f64; 3] = [0.36, 0.36, 0.38];
const BUILDING_RGB: [f64; 3] = [0.62, 0.58, 0.52];
const CLUTTER_RGB: [f64; 3] = [0.10, 0.34, 0.12];
const DYNAMIC_RGB: [f64; 3] = [0.85, 0.85, 0.90];
const CLUTTER_RADIUS: f64 = 1.6;

const RADAR_BG: f64 = 0.14;
const RADAR_ROAD: f64 = 0.05;
const RADAR_WALL: f64 = 0.95;
const RADAR_CLUTTER: f64 = 0.75;
const RADAR_DYNAMIC: f64 = 0.85;
/// Thickness of the bright band a wall paints along the ray, metres.
const WALL_BAND: f64 = 1.4;

/// Render the axis-aligned (or `pose.theta`-rotated) overhead view at a
/// world pose. Three channels, deterministic.
pub fn render_overhead<T: Real>(
    world: &WorldModel,
    pose: &SE2Offset<f64>,
    grid: &GridSpec,
) -> Result<ImagePlane<T>> {
    check_pose_in_bounds(world, pose, grid)?;
    let (cx, cy) = grid.centre();
    let m = grid.metres_per_pixel;
    let mut data = Array3::zeros((3, grid.height, grid.width));
    for row in 0..grid.height {
        for col in 0..grid.width {
            let px = (col as f64 - cx) * m;
            let py = (row as f64 - cy) * m;
            let (rx, ry) = pose.rotate_point(px, py);
            let w = [pose.x + rx, pose.y + ry];
            let rgb = overhead_class(world, w);
            for ch in 0..3 {
                data[(ch, row, col)] = T::cast(quantize(rgb[ch]));
            }
        }
    }
    Ok(ImagePlane::from_raw_unchecked(data, *grid))
}

fn overhead_class(world: &WorldModel, w: [f64; 2]) -> [f64; 3] {
    for d in &world.dynamics {
        if d.modality == Modality::OverheadOnly
            && (w[0] - d.pos[0]).hypot(w[1] - d.pos[1]) <= d.radius
        {
            return DYNAMIC_RGB;
        }
    }
    for (i, b) in world.buildings.iter().enumerate() {
        if point_in_convex(w, &b.corners) {
            // small per-building brightness variation
            let tweak = 0.9 + 0.05 * (i % 5) as f64;
            return [
                BUILDING_RGB[0] * tweak,
                BUILDING_RGB[1] * tweak,
                BUILDING_RGB[2] * tweak,
            ];
        }
    }
    for r in &world.roads {
        if dist_to_road(w, r) <= r.width / 2.0 {
            return ROAD_RGB;
        }
    }
    for c in &world.clutter {
        if (w[0] - c[0]).hypot(w[1] - c[1]) <= CLUTTER_RADIUS {
            return CLUTTER_RGB;
        }
    }
    BG_RGB
}

/// Ray-cast radar render at a world pose with heading `pose.theta`.
/// Single channel; pure in `(world, pose, sp, rng_seed)`.
pub fn render_radar<T: Real>(
    world: &WorldModel,
    pose: &SE2Offset<f64>,
    grid: &GridSpec,
    sp: &SensorParams,
    rng_seed: u64,
) -> Result<ImagePlane<T>> {
    sp.validate()?;
    check_pose_in_bounds(world, pose, grid)?;
    let (cx, cy) = grid.centre();
    let m = grid.metres_per_pixel;
    let origin = [pose.x, pose.y];
    let mut data = Array3::zeros((1, grid.height, grid.width));
    for row in 0..grid.height {
        for col in 0..grid.width {
            let px = (col as f64 - cx) * m;
            let py = (row as f64 - cy) * m;
            let (rx, ry) = pose.rotate_point(px, py);
            let range = rx.hypot(ry);
            let mut v = 0.0;
            if range <= sp.max_range && range > 1e-9 {
                let dir = [rx / range, ry / range];
                let t_hit = if sp.occlusion {
                    first_building_hit(world, origin, dir, sp.max_range)
                } else {
                    f64::INFINITY
                };
                let w = [origin[0] + rx, origin[1] + ry];
                let refl = if (range - t_hit).abs() <= WALL_BAND {
                    RADAR_WALL
                } else if range > t_hit {
                    0.0 // occluded behind the first wall
                } else {
                    radar_class(world, w)
                };
                let gain = (1.0 - range / sp.max_range).max(0.0).powf(sp.falloff);
                v = refl * gain;
                if sp.speckle > 0.0 && v > 0.0 {
                    let z = hash_normal(rng_seed, (row * grid.width + col) as u64);
                    v *= (sp.speckle * z - 0.5 * sp.speckle * sp.speckle).exp();
                }
            }
            data[(0, row, col)] = T::cast(quantize(v));
        }
    }
    Ok(ImagePlane::from_raw_unchecked(data, *grid))
}

fn radar_class(world: &WorldModel, w: [f64; 2]) -> f64 {
    for d in &world.dynamics {
        if d.modality == Modality::RadarOnly
            && (w[0] - d.pos[0]).hypot(w[1] - d.pos[1]) <= d.radius
        {
            return RADAR_DYNAMIC;
        }
    }
    for c in &world.clutter {
        if (w[0] - c[0]).hypot(w[1] - c[1]) <= CLUTTER_RADIUS {
            return RADAR_CLUTTER;
        }
    }
    for r in &world.roads {
        if dist_to_road(w, r) <= r.width / 2.0 {
            return RADAR_ROAD;
        }
    }
    RADAR_BG
}

/// Order-independent per-pixel standard normal from a seed/index pair
/// (splitmix64 + Box-Muller).
fn hash_normal(seed: u64, idx: u64) -> f64 {
    let u1 = splitmix(seed ^ idx.wrapping_mul(0x9E37_79B9_7F4A_7C15)) as f64
        / u64::MAX as f64;
    let u2 = splitmix(seed.wrapping_add(idx).wrapping_mul(0xBF58_476D_1CE4_E5B9)) as f64
        / u64::MAX as f64;
    let u1 = u1.max(1e-12);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Offsets drawn for one sample: integer pixel shift, true heading, and the
/// coarse heading estimate.
pub fn draw_offsets<R: Rng>(rng: &mut R, params: &SampleParams) -> ((i64, i64), f64, f64) {
    let shift = (
        rng.gen_range(-params.max_shift_px..=params.max_shift_px),
        rng.gen_range(-params.max_shift_px..=params.max_shift_px),
    );
    let heading = rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI);
    let theta0 = wrap_angle(
        heading + rng.gen_range(-params.theta0_half_range..=params.theta0_half_range),
    );
    (shift, heading, theta0)
}

/// Draw one sample at a random position inside the safe region.
pub fn sample_pair<T: Real, R: Rng>(
    world: &WorldModel,
    rng: &mut R,
    grid: &GridSpec,
    sp: &SensorParams,
) -> Result<DatasetSample<T>> {
    sample_pair_with(world, rng, grid, sp, &SampleParams::default(), None)
}

/// Draw one sample, optionally pinned to a route position.
pub fn sample_pair_with<T: Real, R: Rng>(
    world: &WorldModel,
    rng: &mut R,
    grid: &GridSpec,
    sp: &SensorParams,
    params: &SampleParams,
    position: Option<[f64; 2]>,
) -> Result<DatasetSample<T>> {
    let safe = world.safe_half_extent(grid, params.max_shift_px);
    if safe <= 0.0 {
        return Err(Error::invalid(format!(
            "world extent {} m is too small for this grid",
            world.extent
        )));
    }
    let radar_pos = position.unwrap_or_else(|| {
        [rng.gen_range(-safe..safe), rng.gen_range(-safe..safe)]
    });
    let (shift, heading, theta0) = draw_offsets(rng, params);
    let m = grid.metres_per_pixel;
    let sat_pos = [
        radar_pos[0] - shift.0 as f64 * m,
        radar_pos[1] - shift.1 as f64 * m,
    ];
    let radar_seed = rng.gen::<u64>();

    let overhead = render_overhead(
        world,
        &SE2Offset::new(sat_pos[0], sat_pos[1], 0.0)?,
        grid,
    )?;
    let radar = render_radar(
        world,
        &SE2Offset::new(radar_pos[0], radar_pos[1], heading)?,
        grid,
        sp,
        radar_seed,
    )?;
    Ok(DatasetSample {
        overhead,
        radar,
        gt_offset: SE2Offset::new(
            T::cast(shift.0 as f64 * m),
            T::cast(shift.1 as f64 * m),
            T::cast(heading),
        )?,
        initial_estimate: SE2Offset::new(T::zero(), T::zero(), T::cast(theta0))?,
        route_pos: radar_pos,
    })
}

/// Draw `count` samples along the main road between the arclength fractions
/// `t0` and `t1`. One seed fixes the whole dataset.
pub fn generate_route_dataset<T: Real>(
    world: &WorldModel,
    seed: u64,
    grid: &GridSpec,
    sp: &SensorParams,
    params: &SampleParams,
    count: usize,
    t0: f64,
    t1: f64,
) -> Result<Vec<DatasetSample<T>>> {
    use rand::SeedableRng;
    let route = world.route_positions(count, t0, t1, grid, params.max_shift_px);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xA076_1D64_78BD_642F);
    route
        .into_iter()
        .map(|pos| sample_pair_with(world, &mut rng, grid, sp, params, Some(pos)))
        .collect()
}
