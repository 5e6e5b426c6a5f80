//! On-disk dataset format and route splitting.
//!
//! Layout: `manifest.txt` plus `overhead/NNNNNN.png` (RGB) and
//! `radar/NNNNNN.png` (grayscale). The manifest starts with a version line
//! and a grid line, then one record per sample:
//!
//! ```text
//! radloc-dataset 1
//! grid <height> <width> <metres_per_pixel>
//! <id> <x_gt_m> <y_gt_m> <theta_gt_rad> <x0_m> <y0_m> <theta0_rad> <route_x> <route_y>
//! ```
//!
//! Record order is route order. Images are stored as 8-bit PNG; renders are
//! already quantized to 8-bit levels, so write-then-read is exact.

use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use ndarray::Array3;

use crate::error::{Error, Result};
use crate::geometry::{GridSpec, SE2Offset};
use crate::image::ImagePlane;
use crate::scalar::Real;
use crate::world::DatasetSample;

/// One manifest row: offsets in metres/radians plus the route position tag.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub gt_offset: SE2Offset<f64>,
    pub initial_estimate: SE2Offset<f64>,
    pub route_pos: [f64; 2],
}

impl SampleRecord {
    pub fn overhead_path(&self, root: &Path) -> PathBuf {
        root.join("overhead").join(format!("{:06}.png", self.id))
    }

    pub fn radar_path(&self, root: &Path) -> PathBuf {
        root.join("radar").join(format!("{:06}.png", self.id))
    }
}

/// Parsed dataset directory; records stream their pixels lazily.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub grid: GridSpec,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Load the pixels of one record.
    pub fn load_sample<T: Real>(&self, index: usize) -> Result<DatasetSample<T>> {
        let rec = self.records.get(index).ok_or_else(|| {
            Error::invalid(format!("sample index {index} out of range"))
        })?;
        let overhead = read_png_rgb(&rec.overhead_path(&self.root), &self.grid, rec.id)?;
        let radar = read_png_gray(&rec.radar_path(&self.root), &self.grid, rec.id)?;
        Ok(DatasetSample {
            overhead,
            radar,
            gt_offset: cast_offset(&rec.gt_offset),
            initial_estimate: cast_offset(&rec.initial_estimate),
            route_pos: rec.route_pos,
        })
    }

    /// Lazy sample stream in record order; pixels are read per item.
    pub fn stream<T: Real>(&self) -> impl Iterator<Item = Result<DatasetSample<T>>> + '_ {
        (0..self.records.len()).map(move |i| self.load_sample(i))
    }
}

fn cast_offset<T: Real>(o: &SE2Offset<f64>) -> SE2Offset<T> {
    SE2Offset {
        x: T::cast(o.x),
        y: T::cast(o.y),
        theta: T::cast(o.theta),
    }
}

/// Write samples to `dir` and return the manifest that describes them.
pub fn write_dataset<T: Real>(samples: &[DatasetSample<T>], dir: &Path) -> Result<DatasetManifest> {
    if samples.is_empty() {
        return Err(Error::invalid("refusing to write an empty dataset"));
    }
    let grid = *samples[0].overhead.grid();
    std::fs::create_dir_all(dir.join("overhead"))
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    std::fs::create_dir_all(dir.join("radar"))
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;

    let manifest_path = dir.join("manifest.txt");
    let file = std::fs::File::create(&manifest_path)
        .map_err(|e| Error::io(format!("creating {}", manifest_path.display()), e))?;
    let mut out = BufWriter::new(file);
    let io_err = |e| Error::io(format!("writing {}", manifest_path.display()), e);
    writeln!(out, "radloc-dataset 1").map_err(io_err)?;
    writeln!(
        out,
        "grid {} {} {:.9}",
        grid.height, grid.width, grid.metres_per_pixel
    )
    .map_err(io_err)?;

    let mut records = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        if *s.overhead.grid() != grid || *s.radar.grid() != grid {
            return Err(Error::shape("all samples must share one grid"));
        }
        let id = i as u64;
        let rec = SampleRecord {
            id,
            gt_offset: SE2Offset {
                x: s.gt_offset.x.to_f64(),
                y: s.gt_offset.y.to_f64(),
                theta: s.gt_offset.theta.to_f64(),
            },
            initial_estimate: SE2Offset {
                x: s.initial_estimate.x.to_f64(),
                y: s.initial_estimate.y.to_f64(),
                theta: s.initial_estimate.theta.to_f64(),
            },
            route_pos: s.route_pos,
        };
        write_png_rgb(&s.overhead, &rec.overhead_path(dir))?;
        write_png_gray(&s.radar, &rec.radar_path(dir))?;
        writeln!(
            out,
            "{} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            id,
            rec.gt_offset.x,
            rec.gt_offset.y,
            rec.gt_offset.theta,
            rec.initial_estimate.x,
            rec.initial_estimate.y,
            rec.initial_estimate.theta,
            rec.route_pos[0],
            rec.route_pos[1]
        )
        .map_err(io_err)?;
        records.push(rec);
    }
    out.flush().map_err(io_err)?;
    Ok(DatasetManifest {
        root: dir.to_path_buf(),
        grid,
        records,
    })
}

/// Parse `manifest.txt` and verify every referenced image exists. Pixels are
/// not read here; use [`DatasetManifest::stream`] for that.
pub fn read_dataset(dir: &Path) -> Result<DatasetManifest> {
    let manifest_path = dir.join("manifest.txt");
    let parse_err = |detail: String| Error::Parse {
        what: "dataset manifest",
        path: manifest_path.clone(),
        detail,
    };
    let file = std::fs::File::open(&manifest_path)
        .map_err(|e| Error::io(format!("opening {}", manifest_path.display()), e))?;
    let mut lines = std::io::BufReader::new(file).lines();

    let header = lines
        .next()
        .transpose()
        .map_err(|e| Error::io("reading manifest header", e))?
        .ok_or_else(|| parse_err("empty file".into()))?;
    if header.trim() != "radloc-dataset 1" {
        return Err(parse_err(format!("unsupported header `{header}`")));
    }
    let grid_line = lines
        .next()
        .transpose()
        .map_err(|e| Error::io("reading manifest grid line", e))?
        .ok_or_else(|| parse_err("missing grid line".into()))?;
    let g: Vec<&str> = grid_line.split_whitespace().collect();
    if g.len() != 4 || g[0] != "grid" {
        return Err(parse_err(format!("bad grid line `{grid_line}`")));
    }
    let grid = GridSpec::new(
        g[1].parse().map_err(|e| parse_err(format!("{e}")))?,
        g[2].parse().map_err(|e| parse_err(format!("{e}")))?,
        g[3].parse().map_err(|e| parse_err(format!("{e}")))?,
    )?;

    let mut records = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io("reading manifest", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 9 {
            return Err(parse_err(format!(
                "line {}: expected 9 fields, got {}",
                lineno + 3,
                f.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| parse_err(format!("line {}: {e}", lineno + 3)))
        };
        records.push(SampleRecord {
            id: f[0]
                .parse()
                .map_err(|e| parse_err(format!("line {}: {e}", lineno + 3)))?,
            gt_offset: SE2Offset::new(num(f[1])?, num(f[2])?, num(f[3])?)?,
            initial_estimate: SE2Offset::new(num(f[4])?, num(f[5])?, num(f[6])?)?,
            route_pos: [num(f[7])?, num(f[8])?],
        });
    }

    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        grid,
        records,
    };
    for rec in &manifest.records {
        for path in [rec.overhead_path(dir), rec.radar_path(dir)] {
            if !path.exists() {
                return Err(Error::io(
                    format!("sample {:06}: missing {}", rec.id, path.display()),
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
                ));
            }
        }
    }
    Ok(manifest)
}

/// Write a 3-channel plane as an RGB png.
pub fn write_png_rgb<T: Real>(img: &ImagePlane<T>, path: &Path) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::shape("overhead images must have 3 channels"));
    }
    let (h, w) = (img.height(), img.width());
    let mut png = RgbImage::new(w as u32, h as u32);
    for row in 0..h {
        for col in 0..w {
            let px = [
                to_u8(img.data()[(0, row, col)]),
                to_u8(img.data()[(1, row, col)]),
                to_u8(img.data()[(2, row, col)]),
            ];
            png.put_pixel(col as u32, row as u32, image::Rgb(px));
        }
    }
    png.save(path)?;
    Ok(())
}

/// Write a single-channel plane as a grayscale png.
pub fn write_png_gray<T: Real>(img: &ImagePlane<T>, path: &Path) -> Result<()> {
    if img.channels() != 1 {
        return Err(Error::shape("radar images must have 1 channel"));
    }
    let (h, w) = (img.height(), img.width());
    let mut png = GrayImage::new(w as u32, h as u32);
    for row in 0..h {
        for col in 0..w {
            png.put_pixel(
                col as u32,
                row as u32,
                image::Luma([to_u8(img.data()[(0, row, col)])]),
            );
        }
    }
    png.save(path)?;
    Ok(())
}

fn to_u8<T: Real>(v: T) -> u8 {
    (v.to_f64().clamp(0.0, 1.0) * 255.0).round() as u8
}

fn check_dims(path: &Path, w: u32, h: u32, grid: &GridSpec, id: u64) -> Result<()> {
    if h as usize != grid.height || w as usize != grid.width {
        return Err(Error::shape(format!(
            "sample {id:06}: {} is {w}x{h}, dataset grid is {}x{}",
            path.display(),
            grid.width,
            grid.height
        )));
    }
    Ok(())
}

/// Read an RGB png into a 3-channel plane.
pub fn read_png_rgb<T: Real>(path: &Path, grid: &GridSpec, id: u64) -> Result<ImagePlane<T>> {
    let img = image::open(path)
        .map_err(|e| Error::Checkpoint(format!("sample {id:06}: {}: {e}", path.display())))?
        .to_rgb8();
    check_dims(path, img.width(), img.height(), grid, id)?;
    let mut data = Array3::zeros((3, grid.height, grid.width));
    for (x, y, p) in img.enumerate_pixels() {
        for ch in 0..3 {
            data[(ch, y as usize, x as usize)] = T::cast(p.0[ch] as f64 / 255.0);
        }
    }
    Ok(ImagePlane::from_raw_unchecked(data, *grid))
}

/// Read a grayscale png into a single-channel plane.
pub fn read_png_gray<T: Real>(path: &Path, grid: &GridSpec, id: u64) -> Result<ImagePlane<T>> {
    let img = image::open(path)
        .map_err(|e| Error::Checkpoint(format!("sample {id:06}: {}: {e}", path.display())))?
        .to_luma8();
    check_dims(path, img.width(), img.height(), grid, id)?;
    let mut data = Array3::zeros((1, grid.height, grid.width));
    for (x, y, p) in img.enumerate_pixels() {
        data[(0, y as usize, x as usize)] = T::cast(p.0[0] as f64 / 255.0);
    }
    Ok(ImagePlane::from_raw_unchecked(data, *grid))
}

/// Train/val/test membership by record index, after buffer discarding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub discarded: Vec<usize>,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitOptions {
    /// Train/val/test fractions; must be nonnegative and sum to 1.
    pub fractions: (f64, f64, f64),
    /// No surviving test sample sits within this route distance of any
    /// train/val sample; offenders on both sides are discarded.
    pub buffer_m: f64,
    /// Keep every n-th surviving test sample (1 keeps all).
    pub test_stride: usize,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            fractions: (0.8, 0.1, 0.1),
            buffer_m: 0.0,
            test_stride: 1,
        }
    }
}

/// Split records (already in route order) into contiguous train/val/test
/// blocks, then discard samples across the boundaries that violate the
/// buffer distance.
pub fn split_routes(manifest: &DatasetManifest, opts: &SplitOptions) -> Result<RouteSplit> {
    let (ft, fv, fe) = opts.fractions;
    if ft < 0.0 || fv < 0.0 || fe < 0.0 || (ft + fv + fe - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(
            "split fractions must be nonnegative and sum to 1",
        ));
    }
    if opts.test_stride == 0 {
        return Err(Error::invalid("test stride must be at least 1"));
    }
    if opts.buffer_m < 0.0 {
        return Err(Error::invalid("buffer must be nonnegative"));
    }
    let n = manifest.records.len();
    if n == 0 {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    let n_train = (ft * n as f64).round() as usize;
    let n_val = (fv * n as f64).round() as usize;
    let n_train = n_train.min(n);
    let n_val = n_val.min(n - n_train);

    let block = |i: usize| -> u8 {
        if i < n_train {
            0
        } else if i < n_train + n_val {
            1
        } else {
            2
        }
    };
    let pos = |i: usize| manifest.records[i].route_pos;
    let dist = |a: [f64; 2], b: [f64; 2]| (a[0] - b[0]).hypot(a[1] - b[1]);

    let mut split = RouteSplit {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        discarded: Vec::new(),
    };
    for i in 0..n {
        let mine = block(i);
        let keep = if opts.buffer_m == 0.0 {
            true
        } else {
            // original memberships decide the discard on both sides
            (0..n).all(|j| {
                let theirs = block(j);
                let crossing = (mine == 2) != (theirs == 2);
                !crossing || dist(pos(i), pos(j)) >= opts.buffer_m
            })
        };
        if !keep {
            split.discarded.push(i);
            continue;
        }
        match mine {
            0 => split.train.push(i),
            1 => split.val.push(i),
            _ => split.test.push(i),
        }
    }
    if opts.test_stride > 1 {
        split.test = split
            .test
            .iter()
            .copied()
            .step_by(opts.test_stride)
            .collect();
    }
    if (ft > 0.0 && split.train.is_empty()) || (fe > 0.0 && split.test.is_empty()) {
        return Err(Error::invalid(
            "buffer discarded an entire requested split set",
        ));
    }
    Ok(split)
}
