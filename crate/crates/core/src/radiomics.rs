//! First-order, shape and texture features of a masked 3D region.
//!
//! Voxels are addressed x-fastest: `index = x + nx * (y + ny * z)`.
//! Discretization uses equal-width bins over the masked intensity range,
//! surface area counts exposed voxel faces, and texture matrices merge the
//! 13 unique 3D directions at distance 1.

use nalgebra::{Matrix3, SymmetricEigen};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Result, SurvError};

pub const DEFAULT_LEVELS: usize = 32;

/// The 13 lexicographically positive neighbour offsets of the 26-neighbourhood.
pub const DIRECTIONS_13: [[i64; 3]; 13] = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 1, 0],
    [1, -1, 0],
    [1, 0, 1],
    [1, 0, -1],
    [0, 1, 1],
    [0, 1, -1],
    [1, 1, 1],
    [1, 1, -1],
    [1, -1, 1],
    [1, -1, -1],
];

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub intensities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub dims: [usize; 3],
    pub occupied: Vec<bool>,
}

fn check_dims(dims: [usize; 3], len: usize) -> Result<()> {
    if dims.contains(&0) {
        return Err(SurvError::Shape(format!("dims must be positive, got {dims:?}")));
    }
    if dims.iter().product::<usize>() != len {
        return Err(SurvError::Shape(format!(
            "dims {dims:?} need {} values, got {len}",
            dims.iter().product::<usize>()
        )));
    }
    Ok(())
}

impl VoxelGrid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], intensities: Vec<f64>) -> Result<Self> {
        check_dims(dims, intensities.len())?;
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(SurvError::Parameter(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if intensities.iter().any(|v| !v.is_finite()) {
            return Err(SurvError::Numeric("non-finite intensity".into()));
        }
        Ok(Self {
            dims,
            spacing,
            intensities,
        })
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }
}

impl RegionMask {
    pub fn new(dims: [usize; 3], occupied: Vec<bool>) -> Result<Self> {
        check_dims(dims, occupied.len())?;
        Ok(Self { dims, occupied })
    }

    /// Mask covering the whole grid.
    pub fn full(dims: [usize; 3]) -> Self {
        Self {
            dims,
            occupied: vec![true; dims.iter().product()],
        }
    }

    pub fn count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    fn neighbour(&self, i: usize, off: [i64; 3]) -> Option<usize> {
        let c = self.coords(i);
        let mut n = [0usize; 3];
        for a in 0..3 {
            let v = c[a] as i64 + off[a];
            if v < 0 || v >= self.dims[a] as i64 {
                return None;
            }
            n[a] = v as usize;
        }
        Some(n[0] + self.dims[0] * (n[1] + self.dims[1] * n[2]))
    }

    fn is_set(&self, i: Option<usize>) -> bool {
        i.is_some_and(|i| self.occupied[i])
    }
}

fn parse_voxel_text(text: &str, what: &str) -> Result<([usize; 3], [f64; 3], Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = |line: Option<&str>, key: &str| -> Result<Vec<String>> {
        let line = line.ok_or_else(|| SurvError::Schema(format!("{what}: missing {key} line")))?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(key) {
            return Err(SurvError::Schema(format!("{what}: expected \"{key}\" line")));
        }
        let rest: Vec<String> = parts.map(str::to_string).collect();
        if rest.len() != 3 {
            return Err(SurvError::Schema(format!("{what}: {key} needs 3 values")));
        }
        Ok(rest)
    };
    let dims_raw = header(lines.next(), "dims")?;
    let spacing_raw = header(lines.next(), "spacing")?;
    let mut dims = [0usize; 3];
    let mut spacing = [0f64; 3];
    for a in 0..3 {
        dims[a] = dims_raw[a]
            .parse()
            .map_err(|_| SurvError::Schema(format!("{what}: bad dims value {}", dims_raw[a])))?;
        spacing[a] = spacing_raw[a]
            .parse()
            .map_err(|_| SurvError::Schema(format!("{what}: bad spacing value {}", spacing_raw[a])))?;
    }
    let values = lines
        .flat_map(str::split_whitespace)
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| SurvError::Schema(format!("{what}: bad intensity {t}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dims, spacing, values))
}

pub fn parse_grid(text: &str) -> Result<VoxelGrid> {
    let (dims, spacing, values) = parse_voxel_text(text, "grid")?;
    VoxelGrid::new(dims, spacing, values)
}

pub fn parse_mask(text: &str) -> Result<RegionMask> {
    let (dims, _, values) = parse_voxel_text(text, "mask")?;
    let occupied = values
        .iter()
        .map(|&v| match v {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(SurvError::Schema(format!("mask values must be 0 or 1, got {v}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    RegionMask::new(dims, occupied)
}

pub fn load_grid(path: &Path) -> Result<VoxelGrid> {
    parse_grid(&fs::read_to_string(path)?)
}

pub fn load_mask(path: &Path) -> Result<RegionMask> {
    parse_mask(&fs::read_to_string(path)?)
}

fn format_voxels(dims: [usize; 3], spacing: [f64; 3], values: impl Iterator<Item = String>) -> String {
    let mut out = format!(
        "dims {} {} {}\nspacing {} {} {}\n",
        dims[0], dims[1], dims[2], spacing[0], spacing[1], spacing[2]
    );
    let row: Vec<String> = values.collect();
    for chunk in row.chunks(dims[0]) {
        out.push_str(&chunk.join(" "));
        out.push('\n');
    }
    out
}

pub fn grid_to_text(grid: &VoxelGrid) -> String {
    format_voxels(grid.dims, grid.spacing, grid.intensities.iter().map(f64::to_string))
}

pub fn mask_to_text(mask: &RegionMask, spacing: [f64; 3]) -> String {
    format_voxels(
        mask.dims,
        spacing,
        mask.occupied.iter().map(|&o| u8::from(o).to_string()),
    )
}

fn masked_values(grid: &VoxelGrid, mask: &RegionMask) -> Result<Vec<f64>> {
    if grid.dims != mask.dims {
        return Err(SurvError::Shape(format!(
            "grid dims {:?} differ from mask dims {:?}",
            grid.dims, mask.dims
        )));
    }
    let values: Vec<f64> = grid
        .intensities
        .iter()
        .zip(&mask.occupied)
        .filter(|(_, &o)| o)
        .map(|(&v, _)| v)
        .collect();
    if values.is_empty() {
        return Err(SurvError::EmptyRegion);
    }
    Ok(values)
}

/// Mean, median and bias-uncorrected skewness `g1` (0 for constant regions).
pub fn first_order(grid: &VoxelGrid, mask: &RegionMask) -> Result<BTreeMap<String, f64>> {
    let mut v = masked_values(grid, mask)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    let median = if v.len() % 2 == 1 {
        v[mid]
    } else {
        0.5 * (v[mid - 1] + v[mid])
    };
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    let skewness = if m2 > 0.0 { m3 / m2.powf(1.5) } else { 0.0 };
    Ok(BTreeMap::from([
        ("firstorder_mean".to_string(), mean),
        ("firstorder_median".to_string(), median),
        ("firstorder_skewness".to_string(), skewness),
    ]))
}

/// Volume, face-counted surface area, sphericity and elongation.
pub fn shape_features(mask: &RegionMask, spacing: [f64; 3]) -> Result<BTreeMap<String, f64>> {
    let count = mask.count();
    if count == 0 {
        return Err(SurvError::EmptyRegion);
    }
    let [sx, sy, sz] = spacing;
    let face_area = [sy * sz, sx * sz, sx * sy];
    let volume = count as f64 * sx * sy * sz;
    let mut area = 0.0;
    let mut points = Vec::with_capacity(count);
    for i in (0..mask.occupied.len()).filter(|&i| mask.occupied[i]) {
        for axis in 0..3 {
            for step in [-1i64, 1] {
                let mut off = [0i64; 3];
                off[axis] = step;
                if !mask.is_set(mask.neighbour(i, off)) {
                    area += face_area[axis];
                }
            }
        }
        let c = mask.coords(i);
        points.push([c[0] as f64 * sx, c[1] as f64 * sy, c[2] as f64 * sz]);
    }
    let sphericity = std::f64::consts::PI.cbrt() * (6.0 * volume).powf(2.0 / 3.0) / area;

    let n = points.len() as f64;
    let mut centroid = [0.0; 3];
    for p in &points {
        for a in 0..3 {
            centroid[a] += p[a] / n;
        }
    }
    let mut cov = Matrix3::<f64>::zeros();
    for p in &points {
        for a in 0..3 {
            for b in 0..3 {
                cov[(a, b)] += (p[a] - centroid[a]) * (p[b] - centroid[b]) / n;
            }
        }
    }
    let mut eig: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    let elongation = if eig[0] <= 1e-12 {
        1.0
    } else {
        (eig[1].max(0.0) / eig[0]).sqrt()
    };
    Ok(BTreeMap::from([
        ("shape_volume".to_string(), volume),
        ("shape_surface_area".to_string(), area),
        ("shape_sphericity".to_string(), sphericity),
        ("shape_elongation".to_string(), elongation),
    ]))
}

/// Relative slack when assigning a normalized intensity to a bin edge.
const EDGE_TOLERANCE: f64 = 1e-9;

/// Level per voxel (`None` outside the mask) from `levels` equal-width bins
/// over the masked range; constant regions map to level 0.
pub fn discretize(grid: &VoxelGrid, mask: &RegionMask, levels: usize) -> Result<Vec<Option<usize>>> {
    if levels < 2 {
        return Err(SurvError::Parameter(format!(
            "need at least 2 grey levels, got {levels}"
        )));
    }
    let values = masked_values(grid, mask)?;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = hi - lo;
    Ok(grid
        .intensities
        .iter()
        .zip(&mask.occupied)
        .map(|(&v, &o)| {
            o.then(|| {
                if width > 0.0 {
                    // values within rounding of a bin edge land on the upper bin
                    let u = (v - lo) / width * levels as f64;
                    ((u + EDGE_TOLERANCE * levels as f64).floor() as usize).min(levels - 1)
                } else {
                    0
                }
            })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureMatrices {
    pub levels: usize,
    /// Symmetric, sums to 1 (all zero when the region has no neighbour pairs).
    pub glcm: Vec<Vec<f64>>,
    /// `glrlm[level][run_length - 1]`
    pub glrlm: Vec<Vec<u64>>,
    /// `glszm[level][zone_size - 1]`
    pub glszm: Vec<Vec<u64>>,
}

fn add_count(m: &mut [Vec<u64>], level: usize, size: usize) {
    let row = &mut m[level];
    if row.len() < size {
        row.resize(size, 0);
    }
    row[size - 1] += 1;
}

fn pad_rows(m: &mut [Vec<u64>]) {
    let width = m.iter().map(Vec::len).max().unwrap_or(0);
    for row in m.iter_mut() {
        row.resize(width, 0);
    }
}

pub fn texture_matrices(
    grid: &VoxelGrid,
    mask: &RegionMask,
    levels: usize,
    offsets: &[[i64; 3]],
) -> Result<TextureMatrices> {
    let lv = discretize(grid, mask, levels)?;
    let level_at = |i: Option<usize>| i.and_then(|i| lv[i]);
    let n = lv.len();

    let mut glcm = vec![vec![0.0; levels]; levels];
    let mut glrlm = vec![Vec::new(); levels];
    for &off in offsets {
        let back = [-off[0], -off[1], -off[2]];
        for i in 0..n {
            let Some(a) = lv[i] else { continue };
            if let Some(b) = level_at(mask.neighbour(i, off)) {
                glcm[a][b] += 1.0;
                glcm[b][a] += 1.0;
            }
            // a run starts where the previous voxel along the direction differs
            if level_at(mask.neighbour(i, back)) == Some(a) {
                continue;
            }
            let mut len = 1;
            let mut cur = i;
            while let Some(next) = mask.neighbour(cur, off) {
                if lv[next] != Some(a) {
                    break;
                }
                len += 1;
                cur = next;
            }
            add_count(&mut glrlm, a, len);
        }
    }
    let total: f64 = glcm.iter().flatten().sum();
    if total > 0.0 {
        for v in glcm.iter_mut().flatten() {
            *v /= total;
        }
    }
    pad_rows(&mut glrlm);

    let neighbours26: Vec<[i64; 3]> = DIRECTIONS_13.iter().flat_map(|o| [*o, [-o[0], -o[1], -o[2]]]).collect();
    let mut glszm = vec![Vec::new(); levels];
    let mut seen = vec![false; n];
    let mut stack = Vec::new();
    for start in 0..n {
        let Some(level) = lv[start] else { continue };
        if seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            for &off in &neighbours26 {
                if let Some(j) = mask.neighbour(i, off) {
                    if !seen[j] && lv[j] == Some(level) {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        add_count(&mut glszm, level, size);
    }
    pad_rows(&mut glszm);

    Ok(TextureMatrices {
        levels,
        glcm,
        glrlm,
        glszm,
    })
}

impl TextureMatrices {
    /// `-sum p log2 p` over the GLCM.
    pub fn glcm_entropy(&self) -> f64 {
        -self
            .glcm
            .iter()
            .flatten()
            .filter(|&&p| p > 0.0)
            .map(|p| p * p.log2())
            .sum::<f64>()
    }

    pub fn glrlm_short_run_emphasis(&self) -> f64 {
        let mut weighted = 0.0;
        let mut total = 0.0;
        for row in &self.glrlm {
            for (r, &c) in row.iter().enumerate() {
                weighted += c as f64 / ((r + 1) * (r + 1)) as f64;
                total += c as f64;
            }
        }
        if total > 0.0 {
            weighted / total
        } else {
            0.0
        }
    }

    /// Variance of zone sizes over all zones.
    pub fn glszm_zone_variance(&self) -> f64 {
        let zones: Vec<(f64, f64)> = self
            .glszm
            .iter()
            .flat_map(|row| row.iter().enumerate().map(|(s, &c)| ((s + 1) as f64, c as f64)))
            .filter(|(_, c)| *c > 0.0)
            .collect();
        let total: f64 = zones.iter().map(|(_, c)| c).sum();
        let mean = zones.iter().map(|(s, c)| s * c).sum::<f64>() / total;
        zones.iter().map(|(s, c)| c * (s - mean).powi(2)).sum::<f64>() / total
    }
}

pub fn texture_features(
    grid: &VoxelGrid,
    mask: &RegionMask,
    levels: usize,
    offsets: &[[i64; 3]],
) -> Result<BTreeMap<String, f64>> {
    let m = texture_matrices(grid, mask, levels, offsets)?;
    Ok(BTreeMap::from([
        ("glcm_entropy".to_string(), m.glcm_entropy()),
        ("glrlm_short_run_emphasis".to_string(), m.glrlm_short_run_emphasis()),
        ("glszm_zone_variance".to_string(), m.glszm_zone_variance()),
    ]))
}

/// All supported features with the default discretization and directions.
pub fn extract_features(grid: &VoxelGrid, mask: &RegionMask, levels: usize) -> Result<BTreeMap<String, f64>> {
    let mut out = first_order(grid, mask)?;
    out.extend(shape_features(mask, grid.spacing)?);
    out.extend(texture_features(grid, mask, levels, &DIRECTIONS_13)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> (VoxelGrid, RegionMask) {
        let dims = [values.len(), 1, 1];
        (
            VoxelGrid::new(dims, [1.0; 3], values.to_vec()).unwrap(),
            RegionMask::full(dims),
        )
    }

    #[test]
    fn first_order_hand_cases() {
        let (g, m) = line(&[3.0; 5]);
        let f = first_order(&g, &m).unwrap();
        assert_eq!(f["firstorder_mean"], 3.0);
        assert_eq!(f["firstorder_median"], 3.0);
        assert_eq!(f["firstorder_skewness"], 0.0);

        let (g, m) = line(&[1.0, 2.0, 2.0, 3.0]);
        let f = first_order(&g, &m).unwrap();
        assert_eq!(f["firstorder_mean"], 2.0);
        assert_eq!(f["firstorder_median"], 2.0);

        let (g, m) = line(&[0.0, 0.0, 0.0, 1.0]);
        let f = first_order(&g, &m).unwrap();
        assert!((f["firstorder_skewness"] - 2.0 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn first_order_errors() {
        let (g, _) = line(&[1.0, 2.0]);
        let empty = RegionMask::new([2, 1, 1], vec![false, false]).unwrap();
        assert!(matches!(first_order(&g, &empty), Err(SurvError::EmptyRegion)));
        let other = RegionMask::full([1, 2, 1]);
        assert!(matches!(first_order(&g, &other), Err(SurvError::Shape(_))));
    }

    #[test]
    fn shape_hand_cases() {
        let f = shape_features(&RegionMask::full([1, 1, 1]), [1.0; 3]).unwrap();
        assert_eq!(f["shape_volume"], 1.0);
        assert_eq!(f["shape_surface_area"], 6.0);
        assert!((f["shape_sphericity"] - (std::f64::consts::PI / 6.0).cbrt()).abs() < 1e-12);
        let f = shape_features(&RegionMask::full([2, 1, 1]), [1.0; 3]).unwrap();
        assert_eq!(f["shape_volume"], 2.0);
        assert_eq!(f["shape_surface_area"], 10.0);
        let f = shape_features(&RegionMask::full([3, 3, 3]), [1.0; 3]).unwrap();
        assert!((f["shape_elongation"] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cube_is_rounder_than_bar() {
        let cube = shape_features(&RegionMask::full([2, 2, 1]), [1.0; 3]).unwrap();
        let bar = shape_features(&RegionMask::full([4, 1, 1]), [1.0; 3]).unwrap();
        assert!(cube["shape_sphericity"] > bar["shape_sphericity"]);
    }

    #[test]
    fn texture_hand_cases() {
        let (g, m) = line(&[2.0; 4]);
        let t = texture_features(&g, &m, 8, &DIRECTIONS_13).unwrap();
        assert_eq!(t["glcm_entropy"], 0.0);

        let (g, m) = line(&[1.0, 5.0]);
        let tm = texture_matrices(&g, &m, 2, &[[1, 0, 0]]).unwrap();
        assert_eq!(tm.glcm, vec![vec![0.0, 0.5], vec![0.5, 0.0]]);
        assert!((tm.glcm_entropy() - 1.0).abs() < 1e-15);

        // checkerboard: no neighbour along any axis shares a level
        let dims = [3, 3, 1];
        let vals: Vec<f64> = (0..9).map(|i| ((i % 3 + i / 3) % 2) as f64).collect();
        let g = VoxelGrid::new(dims, [1.0; 3], vals).unwrap();
        let tm = texture_matrices(&g, &RegionMask::full(dims), 2, &[[1, 0, 0], [0, 1, 0]]).unwrap();
        assert_eq!(tm.glrlm_short_run_emphasis(), 1.0);
        assert!(texture_matrices(&g, &RegionMask::full(dims), 1, &DIRECTIONS_13).is_err());
    }

    #[test]
    fn zones_are_26_connected() {
        // diagonal voxels form one zone
        let dims = [2, 2, 1];
        let g = VoxelGrid::new(dims, [1.0; 3], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let tm = texture_matrices(&g, &RegionMask::full(dims), 2, &DIRECTIONS_13).unwrap();
        assert_eq!(tm.glszm, vec![vec![0, 1], vec![0, 1]]);
        assert_eq!(tm.glszm_zone_variance(), 0.0);
    }

    #[test]
    fn text_round_trip() {
        let g = VoxelGrid::new([2, 2, 1], [0.5, 1.0, 2.0], vec![1.0, 2.5, -3.0, 4.0]).unwrap();
        assert_eq!(parse_grid(&grid_to_text(&g)).unwrap(), g);
        let m = RegionMask::new([2, 2, 1], vec![true, false, true, true]).unwrap();
        assert_eq!(parse_mask(&mask_to_text(&m, g.spacing)).unwrap(), m);
        assert!(parse_grid("dims 2 1 1\nspacing 1 1 1\n1\n").is_err());
    }
}
