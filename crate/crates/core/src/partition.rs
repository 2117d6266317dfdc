//! Heterogeneous grid partitioning of an image into classifier regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{self, GrayImage, InputVector, INPUT_HEIGHT, INPUT_LEN, INPUT_WIDTH};

/// A `rows × cols` slicing of an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "[usize; 2]", into = "[usize; 2]")]
pub struct GridSpec {
    rows: usize,
    cols: usize,
}

impl GridSpec {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!(
                "grid dimensions must be positive, got ({rows}, {cols})"
            )));
        }
        Ok(GridSpec { rows, cols })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// Parses `"RxC"`, e.g. `"4x2"` for four rows and two columns.
    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::invalid(format!("grid '{s}' is not of the form RxC")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::invalid(format!("grid '{s}' is not of the form RxC")))
        };
        GridSpec::new(parse(r)?, parse(c)?)
    }
}

impl TryFrom<[usize; 2]> for GridSpec {
    type Error = Error;

    fn try_from([rows, cols]: [usize; 2]) -> Result<Self> {
        GridSpec::new(rows, cols)
    }
}

impl From<GridSpec> for [usize; 2] {
    fn from(g: GridSpec) -> Self {
        [g.rows, g.cols]
    }
}

/// Half-open pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RegionRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl RegionRect {
    #[inline]
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// Identifies one region: which grid it came from and its cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RegionId {
    pub grid: GridSpec,
    pub row: usize,
    pub col: usize,
}

/// Ordered list of grids. Regions are enumerated grid by grid in list
/// order, and within a grid left to right, then top to bottom.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<GridSpec>", into = "Vec<GridSpec>")]
pub struct PartitionPlan {
    grids: Vec<GridSpec>,
}

impl PartitionPlan {
    pub fn new(grids: Vec<GridSpec>) -> Result<Self> {
        if grids.is_empty() {
            return Err(Error::invalid("a partition plan needs at least one grid"));
        }
        Ok(PartitionPlan { grids })
    }

    /// `[(1,1), (1,4), (4,1), (2,4), (4,2), (4,4)]`: 41 regions.
    pub fn default_grids() -> Self {
        let grids = [(1, 1), (1, 4), (4, 1), (2, 4), (4, 2), (4, 4)]
            .into_iter()
            .map(|(r, c)| GridSpec { rows: r, cols: c })
            .collect();
        PartitionPlan { grids }
    }

    /// Single whole-image region.
    pub fn whole_image() -> Self {
        PartitionPlan {
            grids: vec![GridSpec { rows: 1, cols: 1 }],
        }
    }

    pub fn from_pairs(pairs: &[(usize, usize)]) -> Result<Self> {
        PartitionPlan::new(
            pairs
                .iter()
                .map(|&(r, c)| GridSpec::new(r, c))
                .collect::<Result<_>>()?,
        )
    }

    pub fn grids(&self) -> &[GridSpec] {
        &self.grids
    }

    /// Total number of regions, the sum of `rows * cols` over all grids.
    pub fn region_count(&self) -> usize {
        self.grids.iter().map(GridSpec::cells).sum()
    }

    /// Regions in canonical order.
    pub fn regions(&self) -> impl Iterator<Item = RegionId> + '_ {
        self.grids.iter().flat_map(|&grid| {
            (0..grid.rows).flat_map(move |row| (0..grid.cols).map(move |col| RegionId { grid, row, col }))
        })
    }

    /// Smallest image the plan can slice: every cell must be at least one
    /// pixel.
    pub fn min_image_size(&self) -> (usize, usize) {
        let w = self.grids.iter().map(|g| g.cols).max().unwrap_or(1);
        let h = self.grids.iter().map(|g| g.rows).max().unwrap_or(1);
        (w, h)
    }
}

impl Default for PartitionPlan {
    fn default() -> Self {
        PartitionPlan::default_grids()
    }
}

impl TryFrom<Vec<GridSpec>> for PartitionPlan {
    type Error = Error;

    fn try_from(grids: Vec<GridSpec>) -> Result<Self> {
        PartitionPlan::new(grids)
    }
}

impl From<PartitionPlan> for Vec<GridSpec> {
    fn from(p: PartitionPlan) -> Self {
        p.grids
    }
}

pub fn partition_count(plan: &PartitionPlan) -> usize {
    plan.region_count()
}

/// Pixel bounds of cell `(row, col)`. Boundaries fall at
/// `floor(i * extent / cells)`, so cells of one grid tile the image exactly
/// and any remainder goes to the later cells.
pub fn region_bounds(img_w: usize, img_h: usize, grid: GridSpec, row: usize, col: usize) -> Result<RegionRect> {
    if row >= grid.rows || col >= grid.cols {
        return Err(Error::invalid(format!(
            "cell ({row}, {col}) is outside grid {grid}"
        )));
    }
    if img_w < grid.cols || img_h < grid.rows {
        return Err(Error::invalid(format!(
            "a {img_w}x{img_h} image is too small for grid {grid}"
        )));
    }
    Ok(RegionRect {
        x0: col * img_w / grid.cols,
        x1: (col + 1) * img_w / grid.cols,
        y0: row * img_h / grid.rows,
        y1: (row + 1) * img_h / grid.rows,
    })
}

/// Crops every region of `plan` and resizes it to the 64×32 classifier
/// input size.
pub fn extract_regions(img: &GrayImage, plan: &PartitionPlan) -> Result<Vec<GrayImage>> {
    plan.regions()
        .map(|r| {
            let rect = region_bounds(img.width(), img.height(), r.grid, r.row, r.col)?;
            image::resize_rect(img, rect, INPUT_WIDTH, INPUT_HEIGHT)
        })
        .collect()
}

/// [`extract_regions`] followed by flattening, without intermediate images.
pub fn extract_inputs(img: &GrayImage, plan: &PartitionPlan) -> Result<Vec<InputVector>> {
    plan.regions()
        .map(|r| {
            let rect = region_bounds(img.width(), img.height(), r.grid, r.row, r.col)?;
            let mut levels = vec![0u8; INPUT_LEN];
            image::resize_rect_into(img, rect, INPUT_WIDTH, INPUT_HEIGHT, &mut levels)?;
            Ok(InputVector::from_levels(levels))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn counts() {
        assert_eq!(PartitionPlan::from_pairs(&[(2, 1), (1, 3)]).unwrap().region_count(), 5);
        assert_eq!(partition_count(&PartitionPlan::default_grids()), 41);
        assert_eq!(partition_count(&PartitionPlan::whole_image()), 1);
    }

    #[test]
    fn empty_plan_and_zero_grid_rejected() {
        assert!(PartitionPlan::new(vec![]).is_err());
        assert!(GridSpec::new(0, 3).is_err());
        assert!(GridSpec::new(2, 0).is_err());
    }

    #[test]
    fn bounds_fixtures() {
        let g44 = GridSpec::new(4, 4).unwrap();
        assert_eq!(
            region_bounds(640, 480, g44, 0, 0).unwrap(),
            RegionRect { x0: 0, y0: 0, x1: 160, y1: 120 }
        );
        let g13 = GridSpec::new(1, 3).unwrap();
        let xs: Vec<_> = (0..3).map(|c| region_bounds(10, 5, g13, 0, c).unwrap()).collect();
        assert_eq!(xs.iter().map(|r| (r.x0, r.x1)).collect::<Vec<_>>(), [(0, 3), (3, 6), (6, 10)]);
        let g11 = GridSpec::new(1, 1).unwrap();
        assert_eq!(
            region_bounds(37, 11, g11, 0, 0).unwrap(),
            RegionRect { x0: 0, y0: 0, x1: 37, y1: 11 }
        );
    }

    #[test]
    fn bounds_errors() {
        let g = GridSpec::new(4, 4).unwrap();
        assert!(region_bounds(3, 10, g, 0, 0).is_err());
        assert!(region_bounds(10, 10, g, 4, 0).is_err());
    }

    #[test]
    fn whole_plan_on_input_sized_image_is_identity() {
        let img = GrayImage::from_fn(64, 32, |x, y| (x * 3 + y) as u8).unwrap();
        let regions = extract_regions(&img, &PartitionPlan::whole_image()).unwrap();
        assert_eq!(regions, vec![img]);
    }

    #[test]
    fn fig3_order() {
        // Each pixel encodes which third and which half it lies in, so the
        // region identity survives resizing.
        let (w, h) = (96, 64);
        let img = GrayImage::from_fn(w, h, |x, y| (40 * (x / 32) + 120 * (y / 32)) as u8).unwrap();
        let plan = PartitionPlan::from_pairs(&[(2, 1), (1, 3)]).unwrap();
        let regions = extract_regions(&img, &plan).unwrap();
        assert_eq!(regions.len(), 5);
        let top = GrayImage::from_fn(96, 32, |x, _| (40 * (x / 32)) as u8).unwrap();
        let bottom = GrayImage::from_fn(96, 32, |x, _| (40 * (x / 32) + 120) as u8).unwrap();
        assert_eq!(regions[0], image::resize(&top, 64, 32).unwrap());
        assert_eq!(regions[1], image::resize(&bottom, 64, 32).unwrap());
        for (i, third) in regions[2..].iter().enumerate() {
            let expect = GrayImage::from_fn(32, 64, |_, y| (40 * i + 120 * (y / 32)) as u8).unwrap();
            assert_eq!(third, &image::resize(&expect, 64, 32).unwrap());
        }
    }

    #[test]
    fn inputs_match_flattened_regions() {
        let img = GrayImage::from_fn(101, 67, |x, y| ((x * 5) ^ (y * 11)) as u8).unwrap();
        let plan = PartitionPlan::default_grids();
        let regions = extract_regions(&img, &plan).unwrap();
        let inputs = extract_inputs(&img, &plan).unwrap();
        assert_eq!(inputs.len(), 41);
        for (r, v) in regions.iter().zip(&inputs) {
            assert_eq!(&image::flatten(r).unwrap(), v);
        }
    }

    #[test]
    fn serde_roundtrip_as_pairs() {
        let plan = PartitionPlan::default_grids();
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(json, "[[1,1],[1,4],[4,1],[2,4],[4,2],[4,4]]");
        let back: PartitionPlan = serde_json::from_str(&json).unwrap();
        assert_eq!(back, plan);
        assert!(serde_json::from_str::<PartitionPlan>("[[0,3]]").is_err());
        assert!(serde_json::from_str::<PartitionPlan>("[]").is_err());
    }

    #[test]
    fn grid_parse() {
        assert_eq!("4x2".parse::<GridSpec>().unwrap(), GridSpec::new(4, 2).unwrap());
        assert!("4-2".parse::<GridSpec>().is_err());
        assert!("0x2".parse::<GridSpec>().is_err());
    }

    proptest! {
        #[test]
        fn cells_tile_image(w in 1usize..200, h in 1usize..200, rows in 1usize..9, cols in 1usize..9) {
            prop_assume!(w >= cols && h >= rows);
            let grid = GridSpec::new(rows, cols).unwrap();
            let mut hits = vec![0u8; w * h];
            for r in 0..rows {
                for c in 0..cols {
                    let rect = region_bounds(w, h, grid, r, c).unwrap();
                    prop_assert!(rect.x0 < rect.x1 && rect.y0 < rect.y1);
                    for y in rect.y0..rect.y1 {
                        for x in rect.x0..rect.x1 {
                            hits[y * w + x] += 1;
                        }
                    }
                }
            }
            prop_assert!(hits.iter().all(|&n| n == 1));
        }

        #[test]
        fn region_list_length_and_stability(w in 4usize..80, h in 4usize..80) {
            let img = GrayImage::from_fn(w, h, |x, y| (x * y) as u8).unwrap();
            let plan = PartitionPlan::from_pairs(&[(1, 1), (2, 3), (4, 4)]).unwrap();
            let a = extract_regions(&img, &plan).unwrap();
            prop_assert_eq!(a.len(), plan.region_count());
            prop_assert_eq!(a, extract_regions(&img, &plan).unwrap());
        }
    }
}
